#include "fspo/policy.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include <json.hpp>

namespace fspo {

using nlohmann::json;

// ---- GradVector ----

std::vector<double>& GradVector::row(const StateKey& state, int vocab_size) {
    auto [it, inserted] = rows_.try_emplace(state);
    if (inserted) it->second.assign(static_cast<size_t>(vocab_size), 0.0);
    return it->second;
}

void GradVector::add_scaled(double alpha, const GradVector& other) {
    for (const auto& [state, vec] : other.rows_) {
        auto [it, inserted] = rows_.try_emplace(state);
        if (inserted) it->second.assign(vec.size(), 0.0);
        for (size_t v = 0; v < vec.size(); ++v) it->second[v] += alpha * vec[v];
    }
}

void GradVector::scale(double alpha) {
    for (auto& [state, vec] : rows_) {
        for (double& x : vec) x *= alpha;
    }
}

double GradVector::dot(const GradVector& other) const {
    const Rows& small = rows_.size() <= other.rows_.size() ? rows_ : other.rows_;
    const Rows& big = rows_.size() <= other.rows_.size() ? other.rows_ : rows_;
    double acc = 0.0;
    for (const auto& [state, vec] : small) {
        auto it = big.find(state);
        if (it == big.end()) continue;
        for (size_t v = 0; v < vec.size(); ++v) acc += vec[v] * it->second[v];
    }
    return acc;
}

double GradVector::norm_sq() const {
    double acc = 0.0;
    for (const auto& [state, vec] : rows_) {
        for (double x : vec) acc += x * x;
    }
    return acc;
}

double GradVector::norm() const { return std::sqrt(norm_sq()); }

// ---- PolicyParams ----

LogitRow& PolicyParams::row(const StateKey& state) {
    auto [it, inserted] = table.try_emplace(state);
    if (inserted) {
        it->second.logit.assign(static_cast<size_t>(vocab_size), 0.0);
        it->second.masked.assign(static_cast<size_t>(vocab_size), 0);
    }
    return it->second;
}

const LogitRow* PolicyParams::find_row(const StateKey& state) const {
    auto it = table.find(state);
    return it == table.end() ? nullptr : &it->second;
}

void PolicyParams::set_logits(const StateKey& state, std::vector<double> logits) {
    if (static_cast<int>(logits.size()) != vocab_size) {
        throw ContractViolation("set_logits: wrong logit vector length");
    }
    row(state).logit = std::move(logits);
}

void PolicyParams::mask_token(const StateKey& state, int token) {
    if (token < 0 || token >= vocab_size) throw ContractViolation("mask_token: token out of range");
    row(state).masked[static_cast<size_t>(token)] = 1;
}

StateKey initial_state(const QAInstance& instance, int context_order, int bos_token) {
    if (context_order < 1) throw ContractViolation("context_order must be >= 1");
    StateKey s;
    s.instance_id = instance.id;
    s.window.assign(static_cast<size_t>(context_order), bos_token);
    const int take = std::min<int>(context_order, static_cast<int>(instance.prompt.size()));
    for (int i = 0; i < take; ++i) {
        s.window[static_cast<size_t>(context_order - take + i)] =
            instance.prompt[instance.prompt.size() - static_cast<size_t>(take) +
                            static_cast<size_t>(i)];
    }
    return s;
}

StateKey advance(const StateKey& state, int token) {
    StateKey next = state;
    if (!next.window.empty()) {
        std::rotate(next.window.begin(), next.window.begin() + 1, next.window.end());
        next.window.back() = token;
    }
    return next;
}

// ---- distributions ----

TokenDist dist(const PolicyParams& params, const StateKey& state,
               std::span<const int> extra_masked) {
    const int V = params.vocab_size;
    if (V <= 0) throw ContractViolation("dist: policy has no vocabulary");

    const LogitRow* row = params.find_row(state);
    std::vector<uint8_t> excluded =
        row ? row->masked : std::vector<uint8_t>(static_cast<size_t>(V), 0);
    for (int t : extra_masked) {
        if (t >= 0 && t < V) excluded[static_cast<size_t>(t)] = 1;
    }

    double max_logit = -std::numeric_limits<double>::infinity();
    for (int v = 0; v < V; ++v) {
        if (excluded[static_cast<size_t>(v)]) continue;
        const double z = row ? row->logit[static_cast<size_t>(v)] : 0.0;
        max_logit = std::max(max_logit, z / params.temperature);
    }
    if (!std::isfinite(max_logit)) {
        throw ContractViolation("dist: every token is masked at this state");
    }

    TokenDist d;
    d.p.assign(static_cast<size_t>(V), 0.0);
    double sum = 0.0;
    for (int v = 0; v < V; ++v) {
        if (excluded[static_cast<size_t>(v)]) continue;
        const double z = row ? row->logit[static_cast<size_t>(v)] : 0.0;
        const double e = std::exp(z / params.temperature - max_logit);
        d.p[static_cast<size_t>(v)] = e;
        sum += e;
    }
    for (double& p : d.p) p /= sum;
    return d;
}

double logprob(const PolicyParams& params, const StateKey& state, int token) {
    const TokenDist d = dist(params, state);
    const double p = d.p.at(static_cast<size_t>(token));
    if (p <= 0.0) throw ContractViolation("logprob: token is masked at this state");
    return std::log(p);
}

double entropy(const PolicyParams& params, const StateKey& state) {
    const TokenDist d = dist(params, state);
    double h = 0.0;
    for (double p : d.p) {
        if (p > 0.0) h -= p * std::log(p);
    }
    return std::max(h, 0.0);
}

GradVector grad_logprob(const PolicyParams& params, const StateKey& state, int token) {
    const TokenDist d = dist(params, state);
    if (token < 0 || token >= params.vocab_size || d.p[static_cast<size_t>(token)] <= 0.0) {
        throw ContractViolation("grad_logprob: token is masked at this state");
    }
    GradVector g;
    std::vector<double>& row = g.row(state, params.vocab_size);
    for (int v = 0; v < params.vocab_size; ++v) {
        const double p = d.p[static_cast<size_t>(v)];
        if (p == 0.0 && v != token) continue;  // masked entries are not parameters
        const double indicator = v == token ? 1.0 : 0.0;
        row[static_cast<size_t>(v)] = (indicator - p) / params.temperature;
    }
    return g;
}

double kl(const TokenDist& p, const TokenDist& q) {
    if (p.p.size() != q.p.size()) throw ContractViolation("kl: distribution sizes differ");
    double acc = 0.0;
    for (size_t v = 0; v < p.p.size(); ++v) {
        if (p.p[v] <= 0.0) continue;
        if (q.p[v] <= 0.0) throw ContractViolation("kl: q has zero mass where p > 0");
        acc += p.p[v] * std::log(p.p[v] / q.p[v]);
    }
    return std::max(acc, 0.0);
}

double kl_at_state(const PolicyParams& params, const PolicyParams& reference,
                   const StateKey& state) {
    return kl(dist(params, state), dist(reference, state));
}

void apply_update(PolicyParams& params, const GradVector& grad, double lr) {
    for (const auto& [state, vec] : grad.rows()) {
        LogitRow& row = params.row(state);
        const size_t V = std::min(vec.size(), row.logit.size());
        for (size_t v = 0; v < V; ++v) {
            if (row.masked[v]) continue;
            row.logit[v] += lr * vec[v];
        }
    }
}

PolicyParams snapshot(const PolicyParams& params) { return params; }

Rollout sample_rollout(const PolicyParams& params, const QAInstance& instance, int max_len,
                       RngStream& rng, int eos_token) {
    if (max_len < 1) throw ContractViolation("sample_rollout: max_len must be >= 1");
    Rollout r;
    r.instance_id = instance.id;
    StateKey state = initial_state(instance, params.context_order, /*bos_token=*/0);
    r.truncated = true;
    for (int t = 0; t < max_len; ++t) {
        const TokenDist d = dist(params, state);
        const int token = rng.pick(d.p);
        r.tokens.push_back(token);
        r.old_logprobs.push_back(std::log(d.p[static_cast<size_t>(token)]));
        if (token == eos_token) {
            r.truncated = false;
            break;
        }
        state = advance(state, token);
    }
    return r;
}

// ---- checkpoints ----

void save_checkpoint(const PolicyParams& params, const std::string& path, uint64_t vocab_hash) {
    json rows = json::array();
    for (const auto& [state, row] : params.table) {
        json masked = json::array();
        for (int v = 0; v < params.vocab_size; ++v) {
            if (row.masked[static_cast<size_t>(v)]) masked.push_back(v);
        }
        rows.push_back(json{{"instance", state.instance_id},
                            {"window", state.window},
                            {"logits", row.logit},
                            {"masked", masked}});
    }
    json j{{"format", "fspo-policy-v1"},
           {"vocab_size", params.vocab_size},
           {"context_order", params.context_order},
           {"temperature", params.temperature},
           {"vocab_hash", vocab_hash},
           {"rows", rows}};
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write " + path);
    out << j.dump(2) << "\n";
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ParseError(path + ": " + e.what());
    }
    if (j.value("format", "") != "fspo-policy-v1") {
        throw ParseError(path + ": unexpected checkpoint format tag");
    }
    Checkpoint ckpt;
    ckpt.vocab_hash = j.value("vocab_hash", uint64_t{0});
    ckpt.params.vocab_size = j.at("vocab_size").get<int>();
    ckpt.params.context_order = j.at("context_order").get<int>();
    ckpt.params.temperature = j.at("temperature").get<double>();
    for (const json& rj : j.at("rows")) {
        StateKey state;
        state.instance_id = rj.at("instance").get<int32_t>();
        state.window = rj.at("window").get<std::vector<int32_t>>();
        if (static_cast<int>(state.window.size()) != ckpt.params.context_order) {
            throw ParseError(path + ": row window length != context_order");
        }
        LogitRow& row = ckpt.params.row(state);
        row.logit = rj.at("logits").get<std::vector<double>>();
        if (static_cast<int>(row.logit.size()) != ckpt.params.vocab_size) {
            throw ParseError(path + ": row logit length != vocab_size");
        }
        for (const json& m : rj.at("masked")) {
            row.masked.at(m.get<size_t>()) = 1;
        }
    }
    return ckpt;
}

}  // namespace fspo
