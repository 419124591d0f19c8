#include "fspo/theorylab.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "fspo/reward.hpp"

namespace fspo {

SequenceReward make_answer_reward_fn(const Vocab& vocab, const QAInstance& instance) {
    return [vocab, instance](std::span<const int> tokens) {
        Rollout r;
        r.instance_id = instance.id;
        r.tokens.assign(tokens.begin(), tokens.end());
        segment_rollout(r, vocab);
        return answer_reward(r, instance);
    };
}

SequenceReward make_final_reward_fn(const Vocab& vocab, const QAInstance& instance) {
    auto verifier = std::make_shared<OracleVerifier>(vocab);
    return [vocab, instance, verifier](std::span<const int> tokens) {
        Rollout r;
        r.instance_id = instance.id;
        r.tokens.assign(tokens.begin(), tokens.end());
        segment_rollout(r, vocab);
        std::vector<StepLabel> labels = label_rollout(r, instance, *verifier);
        return score_rollout(r, instance, std::move(labels)).final;
    };
}

namespace {

// Per-state softmax cache shared across one enumeration walk.
class DistCache {
public:
    explicit DistCache(const PolicyParams& policy) : policy_(policy) {}

    const TokenDist& at(const StateKey& s) {
        auto [it, inserted] = cache_.try_emplace(s);
        if (inserted) it->second = dist(policy_, s);
        return it->second;
    }

    // ||pi(.|s)||^2, used by the O(1) per-edge score-norm identities.
    double p_norm_sq(const StateKey& s) {
        auto [it, inserted] = norms_.try_emplace(s, 0.0);
        if (inserted) {
            double acc = 0.0;
            for (double p : at(s).p) acc += p * p;
            it->second = acc;
        }
        return it->second;
    }

private:
    const PolicyParams& policy_;
    std::unordered_map<StateKey, TokenDist, StateKeyHash> cache_;
    std::unordered_map<StateKey, double, StateKeyHash> norms_;
};

using LeafFn = std::function<void(std::span<const int> tokens, std::span<const StateKey> states,
                                  double prob, bool truncated)>;

// DFS over positive-probability continuations. states[i] is the state the
// i-th token was emitted from.
void enumerate_core(const PolicyParams& policy, const QAInstance& instance, int max_len,
                    int eos_token, long max_outputs, const LeafFn& leaf) {
    if (max_len < 1) throw ContractViolation("enumerate: max_len must be >= 1");
    DistCache cache(policy);
    std::vector<int> tokens;
    std::vector<StateKey> states;
    tokens.reserve(static_cast<size_t>(max_len));
    states.reserve(static_cast<size_t>(max_len));
    long count = 0;

    auto emit = [&](double prob, bool truncated) {
        if (++count > max_outputs) {
            const double estimate =
                std::pow(static_cast<double>(policy.vocab_size), static_cast<double>(max_len));
            throw EnumerationLimitError(
                "enumeration exceeds output cap " + std::to_string(max_outputs) +
                    " (a-priori bound vocab_size^max_len = " + std::to_string(estimate) + ")",
                estimate);
        }
        leaf(tokens, states, prob, truncated);
    };

    std::function<void(const StateKey&, double)> walk = [&](const StateKey& s, double prob) {
        const TokenDist& d = cache.at(s);
        for (int v = 0; v < policy.vocab_size; ++v) {
            const double p = d.p[static_cast<size_t>(v)];
            if (p <= 0.0) continue;
            tokens.push_back(v);
            states.push_back(s);
            const double p_path = prob * p;
            if (v == eos_token) {
                emit(p_path, false);
            } else if (static_cast<int>(tokens.size()) == max_len) {
                emit(p_path, true);
            } else {
                walk(advance(s, v), p_path);
            }
            tokens.pop_back();
            states.pop_back();
        }
    };

    walk(initial_state(instance, policy.context_order, /*bos_token=*/0), 1.0);
}

// Edge-weight accumulator: W[s][o] = sum over outputs through (s, o) of
// weight(y). The weighted score-gradient sum then finalizes as
// grad[s][v] = (W[s][v] - pi(v|s) * sum_o W[s][o]) / temperature.
class EdgeWeights {
public:
    explicit EdgeWeights(int vocab_size) : vocab_size_(vocab_size) {}

    void add_path(std::span<const int> tokens, std::span<const StateKey> states, double weight) {
        if (weight == 0.0) return;
        for (size_t i = 0; i < tokens.size(); ++i) {
            auto [it, inserted] = w_.try_emplace(states[i]);
            if (inserted) it->second.assign(static_cast<size_t>(vocab_size_), 0.0);
            it->second[static_cast<size_t>(tokens[i])] += weight;
        }
    }

    GradVector finalize(const PolicyParams& policy, DistCache& cache) const {
        GradVector g;
        for (const auto& [state, w] : w_) {
            const TokenDist& d = cache.at(state);
            double total = 0.0;
            for (double x : w) total += x;
            std::vector<double>& row = g.row(state, vocab_size_);
            for (int v = 0; v < vocab_size_; ++v) {
                const double p = d.p[static_cast<size_t>(v)];
                if (p == 0.0 && w[static_cast<size_t>(v)] == 0.0) continue;
                row[static_cast<size_t>(v)] =
                    (w[static_cast<size_t>(v)] - p * total) / policy.temperature;
            }
        }
        return g;
    }

private:
    int vocab_size_;
    std::unordered_map<StateKey, std::vector<double>, StateKeyHash> w_;
};

// ||grad log pi(y)||^2 via per-edge identities; quadratic in path length
// only for repeated states within one path.
double path_score_norm_sq(std::span<const int> tokens, std::span<const StateKey> states,
                          DistCache& cache, double temperature) {
    double acc = 0.0;
    for (size_t i = 0; i < tokens.size(); ++i) {
        const TokenDist& d = cache.at(states[i]);
        const double p_i = d.p[static_cast<size_t>(tokens[i])];
        acc += 1.0 - 2.0 * p_i + cache.p_norm_sq(states[i]);
        for (size_t j = i + 1; j < tokens.size(); ++j) {
            if (!(states[j] == states[i])) continue;
            const double p_j = d.p[static_cast<size_t>(tokens[j])];
            const double same = tokens[i] == tokens[j] ? 1.0 : 0.0;
            acc += 2.0 * (same - p_i - p_j + cache.p_norm_sq(states[i]));
        }
    }
    return acc / (temperature * temperature);
}

}  // namespace

std::vector<WeightedOutput> enumerate_outputs(const PolicyParams& policy,
                                              const QAInstance& instance, int max_len,
                                              int eos_token, long max_outputs) {
    std::vector<WeightedOutput> out;
    enumerate_core(policy, instance, max_len, eos_token, max_outputs,
                   [&out](std::span<const int> tokens, std::span<const StateKey>, double prob,
                          bool truncated) {
                       out.push_back({{tokens.begin(), tokens.end()}, prob, truncated});
                   });
    return out;
}

void for_each_output(const PolicyParams& policy, const QAInstance& instance, int max_len,
                     int eos_token, long max_outputs,
                     const std::function<void(std::span<const int>, double, bool)>& fn) {
    enumerate_core(policy, instance, max_len, eos_token, max_outputs,
                   [&fn](std::span<const int> tokens, std::span<const StateKey>, double prob,
                         bool truncated) { fn(tokens, prob, truncated); });
}

double exact_return(const PolicyParams& policy, const QAInstance& instance, int max_len,
                    int eos_token, const SequenceReward& reward, long max_outputs) {
    double j = 0.0;
    enumerate_core(policy, instance, max_len, eos_token, max_outputs,
                   [&](std::span<const int> tokens, std::span<const StateKey>, double prob,
                       bool) { j += reward(tokens) * prob; });
    return j;
}

GradVector exact_gradient(const PolicyParams& policy, const QAInstance& instance, int max_len,
                          int eos_token, const SequenceReward& reward, long max_outputs) {
    DistCache cache(policy);
    EdgeWeights weights(policy.vocab_size);
    enumerate_core(policy, instance, max_len, eos_token, max_outputs,
                   [&](std::span<const int> tokens, std::span<const StateKey> states, double prob,
                       bool) { weights.add_path(tokens, states, reward(tokens) * prob); });
    return weights.finalize(policy, cache);
}

double estimator_variance(const PolicyParams& policy, const QAInstance& instance, int max_len,
                          int eos_token, const SequenceReward& reward, long max_outputs) {
    DistCache cache(policy);
    EdgeWeights weights(policy.vocab_size);
    double second_moment = 0.0;
    enumerate_core(policy, instance, max_len, eos_token, max_outputs,
                   [&](std::span<const int> tokens, std::span<const StateKey> states, double prob,
                       bool) {
                       const double r = reward(tokens);
                       if (r == 0.0) return;
                       weights.add_path(tokens, states, r * prob);
                       second_moment += prob * r * r *
                                        path_score_norm_sq(tokens, states, cache,
                                                           policy.temperature);
                   });
    const GradVector g = weights.finalize(policy, cache);
    return second_moment - g.norm_sq();
}

MonteCarloVariance monte_carlo_variance(const PolicyParams& policy, const QAInstance& instance,
                                        int max_len, int eos_token, const SequenceReward& reward,
                                        long n_samples, uint64_t seed) {
    if (n_samples < 2) throw ContractViolation("monte_carlo_variance: need >= 2 samples");

    struct Sample {
        std::vector<int> tokens;
        double reward = 0.0;
    };
    std::vector<Sample> samples;
    samples.reserve(static_cast<size_t>(n_samples));

    DistCache cache(policy);
    EdgeWeights weights(policy.vocab_size);
    for (long i = 0; i < n_samples; ++i) {
        RngStream rng(derive_seed(seed, static_cast<uint64_t>(i)));
        Rollout r = sample_rollout(policy, instance, max_len, rng, eos_token);
        Sample s{std::move(r.tokens), 0.0};
        s.reward = reward(s.tokens);
        // Edge weights accumulate n * mean(g) across samples.
        if (s.reward != 0.0) {
            StateKey state = initial_state(instance, policy.context_order, 0);
            std::vector<StateKey> states;
            states.reserve(s.tokens.size());
            for (int tok : s.tokens) {
                states.push_back(state);
                state = advance(state, tok);
            }
            weights.add_path(s.tokens, states, s.reward);
        }
        samples.push_back(std::move(s));
    }

    GradVector mean_grad = weights.finalize(policy, cache);
    mean_grad.scale(1.0 / static_cast<double>(n_samples));
    const double mean_norm_sq = mean_grad.norm_sq();

    // Per-sample squared distance to the mean without materializing g_i:
    // ||g_i - gbar||^2 = R^2 ||grad log pi(y_i)||^2 - 2 R (gbar . grad log pi) + ||gbar||^2.
    std::unordered_map<StateKey, double, StateKeyHash> gbar_dot_pi;
    auto gbar_row = [&](const StateKey& s) -> const std::vector<double>* {
        auto it = mean_grad.rows().find(s);
        return it == mean_grad.rows().end() ? nullptr : &it->second;
    };

    double sum_sq = 0.0, sum = 0.0;
    std::vector<double> dists;
    dists.reserve(samples.size());
    for (const Sample& s : samples) {
        double g_dot_gbar = 0.0;
        double g_norm_sq = 0.0;
        if (s.reward != 0.0) {
            StateKey state = initial_state(instance, policy.context_order, 0);
            std::vector<StateKey> states;
            states.reserve(s.tokens.size());
            for (int tok : s.tokens) {
                states.push_back(state);
                state = advance(state, tok);
            }
            g_norm_sq = s.reward * s.reward *
                        path_score_norm_sq(s.tokens, states, cache, policy.temperature);
            for (size_t i = 0; i < s.tokens.size(); ++i) {
                const std::vector<double>* row = gbar_row(states[i]);
                if (!row) continue;
                auto [it, inserted] = gbar_dot_pi.try_emplace(states[i], 0.0);
                if (inserted) {
                    const TokenDist& d = cache.at(states[i]);
                    double acc = 0.0;
                    for (size_t v = 0; v < row->size(); ++v) acc += (*row)[v] * d.p[v];
                    it->second = acc;
                }
                g_dot_gbar += s.reward *
                              ((*row)[static_cast<size_t>(s.tokens[i])] - it->second) /
                              policy.temperature;
            }
        }
        const double dist_sq = g_norm_sq - 2.0 * g_dot_gbar + mean_norm_sq;
        dists.push_back(dist_sq);
        sum += dist_sq;
        sum_sq += dist_sq * dist_sq;
    }

    const double n = static_cast<double>(n_samples);
    MonteCarloVariance result;
    result.samples = n_samples;
    result.value = sum / (n - 1.0);
    const double mean_dist = sum / n;
    const double var_dist = std::max(0.0, sum_sq / n - mean_dist * mean_dist);
    result.standard_error = (n / (n - 1.0)) * std::sqrt(var_dist / n);
    return result;
}

StationarityReport stationarity_check(const PolicyParams& policy, const QAInstance& instance,
                                      const Vocab& vocab, int max_len, long max_outputs) {
    const SequenceReward r_answer = make_answer_reward_fn(vocab, instance);
    const SequenceReward r_final = make_final_reward_fn(vocab, instance);

    StationarityReport rep;
    rep.correct_mass = exact_return(policy, instance, max_len, vocab.eos, r_answer, max_outputs);
    rep.answer_gradient_norm =
        exact_gradient(policy, instance, max_len, vocab.eos, r_answer, max_outputs).norm();
    rep.final_gradient_norm =
        exact_gradient(policy, instance, max_len, vocab.eos, r_final, max_outputs).norm();
    rep.stationary_under_answer_reward =
        rep.correct_mass == 0.0 && rep.answer_gradient_norm == 0.0;
    rep.escape_signal = rep.final_gradient_norm > 0.0;
    return rep;
}

double entropy_floor(double eps, int k, int vocab_size) {
    if (k == 0) return 0.0;
    if (k < 0 || k >= vocab_size) {
        throw ContractViolation("entropy_floor: need 0 <= k < vocab_size");
    }
    if (eps <= 0.0) throw ContractViolation("entropy_floor: eps must be positive");
    const double residual = 1.0 - static_cast<double>(k) * eps;
    if (residual <= 0.0) throw ContractViolation("entropy_floor: k * eps must be < 1");
    double h = -static_cast<double>(k) * eps * std::log(eps);
    if (residual > 0.0) h -= residual * std::log(residual);
    return h;
}

std::vector<double> sample_constrained_dist(double eps, int k, int vocab_size, RngStream& rng) {
    if (k < 0 || k >= vocab_size) {
        throw ContractViolation("sample_constrained_dist: need 0 <= k < vocab_size");
    }
    const double residual = 1.0 - static_cast<double>(k) * eps;
    if (eps <= 0.0 || residual <= 0.0) {
        throw ContractViolation("sample_constrained_dist: invalid (eps, k)");
    }
    std::vector<double> p(static_cast<size_t>(vocab_size), 0.0);
    for (int i = 0; i < k; ++i) p[static_cast<size_t>(i)] = eps;
    // Dirichlet(1) over the remaining outputs via normalized exponentials.
    double total = 0.0;
    for (int i = k; i < vocab_size; ++i) {
        double u = rng.next_double();
        while (u <= 0.0) u = rng.next_double();
        p[static_cast<size_t>(i)] = -std::log(u);
        total += p[static_cast<size_t>(i)];
    }
    for (int i = k; i < vocab_size; ++i) p[static_cast<size_t>(i)] *= residual / total;
    return p;
}

HittingTimeResult hitting_time_experiment(const PolicyParams& policy, const QAInstance& instance,
                                          int max_len, int eos_token,
                                          const SequenceReward& reward, long trials,
                                          uint64_t seed, long max_attempts) {
    if (trials < 1) throw ContractViolation("hitting_time_experiment: trials must be >= 1");
    double total = 0.0;
    for (long t = 0; t < trials; ++t) {
        RngStream rng(derive_seed(seed, static_cast<uint64_t>(t)));
        long attempt = 0;
        while (true) {
            ++attempt;
            if (attempt > max_attempts) {
                throw ContractViolation("hitting_time_experiment: no success within " +
                                        std::to_string(max_attempts) + " attempts");
            }
            Rollout r = sample_rollout(policy, instance, max_len, rng, eos_token);
            if (reward(r.tokens) >= 0.5) break;
        }
        total += static_cast<double>(attempt);
    }
    return {total / static_cast<double>(trials), trials};
}

double gradcheck(const PolicyParams& policy, const QAInstance& instance, int max_len,
                 int eos_token, const SequenceReward& reward, double h, long max_outputs) {
    if (h <= 0.0) throw ContractViolation("gradcheck: h must be positive");

    std::vector<StateKey> visited;
    {
        std::unordered_map<StateKey, bool, StateKeyHash> seen;
        enumerate_core(policy, instance, max_len, eos_token, max_outputs,
                       [&](std::span<const int>, std::span<const StateKey> states, double, bool) {
                           for (const StateKey& s : states) {
                               if (seen.emplace(s, true).second) visited.push_back(s);
                           }
                       });
    }

    const GradVector analytic =
        exact_gradient(policy, instance, max_len, eos_token, reward, max_outputs);

    PolicyParams work = policy;
    double max_err = 0.0;
    for (const StateKey& s : visited) {
        LogitRow& row = work.row(s);
        for (int v = 0; v < work.vocab_size; ++v) {
            if (row.masked[static_cast<size_t>(v)]) continue;
            const double saved = row.logit[static_cast<size_t>(v)];
            row.logit[static_cast<size_t>(v)] = saved + h;
            const double j_plus =
                exact_return(work, instance, max_len, eos_token, reward, max_outputs);
            row.logit[static_cast<size_t>(v)] = saved - h;
            const double j_minus =
                exact_return(work, instance, max_len, eos_token, reward, max_outputs);
            row.logit[static_cast<size_t>(v)] = saved;

            const double fd = (j_plus - j_minus) / (2.0 * h);
            double an = 0.0;
            auto it = analytic.rows().find(s);
            if (it != analytic.rows().end()) an = it->second[static_cast<size_t>(v)];
            const double err =
                std::abs(fd - an) / std::max({1.0, std::abs(fd), std::abs(an)});
            max_err = std::max(max_err, err);
        }
    }
    return max_err;
}

EnumerationReport build_enumeration_report(const PolicyParams& policy, const QAInstance& instance,
                                           int max_len, int eos_token,
                                           const SequenceReward& reward, long max_outputs,
                                           bool keep_outputs) {
    DistCache cache(policy);
    EdgeWeights weights(policy.vocab_size);
    EnumerationReport rep;
    double second_moment = 0.0;
    enumerate_core(policy, instance, max_len, eos_token, max_outputs,
                   [&](std::span<const int> tokens, std::span<const StateKey> states, double prob,
                       bool) {
                       const double r = reward(tokens);
                       ++rep.output_count;
                       rep.total_mass += prob;
                       rep.exact_return += r * prob;
                       if (r != 0.0) {
                           weights.add_path(tokens, states, r * prob);
                           second_moment += prob * r * r *
                                            path_score_norm_sq(tokens, states, cache,
                                                               policy.temperature);
                       }
                       if (keep_outputs) {
                           rep.outputs.emplace_back(std::vector<int>(tokens.begin(), tokens.end()),
                                                    prob, r);
                       }
                   });
    rep.gradient = weights.finalize(policy, cache);
    rep.gradient_norm = rep.gradient.norm();
    rep.variance = second_moment - rep.gradient.norm_sq();
    return rep;
}

}  // namespace fspo
