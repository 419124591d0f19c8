#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "fspo/common.hpp"
#include "fspo/rollout.hpp"
#include "fspo/world.hpp"

namespace fspo {

// Tabular state: instance id plus the last-k token window (BOS-padded on the
// left). The pair is the injective key into the logit table.
struct StateKey {
    int32_t instance_id = 0;
    std::vector<int32_t> window;

    bool operator==(const StateKey&) const = default;
};

struct StateKeyHash {
    size_t operator()(const StateKey& s) const {
        uint64_t h = 1469598103934665603ull;
        auto feed = [&h](uint64_t v) {
            h ^= v;
            h *= 1099511628211ull;
        };
        feed(static_cast<uint64_t>(static_cast<uint32_t>(s.instance_id)));
        for (int32_t t : s.window) feed(static_cast<uint64_t>(static_cast<uint32_t>(t)) + 0x9e37ull);
        return static_cast<size_t>(h);
    }
};

struct TokenDist {
    std::vector<double> p;  // exact zeros on masked tokens
};

// One table row. `masked[v]` marks token v as excluded at this state: its
// probability is exactly zero and its logit is not a trainable parameter.
struct LogitRow {
    std::vector<double> logit;
    std::vector<uint8_t> masked;
};

// Sparse state -> per-token gradient accumulator. Absent rows are zero.
class GradVector {
public:
    using Rows = std::unordered_map<StateKey, std::vector<double>, StateKeyHash>;

    std::vector<double>& row(const StateKey& state, int vocab_size);
    const Rows& rows() const { return rows_; }
    bool empty() const { return rows_.empty(); }

    void add_scaled(double alpha, const GradVector& other);  // this += alpha * other
    void scale(double alpha);
    double dot(const GradVector& other) const;
    double norm_sq() const;
    double norm() const;

private:
    Rows rows_;
};

// Autoregressive tabular softmax policy over (instance id, token window)
// states. Rows absent from the table behave as all-zero logits (uniform),
// so the table logically covers every reachable state of the instance set.
struct PolicyParams {
    int vocab_size = 0;
    int context_order = 2;  // window length k
    double temperature = 1.0;
    std::unordered_map<StateKey, LogitRow, StateKeyHash> table;

    PolicyParams() = default;
    PolicyParams(int vocab, int k, double temp = 1.0)
        : vocab_size(vocab), context_order(k), temperature(temp) {}

    LogitRow& row(const StateKey& state);             // materializes a zero row
    const LogitRow* find_row(const StateKey& state) const;

    void set_logits(const StateKey& state, std::vector<double> logits);
    void mask_token(const StateKey& state, int token);
};

// Initial decoding state for an instance: BOS-padded window over the prompt.
StateKey initial_state(const QAInstance& instance, int context_order, int bos_token);
// Slides the window by one generated token.
StateKey advance(const StateKey& state, int token);

// Softmax over unmasked tokens at temperature `params.temperature`.
// `extra_masked` excludes additional token ids for this call only. Throws
// ContractViolation if every token ends up masked.
TokenDist dist(const PolicyParams& params, const StateKey& state,
               std::span<const int> extra_masked = {});

double logprob(const PolicyParams& params, const StateKey& state, int token);
// Shannon entropy in nats; always within [0, log #unmasked].
double entropy(const PolicyParams& params, const StateKey& state);

// d log pi(token|state) / d logits: (1{v==token} - pi(v)) / temperature on
// unmasked v, zero on masked v. Throws if `token` is masked.
GradVector grad_logprob(const PolicyParams& params, const StateKey& state, int token);

// KL(p || q). Requires q > 0 wherever p > 0.
double kl(const TokenDist& p, const TokenDist& q);
double kl_at_state(const PolicyParams& params, const PolicyParams& reference,
                   const StateKey& state);

// Gradient ascent step on the logit table; masked entries never move.
void apply_update(PolicyParams& params, const GradVector& grad, double lr);
// Deep copy, unaffected by later updates to the original.
PolicyParams snapshot(const PolicyParams& params);

// Samples a response autoregressively under `params`, recording per-token
// log-probabilities. Stops at `eos_token` (pass -1 for none) or `max_len`;
// hitting max_len without EOS sets `truncated`. Step/answer spans are left
// empty; segmentation fills them.
Rollout sample_rollout(const PolicyParams& params, const QAInstance& instance, int max_len,
                       RngStream& rng, int eos_token);

// ---- checkpoints ----

void save_checkpoint(const PolicyParams& params, const std::string& path,
                     uint64_t vocab_hash = 0);
struct Checkpoint {
    PolicyParams params;
    uint64_t vocab_hash = 0;
};
Checkpoint load_checkpoint(const std::string& path);

}  // namespace fspo
