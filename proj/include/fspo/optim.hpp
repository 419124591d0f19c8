#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "fspo/advantage.hpp"
#include "fspo/policy.hpp"
#include "fspo/reward.hpp"
#include "fspo/verify.hpp"
#include "fspo/world.hpp"

namespace fspo {

enum class Algorithm {
    reinforce,
    ppo,
    grpo,
    fspo,
    reinforce_pp,
    fspo_reinforce_pp,
};

enum class RewardMode {
    answer_only,
    answer_plus_factuality,
};

Algorithm parse_algorithm(const std::string& name);
std::string algorithm_name(Algorithm a);
RewardMode parse_reward_mode(const std::string& name);
std::string reward_mode_name(RewardMode m);

// Whether the algorithm applies the factuality-aware token adjustment.
bool adjusts_tokens(Algorithm a);

struct TrainConfig {
    int group_size = 8;           // rollouts per prompt
    int batch_size = 8;           // prompts per iteration
    double clip_epsilon = 0.2;
    double kl_coef = 1e-3;
    double learning_rate = 0.1;   // tabular desk scale; 4e-7 selectable
    int max_response_length = 24;
    int iterations = 100;
    uint64_t seed = 0;
    Algorithm algorithm = Algorithm::fspo;
    RewardMode reward_mode = RewardMode::answer_plus_factuality;
    int context_order = 2;
    double temperature = 1.0;
    int checkpoint_every = 0;  // 0 = final checkpoint only

    void validate() const;  // throws ConfigError
};

struct UpdateStats {
    double mean_reward = 0.0;        // under the configured reward mode
    double answer_accuracy = 0.0;
    double contradiction_rate = 0.0;  // steps labeled -1 / total steps
    double entailed_rate = 0.0;
    double mean_entropy = 0.0;        // sampling policy, over visited states
    double surrogate = 0.0;           // objective value at the sampling point
    double grad_norm = 0.0;           // full ascent direction incl. KL term
    double mean_kl = 0.0;             // to reference, after the update
};

struct Dataset {
    FactWorld world;
    std::vector<QAInstance> instances;
    std::unordered_map<int, std::string> algo_tags;  // instance id -> algorithm
};

// One prompt's sampled group with everything derived from it.
struct GroupData {
    const QAInstance* instance = nullptr;
    std::vector<Rollout> rollouts;
    std::vector<std::vector<StepLabel>> labels;
    std::vector<RewardBreakdown> breakdowns;
    std::vector<double> train_rewards;
    std::vector<double> rollout_advantages;            // uniform A_i per rollout
    std::vector<std::vector<double>> token_advantages;
};

struct IterationData {
    Algorithm algorithm = Algorithm::fspo;
    std::vector<GroupData> groups;
    UpdateStats stats;
};

// ---- gradient building blocks ----

// Gradient of (1/N) sum_i (1/|y_i|) sum_t min(r_t A, clip(r_t, 1-eps, 1+eps) A)
// with r_t = pi(o_t|s_t) / pi_old(o_t|s_t); pi_old probabilities come from the
// rollouts' recorded old_logprobs. Tokens whose min selects the clipped
// constant contribute nothing. Throws on non-finite ratios.
GradVector surrogate_gradient(const PolicyParams& policy, std::span<const Rollout> rollouts,
                              std::span<const std::vector<double>> token_advantages,
                              double clip_epsilon,
                              const std::function<const QAInstance&(int)>& instance_by_id);

// (1/N) sum_i R_i sum_t grad log pi(o_t|s_t), evaluated under `policy`.
GradVector reinforce_gradient(const PolicyParams& policy, std::span<const Rollout> rollouts,
                              std::span<const double> rewards,
                              const std::function<const QAInstance&(int)>& instance_by_id);

// Gradient of sum over `states` of KL(pi_theta(.|s) || pi_ref(.|s)).
// The caller scales by the KL coefficient and subtracts it from the ascent
// direction.
GradVector kl_gradient(const PolicyParams& policy, const PolicyParams& reference,
                       std::span<const StateKey> states);

// ---- training ----

// Snapshot, sample a prompt batch with G rollouts each, segment + label +
// reward + advantage per the algorithm, apply one gradient ascent step with
// the KL regularizer, and report stats. `pool` indexes into
// dataset.instances; `algorithm`/`reward_mode` override the config's for
// tag-scheduled batches.
IterationData train_iteration(PolicyParams& policy, const Dataset& dataset,
                              std::span<const size_t> pool, const TrainConfig& config,
                              Algorithm algorithm, RewardMode reward_mode,
                              const VerifierBackend& verifier, const PolicyParams& reference,
                              RngStream& rng);

using IterationCallback = std::function<void(int iteration, const IterationData&)>;

// Full loop: pure function of (initial params, dataset, config, seed). When
// instances carry algorithm tags, iterations cycle through the tag pools in
// sorted order and each batch trains with its pool's algorithm; untagged
// datasets always use config.algorithm.
std::vector<UpdateStats> train(PolicyParams& policy, const Dataset& dataset,
                               const TrainConfig& config, const VerifierBackend& verifier,
                               const IterationCallback& callback = {});

}  // namespace fspo
