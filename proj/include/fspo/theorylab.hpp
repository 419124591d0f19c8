#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "fspo/policy.hpp"
#include "fspo/verify.hpp"
#include "fspo/world.hpp"

namespace fspo {

// Reward of a complete output sequence. Must not depend on policy parameters.
using SequenceReward = std::function<double(std::span<const int>)>;

SequenceReward make_answer_reward_fn(const Vocab& vocab, const QAInstance& instance);
SequenceReward make_final_reward_fn(const Vocab& vocab, const QAInstance& instance);

struct WeightedOutput {
    std::vector<int> tokens;
    double prob = 0.0;
    bool truncated = false;
};

inline constexpr long kDefaultEnumerationCap = 1'000'000;

// Depth-first enumeration of every positive-probability output, terminating
// sequences at `eos_token` (pass -1 for none) or at max_len (marked
// truncated). Zero-probability branches are pruned, so masked fixtures stay
// cheap even when vocab_size^max_len is astronomical. Enumerations whose
// output count would exceed `max_outputs` throw EnumerationLimitError
// carrying the a-priori V^max_len size estimate.
std::vector<WeightedOutput> enumerate_outputs(const PolicyParams& policy,
                                              const QAInstance& instance, int max_len,
                                              int eos_token,
                                              long max_outputs = kDefaultEnumerationCap);

// Streaming form of the same walk; `fn(tokens, prob, truncated)` is invoked
// once per output.
void for_each_output(const PolicyParams& policy, const QAInstance& instance, int max_len,
                     int eos_token, long max_outputs,
                     const std::function<void(std::span<const int>, double, bool)>& fn);

// sum_y R(y) pi(y)
double exact_return(const PolicyParams& policy, const QAInstance& instance, int max_len,
                    int eos_token, const SequenceReward& reward,
                    long max_outputs = kDefaultEnumerationCap);

// sum_y R(y) pi(y) grad log pi(y)  — the exact objective gradient.
GradVector exact_gradient(const PolicyParams& policy, const QAInstance& instance, int max_len,
                          int eos_token, const SequenceReward& reward,
                          long max_outputs = kDefaultEnumerationCap);

// Trace of the covariance of the single-sample score estimator
// g = R(y) grad log pi(y):  sum_y pi R^2 ||grad log pi||^2 - ||exact grad||^2.
double estimator_variance(const PolicyParams& policy, const QAInstance& instance, int max_len,
                          int eos_token, const SequenceReward& reward,
                          long max_outputs = kDefaultEnumerationCap);

struct MonteCarloVariance {
    double value = 0.0;           // sample covariance trace (unbiased)
    double standard_error = 0.0;  // of the trace estimate
    long samples = 0;
};

MonteCarloVariance monte_carlo_variance(const PolicyParams& policy, const QAInstance& instance,
                                        int max_len, int eos_token, const SequenceReward& reward,
                                        long n_samples, uint64_t seed);

struct StationarityReport {
    double correct_mass = 0.0;  // probability of an answer-reward-1 output
    double answer_gradient_norm = 0.0;
    double final_gradient_norm = 0.0;
    bool stationary_under_answer_reward = false;
    bool escape_signal = false;  // nonzero composite-reward gradient
};

// Certifies that a policy giving correct answers zero probability sits at a
// stationary point of the binary answer objective, and measures whether the
// composite reward still provides a gradient. Throws ContractViolation when
// correct outputs retain positive mass.
StationarityReport stationarity_check(const PolicyParams& policy, const QAInstance& instance,
                                      const Vocab& vocab, int max_len,
                                      long max_outputs = kDefaultEnumerationCap);

// Minimum entropy over distributions that pin probability eps on each of k
// designated outputs and spread the residual mass over the remaining V - k:
//   H_min = -(1 - k eps) log(1 - k eps) - k eps log eps.
// Requires 0 <= k < V and k*eps < 1 (k = 0 gives 0).
double entropy_floor(double eps, int k, int vocab_size);

// Uniform sample from that constraint set: designated outputs at eps, the
// residual Dirichlet(1)-distributed over the other V - k outputs.
std::vector<double> sample_constrained_dist(double eps, int k, int vocab_size, RngStream& rng);

struct HittingTimeResult {
    double mean_first_success = 0.0;  // 1-based sample index
    long trials = 0;
};

// Mean number of i.i.d. rollouts until the first reward-1 sample, averaged
// over `trials` independent repetitions (geometric with mean 1/p for a
// single-step success probability p). Per-trial seeds are derived from
// `seed`. Throws if a trial exceeds `max_attempts` draws.
HittingTimeResult hitting_time_experiment(const PolicyParams& policy, const QAInstance& instance,
                                          int max_len, int eos_token,
                                          const SequenceReward& reward, long trials,
                                          uint64_t seed, long max_attempts = 10'000'000);

// Central-difference check of exact_gradient over every visited unmasked
// logit. Returns the max hybrid error |fd - analytic| / max(1, |fd|,
// |analytic|).
double gradcheck(const PolicyParams& policy, const QAInstance& instance, int max_len,
                 int eos_token, const SequenceReward& reward, double h,
                 long max_outputs = kDefaultEnumerationCap);

struct EnumerationReport {
    long output_count = 0;
    double total_mass = 0.0;
    double exact_return = 0.0;
    GradVector gradient;
    double gradient_norm = 0.0;
    double variance = 0.0;
    // (tokens, probability, reward), ordered by enumeration
    std::vector<std::tuple<std::vector<int>, double, double>> outputs;
};

EnumerationReport build_enumeration_report(const PolicyParams& policy, const QAInstance& instance,
                                           int max_len, int eos_token,
                                           const SequenceReward& reward,
                                           long max_outputs = kDefaultEnumerationCap,
                                           bool keep_outputs = true);

}  // namespace fspo
