#pragma once

#include <span>
#include <vector>

#include "fspo/rollout.hpp"
#include "fspo/verify.hpp"
#include "fspo/world.hpp"

namespace fspo {

// Per-rollout reward decomposition: binary answer reward plus the mean of
// the step factuality labels (0 when the rollout has no steps).
struct RewardBreakdown {
    double answer = 0.0;                 // 0 or 1
    std::vector<StepLabel> step_labels;  // one per step span
    double factuality_mean = 0.0;        // in [-1, 1]
    double final = 0.0;                  // answer + factuality_mean, in [-1, 2]
};

// 1 iff the answer span exists and its tokens equal the gold answer exactly
// (length and content); otherwise 0. A missing ANSWER_MARK scores 0 rather
// than erroring.
double answer_reward(const Rollout& rollout, const QAInstance& instance);

// Labels embedded as real-valued step rewards.
std::vector<double> factuality_rewards(std::span<const StepLabel> labels);

double final_reward(double answer, std::span<const StepLabel> labels);

RewardBreakdown score_rollout(const Rollout& rollout, const QAInstance& instance,
                              std::vector<StepLabel> labels);

}  // namespace fspo
