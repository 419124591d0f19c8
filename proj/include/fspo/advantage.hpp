#pragma once

#include <span>
#include <vector>

#include "fspo/rollout.hpp"
#include "fspo/verify.hpp"

namespace fspo {

// Group-normalized rollout advantages. Degenerate groups (population std
// below 1e-8) get all-zero advantages instead of a division blow-up.
struct GroupAdvantages {
    std::vector<double> a;
    bool degenerate = false;
};

inline constexpr double kDegenerateStdThreshold = 1e-8;

// (R_i - mean) / population std over a group of G >= 2 rewards.
GroupAdvantages group_advantages(std::span<const double> rewards);

// Reinforce++-style global normalization: (R_i - mean) / (pop std + 1e-8),
// uniform per rollout, over the whole batch (size >= 2).
std::vector<double> batch_advantages(std::span<const double> rewards);

// Factuality-aware case table for one token: keep the advantage when its
// sign agrees with the step label, flip it when they disagree, pass through
// when either is zero/neutral.
double adjusted_advantage(double advantage, StepLabel label);

// Applies the case table across a rollout: token t in step j uses label j;
// tokens outside any step (ANSWER_MARK, answer span, EOS) keep the rollout
// advantage. labels.size() must equal rollout.steps.size().
std::vector<double> adjust_token_advantages(double advantage, const Rollout& rollout,
                                            std::span<const StepLabel> labels);

}  // namespace fspo
