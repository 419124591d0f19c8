#include "fspo/advantage.hpp"

#include <cmath>

#include "fspo/common.hpp"

namespace fspo {

namespace {

struct Moments {
    double mean = 0.0;
    double pop_std = 0.0;
};

Moments moments(std::span<const double> xs) {
    Moments m;
    for (double x : xs) m.mean += x;
    m.mean /= static_cast<double>(xs.size());
    double var = 0.0;
    for (double x : xs) var += (x - m.mean) * (x - m.mean);
    m.pop_std = std::sqrt(var / static_cast<double>(xs.size()));
    return m;
}

}  // namespace

GroupAdvantages group_advantages(std::span<const double> rewards) {
    if (rewards.size() < 2) {
        throw ContractViolation("group_advantages: group size must be >= 2");
    }
    GroupAdvantages out;
    const Moments m = moments(rewards);
    if (m.pop_std < kDegenerateStdThreshold) {
        out.degenerate = true;
        out.a.assign(rewards.size(), 0.0);
        return out;
    }
    out.a.reserve(rewards.size());
    for (double r : rewards) out.a.push_back((r - m.mean) / m.pop_std);
    return out;
}

std::vector<double> batch_advantages(std::span<const double> rewards) {
    if (rewards.size() < 2) {
        throw ContractViolation("batch_advantages: batch size must be >= 2");
    }
    const Moments m = moments(rewards);
    std::vector<double> out;
    out.reserve(rewards.size());
    for (double r : rewards) out.push_back((r - m.mean) / (m.pop_std + 1e-8));
    return out;
}

double adjusted_advantage(double advantage, StepLabel label) {
    if (advantage == 0.0 || label == StepLabel::neutral) return advantage;
    const bool agree = (advantage > 0.0 && label == StepLabel::entailed) ||
                       (advantage < 0.0 && label == StepLabel::contradicted);
    return agree ? advantage : -advantage;
}

std::vector<double> adjust_token_advantages(double advantage, const Rollout& rollout,
                                            std::span<const StepLabel> labels) {
    if (labels.size() != rollout.steps.size()) {
        throw ContractViolation("adjust_token_advantages: labels misaligned with step spans");
    }
    std::vector<double> out(rollout.tokens.size(), advantage);
    for (size_t j = 0; j < rollout.steps.size(); ++j) {
        const Span& s = rollout.steps[j];
        const double adjusted = adjusted_advantage(advantage, labels[j]);
        for (int t = s.begin; t < s.end; ++t) out[static_cast<size_t>(t)] = adjusted;
    }
    return out;
}

}  // namespace fspo
