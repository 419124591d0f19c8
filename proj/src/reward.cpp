#include "fspo/reward.hpp"

namespace fspo {

double answer_reward(const Rollout& rollout, const QAInstance& instance) {
    if (!rollout.answer.has_value()) return 0.0;
    const Span span = *rollout.answer;
    if (span.size() != static_cast<int>(instance.gold_answer.size())) return 0.0;
    for (int i = 0; i < span.size(); ++i) {
        if (rollout.tokens[static_cast<size_t>(span.begin + i)] !=
            instance.gold_answer[static_cast<size_t>(i)]) {
            return 0.0;
        }
    }
    return 1.0;
}

std::vector<double> factuality_rewards(std::span<const StepLabel> labels) {
    std::vector<double> out;
    out.reserve(labels.size());
    for (StepLabel l : labels) out.push_back(static_cast<double>(label_value(l)));
    return out;
}

double final_reward(double answer, std::span<const StepLabel> labels) {
    double mean = 0.0;
    if (!labels.empty()) {
        double sum = 0.0;
        for (StepLabel l : labels) sum += static_cast<double>(label_value(l));
        mean = sum / static_cast<double>(labels.size());
    }
    return answer + mean;
}

RewardBreakdown score_rollout(const Rollout& rollout, const QAInstance& instance,
                              std::vector<StepLabel> labels) {
    RewardBreakdown rb;
    rb.answer = answer_reward(rollout, instance);
    rb.step_labels = std::move(labels);
    if (!rb.step_labels.empty()) {
        double sum = 0.0;
        for (StepLabel l : rb.step_labels) sum += static_cast<double>(label_value(l));
        rb.factuality_mean = sum / static_cast<double>(rb.step_labels.size());
    }
    rb.final = rb.answer + rb.factuality_mean;
    return rb;
}

}  // namespace fspo
