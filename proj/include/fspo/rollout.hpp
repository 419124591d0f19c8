#pragma once

#include <optional>
#include <vector>

namespace fspo {

// Half-open token index range [begin, end) into a rollout's tokens.
struct Span {
    int begin = 0;
    int end = 0;

    bool operator==(const Span&) const = default;
    int size() const { return end - begin; }
};

// One sampled response. `old_logprobs` are the per-token log-probabilities
// under the policy that generated the rollout; they become the denominators
// of the importance ratios. Step and answer spans are filled by segmentation.
struct Rollout {
    int instance_id = 0;
    std::vector<int> tokens;
    std::vector<double> old_logprobs;
    bool truncated = false;
    std::vector<Span> steps;
    std::optional<Span> answer;
};

}  // namespace fspo
