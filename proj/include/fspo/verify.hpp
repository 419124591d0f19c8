#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fspo/rollout.hpp"
#include "fspo/world.hpp"

namespace fspo {

enum class StepLabel : int {
    contradicted = -1,
    neutral = 0,
    entailed = 1,
};

inline int label_value(StepLabel l) { return static_cast<int>(l); }

struct Segmentation {
    std::vector<Span> steps;
    std::optional<Span> answer;
};

// Splits a response into reasoning steps and an answer span.
//
// The region before the first ANSWER_MARK is split on PERIOD tokens; each
// PERIOD closes the step it terminates and belongs to that step's span. An
// unterminated trailing region still forms a step. The answer span covers
// tokens strictly after ANSWER_MARK up to (excluding) EOS; without an
// ANSWER_MARK the whole response is segmented as steps and the answer span
// is absent. Tokens past the first EOS are ignored.
Segmentation segment(std::span<const int> tokens, const Vocab& vocab);
void segment_rollout(Rollout& rollout, const Vocab& vocab);

// Labels one step against per-instance evidence.
class VerifierBackend {
public:
    virtual ~VerifierBackend() = default;
    virtual StepLabel label(std::span<const int> step_tokens,
                            std::span<const Fact> evidence) const = 0;
    virtual bool deterministic() const { return true; }
};

// Exact rule-based entailment. A step whose content (ignoring a trailing
// PERIOD) is exactly [entity, relation, entity] = (e, r, x) is entailed when
// (e, r, x) is in the evidence and contradicted when some (e, r, y) with
// y != x is; every other step is neutral.
StepLabel oracle_label(std::span<const int> step_tokens, std::span<const Fact> evidence,
                       const Vocab& vocab);

class OracleVerifier final : public VerifierBackend {
public:
    explicit OracleVerifier(const Vocab& vocab) : vocab_(vocab) {}
    StepLabel label(std::span<const int> step_tokens,
                    std::span<const Fact> evidence) const override {
        return oracle_label(step_tokens, evidence, vocab_);
    }

private:
    Vocab vocab_;
};

// Replays externally computed labels keyed by the exact step token sequence
// (including a trailing PERIOD when present). Missing keys label neutral and
// are counted.
class FixtureVerifier final : public VerifierBackend {
public:
    // JSONL lines {"step": [token ids], "label": -1|0|1}; duplicate step
    // keys are a load error.
    static FixtureVerifier load(const std::string& path);
    static FixtureVerifier from_table(std::map<std::vector<int>, StepLabel> table);

    StepLabel label(std::span<const int> step_tokens,
                    std::span<const Fact> evidence) const override;
    long misses() const { return misses_; }

private:
    FixtureVerifier() = default;
    std::map<std::vector<int>, StepLabel> table_;
    mutable long misses_ = 0;
};

// One label per step span, in order.
std::vector<StepLabel> label_rollout(const Rollout& rollout, const QAInstance& instance,
                                     const VerifierBackend& backend);

}  // namespace fspo
