#include "fspo/verify.hpp"

#include <fstream>

#include <json.hpp>

#include "fspo/common.hpp"

namespace fspo {

using nlohmann::json;

Segmentation segment(std::span<const int> tokens, const Vocab& vocab) {
    Segmentation seg;

    int end = static_cast<int>(tokens.size());
    for (int i = 0; i < static_cast<int>(tokens.size()); ++i) {
        if (tokens[static_cast<size_t>(i)] == vocab.eos) {
            end = i;
            break;
        }
    }

    int mark = -1;
    for (int i = 0; i < end; ++i) {
        if (tokens[static_cast<size_t>(i)] == vocab.answer_mark) {
            mark = i;
            break;
        }
    }

    const int step_region_end = mark >= 0 ? mark : end;
    int step_begin = 0;
    for (int i = 0; i < step_region_end; ++i) {
        if (tokens[static_cast<size_t>(i)] == vocab.period) {
            seg.steps.push_back({step_begin, i + 1});  // PERIOD belongs to its step
            step_begin = i + 1;
        }
    }
    if (step_begin < step_region_end) {
        seg.steps.push_back({step_begin, step_region_end});  // unterminated tail
    }

    if (mark >= 0) {
        seg.answer = Span{mark + 1, end};
    }
    return seg;
}

void segment_rollout(Rollout& rollout, const Vocab& vocab) {
    Segmentation seg = segment(rollout.tokens, vocab);
    rollout.steps = std::move(seg.steps);
    rollout.answer = seg.answer;
}

StepLabel oracle_label(std::span<const int> step_tokens, std::span<const Fact> evidence,
                       const Vocab& vocab) {
    std::span<const int> content = step_tokens;
    if (!content.empty() && content.back() == vocab.period) {
        content = content.first(content.size() - 1);
    }
    if (content.size() != 3) return StepLabel::neutral;
    const int subject = content[0], relation = content[1], object = content[2];
    if (!vocab.is_entity(subject) || !vocab.is_relation(relation) || !vocab.is_entity(object)) {
        return StepLabel::neutral;
    }
    for (const Fact& f : evidence) {
        if (f.subject != subject || f.relation != relation) continue;
        return f.object == object ? StepLabel::entailed : StepLabel::contradicted;
    }
    return StepLabel::neutral;
}

FixtureVerifier FixtureVerifier::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open " + path);
    FixtureVerifier v;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json rec;
        try {
            rec = json::parse(line);
        } catch (const json::exception& e) {
            throw ParseError(std::string("invalid JSON: ") + e.what(), line_no);
        }
        if (!rec.is_object() || !rec.contains("step") || !rec.contains("label")) {
            throw ParseError("fixture record must be {step, label}", line_no);
        }
        const int raw = rec.at("label").get<int>();
        if (raw < -1 || raw > 1) throw ParseError("label must be -1, 0 or 1", line_no);
        auto key = rec.at("step").get<std::vector<int>>();
        if (!v.table_.emplace(std::move(key), static_cast<StepLabel>(raw)).second) {
            throw ParseError("duplicate step key in fixture", line_no);
        }
    }
    return v;
}

FixtureVerifier FixtureVerifier::from_table(std::map<std::vector<int>, StepLabel> table) {
    FixtureVerifier v;
    v.table_ = std::move(table);
    return v;
}

StepLabel FixtureVerifier::label(std::span<const int> step_tokens,
                                 std::span<const Fact>) const {
    const std::vector<int> key(step_tokens.begin(), step_tokens.end());
    auto it = table_.find(key);
    if (it == table_.end()) {
        ++misses_;
        return StepLabel::neutral;
    }
    return it->second;
}

std::vector<StepLabel> label_rollout(const Rollout& rollout, const QAInstance& instance,
                                     const VerifierBackend& backend) {
    std::vector<StepLabel> labels;
    labels.reserve(rollout.steps.size());
    for (const Span& s : rollout.steps) {
        const std::span<const int> step(rollout.tokens.data() + s.begin,
                                        static_cast<size_t>(s.size()));
        labels.push_back(backend.label(step, instance.evidence));
    }
    return labels;
}

}  // namespace fspo
