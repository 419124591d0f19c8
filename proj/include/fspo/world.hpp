#pragma once

#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "fspo/vocab.hpp"

namespace fspo {

// One (subject, relation, object) triple. Relations are functional: a world
// never holds two facts with the same (subject, relation).
struct Fact {
    int subject = 0;
    int relation = 0;
    int object = 0;

    auto operator<=>(const Fact&) const = default;
};

struct FactWorld {
    Vocab vocab;
    uint64_t seed = 0;
    std::vector<Fact> facts;

    bool has(const Fact& f) const;
    // The unique object for (subject, relation), if any.
    std::optional<int> object_of(int subject, int relation) const;
};

// One training/eval example. `evidence` holds the chain facts plus
// distractors; the verifier only ever sees this subset, not the whole world.
struct QAInstance {
    int id = 0;
    std::vector<int> prompt;       // [e0, r1, ..., r_hops]
    std::vector<int> gold_answer;  // single token for generated data
    std::vector<Fact> evidence;
    int hops = 1;
};

// Deterministic world sampling. Facts are drawn without (subject, relation)
// repetition, so functionality holds by construction.
// Throws ConfigError when n_facts > n_entities * n_relations.
FactWorld generate_world(uint64_t seed, int n_entities, int n_relations, int n_facts,
                         int n_fillers = 2);

// Builds one instance around a uniformly chosen chain of `hops` facts.
// Evidence = chain plus n_distractors other facts. Throws GenerationError if
// the world has no chain of the requested length or too few distractors.
QAInstance make_instance(const FactWorld& world, int hops, int n_distractors, uint64_t seed,
                         int id = 0);

// `count` instances with ids 0..count-1 and per-instance derived seeds.
std::vector<QAInstance> make_dataset(const FactWorld& world, int count, int hops,
                                     int n_distractors, uint64_t seed);

// ---- persistence ----

void save_world(const FactWorld& world, const std::string& path);
FactWorld load_world(const std::string& path);

// Optional per-instance algorithm tags ride alongside the instances; empty
// string means "untagged". `seed` records the sampling seed the set was
// generated with (0 for handcrafted sets).
void save_instances(const std::vector<QAInstance>& instances, const std::string& path,
                    const std::unordered_map<int, std::string>& algo_tags = {},
                    uint64_t seed = 0);
struct InstanceFile {
    std::vector<QAInstance> instances;
    std::unordered_map<int, std::string> algo_tags;
    uint64_t seed = 0;
};
InstanceFile load_instances(const std::string& path);

// ---- external ingestion ----

struct LoadReport {
    int loaded = 0;
    int skipped = 0;
    std::map<std::string, int> skip_reasons;
};

// Reads JSONL records {"question": str, "answer": str, "evidence": [str]}.
// Surface tokens are whitespace-split and translated through `mapping`;
// evidence lines must map to (entity, relation, entity) triples and contain
// a chain from the question tokens to the answer. Records that fail any of
// these are skipped and counted; malformed JSON raises ParseError with the
// line number.
std::pair<std::vector<QAInstance>, LoadReport> load_jsonl(
    const std::string& path, const std::unordered_map<std::string, int>& mapping,
    const Vocab& vocab);

std::unordered_map<std::string, int> load_token_mapping(const std::string& path);

}  // namespace fspo
