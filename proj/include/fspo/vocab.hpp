#pragma once

#include <cstdint>
#include <string>

#include "fspo/common.hpp"

namespace fspo {

// Half-open token id interval [lo, hi).
struct TokenRange {
    int lo = 0;
    int hi = 0;

    bool contains(int t) const { return t >= lo && t < hi; }
    int size() const { return hi - lo; }
};

// Token id layout for the synthetic generation MDP. The four special ids
// occupy 0..3; entity, relation and filler ranges partition the rest.
struct Vocab {
    int size = 0;
    int bos = 0;
    int period = 1;
    int answer_mark = 2;
    int eos = 3;
    TokenRange entities;
    TokenRange relations;
    TokenRange fillers;

    static Vocab make(int n_entities, int n_relations, int n_fillers);

    bool is_entity(int t) const { return entities.contains(t); }
    bool is_relation(int t) const { return relations.contains(t); }
    bool is_filler(int t) const { return fillers.contains(t); }
    bool is_special(int t) const {
        return t == bos || t == period || t == answer_mark || t == eos;
    }

    // Throws ConfigError if the special ids collide, fall outside [0,size),
    // or the ranges fail to partition the non-special ids.
    void validate() const;

    // Stable fingerprint of the layout, stored in policy checkpoints.
    uint64_t hash() const;
};

}  // namespace fspo
