#include "fspo/vocab.hpp"

#include <array>
#include <set>

namespace fspo {

Vocab Vocab::make(int n_entities, int n_relations, int n_fillers) {
    if (n_entities < 0 || n_relations < 0 || n_fillers < 0) {
        throw ConfigError("vocab ranges must be non-negative");
    }
    Vocab v;
    v.entities = {4, 4 + n_entities};
    v.relations = {v.entities.hi, v.entities.hi + n_relations};
    v.fillers = {v.relations.hi, v.relations.hi + n_fillers};
    v.size = v.fillers.hi;
    v.validate();
    return v;
}

void Vocab::validate() const {
    const std::array<int, 4> specials{bos, period, answer_mark, eos};
    std::set<int> uniq(specials.begin(), specials.end());
    if (uniq.size() != specials.size()) {
        throw ConfigError("vocab special ids must be distinct");
    }
    for (int s : specials) {
        if (s < 0 || s >= size) throw ConfigError("vocab special id outside [0,size)");
    }
    for (const TokenRange* r : {&entities, &relations, &fillers}) {
        if (r->lo > r->hi) throw ConfigError("vocab range has lo > hi");
        if (r->lo < 0 || r->hi > size) throw ConfigError("vocab range outside [0,size)");
    }
    // Ranges must cover every non-special id exactly once.
    for (int t = 0; t < size; ++t) {
        const int hits = int(is_entity(t)) + int(is_relation(t)) + int(is_filler(t));
        if (is_special(t)) {
            if (hits != 0) throw ConfigError("vocab range overlaps a special id");
        } else if (hits != 1) {
            throw ConfigError("vocab ranges do not partition non-special ids");
        }
    }
}

uint64_t Vocab::hash() const {
    std::string desc = std::to_string(size) + "|" + std::to_string(bos) + "," +
                       std::to_string(period) + "," + std::to_string(answer_mark) + "," +
                       std::to_string(eos) + "|" + std::to_string(entities.lo) + ":" +
                       std::to_string(entities.hi) + "|" + std::to_string(relations.lo) + ":" +
                       std::to_string(relations.hi) + "|" + std::to_string(fillers.lo) + ":" +
                       std::to_string(fillers.hi);
    return fnv1a(desc);
}

}  // namespace fspo
