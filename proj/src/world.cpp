#include "fspo/world.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace fspo {

using nlohmann::json;

bool FactWorld::has(const Fact& f) const {
    return std::find(facts.begin(), facts.end(), f) != facts.end();
}

std::optional<int> FactWorld::object_of(int subject, int relation) const {
    for (const Fact& f : facts) {
        if (f.subject == subject && f.relation == relation) return f.object;
    }
    return std::nullopt;
}

FactWorld generate_world(uint64_t seed, int n_entities, int n_relations, int n_facts,
                         int n_fillers) {
    if (n_entities < 1 || n_relations < 1) {
        throw ConfigError("generate_world: need at least one entity and one relation");
    }
    if (n_facts < 0) throw ConfigError("generate_world: n_facts must be non-negative");
    const long long max_facts = static_cast<long long>(n_entities) * n_relations;
    if (n_facts > max_facts) {
        throw ConfigError("generate_world: n_facts (" + std::to_string(n_facts) +
                          ") exceeds n_entities*n_relations (" + std::to_string(max_facts) + ")");
    }

    FactWorld world;
    world.vocab = Vocab::make(n_entities, n_relations, n_fillers);
    world.seed = seed;

    // Every (subject, relation) slot at most once keeps relations functional.
    std::vector<std::pair<int, int>> slots;
    slots.reserve(static_cast<size_t>(max_facts));
    for (int e = world.vocab.entities.lo; e < world.vocab.entities.hi; ++e) {
        for (int r = world.vocab.relations.lo; r < world.vocab.relations.hi; ++r) {
            slots.emplace_back(e, r);
        }
    }
    RngStream rng(seed);
    for (size_t i = slots.size(); i > 1; --i) {
        std::swap(slots[i - 1], slots[rng.next_u64() % i]);
    }
    world.facts.reserve(static_cast<size_t>(n_facts));
    for (int i = 0; i < n_facts; ++i) {
        const auto [e, r] = slots[static_cast<size_t>(i)];
        const int obj = world.vocab.entities.lo +
                        static_cast<int>(rng.next_u64() % world.vocab.entities.size());
        world.facts.push_back({e, r, obj});
    }
    return world;
}

namespace {

using Chain = std::vector<Fact>;

void extend_chains(const FactWorld& world, Chain& current, int hops, std::vector<Chain>& out) {
    if (static_cast<int>(current.size()) == hops) {
        out.push_back(current);
        return;
    }
    const int from = current.empty() ? -1 : current.back().object;
    for (const Fact& f : world.facts) {
        if (!current.empty() && f.subject != from) continue;
        current.push_back(f);
        extend_chains(world, current, hops, out);
        current.pop_back();
    }
}

}  // namespace

QAInstance make_instance(const FactWorld& world, int hops, int n_distractors, uint64_t seed,
                         int id) {
    if (hops < 1) throw ConfigError("make_instance: hops must be >= 1");
    if (n_distractors < 0) throw ConfigError("make_instance: n_distractors must be >= 0");

    std::vector<Chain> chains;
    Chain scratch;
    extend_chains(world, scratch, hops, chains);
    if (chains.empty()) {
        throw GenerationError("make_instance: world has no chain of length " +
                              std::to_string(hops));
    }

    RngStream rng(seed);
    const Chain& chain = chains[rng.next_u64() % chains.size()];

    std::vector<Fact> others;
    for (const Fact& f : world.facts) {
        if (std::find(chain.begin(), chain.end(), f) == chain.end()) others.push_back(f);
    }
    if (static_cast<int>(others.size()) < n_distractors) {
        throw GenerationError("make_instance: requested " + std::to_string(n_distractors) +
                              " distractors but only " + std::to_string(others.size()) +
                              " non-chain facts exist");
    }
    for (size_t i = others.size(); i > 1; --i) {
        std::swap(others[i - 1], others[rng.next_u64() % i]);
    }

    QAInstance inst;
    inst.id = id;
    inst.hops = hops;
    inst.prompt.push_back(chain.front().subject);
    for (const Fact& f : chain) inst.prompt.push_back(f.relation);
    inst.gold_answer = {chain.back().object};
    inst.evidence = chain;
    inst.evidence.insert(inst.evidence.end(), others.begin(),
                         others.begin() + n_distractors);
    return inst;
}

std::vector<QAInstance> make_dataset(const FactWorld& world, int count, int hops,
                                     int n_distractors, uint64_t seed) {
    std::vector<QAInstance> out;
    out.reserve(static_cast<size_t>(count));
    for (int i = 0; i < count; ++i) {
        out.push_back(make_instance(world, hops, n_distractors,
                                    derive_seed(seed, static_cast<uint64_t>(i)), i));
    }
    return out;
}

// ---- persistence ----

namespace {

json vocab_to_json(const Vocab& v) {
    return json{{"size", v.size},
                {"bos", v.bos},
                {"period", v.period},
                {"answer_mark", v.answer_mark},
                {"eos", v.eos},
                {"entities", {v.entities.lo, v.entities.hi}},
                {"relations", {v.relations.lo, v.relations.hi}},
                {"fillers", {v.fillers.lo, v.fillers.hi}}};
}

Vocab vocab_from_json(const json& j) {
    Vocab v;
    v.size = j.at("size").get<int>();
    v.bos = j.at("bos").get<int>();
    v.period = j.at("period").get<int>();
    v.answer_mark = j.at("answer_mark").get<int>();
    v.eos = j.at("eos").get<int>();
    v.entities = {j.at("entities").at(0).get<int>(), j.at("entities").at(1).get<int>()};
    v.relations = {j.at("relations").at(0).get<int>(), j.at("relations").at(1).get<int>()};
    v.fillers = {j.at("fillers").at(0).get<int>(), j.at("fillers").at(1).get<int>()};
    v.validate();
    return v;
}

json fact_to_json(const Fact& f) { return json::array({f.subject, f.relation, f.object}); }

Fact fact_from_json(const json& j) {
    if (!j.is_array() || j.size() != 3) throw ParseError("fact must be a [s,r,o] triple");
    return Fact{j.at(0).get<int>(), j.at(1).get<int>(), j.at(2).get<int>()};
}

json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ParseError(path + ": " + e.what());
    }
    return j;
}

void write_json_file(const json& j, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write " + path);
    out << j.dump(2) << "\n";
}

}  // namespace

void save_world(const FactWorld& world, const std::string& path) {
    json j{{"format", "fspo-world-v1"},
           {"seed", world.seed},
           {"vocab", vocab_to_json(world.vocab)},
           {"facts", json::array()}};
    for (const Fact& f : world.facts) j["facts"].push_back(fact_to_json(f));
    write_json_file(j, path);
}

FactWorld load_world(const std::string& path) {
    const json j = read_json_file(path);
    if (j.value("format", "") != "fspo-world-v1") {
        throw ParseError(path + ": unexpected world format tag");
    }
    FactWorld world;
    world.seed = j.at("seed").get<uint64_t>();
    world.vocab = vocab_from_json(j.at("vocab"));
    std::set<std::pair<int, int>> seen;
    for (const json& fj : j.at("facts")) {
        const Fact f = fact_from_json(fj);
        if (!world.vocab.is_entity(f.subject) || !world.vocab.is_relation(f.relation) ||
            !world.vocab.is_entity(f.object)) {
            throw ParseError(path + ": fact components outside vocab ranges");
        }
        if (!seen.insert({f.subject, f.relation}).second) {
            throw ParseError(path + ": duplicate (subject, relation) violates functionality");
        }
        world.facts.push_back(f);
    }
    return world;
}

void save_instances(const std::vector<QAInstance>& instances, const std::string& path,
                    const std::unordered_map<int, std::string>& algo_tags, uint64_t seed) {
    json arr = json::array();
    for (const QAInstance& inst : instances) {
        json ij{{"id", inst.id},
                {"prompt", inst.prompt},
                {"gold_answer", inst.gold_answer},
                {"hops", inst.hops},
                {"evidence", json::array()}};
        for (const Fact& f : inst.evidence) ij["evidence"].push_back(fact_to_json(f));
        auto it = algo_tags.find(inst.id);
        if (it != algo_tags.end() && !it->second.empty()) ij["algo"] = it->second;
        arr.push_back(std::move(ij));
    }
    write_json_file(json{{"format", "fspo-instances-v1"}, {"seed", seed}, {"instances", arr}},
                    path);
}

InstanceFile load_instances(const std::string& path) {
    const json j = read_json_file(path);
    if (j.value("format", "") != "fspo-instances-v1") {
        throw ParseError(path + ": unexpected instances format tag");
    }
    InstanceFile out;
    out.seed = j.value("seed", uint64_t{0});
    std::set<int> ids;
    for (const json& ij : j.at("instances")) {
        QAInstance inst;
        inst.id = ij.at("id").get<int>();
        inst.prompt = ij.at("prompt").get<std::vector<int>>();
        inst.gold_answer = ij.at("gold_answer").get<std::vector<int>>();
        inst.hops = ij.at("hops").get<int>();
        for (const json& fj : ij.at("evidence")) inst.evidence.push_back(fact_from_json(fj));
        if (!ids.insert(inst.id).second) {
            throw ParseError(path + ": duplicate instance id " + std::to_string(inst.id));
        }
        if (inst.prompt.empty() || inst.gold_answer.empty()) {
            throw ParseError(path + ": instance " + std::to_string(inst.id) +
                             " needs a prompt and a gold answer");
        }
        if (ij.contains("algo")) out.algo_tags[inst.id] = ij.at("algo").get<std::string>();
        out.instances.push_back(std::move(inst));
    }
    return out;
}

// ---- external ingestion ----

std::unordered_map<std::string, int> load_token_mapping(const std::string& path) {
    const json j = read_json_file(path);
    if (!j.is_object()) throw ParseError(path + ": token mapping must be a JSON object");
    std::unordered_map<std::string, int> mapping;
    for (auto it = j.begin(); it != j.end(); ++it) {
        mapping[it.key()] = it.value().get<int>();
    }
    return mapping;
}

namespace {

std::vector<std::string> split_ws(const std::string& s) {
    std::istringstream in(s);
    std::vector<std::string> out;
    std::string tok;
    while (in >> tok) out.push_back(tok);
    return out;
}

// Maps every surface token or reports the offender.
bool map_tokens(const std::vector<std::string>& surface,
                const std::unordered_map<std::string, int>& mapping, std::vector<int>& out) {
    out.clear();
    for (const std::string& s : surface) {
        auto it = mapping.find(s);
        if (it == mapping.end()) return false;
        out.push_back(it->second);
    }
    return true;
}

}  // namespace

std::pair<std::vector<QAInstance>, LoadReport> load_jsonl(
    const std::string& path, const std::unordered_map<std::string, int>& mapping,
    const Vocab& vocab) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open " + path);

    std::vector<QAInstance> instances;
    LoadReport report;
    auto skip = [&report](const std::string& reason) {
        ++report.skipped;
        ++report.skip_reasons[reason];
    };

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
        if (!rec.is_object() || !rec.contains("question") || !rec.contains("answer") ||
            !rec.contains("evidence") || !rec.at("question").is_string() ||
            !rec.at("answer").is_string() || !rec.at("evidence").is_array()) {
            throw ParseError("record must be {question, answer, evidence[]}", line_no);
        }

        std::vector<int> prompt;
        if (!map_tokens(split_ws(rec.at("question").get<std::string>()), mapping, prompt)) {
            skip("unmapped_token");
            continue;
        }
        std::vector<int> answer;
        if (!map_tokens(split_ws(rec.at("answer").get<std::string>()), mapping, answer)) {
            skip("unmapped_token");
            continue;
        }
        if (answer.size() != 1) {
            skip("answer_not_single_token");
            continue;
        }
        bool evidence_ok = true;
        std::vector<Fact> evidence;
        for (const json& ev : rec.at("evidence")) {
            if (!ev.is_string()) throw ParseError("evidence entries must be strings", line_no);
            std::vector<int> ids;
            if (!map_tokens(split_ws(ev.get<std::string>()), mapping, ids)) {
                evidence_ok = false;
                skip("unmapped_token");
                break;
            }
            if (ids.size() != 3) {
                evidence_ok = false;
                skip("evidence_not_triple");
                break;
            }
            evidence.push_back({ids[0], ids[1], ids[2]});
        }
        if (!evidence_ok) continue;

        // Role checks against the vocab layout.
        bool roles_ok = prompt.size() >= 2 && vocab.is_entity(prompt[0]) &&
                        vocab.is_entity(answer[0]);
        for (size_t i = 1; roles_ok && i < prompt.size(); ++i) {
            roles_ok = vocab.is_relation(prompt[static_cast<int>(i)]);
        }
        for (const Fact& f : evidence) {
            roles_ok = roles_ok && vocab.is_entity(f.subject) && vocab.is_relation(f.relation) &&
                       vocab.is_entity(f.object);
        }
        if (!roles_ok) {
            skip("bad_token_role");
            continue;
        }

        // The evidence must contain an unambiguous chain from the prompt to
        // the answer, mirroring the invariants of generated instances.
        int current = prompt[0];
        bool chain_ok = true;
        bool ambiguous = false;
        for (size_t i = 1; i < prompt.size() && chain_ok; ++i) {
            const int rel = prompt[i];
            std::set<int> objects;
            for (const Fact& f : evidence) {
                if (f.subject == current && f.relation == rel) objects.insert(f.object);
            }
            if (objects.empty()) {
                chain_ok = false;
            } else if (objects.size() > 1) {
                chain_ok = false;
                ambiguous = true;
            } else {
                current = *objects.begin();
            }
        }
        if (!chain_ok) {
            skip(ambiguous ? "conflicting_evidence" : "no_chain");
            continue;
        }
        if (current != answer[0]) {
            skip("no_chain");
            continue;
        }

        QAInstance inst;
        inst.id = static_cast<int>(instances.size());
        inst.prompt = std::move(prompt);
        inst.gold_answer = std::move(answer);
        inst.evidence = std::move(evidence);
        inst.hops = static_cast<int>(inst.prompt.size()) - 1;
        instances.push_back(std::move(inst));
        ++report.loaded;
    }
    return {instances, report};
}

}  // namespace fspo
