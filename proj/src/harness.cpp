#include "fspo/harness.hpp"

#include <charconv>
#include <chrono>
#include <cmath>
#include <map>
#include <sstream>

namespace fspo {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

void check_keys(const json& j, std::initializer_list<const char*> allowed,
                const std::string& where) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool known = false;
        for (const char* k : allowed) {
            if (it.key() == k) {
                known = true;
                break;
            }
        }
        if (!known) throw ConfigError("unknown key '" + it.key() + "' in " + where);
    }
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

}  // namespace

ExperimentConfig experiment_config_from_json(const json& j) {
    check_keys(j,
               {"group_size", "batch_size", "clip_epsilon", "kl_coef", "learning_rate",
                "max_response_length", "iterations", "seed", "algorithm", "reward_mode",
                "context_order", "temperature", "checkpoint_every", "verifier", "data",
                "dump_rollouts", "initial_checkpoint"},
               "config");
    ExperimentConfig c;
    TrainConfig& t = c.train;
    t.group_size = j.value("group_size", t.group_size);
    t.batch_size = j.value("batch_size", t.batch_size);
    t.clip_epsilon = j.value("clip_epsilon", t.clip_epsilon);
    t.kl_coef = j.value("kl_coef", t.kl_coef);
    t.learning_rate = j.value("learning_rate", t.learning_rate);
    t.max_response_length = j.value("max_response_length", t.max_response_length);
    t.iterations = j.value("iterations", t.iterations);
    t.seed = j.value("seed", t.seed);
    if (j.contains("algorithm")) t.algorithm = parse_algorithm(j.at("algorithm"));
    if (j.contains("reward_mode")) t.reward_mode = parse_reward_mode(j.at("reward_mode"));
    t.context_order = j.value("context_order", t.context_order);
    t.temperature = j.value("temperature", t.temperature);
    t.checkpoint_every = j.value("checkpoint_every", t.checkpoint_every);
    t.validate();

    if (j.contains("verifier")) {
        const json& v = j.at("verifier");
        check_keys(v, {"type", "path"}, "config.verifier");
        c.verifier_type = v.value("type", "oracle");
        c.fixture_path = v.value("path", "");
        if (c.verifier_type != "oracle" && c.verifier_type != "fixture") {
            throw ConfigError("verifier.type must be 'oracle' or 'fixture'");
        }
        if (c.verifier_type == "fixture" && c.fixture_path.empty()) {
            throw ConfigError("verifier.type 'fixture' requires verifier.path");
        }
    }

    if (!j.contains("data")) throw ConfigError("config requires a 'data' section");
    const json& d = j.at("data");
    check_keys(d, {"world", "instances", "generate"}, "config.data");
    if (d.contains("generate")) {
        if (d.contains("world") || d.contains("instances")) {
            throw ConfigError("config.data: use either file paths or 'generate', not both");
        }
        const json& g = d.at("generate");
        check_keys(g,
                   {"world_seed", "entities", "relations", "facts", "fillers", "instances",
                    "hops", "distractors", "instance_seed"},
                   "config.data.generate");
        c.generate = true;
        c.gen.world_seed = g.value("world_seed", c.gen.world_seed);
        c.gen.entities = g.value("entities", c.gen.entities);
        c.gen.relations = g.value("relations", c.gen.relations);
        c.gen.facts = g.value("facts", c.gen.facts);
        c.gen.fillers = g.value("fillers", c.gen.fillers);
        c.gen.instances = g.value("instances", c.gen.instances);
        c.gen.hops = g.value("hops", c.gen.hops);
        c.gen.distractors = g.value("distractors", c.gen.distractors);
        c.gen.instance_seed = g.value("instance_seed", c.gen.instance_seed);
    } else {
        if (!d.contains("world") || !d.contains("instances")) {
            throw ConfigError("config.data requires 'world' and 'instances' paths");
        }
        c.world_path = d.at("world").get<std::string>();
        c.instances_path = d.at("instances").get<std::string>();
    }

    c.dump_rollouts = j.value("dump_rollouts", false);
    c.initial_checkpoint = j.value("initial_checkpoint", "");
    return c;
}

ExperimentConfig load_experiment_config(const std::string& path) {
    return experiment_config_from_json(read_json_file(path));
}

Dataset build_dataset(const ExperimentConfig& config) {
    Dataset dataset;
    if (config.generate) {
        dataset.world = generate_world(config.gen.world_seed, config.gen.entities,
                                       config.gen.relations, config.gen.facts,
                                       config.gen.fillers);
        dataset.instances = make_dataset(dataset.world, config.gen.instances, config.gen.hops,
                                         config.gen.distractors, config.gen.instance_seed);
    } else {
        dataset.world = load_world(config.world_path);
        InstanceFile file = load_instances(config.instances_path);
        dataset.instances = std::move(file.instances);
        dataset.algo_tags = std::move(file.algo_tags);
    }
    return dataset;
}

std::unique_ptr<VerifierBackend> build_verifier(const ExperimentConfig& config,
                                                const Vocab& vocab) {
    if (config.verifier_type == "fixture") {
        return std::make_unique<FixtureVerifier>(FixtureVerifier::load(config.fixture_path));
    }
    return std::make_unique<OracleVerifier>(vocab);
}

// ---- metrics ----

std::string format_double(double x) {
    char buf[40];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), x);
    if (ec != std::errc{}) return "nan";
    return std::string(buf, ptr);
}

std::string metrics_header() {
    return "iteration,wall_ms,mean_reward,answer_accuracy,contradiction_rate,entailed_rate,"
           "mean_entropy,grad_norm,mean_kl,algorithm,seed";
}

MetricsWriter::MetricsWriter(const std::string& path) : out_(path) {
    if (!out_) throw ConfigError("cannot write " + path);
    const std::string header = metrics_header();
    char hash[20];
    std::snprintf(hash, sizeof(hash), "%016llx",
                  static_cast<unsigned long long>(fnv1a(header)));
    out_ << "# fspo-metrics-v1 fnv1a=" << hash << "\n" << header << "\n";
}

void MetricsWriter::append(const MetricsRow& row) {
    out_ << row.iteration << ',' << format_double(row.wall_ms) << ','
         << format_double(row.stats.mean_reward) << ','
         << format_double(row.stats.answer_accuracy) << ','
         << format_double(row.stats.contradiction_rate) << ','
         << format_double(row.stats.entailed_rate) << ','
         << format_double(row.stats.mean_entropy) << ',' << format_double(row.stats.grad_norm)
         << ',' << format_double(row.stats.mean_kl) << ',' << row.algorithm << ',' << row.seed
         << "\n";
    out_.flush();
}

std::vector<std::string> metrics_lines_without_wall(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open " + path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') {
            lines.push_back(line);
            continue;
        }
        const size_t first = line.find(',');
        if (first == std::string::npos) {
            lines.push_back(line);
            continue;
        }
        const size_t second = line.find(',', first + 1);
        if (second == std::string::npos) {
            lines.push_back(line);
            continue;
        }
        lines.push_back(line.substr(0, first) + line.substr(second));
    }
    return lines;
}

// ---- rollout dumps ----

void append_rollout_dump(std::ostream& out, int iteration, int group_index,
                         const GroupData& group) {
    for (size_t i = 0; i < group.rollouts.size(); ++i) {
        const Rollout& r = group.rollouts[i];
        json steps = json::array();
        for (const Span& s : r.steps) steps.push_back({s.begin, s.end});
        json labels = json::array();
        for (StepLabel l : group.labels[i]) labels.push_back(label_value(l));
        json line{{"iteration", iteration},
                  {"group", group_index},
                  {"instance", r.instance_id},
                  {"tokens", r.tokens},
                  {"old_logprobs", r.old_logprobs},
                  {"truncated", r.truncated},
                  {"steps", steps},
                  {"labels", labels},
                  {"answer_reward", group.breakdowns[i].answer},
                  {"factuality_mean", group.breakdowns[i].factuality_mean},
                  {"final_reward", group.breakdowns[i].final},
                  {"train_reward", group.train_rewards[i]},
                  {"advantage", group.rollout_advantages[i]},
                  {"token_advantages", group.token_advantages[i]}};
        if (r.answer.has_value()) {
            line["answer"] = {r.answer->begin, r.answer->end};
        } else {
            line["answer"] = nullptr;
        }
        out << line.dump() << "\n";
    }
}

ReplayReport replay_dump(const std::string& dump_path, const Dataset& dataset,
                         const VerifierBackend& verifier, Algorithm algorithm,
                         RewardMode reward_mode) {
    std::ifstream in(dump_path);
    if (!in) throw ParseError("cannot open " + dump_path);

    auto instance_by_id = [&dataset](int id) -> const QAInstance& {
        for (const QAInstance& inst : dataset.instances) {
            if (inst.id == id) return inst;
        }
        throw ContractViolation("replay: unknown instance id " + std::to_string(id));
    };

    struct Line {
        json raw;
        Rollout rollout;
        int group = 0;
        double train_reward = 0.0;
    };
    // iteration -> lines in file order
    std::map<int, std::vector<Line>> by_iteration;

    ReplayReport report;
    std::string text;
    int line_no = 0;
    while (std::getline(in, text)) {
        ++line_no;
        if (text.empty()) continue;
        json j;
        try {
            j = json::parse(text);
        } catch (const json::exception& e) {
            throw ParseError(std::string("invalid dump JSON: ") + e.what(), line_no);
        }
        Line line;
        line.raw = j;
        line.rollout.instance_id = j.at("instance").get<int>();
        line.rollout.tokens = j.at("tokens").get<std::vector<int>>();
        line.rollout.old_logprobs = j.at("old_logprobs").get<std::vector<double>>();
        line.rollout.truncated = j.at("truncated").get<bool>();
        line.group = j.at("group").get<int>();
        by_iteration[j.at("iteration").get<int>()].push_back(std::move(line));
        ++report.lines;
    }

    for (auto& [iteration, lines] : by_iteration) {
        // Re-derive everything per rollout.
        std::vector<std::vector<StepLabel>> labels(lines.size());
        std::vector<RewardBreakdown> breakdowns(lines.size());
        for (size_t i = 0; i < lines.size(); ++i) {
            Rollout& r = lines[i].rollout;
            const QAInstance& inst = instance_by_id(r.instance_id);
            segment_rollout(r, dataset.world.vocab);
            labels[i] = label_rollout(r, inst, verifier);
            breakdowns[i] = score_rollout(r, inst, labels[i]);
            lines[i].train_reward = reward_mode == RewardMode::answer_only
                                        ? breakdowns[i].answer
                                        : breakdowns[i].final;
        }

        // Advantages: group-normalized ones use the logged group index.
        std::vector<double> advantages(lines.size(), 0.0);
        if (algorithm == Algorithm::reinforce || algorithm == Algorithm::ppo) {
            for (size_t i = 0; i < lines.size(); ++i) advantages[i] = lines[i].train_reward;
        } else if (algorithm == Algorithm::reinforce_pp ||
                   algorithm == Algorithm::fspo_reinforce_pp) {
            std::vector<double> rewards;
            rewards.reserve(lines.size());
            for (const Line& l : lines) rewards.push_back(l.train_reward);
            advantages = batch_advantages(rewards);
        } else {
            size_t start = 0;
            while (start < lines.size()) {
                size_t end = start + 1;
                while (end < lines.size() && lines[end].group == lines[start].group) ++end;
                std::vector<double> rewards;
                for (size_t i = start; i < end; ++i) rewards.push_back(lines[i].train_reward);
                const GroupAdvantages ga = group_advantages(rewards);
                for (size_t i = start; i < end; ++i) advantages[i] = ga.a[i - start];
                start = end;
            }
        }

        ++report.groups;
        for (size_t i = 0; i < lines.size(); ++i) {
            const json& j = lines[i].raw;
            const Rollout& r = lines[i].rollout;
            long bad = 0;

            json steps = json::array();
            for (const Span& s : r.steps) steps.push_back({s.begin, s.end});
            if (j.at("steps") != steps) ++bad;
            json answer = nullptr;
            if (r.answer.has_value()) answer = {r.answer->begin, r.answer->end};
            if (j.at("answer") != answer) ++bad;
            json lab = json::array();
            for (StepLabel l : labels[i]) lab.push_back(label_value(l));
            if (j.at("labels") != lab) ++bad;
            if (j.at("answer_reward").get<double>() != breakdowns[i].answer) ++bad;
            if (j.at("factuality_mean").get<double>() != breakdowns[i].factuality_mean) ++bad;
            if (j.at("final_reward").get<double>() != breakdowns[i].final) ++bad;
            if (j.at("train_reward").get<double>() != lines[i].train_reward) ++bad;
            if (j.at("advantage").get<double>() != advantages[i]) ++bad;

            std::vector<double> token_adv;
            if (adjusts_tokens(algorithm)) {
                token_adv = adjust_token_advantages(advantages[i], r, labels[i]);
            } else {
                token_adv.assign(r.tokens.size(), advantages[i]);
            }
            if (j.at("token_advantages").get<std::vector<double>>() != token_adv) ++bad;

            report.mismatches += bad;
        }
    }
    return report;
}

// ---- experiment runners ----

TrainRunResult run_training(const ExperimentConfig& config, const std::string& out_dir,
                            const std::string& initial_checkpoint) {
    config.train.validate();
    fs::create_directories(out_dir);

    Dataset dataset = build_dataset(config);
    auto verifier = build_verifier(config, dataset.world.vocab);

    PolicyParams policy(dataset.world.vocab.size, config.train.context_order,
                        config.train.temperature);
    const std::string start_from =
        initial_checkpoint.empty() ? config.initial_checkpoint : initial_checkpoint;
    if (!start_from.empty()) {
        Checkpoint ckpt = load_checkpoint(start_from);
        if (ckpt.vocab_hash != 0 && ckpt.vocab_hash != dataset.world.vocab.hash()) {
            throw ConfigError("initial checkpoint was trained against a different vocab");
        }
        if (ckpt.params.vocab_size != dataset.world.vocab.size) {
            throw ConfigError("initial checkpoint vocab size mismatch");
        }
        if (ckpt.params.context_order != config.train.context_order) {
            throw ConfigError("initial checkpoint context_order differs from the config");
        }
        if (ckpt.params.temperature != config.train.temperature) {
            throw ConfigError("initial checkpoint temperature differs from the config");
        }
        policy = std::move(ckpt.params);
    }

    TrainRunResult result;
    result.metrics_path = (fs::path(out_dir) / "metrics.csv").string();
    result.checkpoint_path = (fs::path(out_dir) / "checkpoint.json").string();
    MetricsWriter metrics(result.metrics_path);

    std::ofstream dump;
    if (config.dump_rollouts) {
        result.dump_path = (fs::path(out_dir) / "rollouts.jsonl").string();
        dump.open(result.dump_path);
        if (!dump) throw ConfigError("cannot write " + result.dump_path);
    }

    auto last = std::chrono::steady_clock::now();
    int completed = 0;
    auto callback = [&](int iteration, const IterationData& data) {
        const auto now = std::chrono::steady_clock::now();
        const double wall_ms =
            std::chrono::duration<double, std::milli>(now - last).count();
        last = now;
        completed = iteration + 1;
        metrics.append({iteration, wall_ms, data.stats, algorithm_name(data.algorithm),
                        config.train.seed});
        if (dump.is_open()) {
            for (size_t g = 0; g < data.groups.size(); ++g) {
                append_rollout_dump(dump, iteration, static_cast<int>(g), data.groups[g]);
            }
        }
        if (config.train.checkpoint_every > 0 &&
            (iteration + 1) % config.train.checkpoint_every == 0) {
            char name[40];
            std::snprintf(name, sizeof(name), "checkpoint_%06d.json", iteration + 1);
            save_checkpoint(policy, (fs::path(out_dir) / name).string(),
                            dataset.world.vocab.hash());
        }
    };

    try {
        result.stats = train(policy, dataset, config.train, *verifier, callback);
    } catch (const std::exception& e) {
        // Diagnostic state dump: the policy as of the failed iteration plus
        // the abort context, then propagate.
        const std::string abort_ckpt = (fs::path(out_dir) / "abort_policy.json").string();
        save_checkpoint(policy, abort_ckpt, dataset.world.vocab.hash());
        write_json_report(json{{"error", e.what()},
                               {"iterations_completed", completed},
                               {"policy", abort_ckpt}},
                          (fs::path(out_dir) / "abort.json").string());
        throw;
    }
    save_checkpoint(policy, result.checkpoint_path, dataset.world.vocab.hash());
    return result;
}

std::vector<AblationArm> default_ablation_arms() {
    return {
        {"grpo_answer", Algorithm::grpo, RewardMode::answer_only},
        {"grpo_factuality", Algorithm::grpo, RewardMode::answer_plus_factuality},
        {"fspo", Algorithm::fspo, RewardMode::answer_plus_factuality},
        {"reinforce_pp", Algorithm::reinforce_pp, RewardMode::answer_only},
        {"fspo_reinforce_pp", Algorithm::fspo_reinforce_pp,
         RewardMode::answer_plus_factuality},
    };
}

AblationResult run_ablation(const ExperimentConfig& config, const std::string& out_dir) {
    fs::create_directories(out_dir);

    // Materialize the dataset once so every arm trains on identical files.
    Dataset dataset = build_dataset(config);
    const std::string world_path = (fs::path(out_dir) / "world.json").string();
    const std::string instances_path = (fs::path(out_dir) / "instances.json").string();
    save_world(dataset.world, world_path);
    save_instances(dataset.instances, instances_path, dataset.algo_tags);

    ExperimentConfig arm_config = config;
    arm_config.generate = false;
    arm_config.world_path = world_path;
    arm_config.instances_path = instances_path;

    AblationResult result;
    result.comparison_path = (fs::path(out_dir) / "comparison.csv").string();
    std::ofstream comparison(result.comparison_path);
    if (!comparison) throw ConfigError("cannot write " + result.comparison_path);
    comparison << "arm,iteration,mean_reward,answer_accuracy,contradiction_rate,entailed_rate,"
                  "mean_entropy,grad_norm,mean_kl,algorithm,seed\n";

    for (const AblationArm& arm : default_ablation_arms()) {
        arm_config.train.algorithm = arm.algorithm;
        arm_config.train.reward_mode = arm.reward_mode;
        TrainRunResult run =
            run_training(arm_config, (fs::path(out_dir) / arm.name).string());
        for (size_t i = 0; i < run.stats.size(); ++i) {
            const UpdateStats& s = run.stats[i];
            comparison << arm.name << ',' << i << ',' << format_double(s.mean_reward) << ','
                       << format_double(s.answer_accuracy) << ','
                       << format_double(s.contradiction_rate) << ','
                       << format_double(s.entailed_rate) << ','
                       << format_double(s.mean_entropy) << ',' << format_double(s.grad_norm)
                       << ',' << format_double(s.mean_kl) << ','
                       << algorithm_name(arm.algorithm) << ',' << arm_config.train.seed << "\n";
        }
        result.arms.emplace_back(arm.name, std::move(run));
    }
    return result;
}

EvalReport run_eval(const std::string& checkpoint_path, const std::string& world_path,
                    const std::string& instances_path, uint64_t seed,
                    const std::string& out_dir, const EvalOptions& options,
                    const VerifierBackend* verifier) {
    if (options.samples_per_instance < 2) {
        throw ConfigError("eval needs samples_per_instance >= 2 for group advantages");
    }
    fs::create_directories(out_dir);

    Checkpoint ckpt = load_checkpoint(checkpoint_path);
    Dataset dataset;
    dataset.world = load_world(world_path);
    InstanceFile file = load_instances(instances_path);
    dataset.instances = std::move(file.instances);
    if (ckpt.vocab_hash != 0 && ckpt.vocab_hash != dataset.world.vocab.hash()) {
        throw ConfigError("checkpoint was trained against a different vocab");
    }

    OracleVerifier oracle(dataset.world.vocab);
    const VerifierBackend& backend = verifier ? *verifier : oracle;

    EvalReport report;
    report.dump_path = (fs::path(out_dir) / "eval_rollouts.jsonl").string();
    std::ofstream dump(report.dump_path);
    if (!dump) throw ConfigError("cannot write " + report.dump_path);

    RngStream rng(seed);
    long n_steps = 0, n_contradicted = 0, n_entailed = 0;
    double answer_sum = 0.0, final_sum = 0.0;
    for (const QAInstance& inst : dataset.instances) {
        GroupData group;
        group.instance = &inst;
        for (int i = 0; i < options.samples_per_instance; ++i) {
            Rollout r = sample_rollout(ckpt.params, inst, options.max_response_length, rng,
                                       dataset.world.vocab.eos);
            segment_rollout(r, dataset.world.vocab);
            group.labels.push_back(label_rollout(r, inst, backend));
            group.breakdowns.push_back(score_rollout(r, inst, group.labels.back()));
            group.train_rewards.push_back(options.reward_mode == RewardMode::answer_only
                                              ? group.breakdowns.back().answer
                                              : group.breakdowns.back().final);
            group.rollouts.push_back(std::move(r));
        }
        group.rollout_advantages = group_advantages(group.train_rewards).a;
        for (size_t i = 0; i < group.rollouts.size(); ++i) {
            if (adjusts_tokens(options.algorithm)) {
                group.token_advantages.push_back(adjust_token_advantages(
                    group.rollout_advantages[i], group.rollouts[i], group.labels[i]));
            } else {
                group.token_advantages.push_back(std::vector<double>(
                    group.rollouts[i].tokens.size(), group.rollout_advantages[i]));
            }
        }
        append_rollout_dump(dump, report.instances, 0, group);

        ++report.instances;
        for (size_t i = 0; i < group.rollouts.size(); ++i) {
            ++report.rollouts;
            answer_sum += group.breakdowns[i].answer;
            final_sum += group.breakdowns[i].final;
            for (StepLabel l : group.labels[i]) {
                ++n_steps;
                if (l == StepLabel::contradicted) ++n_contradicted;
                if (l == StepLabel::entailed) ++n_entailed;
            }
        }
    }

    report.answer_accuracy = answer_sum / static_cast<double>(report.rollouts);
    report.mean_final_reward = final_sum / static_cast<double>(report.rollouts);
    report.contradiction_rate =
        n_steps == 0 ? 0.0 : static_cast<double>(n_contradicted) / static_cast<double>(n_steps);
    report.entailed_rate =
        n_steps == 0 ? 0.0 : static_cast<double>(n_entailed) / static_cast<double>(n_steps);

    json rj{{"instances", report.instances},
            {"rollouts", report.rollouts},
            {"answer_accuracy", report.answer_accuracy},
            {"contradiction_rate", report.contradiction_rate},
            {"entailed_rate", report.entailed_rate},
            {"mean_final_reward", report.mean_final_reward},
            {"seed", seed},
            {"checkpoint", checkpoint_path}};
    write_json_report(rj, (fs::path(out_dir) / "eval_report.json").string());
    return report;
}

PolicyParams make_base_policy(const Dataset& dataset, double format_bias, double slot_bias,
                              double answer_bias) {
    const Vocab& vocab = dataset.world.vocab;
    PolicyParams policy(vocab.size, /*context_order=*/2, /*temperature=*/1.0);

    for (const QAInstance& inst : dataset.instances) {
        if (inst.prompt.size() < 3) {
            throw ConfigError("make_base_policy: needs prompts of >= 3 tokens (hops >= 2)");
        }
        auto bump = [&policy](const StateKey& s, int token, double bias) {
            policy.row(s).logit[static_cast<size_t>(token)] += bias;
        };
        auto state_of = [&inst](int a, int b) {
            StateKey s;
            s.instance_id = inst.id;
            s.window = {a, b};
            return s;
        };

        // Restate the chain head: prompt tail -> e0 -> r1.
        const StateKey s0 = initial_state(inst, 2, /*bos_token=*/0);
        bump(s0, inst.prompt[0], format_bias);
        bump(advance(s0, inst.prompt[0]), inst.prompt[1], format_bias);

        for (int e = vocab.entities.lo; e < vocab.entities.hi; ++e) {
            for (int r = vocab.relations.lo; r < vocab.relations.hi; ++r) {
                // claim object slot: near-uniform over entities
                for (int obj = vocab.entities.lo; obj < vocab.entities.hi; ++obj) {
                    bump(state_of(e, r), obj, slot_bias);
                }
                bump(state_of(r, e), vocab.period, format_bias);
                bump(state_of(vocab.period, e), r, format_bias);
            }
            // after a step: either restate the last object or move to the answer
            bump(state_of(e, vocab.period), e, format_bias);
            bump(state_of(e, vocab.period), vocab.answer_mark, answer_bias);
            bump(state_of(vocab.answer_mark, e), vocab.eos, format_bias);
        }
        // answer slot
        for (int obj = vocab.entities.lo; obj < vocab.entities.hi; ++obj) {
            bump(state_of(vocab.period, vocab.answer_mark), obj, slot_bias);
        }
    }
    return policy;
}

// ---- theory reports ----

BanditFixture load_bandit_fixture(const std::string& path) {
    const json j = read_json_file(path);
    check_keys(j, {"vocab_size", "logits", "correct_token"}, "bandit fixture");
    BanditFixture fx;
    const int vocab_size = j.at("vocab_size").get<int>();
    const auto logits = j.at("logits").get<std::vector<double>>();
    if (static_cast<int>(logits.size()) != vocab_size) {
        throw ParseError(path + ": logits length must equal vocab_size");
    }
    fx.correct_token = j.at("correct_token").get<int>();
    if (fx.correct_token < 0 || fx.correct_token >= vocab_size) {
        throw ParseError(path + ": correct_token outside vocabulary");
    }
    fx.policy = PolicyParams(vocab_size, /*k=*/1, /*temp=*/1.0);
    fx.instance.id = 0;
    fx.instance.hops = 0;
    fx.policy.set_logits(initial_state(fx.instance, 1, 0), logits);
    return fx;
}

SequenceReward bandit_reward(int correct_token) {
    return [correct_token](std::span<const int> tokens) {
        return tokens.size() == 1 && tokens[0] == correct_token ? 1.0 : 0.0;
    };
}

void write_json_report(const json& report, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write " + path);
    out << report.dump(2) << "\n";
}

std::string render_report_text(const json& report) {
    size_t width = 0;
    for (auto it = report.begin(); it != report.end(); ++it) {
        width = std::max(width, it.key().size());
    }
    std::ostringstream out;
    for (auto it = report.begin(); it != report.end(); ++it) {
        out << it.key() << std::string(width - it.key().size() + 2, ' ');
        if (it.value().is_string()) {
            out << it.value().get<std::string>();
        } else {
            out << it.value().dump();
        }
        out << "\n";
    }
    return out.str();
}

json variance_report(const BanditFixture& fixture, long mc_samples, uint64_t seed) {
    const SequenceReward reward = bandit_reward(fixture.correct_token);
    const StateKey s0 = initial_state(fixture.instance, 1, 0);
    const TokenDist d = dist(fixture.policy, s0);
    const double p = d.p[static_cast<size_t>(fixture.correct_token)];
    const double score_norm_sq =
        grad_logprob(fixture.policy, s0, fixture.correct_token).norm_sq();
    const double formula = p * (1.0 - p) * score_norm_sq;
    const EnumerationReport enumeration =
        build_enumeration_report(fixture.policy, fixture.instance, 1, -1, reward);
    const double exact = enumeration.variance;
    const double rel_err =
        formula > 0.0 ? std::abs(exact - formula) / formula : std::abs(exact - formula);

    json outputs = json::array();
    for (const auto& [tokens, prob, r] : enumeration.outputs) {
        outputs.push_back(json{{"tokens", tokens}, {"prob", prob}, {"reward", r}});
    }
    json rep{{"p_correct", p},
             {"score_norm_sq", score_norm_sq},
             {"exact_variance", exact},
             {"closed_form", formula},
             {"closed_form_rel_err", rel_err},
             {"output_count", enumeration.output_count},
             {"total_mass", enumeration.total_mass},
             {"exact_return", enumeration.exact_return},
             {"gradient_norm", enumeration.gradient_norm},
             {"outputs", outputs}};
    if (mc_samples > 1) {
        const MonteCarloVariance mc = monte_carlo_variance(fixture.policy, fixture.instance, 1,
                                                           -1, reward, mc_samples, seed);
        rep["mc_variance"] = mc.value;
        rep["mc_standard_error"] = mc.standard_error;
        rep["mc_samples"] = mc.samples;
        rep["mc_within_3se"] = std::abs(mc.value - exact) <= 3.0 * mc.standard_error;
    }
    return rep;
}

json stationarity_report(const std::string& policy_path, const std::string& world_path,
                         const std::string& instances_path, int max_len, long max_outputs) {
    Checkpoint ckpt = load_checkpoint(policy_path);
    FactWorld world = load_world(world_path);
    InstanceFile file = load_instances(instances_path);
    if (file.instances.empty()) throw ConfigError("stationarity: no instances in " +
                                                  instances_path);
    if (ckpt.vocab_hash != 0 && ckpt.vocab_hash != world.vocab.hash()) {
        throw ConfigError("stationarity: policy checkpoint vocab mismatch");
    }
    const QAInstance& inst = file.instances.front();
    const StationarityReport rep =
        stationarity_check(ckpt.params, inst, world.vocab, max_len, max_outputs);
    json out{{"correct_mass", rep.correct_mass},
             {"answer_gradient_norm", rep.answer_gradient_norm},
             {"final_gradient_norm", rep.final_gradient_norm},
             {"stationary_under_answer_reward", rep.stationary_under_answer_reward},
             {"escape_signal", rep.escape_signal}};
    if (rep.answer_gradient_norm > 0.0) {
        out["final_to_answer_gradient_ratio"] =
            rep.final_gradient_norm / rep.answer_gradient_norm;
    } else {
        out["final_to_answer_gradient_ratio"] = nullptr;
    }
    return out;
}

namespace {

double constrained_entropy(double eps, int k, std::span<const double> residual_parts,
                           double residual) {
    double h = -static_cast<double>(k) * eps * std::log(eps);
    double total = 0.0;
    for (double c : residual_parts) total += c;
    for (double c : residual_parts) {
        if (c <= 0.0) continue;
        const double p = residual * c / total;
        h -= p * std::log(p);
    }
    return h;
}

}  // namespace

json entropy_report(double eps, int k, int vocab_size, int samples, long grid_points,
                    uint64_t seed) {
    const double floor = entropy_floor(eps, k, vocab_size);

    RngStream rng(seed);
    double min_sampled = std::numeric_limits<double>::infinity();
    int below = 0;
    for (int i = 0; i < samples; ++i) {
        const std::vector<double> p = sample_constrained_dist(eps, k, vocab_size, rng);
        double h = 0.0;
        for (double x : p) {
            if (x > 0.0) h -= x * std::log(x);
        }
        min_sampled = std::min(min_sampled, h);
        if (h < floor - 1e-12) ++below;
    }

    // Composition grid over the residual simplex; the vertices (all residual
    // mass on one output) are grid points, so the analytic minimizer is
    // representable exactly.
    const int parts = vocab_size - k;
    const double residual = 1.0 - static_cast<double>(k) * eps;
    long resolution = 1;
    auto count_compositions = [parts](long n) {
        double c = 1.0;
        for (int i = 1; i < parts; ++i) c *= static_cast<double>(n + i) / i;
        return c;
    };
    while (count_compositions(resolution) < static_cast<double>(grid_points) &&
           resolution < 4096) {
        ++resolution;
    }
    double grid_min = std::numeric_limits<double>::infinity();
    long visited = 0;
    std::vector<double> comp(static_cast<size_t>(parts), 0.0);
    std::function<void(int, long)> enumerate = [&](int idx, long remaining) {
        if (idx == parts - 1) {
            comp[static_cast<size_t>(idx)] = static_cast<double>(remaining);
            ++visited;
            grid_min = std::min(grid_min, constrained_entropy(eps, k, comp, residual));
            return;
        }
        for (long c = 0; c <= remaining; ++c) {
            comp[static_cast<size_t>(idx)] = static_cast<double>(c);
            enumerate(idx + 1, remaining - c);
        }
    };
    enumerate(0, resolution);

    return json{{"epsilon", eps},
                {"k", k},
                {"vocab_size", vocab_size},
                {"entropy_floor", floor},
                {"samples", samples},
                {"min_sampled_entropy", min_sampled},
                {"samples_below_floor", below},
                {"grid_points", visited},
                {"grid_resolution", resolution},
                {"grid_min_entropy", grid_min},
                {"grid_vs_closed_form", std::abs(grid_min - floor)}};
}

json hitting_time_report(double success_prob, long trials, uint64_t seed) {
    if (!(success_prob > 0.0 && success_prob <= 1.0)) {
        throw ConfigError("hitting time: success probability must lie in (0,1]");
    }
    // Two-armed single-step bandit with exact success probability.
    BanditFixture fx;
    fx.correct_token = 0;
    fx.instance.id = 0;
    fx.instance.hops = 0;
    fx.policy = PolicyParams(2, 1, 1.0);
    const StateKey s0 = initial_state(fx.instance, 1, 0);
    const double p_wrong = 1.0 - success_prob;
    if (p_wrong > 0.0) {
        fx.policy.set_logits(s0, {std::log(success_prob), std::log(p_wrong)});
    } else {
        fx.policy.mask_token(s0, 1);  // success probability exactly 1
    }
    const HittingTimeResult res = hitting_time_experiment(
        fx.policy, fx.instance, 1, -1, bandit_reward(fx.correct_token), trials, seed);
    return json{{"success_probability", success_prob},
                {"trials", res.trials},
                {"mean_first_success", res.mean_first_success},
                {"geometric_expectation", 1.0 / success_prob}};
}

json gradcheck_report(int cases, double h, uint64_t seed) {
    json per_case = json::array();
    double overall = 0.0;
    for (int c = 0; c < cases; ++c) {
        const uint64_t case_seed = derive_seed(seed, static_cast<uint64_t>(c));
        const FactWorld world =
            generate_world(case_seed, 3 + (c % 2), 2, 5, /*n_fillers=*/1);
        const QAInstance inst =
            make_instance(world, 1, /*n_distractors=*/1, derive_seed(case_seed, 1), 0);

        PolicyParams policy(world.vocab.size, /*k=*/2, /*temp=*/1.0);
        const int max_len = 3;
        // Randomize logits on every reachable row.
        RngStream rng(derive_seed(case_seed, 2));
        // Reachable states are logit-independent (nothing is masked), so the
        // random rows can be assigned up front.
        std::vector<StateKey> visited;
        {
            std::unordered_map<StateKey, bool, StateKeyHash> seen;
            StateKey s = initial_state(inst, policy.context_order, 0);
            std::function<void(const StateKey&, int)> walk = [&](const StateKey& state,
                                                                 int depth) {
                if (!seen.emplace(state, true).second) return;
                visited.push_back(state);
                if (depth == max_len - 1) return;
                for (int v = 0; v < world.vocab.size; ++v) {
                    if (v == world.vocab.eos) continue;
                    walk(advance(state, v), depth + 1);
                }
            };
            walk(s, 0);
        }
        for (const StateKey& s : visited) {
            std::vector<double> logits(static_cast<size_t>(world.vocab.size));
            for (double& z : logits) z = 4.0 * rng.next_double() - 2.0;
            policy.set_logits(s, std::move(logits));
        }

        const SequenceReward reward = make_final_reward_fn(world.vocab, inst);
        const double err = gradcheck(policy, inst, max_len, world.vocab.eos, reward, h);
        overall = std::max(overall, err);
        per_case.push_back(json{{"case", c}, {"max_rel_err", err}});
    }
    return json{{"cases", cases}, {"h", h}, {"max_rel_err", overall}, {"per_case", per_case}};
}

}  // namespace fspo
