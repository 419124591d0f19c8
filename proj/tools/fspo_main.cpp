// Command-line front end: train | eval | theory | ablate | gen.

#include <filesystem>
#include <iostream>

#include <CLI11.hpp>

#include "fspo/harness.hpp"

namespace fs = std::filesystem;
using namespace fspo;

namespace {

std::string default_fixture(const std::string& name) {
    return (fs::path("fixtures") / name).string();
}

void emit_report(const nlohmann::json& report, const std::string& out_dir,
                 const std::string& name) {
    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        write_json_report(report, (fs::path(out_dir) / name).string());
    }
    std::cout << render_report_text(report);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Desk-scale policy-optimization laboratory for factuality-aware RL"};
    app.require_subcommand(1);

    // train
    auto* train_cmd = app.add_subcommand("train", "Run a training experiment from a config file");
    std::string train_config, train_out = "out/train", train_ckpt;
    int64_t train_seed = -1;
    train_cmd->add_option("--config", train_config, "Experiment config JSON")->required();
    train_cmd->add_option("--out-dir", train_out, "Output directory");
    train_cmd->add_option("--seed", train_seed, "Override the config seed");
    train_cmd->add_option("--checkpoint", train_ckpt, "Initial policy checkpoint");

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
    std::string eval_ckpt, eval_world, eval_instances, eval_out = "out/eval";
    std::string eval_algorithm = "fspo", eval_reward = "answer_plus_factuality";
    uint64_t eval_seed = 0;
    int eval_samples = 8;
    eval_cmd->add_option("--checkpoint", eval_ckpt, "Policy checkpoint JSON")->required();
    eval_cmd->add_option("--world", eval_world, "World JSON")->required();
    eval_cmd->add_option("--instances", eval_instances, "Instances JSON")->required();
    eval_cmd->add_option("--seed", eval_seed, "Sampling seed");
    eval_cmd->add_option("--out-dir", eval_out, "Output directory");
    eval_cmd->add_option("--samples-per-instance", eval_samples, "Rollouts per instance");
    int eval_max_len = 24;
    eval_cmd->add_option("--max-len", eval_max_len, "Response length budget");
    eval_cmd->add_option("--algorithm", eval_algorithm, "Advantage semantics for the dump");
    eval_cmd->add_option("--reward-mode", eval_reward, "Reward mode for the dump");

    // gen
    auto* gen_cmd = app.add_subcommand("gen", "Generate a synthetic world and instance set");
    uint64_t gen_seed = 42;
    int64_t gen_instance_seed = -1;  // default: derived from --seed
    int gen_entities = 8, gen_relations = 3, gen_facts = 16, gen_fillers = 2;
    int gen_instances = 12, gen_hops = 2, gen_distractors = 2;
    std::string gen_out = "out/gen";
    gen_cmd->add_option("--seed", gen_seed, "World seed");
    gen_cmd->add_option("--entities", gen_entities, "Entity count");
    gen_cmd->add_option("--relations", gen_relations, "Relation count");
    gen_cmd->add_option("--facts", gen_facts, "Fact count");
    gen_cmd->add_option("--fillers", gen_fillers, "Filler token count");
    gen_cmd->add_option("--instances", gen_instances, "Instance count");
    gen_cmd->add_option("--hops", gen_hops, "Chain length per instance");
    gen_cmd->add_option("--distractors", gen_distractors, "Distractor facts per instance");
    gen_cmd->add_option("--instance-seed", gen_instance_seed,
                        "Instance sampling seed (default: derived from --seed)");
    gen_cmd->add_option("--out-dir", gen_out, "Output directory");
    bool gen_base_policy = false;
    gen_cmd->add_flag("--base-policy", gen_base_policy,
                      "Also write a format-primed base policy checkpoint");

    // ablate
    auto* ablate_cmd =
        app.add_subcommand("ablate", "Run the fixed ablation arms on one shared dataset");
    std::string ablate_config, ablate_out = "out/ablate";
    int64_t ablate_seed = -1;
    ablate_cmd->add_option("--config", ablate_config, "Experiment config JSON")->required();
    ablate_cmd->add_option("--out-dir", ablate_out, "Output directory");
    ablate_cmd->add_option("--seed", ablate_seed, "Override the config seed");

    // theory
    auto* theory_cmd = app.add_subcommand("theory", "Exact-enumeration and Monte-Carlo checks");
    theory_cmd->require_subcommand(1);
    theory_cmd->fallthrough();
    std::string theory_out = "out/theory";
    uint64_t theory_seed = 20260809;
    theory_cmd->add_option("--out-dir", theory_out, "Report directory");
    theory_cmd->add_option("--seed", theory_seed, "Experiment seed");

    auto* variance_cmd =
        theory_cmd->add_subcommand("variance", "Gradient-estimator variance on a bandit fixture");
    variance_cmd->fallthrough();
    std::string variance_fixture = default_fixture("bandit.json");
    long variance_samples = 100000;
    variance_cmd->add_option("--fixture", variance_fixture, "Bandit fixture JSON");
    variance_cmd->add_option("--samples", variance_samples, "Monte-Carlo sample count");

    auto* stationarity_cmd =
        theory_cmd->add_subcommand("stationarity", "Zero-gradient certification on stuck policies");
    stationarity_cmd->fallthrough();
    std::string st_policy = default_fixture("stuck_policy.json");
    std::string st_world = default_fixture("stuck_world.json");
    std::string st_instances = default_fixture("stuck_instances.json");
    int st_max_len = 8;
    stationarity_cmd->add_option("--policy", st_policy, "Policy checkpoint JSON");
    stationarity_cmd->add_option("--world", st_world, "World JSON");
    stationarity_cmd->add_option("--instances", st_instances, "Instances JSON");
    stationarity_cmd->add_option("--max-len", st_max_len, "Enumeration length bound");

    auto* entropy_cmd = theory_cmd->add_subcommand("entropy", "Exploration entropy floor");
    entropy_cmd->fallthrough();
    double en_eps = 0.05;
    int en_k = 3, en_vocab = 8, en_samples = 10000;
    long en_grid = 100000;
    entropy_cmd->add_option("--epsilon", en_eps, "Exploration mass per designated output");
    entropy_cmd->add_option("--k", en_k, "Designated output count");
    entropy_cmd->add_option("--vocab", en_vocab, "Output count");
    entropy_cmd->add_option("--samples", en_samples, "Random constrained distributions");
    entropy_cmd->add_option("--grid", en_grid, "Grid-search point target");

    auto* hitting_cmd = theory_cmd->add_subcommand("hitting-time", "First-success sample index");
    hitting_cmd->fallthrough();
    double ht_p = 0.01;
    long ht_trials = 1000;
    hitting_cmd->add_option("--p", ht_p, "Per-sample success probability");
    hitting_cmd->add_option("--trials", ht_trials, "Trial count");

    auto* gradcheck_cmd =
        theory_cmd->add_subcommand("gradcheck", "Central-difference check of exact gradients");
    gradcheck_cmd->fallthrough();
    int gc_cases = 10;
    double gc_h = 1e-6;
    gradcheck_cmd->add_option("--cases", gc_cases, "Random policy/instance pairs");
    gradcheck_cmd->add_option("--fd-step", gc_h, "Central-difference perturbation size");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*train_cmd) {
            ExperimentConfig config = load_experiment_config(train_config);
            if (train_seed >= 0) config.train.seed = static_cast<uint64_t>(train_seed);
            TrainRunResult result = run_training(config, train_out, train_ckpt);
            std::cout << "metrics " << result.metrics_path << "\n"
                      << "checkpoint " << result.checkpoint_path << "\n";
            if (!result.dump_path.empty()) std::cout << "rollouts " << result.dump_path << "\n";
        } else if (*eval_cmd) {
            EvalOptions options;
            options.samples_per_instance = eval_samples;
            options.max_response_length = eval_max_len;
            options.algorithm = parse_algorithm(eval_algorithm);
            options.reward_mode = parse_reward_mode(eval_reward);
            EvalReport report =
                run_eval(eval_ckpt, eval_world, eval_instances, eval_seed, eval_out, options);
            nlohmann::json j{{"instances", report.instances},
                             {"rollouts", report.rollouts},
                             {"answer_accuracy", report.answer_accuracy},
                             {"contradiction_rate", report.contradiction_rate},
                             {"entailed_rate", report.entailed_rate},
                             {"mean_final_reward", report.mean_final_reward},
                             {"dump", report.dump_path}};
            std::cout << render_report_text(j);
        } else if (*gen_cmd) {
            const uint64_t instance_seed = gen_instance_seed >= 0
                                               ? static_cast<uint64_t>(gen_instance_seed)
                                               : derive_seed(gen_seed, 1);
            const FactWorld world =
                generate_world(gen_seed, gen_entities, gen_relations, gen_facts, gen_fillers);
            const std::vector<QAInstance> instances =
                make_dataset(world, gen_instances, gen_hops, gen_distractors, instance_seed);
            fs::create_directories(gen_out);
            const std::string world_path = (fs::path(gen_out) / "world.json").string();
            const std::string instances_path = (fs::path(gen_out) / "instances.json").string();
            save_world(world, world_path);
            save_instances(instances, instances_path, {}, instance_seed);
            std::cout << "world " << world_path << "\n"
                      << "instances " << instances_path << "\n";
            if (gen_base_policy) {
                Dataset dataset{world, instances, {}};
                const std::string base_path = (fs::path(gen_out) / "base_policy.json").string();
                save_checkpoint(make_base_policy(dataset), base_path, world.vocab.hash());
                std::cout << "base_policy " << base_path << "\n";
            }
        } else if (*ablate_cmd) {
            ExperimentConfig config = load_experiment_config(ablate_config);
            if (ablate_seed >= 0) config.train.seed = static_cast<uint64_t>(ablate_seed);
            AblationResult result = run_ablation(config, ablate_out);
            std::cout << "comparison " << result.comparison_path << "\n";
            for (const auto& [name, run] : result.arms) {
                std::cout << name << " " << run.metrics_path << "\n";
            }
        } else if (*theory_cmd) {
            if (*variance_cmd) {
                const BanditFixture fixture = load_bandit_fixture(variance_fixture);
                emit_report(variance_report(fixture, variance_samples, theory_seed), theory_out,
                            "variance.json");
            } else if (*stationarity_cmd) {
                emit_report(stationarity_report(st_policy, st_world, st_instances, st_max_len),
                            theory_out, "stationarity.json");
            } else if (*entropy_cmd) {
                emit_report(entropy_report(en_eps, en_k, en_vocab, en_samples, en_grid,
                                           theory_seed),
                            theory_out, "entropy.json");
            } else if (*hitting_cmd) {
                emit_report(hitting_time_report(ht_p, ht_trials, theory_seed), theory_out,
                            "hitting_time.json");
            } else if (*gradcheck_cmd) {
                emit_report(gradcheck_report(gc_cases, gc_h, theory_seed), theory_out,
                            "gradcheck.json");
            }
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
