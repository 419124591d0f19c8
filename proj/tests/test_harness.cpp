#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "fspo/harness.hpp"

using namespace fspo;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
    fs::path dir = fs::temp_directory_path() / "fspo_harness_test" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

json base_config_json() {
    return json{{"group_size", 4},
                {"batch_size", 2},
                {"iterations", 4},
                {"seed", 7},
                {"algorithm", "fspo"},
                {"max_response_length", 12},
                {"data",
                 {{"generate",
                   {{"world_seed", 3}, {"entities", 5}, {"relations", 2}, {"facts", 8},
                    {"fillers", 1}, {"instances", 4}, {"hops", 2}, {"distractors", 1},
                    {"instance_seed", 11}}}}}};
}

std::string read_file(const std::string& path) {
    std::ifstream in(path);
    REQUIRE(in);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

}  // namespace

TEST_CASE("experiment config: defaults, enums, and unknown-key rejection") {
    const ExperimentConfig c = experiment_config_from_json(base_config_json());
    CHECK(c.train.group_size == 4);
    CHECK(c.train.clip_epsilon == 0.2);
    CHECK(c.train.kl_coef == 1e-3);
    CHECK(c.train.learning_rate == 0.1);
    CHECK(c.train.algorithm == Algorithm::fspo);
    CHECK(c.generate);
    CHECK(c.verifier_type == "oracle");

    json bad = base_config_json();
    bad["learning_rt"] = 0.5;
    CHECK_THROWS_WITH_AS(experiment_config_from_json(bad), doctest::Contains("learning_rt"),
                         ConfigError);

    bad = base_config_json();
    bad["data"]["generate"]["entiti"] = 3;
    CHECK_THROWS_AS(experiment_config_from_json(bad), ConfigError);

    bad = base_config_json();
    bad["verifier"] = {{"type", "neural"}};
    CHECK_THROWS_AS(experiment_config_from_json(bad), ConfigError);

    bad = base_config_json();
    bad["data"] = {{"world", "w.json"}};  // missing instances
    CHECK_THROWS_AS(experiment_config_from_json(bad), ConfigError);

    bad = base_config_json();
    bad["clip_epsilon"] = 1.5;
    CHECK_THROWS_AS(experiment_config_from_json(bad), ConfigError);
}

TEST_CASE("metrics files are byte-identical across runs except the wall column") {
    const fs::path dir = fresh_dir("metrics");
    const ExperimentConfig config = experiment_config_from_json(base_config_json());

    const TrainRunResult a = run_training(config, (dir / "a").string());
    const TrainRunResult b = run_training(config, (dir / "b").string());

    CHECK(read_file(a.metrics_path) != "");
    CHECK(metrics_lines_without_wall(a.metrics_path) ==
          metrics_lines_without_wall(b.metrics_path));

    // header hash line present
    const std::string content = read_file(a.metrics_path);
    CHECK(content.rfind("# fspo-metrics-v1 fnv1a=", 0) == 0);

    // different seed diverges
    ExperimentConfig other = config;
    other.train.seed = 8;
    const TrainRunResult c = run_training(other, (dir / "c").string());
    CHECK(metrics_lines_without_wall(a.metrics_path) !=
          metrics_lines_without_wall(c.metrics_path));
}

TEST_CASE("training writes checkpoints that eval can consume") {
    const fs::path dir = fresh_dir("train_eval");
    ExperimentConfig config = experiment_config_from_json(base_config_json());
    config.train.checkpoint_every = 2;
    const TrainRunResult run = run_training(config, (dir / "run").string());
    CHECK(fs::exists(run.checkpoint_path));
    CHECK(fs::exists(dir / "run" / "checkpoint_000002.json"));
    CHECK(fs::exists(dir / "run" / "checkpoint_000004.json"));
    CHECK(run.stats.size() == 4);

    // Materialize the dataset for eval.
    const Dataset d = build_dataset(config);
    const std::string world_path = (dir / "world.json").string();
    const std::string instances_path = (dir / "instances.json").string();
    save_world(d.world, world_path);
    save_instances(d.instances, instances_path);

    EvalOptions options;
    options.samples_per_instance = 4;
    const EvalReport report = run_eval(run.checkpoint_path, world_path, instances_path, 3,
                                       (dir / "eval").string(), options);
    CHECK(report.instances == 4);
    CHECK(report.rollouts == 16);
    CHECK(report.answer_accuracy >= 0.0);
    CHECK(report.answer_accuracy <= 1.0);
    CHECK(fs::exists(report.dump_path));
    CHECK(fs::exists(dir / "eval" / "eval_report.json"));
}

TEST_CASE("rollout dumps replay to identical rewards and advantages") {
    const fs::path dir = fresh_dir("replay");
    ExperimentConfig config = experiment_config_from_json(base_config_json());
    config.dump_rollouts = true;

    for (Algorithm alg :
         {Algorithm::fspo, Algorithm::grpo, Algorithm::reinforce_pp, Algorithm::reinforce}) {
        config.train.algorithm = alg;
        config.train.reward_mode = adjusts_tokens(alg) ? RewardMode::answer_plus_factuality
                                                       : RewardMode::answer_only;
        const TrainRunResult run =
            run_training(config, (dir / algorithm_name(alg)).string());
        REQUIRE(!run.dump_path.empty());

        const Dataset d = build_dataset(config);
        const OracleVerifier oracle(d.world.vocab);
        const ReplayReport rep =
            replay_dump(run.dump_path, d, oracle, alg, config.train.reward_mode);
        CHECK(rep.lines == 4 * 2 * 4);  // iterations * batch * group
        CHECK(rep.mismatches == 0);
        CHECK(rep.ok());
    }
}

TEST_CASE("replay keeps groups apart when adjacent groups share an instance") {
    const fs::path dir = fresh_dir("replay_single");
    ExperimentConfig config = experiment_config_from_json(base_config_json());
    config.dump_rollouts = true;
    config.train.batch_size = 3;  // every batch samples the lone instance repeatedly
    config.gen.instances = 1;

    const TrainRunResult run = run_training(config, (dir / "run").string());
    const Dataset d = build_dataset(config);
    const OracleVerifier oracle(d.world.vocab);
    const ReplayReport rep = replay_dump(run.dump_path, d, oracle, config.train.algorithm,
                                         config.train.reward_mode);
    CHECK(rep.lines == 4 * 3 * 4);
    CHECK(rep.mismatches == 0);
}

TEST_CASE("replay detects tampered advantages") {
    const fs::path dir = fresh_dir("tamper");
    ExperimentConfig config = experiment_config_from_json(base_config_json());
    config.dump_rollouts = true;
    config.train.iterations = 1;
    const TrainRunResult run = run_training(config, (dir / "run").string());

    // Flip one advantage in the dump.
    std::ifstream in(run.dump_path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) lines.push_back(line);
    in.close();
    REQUIRE(!lines.empty());
    json first = json::parse(lines[0]);
    first["advantage"] = first["advantage"].get<double>() + 0.5;
    lines[0] = first.dump();
    const std::string tampered = (dir / "tampered.jsonl").string();
    std::ofstream out(tampered);
    for (const std::string& l : lines) out << l << "\n";
    out.close();

    const Dataset d = build_dataset(config);
    const OracleVerifier oracle(d.world.vocab);
    const ReplayReport rep =
        replay_dump(tampered, d, oracle, config.train.algorithm, config.train.reward_mode);
    CHECK(rep.mismatches > 0);
}

TEST_CASE("aborted training leaves a diagnostic state dump") {
    const fs::path dir = fresh_dir("abort");
    ExperimentConfig config = experiment_config_from_json(base_config_json());

    // Materialize the dataset, then poison one instance with a bogus tag.
    Dataset d = build_dataset(config);
    const std::string world_path = (dir / "world.json").string();
    const std::string instances_path = (dir / "instances.json").string();
    save_world(d.world, world_path);
    save_instances(d.instances, instances_path, {{0, "not_an_algorithm"}});
    config.generate = false;
    config.world_path = world_path;
    config.instances_path = instances_path;

    CHECK_THROWS_AS(run_training(config, (dir / "run").string()), ConfigError);
    CHECK(fs::exists(dir / "run" / "abort.json"));
    CHECK(fs::exists(dir / "run" / "abort_policy.json"));
}

TEST_CASE("ablation shares one dataset and emits per-arm plus comparison CSVs") {
    const fs::path dir = fresh_dir("ablate");
    ExperimentConfig config = experiment_config_from_json(base_config_json());
    config.train.iterations = 2;
    const AblationResult result = run_ablation(config, dir.string());

    CHECK(result.arms.size() == 5);
    CHECK(fs::exists(result.comparison_path));
    CHECK(fs::exists(dir / "world.json"));
    for (const auto& [name, run] : result.arms) {
        CHECK(fs::exists(run.metrics_path));
        CHECK(run.stats.size() == 2);
    }
    // 5 arms x 2 iterations + header
    std::ifstream comparison(result.comparison_path);
    int rows = 0;
    std::string line;
    while (std::getline(comparison, line)) ++rows;
    CHECK(rows == 1 + 5 * 2);
}

TEST_CASE("bandit fixture loads and its reports are self-consistent") {
    const fs::path dir = fresh_dir("bandit");
    const std::string path = (dir / "bandit.json").string();
    {
        std::ofstream out(path);
        out << R"({"vocab_size":4,"logits":[0.4,-0.3,0.2,0.1],"correct_token":2})" << "\n";
    }
    const BanditFixture fx = load_bandit_fixture(path);
    CHECK(fx.policy.vocab_size == 4);
    CHECK(fx.correct_token == 2);

    const json rep = variance_report(fx, 5000, 99);
    CHECK(rep.at("closed_form_rel_err").get<double>() <= 1e-10);
    CHECK(rep.at("mc_within_3se").get<bool>());

    const std::string text = render_report_text(rep);
    CHECK(text.find("exact_variance") != std::string::npos);
}

TEST_CASE("entropy report: floor holds for samples and the grid matches the closed form") {
    const json rep = entropy_report(0.05, 3, 8, 500, 2000, 12);
    CHECK(rep.at("samples_below_floor").get<int>() == 0);
    CHECK(rep.at("grid_vs_closed_form").get<double>() <= 1e-9);
    CHECK(rep.at("grid_min_entropy").get<double>() >=
          rep.at("entropy_floor").get<double>() - 1e-12);
}

TEST_CASE("hitting-time report tracks the geometric expectation") {
    const json rep = hitting_time_report(0.5, 2000, 5);
    CHECK(rep.at("mean_first_success").get<double>() == doctest::Approx(2.0).epsilon(0.06));
    const json sure = hitting_time_report(1.0, 10, 5);
    CHECK(sure.at("mean_first_success").get<double>() == 1.0);
}

TEST_CASE("gradcheck report stays within the tolerance on random cases") {
    const json rep = gradcheck_report(2, 1e-6, 31);
    CHECK(rep.at("max_rel_err").get<double>() <= 1e-6);
}
