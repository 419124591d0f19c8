// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure. Run from anywhere; fixture paths are compiled in.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <vector>

#include "fspo/harness.hpp"

using namespace fspo;
namespace fs = std::filesystem;

namespace {

const std::string kFixtures = FSPO_FIXTURE_DIR;
constexpr uint64_t kShippedSeed = 20260809;

struct Outcome {
    bool pass = false;
    std::string detail;
};

int failures = 0;

void run_criterion(int id, const std::string& name, double time_budget_s,
                   const std::function<Outcome()>& fn) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome outcome;
    try {
        outcome = fn();
    } catch (const std::exception& e) {
        outcome.pass = false;
        outcome.detail = std::string("exception: ") + e.what();
    }
    const double elapsed =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (time_budget_s > 0.0 && elapsed > time_budget_s) {
        outcome.pass = false;
        outcome.detail += " [exceeded " + std::to_string(time_budget_s) + "s budget]";
    }
    if (!outcome.pass) ++failures;
    std::printf("%s  %2d %-28s %6.2fs  %s\n", outcome.pass ? "PASS" : "FAIL", id, name.c_str(),
                elapsed, outcome.detail.c_str());
    std::fflush(stdout);
}

std::string fixture(const std::string& name) { return (fs::path(kFixtures) / name).string(); }

fs::path work_dir() {
    fs::path dir = fs::temp_directory_path() / "fspo_acceptance";
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

QAInstance bandit_instance() {
    QAInstance inst;
    inst.id = 0;
    inst.hops = 0;
    return inst;
}

// ---- criteria ----

Outcome variance_identity() {
    RngStream rng(kShippedSeed);
    double worst = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        const int V = 2 + static_cast<int>(rng.next_u64() % 7);  // {2,...,8}
        PolicyParams policy(V, 1);
        const StateKey s = initial_state(bandit_instance(), 1, 0);
        std::vector<double> logits(static_cast<size_t>(V));
        for (double& z : logits) z = 4.0 * rng.next_double() - 2.0;
        policy.set_logits(s, logits);
        const int correct = static_cast<int>(rng.next_u64() % static_cast<uint64_t>(V));

        const double p = dist(policy, s).p[static_cast<size_t>(correct)];
        const double formula = p * (1.0 - p) * grad_logprob(policy, s, correct).norm_sq();
        const double exact = estimator_variance(policy, bandit_instance(), 1, -1,
                                                bandit_reward(correct));
        worst = std::max(worst, std::abs(exact - formula) / std::max(formula, 1e-300));
    }
    return {worst <= 1e-10, "max rel err " + format_double(worst)};
}

Outcome monte_carlo_consistency() {
    const BanditFixture fx = load_bandit_fixture(fixture("bandit.json"));
    const SequenceReward reward = bandit_reward(fx.correct_token);
    const double exact = estimator_variance(fx.policy, fx.instance, 1, -1, reward);
    const MonteCarloVariance mc =
        monte_carlo_variance(fx.policy, fx.instance, 1, -1, reward, 100000, kShippedSeed);
    const double gap = std::abs(mc.value - exact);
    std::ostringstream detail;
    detail << "exact " << format_double(exact) << ", mc " << format_double(mc.value)
           << ", gap/se " << format_double(gap / mc.standard_error);
    return {gap <= 3.0 * mc.standard_error, detail.str()};
}

Outcome stationary_wrong_answer() {
    const Checkpoint ckpt = load_checkpoint(fixture("stuck_policy.json"));
    const FactWorld world = load_world(fixture("stuck_world.json"));
    const InstanceFile file = load_instances(fixture("stuck_instances.json"));
    const StationarityReport rep =
        stationarity_check(ckpt.params, file.instances.front(), world.vocab, 8);
    std::ostringstream detail;
    detail << "answer-grad " << format_double(rep.answer_gradient_norm) << ", composite-grad "
           << format_double(rep.final_gradient_norm);
    const bool pass = rep.correct_mass == 0.0 && rep.answer_gradient_norm <= 1e-15 &&
                      rep.final_gradient_norm > 1e-6;
    return {pass, detail.str()};
}

Outcome gradient_correctness() {
    const nlohmann::json rep = gradcheck_report(10, 1e-6, kShippedSeed);
    const double err = rep.at("max_rel_err").get<double>();
    return {err <= 1e-6, "max rel err " + format_double(err)};
}

Outcome advantage_case_table() {
    RngStream rng(kShippedSeed);
    long checked = 0;
    for (int trial = 0; trial < 10000; ++trial) {
        const double a = trial % 17 == 0 ? 0.0 : 4.0 * rng.next_double() - 2.0;
        const StepLabel label =
            static_cast<StepLabel>(static_cast<int>(rng.next_u64() % 3) - 1);
        const double adj = adjusted_advantage(a, label);
        bool ok = std::abs(adj) == std::abs(a);
        if (a == 0.0 || label == StepLabel::neutral) {
            ok = ok && adj == a;
        } else if (label == StepLabel::entailed) {
            ok = ok && adj == std::abs(a);
        } else {
            ok = ok && adj == -std::abs(a);
        }
        if (!ok) return {false, "case table violated at trial " + std::to_string(trial)};
        ++checked;
    }

    // Transparency invariants on a synthetic segmented rollout.
    const Vocab vocab = Vocab::make(3, 1, 2);
    Rollout r;
    r.tokens = {4, 7, 5, 1, 4, 7, 6, 1, 2, 5, 3};
    segment_rollout(r, vocab);
    const std::vector<StepLabel> neutral(r.steps.size(), StepLabel::neutral);
    for (double a : adjust_token_advantages(0.73, r, neutral)) {
        if (a != 0.73) return {false, "neutral transparency violated"};
    }
    const std::vector<StepLabel> mixed = {StepLabel::entailed, StepLabel::contradicted};
    const GroupAdvantages degenerate = group_advantages(std::vector<double>{1.0, 1.0, 1.0, 1.0});
    if (!degenerate.degenerate) return {false, "all-equal group not flagged degenerate"};
    for (double a : adjust_token_advantages(degenerate.a[0], r, mixed)) {
        if (a != 0.0) return {false, "degenerate transparency violated"};
    }
    return {true, std::to_string(checked) + " random pairs + transparency invariants"};
}

Outcome group_normalization() {
    RngStream rng(kShippedSeed);
    double worst_mean = 0.0, worst_std = 0.0;
    for (int trial = 0; trial < 1000; ++trial) {
        std::vector<double> rewards(8);
        for (double& r : rewards) r = 3.0 * rng.next_double() - 1.0;
        const GroupAdvantages g = group_advantages(rewards);
        if (g.degenerate) return {false, "unexpected degenerate random group"};
        double mean = 0.0;
        for (double a : g.a) mean += a;
        mean /= 8.0;
        double var = 0.0;
        for (double a : g.a) var += (a - mean) * (a - mean);
        worst_mean = std::max(worst_mean, std::abs(mean));
        worst_std = std::max(worst_std, std::abs(std::sqrt(var / 8.0) - 1.0));
    }
    const GroupAdvantages equal = group_advantages(std::vector<double>(8, 0.4));
    for (double a : equal.a) {
        if (a != 0.0) return {false, "all-equal group produced nonzero advantage"};
    }
    std::ostringstream detail;
    detail << "max |mean| " << format_double(worst_mean) << ", max |std-1| "
           << format_double(worst_std);
    return {worst_mean <= 1e-9 && worst_std <= 1e-9, detail.str()};
}

Outcome neutral_equivalence() {
    const fs::path dir = work_dir() / "equivalence";
    fs::create_directories(dir);
    const std::string empty_fixture = (dir / "zero_labels.jsonl").string();
    std::ofstream(empty_fixture).close();

    ExperimentConfig config;
    config.world_path = fixture("world_2hop.json");
    config.instances_path = fixture("instances_2hop.json");
    config.verifier_type = "fixture";
    config.fixture_path = empty_fixture;
    config.train.iterations = 50;
    config.train.seed = 42;

    config.train.algorithm = Algorithm::fspo;
    config.train.reward_mode = RewardMode::answer_plus_factuality;
    const TrainRunResult fspo_run = run_training(config, (dir / "fspo").string());

    config.train.algorithm = Algorithm::grpo;
    config.train.reward_mode = RewardMode::answer_only;
    const TrainRunResult grpo_run = run_training(config, (dir / "grpo").string());

    const std::vector<std::string> a = metrics_lines_without_wall(fspo_run.metrics_path);
    const std::vector<std::string> b = metrics_lines_without_wall(grpo_run.metrics_path);
    // the algorithm column must differ and nothing else
    long diff_rows = 0;
    if (a.size() != b.size()) return {false, "row count differs"};
    for (size_t i = 0; i < a.size(); ++i) {
        std::string an = a[i], bn = b[i];
        const size_t pa = an.find(",fspo,");
        if (pa != std::string::npos) an = an.substr(0, pa) + an.substr(pa + 6);
        const size_t pb = bn.find(",grpo,");
        if (pb != std::string::npos) bn = bn.substr(0, pb) + bn.substr(pb + 6);
        if (an != bn) ++diff_rows;
    }
    std::ostringstream detail;
    detail << a.size() - 2 << " iterations, " << diff_rows << " differing rows";
    return {diff_rows == 0, detail.str()};
}

Outcome entropy_floor_criterion() {
    const nlohmann::json rep = entropy_report(0.05, 3, 8, 10000, 100000, kShippedSeed);
    const int below = rep.at("samples_below_floor").get<int>();
    const double grid_gap = rep.at("grid_vs_closed_form").get<double>();
    std::ostringstream detail;
    detail << "samples below floor " << below << ", grid gap " << format_double(grid_gap)
           << " over " << rep.at("grid_points").get<long>() << " points";
    return {below == 0 && grid_gap <= 1e-6, detail.str()};
}

Outcome hitting_time_criterion() {
    const nlohmann::json rep = hitting_time_report(0.01, 1000, kShippedSeed);
    const double mean = rep.at("mean_first_success").get<double>();
    return {mean >= 85.0 && mean <= 115.0, "mean first success " + format_double(mean)};
}

struct ArmSummary {
    double contradiction = 0.0;
    double accuracy = 0.0;
};

ArmSummary final_window(const std::vector<UpdateStats>& stats, size_t window) {
    ArmSummary s;
    const size_t start = stats.size() > window ? stats.size() - window : 0;
    for (size_t i = start; i < stats.size(); ++i) {
        s.contradiction += stats[i].contradiction_rate;
        s.accuracy += stats[i].answer_accuracy;
    }
    const double n = static_cast<double>(stats.size() - start);
    s.contradiction /= n;
    s.accuracy /= n;
    return s;
}

Outcome directional_experiment() {
    const fs::path dir = work_dir() / "directional";
    ExperimentConfig config;
    config.world_path = fixture("world_2hop.json");
    config.instances_path = fixture("instances_2hop.json");
    config.train.iterations = 200;
    config.train.seed = 42;

    auto run_arm = [&](Algorithm alg, RewardMode mode) {
        ExperimentConfig arm = config;
        arm.train.algorithm = alg;
        arm.train.reward_mode = mode;
        return run_training(arm, (dir / algorithm_name(alg)).string(),
                            fixture("base_policy_2hop.json"));
    };

    const ArmSummary fspo = final_window(
        run_arm(Algorithm::fspo, RewardMode::answer_plus_factuality).stats, 20);
    const ArmSummary grpo =
        final_window(run_arm(Algorithm::grpo, RewardMode::answer_only).stats, 20);
    const ArmSummary fspo_pp = final_window(
        run_arm(Algorithm::fspo_reinforce_pp, RewardMode::answer_plus_factuality).stats, 20);
    const ArmSummary rpp = final_window(
        run_arm(Algorithm::reinforce_pp, RewardMode::answer_only).stats, 20);

    std::ostringstream detail;
    detail << "contradiction fspo " << format_double(fspo.contradiction) << " vs grpo "
           << format_double(grpo.contradiction) << "; acc " << format_double(fspo.accuracy)
           << " vs " << format_double(grpo.accuracy) << " | pp: "
           << format_double(fspo_pp.contradiction) << " vs " << format_double(rpp.contradiction)
           << "; acc " << format_double(fspo_pp.accuracy) << " vs "
           << format_double(rpp.accuracy);

    const bool grpo_pair = fspo.contradiction < grpo.contradiction &&
                           fspo.accuracy >= grpo.accuracy - 0.05;
    const bool pp_pair = fspo_pp.contradiction < rpp.contradiction &&
                         fspo_pp.accuracy >= rpp.accuracy - 0.05;
    return {grpo_pair && pp_pair, detail.str()};
}

}  // namespace

int main() {
    std::printf("acceptance suite (fixtures: %s)\n", kFixtures.c_str());
    run_criterion(1, "variance-identity", 1.0, variance_identity);
    run_criterion(2, "monte-carlo-consistency", 30.0, monte_carlo_consistency);
    run_criterion(3, "stationary-wrong-answer", 5.0, stationary_wrong_answer);
    run_criterion(4, "gradient-correctness", 0.0, gradient_correctness);
    run_criterion(5, "advantage-case-table", 0.0, advantage_case_table);
    run_criterion(6, "group-normalization", 0.0, group_normalization);
    run_criterion(7, "neutral-equivalence", 0.0, neutral_equivalence);
    run_criterion(8, "entropy-floor", 0.0, entropy_floor_criterion);
    run_criterion(9, "hitting-time", 10.0, hitting_time_criterion);
    run_criterion(10, "directional-experiment", 300.0, directional_experiment);

    if (failures > 0) {
        std::printf("%d criterion(s) failed\n", failures);
        return 1;
    }
    std::printf("all criteria passed\n");
    return 0;
}
