#pragma once

#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "fspo/optim.hpp"
#include "fspo/theorylab.hpp"

namespace fspo {

// Full experiment description: training hyperparameters plus the dataset
// source and verifier backend. Loaded from a single JSON file; unknown keys
// are rejected at every level.
struct ExperimentConfig {
    TrainConfig train;

    // Dataset: either file paths or inline generation parameters.
    std::string world_path;
    std::string instances_path;
    bool generate = false;
    struct Generate {
        uint64_t world_seed = 42;
        int entities = 8;
        int relations = 3;
        int facts = 16;
        int fillers = 2;
        int instances = 12;
        int hops = 2;
        int distractors = 2;
        uint64_t instance_seed = 1;
    } gen;

    std::string verifier_type = "oracle";  // oracle | fixture
    std::string fixture_path;
    bool dump_rollouts = false;
    std::string initial_checkpoint;  // empty = fresh uniform policy
};

ExperimentConfig load_experiment_config(const std::string& path);
ExperimentConfig experiment_config_from_json(const nlohmann::json& j);

Dataset build_dataset(const ExperimentConfig& config);
std::unique_ptr<VerifierBackend> build_verifier(const ExperimentConfig& config,
                                                const Vocab& vocab);

// ---- metrics ----

struct MetricsRow {
    int iteration = 0;
    double wall_ms = 0.0;
    UpdateStats stats;
    std::string algorithm;
    uint64_t seed = 0;
};

// Shortest round-trip decimal form; identical doubles print identically.
std::string format_double(double x);

std::string metrics_header();

// CSV with a fixed column order behind a header-hash comment line. Byte
// identical across runs of the same config+seed except for wall_ms.
class MetricsWriter {
public:
    explicit MetricsWriter(const std::string& path);
    void append(const MetricsRow& row);

private:
    std::ofstream out_;
};

// Data rows with the wall_ms column removed, for reproducibility and
// equivalence comparisons.
std::vector<std::string> metrics_lines_without_wall(const std::string& path);

// ---- experiment runners ----

struct TrainRunResult {
    std::string metrics_path;
    std::string checkpoint_path;
    std::string dump_path;  // empty unless dump_rollouts
    std::vector<UpdateStats> stats;
};

TrainRunResult run_training(const ExperimentConfig& config, const std::string& out_dir,
                            const std::string& initial_checkpoint = "");

struct AblationArm {
    std::string name;
    Algorithm algorithm;
    RewardMode reward_mode;
};

std::vector<AblationArm> default_ablation_arms();

// Runs every arm on an identical dataset, initial policy, and seed; only the
// algorithm and reward mode differ. Emits per-arm metrics CSVs plus a
// combined comparison CSV.
struct AblationResult {
    std::string comparison_path;
    std::vector<std::pair<std::string, TrainRunResult>> arms;
};
AblationResult run_ablation(const ExperimentConfig& config, const std::string& out_dir);

struct EvalOptions {
    int samples_per_instance = 8;
    int max_response_length = 24;
    Algorithm algorithm = Algorithm::fspo;
    RewardMode reward_mode = RewardMode::answer_plus_factuality;
};

struct EvalReport {
    int instances = 0;
    int rollouts = 0;
    double answer_accuracy = 0.0;
    double contradiction_rate = 0.0;
    double entailed_rate = 0.0;
    double mean_final_reward = 0.0;
    std::string dump_path;
};

EvalReport run_eval(const std::string& checkpoint_path, const std::string& world_path,
                    const std::string& instances_path, uint64_t seed,
                    const std::string& out_dir, const EvalOptions& options,
                    const VerifierBackend* verifier = nullptr);

// ---- rollout dumps ----

void append_rollout_dump(std::ostream& out, int iteration, int group_index,
                         const GroupData& group);

struct ReplayReport {
    long lines = 0;
    long groups = 0;
    long mismatches = 0;
    bool ok() const { return mismatches == 0 && lines > 0; }
};

// Re-scores a rollout dump offline: re-segments, re-labels, recomputes
// rewards, group advantages and token advantages, and verifies every logged
// value is reproduced exactly.
ReplayReport replay_dump(const std::string& dump_path, const Dataset& dataset,
                         const VerifierBackend& verifier, Algorithm algorithm,
                         RewardMode reward_mode);

// ---- theory reports ----

// Base policy for fine-tuning experiments: the tabular analogue of a
// pretrained backbone. It is biased toward well-formed chain-restating
// responses ([subject relation object PERIOD] steps, then ANSWER_MARK,
// answer, EOS) while every knowledge slot (claim object, answer token) stays
// near-uniform over the entities, so the base model is fluent but
// hallucination-prone. `answer_bias` weights moving to the answer against
// restating another claim at step boundaries. Requires context_order 2 and
// prompts of >= 3 tokens.
PolicyParams make_base_policy(const Dataset& dataset, double format_bias = 4.2,
                              double slot_bias = 2.2, double answer_bias = 5.0);

struct BanditFixture {
    PolicyParams policy;  // context_order 1, one row at the initial state
    QAInstance instance;  // empty prompt
    int correct_token = 0;
};

BanditFixture load_bandit_fixture(const std::string& path);
// R(y) = 1 iff the single sampled token is the designated one.
SequenceReward bandit_reward(int correct_token);

void write_json_report(const nlohmann::json& report, const std::string& path);
// Two-column aligned key/value rendering for terminals.
std::string render_report_text(const nlohmann::json& report);

nlohmann::json variance_report(const BanditFixture& fixture, long mc_samples, uint64_t seed);
nlohmann::json stationarity_report(const std::string& policy_path, const std::string& world_path,
                                   const std::string& instances_path, int max_len,
                                   long max_outputs = kDefaultEnumerationCap);
nlohmann::json entropy_report(double eps, int k, int vocab_size, int samples, long grid_points,
                              uint64_t seed);
nlohmann::json hitting_time_report(double success_prob, long trials, uint64_t seed);
nlohmann::json gradcheck_report(int cases, double h, uint64_t seed);

}  // namespace fspo
