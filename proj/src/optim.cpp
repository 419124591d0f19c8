#include "fspo/optim.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

namespace fspo {

Algorithm parse_algorithm(const std::string& name) {
    if (name == "reinforce") return Algorithm::reinforce;
    if (name == "ppo") return Algorithm::ppo;
    if (name == "grpo") return Algorithm::grpo;
    if (name == "fspo") return Algorithm::fspo;
    if (name == "reinforce_pp") return Algorithm::reinforce_pp;
    if (name == "fspo_reinforce_pp") return Algorithm::fspo_reinforce_pp;
    throw ConfigError("unknown algorithm '" + name + "'");
}

std::string algorithm_name(Algorithm a) {
    switch (a) {
        case Algorithm::reinforce: return "reinforce";
        case Algorithm::ppo: return "ppo";
        case Algorithm::grpo: return "grpo";
        case Algorithm::fspo: return "fspo";
        case Algorithm::reinforce_pp: return "reinforce_pp";
        case Algorithm::fspo_reinforce_pp: return "fspo_reinforce_pp";
    }
    throw ConfigError("unknown algorithm enum value");
}

RewardMode parse_reward_mode(const std::string& name) {
    if (name == "answer_only") return RewardMode::answer_only;
    if (name == "answer_plus_factuality") return RewardMode::answer_plus_factuality;
    throw ConfigError("unknown reward mode '" + name + "'");
}

std::string reward_mode_name(RewardMode m) {
    return m == RewardMode::answer_only ? "answer_only" : "answer_plus_factuality";
}

bool adjusts_tokens(Algorithm a) {
    return a == Algorithm::fspo || a == Algorithm::fspo_reinforce_pp;
}

void TrainConfig::validate() const {
    if (group_size < 2) throw ConfigError("group_size must be >= 2");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(clip_epsilon > 0.0 && clip_epsilon < 1.0)) {
        throw ConfigError("clip_epsilon must lie in (0,1)");
    }
    if (kl_coef < 0.0) throw ConfigError("kl_coef must be >= 0");
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
    if (max_response_length < 1) throw ConfigError("max_response_length must be >= 1");
    if (iterations < 0) throw ConfigError("iterations must be >= 0");
    if (context_order < 1) throw ConfigError("context_order must be >= 1");
    if (!(temperature > 0.0)) throw ConfigError("temperature must be > 0");
    if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be >= 0");
}

namespace {

std::vector<StateKey> rollout_states(const QAInstance& instance, const Rollout& rollout,
                                     int context_order) {
    std::vector<StateKey> states;
    states.reserve(rollout.tokens.size());
    StateKey s = initial_state(instance, context_order, /*bos_token=*/0);
    for (int tok : rollout.tokens) {
        states.push_back(s);
        s = advance(s, tok);
    }
    return states;
}

RewardMode default_reward_mode(Algorithm a) {
    return adjusts_tokens(a) ? RewardMode::answer_plus_factuality : RewardMode::answer_only;
}

}  // namespace

GradVector surrogate_gradient(const PolicyParams& policy, std::span<const Rollout> rollouts,
                              std::span<const std::vector<double>> token_advantages,
                              double clip_epsilon,
                              const std::function<const QAInstance&(int)>& instance_by_id) {
    if (token_advantages.size() != rollouts.size()) {
        throw ContractViolation("surrogate_gradient: advantages misaligned with rollouts");
    }
    GradVector g;
    const double inv_n = 1.0 / static_cast<double>(rollouts.size());
    for (size_t i = 0; i < rollouts.size(); ++i) {
        const Rollout& r = rollouts[i];
        if (token_advantages[i].size() != r.tokens.size()) {
            throw ContractViolation("surrogate_gradient: token advantage length mismatch");
        }
        if (r.tokens.empty()) continue;
        const QAInstance& inst = instance_by_id(r.instance_id);
        const std::vector<StateKey> states = rollout_states(inst, r, policy.context_order);
        const double w = inv_n / static_cast<double>(r.tokens.size());
        for (size_t t = 0; t < r.tokens.size(); ++t) {
            const double adv = token_advantages[i][t];
            if (adv == 0.0) continue;
            const TokenDist d = dist(policy, states[t]);
            const double p_new = d.p[static_cast<size_t>(r.tokens[t])];
            if (p_new <= 0.0) {
                throw ContractViolation("surrogate_gradient: sampled token has zero probability");
            }
            const double ratio = std::exp(std::log(p_new) - r.old_logprobs[t]);
            if (!std::isfinite(ratio)) {
                throw ContractViolation("surrogate_gradient: non-finite importance ratio");
            }
            const double clipped = std::clamp(ratio, 1.0 - clip_epsilon, 1.0 + clip_epsilon);
            if (ratio * adv > clipped * adv) continue;  // min picked the clipped constant
            const double scale = w * adv * ratio / policy.temperature;
            std::vector<double>& row = g.row(states[t], policy.vocab_size);
            for (int v = 0; v < policy.vocab_size; ++v) {
                const double p = d.p[static_cast<size_t>(v)];
                if (p == 0.0 && v != r.tokens[t]) continue;
                const double indicator = v == r.tokens[t] ? 1.0 : 0.0;
                row[static_cast<size_t>(v)] += scale * (indicator - p);
            }
        }
    }
    return g;
}

GradVector reinforce_gradient(const PolicyParams& policy, std::span<const Rollout> rollouts,
                              std::span<const double> rewards,
                              const std::function<const QAInstance&(int)>& instance_by_id) {
    if (rewards.size() != rollouts.size()) {
        throw ContractViolation("reinforce_gradient: rewards misaligned with rollouts");
    }
    GradVector g;
    const double inv_n = 1.0 / static_cast<double>(rollouts.size());
    for (size_t i = 0; i < rollouts.size(); ++i) {
        if (rewards[i] == 0.0) continue;
        const Rollout& r = rollouts[i];
        const QAInstance& inst = instance_by_id(r.instance_id);
        const std::vector<StateKey> states = rollout_states(inst, r, policy.context_order);
        const double scale = inv_n * rewards[i] / policy.temperature;
        for (size_t t = 0; t < r.tokens.size(); ++t) {
            const TokenDist d = dist(policy, states[t]);
            std::vector<double>& row = g.row(states[t], policy.vocab_size);
            for (int v = 0; v < policy.vocab_size; ++v) {
                const double p = d.p[static_cast<size_t>(v)];
                if (p == 0.0 && v != r.tokens[t]) continue;
                const double indicator = v == r.tokens[t] ? 1.0 : 0.0;
                row[static_cast<size_t>(v)] += scale * (indicator - p);
            }
        }
    }
    return g;
}

GradVector kl_gradient(const PolicyParams& policy, const PolicyParams& reference,
                       std::span<const StateKey> states) {
    GradVector g;
    for (const StateKey& s : states) {
        const TokenDist p = dist(policy, s);
        const TokenDist q = dist(reference, s);
        const double kl_s = kl(p, q);
        std::vector<double>& row = g.row(s, policy.vocab_size);
        for (int v = 0; v < policy.vocab_size; ++v) {
            const double pv = p.p[static_cast<size_t>(v)];
            if (pv <= 0.0) continue;
            row[static_cast<size_t>(v)] =
                pv * (std::log(pv / q.p[static_cast<size_t>(v)]) - kl_s) / policy.temperature;
        }
    }
    return g;
}

IterationData train_iteration(PolicyParams& policy, const Dataset& dataset,
                              std::span<const size_t> pool, const TrainConfig& config,
                              Algorithm algorithm, RewardMode reward_mode,
                              const VerifierBackend& verifier, const PolicyParams& reference,
                              RngStream& rng) {
    if (pool.empty()) throw ContractViolation("train_iteration: empty instance pool");

    auto instance_by_id = [&dataset](int id) -> const QAInstance& {
        for (const QAInstance& inst : dataset.instances) {
            if (inst.id == id) return inst;
        }
        throw ContractViolation("unknown instance id " + std::to_string(id));
    };

    IterationData data;
    data.algorithm = algorithm;

    // Sample the prompt batch and its rollout groups under the pre-update
    // policy; those log-probabilities are the importance denominators.
    for (int b = 0; b < config.batch_size; ++b) {
        const size_t idx = pool[rng.next_u64() % pool.size()];
        const QAInstance& inst = dataset.instances[idx];
        GroupData group;
        group.instance = &inst;
        for (int gi = 0; gi < config.group_size; ++gi) {
            Rollout r = sample_rollout(policy, inst, config.max_response_length, rng,
                                       dataset.world.vocab.eos);
            segment_rollout(r, dataset.world.vocab);
            group.labels.push_back(label_rollout(r, inst, verifier));
            group.breakdowns.push_back(score_rollout(r, inst, group.labels.back()));
            group.train_rewards.push_back(reward_mode == RewardMode::answer_only
                                              ? group.breakdowns.back().answer
                                              : group.breakdowns.back().final);
            group.rollouts.push_back(std::move(r));
        }
        data.groups.push_back(std::move(group));
    }

    // Rollout-level advantages.
    if (algorithm == Algorithm::reinforce || algorithm == Algorithm::ppo) {
        for (GroupData& group : data.groups) group.rollout_advantages = group.train_rewards;
    } else if (algorithm == Algorithm::grpo || algorithm == Algorithm::fspo) {
        for (GroupData& group : data.groups) {
            group.rollout_advantages = group_advantages(group.train_rewards).a;
        }
    } else {  // batch-normalized variants
        std::vector<double> all;
        for (const GroupData& group : data.groups) {
            all.insert(all.end(), group.train_rewards.begin(), group.train_rewards.end());
        }
        const std::vector<double> advs = batch_advantages(all);
        size_t cursor = 0;
        for (GroupData& group : data.groups) {
            group.rollout_advantages.assign(advs.begin() + static_cast<long>(cursor),
                                            advs.begin() +
                                                static_cast<long>(cursor + group.rollouts.size()));
            cursor += group.rollouts.size();
        }
    }

    // Token-level advantages; the factuality adjustment runs exactly once.
    for (GroupData& group : data.groups) {
        for (size_t i = 0; i < group.rollouts.size(); ++i) {
            if (adjusts_tokens(algorithm)) {
                group.token_advantages.push_back(adjust_token_advantages(
                    group.rollout_advantages[i], group.rollouts[i], group.labels[i]));
            } else {
                group.token_advantages.push_back(std::vector<double>(
                    group.rollouts[i].tokens.size(), group.rollout_advantages[i]));
            }
        }
    }

    // Unique visited states in first-visit order; fixed reduction order for
    // the KL term and the entropy/KL statistics.
    std::vector<StateKey> visited;
    {
        std::set<std::pair<int32_t, std::vector<int32_t>>> seen;
        for (const GroupData& group : data.groups) {
            for (const Rollout& r : group.rollouts) {
                for (const StateKey& s :
                     rollout_states(*group.instance, r, policy.context_order)) {
                    if (seen.emplace(s.instance_id, s.window).second) visited.push_back(s);
                }
            }
        }
    }

    UpdateStats& stats = data.stats;
    {
        double reward_sum = 0.0, answer_sum = 0.0;
        long n_rollouts = 0, n_steps = 0, n_contradicted = 0, n_entailed = 0;
        for (const GroupData& group : data.groups) {
            for (size_t i = 0; i < group.rollouts.size(); ++i) {
                reward_sum += group.train_rewards[i];
                answer_sum += group.breakdowns[i].answer;
                ++n_rollouts;
                for (StepLabel l : group.labels[i]) {
                    ++n_steps;
                    if (l == StepLabel::contradicted) ++n_contradicted;
                    if (l == StepLabel::entailed) ++n_entailed;
                }
            }
        }
        stats.mean_reward = reward_sum / static_cast<double>(n_rollouts);
        stats.answer_accuracy = answer_sum / static_cast<double>(n_rollouts);
        stats.contradiction_rate =
            n_steps == 0 ? 0.0 : static_cast<double>(n_contradicted) / static_cast<double>(n_steps);
        stats.entailed_rate =
            n_steps == 0 ? 0.0 : static_cast<double>(n_entailed) / static_cast<double>(n_steps);

        double h = 0.0;
        for (const StateKey& s : visited) h += entropy(policy, s);
        stats.mean_entropy = h / static_cast<double>(visited.size());

        if (algorithm == Algorithm::reinforce) {
            stats.surrogate = stats.mean_reward;
        } else {
            double acc = 0.0;
            for (const GroupData& group : data.groups) {
                for (size_t i = 0; i < group.rollouts.size(); ++i) {
                    double token_mean = 0.0;
                    if (!group.rollouts[i].tokens.empty()) {
                        for (double a : group.token_advantages[i]) token_mean += a;
                        token_mean /= static_cast<double>(group.rollouts[i].tokens.size());
                    }
                    acc += token_mean;
                }
            }
            stats.surrogate = acc / static_cast<double>(n_rollouts);
        }
    }

    // Ascent direction.
    GradVector ascent;
    if (algorithm == Algorithm::reinforce) {
        std::vector<Rollout> flat;
        std::vector<double> rewards;
        for (const GroupData& group : data.groups) {
            flat.insert(flat.end(), group.rollouts.begin(), group.rollouts.end());
            rewards.insert(rewards.end(), group.train_rewards.begin(),
                           group.train_rewards.end());
        }
        ascent = reinforce_gradient(policy, flat, rewards, instance_by_id);
    } else {
        const double inv_b = 1.0 / static_cast<double>(data.groups.size());
        for (const GroupData& group : data.groups) {
            GradVector g = surrogate_gradient(policy, group.rollouts, group.token_advantages,
                                              config.clip_epsilon, instance_by_id);
            ascent.add_scaled(inv_b, g);
        }
    }
    if (config.kl_coef > 0.0) {
        ascent.add_scaled(-config.kl_coef, kl_gradient(policy, reference, visited));
    }
    stats.grad_norm = ascent.norm();

    apply_update(policy, ascent, config.learning_rate);

    double kl_sum = 0.0;
    for (const StateKey& s : visited) kl_sum += kl_at_state(policy, reference, s);
    stats.mean_kl = kl_sum / static_cast<double>(visited.size());

    return data;
}

std::vector<UpdateStats> train(PolicyParams& policy, const Dataset& dataset,
                               const TrainConfig& config, const VerifierBackend& verifier,
                               const IterationCallback& callback) {
    config.validate();
    if (dataset.instances.empty()) throw ConfigError("train: dataset has no instances");

    // Pools: untagged datasets use one pool with the configured algorithm.
    // Tagged datasets cycle through the tag pools in sorted order; untagged
    // instances are usable by every pool.
    struct Pool {
        Algorithm algorithm;
        RewardMode reward_mode;
        std::vector<size_t> indices;
    };
    std::vector<Pool> pools;
    std::map<std::string, std::vector<size_t>> tagged;
    std::vector<size_t> untagged;
    for (size_t i = 0; i < dataset.instances.size(); ++i) {
        auto it = dataset.algo_tags.find(dataset.instances[i].id);
        if (it == dataset.algo_tags.end() || it->second.empty()) {
            untagged.push_back(i);
        } else {
            tagged[it->second].push_back(i);
        }
    }
    if (tagged.empty()) {
        pools.push_back({config.algorithm, config.reward_mode,
                         std::vector<size_t>(untagged.begin(), untagged.end())});
    } else {
        for (auto& [tag, indices] : tagged) {
            Pool pool{parse_algorithm(tag), default_reward_mode(parse_algorithm(tag)),
                      std::move(indices)};
            pool.indices.insert(pool.indices.end(), untagged.begin(), untagged.end());
            pools.push_back(std::move(pool));
        }
    }

    const PolicyParams reference = snapshot(policy);
    RngStream rng(config.seed);
    std::vector<UpdateStats> history;
    history.reserve(static_cast<size_t>(config.iterations));
    for (int iter = 0; iter < config.iterations; ++iter) {
        const Pool& pool = pools[static_cast<size_t>(iter) % pools.size()];
        IterationData data = train_iteration(policy, dataset, pool.indices, config,
                                             pool.algorithm, pool.reward_mode, verifier,
                                             reference, rng);
        history.push_back(data.stats);
        if (callback) callback(iter, data);
    }
    return history;
}

}  // namespace fspo
