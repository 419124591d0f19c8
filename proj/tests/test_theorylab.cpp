#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "fspo/theorylab.hpp"

using namespace fspo;

namespace {

QAInstance bandit_instance(int id = 0) {
    QAInstance inst;
    inst.id = id;
    inst.hops = 0;
    return inst;
}

SequenceReward token_match_reward(int correct) {
    return [correct](std::span<const int> tokens) {
        return tokens.size() == 1 && tokens[0] == correct ? 1.0 : 0.0;
    };
}

// Stuck fixture used across the stationarity tests: 1-hop world a -r-> b,
// policy emits the contradicted claim (a, r, w) and answers w, deviating to
// EOS with small probability at every position; the gold token is masked at
// the answer state.
struct StuckFixture {
    Vocab vocab = Vocab::make(3, 1, 0);  // V=8: a=4, b=5, w=6, r=7
    FactWorld world;
    QAInstance instance;
    PolicyParams policy{8, 3, 1.0};
};

StuckFixture make_stuck_fixture(bool mask_gold) {
    StuckFixture fx;
    fx.world.vocab = fx.vocab;
    fx.world.facts = {{4, 7, 5}, {6, 7, 6}};
    fx.instance.id = 0;
    fx.instance.hops = 1;
    fx.instance.prompt = {4, 7};
    fx.instance.gold_answer = {5};
    fx.instance.evidence = fx.world.facts;

    const std::vector<int> response = {4, 7, 6, 1, 2, 6, 3};  // a r w . <ans> w <eos>
    StateKey s = initial_state(fx.instance, 3, 0);
    for (int token : response) {
        LogitRow& row = fx.policy.row(s);
        row.logit[static_cast<size_t>(token)] = 3.0;  // intended vs EOS gap
        if (mask_gold) {
            for (int v = 0; v < 8; ++v) {
                if (v != token && v != fx.vocab.eos) fx.policy.mask_token(s, v);
            }
        }
        s = advance(s, token);
    }
    if (mask_gold) {
        // the answer state keeps only {wrong answer, EOS}; gold prob is 0
        REQUIRE(fx.policy.table.size() == 7);
    }
    return fx;
}

}  // namespace

TEST_CASE("enumerate_outputs: uniform single-step policy covers the vocabulary") {
    PolicyParams policy(4, 1);
    const auto outputs = enumerate_outputs(policy, bandit_instance(), 1, -1);
    REQUIRE(outputs.size() == 4);
    double mass = 0.0;
    for (const WeightedOutput& o : outputs) {
        CHECK(o.prob == doctest::Approx(0.25).epsilon(1e-12));
        CHECK(o.truncated);  // no EOS token configured
        mass += o.prob;
    }
    CHECK(mass == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("enumerate_outputs: deterministic masked policy yields one sequence") {
    PolicyParams policy(4, 1);
    QAInstance inst = bandit_instance();
    StateKey s = initial_state(inst, 1, 0);
    for (int token : {1, 2, 3}) {
        for (int v = 0; v < 4; ++v) {
            if (v != token) policy.mask_token(s, v);
        }
        s = advance(s, token);
    }
    const auto outputs = enumerate_outputs(policy, inst, 5, 3);
    REQUIRE(outputs.size() == 1);
    CHECK(outputs[0].tokens == std::vector<int>{1, 2, 3});
    CHECK(outputs[0].prob == 1.0);
    CHECK(!outputs[0].truncated);
}

TEST_CASE("enumerate_outputs: total mass is one with EOS termination") {
    PolicyParams policy(5, 2);
    QAInstance inst = bandit_instance();
    inst.prompt = {4};
    const auto outputs = enumerate_outputs(policy, inst, 4, 3);
    double mass = 0.0;
    for (const WeightedOutput& o : outputs) mass += o.prob;
    CHECK(mass == doctest::Approx(1.0).epsilon(1e-10));
}

TEST_CASE("enumerate_outputs: refuses past the output cap with a size estimate") {
    PolicyParams policy(6, 2);
    try {
        enumerate_outputs(policy, bandit_instance(), 10, -1, /*max_outputs=*/1000);
        FAIL("expected EnumerationLimitError");
    } catch (const EnumerationLimitError& e) {
        CHECK(e.estimated_outputs == doctest::Approx(std::pow(6.0, 10.0)));
    }
}

TEST_CASE("exact_return is the reward-weighted output mass") {
    PolicyParams policy(3, 1);
    const StateKey s = initial_state(bandit_instance(), 1, 0);
    policy.set_logits(s, {std::log(0.2), std::log(0.3), std::log(0.5)});
    CHECK(exact_return(policy, bandit_instance(), 1, -1, token_match_reward(2)) ==
          doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("exact_gradient with constant reward one is the zero vector") {
    PolicyParams policy(4, 2);
    QAInstance inst = bandit_instance();
    inst.prompt = {5};
    const SequenceReward one = [](std::span<const int>) { return 1.0; };
    const GradVector g = exact_gradient(policy, inst, 3, 3, one);
    CHECK(g.norm() <= 1e-14);
}

TEST_CASE("estimator_variance: symmetric two-armed bandit equals 1/8") {
    PolicyParams policy(2, 1);
    const double var =
        estimator_variance(policy, bandit_instance(), 1, -1, token_match_reward(0));
    CHECK(var == doctest::Approx(0.125).epsilon(1e-12));
}

TEST_CASE("estimator_variance: masked-out winner gives zero variance") {
    PolicyParams policy(3, 1);
    const StateKey s = initial_state(bandit_instance(), 1, 0);
    policy.mask_token(s, 0);
    const double var =
        estimator_variance(policy, bandit_instance(), 1, -1, token_match_reward(0));
    CHECK(var == 0.0);
}

TEST_CASE("estimator_variance matches the closed form only for a single winner") {
    RngStream rng(41);
    for (int trial = 0; trial < 10; ++trial) {
        const int V = 2 + static_cast<int>(rng.next_u64() % 7);
        PolicyParams policy(V, 1);
        const StateKey s = initial_state(bandit_instance(), 1, 0);
        std::vector<double> logits(static_cast<size_t>(V));
        for (double& z : logits) z = 4.0 * rng.next_double() - 2.0;
        policy.set_logits(s, logits);
        const int correct = static_cast<int>(rng.next_u64() % static_cast<uint64_t>(V));

        const double p = dist(policy, s).p[static_cast<size_t>(correct)];
        const double norm_sq = grad_logprob(policy, s, correct).norm_sq();
        const double formula = p * (1.0 - p) * norm_sq;
        const double exact =
            estimator_variance(policy, bandit_instance(), 1, -1, token_match_reward(correct));
        CHECK(std::abs(exact - formula) <= 1e-10 * std::max(1.0, formula));
    }

    // Two winners: the single-winner identity need not hold.
    PolicyParams policy(3, 1);
    const StateKey s = initial_state(bandit_instance(), 1, 0);
    policy.set_logits(s, {std::log(0.2), std::log(0.3), std::log(0.5)});
    const SequenceReward two_winners = [](std::span<const int> t) {
        return t.size() == 1 && (t[0] == 0 || t[0] == 1) ? 1.0 : 0.0;
    };
    const double raw = estimator_variance(policy, bandit_instance(), 1, -1, two_winners);
    const double p0 = 0.2;
    const double single_formula =
        p0 * (1.0 - p0) * grad_logprob(policy, s, 0).norm_sq();
    CHECK(raw > 0.0);
    CHECK(std::abs(raw - single_formula) > 1e-6);
}

TEST_CASE("estimator_variance agrees with a brute-force second moment on sequences") {
    // Multi-token episode exercising the repeated-state norm bookkeeping.
    PolicyParams policy(3, 1);
    QAInstance inst = bandit_instance();
    const SequenceReward reward = [](std::span<const int> t) {
        double acc = 0.0;
        for (int x : t) acc += x;  // arbitrary deterministic reward
        return acc / 10.0;
    };
    const double got = estimator_variance(policy, inst, 3, 2, reward);

    // Brute force: materialize outputs, compute g(y) rows directly.
    const auto outputs = enumerate_outputs(policy, inst, 3, 2);
    GradVector mean;
    double second = 0.0;
    for (const WeightedOutput& o : outputs) {
        GradVector g;
        StateKey s = initial_state(inst, 1, 0);
        for (int tok : o.tokens) {
            g.add_scaled(1.0, grad_logprob(policy, s, tok));
            s = advance(s, tok);
        }
        g.scale(reward(o.tokens));
        second += o.prob * g.norm_sq();
        g.scale(o.prob);
        mean.add_scaled(1.0, g);
    }
    CHECK(got == doctest::Approx(second - mean.norm_sq()).epsilon(1e-12));
}

TEST_CASE("monte_carlo_variance converges to the exact value on a bandit") {
    PolicyParams policy(4, 1);
    const StateKey s = initial_state(bandit_instance(), 1, 0);
    policy.set_logits(s, {std::log(0.1), std::log(0.4), std::log(0.3), std::log(0.2)});
    const SequenceReward reward = token_match_reward(0);
    const double exact = estimator_variance(policy, bandit_instance(), 1, -1, reward);
    const MonteCarloVariance mc =
        monte_carlo_variance(policy, bandit_instance(), 1, -1, reward, 20000, 1234);
    CHECK(std::abs(mc.value - exact) <= 3.0 * mc.standard_error);
    CHECK(mc.standard_error > 0.0);
}

TEST_CASE("stationarity: masked wrong-answer policy is exactly stationary, composite escapes") {
    const StuckFixture fx = make_stuck_fixture(/*mask_gold=*/true);
    const StationarityReport rep =
        stationarity_check(fx.policy, fx.instance, fx.vocab, 8);
    CHECK(rep.correct_mass == 0.0);
    CHECK(rep.answer_gradient_norm == 0.0);
    CHECK(rep.stationary_under_answer_reward);
    CHECK(rep.final_gradient_norm > 1e-6);
    CHECK(rep.escape_signal);
}

TEST_CASE("stationarity: unmasked near-deterministic policy has a huge gradient ratio") {
    StuckFixture fx = make_stuck_fixture(/*mask_gold=*/false);
    for (auto& [state, row] : fx.policy.table) {
        for (double& z : row.logit) {
            if (z == 3.0) z = 10.0;  // sharpen the intended path
        }
    }
    const StationarityReport rep =
        stationarity_check(fx.policy, fx.instance, fx.vocab, 6);
    CHECK(rep.correct_mass > 0.0);
    CHECK(rep.answer_gradient_norm > 0.0);
    CHECK(rep.final_gradient_norm / rep.answer_gradient_norm > 10.0);
}

TEST_CASE("entropy_floor closed forms") {
    const double expected = -0.9 * std::log(0.9) - 0.1 * std::log(0.1);
    CHECK(entropy_floor(0.1, 1, 4) == doctest::Approx(expected).epsilon(1e-12));
    CHECK(entropy_floor(0.3, 0, 4) == 0.0);
    // uniform boundary: eps = 1/V, k = V-1
    CHECK(entropy_floor(0.125, 7, 8) == doctest::Approx(std::log(8.0)).epsilon(1e-12));
    CHECK_THROWS_AS(entropy_floor(0.3, 4, 8), ContractViolation);   // k*eps > 1
    CHECK_THROWS_AS(entropy_floor(0.1, 8, 8), ContractViolation);   // k >= V
    CHECK_THROWS_AS(entropy_floor(-0.1, 1, 8), ContractViolation);  // eps <= 0
}

TEST_CASE("entropy_floor lower-bounds sampled constrained distributions") {
    const double eps = 0.05;
    const int k = 3, V = 8;
    const double floor = entropy_floor(eps, k, V);
    RngStream rng(2024);
    double min_h = 1e300;
    for (int i = 0; i < 2000; ++i) {
        const std::vector<double> p = sample_constrained_dist(eps, k, V, rng);
        double total = 0.0, h = 0.0;
        for (double x : p) {
            total += x;
            if (x > 0.0) h -= x * std::log(x);
        }
        CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
        for (int j = 0; j < k; ++j) CHECK(p[static_cast<size_t>(j)] == eps);
        CHECK(h >= floor - 1e-12);
        min_h = std::min(min_h, h);
    }
    CHECK(min_h < std::log(static_cast<double>(V)));  // the bound bites
}

TEST_CASE("hitting time: certain success takes exactly one sample") {
    PolicyParams policy(2, 1);
    const StateKey s = initial_state(bandit_instance(), 1, 0);
    policy.mask_token(s, 1);
    const HittingTimeResult res = hitting_time_experiment(
        policy, bandit_instance(), 1, -1, token_match_reward(0), 50, 9);
    CHECK(res.mean_first_success == 1.0);
}

TEST_CASE("hitting time: fair coin needs about two samples") {
    PolicyParams policy(2, 1);
    const HittingTimeResult res = hitting_time_experiment(
        policy, bandit_instance(), 1, -1, token_match_reward(0), 4000, 77);
    CHECK(res.mean_first_success == doctest::Approx(2.0).epsilon(0.05));
}

TEST_CASE("gradcheck: analytic exact gradient matches central differences") {
    RngStream rng(55);
    for (int trial = 0; trial < 3; ++trial) {
        PolicyParams policy(4, 1);
        QAInstance inst = bandit_instance();
        // random logits over the states reachable in 3 steps
        std::vector<StateKey> states;
        StateKey s0 = initial_state(inst, 1, 0);
        states.push_back(s0);
        for (int a = 0; a < 4; ++a) {
            if (a == 3) continue;
            states.push_back(advance(s0, a));
            for (int b = 0; b < 4; ++b) {
                if (b == 3) continue;
                states.push_back(advance(advance(s0, a), b));
            }
        }
        for (const StateKey& s : states) {
            std::vector<double> logits(4);
            for (double& z : logits) z = 3.0 * rng.next_double() - 1.5;
            policy.set_logits(s, logits);
        }
        const SequenceReward reward = [](std::span<const int> t) {
            double acc = 0.3;
            for (int x : t) acc += 0.17 * x;
            return acc;
        };
        CHECK(gradcheck(policy, inst, 3, 3, reward, 1e-6) <= 1e-6);
    }
}
