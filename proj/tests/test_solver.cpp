#include <cmath>
#include <random>

#include "doctest.h"
#include "oracles.hpp"
#include "r3m/error.hpp"
#include "r3m/experiment.hpp"
#include "r3m/solver.hpp"

using namespace r3m;

TEST_CASE("delta_closed_form examples") {
    CHECK(delta_closed_form(1.0, 0.5) == 0.0);
    CHECK(delta_closed_form(-1.0, 0.5) == doctest::Approx(1.0));
    CHECK(delta_closed_form(0.0, 0.25) == doctest::Approx(std::log(3.0)).epsilon(1e-15));
    for (double bad : {0.0, 1.0, -0.1, 1.5, std::nan("")}) CHECK_THROWS_AS(delta_closed_form(0.0, bad), DomainError);
    CHECK(delta_update(-5.0, 1.0) == 0.0);
    CHECK_THROWS_AS(delta_update(0.0, 0.0), DomainError);
}

TEST_CASE("delta_closed_form agrees with golden-section search") {
    std::mt19937_64 gen(1);
    std::uniform_real_distribution<double> ud(-4.0, 4.0), ul(0.01, 0.99);
    for (int k = 0; k < 200; ++k) {
        const double diff = ud(gen), lambda = ul(gen);
        const auto f = [&](long double d) { return oracle::log1pexp_l(-(diff + d)) + lambda * d; };
        CHECK(std::abs(delta_closed_form(diff, lambda) - static_cast<double>(oracle::golden_min(f, 0.0L, 50.0L))) < 1e-7);
    }
}

TEST_CASE("project_RB") {
    const Eigen::Vector2d p = project_RB(Eigen::Vector2d(3, -1), 2.0);
    CHECK(p[0] == doctest::Approx(1.0));
    CHECK(p[1] == doctest::Approx(-1.0));
    CHECK(project_RB(Eigen::Vector3d::Constant(4.2), 1.0).norm() < 1e-15);
    const Eigen::Vector3d inside(0.2, -0.1, -0.1);
    CHECK((project_RB(inside, 1.0) - inside).norm() < 1e-15);
    CHECK_THROWS_AS(project_RB(inside, 0.0), DomainError);

    std::mt19937_64 gen(3);
    for (int k = 0; k < 50; ++k) {
        const Eigen::VectorXd v = oracle::random_vector(gen, 6, 3.0);
        const Eigen::VectorXd once = project_RB(v, 2.0);
        CHECK(std::abs(once.sum()) < 1e-12);
        CHECK(once.squaredNorm() <= 2.0 + 1e-12);
        CHECK((project_RB(once, 2.0) - once).norm() < 1e-12);
    }
}

TEST_CASE("config validation and json") {
    SolverConfig c;
    CHECK_NOTHROW(c.validate());
    c.lambda = 1.0;
    CHECK_NOTHROW(c.validate());
    c.lambda = 1.2;
    CHECK_THROWS_AS(c.validate(), DomainError);
    c.lambda = 0.3;
    c.batch_size = 0;
    CHECK_THROWS_AS(c.validate(), DomainError);
    c.batch_size = 8;
    c.mode = OptimizerMode::stochastic;
    const SolverConfig back = SolverConfig::from_json(c.to_json());
    CHECK(back.lambda == c.lambda);
    CHECK(back.batch_size == 8);
    CHECK(back.mode == c.mode);
}

namespace {

PreferenceDataset labelled(const TabularReward& truth, std::size_t n, std::uint64_t seed, NoiseKind kind = NoiseKind::clean,
                           double rate = 0.0) {
    NoiseSpec spec;
    spec.kind = kind;
    spec.rate = rate;
    spec.seed = seed;
    return apply_noise(sample_bandit_pairs(truth.num_states, truth.num_actions, n, seed + 1), truth, spec).dataset;
}

}  // namespace

TEST_CASE("full-batch fit is monotone and the delta step is exact at the end") {
    const TabularReward truth = generate_true_reward(3, 3, 2.0, 5);
    const PreferenceDataset ds = labelled(truth, 400, 7, NoiseKind::random_flip, 0.1);
    SolverConfig cfg;
    cfg.bound = 2.0;
    cfg.lambda = 0.6;
    const SolveReport rep = r3m_fit(ds, cfg);
    CHECK(rep.converged);
    CHECK(rep.monotone);
    CHECK(rep.loss_trace.size() == rep.epochs_run + 1);
    CHECK(rep.reward_estimate.in_feasible_set(1e-9));
    const DesignMatrix d = build_design(ds);
    const LikelihoodWorkspace ws(ds, d);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const double expect = std::max(std::log(1.0 / cfg.lambda - 1.0) - ws.oriented_diff(i, rep.reward_estimate.values), 0.0);
        CHECK(rep.delta_estimate.deltas[static_cast<Eigen::Index>(i)] == doctest::Approx(expect).epsilon(1e-12));
    }
    CHECK(rep.loss_trace.back() ==
          doctest::Approx(penalized_objective(rep.reward_estimate.values, rep.delta_estimate.deltas, cfg.lambda, ws)));
    for (std::size_t i : rep.outlier_set) CHECK(rep.delta_estimate.deltas[static_cast<Eigen::Index>(i)] > 0.0);
}

TEST_CASE("fit reaches a stationary point of the objective over R_B") {
    const TabularReward truth = generate_true_reward(2, 3, 2.0, 9);
    const PreferenceDataset ds = labelled(truth, 300, 11);
    SolverConfig cfg;
    cfg.bound = 2.0;
    cfg.lambda = 0.5;
    cfg.tolerance = 1e-13;
    cfg.max_epochs = 20000;
    const SolveReport rep = r3m_fit(ds, cfg);
    const DesignMatrix d = build_design(ds);
    const LikelihoodWorkspace ws(ds, d);
    // Small random feasible moves never decrease the objective (delta re-minimized).
    const auto F = [&](const Eigen::VectorXd& r) {
        Eigen::VectorXd delta(static_cast<Eigen::Index>(ds.size()));
        for (std::size_t i = 0; i < ds.size(); ++i)
            delta[static_cast<Eigen::Index>(i)] = delta_update(ws.oriented_diff(i, r), cfg.lambda);
        return penalized_objective(r, delta, cfg.lambda, ws);
    };
    const double f0 = F(rep.reward_estimate.values);
    std::mt19937_64 gen(2);
    for (int k = 0; k < 50; ++k) {
        const Eigen::VectorXd step = project_RB(rep.reward_estimate.values + oracle::random_vector(gen, 6, 1e-3), 2.0);
        CHECK(F(step) >= f0 - 1e-9);
    }
}

TEST_CASE("pure-noise labels give a small reward estimate") {
    TabularReward zero = TabularReward::zeros(2, 3);
    zero.bound = 1.0;
    std::vector<double> norms;
    for (std::size_t n : {200u, 3200u}) {
        const PreferenceDataset ds = labelled(zero, n, 21);
        SolverConfig cfg;
        cfg.lambda = 0.5;
        const SolveReport rep = r3m_fit(ds, cfg);
        const DesignMatrix d = build_design(ds);
        const LikelihoodWorkspace ws(ds, d);
        for (std::size_t i = 0; i < ds.size(); ++i)
            if (ws.oriented_diff(i, rep.reward_estimate.values) >= 0.0)
                CHECK(rep.delta_estimate.deltas[static_cast<Eigen::Index>(i)] == 0.0);
        norms.push_back(sigma_norm(rep.reward_estimate.values, d));
    }
    // noise-level estimate shrinks like n^{-1/2}: 16x the data, about 1/4 the norm
    CHECK(norms[1] < norms[0] / 2.0);
    CHECK(norms[1] < 0.2);
}

TEST_CASE("separable data without projection") {
    PreferenceDataset ds({PreferencePair::bandit(0, 0, 1, 1), PreferencePair::bandit(0, 1, 0, 0)}, 1, 2);
    SolverConfig cfg;
    cfg.projection = Projection::none;
    cfg.lambda = 1.0;
    cfg.max_epochs = 200;
    cfg.tolerance = 0.0;
    const SolveReport rep = mle_fit(ds, cfg);
    CHECK(rep.method == "mle");
    CHECK(rep.monotone);
    CHECK(rep.loss_trace.back() < rep.loss_trace.front());
    CHECK(rep.loss_trace.back() < 0.05);
    CHECK(rep.reward_estimate.values[0] > rep.reward_estimate.values[1]);
    CHECK(rep.delta_estimate.deltas.isZero());
}

TEST_CASE("stochastic mode is seeded and approaches the full-batch answer") {
    const TabularReward truth = generate_true_reward(2, 2, 1.0, 4);
    const PreferenceDataset ds = labelled(truth, 500, 13);
    SolverConfig cfg;
    cfg.bound = 1.0;
    cfg.mode = OptimizerMode::stochastic;
    cfg.learning_rate = 0.05;
    cfg.batch_size = 16;
    cfg.max_epochs = 400;
    cfg.seed = 3;
    const SolveReport a = r3m_fit(ds, cfg);
    const SolveReport b = r3m_fit(ds, cfg);
    CHECK(a.loss_trace == b.loss_trace);
    cfg.mode = OptimizerMode::full_batch;
    const SolveReport full = r3m_fit(ds, cfg);
    CHECK((a.reward_estimate.values - full.reward_estimate.values).norm() < 0.1);
    CHECK(a.loss_trace.back() < full.loss_trace.back() + 1e-3);
}

TEST_CASE("mlp fit") {
    const TabularReward truth = generate_true_reward(2, 3, 2.0, 8);
    const PreferenceDataset ds = labelled(truth, 400, 17);
    SolverConfig cfg;
    cfg.lambda = 0.5;
    cfg.max_epochs = 300;
    cfg.learning_rate = 0.5;
    cfg.seed = 1;
    ModelSpec spec{ModelKind::mlp, 8, 1.0};
    const SolveReport sgd = r3m_fit(ds, cfg, spec);
    REQUIRE(sgd.network.has_value());
    CHECK(sgd.loss_trace.back() < sgd.loss_trace.front());
    CHECK(sign_agreement(sgd.reward_estimate.values, truth) > 0.8);

    cfg.mode = OptimizerMode::full_batch;
    const SolveReport full = r3m_fit(ds, cfg, spec);
    CHECK(full.monotone);
    CHECK(full.loss_trace.back() < full.loss_trace.front());
}

TEST_CASE("tabular fit refuses segment data") {
    TrajectorySegment a{{{0, 0}, {0, 1}}}, b{{{0, 1}, {0, 0}}};
    PreferenceDataset ds({PreferencePair{a, b, 1}}, 1, 2, 0.9);
    CHECK_THROWS_AS(r3m_fit(ds, SolverConfig{}), ModeError);
    CHECK_NOTHROW(r3m_fit(ds, SolverConfig{}, ModelSpec{ModelKind::mlp, 4, 1.0}));
}

TEST_CASE("divergence raises a numerical error with the epoch") {
    const TabularReward truth = generate_true_reward(2, 2, 1.0, 4);
    const PreferenceDataset ds = labelled(truth, 50, 13);
    SolverConfig cfg;
    cfg.projection = Projection::none;
    cfg.mode = OptimizerMode::stochastic;
    cfg.step_rule = StepRule::fixed;
    cfg.learning_rate = 1e308;
    cfg.lambda = 1.0;
    cfg.max_epochs = 50;
    try {
        r3m_fit(ds, cfg);
        FAIL("expected NumericalError");
    } catch (const NumericalError& e) {
        CHECK(e.epoch() >= 1);
    }
}

TEST_CASE("report json") {
    const TabularReward truth = generate_true_reward(2, 2, 1.0, 4);
    const SolveReport rep = r3m_fit(labelled(truth, 50, 13), SolverConfig{});
    const auto j = rep.to_json();
    CHECK(j.at("method") == "r3m");
    CHECK(j.at("loss_trace").size() == rep.loss_trace.size());
    CHECK(j.at("delta_estimate").size() == 50);
}
