#include <cmath>
#include <random>

#include "doctest.h"
#include "oracles.hpp"
#include "r3m/error.hpp"
#include "r3m/mlp.hpp"

using namespace r3m;


TEST_CASE("zero weights give zero reward") {
    Mlp net(3, 2, 5);
    for (int s = 0; s < 3; ++s)
        for (int a = 0; a < 2; ++a) CHECK(mlp_reward(net, s, a) == 0.0);
    CHECK_THROWS_AS(mlp_reward(net, 3, 0), DomainError);
    CHECK_THROWS_AS(mlp_reward(net, 0, -1), DomainError);
}

TEST_CASE("forward pass matches the reference") {
    Rng rng(4);
    Mlp net = Mlp::random(3, 4, 6, rng);
    for (int s = 0; s < 3; ++s)
        for (int a = 0; a < 4; ++a) CHECK(net.reward(s, a) == doctest::Approx(oracle::mlp_forward(net.params(), 3, 4, 6, s, a)));
}

TEST_CASE("backprop matches central differences") {
    std::mt19937_64 gen(8);
    Rng rng(8);
    for (int rep = 0; rep < 40; ++rep) {
        Mlp net = Mlp::random(3, 3, 5, rng);
        net.params() += oracle::random_vector(gen, net.num_params(), 0.1);
        const auto ds = oracle::random_bandit(gen, 3, 3, 1);
        const double delta = std::abs(oracle::random_vector(gen, 1)[0]);
        const auto f = [&](const Eigen::VectorXd& p) { return oracle::mlp_pair_loss(p, 3, 3, 5, ds[0], delta, 1.0); };
        CHECK(oracle::rel_err(mlp_backprop(net, ds[0], delta, 1.0), oracle::central_diff(f, net.params())) < 1e-4);
    }
}

TEST_CASE("backprop through discounted segments") {
    std::mt19937_64 gen(9);
    Rng rng(9);
    TrajectorySegment a{{{0, 1}, {1, 0}, {2, 2}}}, b{{{1, 1}, {0, 0}, {2, 1}}};
    for (int label : {0, 1}) {
        const PreferencePair pair{a, b, label};
        Mlp net = Mlp::random(3, 3, 4, rng);
        const auto f = [&](const Eigen::VectorXd& p) { return oracle::mlp_pair_loss(p, 3, 3, 4, pair, 0.3, 0.9); };
        CHECK(oracle::rel_err(mlp_backprop(net, pair, 0.3, 0.9), oracle::central_diff(f, net.params())) < 1e-4);
    }
}

TEST_CASE("large delta saturates the per-sample gradient") {
    Rng rng(1);
    Mlp net = Mlp::random(2, 2, 4, rng);
    const auto pair = PreferencePair::bandit(0, 0, 1, 1);
    const double g0 = mlp_backprop(net, pair, 0.0, 1.0).norm();
    const double g10 = mlp_backprop(net, pair, 10.0, 1.0).norm();
    const double g30 = mlp_backprop(net, pair, 30.0, 1.0).norm();
    CHECK(g10 < g0);
    CHECK(g30 < g10);
    CHECK(g30 < 1e-10);
}
