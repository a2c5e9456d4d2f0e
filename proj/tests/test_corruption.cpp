#include <cmath>
#include <set>

#include "doctest.h"
#include "r3m/corruption.hpp"
#include "r3m/error.hpp"
#include "r3m/experiment.hpp"

using namespace r3m;

namespace {

TabularReward line_reward(std::initializer_list<double> v) {
    TabularReward r = TabularReward::zeros(1, static_cast<int>(v.size()));
    Eigen::Index k = 0;
    for (double x : v) r.values[k++] = x;
    return r;
}

}  // namespace

TEST_CASE("noise kind names") {
    for (auto k : {NoiseKind::clean, NoiseKind::stochastic, NoiseKind::myopic, NoiseKind::irrational,
                   NoiseKind::random_flip, NoiseKind::sparse_adversarial})
        CHECK(noise_kind_from_string(to_string(k)) == k);
    CHECK_THROWS_AS(noise_kind_from_string("loud"), DomainError);
}

TEST_CASE("label_stochastic") {
    const TabularReward r = line_reward({1.0, 1.0, -1.0});
    Rng rng(1);
    CHECK(label_stochastic(PreferencePair::bandit(0, 0, 1, 1), r, 0.01, 1.0, rng).probability == 0.5);
    CHECK(label_stochastic(PreferencePair::bandit(0, 0, 1, 1), r, 50.0, 1.0, rng).probability == 0.5);
    CHECK(label_stochastic(PreferencePair::bandit(0, 0, 2, 1), r, 2.0, 1.0, rng).probability ==
          doctest::Approx(0.731059).epsilon(1e-6));
    CHECK(label_stochastic(PreferencePair::bandit(0, 0, 2, 1), r, 1e-3, 1.0, rng).probability > 1.0 - 1e-12);
    CHECK_THROWS_AS(label_stochastic(PreferencePair::bandit(0, 0, 2, 1), r, 0.0, 1.0, rng), DomainError);

    int ones = 0;
    for (int k = 0; k < 20000; ++k) ones += label_stochastic(PreferencePair::bandit(0, 0, 2, 1), r, 2.0, 1.0, rng).label;
    CHECK(std::abs(ones / 20000.0 - 0.731059) < 0.015);
}

TEST_CASE("label_myopic") {
    TabularReward r = TabularReward::zeros(2, 2);
    r.values << 1.0, 0.0, 0.0, 1.0;  // r(0,0)=1, r(1,1)=1
    // z1 step rewards (1, 0); z2 step rewards (0, 1)
    TrajectorySegment z1{{{0, 0}, {0, 1}}}, z2{{{0, 1}, {1, 1}}};
    CHECK(label_myopic(PreferencePair{z1, z2, 1}, r, 0.5) == 0);
    CHECK(label_myopic(PreferencePair{z2, z1, 1}, r, 0.5) == 1);
    // gamma 1 compares plain sums: tie goes to label 0
    CHECK(label_myopic(PreferencePair{z1, z2, 1}, r, 1.0) == 0);
    TrajectorySegment z3{{{0, 0}, {1, 1}}};
    CHECK(label_myopic(PreferencePair{z3, z1, 1}, r, 1.0) == 1);
    // one step: identical to argmax
    const auto p = PreferencePair::bandit(0, 0, 1, 0);
    CHECK(label_myopic(p, r, 0.3) == label_argmax(p, r, 1.0));
    CHECK_THROWS_AS(label_myopic(PreferencePair{z1, TrajectorySegment{{{0, 0}}}, 1}, r, 0.5), DomainError);
    CHECK_THROWS_AS(label_myopic(PreferencePair{z1, z2, 1}, r, 0.0), DomainError);
}

TEST_CASE("label_irrational") {
    CHECK(irrational_flip_count(64, 0.5) == 8);
    CHECK(irrational_flip_count(1, 0.3) == 1);
    CHECK(irrational_flip_count(8, 1.0 / 3.0) == 2);
    CHECK(irrational_flip_count(4, 0.5) == 2);

    // gaps (3, 1, 2, 0.5)
    const TabularReward r = line_reward({3.0, 0.0, 1.0, 2.0, 0.5});
    const std::vector<PreferencePair> batch = {PreferencePair::bandit(0, 0, 1, 1), PreferencePair::bandit(0, 2, 1, 1),
                                               PreferencePair::bandit(0, 3, 1, 1), PreferencePair::bandit(0, 4, 1, 1)};
    const IrrationalLabels out = label_irrational(batch, r, 0.5, 1.0);
    CHECK(out.flipped == std::vector<std::size_t>{0, 2});
    CHECK(out.labels == std::vector<int>{0, 1, 0, 1});
    CHECK_THROWS_AS(label_irrational(batch, r, 1.0, 1.0), DomainError);
    CHECK_THROWS_AS(label_irrational(batch, r, 0.0, 1.0), DomainError);
}

TEST_CASE("corrupt_sparse_adversarial") {
    const TabularReward truth = generate_true_reward(3, 3, 2.0, 1);
    NoiseSpec clean;
    clean.seed = 5;
    const PreferenceDataset ds = apply_noise(sample_bandit_pairs(3, 3, 100, 2), truth, clean).dataset;

    const CorruptedDataset none = corrupt_sparse_adversarial(ds, truth, 0, 2.0, 3);
    CHECK(none.dataset == ds);
    CHECK(none.record.implied_delta_star.deltas.isZero());

    const CorruptedDataset ten = corrupt_sparse_adversarial(ds, truth, 10, 2.0, 3);
    CHECK(ten.record.flipped_indices.size() == 10);
    CHECK(ten.record.implied_delta_star.nonzeros() == 10);
    CHECK(ten.record.implied_delta_star.deltas.maxCoeff() <= 2.0);
    std::size_t changed = 0;
    for (std::size_t i = 0; i < ds.size(); ++i) changed += ds[i].label != ten.dataset[i].label;
    CHECK(changed == 10);
    CHECK(ten.record.implied_delta_star.satisfies_sparsity_assumption());

    const CorruptedDataset all = corrupt_sparse_adversarial(ds, truth, 100, 1e6, 3);
    for (std::size_t i = 0; i < ds.size(); ++i) CHECK(ds[i].label != all.dataset[i].label);
    CHECK_THROWS_AS(corrupt_sparse_adversarial(ds, truth, 101, 2.0, 3), DomainError);

    const CorruptedDataset again = corrupt_sparse_adversarial(ds, truth, 10, 2.0, 3);
    CHECK(again.record.flipped_indices == ten.record.flipped_indices);
}

TEST_CASE("random_flip") {
    const TabularReward truth = generate_true_reward(2, 3, 1.0, 1);
    const PreferenceDataset ds = sample_bandit_pairs(2, 3, 10000, 4);
    CHECK(random_flip(ds, 0.0, 1, truth).dataset == ds);
    const CorruptedDataset all = random_flip(ds, 1.0, 1, truth);
    CHECK(all.record.flipped_indices.size() == ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i) CHECK(all.dataset[i].label != ds[i].label);
    const CorruptedDataset some = random_flip(ds, 0.1, 1, truth);
    CHECK(std::abs(static_cast<double>(some.record.flipped_indices.size()) - 1000.0) <= 90.0);
    CHECK_THROWS_AS(random_flip(ds, 1.5, 1, truth), DomainError);
}

TEST_CASE("apply_noise") {
    const TabularReward truth = generate_true_reward(3, 4, 2.0, 6);
    const PreferenceDataset pairs = sample_bandit_pairs(3, 4, 500, 7);
    NoiseSpec spec;
    spec.seed = 9;
    for (auto kind : {NoiseKind::clean, NoiseKind::stochastic, NoiseKind::myopic, NoiseKind::irrational,
                      NoiseKind::random_flip, NoiseKind::sparse_adversarial}) {
        spec.kind = kind;
        spec.rate = 0.1;
        spec.s = 20;
        spec.C = 2.0;
        const CorruptedDataset a = apply_noise(pairs, truth, spec);
        const CorruptedDataset b = apply_noise(pairs, truth, spec);
        CHECK(a.dataset == b.dataset);
        CHECK(a.record.flipped_indices == b.record.flipped_indices);
        CHECK(a.dataset.size() == pairs.size());
        CHECK(a.record.implied_delta_star.deltas.size() == 500);
        for (std::size_t i : a.record.flipped_indices) CHECK(a.record.implied_delta_star.deltas[static_cast<Eigen::Index>(i)] > 0.0);
    }
    spec.kind = NoiseKind::sparse_adversarial;
    CHECK(apply_noise(pairs, truth, spec).record.flipped_indices.size() == 20);
    spec.kind = NoiseKind::myopic;
    // bandit pairs: myopic labels are the argmax labels
    CHECK(apply_noise(pairs, truth, spec).record.flipped_indices.empty());
    spec.kind = NoiseKind::irrational;
    spec.p = 0.5;
    spec.batch_size = 64;
    // 7 full batches of 64 flip 8 each, the last batch of 52 flips ceil(sqrt(52)) = 8
    CHECK(apply_noise(pairs, truth, spec).record.flipped_indices.size() == 64u);
    spec.kind = NoiseKind::stochastic;
    spec.tau = -1.0;
    CHECK_THROWS_AS(apply_noise(pairs, truth, spec), DomainError);
}

TEST_CASE("record json") {
    CorruptionRecord rec{{1, 4}, PerturbationVector::zeros(6)};
    const auto j = rec.to_json();
    CHECK(j.at("flipped_indices").size() == 2);
    CHECK(j.at("delta_star").size() == 6);
}
