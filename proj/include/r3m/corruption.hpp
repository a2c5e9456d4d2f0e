#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "r3m/data.hpp"
#include "r3m/likelihood.hpp"
#include "r3m/reward.hpp"
#include "r3m/rng.hpp"

namespace r3m {

enum class NoiseKind { clean, stochastic, myopic, irrational, random_flip, sparse_adversarial };

std::string to_string(NoiseKind kind);
NoiseKind noise_kind_from_string(const std::string& name);

/// Label-generation model. Only the fields of the selected kind are read:
/// stochastic(tau), myopic(gamma_m), irrational(p, batch_size),
/// random_flip(rate), sparse_adversarial(s, C).
struct NoiseSpec {
    NoiseKind kind = NoiseKind::clean;
    double tau = 1.0;
    double gamma_m = 1.0;
    double p = 0.5;
    std::size_t batch_size = 64;
    double rate = 0.0;
    std::size_t s = 0;
    double C = 1.0;
    std::uint64_t seed = 0;

    /// Throws DomainError when a parameter of the selected kind is out of range.
    void validate() const;
    nlohmann::json to_json() const;
};

/// Which labels differ from the clean reference, and the winner-oriented
/// perturbation that explains them.
struct CorruptionRecord {
    std::vector<std::size_t> flipped_indices;
    PerturbationVector implied_delta_star;

    nlohmann::json to_json() const;
};

struct CorruptedDataset {
    PreferenceDataset dataset;
    CorruptionRecord record;
};

/// 1 if r(first) > r(second) under the discounted segment reward, else 0.
int label_argmax(const PreferencePair& pair, const TabularReward& reward, double discount);

struct StochasticDraw {
    int label;
    double probability;  // P(label = 1)
};

/// label = 1 with probability sigma((r(z1) - r(z2)) / tau).
StochasticDraw label_stochastic(const PreferencePair& pair, const TabularReward& reward, double tau,
                                double discount, Rng& rng);

/// Compares sum_{t=1}^m gamma_m^{m-t} r(s_t, a_t) of the two segments;
/// strictly greater first score gives 1, otherwise 0. Throws DomainError for
/// segments of unequal length.
int label_myopic(const PreferencePair& pair, const TabularReward& reward, double gamma_m);

/// ceil(batch^p), guarded against pow() rounding just above an integer.
std::size_t irrational_flip_count(std::size_t batch, double p);

struct IrrationalLabels {
    std::vector<int> labels;
    std::vector<std::size_t> flipped;  // positions within the batch, ascending
};

/// Clean argmax labels, then the ceil(|B|^p) pairs with the largest clean
/// gap |r(z1) - r(z2)| are flipped (ties go to the lower index).
IrrationalLabels label_irrational(std::span<const PreferencePair> batch, const TabularReward& reward, double p,
                                  double discount);

/// Flips s labels chosen uniformly without replacement. Each flipped sample
/// gets delta*_i = min{C, |clean gap| + 2} so that the flipped label is
/// likely under the perturbed model; all other entries are 0.
CorruptedDataset corrupt_sparse_adversarial(const PreferenceDataset& clean, const TabularReward& true_reward,
                                            std::size_t s, double C, std::uint64_t seed);

/// Each label flipped independently with probability `rate`. The implied
/// delta* uses the same |gap| + 2 rule without a cap.
CorruptedDataset random_flip(const PreferenceDataset& dataset, double rate, std::uint64_t seed,
                             const TabularReward& true_reward);

/// Relabels `pairs` from scratch under `spec` (the input labels are ignored).
/// clean, random_flip and sparse_adversarial start from Bradley-Terry draws;
/// stochastic, myopic and irrational are measured against the argmax labels.
CorruptedDataset apply_noise(const PreferenceDataset& pairs, const TabularReward& true_reward, const NoiseSpec& spec);

}  // namespace r3m
