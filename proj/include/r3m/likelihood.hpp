#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <span>
#include <vector>

#include "r3m/data.hpp"
#include "r3m/reward.hpp"

namespace r3m {

/// Per-sample perturbation factors. `sparsity_bound` (s) and
/// `magnitude_bound` (C) are metadata for ground-truth vectors.
struct PerturbationVector {
    Eigen::VectorXd deltas;
    std::size_t sparsity_bound = 0;
    double magnitude_bound = 0.0;
    bool ground_truth = false;

    static PerturbationVector zeros(std::size_t n) {
        return PerturbationVector{Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n))};
    }

    std::size_t nonzeros() const noexcept {
        std::size_t k = 0;
        for (Eigen::Index i = 0; i < deltas.size(); ++i) k += deltas[i] != 0.0;
        return k;
    }

    /// ||delta||_0 <= s and ||delta||_inf <= C.
    bool satisfies_sparsity_assumption() const noexcept {
        return nonzeros() <= sparsity_bound &&
               (deltas.size() == 0 || deltas.cwiseAbs().maxCoeff() <= magnitude_bound);
    }
};

double sigmoid(double x) noexcept;
/// log sigma(x), computed as -softplus(-x).
double log_sigmoid(double x) noexcept;
/// log(1 + e^x) without overflow.
double softplus(double x) noexcept;

/// Deterministic pairwise (tree) summation.
double pairwise_sum(std::span<const double> values) noexcept;

/// sigma(reward_diff + delta). Inputs are clamped at +-36 so the result stays
/// strictly inside (0, 1). Throws DomainError on non-finite input.
double perturbed_bt_prob(double reward_diff, double delta);

/// e^x / (1 + e^x)^2 = sigma(x) sigma(-x).
double hessian_factor(double logit);

/// 1 / (2 + exp(-sqrt(2) B - C) + exp(sqrt(2) B + C)). B = C = 0 is accepted.
double gamma_constant(double bound, double magnitude);

/// Compact view of a bandit dataset for the likelihood: difference indices
/// from the design plus the label orientation o_i = +1 (y_i = 1) or -1.
/// The oriented logit is o_i <x_i, R> + delta_i.
class LikelihoodWorkspace {
public:
    LikelihoodWorkspace(const PreferenceDataset& dataset, const DesignMatrix& design);

    std::size_t num_samples() const noexcept { return diffs_.size(); }
    Eigen::Index dim() const noexcept { return dim_; }
    double orientation(std::size_t i) const noexcept { return orientation_[i]; }
    const std::vector<DesignMatrix::Diff>& diffs() const noexcept { return diffs_; }

    /// <x_i, R>, label-independent.
    double reward_diff(std::size_t i, const Eigen::VectorXd& reward) const noexcept {
        const auto& d = diffs_[i];
        return d.plus < 0 ? 0.0 : reward[d.plus] - reward[d.minus];
    }
    /// o_i <x_i, R>: the observed winner's reward minus the loser's.
    double oriented_diff(std::size_t i, const Eigen::VectorXd& reward) const noexcept {
        return orientation_[i] * reward_diff(i, reward);
    }
    double oriented_logit(std::size_t i, const Eigen::VectorXd& reward, const Eigen::VectorXd& delta) const noexcept {
        return oriented_diff(i, reward) + delta[static_cast<Eigen::Index>(i)];
    }

    /// Accumulates weight * o_i * x_i into `out`.
    void scatter(std::size_t i, double weight, Eigen::VectorXd& out) const noexcept {
        const auto& d = diffs_[i];
        if (d.plus < 0) return;
        const double w = weight * orientation_[i];
        out[d.plus] += w;
        out[d.minus] -= w;
    }

private:
    std::vector<DesignMatrix::Diff> diffs_;
    std::vector<double> orientation_;
    Eigen::Index dim_;
};

/// L(R, delta) = -(1/n) sum_i log sigma(o_i <x_i, R> + delta_i).
double nll(const Eigen::VectorXd& reward, const Eigen::VectorXd& delta, const LikelihoodWorkspace& ws);
double nll(const TabularReward& reward, const PerturbationVector& delta, const LikelihoodWorkspace& ws);

/// -(1/n) sum_i [1(y_i=1) / (1 + e^{<x_i,R> + d_i}) - 1(y_i=0) / (1 + e^{-<x_i,R> + d_i})] x_i
Eigen::VectorXd grad_R(const Eigen::VectorXd& reward, const Eigen::VectorXd& delta, const LikelihoodWorkspace& ws);
Eigen::VectorXd grad_R(const TabularReward& reward, const PerturbationVector& delta, const LikelihoodWorkspace& ws);

/// Coordinate i: -(1/n) (1 - sigma(oriented logit_i)); |.| <= 1/n always.
Eigen::VectorXd grad_delta(const Eigen::VectorXd& reward, const Eigen::VectorXd& delta, const LikelihoodWorkspace& ws);
Eigen::VectorXd grad_delta(const TabularReward& reward, const PerturbationVector& delta,
                           const LikelihoodWorkspace& ws);

}  // namespace r3m
