#include "r3m/likelihood.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "r3m/error.hpp"

namespace r3m {

double sigmoid(double x) noexcept {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double softplus(double x) noexcept { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double log_sigmoid(double x) noexcept { return -softplus(-x); }

double pairwise_sum(std::span<const double> values) noexcept {
    constexpr std::size_t block = 8;
    if (values.size() <= block) {
        double s = 0.0;
        for (double v : values) s += v;
        return s;
    }
    const std::size_t half = values.size() / 2;
    return pairwise_sum(values.first(half)) + pairwise_sum(values.subspan(half));
}

double perturbed_bt_prob(double reward_diff, double delta) {
    if (!std::isfinite(reward_diff) || !std::isfinite(delta))
        throw DomainError("perturbed_bt_prob: non-finite input");
    return sigmoid(std::clamp(reward_diff + delta, -36.0, 36.0));
}

double hessian_factor(double logit) {
    if (!std::isfinite(logit)) throw DomainError("hessian_factor: non-finite logit");
    // sigma(x) sigma(-x) is even; evaluate on -|x| where e^x does not overflow.
    const double e = std::exp(-std::abs(logit));
    return e / ((1.0 + e) * (1.0 + e));
}

double gamma_constant(double bound, double magnitude) {
    if (!(bound >= 0.0) || !(magnitude >= 0.0))
        throw DomainError("gamma_constant: B and C must be non-negative");
    const double edge = std::numbers::sqrt2 * bound + magnitude;
    return 1.0 / (2.0 + std::exp(-edge) + std::exp(edge));
}

LikelihoodWorkspace::LikelihoodWorkspace(const PreferenceDataset& dataset, const DesignMatrix& design)
    : diffs_(design.diffs()), dim_(design.dim()) {
    if (design.num_samples() != dataset.size())
        throw DomainError("LikelihoodWorkspace: design does not match dataset");
    orientation_.reserve(dataset.size());
    for (const auto& p : dataset.pairs()) orientation_.push_back(p.label == 1 ? 1.0 : -1.0);
}

namespace {

void check_dims(const Eigen::VectorXd& reward, const Eigen::VectorXd& delta, const LikelihoodWorkspace& ws,
                const char* op) {
    if (reward.size() != ws.dim() || delta.size() != static_cast<Eigen::Index>(ws.num_samples()))
        throw DomainError(std::string(op) + ": dimension mismatch");
}

}  // namespace

double nll(const Eigen::VectorXd& reward, const Eigen::VectorXd& delta, const LikelihoodWorkspace& ws) {
    check_dims(reward, delta, ws, "nll");
    const std::size_t n = ws.num_samples();
    std::vector<double> terms(n);
    for (std::size_t i = 0; i < n; ++i) terms[i] = softplus(-ws.oriented_logit(i, reward, delta));
    return pairwise_sum(terms) / static_cast<double>(n);
}

double nll(const TabularReward& reward, const PerturbationVector& delta, const LikelihoodWorkspace& ws) {
    return nll(reward.values, delta.deltas, ws);
}

Eigen::VectorXd grad_R(const Eigen::VectorXd& reward, const Eigen::VectorXd& delta, const LikelihoodWorkspace& ws) {
    check_dims(reward, delta, ws, "grad_R");
    const std::size_t n = ws.num_samples();
    Eigen::VectorXd g = Eigen::VectorXd::Zero(ws.dim());
    // For y=1: 1/(1+e^{<x,R>+d}) = sigma(-logit); for y=0 the same with the
    // oriented logit, entering with a minus sign through o_i.
    for (std::size_t i = 0; i < n; ++i) ws.scatter(i, sigmoid(-ws.oriented_logit(i, reward, delta)), g);
    return -g / static_cast<double>(n);
}

Eigen::VectorXd grad_R(const TabularReward& reward, const PerturbationVector& delta, const LikelihoodWorkspace& ws) {
    return grad_R(reward.values, delta.deltas, ws);
}

Eigen::VectorXd grad_delta(const Eigen::VectorXd& reward, const Eigen::VectorXd& delta,
                           const LikelihoodWorkspace& ws) {
    check_dims(reward, delta, ws, "grad_delta");
    const std::size_t n = ws.num_samples();
    Eigen::VectorXd g(static_cast<Eigen::Index>(n));
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i)
        g[static_cast<Eigen::Index>(i)] = -inv_n * sigmoid(-ws.oriented_logit(i, reward, delta));
    return g;
}

Eigen::VectorXd grad_delta(const TabularReward& reward, const PerturbationVector& delta,
                           const LikelihoodWorkspace& ws) {
    return grad_delta(reward.values, delta.deltas, ws);
}

}  // namespace r3m
