#include "r3m/theory.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "r3m/error.hpp"

namespace r3m {

using nlohmann::json;

json ErrorReport::to_json() const {
    return {{"reward_err", reward_err},
            {"delta_err", delta_err},
            {"combined", combined},
            {"n", n},
            {"s", scale.s},
            {"num_states", scale.num_states},
            {"num_actions", scale.num_actions},
            {"B", scale.B},
            {"C", scale.C},
            {"gamma", gamma},
            {"theorem_rhs_shape", theorem_rhs_shape}};
}

ErrorReport error_decompose(const Eigen::VectorXd& reward_hat, const Eigen::VectorXd& reward_star,
                            const Eigen::VectorXd& delta_hat, const Eigen::VectorXd& delta_star,
                            const DesignMatrix& design, const ProblemScale& scale) {
    if (reward_hat.size() != reward_star.size() || reward_hat.size() != design.dim())
        throw DomainError("error_decompose: reward dimension mismatch");
    if (delta_hat.size() != delta_star.size() ||
        delta_hat.size() != static_cast<Eigen::Index>(design.num_samples()))
        throw DomainError("error_decompose: delta dimension mismatch");

    ErrorReport r;
    r.n = design.num_samples();
    r.scale = scale;
    const double rn = sigma_norm(reward_hat - reward_star, design);
    r.reward_err = rn * rn;
    r.delta_err = (delta_hat - delta_star).squaredNorm() / static_cast<double>(r.n);
    r.combined = r.reward_err + r.delta_err;
    r.gamma = gamma_constant(scale.B, scale.C);
    const double n = static_cast<double>(r.n);
    r.theorem_rhs_shape = 4.0 / (r.gamma * r.gamma) *
                          (4.0 * static_cast<double>(scale.s) / n +
                           static_cast<double>(scale.num_states) * scale.num_actions / n);
    return r;
}

double theorem_bound_monitor(const ErrorReport& report) { return report.combined / report.theorem_rhs_shape; }

std::pair<Eigen::VectorXd, Eigen::VectorXd> split_support(const Eigen::VectorXd& delta,
                                                          const Eigen::VectorXd& delta_star) {
    if (delta.size() != delta_star.size()) throw DomainError("split_support: dimension mismatch");
    Eigen::VectorXd on = Eigen::VectorXd::Zero(delta.size());
    Eigen::VectorXd off = Eigen::VectorXd::Zero(delta.size());
    for (Eigen::Index i = 0; i < delta.size(); ++i) (delta_star[i] != 0.0 ? on : off)[i] = delta[i];
    return {on, off};
}

ErrorInequalityAudit audit_error_inequality(const LikelihoodWorkspace& ws, const DesignMatrix& design,
                                            const Eigen::VectorXd& reward_hat, const Eigen::VectorXd& reward_star,
                                            const Eigen::VectorXd& delta_hat, const Eigen::VectorXd& delta_star,
                                            double objective_lambda, double gamma) {
    const double n = static_cast<double>(ws.num_samples());
    const Eigen::VectorXd dR = reward_hat - reward_star;
    const Eigen::VectorXd dd = delta_hat - delta_star;
    const double r_norm = sigma_norm(dR, design);

    ErrorInequalityAudit audit;
    audit.lambda = objective_lambda;
    audit.lhs = gamma * r_norm * r_norm + gamma / n * dd.squaredNorm();
    const Eigen::VectorXd dd_support = split_support(dd, delta_star).first;
    const double score = sigma_dagger_norm(grad_R(reward_star, delta_star, ws), design);
    audit.rhs = 2.0 * objective_lambda * dd_support.lpNorm<1>() + score * r_norm;
    audit.grad_lambda_bound = grad_delta(reward_hat, delta_star, ws).lpNorm<Eigen::Infinity>();
    return audit;
}

double empirical_quantile(std::vector<double> values, double q) {
    if (values.empty()) throw DomainError("empirical_quantile: empty input");
    std::sort(values.begin(), values.end());
    const double pos = q * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return values[lo] + frac * (values[hi] - values[lo]);
}

json GradRBoundResult::to_json() const {
    return {{"instances", norms.size()}, {"quantile", quantile}, {"median", median},
            {"scale", scale},            {"c1_estimate", c1_estimate}, {"passed", passed}};
}

GradRBoundResult check_grad_R_bound(const std::vector<ScoreInstance>& instances, double epsilon, double ratio_limit) {
    if (instances.size() < 100)
        throw InsufficientSampleError("check_grad_R_bound: at least 100 instances are required");
    if (!(epsilon > 0.0 && epsilon < 1.0)) throw DomainError("check_grad_R_bound: epsilon must lie in (0, 1)");

    const std::size_t n = instances.front().dataset.size();
    const std::size_t dim = instances.front().dataset.dim();
    GradRBoundResult out;
    out.norms.reserve(instances.size());
    for (const ScoreInstance& inst : instances) {
        if (inst.dataset.size() != n || inst.dataset.dim() != dim)
            throw DomainError("check_grad_R_bound: instances must share n and |S||A|");
        const DesignMatrix design = build_design(inst.dataset);
        const LikelihoodWorkspace ws(inst.dataset, design);
        out.norms.push_back(sigma_dagger_norm(grad_R(inst.reward_star, inst.delta_star, ws), design));
    }
    out.quantile = empirical_quantile(out.norms, 1.0 - epsilon);
    out.median = empirical_quantile(out.norms, 0.5);
    out.scale = std::sqrt((static_cast<double>(dim) + std::log(1.0 / epsilon)) / static_cast<double>(n));
    out.c1_estimate = out.quantile / out.scale;
    out.passed = out.c1_estimate <= ratio_limit;
    return out;
}

double ols_slope(const std::vector<double>& xs, const std::vector<double>& ys) {
    if (xs.size() != ys.size() || xs.size() < 2) throw DomainError("ols_slope: need at least two paired points");
    const double k = static_cast<double>(xs.size());
    const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / k;
    const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / k;
    double sxy = 0.0;
    double sxx = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        sxy += (xs[i] - mx) * (ys[i] - my);
        sxx += (xs[i] - mx) * (xs[i] - mx);
    }
    if (sxx == 0.0) throw DomainError("ols_slope: degenerate abscissae");
    return sxy / sxx;
}

json RateFit::to_json() const {
    return {{"n_list", n_list}, {"mean_errors", mean_errors}, {"slope", slope}, {"intercept", intercept},
            {"seeds", seeds}};
}

RateFit rate_fit(const std::vector<double>& n_list, const std::vector<std::vector<double>>& errors,
                 std::size_t min_seeds) {
    if (n_list.size() < 3) throw DomainError("rate_fit: at least 3 sample sizes are required");
    if (errors.size() != n_list.size()) throw DomainError("rate_fit: one error list per sample size is required");
    for (std::size_t k = 1; k < n_list.size(); ++k)
        if (!(n_list[k] > n_list[k - 1])) throw DomainError("rate_fit: n_list must be strictly increasing");

    RateFit fit;
    fit.n_list = n_list;
    fit.seeds = errors.front().size();
    std::vector<double> lx;
    std::vector<double> ly;
    for (std::size_t k = 0; k < n_list.size(); ++k) {
        if (errors[k].size() < min_seeds) throw DomainError("rate_fit: too few seeds per sample size");
        fit.seeds = std::min(fit.seeds, errors[k].size());
        const double mean = std::accumulate(errors[k].begin(), errors[k].end(), 0.0) /
                            static_cast<double>(errors[k].size());
        if (!(mean > 0.0) || !std::isfinite(mean)) throw DomainError("rate_fit: mean error must be positive");
        fit.mean_errors.push_back(mean);
        lx.push_back(std::log(n_list[k]));
        ly.push_back(std::log(mean));
    }
    fit.slope = ols_slope(lx, ly);
    const double mx = std::accumulate(lx.begin(), lx.end(), 0.0) / static_cast<double>(lx.size());
    const double my = std::accumulate(ly.begin(), ly.end(), 0.0) / static_cast<double>(ly.size());
    fit.intercept = my - fit.slope * mx;
    return fit;
}

}  // namespace r3m
