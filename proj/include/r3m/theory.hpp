#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <vector>

#include "json.hpp"
#include "r3m/data.hpp"
#include "r3m/likelihood.hpp"

namespace r3m {

/// Problem constants attached to an error report.
struct ProblemScale {
    std::size_t s = 0;  // sparsity of delta*
    int num_states = 0;
    int num_actions = 0;
    double B = 0.0;
    double C = 0.0;
};

struct ErrorReport {
    double reward_err = 0.0;  // ||R_hat - R*||^2_{Sigma0}
    double delta_err = 0.0;   // (1/n) ||delta_hat - delta*||_2^2
    double combined = 0.0;
    std::size_t n = 0;
    ProblemScale scale;
    double gamma = 0.0;
    /// (4 / gamma^2)(4 s / n + |S||A| / n), the bound's shape with C0 = 1.
    double theorem_rhs_shape = 0.0;

    nlohmann::json to_json() const;
};

/// Throws DomainError on dimension mismatch.
ErrorReport error_decompose(const Eigen::VectorXd& reward_hat, const Eigen::VectorXd& reward_star,
                            const Eigen::VectorXd& delta_hat, const Eigen::VectorXd& delta_star,
                            const DesignMatrix& design, const ProblemScale& scale);

/// combined / theorem_rhs_shape.
double theorem_bound_monitor(const ErrorReport& report);

/// Splits delta by the support of delta*: (delta_S, delta_{S^c}).
std::pair<Eigen::VectorXd, Eigen::VectorXd> split_support(const Eigen::VectorXd& delta,
                                                          const Eigen::VectorXd& delta_star);

/// Both sides of the error-decomposition inequality
///   gamma ||dR||^2_{Sigma0} + (gamma/n) ||d delta||^2
///     <= 2 lambda ||d delta_S||_1 + ||grad_R L(R*, delta*)||_{Sigma0^+} ||dR||_{Sigma0}
/// where lambda is the weight on ||delta||_1 next to the averaged likelihood.
struct ErrorInequalityAudit {
    double lhs = 0.0;
    double rhs = 0.0;
    double lambda = 0.0;
    double grad_lambda_bound = 0.0;  // ||grad_delta L(R_hat, delta*)||_inf, must be <= lambda

    bool holds(double tol) const noexcept { return lhs <= rhs + tol; }
};

ErrorInequalityAudit audit_error_inequality(const LikelihoodWorkspace& ws, const DesignMatrix& design,
                                            const Eigen::VectorXd& reward_hat, const Eigen::VectorXd& reward_star,
                                            const Eigen::VectorXd& delta_hat, const Eigen::VectorXd& delta_star,
                                            double objective_lambda, double gamma);

/// One draw for the score-at-the-truth check.
struct ScoreInstance {
    PreferenceDataset dataset;
    Eigen::VectorXd reward_star;
    Eigen::VectorXd delta_star;
};

struct GradRBoundResult {
    std::vector<double> norms;   // ||grad_R L(R*, delta*)||_{Sigma0^+} per instance
    double quantile = 0.0;       // empirical 1 - epsilon quantile
    double median = 0.0;
    double scale = 0.0;          // sqrt((|S||A| + log(1/epsilon)) / n)
    double c1_estimate = 0.0;    // quantile / scale
    bool passed = false;         // c1_estimate <= ratio_limit

    nlohmann::json to_json() const;
};

/// Throws InsufficientSampleError with fewer than 100 instances; all instances
/// must share n and the state/action sizes.
GradRBoundResult check_grad_R_bound(const std::vector<ScoreInstance>& instances, double epsilon,
                                    double ratio_limit = 10.0);

/// Empirical quantile with linear interpolation (type 7).
double empirical_quantile(std::vector<double> values, double q);

struct RateFit {
    std::vector<double> n_list;
    std::vector<double> mean_errors;
    double slope = 0.0;
    double intercept = 0.0;
    std::size_t seeds = 0;

    nlohmann::json to_json() const;
};

/// OLS of log(mean error) on log n. errors[k] holds the per-seed errors at
/// n_list[k]. Throws DomainError for fewer than 3 sizes, a non-increasing
/// n_list, fewer than `min_seeds` seeds, or a non-positive mean.
RateFit rate_fit(const std::vector<double>& n_list, const std::vector<std::vector<double>>& errors,
                 std::size_t min_seeds = 10);

/// OLS slope of ys on xs.
double ols_slope(const std::vector<double>& xs, const std::vector<double>& ys);

}  // namespace r3m
