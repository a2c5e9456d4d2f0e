#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "r3m/data.hpp"
#include "r3m/likelihood.hpp"
#include "r3m/mlp.hpp"
#include "r3m/reward.hpp"

namespace r3m {

enum class Projection { none, feasible_set };

/// full_batch: exact delta step for every sample, then one projected
/// gradient step on the reward (monotone). stochastic: per-sample
/// interleaved delta/reward updates over shuffled mini-batches.
enum class OptimizerMode { full_batch, stochastic };

/// lipschitz scales the learning rate by 4 / lambda_max(Sigma0), i.e. a
/// learning rate of 1 is the 1/L step for the tabular likelihood.
enum class StepRule { fixed, lipschitz };

enum class ModelKind { tabular, mlp };

struct ModelSpec {
    ModelKind kind = ModelKind::tabular;
    std::size_t hidden_units = 32;
    double init_scale = 1.0;
};

struct SolverConfig {
    /// Per-sample l1 weight: each sample contributes
    /// -log sigma(r_w - r_l + delta_i) + lambda * |delta_i|, averaged over n.
    /// Must lie in (0, 1]. lambda = 1 is the objective-scale weight 1/n at
    /// which the delta step is identically zero.
    double lambda = 0.5;
    double learning_rate = 1.0;
    StepRule step_rule = StepRule::lipschitz;
    std::size_t max_epochs = 5000;
    /// Stop when the relative change of the full objective over one epoch is below this.
    double tolerance = 1e-8;
    std::size_t batch_size = 64;
    Projection projection = Projection::feasible_set;
    /// B of the feasible set R_B.
    double bound = 1.0;
    std::uint64_t seed = 0;
    /// Defaults to full_batch for tabular models and stochastic for the MLP.
    std::optional<OptimizerMode> mode;

    /// Throws DomainError.
    void validate() const;
    nlohmann::json to_json() const;
    static SolverConfig from_json(const nlohmann::json& j);
};

struct SolveReport {
    std::string method;
    ModelSpec model;
    /// For the MLP, the network evaluated on every (s, a).
    TabularReward reward_estimate;
    std::optional<Mlp> network;
    PerturbationVector delta_estimate;
    /// loss_trace[k] is the objective after k epochs (index 0 is the start point).
    std::vector<double> loss_trace;
    std::size_t epochs_run = 0;
    bool converged = false;
    /// Whether loss_trace never increased by more than 1e-9.
    bool monotone = true;
    std::vector<std::size_t> outlier_set;
    SolverConfig config;

    nlohmann::json to_json() const;
};

/// max{log(1/lambda - 1) - reward_diff, 0}, the minimizer over delta >= 0 of
/// -log sigma(reward_diff + delta) + lambda * delta. Throws DomainError
/// unless 0 < lambda < 1.
double delta_closed_form(double reward_diff, double lambda);

/// Same minimizer, extended to lambda = 1 where it is 0 for every reward_diff.
double delta_update(double reward_diff, double lambda);

/// Euclidean projection onto {sum = 0} intersected with {||.||^2 <= B}:
/// subtract the mean, then rescale onto the sphere if outside it.
Eigen::VectorXd project_RB(const Eigen::VectorXd& values, double bound);
TabularReward project_RB(const TabularReward& reward, double bound);

/// (1/n) sum_i [-log sigma(o_i <x_i,R> + delta_i) + lambda * delta_i].
double penalized_objective(const Eigen::VectorXd& reward, const Eigen::VectorXd& delta, double lambda,
                           const LikelihoodWorkspace& ws);

/// Robust reward fit by alternating the closed-form delta step with
/// gradient steps on the reward. Throws NumericalError on a non-finite
/// objective and ModeError when a tabular fit is asked of segment data.
SolveReport r3m_fit(const PreferenceDataset& dataset, const SolverConfig& config, const ModelSpec& model = {});

/// Standard Bradley-Terry MLE (delta frozen at 0) by projected gradient descent.
SolveReport mle_fit(const PreferenceDataset& dataset, const SolverConfig& config);

std::string to_string(ModelKind kind);
std::string to_string(OptimizerMode mode);

}  // namespace r3m
