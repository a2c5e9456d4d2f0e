#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "json.hpp"
#include "r3m/data.hpp"
#include "r3m/likelihood.hpp"

namespace r3m {

/// Tabular softmax policy: pi(a|s) = softmax over the s-th row of the logits.
class SoftmaxPolicy {
public:
    explicit SoftmaxPolicy(Eigen::MatrixXd logits);

    static SoftmaxPolicy uniform(int num_states, int num_actions);

    int num_states() const noexcept { return static_cast<int>(logits_.rows()); }
    int num_actions() const noexcept { return static_cast<int>(logits_.cols()); }
    const Eigen::MatrixXd& logits() const noexcept { return logits_; }

    /// log pi(a|s) via log-sum-exp.
    double log_prob(int state, int action) const;
    double prob(int state, int action) const;
    Eigen::MatrixXd probabilities() const;

private:
    Eigen::MatrixXd logits_;
};

struct DpoConfig {
    double beta = 1.0;
    /// Per-sample l1 weight in (0, 1), as for the reward solver.
    double lambda = 0.5;
    /// false runs plain DPO: delta stays 0 and the l1 term vanishes.
    bool robust = true;
    /// Multiplier on the 1/L step, L = beta^2 lambda_max(Sigma0) / 4.
    double learning_rate = 1.0;
    std::size_t max_epochs = 5000;
    double tolerance = 1e-8;
    std::uint64_t seed = 0;
    /// Uniform when unset.
    std::optional<SoftmaxPolicy> reference;

    void validate() const;
    nlohmann::json to_json() const;
};

struct DpoReport {
    SoftmaxPolicy policy;
    PerturbationVector delta_estimate;
    std::vector<double> loss_trace;
    std::size_t epochs_run = 0;
    bool converged = false;
    bool monotone = true;
    std::vector<std::size_t> outlier_set;
    /// beta (log pi - log pi_ref) per (s, a); equals the reward up to a per-state constant.
    Eigen::MatrixXd implied_reward;
    DpoConfig config;

    /// implied_reward flattened state-major, matching TabularReward's layout.
    Eigen::VectorXd implied_reward_vector() const;
    nlohmann::json to_json() const;
};

/// log pi(a|s) - log pi_ref(a|s). Throws DomainError on invalid ids or shape mismatch.
double log_ratio_reward(const SoftmaxPolicy& policy, const SoftmaxPolicy& reference, int state, int action);

/// (1/n) sum_i [-log sigma(beta r_pi(a_w|s_i) - beta r_pi(a_l|s_i) + delta_i) + lambda delta_i],
/// winner/loser taken from each pair's label. lambda = 0 with delta = 0 is plain DPO.
double dpo_objective(const SoftmaxPolicy& policy, const SoftmaxPolicy& reference, const Eigen::VectorXd& delta,
                     const PreferenceDataset& dataset, double beta, double lambda);

/// Gradient of dpo_objective with respect to the policy logits (|S| x |A|).
Eigen::MatrixXd dpo_gradient(const SoftmaxPolicy& policy, const SoftmaxPolicy& reference,
                             const Eigen::VectorXd& delta, const PreferenceDataset& dataset, double beta);

/// max{log(1/lambda - 1) - beta * log_ratio_diff, 0}. Throws DomainError unless 0 < lambda < 1.
double dpo_delta_update(double log_ratio_diff, double beta, double lambda);

/// Alternates the closed-form delta step with gradient steps on the logits;
/// each row is re-centered after every step. Throws ModeError for
/// non-bandit data and NumericalError on a non-finite objective.
DpoReport r3m_dpo_fit(const PreferenceDataset& dataset, const DpoConfig& config);

}  // namespace r3m
