#include "r3m/dpo.hpp"

#include <algorithm>
#include <cmath>

#include "r3m/error.hpp"
#include "r3m/solver.hpp"

namespace r3m {

using nlohmann::json;

SoftmaxPolicy::SoftmaxPolicy(Eigen::MatrixXd logits) : logits_(std::move(logits)) {
    if (logits_.rows() == 0 || logits_.cols() == 0) throw DomainError("SoftmaxPolicy: empty logit table");
    if (!logits_.allFinite()) throw DomainError("SoftmaxPolicy: non-finite logits");
}

SoftmaxPolicy SoftmaxPolicy::uniform(int num_states, int num_actions) {
    return SoftmaxPolicy(Eigen::MatrixXd::Zero(num_states, num_actions));
}

double SoftmaxPolicy::log_prob(int state, int action) const {
    if (state < 0 || state >= num_states() || action < 0 || action >= num_actions())
        throw DomainError("SoftmaxPolicy: state/action id out of range");
    const auto row = logits_.row(state);
    const double top = row.maxCoeff();
    const double lse = top + std::log((row.array() - top).exp().sum());
    return logits_(state, action) - lse;
}

double SoftmaxPolicy::prob(int state, int action) const { return std::exp(log_prob(state, action)); }

Eigen::MatrixXd SoftmaxPolicy::probabilities() const {
    Eigen::MatrixXd p(logits_.rows(), logits_.cols());
    for (int s = 0; s < num_states(); ++s)
        for (int a = 0; a < num_actions(); ++a) p(s, a) = prob(s, a);
    return p;
}

void DpoConfig::validate() const {
    if (!(beta > 0.0)) throw DomainError("DpoConfig: beta must be positive");
    if (robust && !(lambda > 0.0 && lambda < 1.0)) throw DomainError("DpoConfig: lambda must lie in (0, 1)");
    if (!(learning_rate > 0.0)) throw DomainError("DpoConfig: learning_rate must be positive");
    if (max_epochs == 0) throw DomainError("DpoConfig: max_epochs must be positive");
}

json DpoConfig::to_json() const {
    return {{"beta", beta},
            {"lambda", lambda},
            {"robust", robust},
            {"learning_rate", learning_rate},
            {"max_epochs", max_epochs},
            {"tolerance", tolerance},
            {"seed", seed},
            {"reference", reference ? "custom" : "uniform"}};
}

Eigen::VectorXd DpoReport::implied_reward_vector() const {
    Eigen::VectorXd v(implied_reward.size());
    for (Eigen::Index s = 0; s < implied_reward.rows(); ++s)
        for (Eigen::Index a = 0; a < implied_reward.cols(); ++a) v[s * implied_reward.cols() + a] = implied_reward(s, a);
    return v;
}

json DpoReport::to_json() const {
    json j;
    j["method"] = config.robust ? "r3m_dpo" : "dpo";
    std::vector<std::vector<double>> logits;
    std::vector<std::vector<double>> implied;
    for (Eigen::Index s = 0; s < implied_reward.rows(); ++s) {
        logits.emplace_back(policy.logits().row(s).begin(), policy.logits().row(s).end());
        implied.emplace_back(implied_reward.row(s).begin(), implied_reward.row(s).end());
    }
    j["policy_logits"] = logits;
    j["implied_reward"] = implied;
    j["delta_estimate"] = std::vector<double>(delta_estimate.deltas.begin(), delta_estimate.deltas.end());
    j["loss_trace"] = loss_trace;
    j["epochs_run"] = epochs_run;
    j["converged"] = converged;
    j["monotone"] = monotone;
    j["outlier_indices"] = outlier_set;
    j["config"] = config.to_json();
    j["seed"] = config.seed;
    return j;
}

double log_ratio_reward(const SoftmaxPolicy& policy, const SoftmaxPolicy& reference, int state, int action) {
    if (policy.num_states() != reference.num_states() || policy.num_actions() != reference.num_actions())
        throw DomainError("log_ratio_reward: policy and reference shapes differ");
    return policy.log_prob(state, action) - reference.log_prob(state, action);
}

namespace {

void check_inputs(const SoftmaxPolicy& policy, const SoftmaxPolicy& reference, const Eigen::VectorXd& delta,
                  const PreferenceDataset& dataset) {
    if (!dataset.is_bandit()) throw ModeError("DPO requires a bandit-mode dataset");
    if (policy.num_states() != dataset.num_states() || policy.num_actions() != dataset.num_actions() ||
        reference.num_states() != dataset.num_states() || reference.num_actions() != dataset.num_actions())
        throw DomainError("DPO: policy shape does not match the dataset");
    if (delta.size() != static_cast<Eigen::Index>(dataset.size())) throw DomainError("DPO: delta length mismatch");
}

/// r_pi(a_w|s) - r_pi(a_l|s) for pair i under its label.
double winner_log_ratio_diff(const SoftmaxPolicy& policy, const SoftmaxPolicy& reference, const PreferencePair& p) {
    const int w = p.label == 1 ? p.first_action() : p.second_action();
    const int l = p.label == 1 ? p.second_action() : p.first_action();
    // The log-normalizer of each softmax row cancels in the difference.
    return (policy.logits()(p.state(), w) - policy.logits()(p.state(), l)) -
           (reference.logits()(p.state(), w) - reference.logits()(p.state(), l));
}

}  // namespace

double dpo_objective(const SoftmaxPolicy& policy, const SoftmaxPolicy& reference, const Eigen::VectorXd& delta,
                     const PreferenceDataset& dataset, double beta, double lambda) {
    check_inputs(policy, reference, delta, dataset);
    std::vector<double> terms(dataset.size());
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        const double d = delta[static_cast<Eigen::Index>(i)];
        terms[i] = softplus(-(beta * winner_log_ratio_diff(policy, reference, dataset[i]) + d)) + lambda * std::abs(d);
    }
    return pairwise_sum(terms) / static_cast<double>(dataset.size());
}

Eigen::MatrixXd dpo_gradient(const SoftmaxPolicy& policy, const SoftmaxPolicy& reference,
                             const Eigen::VectorXd& delta, const PreferenceDataset& dataset, double beta) {
    check_inputs(policy, reference, delta, dataset);
    Eigen::MatrixXd g = Eigen::MatrixXd::Zero(policy.num_states(), policy.num_actions());
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        const PreferencePair& p = dataset[i];
        const double z = beta * winner_log_ratio_diff(policy, reference, p) + delta[static_cast<Eigen::Index>(i)];
        const double w = -beta * sigmoid(-z);
        const int win = p.label == 1 ? p.first_action() : p.second_action();
        const int lose = p.label == 1 ? p.second_action() : p.first_action();
        g(p.state(), win) += w;
        g(p.state(), lose) -= w;
    }
    return g / static_cast<double>(dataset.size());
}

double dpo_delta_update(double log_ratio_diff, double beta, double lambda) {
    if (!(lambda > 0.0 && lambda < 1.0)) throw DomainError("dpo_delta_update: lambda must lie in (0, 1)");
    return delta_closed_form(beta * log_ratio_diff, lambda);
}

DpoReport r3m_dpo_fit(const PreferenceDataset& dataset, const DpoConfig& config) {
    config.validate();
    if (!dataset.is_bandit()) throw ModeError("r3m_dpo_fit requires a bandit-mode dataset");
    const SoftmaxPolicy reference =
        config.reference.value_or(SoftmaxPolicy::uniform(dataset.num_states(), dataset.num_actions()));
    const double lambda = config.robust ? config.lambda : 0.0;
    const std::size_t n = dataset.size();

    const DesignMatrix design = build_design(dataset);
    const double lmax = design.max_eigenvalue();
    double eta = lmax > 0.0 ? config.learning_rate * 4.0 / (config.beta * config.beta * lmax) : config.learning_rate;

    SoftmaxPolicy policy = SoftmaxPolicy::uniform(dataset.num_states(), dataset.num_actions());
    Eigen::VectorXd delta = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
    auto refresh_delta = [&] {
        if (!config.robust) return;
        for (std::size_t i = 0; i < n; ++i)
            delta[static_cast<Eigen::Index>(i)] =
                dpo_delta_update(winner_log_ratio_diff(policy, reference, dataset[i]), config.beta, lambda);
    };
    auto recenter = [](Eigen::MatrixXd logits) {
        for (Eigen::Index s = 0; s < logits.rows(); ++s) logits.row(s).array() -= logits.row(s).mean();
        return logits;
    };

    DpoReport report{policy, {}, {}, 0, false, true, {}, {}, config};
    refresh_delta();
    double current = dpo_objective(policy, reference, delta, dataset, config.beta, lambda);
    report.loss_trace.push_back(current);
    for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
        const Eigen::MatrixXd g = dpo_gradient(policy, reference, delta, dataset, config.beta);
        if (g.squaredNorm() == 0.0) {
            report.converged = true;
            break;
        }
        SoftmaxPolicy candidate = policy;
        for (int halvings = 0;; ++halvings) {
            candidate = SoftmaxPolicy(recenter(policy.logits() - eta * g));
            const double trial = dpo_objective(candidate, reference, delta, dataset, config.beta, lambda);
            if (!std::isfinite(trial)) throw NumericalError("non-finite DPO objective", epoch);
            if (trial <= current || halvings == 60) break;
            eta *= 0.5;
        }
        policy = std::move(candidate);
        refresh_delta();
        const double next = dpo_objective(policy, reference, delta, dataset, config.beta, lambda);
        if (!std::isfinite(next)) throw NumericalError("non-finite DPO objective", epoch);
        report.loss_trace.push_back(next);
        const bool done = std::abs(current - next) <= config.tolerance * std::max(std::abs(current), 1e-300);
        current = next;
        if (done) {
            report.converged = true;
            break;
        }
    }

    report.policy = policy;
    report.delta_estimate = PerturbationVector{delta};
    for (Eigen::Index i = 0; i < delta.size(); ++i)
        if (delta[i] > 0.0) report.outlier_set.push_back(static_cast<std::size_t>(i));
    report.implied_reward.resize(dataset.num_states(), dataset.num_actions());
    for (int s = 0; s < dataset.num_states(); ++s)
        for (int a = 0; a < dataset.num_actions(); ++a)
            report.implied_reward(s, a) = config.beta * log_ratio_reward(policy, reference, s, a);
    report.epochs_run = report.loss_trace.size() - 1;
    for (std::size_t k = 1; k < report.loss_trace.size(); ++k)
        if (report.loss_trace[k] > report.loss_trace[k - 1] + 1e-9) report.monotone = false;
    return report;
}

}  // namespace r3m
