#include "r3m/solver.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "r3m/error.hpp"
#include "r3m/rng.hpp"

namespace r3m {

using nlohmann::json;

namespace {

constexpr double kMonotoneSlack = 1e-9;
constexpr int kMaxHalvings = 60;

double delta_threshold(double lambda) {
    return lambda < 1.0 ? std::log((1.0 - lambda) / lambda) : -std::numeric_limits<double>::infinity();
}

}  // namespace

std::string to_string(ModelKind kind) { return kind == ModelKind::tabular ? "tabular" : "mlp"; }
std::string to_string(OptimizerMode mode) { return mode == OptimizerMode::full_batch ? "full_batch" : "stochastic"; }

void SolverConfig::validate() const {
    if (!(lambda > 0.0 && lambda <= 1.0)) throw DomainError("lambda must lie in (0, 1]");
    if (!(learning_rate > 0.0)) throw DomainError("learning_rate must be positive");
    if (max_epochs == 0) throw DomainError("max_epochs must be positive");
    if (!(tolerance >= 0.0)) throw DomainError("tolerance must be non-negative");
    if (batch_size == 0) throw DomainError("batch_size must be at least 1");
    if (projection == Projection::feasible_set && !(bound > 0.0))
        throw DomainError("bound B must be positive when projecting");
}

json SolverConfig::to_json() const {
    json j = {{"lambda", lambda},
              {"learning_rate", learning_rate},
              {"step_rule", step_rule == StepRule::fixed ? "fixed" : "lipschitz"},
              {"max_epochs", max_epochs},
              {"tolerance", tolerance},
              {"batch_size", batch_size},
              {"projection", projection == Projection::none ? "none" : "feasible_set"},
              {"bound", bound},
              {"seed", seed}};
    if (mode) j["mode"] = to_string(*mode);
    return j;
}

SolverConfig SolverConfig::from_json(const json& j) {
    SolverConfig c;
    c.lambda = j.value("lambda", c.lambda);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    const std::string rule = j.value("step_rule", std::string("lipschitz"));
    if (rule != "fixed" && rule != "lipschitz") throw DomainError("step_rule must be 'fixed' or 'lipschitz'");
    c.step_rule = rule == "fixed" ? StepRule::fixed : StepRule::lipschitz;
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.tolerance = j.value("tolerance", c.tolerance);
    c.batch_size = j.value("batch_size", c.batch_size);
    const std::string proj = j.value("projection", std::string("feasible_set"));
    if (proj != "none" && proj != "feasible_set") throw DomainError("projection must be 'none' or 'feasible_set'");
    c.projection = proj == "none" ? Projection::none : Projection::feasible_set;
    c.bound = j.value("bound", c.bound);
    c.seed = j.value("seed", c.seed);
    if (j.contains("mode")) {
        const std::string m = j.at("mode").get<std::string>();
        if (m != "full_batch" && m != "stochastic") throw DomainError("mode must be 'full_batch' or 'stochastic'");
        c.mode = m == "full_batch" ? OptimizerMode::full_batch : OptimizerMode::stochastic;
    }
    c.validate();
    return c;
}

json SolveReport::to_json() const {
    json j;
    j["method"] = method;
    j["model"] = {{"kind", to_string(model.kind)}, {"hidden_units", model.hidden_units}};
    j["reward_estimate"] = {{"num_states", reward_estimate.num_states},
                            {"num_actions", reward_estimate.num_actions},
                            {"values", std::vector<double>(reward_estimate.values.begin(), reward_estimate.values.end())}};
    if (network)
        j["network_params"] = std::vector<double>(network->params().begin(), network->params().end());
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

double delta_closed_form(double reward_diff, double lambda) {
    if (!(lambda > 0.0 && lambda < 1.0)) throw DomainError("delta_closed_form: lambda must lie in (0, 1)");
    return std::max(std::log(1.0 / lambda - 1.0) - reward_diff, 0.0);
}

double delta_update(double reward_diff, double lambda) {
    if (!(lambda > 0.0 && lambda <= 1.0)) throw DomainError("delta_update: lambda must lie in (0, 1]");
    return std::max(delta_threshold(lambda) - reward_diff, 0.0);
}

Eigen::VectorXd project_RB(const Eigen::VectorXd& values, double bound) {
    if (!(bound > 0.0)) throw DomainError("project_RB: B must be positive");
    if (!values.allFinite()) throw DomainError("project_RB: non-finite input");
    Eigen::VectorXd out = values.array() - values.mean();
    const double sq = out.squaredNorm();
    if (sq > bound) out *= std::sqrt(bound / sq);
    return out;
}

TabularReward project_RB(const TabularReward& reward, double bound) {
    TabularReward out = reward;
    out.values = project_RB(reward.values, bound);
    out.bound = bound;
    out.constrained = true;
    return out;
}

double penalized_objective(const Eigen::VectorXd& reward, const Eigen::VectorXd& delta, double lambda,
                           const LikelihoodWorkspace& ws) {
    return nll(reward, delta, ws) + lambda * delta.cwiseAbs().sum() / static_cast<double>(ws.num_samples());
}

namespace {

std::vector<std::size_t> positive_indices(const Eigen::VectorXd& delta) {
    std::vector<std::size_t> out;
    for (Eigen::Index i = 0; i < delta.size(); ++i)
        if (delta[i] > 0.0) out.push_back(static_cast<std::size_t>(i));
    return out;
}

bool relative_change_below(double previous, double current, double tol) {
    return std::abs(previous - current) <= tol * std::max(std::abs(previous), 1e-300);
}

void finish_trace(SolveReport& report) {
    report.epochs_run = report.loss_trace.empty() ? 0 : report.loss_trace.size() - 1;
    report.monotone = true;
    for (std::size_t k = 1; k < report.loss_trace.size(); ++k)
        if (report.loss_trace[k] > report.loss_trace[k - 1] + kMonotoneSlack) report.monotone = false;
}

/// Tabular fit shared by R3M and the MLE. When `robust` is false delta stays 0.
class TabularFit {
public:
    TabularFit(const PreferenceDataset& dataset, const SolverConfig& config, bool robust)
        : config_(config),
          robust_(robust),
          design_(build_design(dataset)),
          ws_(dataset, design_),
          n_(dataset.size()),
          reward_(Eigen::VectorXd::Zero(design_.dim())),
          delta_(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n_))) {}

    SolveReport run(const PreferenceDataset& dataset) {
        SolveReport report;
        report.config = config_;
        report.method = robust_ ? "r3m" : "mle";
        const OptimizerMode mode = config_.mode.value_or(OptimizerMode::full_batch);

        update_delta_all();
        report.loss_trace.push_back(objective(reward_, delta_));
        if (mode == OptimizerMode::full_batch)
            run_full_batch(report);
        else
            run_stochastic(report);

        update_delta_all();
        report.reward_estimate = TabularReward::zeros(dataset.num_states(), dataset.num_actions());
        report.reward_estimate.values = reward_;
        report.reward_estimate.bound = config_.bound;
        report.reward_estimate.constrained = config_.projection == Projection::feasible_set;
        report.delta_estimate = PerturbationVector{delta_};
        report.outlier_set = positive_indices(delta_);
        finish_trace(report);
        return report;
    }

private:
    double objective(const Eigen::VectorXd& r, const Eigen::VectorXd& d) const {
        return robust_ ? penalized_objective(r, d, config_.lambda, ws_) : nll(r, d, ws_);
    }

    void update_delta_all() {
        if (!robust_) return;
        for (std::size_t i = 0; i < n_; ++i)
            delta_[static_cast<Eigen::Index>(i)] = delta_update(ws_.oriented_diff(i, reward_), config_.lambda);
    }

    Eigen::VectorXd project(const Eigen::VectorXd& r) const {
        return config_.projection == Projection::feasible_set ? project_RB(r, config_.bound) : r;
    }

    double step_size() const {
        if (config_.step_rule == StepRule::fixed) return config_.learning_rate;
        const double lmax = design_.max_eigenvalue();
        return lmax > 0.0 ? config_.learning_rate * 4.0 / lmax : config_.learning_rate;
    }

    void run_full_batch(SolveReport& report) {
        double eta = step_size();
        double current = report.loss_trace.back();
        for (std::size_t epoch = 1; epoch <= config_.max_epochs; ++epoch) {
            const Eigen::VectorXd g = grad_R(reward_, delta_, ws_);
            if (g.squaredNorm() == 0.0) {
                report.converged = true;
                return;
            }
            // Backtracking: halve the step until the objective (delta fixed) does not increase.
            Eigen::VectorXd candidate;
            int halvings = 0;
            for (;; ++halvings) {
                const Eigen::VectorXd raw = reward_ - eta * g;
                if (!raw.allFinite()) {
                    if (halvings == kMaxHalvings) throw NumericalError("non-finite iterate", epoch);
                    eta *= 0.5;
                    continue;
                }
                candidate = project(raw);
                const double trial = objective(candidate, delta_);
                if (!std::isfinite(trial)) throw NumericalError("non-finite objective", epoch);
                if (trial <= current || halvings == kMaxHalvings) break;
                eta *= 0.5;
            }
            reward_ = std::move(candidate);
            update_delta_all();
            const double next = objective(reward_, delta_);
            if (!std::isfinite(next)) throw NumericalError("non-finite objective", epoch);
            report.loss_trace.push_back(next);
            const bool done = relative_change_below(current, next, config_.tolerance);
            current = next;
            if (done) {
                report.converged = true;
                return;
            }
        }
    }

    void run_stochastic(SolveReport& report) {
        Rng rng(derive_seed(config_.seed, {0x5364ULL}));
        std::vector<std::size_t> order(n_);
        std::iota(order.begin(), order.end(), std::size_t{0});
        const double eta = config_.learning_rate;
        double current = report.loss_trace.back();
        for (std::size_t epoch = 1; epoch <= config_.max_epochs; ++epoch) {
            rng.shuffle(order);
            for (std::size_t start = 0; start < n_; start += config_.batch_size) {
                const std::size_t stop = std::min(n_, start + config_.batch_size);
                Eigen::VectorXd g = Eigen::VectorXd::Zero(reward_.size());
                for (std::size_t k = start; k < stop; ++k) {
                    const std::size_t i = order[k];
                    const double diff = ws_.oriented_diff(i, reward_);
                    const double d = robust_ ? delta_update(diff, config_.lambda) : 0.0;
                    delta_[static_cast<Eigen::Index>(i)] = d;
                    ws_.scatter(i, -sigmoid(-(diff + d)), g);
                }
                const Eigen::VectorXd raw = reward_ - eta * g / static_cast<double>(stop - start);
                if (!raw.allFinite()) throw NumericalError("non-finite iterate", epoch);
                reward_ = project(raw);
            }
            update_delta_all();
            const double next = objective(reward_, delta_);
            if (!std::isfinite(next)) throw NumericalError("non-finite objective", epoch);
            report.loss_trace.push_back(next);
            const bool done = relative_change_below(current, next, config_.tolerance);
            current = next;
            if (done) {
                report.converged = true;
                return;
            }
        }
    }

    SolverConfig config_;
    bool robust_;
    DesignMatrix design_;
    LikelihoodWorkspace ws_;
    std::size_t n_;
    Eigen::VectorXd reward_;
    Eigen::VectorXd delta_;
};

class MlpFit {
public:
    MlpFit(const PreferenceDataset& dataset, const SolverConfig& config, const ModelSpec& model)
        : dataset_(dataset),
          config_(config),
          model_(model),
          net_(make_net(dataset, config, model)),
          delta_(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dataset.size()))) {}

    SolveReport run() {
        SolveReport report;
        report.config = config_;
        report.method = "r3m";
        report.model = model_;
        const OptimizerMode mode = config_.mode.value_or(OptimizerMode::stochastic);

        report.loss_trace.push_back(refresh_objective());
        if (mode == OptimizerMode::full_batch)
            run_full_batch(report);
        else
            run_stochastic(report);

        refresh_objective();
        report.reward_estimate = TabularReward::zeros(dataset_.num_states(), dataset_.num_actions());
        for (int s = 0; s < dataset_.num_states(); ++s)
            for (int a = 0; a < dataset_.num_actions(); ++a)
                report.reward_estimate.values[report.reward_estimate.index(s, a)] = net_.reward(s, a);
        report.network = net_;
        report.delta_estimate = PerturbationVector{delta_};
        report.outlier_set = positive_indices(delta_);
        finish_trace(report);
        return report;
    }

private:
    static Mlp make_net(const PreferenceDataset& dataset, const SolverConfig& config, const ModelSpec& model) {
        Rng rng(derive_seed(config.seed, {0x1417ULL}));
        return Mlp::random(dataset.num_states(), dataset.num_actions(), model.hidden_units, rng, model.init_scale);
    }

    /// Re-minimizes every delta at the current parameters and returns the objective.
    double refresh_objective() {
        const std::size_t n = dataset_.size();
        std::vector<double> terms(n);
        for (std::size_t i = 0; i < n; ++i) {
            const double diff = net_.oriented_diff(dataset_[i], dataset_.discount());
            const double d = delta_update(diff, config_.lambda);
            delta_[static_cast<Eigen::Index>(i)] = d;
            terms[i] = softplus(-(diff + d)) + config_.lambda * d;
        }
        return pairwise_sum(terms) / static_cast<double>(n);
    }

    double objective_fixed_delta(const Mlp& net) const {
        const std::size_t n = dataset_.size();
        std::vector<double> terms(n);
        for (std::size_t i = 0; i < n; ++i) {
            const double d = delta_[static_cast<Eigen::Index>(i)];
            terms[i] = softplus(-(net.oriented_diff(dataset_[i], dataset_.discount()) + d)) + config_.lambda * d;
        }
        return pairwise_sum(terms) / static_cast<double>(n);
    }

    Eigen::VectorXd batch_gradient(const std::vector<std::size_t>& idx, std::size_t start, std::size_t stop,
                                   bool refresh_delta) {
        Eigen::VectorXd g = Eigen::VectorXd::Zero(net_.num_params());
        for (std::size_t k = start; k < stop; ++k) {
            const std::size_t i = idx[k];
            const PreferencePair& pair = dataset_[i];
            if (refresh_delta)
                delta_[static_cast<Eigen::Index>(i)] =
                    delta_update(net_.oriented_diff(pair, dataset_.discount()), config_.lambda);
            g += mlp_backprop(net_, pair, delta_[static_cast<Eigen::Index>(i)], dataset_.discount());
        }
        return g / static_cast<double>(stop - start);
    }

    void run_stochastic(SolveReport& report) {
        Rng rng(derive_seed(config_.seed, {0x5364ULL}));
        const std::size_t n = dataset_.size();
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), std::size_t{0});
        double current = report.loss_trace.back();
        for (std::size_t epoch = 1; epoch <= config_.max_epochs; ++epoch) {
            rng.shuffle(order);
            for (std::size_t start = 0; start < n; start += config_.batch_size) {
                const std::size_t stop = std::min(n, start + config_.batch_size);
                net_.params() -= config_.learning_rate * batch_gradient(order, start, stop, true);
            }
            const double next = refresh_objective();
            if (!std::isfinite(next)) throw NumericalError("non-finite objective", epoch);
            report.loss_trace.push_back(next);
            const bool done = relative_change_below(current, next, config_.tolerance);
            current = next;
            if (done) {
                report.converged = true;
                return;
            }
        }
    }

    void run_full_batch(SolveReport& report) {
        const std::size_t n = dataset_.size();
        std::vector<std::size_t> all(n);
        std::iota(all.begin(), all.end(), std::size_t{0});
        double eta = config_.learning_rate;
        double current = report.loss_trace.back();
        for (std::size_t epoch = 1; epoch <= config_.max_epochs; ++epoch) {
            const Eigen::VectorXd g = batch_gradient(all, 0, n, false);
            Mlp candidate = net_;
            for (int halvings = 0;; ++halvings) {
                candidate.params() = net_.params() - eta * g;
                const double trial = objective_fixed_delta(candidate);
                if (!std::isfinite(trial)) throw NumericalError("non-finite objective", epoch);
                if (trial <= current || halvings == kMaxHalvings) break;
                eta *= 0.5;
            }
            net_ = std::move(candidate);
            const double next = refresh_objective();
            if (!std::isfinite(next)) throw NumericalError("non-finite objective", epoch);
            report.loss_trace.push_back(next);
            const bool done = relative_change_below(current, next, config_.tolerance);
            current = next;
            if (done) {
                report.converged = true;
                return;
            }
        }
    }

    const PreferenceDataset& dataset_;
    SolverConfig config_;
    ModelSpec model_;
    Mlp net_;
    Eigen::VectorXd delta_;
};

}  // namespace

SolveReport r3m_fit(const PreferenceDataset& dataset, const SolverConfig& config, const ModelSpec& model) {
    config.validate();
    if (model.kind == ModelKind::mlp) return MlpFit(dataset, config, model).run();
    return TabularFit(dataset, config, true).run(dataset);
}

SolveReport mle_fit(const PreferenceDataset& dataset, const SolverConfig& config) {
    config.validate();
    return TabularFit(dataset, config, false).run(dataset);
}

}  // namespace r3m
