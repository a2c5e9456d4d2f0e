#include "r3m/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "r3m/dpo.hpp"
#include "r3m/error.hpp"
#include "r3m/rng.hpp"

#ifndef R3M_VERSION
#define R3M_VERSION "0.1.0"
#endif

namespace r3m {

using nlohmann::json;

namespace {

constexpr std::uint64_t kRewardStream = 0x52;
constexpr std::uint64_t kPairStream = 0x50;
constexpr std::uint64_t kNoiseStream = 0x4e;
constexpr std::uint64_t kSolverStream = 0x53;

std::string fmt(double x) {
    if (std::isnan(x)) return "nan";
    if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

double parse_double(const std::string& s) {
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    return std::stod(s);
}

// ---- config parsing helpers -------------------------------------------------

std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

void require_object(const json& j, const std::string& path) {
    if (!j.is_object()) throw ConfigError(path.empty() ? "<root>" : path, "expected an object");
}

void check_keys(const json& j, const std::string& path, std::initializer_list<const char*> allowed) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* a : allowed) ok = ok || it.key() == a;
        if (!ok) throw ConfigError(join(path, it.key()), "unknown field");
    }
}

double get_number(const json& j, const std::string& key, const std::string& path, double fallback) {
    if (!j.contains(key)) return fallback;
    const json& v = j.at(key);
    if (!v.is_number()) throw ConfigError(join(path, key), "expected a number");
    const double x = v.get<double>();
    if (!std::isfinite(x)) throw ConfigError(join(path, key), "must be finite");
    return x;
}

std::uint64_t get_count(const json& j, const std::string& key, const std::string& path, std::uint64_t fallback) {
    if (!j.contains(key)) return fallback;
    const json& v = j.at(key);
    if (v.is_number_unsigned()) return v.get<std::uint64_t>();
    if (v.is_number_integer()) {
        if (v.get<std::int64_t>() < 0) throw ConfigError(join(path, key), "must be non-negative");
        return static_cast<std::uint64_t>(v.get<std::int64_t>());
    }
    throw ConfigError(join(path, key), "expected a non-negative integer");
}

bool get_bool(const json& j, const std::string& key, const std::string& path, bool fallback) {
    if (!j.contains(key)) return fallback;
    if (!j.at(key).is_boolean()) throw ConfigError(join(path, key), "expected true or false");
    return j.at(key).get<bool>();
}

std::string get_string(const json& j, const std::string& key, const std::string& path, const std::string& fallback) {
    if (!j.contains(key)) return fallback;
    if (!j.at(key).is_string()) throw ConfigError(join(path, key), "expected a string");
    return j.at(key).get<std::string>();
}

Method method_from_string(const std::string& s, const std::string& path) {
    if (s == "mle") return Method::mle;
    if (s == "r3m") return Method::r3m;
    if (s == "dpo") return Method::dpo;
    if (s == "r3m_dpo") return Method::r3m_dpo;
    throw ConfigError(path, "unknown method '" + s + "' (expected mle, r3m, dpo or r3m_dpo)");
}

bool valid_name(const std::string& s) {
    if (s.empty()) return false;
    return std::all_of(s.begin(), s.end(), [](char c) {
        return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_' || c == '-';
    });
}

MethodConfig parse_method(const json& j, const std::string& path, double bound) {
    require_object(j, path);
    check_keys(j, path,
               {"name", "method", "lambda", "beta", "learning_rate", "step_rule", "max_epochs", "tolerance",
                "batch_size", "projection", "mode", "model", "hidden_units", "init_scale"});
    MethodConfig m;
    m.method = method_from_string(get_string(j, "method", path, "r3m"), join(path, "method"));
    m.name = get_string(j, "name", path, to_string(m.method));
    if (!valid_name(m.name)) throw ConfigError(join(path, "name"), "names may only use letters, digits, '_' and '-'");

    if (j.contains("lambda")) {
        const json& l = j.at("lambda");
        if (l.is_string()) {
            if (l.get<std::string>() != "theory")
                throw ConfigError(join(path, "lambda"), "expected a number or \"theory\"");
            if (m.method == Method::r3m_dpo)
                throw ConfigError(join(path, "lambda"), "\"theory\" gives lambda = 1, outside (0, 1) for r3m_dpo");
            m.theory_lambda = true;
            m.lambda = 1.0;
        } else {
            m.lambda = get_number(j, "lambda", path, m.lambda);
        }
    }
    m.beta = get_number(j, "beta", path, m.beta);

    SolverConfig& s = m.solver;
    s.lambda = m.method == Method::mle ? 1.0 : m.lambda;
    s.learning_rate = get_number(j, "learning_rate", path, s.learning_rate);
    const std::string rule = get_string(j, "step_rule", path, "lipschitz");
    if (rule != "fixed" && rule != "lipschitz") throw ConfigError(join(path, "step_rule"), "expected fixed or lipschitz");
    s.step_rule = rule == "fixed" ? StepRule::fixed : StepRule::lipschitz;
    s.max_epochs = get_count(j, "max_epochs", path, s.max_epochs);
    s.tolerance = get_number(j, "tolerance", path, s.tolerance);
    s.batch_size = get_count(j, "batch_size", path, s.batch_size);
    const std::string proj = get_string(j, "projection", path, "feasible_set");
    if (proj != "none" && proj != "feasible_set")
        throw ConfigError(join(path, "projection"), "expected none or feasible_set");
    s.projection = proj == "none" ? Projection::none : Projection::feasible_set;
    if (j.contains("mode")) {
        const std::string mode = get_string(j, "mode", path, "");
        if (mode != "full_batch" && mode != "stochastic")
            throw ConfigError(join(path, "mode"), "expected full_batch or stochastic");
        s.mode = mode == "full_batch" ? OptimizerMode::full_batch : OptimizerMode::stochastic;
    }
    s.bound = bound;

    const std::string model = get_string(j, "model", path, "tabular");
    if (model != "tabular" && model != "mlp") throw ConfigError(join(path, "model"), "expected tabular or mlp");
    m.model.kind = model == "mlp" ? ModelKind::mlp : ModelKind::tabular;
    m.model.hidden_units = get_count(j, "hidden_units", path, m.model.hidden_units);
    m.model.init_scale = get_number(j, "init_scale", path, m.model.init_scale);
    if (m.model.kind == ModelKind::mlp && (m.method == Method::dpo || m.method == Method::r3m_dpo))
        throw ConfigError(join(path, "model"), "the policy methods are tabular only");
    if (m.model.hidden_units == 0) throw ConfigError(join(path, "hidden_units"), "must be positive");

    if (m.method == Method::dpo || m.method == Method::r3m_dpo) {
        if (!(m.beta > 0.0)) throw ConfigError(join(path, "beta"), "must be positive");
        if (m.method == Method::r3m_dpo && !(m.lambda > 0.0 && m.lambda < 1.0))
            throw ConfigError(join(path, "lambda"), "must lie in (0, 1)");
    }
    try {
        s.validate();
    } catch (const DomainError& e) {
        throw ConfigError(path, e.what());
    }
    return m;
}

json method_to_json(const MethodConfig& m) {
    json j;
    j["name"] = m.name;
    j["method"] = to_string(m.method);
    if (m.theory_lambda)
        j["lambda"] = "theory";
    else
        j["lambda"] = m.lambda;
    j["beta"] = m.beta;
    j["learning_rate"] = m.solver.learning_rate;
    j["step_rule"] = m.solver.step_rule == StepRule::fixed ? "fixed" : "lipschitz";
    j["max_epochs"] = m.solver.max_epochs;
    j["tolerance"] = m.solver.tolerance;
    j["batch_size"] = m.solver.batch_size;
    j["projection"] = m.solver.projection == Projection::none ? "none" : "feasible_set";
    if (m.solver.mode) j["mode"] = to_string(*m.solver.mode);
    j["model"] = to_string(m.model.kind);
    j["hidden_units"] = m.model.hidden_units;
    j["init_scale"] = m.model.init_scale;
    return j;
}

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

// ---- grid cells -------------------------------------------------------------

struct Cell {
    std::size_t n_index;
    std::size_t seed_index;
};

std::vector<RunRow> run_cell(const ExperimentConfig& cfg, const Cell& cell) {
    const std::size_t n = cfg.n_list[cell.n_index];
    const std::uint64_t run_seed = derive_seed(cfg.seed, {cell.seed_index});
    const std::uint64_t reward_seed = cfg.reward_seed ? derive_seed(*cfg.reward_seed, {cell.seed_index})
                                                      : derive_seed(run_seed, {kRewardStream});
    const TabularReward truth = generate_true_reward(cfg.num_states, cfg.num_actions, cfg.bound, reward_seed);
    const PreferenceDataset pairs =
        sample_bandit_pairs(cfg.num_states, cfg.num_actions, n, derive_seed(run_seed, {kPairStream, n}));

    NoiseSpec noise = cfg.noise;
    noise.seed = derive_seed(run_seed, {kNoiseStream, n});
    if (noise.kind == NoiseKind::sparse_adversarial) noise.s = std::min(cfg.sparsity.resolve(n), n);
    const CorruptedDataset data = apply_noise(pairs, truth, noise);

    const DesignMatrix design = build_design(data.dataset);
    const LikelihoodWorkspace ws(data.dataset, design);
    const Eigen::VectorXd& delta_star = data.record.implied_delta_star.deltas;

    ProblemScale scale;
    scale.s = data.record.implied_delta_star.nonzeros();
    scale.num_states = cfg.num_states;
    scale.num_actions = cfg.num_actions;
    scale.B = cfg.bound;
    if (noise.kind == NoiseKind::sparse_adversarial)
        scale.C = noise.C;
    else
        scale.C = delta_star.size() == 0 ? 0.0 : delta_star.cwiseAbs().maxCoeff();
    if (!std::isfinite(scale.C)) scale.C = 0.0;

    const std::set<std::size_t> flipped(data.record.flipped_indices.begin(), data.record.flipped_indices.end());

    std::vector<RunRow> rows;
    for (std::size_t mi = 0; mi < cfg.methods.size(); ++mi) {
        const MethodConfig& m = cfg.methods[mi];
        RunRow row;
        row.method = m.name;
        row.n = n;
        row.seed_index = cell.seed_index;
        row.seed = run_seed;
        row.flipped = flipped.size();

        Eigen::VectorXd reward_hat;
        Eigen::VectorXd delta_hat;
        std::vector<std::size_t> outliers;
        double objective_lambda = std::numeric_limits<double>::quiet_NaN();

        if (m.method == Method::mle || m.method == Method::r3m) {
            SolverConfig sc = m.solver;
            sc.seed = derive_seed(run_seed, {kSolverStream, n, mi});
            const SolveReport rep = m.method == Method::mle ? mle_fit(data.dataset, sc)
                                                            : r3m_fit(data.dataset, sc, m.model);
            reward_hat = rep.reward_estimate.values;
            delta_hat = rep.delta_estimate.deltas;
            outliers = rep.outlier_set;
            row.epochs = rep.epochs_run;
            row.converged = rep.converged;
            row.monotone = rep.monotone;
            objective_lambda = sc.lambda / static_cast<double>(n);
        } else {
            DpoConfig dc;
            dc.beta = m.beta;
            dc.lambda = m.method == Method::r3m_dpo ? m.lambda : 0.5;
            dc.robust = m.method == Method::r3m_dpo;
            dc.learning_rate = m.solver.learning_rate;
            dc.max_epochs = m.solver.max_epochs;
            dc.tolerance = m.solver.tolerance;
            dc.seed = derive_seed(run_seed, {kSolverStream, n, mi});
            const DpoReport rep = r3m_dpo_fit(data.dataset, dc);
            reward_hat = rep.implied_reward_vector();
            delta_hat = rep.delta_estimate.deltas;
            outliers = rep.outlier_set;
            row.epochs = rep.epochs_run;
            row.converged = rep.converged;
            row.monotone = rep.monotone;
        }

        row.error = error_decompose(reward_hat, truth.values, delta_hat, delta_star, design, scale);
        row.bound_ratio = theorem_bound_monitor(row.error);
        if (cfg.error_inequality && std::isfinite(objective_lambda) && m.model.kind == ModelKind::tabular &&
            delta_star.allFinite()) {
            const ErrorInequalityAudit audit = audit_error_inequality(ws, design, reward_hat, truth.values, delta_hat,
                                                                      delta_star, objective_lambda, row.error.gamma);
            row.audit_lhs = audit.lhs;
            row.audit_rhs = audit.rhs;
            row.audit_holds = audit.holds(1e-6);
        } else {
            row.audit_lhs = std::numeric_limits<double>::quiet_NaN();
            row.audit_rhs = std::numeric_limits<double>::quiet_NaN();
        }
        row.outliers = outliers.size();
        if (outliers.empty()) {
            row.outlier_precision = std::numeric_limits<double>::quiet_NaN();
        } else {
            std::size_t hit = 0;
            for (std::size_t i : outliers) hit += flipped.count(i);
            row.outlier_precision = static_cast<double>(hit) / static_cast<double>(outliers.size());
        }
        row.sign_agreement = sign_agreement(reward_hat, truth);
        rows.push_back(std::move(row));
    }
    return rows;
}

std::vector<MethodSummary> summarize(const ExperimentConfig& cfg, const std::vector<RunRow>& rows) {
    std::vector<MethodSummary> out;
    std::vector<double> ns(cfg.n_list.begin(), cfg.n_list.end());
    for (const MethodConfig& m : cfg.methods) {
        MethodSummary sum;
        sum.method = m.name;
        std::vector<std::vector<double>> reward(ns.size()), combined(ns.size()), ratio(ns.size());
        for (const RunRow& r : rows) {
            if (r.method != m.name) continue;
            const auto k = static_cast<std::size_t>(
                std::find(cfg.n_list.begin(), cfg.n_list.end(), r.n) - cfg.n_list.begin());
            reward[k].push_back(r.error.reward_err);
            combined[k].push_back(r.error.combined);
            ratio[k].push_back(r.bound_ratio);
            if (!r.audit_holds) ++sum.audit_violations;
        }
        if (cfg.rate_fit) {
            try {
                sum.reward_rate = rate_fit(ns, reward, 10);
                sum.combined_rate = rate_fit(ns, combined, 10);
            } catch (const DomainError&) {
                sum.reward_rate.reset();
                sum.combined_rate.reset();
            }
        }
        if (cfg.bound_monitor) {
            std::vector<double> logn;
            for (std::size_t k = 0; k < ns.size(); ++k) {
                double mean = 0.0;
                for (double v : ratio[k]) mean += v;
                sum.mean_bound_ratio.push_back(ratio[k].empty() ? 0.0 : mean / static_cast<double>(ratio[k].size()));
                logn.push_back(std::log(ns[k]));
            }
            if (ns.size() >= 2) sum.bound_trend_slope = ols_slope(logn, sum.mean_bound_ratio);
        }
        out.push_back(std::move(sum));
    }
    return out;
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream ss(line);
    while (std::getline(ss, cur, ',')) out.push_back(cur);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

}  // namespace

// ---- synthetic problems -------------------------------------------------------

TabularReward generate_true_reward(int num_states, int num_actions, double bound, std::uint64_t seed, double fill) {
    if (num_states < 1 || num_actions < 2) throw DomainError("need at least one state and two actions");
    if (!(bound > 0.0)) throw DomainError("bound must be positive");
    if (!(fill > 0.0 && fill <= 1.0)) throw DomainError("fill must lie in (0, 1]");
    TabularReward r = TabularReward::zeros(num_states, num_actions);
    r.bound = bound;
    r.constrained = true;
    Rng rng(seed);
    for (Eigen::Index i = 0; i < r.values.size(); ++i) r.values[i] = rng.normal();
    r.values.array() -= r.values.mean();
    const double norm2 = r.values.squaredNorm();
    if (norm2 > 0.0) r.values *= std::sqrt(fill * bound / norm2);
    return r;
}

PreferenceDataset sample_bandit_pairs(int num_states, int num_actions, std::size_t n, std::uint64_t seed) {
    if (num_states < 1 || num_actions < 2) throw DomainError("need at least one state and two actions");
    Rng rng(seed);
    std::vector<PreferencePair> pairs;
    pairs.reserve(n);
    const auto S = static_cast<std::uint64_t>(num_states);
    const auto A = static_cast<std::uint64_t>(num_actions);
    for (std::size_t i = 0; i < n; ++i) {
        const auto s = static_cast<int>(rng.below(S));
        const auto a1 = rng.below(A);
        const auto a2 = (a1 + 1 + rng.below(A - 1)) % A;
        pairs.push_back(PreferencePair::bandit(s, static_cast<int>(a1), static_cast<int>(a2), 1));
    }
    return PreferenceDataset(std::move(pairs), num_states, num_actions);
}

double sign_agreement(const Eigen::VectorXd& estimate, const TabularReward& truth) {
    if (estimate.size() != truth.dim()) throw DomainError("sign_agreement: dimension mismatch");
    std::size_t total = 0, agree = 0;
    for (int s = 0; s < truth.num_states; ++s)
        for (int a = 0; a < truth.num_actions; ++a)
            for (int b = a + 1; b < truth.num_actions; ++b) {
                const double t = truth(s, a) - truth(s, b);
                if (t == 0.0) continue;
                const double e = estimate[truth.index(s, a)] - estimate[truth.index(s, b)];
                ++total;
                agree += (t > 0.0 && e > 0.0) || (t < 0.0 && e < 0.0);
            }
    return total == 0 ? 1.0 : static_cast<double>(agree) / static_cast<double>(total);
}

// ---- configuration ------------------------------------------------------------

std::string to_string(Method m) {
    switch (m) {
        case Method::mle: return "mle";
        case Method::r3m: return "r3m";
        case Method::dpo: return "dpo";
        case Method::r3m_dpo: return "r3m_dpo";
    }
    return "unknown";
}

std::size_t SparsityRule::resolve(std::size_t n) const {
    const double nd = static_cast<double>(n);
    switch (kind) {
        case Kind::fixed: return static_cast<std::size_t>(value);
        case Kind::exponent: {
            const double raw = std::pow(nd, value);
            return static_cast<std::size_t>(std::ceil(raw - 1e-9 * std::max(1.0, raw)));
        }
        case Kind::fraction: return static_cast<std::size_t>(std::floor(value * nd + 1e-9));
    }
    return 0;
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
    require_object(j, "");
    check_keys(j, "", {"seed", "workers", "output", "generation", "corruption", "methods", "theory"});
    ExperimentConfig c;
    c.seed = get_count(j, "seed", "", 0);
    c.workers = get_count(j, "workers", "", 1);
    if (c.workers == 0) throw ConfigError("workers", "must be positive");
    c.output_dir = get_string(j, "output", "", "");

    if (!j.contains("generation")) throw ConfigError("generation", "missing");
    const json& g = j.at("generation");
    require_object(g, "generation");
    check_keys(g, "generation", {"num_states", "num_actions", "B", "n_list", "seeds", "reward_seed"});
    if (g.contains("reward_seed")) c.reward_seed = get_count(g, "reward_seed", "generation", 0);
    c.num_states = static_cast<int>(get_count(g, "num_states", "generation", 5));
    c.num_actions = static_cast<int>(get_count(g, "num_actions", "generation", 4));
    if (c.num_states < 1) throw ConfigError("generation.num_states", "must be at least 1");
    if (c.num_actions < 2) throw ConfigError("generation.num_actions", "must be at least 2");
    c.bound = get_number(g, "B", "generation", 2.0);
    if (!(c.bound > 0.0)) throw ConfigError("generation.B", "must be positive");
    c.seeds = get_count(g, "seeds", "generation", 1);
    if (c.seeds == 0) throw ConfigError("generation.seeds", "must be positive");
    if (!g.contains("n_list") || !g.at("n_list").is_array() || g.at("n_list").empty())
        throw ConfigError("generation.n_list", "expected a non-empty array of sample sizes");
    for (std::size_t k = 0; k < g.at("n_list").size(); ++k) {
        const json& v = g.at("n_list")[k];
        const std::string p = "generation.n_list[" + std::to_string(k) + "]";
        if (!v.is_number_integer() || v.get<std::int64_t>() <= 0) throw ConfigError(p, "expected a positive integer");
        const auto n = v.get<std::size_t>();
        if (!c.n_list.empty() && n <= c.n_list.back()) throw ConfigError(p, "n_list must be strictly increasing");
        c.n_list.push_back(n);
    }

    if (j.contains("corruption")) {
        const json& k = j.at("corruption");
        const std::string p = "corruption";
        require_object(k, p);
        check_keys(k, p, {"kind", "tau", "gamma", "p", "batch_size", "rate", "s", "s_exponent", "s_fraction", "C"});
        try {
            c.noise.kind = noise_kind_from_string(get_string(k, "kind", p, "clean"));
        } catch (const DomainError& e) {
            throw ConfigError("corruption.kind", e.what());
        }
        c.noise.tau = get_number(k, "tau", p, c.noise.tau);
        c.noise.gamma_m = get_number(k, "gamma", p, c.noise.gamma_m);
        c.noise.p = get_number(k, "p", p, c.noise.p);
        c.noise.batch_size = get_count(k, "batch_size", p, c.noise.batch_size);
        c.noise.rate = get_number(k, "rate", p, c.noise.rate);
        c.noise.C = get_number(k, "C", p, c.noise.C);
        const int rules = static_cast<int>(k.contains("s")) + static_cast<int>(k.contains("s_exponent")) +
                          static_cast<int>(k.contains("s_fraction"));
        if (rules > 1) throw ConfigError(p, "give at most one of s, s_exponent and s_fraction");
        if (k.contains("s")) {
            c.sparsity = {SparsityRule::Kind::fixed, static_cast<double>(get_count(k, "s", p, 0))};
        } else if (k.contains("s_exponent")) {
            c.sparsity = {SparsityRule::Kind::exponent, get_number(k, "s_exponent", p, 0.0)};
            if (!(c.sparsity.value >= 0.0 && c.sparsity.value <= 1.0))
                throw ConfigError("corruption.s_exponent", "must lie in [0, 1]");
        } else if (k.contains("s_fraction")) {
            c.sparsity = {SparsityRule::Kind::fraction, get_number(k, "s_fraction", p, 0.0)};
            if (!(c.sparsity.value >= 0.0 && c.sparsity.value <= 1.0))
                throw ConfigError("corruption.s_fraction", "must lie in [0, 1]");
        }
        try {
            c.noise.validate();
        } catch (const DomainError& e) {
            throw ConfigError(p, e.what());
        }
    }

    if (!j.contains("methods") || !j.at("methods").is_array() || j.at("methods").empty())
        throw ConfigError("methods", "expected a non-empty array");
    std::set<std::string> names;
    for (std::size_t k = 0; k < j.at("methods").size(); ++k) {
        const std::string p = "methods[" + std::to_string(k) + "]";
        MethodConfig m = parse_method(j.at("methods")[k], p, c.bound);
        if (!names.insert(m.name).second) throw ConfigError(join(p, "name"), "duplicate method name '" + m.name + "'");
        c.methods.push_back(std::move(m));
    }

    if (j.contains("theory")) {
        const json& t = j.at("theory");
        require_object(t, "theory");
        check_keys(t, "theory", {"rate_fit", "bound_monitor", "error_inequality"});
        c.rate_fit = get_bool(t, "rate_fit", "theory", true);
        c.bound_monitor = get_bool(t, "bound_monitor", "theory", true);
        c.error_inequality = get_bool(t, "error_inequality", "theory", true);
    }
    return c;
}

json ExperimentConfig::to_json() const {
    json j;
    j["seed"] = seed;
    j["workers"] = workers;
    if (!output_dir.empty()) j["output"] = output_dir;
    j["generation"] = {{"num_states", num_states},
                       {"num_actions", num_actions},
                       {"B", bound},
                       {"n_list", n_list},
                       {"seeds", seeds}};
    if (reward_seed) j["generation"]["reward_seed"] = *reward_seed;
    json k = noise.to_json();
    k.erase("seed");
    k.erase("s");
    if (noise.kind == NoiseKind::sparse_adversarial) {
        switch (sparsity.kind) {
            case SparsityRule::Kind::fixed: k["s"] = static_cast<std::uint64_t>(sparsity.value); break;
            case SparsityRule::Kind::exponent: k["s_exponent"] = sparsity.value; break;
            case SparsityRule::Kind::fraction: k["s_fraction"] = sparsity.value; break;
        }
    }
    j["corruption"] = k;
    json ms = json::array();
    for (const MethodConfig& m : methods) ms.push_back(method_to_json(m));
    j["methods"] = ms;
    j["theory"] = {{"rate_fit", rate_fit}, {"bound_monitor", bound_monitor}, {"error_inequality", error_inequality}};
    return j;
}

std::string ExperimentConfig::hash() const {
    json j = to_json();
    j.erase("output");
    j.erase("workers");
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(j.dump())));
    return buf;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError(path.string(), "cannot open config file");
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError(path.string(), std::string("invalid JSON: ") + e.what());
    }
    return ExperimentConfig::from_json(j);
}

// ---- results ------------------------------------------------------------------

json MethodSummary::to_json() const {
    json j;
    j["method"] = method;
    j["reward_rate"] = reward_rate ? reward_rate->to_json() : json(nullptr);
    j["combined_rate"] = combined_rate ? combined_rate->to_json() : json(nullptr);
    j["mean_bound_ratio"] = mean_bound_ratio;
    j["bound_trend_slope"] = bound_trend_slope ? json(*bound_trend_slope) : json(nullptr);
    j["audit_violations"] = audit_violations;
    return j;
}

std::vector<const RunRow*> ExperimentResults::rows_for(const std::string& method) const {
    std::vector<const RunRow*> out;
    for (const RunRow& r : rows)
        if (r.method == method) out.push_back(&r);
    return out;
}

const MethodSummary* ExperimentResults::summary_for(const std::string& method) const {
    for (const MethodSummary& s : summaries)
        if (s.method == method) return &s;
    return nullptr;
}

json ExperimentResults::summary_json() const {
    json j;
    j["config_hash"] = config_hash;
    j["rows"] = rows.size();
    json ms = json::array();
    for (const MethodSummary& s : summaries) ms.push_back(s.to_json());
    j["methods"] = ms;
    return j;
}

ExperimentResults run_grid(const ExperimentConfig& config, std::size_t workers) {
    if (config.methods.empty() || config.n_list.empty()) throw ConfigError("methods", "nothing to run");
    const std::string hash = config.hash();
    std::vector<Cell> cells;
    for (std::size_t ni = 0; ni < config.n_list.size(); ++ni)
        for (std::size_t si = 0; si < config.seeds; ++si) cells.push_back({ni, si});

    std::vector<std::vector<RunRow>> out(cells.size());
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto work = [&] {
        for (;;) {
            const std::size_t k = next.fetch_add(1);
            if (k >= cells.size()) return;
            try {
                out[k] = run_cell(config, cells[k]);
            } catch (...) {
                std::lock_guard<std::mutex> lock(failure_mutex);
                if (!failure) failure = std::current_exception();
                next.store(cells.size());
                return;
            }
        }
    };
    workers = std::max<std::size_t>(1, std::min(workers, cells.size()));
    if (workers == 1) {
        work();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
        for (auto& t : pool) t.join();
    }
    if (failure) std::rethrow_exception(failure);

    ExperimentResults res;
    res.config_hash = hash;
    for (std::size_t mi = 0; mi < config.methods.size(); ++mi)
        for (const auto& cell_rows : out) res.rows.push_back(cell_rows[mi]);
    res.summaries = summarize(config, res.rows);
    return res;
}

void write_results_csv(std::ostream& out, const ExperimentResults& results) {
    out << "config_hash,method,n,seed_index,seed,s,S,A,B,C,gamma,reward_err,delta_err,combined,"
           "theorem_rhs_shape,bound_ratio,audit_lhs,audit_rhs,audit_holds,outliers,flipped,outlier_precision,"
           "sign_agreement,epochs,converged,monotone\n";
    for (const RunRow& r : results.rows) {
        const ErrorReport& e = r.error;
        out << results.config_hash << ',' << r.method << ',' << r.n << ',' << r.seed_index << ',' << r.seed << ','
            << e.scale.s << ',' << e.scale.num_states << ',' << e.scale.num_actions << ',' << fmt(e.scale.B) << ','
            << fmt(e.scale.C) << ',' << fmt(e.gamma) << ',' << fmt(e.reward_err) << ',' << fmt(e.delta_err) << ','
            << fmt(e.combined) << ',' << fmt(e.theorem_rhs_shape) << ',' << fmt(r.bound_ratio) << ','
            << fmt(r.audit_lhs) << ',' << fmt(r.audit_rhs) << ',' << (r.audit_holds ? 1 : 0) << ',' << r.outliers
            << ',' << r.flipped << ',' << fmt(r.outlier_precision) << ',' << fmt(r.sign_agreement) << ',' << r.epochs
            << ',' << (r.converged ? 1 : 0) << ',' << (r.monotone ? 1 : 0) << '\n';
    }
}

std::vector<RunRow> read_results_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw ConfigError("results", "empty results file");
    const std::vector<std::string> header = split_csv(line);
    std::map<std::string, std::size_t> col;
    for (std::size_t k = 0; k < header.size(); ++k) col[header[k]] = k;
    for (const char* need : {"method", "n", "seed_index", "reward_err", "delta_err", "combined", "sign_agreement"})
        if (!col.count(need)) throw ConfigError(std::string("results.") + need, "missing column");

    std::vector<RunRow> rows;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const std::vector<std::string> f = split_csv(line);
        if (f.size() != header.size())
            throw ConfigError("results:" + std::to_string(line_no), "expected " + std::to_string(header.size()) + " fields");
        try {
            RunRow r;
            r.method = f[col["method"]];
            r.n = std::stoull(f[col["n"]]);
            r.seed_index = std::stoull(f[col["seed_index"]]);
            if (col.count("seed")) r.seed = std::stoull(f[col["seed"]]);
            r.error.n = r.n;
            r.error.reward_err = parse_double(f[col["reward_err"]]);
            r.error.delta_err = parse_double(f[col["delta_err"]]);
            r.error.combined = parse_double(f[col["combined"]]);
            r.sign_agreement = parse_double(f[col["sign_agreement"]]);
            if (col.count("outlier_precision")) r.outlier_precision = parse_double(f[col["outlier_precision"]]);
            if (col.count("bound_ratio")) r.bound_ratio = parse_double(f[col["bound_ratio"]]);
            rows.push_back(std::move(r));
        } catch (const std::logic_error&) {
            throw ConfigError("results:" + std::to_string(line_no), "malformed number");
        }
    }
    return rows;
}

json RunManifest::to_json() const {
    return {{"config_hash", config_hash},
            {"version", version},
            {"files",
             {{"results", results_csv.filename().string()},
              {"summary", summary_json.filename().string()},
              {"config", config_json.filename().string()}}},
            {"timings", {{"wall_seconds", wall_seconds}}}};
}

RunManifest run_experiment(const ExperimentConfig& config, const std::filesystem::path& out_dir, std::size_t workers) {
    const auto start = std::chrono::steady_clock::now();
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw ConfigError(out_dir.string(), "cannot create output directory: " + ec.message());

    const ExperimentResults results = run_grid(config, workers);

    RunManifest man;
    man.config_hash = results.config_hash;
    man.version = version_string();
    man.results_csv = out_dir / "results.csv";
    man.summary_json = out_dir / "summary.json";
    man.config_json = out_dir / "config.json";

    auto open = [](const std::filesystem::path& p) {
        std::ofstream f(p);
        if (!f) throw ConfigError(p.string(), "cannot write file");
        return f;
    };
    {
        std::ofstream f = open(man.results_csv);
        write_results_csv(f, results);
    }
    {
        std::ofstream f = open(man.summary_json);
        f << results.summary_json().dump(2) << '\n';
    }
    {
        std::ofstream f = open(man.config_json);
        f << config.to_json().dump(2) << '\n';
    }
    man.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::ofstream f = open(out_dir / "manifest.json");
    f << man.to_json().dump(2) << '\n';
    return man;
}

// ---- paired comparison ----------------------------------------------------------

json PairedSummary::to_json() const {
    return {{"method_a", method_a},
            {"method_b", method_b},
            {"metric", metric},
            {"pairs", differences.size()},
            {"win_fraction", win_fraction},
            {"mean_difference", mean_difference},
            {"ci95", {ci_low, ci_high}},
            {"median_improvement", median_improvement}};
}

PairedSummary compare_methods(const std::vector<RunRow>& rows, const std::string& method_a,
                              const std::string& method_b, const std::string& metric, std::uint64_t seed,
                              std::size_t resamples) {
    double (*get)(const RunRow&) = nullptr;
    bool larger_better = false;
    if (metric == "reward_err")
        get = [](const RunRow& r) { return r.error.reward_err; };
    else if (metric == "delta_err")
        get = [](const RunRow& r) { return r.error.delta_err; };
    else if (metric == "combined")
        get = [](const RunRow& r) { return r.error.combined; };
    else if (metric == "sign_agreement") {
        get = [](const RunRow& r) { return r.sign_agreement; };
        larger_better = true;
    } else
        throw DomainError("unknown metric '" + metric + "'");
    if (resamples == 0) throw DomainError("resamples must be positive");

    std::map<std::pair<std::size_t, std::size_t>, double> a, b;
    for (const RunRow& r : rows) {
        if (r.method == method_a) a[{r.n, r.seed_index}] = get(r);
        if (r.method == method_b) b[{r.n, r.seed_index}] = get(r);
    }
    if (a.empty()) throw DomainError("no rows for method '" + method_a + "'");
    if (b.empty()) throw DomainError("no rows for method '" + method_b + "'");
    if (a.size() != b.size()) throw DomainError("methods were run on different (n, seed) grids");

    PairedSummary out;
    out.method_a = method_a;
    out.method_b = method_b;
    out.metric = metric;
    double wins = 0.0;
    std::vector<double> improvement;
    for (const auto& [key, va] : a) {
        const auto it = b.find(key);
        if (it == b.end()) throw DomainError("methods were run on different (n, seed) grids");
        const double vb = it->second;
        out.differences.push_back(va - vb);
        if (va == vb)
            wins += 0.5;
        else if (larger_better ? va > vb : va < vb)
            wins += 1.0;
        if (vb != 0.0) improvement.push_back(larger_better ? (va - vb) / vb : (vb - va) / vb);
    }
    const auto m = static_cast<double>(out.differences.size());
    out.win_fraction = wins / m;
    double total = 0.0;
    for (double d : out.differences) total += d;
    out.mean_difference = total / m;
    out.median_improvement =
        improvement.empty() ? std::numeric_limits<double>::quiet_NaN() : empirical_quantile(improvement, 0.5);

    Rng rng(seed);
    std::vector<double> means;
    means.reserve(resamples);
    for (std::size_t r = 0; r < resamples; ++r) {
        double s = 0.0;
        for (std::size_t k = 0; k < out.differences.size(); ++k)
            s += out.differences[rng.below(out.differences.size())];
        means.push_back(s / m);
    }
    out.ci_low = empirical_quantile(means, 0.025);
    out.ci_high = empirical_quantile(means, 0.975);
    return out;
}

std::string version_string() { return R3M_VERSION; }

}  // namespace r3m
