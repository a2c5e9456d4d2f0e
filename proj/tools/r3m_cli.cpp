// r3m: generate, corrupt, fit and verify preference data; run and compare experiments.
//
// Exit codes: 0 success, 2 configuration or input error, 3 numerical failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "r3m/corruption.hpp"
#include "r3m/data.hpp"
#include "r3m/dpo.hpp"
#include "r3m/error.hpp"
#include "r3m/experiment.hpp"
#include "r3m/solver.hpp"
#include "r3m/theory.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace r3m;

namespace {

constexpr int kConfigError = 2;
constexpr int kNumericalError = 3;

std::string fmt(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

json read_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError(path, "cannot open file");
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError(path, std::string("invalid JSON: ") + e.what());
    }
}

PreferenceDataset read_dataset(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError(path, "cannot open file");
    return read_jsonl(in);
}

std::ofstream open_out(const fs::path& path) {
    if (path.has_parent_path()) {
        std::error_code ec;
        fs::create_directories(path.parent_path(), ec);
        if (ec) throw ConfigError(path.parent_path().string(), "cannot create directory: " + ec.message());
    }
    std::ofstream out(path);
    if (!out) throw ConfigError(path.string(), "cannot write file");
    return out;
}

json reward_to_json(const TabularReward& r) {
    return {{"num_states", r.num_states},
            {"num_actions", r.num_actions},
            {"bound", r.bound},
            {"values", std::vector<double>(r.values.begin(), r.values.end())}};
}

TabularReward reward_from_json(const json& j, const std::string& path) {
    try {
        TabularReward r = TabularReward::zeros(j.at("num_states").get<int>(), j.at("num_actions").get<int>());
        r.bound = j.value("bound", 0.0);
        r.constrained = r.bound > 0.0;
        const auto values = j.at("values").get<std::vector<double>>();
        if (static_cast<Eigen::Index>(values.size()) != r.dim()) throw ConfigError(path + ".values", "wrong length");
        for (std::size_t k = 0; k < values.size(); ++k) r.values[static_cast<Eigen::Index>(k)] = values[k];
        return r;
    } catch (const json::exception& e) {
        throw ConfigError(path, e.what());
    }
}

/// Reward estimate from either a reward-model report or a policy report.
Eigen::VectorXd estimate_from_report(const json& j, const std::string& path) {
    try {
        if (j.contains("reward_estimate")) {
            const auto v = j.at("reward_estimate").at("values").get<std::vector<double>>();
            return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
        }
        if (j.contains("implied_reward")) {
            std::vector<double> flat;
            for (const auto& row : j.at("implied_reward"))
                for (double x : row.get<std::vector<double>>()) flat.push_back(x);
            return Eigen::Map<const Eigen::VectorXd>(flat.data(), static_cast<Eigen::Index>(flat.size()));
        }
    } catch (const json::exception& e) {
        throw ConfigError(path, e.what());
    }
    throw ConfigError(path, "no reward_estimate or implied_reward field");
}

Eigen::VectorXd vector_field(const json& j, const std::string& key, const std::string& path) {
    if (!j.contains(key)) throw ConfigError(path + "." + key, "missing");
    const auto v = j.at(key).get<std::vector<double>>();
    return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

void check_format(const std::string& format) {
    if (format != "csv" && format != "json") throw ConfigError("--format", "expected csv or json");
}

// ---- verbs -----------------------------------------------------------------------

struct GenerateArgs {
    int states = 5;
    int actions = 4;
    double bound = 2.0;
    std::size_t n = 1000;
    std::uint64_t seed = 0;
    std::string out = ".";
};

void run_generate(const GenerateArgs& a) {
    const TabularReward truth = generate_true_reward(a.states, a.actions, a.bound, derive_seed(a.seed, {1}));
    NoiseSpec clean;
    clean.seed = derive_seed(a.seed, {3});
    const CorruptedDataset data =
        apply_noise(sample_bandit_pairs(a.states, a.actions, a.n, derive_seed(a.seed, {2})), truth, clean);
    auto reward = open_out(fs::path(a.out) / "reward.json");
    reward << reward_to_json(truth).dump(2) << '\n';
    auto pairs = open_out(fs::path(a.out) / "pairs.jsonl");
    write_jsonl(pairs, data.dataset);
    std::cout << "wrote " << (fs::path(a.out) / "reward.json").string() << " and "
              << (fs::path(a.out) / "pairs.jsonl").string() << " (" << a.n << " pairs)\n";
}

struct CorruptArgs {
    std::string input;
    std::string reward;
    std::string kind = "random_flip";
    NoiseSpec spec;
    std::uint64_t seed = 0;
    std::string out = ".";
};

void run_corrupt(CorruptArgs a) {
    const PreferenceDataset ds = read_dataset(a.input);
    const TabularReward truth = reward_from_json(read_json(a.reward), a.reward);
    try {
        a.spec.kind = noise_kind_from_string(a.kind);
    } catch (const DomainError& e) {
        throw ConfigError("--noise", e.what());
    }
    a.spec.seed = a.seed;
    if (a.spec.kind == NoiseKind::sparse_adversarial && a.spec.s > ds.size())
        throw ConfigError("--s", "exceeds the number of pairs");
    try {
        a.spec.validate();
    } catch (const DomainError& e) {
        throw ConfigError("--noise", e.what());
    }
    const CorruptedDataset data = apply_noise(ds, truth, a.spec);
    auto pairs = open_out(fs::path(a.out) / "corrupted.jsonl");
    write_jsonl(pairs, data.dataset);
    json rec = data.record.to_json();
    rec["noise"] = a.spec.to_json();
    auto record = open_out(fs::path(a.out) / "corruption.json");
    record << rec.dump(2) << '\n';
    std::cout << "flipped " << data.record.flipped_indices.size() << " of " << ds.size() << " labels\n";
}

struct FitArgs {
    std::string input;
    std::string method = "r3m";
    double lambda = 0.5;
    double beta = 1.0;
    double bound = 2.0;
    std::string model = "tabular";
    std::size_t hidden = 32;
    std::size_t epochs = 5000;
    double learning_rate = 1.0;
    std::uint64_t seed = 0;
    std::string out = ".";
    std::string format = "json";
};

void run_fit(const FitArgs& a) {
    check_format(a.format);
    const PreferenceDataset ds = read_dataset(a.input);
    json report;
    Eigen::VectorXd reward;
    Eigen::VectorXd delta;
    if (a.method == "mle" || a.method == "r3m") {
        SolverConfig cfg;
        cfg.lambda = a.method == "mle" ? 1.0 : a.lambda;
        cfg.bound = a.bound;
        cfg.max_epochs = a.epochs;
        cfg.learning_rate = a.learning_rate;
        cfg.seed = a.seed;
        try {
            cfg.validate();
        } catch (const DomainError& e) {
            throw ConfigError("fit", e.what());
        }
        if (a.model != "tabular" && a.model != "mlp") throw ConfigError("--model", "expected tabular or mlp");
        const ModelSpec spec{a.model == "mlp" ? ModelKind::mlp : ModelKind::tabular, a.hidden, 1.0};
        if (a.method == "mle" && spec.kind == ModelKind::mlp) throw ConfigError("--model", "mle is tabular only");
        const SolveReport rep = a.method == "mle" ? mle_fit(ds, cfg) : r3m_fit(ds, cfg, spec);
        report = rep.to_json();
        reward = rep.reward_estimate.values;
        delta = rep.delta_estimate.deltas;
    } else if (a.method == "dpo" || a.method == "r3m_dpo") {
        DpoConfig cfg;
        cfg.beta = a.beta;
        cfg.lambda = a.lambda;
        cfg.robust = a.method == "r3m_dpo";
        cfg.max_epochs = a.epochs;
        cfg.learning_rate = a.learning_rate;
        cfg.seed = a.seed;
        try {
            cfg.validate();
        } catch (const DomainError& e) {
            throw ConfigError("fit", e.what());
        }
        const DpoReport rep = r3m_dpo_fit(ds, cfg);
        report = rep.to_json();
        reward = rep.implied_reward_vector();
        delta = rep.delta_estimate.deltas;
    } else {
        throw ConfigError("--method", "expected mle, r3m, dpo or r3m_dpo");
    }

    auto out = open_out(fs::path(a.out) / "report.json");
    out << report.dump(2) << '\n';
    if (a.format == "csv") {
        auto r = open_out(fs::path(a.out) / "reward.csv");
        r << "state,action,reward\n";
        for (int s = 0; s < ds.num_states(); ++s)
            for (int act = 0; act < ds.num_actions(); ++act)
                r << s << ',' << act << ',' << fmt(reward[static_cast<Eigen::Index>(s) * ds.num_actions() + act]) << '\n';
        auto d = open_out(fs::path(a.out) / "delta.csv");
        d << "index,delta\n";
        for (Eigen::Index i = 0; i < delta.size(); ++i) d << i << ',' << fmt(delta[i]) << '\n';
    }
    std::cout << report.at("method").get<std::string>() << ": " << report.at("epochs_run") << " epochs, converged "
              << (report.at("converged").get<bool>() ? "yes" : "no") << ", final objective "
              << fmt(report.at("loss_trace").back().get<double>()) << '\n';
}

struct VerifyArgs {
    std::string input;
    std::string reward;
    std::string estimate;
    std::string corruption;
    std::string out;
    std::string format = "json";
};

void run_verify(const VerifyArgs& a) {
    check_format(a.format);
    const PreferenceDataset ds = read_dataset(a.input);
    const TabularReward truth = reward_from_json(read_json(a.reward), a.reward);
    const json est = read_json(a.estimate);
    const Eigen::VectorXd reward_hat = estimate_from_report(est, a.estimate);
    Eigen::VectorXd delta_hat = est.contains("delta_estimate") ? vector_field(est, "delta_estimate", a.estimate)
                                                               : Eigen::VectorXd::Zero(static_cast<Eigen::Index>(ds.size()));
    Eigen::VectorXd delta_star = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(ds.size()));
    double C = 0.0;
    if (!a.corruption.empty()) {
        const json rec = read_json(a.corruption);
        delta_star = vector_field(rec, "delta_star", a.corruption);
        if (rec.contains("noise") && rec.at("noise").contains("C") &&
            rec.at("noise").value("kind", "") == "sparse_adversarial")
            C = rec.at("noise").at("C").get<double>();
        else if (delta_star.size() > 0)
            C = delta_star.cwiseAbs().maxCoeff();
    }
    if (delta_star.size() != static_cast<Eigen::Index>(ds.size()))
        throw ConfigError(a.corruption, "delta_star length does not match the dataset");

    const DesignMatrix design = build_design(ds);
    const LikelihoodWorkspace ws(ds, design);
    ProblemScale scale;
    scale.num_states = ds.num_states();
    scale.num_actions = ds.num_actions();
    scale.B = truth.bound > 0.0 ? truth.bound : truth.values.squaredNorm();
    scale.C = C;
    for (Eigen::Index i = 0; i < delta_star.size(); ++i) scale.s += delta_star[i] != 0.0;
    const ErrorReport rep = error_decompose(reward_hat, truth.values, delta_hat, delta_star, design, scale);

    double lambda = 1.0;
    if (est.contains("config") && est.at("config").contains("lambda")) lambda = est.at("config").at("lambda").get<double>();
    const ErrorInequalityAudit audit = audit_error_inequality(ws, design, reward_hat, truth.values, delta_hat, delta_star,
                                                              lambda / static_cast<double>(ds.size()), rep.gamma);
    json j = rep.to_json();
    j["bound_ratio"] = theorem_bound_monitor(rep);
    j["sign_agreement"] = sign_agreement(reward_hat, truth);
    j["audit"] = {{"lhs", audit.lhs}, {"rhs", audit.rhs}, {"holds", audit.holds(1e-6)}};

    std::ostringstream text;
    if (a.format == "json") {
        text << j.dump(2) << '\n';
    } else {
        text << "n,s,reward_err,delta_err,combined,gamma,theorem_rhs_shape,bound_ratio,sign_agreement,audit_lhs,audit_rhs\n"
             << rep.n << ',' << scale.s << ',' << fmt(rep.reward_err) << ',' << fmt(rep.delta_err) << ','
             << fmt(rep.combined) << ',' << fmt(rep.gamma) << ',' << fmt(rep.theorem_rhs_shape) << ','
             << fmt(theorem_bound_monitor(rep)) << ',' << fmt(sign_agreement(reward_hat, truth)) << ','
             << fmt(audit.lhs) << ',' << fmt(audit.rhs) << '\n';
    }
    if (a.out.empty()) {
        std::cout << text.str();
    } else {
        auto out = open_out(fs::path(a.out) / (a.format == "json" ? "verify.json" : "verify.csv"));
        out << text.str();
    }
}

struct ExperimentArgs {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::optional<std::size_t> workers;
};

void run_experiment_verb(const ExperimentArgs& a) {
    ExperimentConfig cfg = load_experiment_config(a.config);
    if (a.seed) cfg.seed = *a.seed;
    if (a.workers) cfg.workers = *a.workers;
    if (cfg.workers == 0) throw ConfigError("--workers", "must be positive");
    const std::string out = !a.out.empty() ? a.out : (!cfg.output_dir.empty() ? cfg.output_dir : "out");
    const RunManifest m = run_experiment(cfg, out, cfg.workers);
    std::cout << "config " << m.config_hash << ": wrote " << m.results_csv.string() << ", " << m.summary_json.string()
              << " in " << fmt(m.wall_seconds) << " s\n";
}

struct CompareArgs {
    std::string input;
    std::string a;
    std::string b;
    std::string metric = "reward_err";
    std::uint64_t seed = 0;
    std::size_t resamples = 1000;
    std::string format = "json";
};

void run_compare(const CompareArgs& a) {
    check_format(a.format);
    std::ifstream in(a.input);
    if (!in) throw ConfigError(a.input, "cannot open file");
    const std::vector<RunRow> rows = read_results_csv(in);
    PairedSummary p;
    try {
        p = compare_methods(rows, a.a, a.b, a.metric, a.seed, a.resamples);
    } catch (const DomainError& e) {
        throw ConfigError("compare", e.what());
    }
    if (a.format == "json") {
        std::cout << p.to_json().dump(2) << '\n';
    } else {
        std::cout << "method_a,method_b,metric,pairs,win_fraction,mean_difference,ci_low,ci_high,median_improvement\n"
                  << p.method_a << ',' << p.method_b << ',' << p.metric << ',' << p.differences.size() << ','
                  << fmt(p.win_fraction) << ',' << fmt(p.mean_difference) << ',' << fmt(p.ci_low) << ','
                  << fmt(p.ci_high) << ',' << fmt(p.median_improvement) << '\n';
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Robust reward modeling from corrupted preference data"};
    app.set_version_flag("--version", version_string());
    app.require_subcommand(1);

    GenerateArgs gen;
    auto* g = app.add_subcommand("generate", "Sample a true reward in R_B and clean Bradley-Terry labelled pairs");
    g->add_option("--states", gen.states, "number of states")->check(CLI::PositiveNumber);
    g->add_option("--actions", gen.actions, "number of actions")->check(CLI::Range(2, 1 << 20));
    g->add_option("--B", gen.bound, "squared-norm bound of R_B")->check(CLI::PositiveNumber);
    g->add_option("--n", gen.n, "number of pairs")->check(CLI::PositiveNumber);
    g->add_option("--seed", gen.seed, "seed");
    g->add_option("--out", gen.out, "output directory");

    CorruptArgs cor;
    auto* c = app.add_subcommand("corrupt", "Relabel pairs under a noise model");
    c->add_option("--input", cor.input, "pairs (JSONL)")->required();
    c->add_option("--reward", cor.reward, "true reward (JSON from generate)")->required();
    c->add_option("--noise", cor.kind, "clean, stochastic, myopic, irrational, random_flip or sparse_adversarial");
    c->add_option("--rate", cor.spec.rate, "random_flip: flip probability");
    c->add_option("--s", cor.spec.s, "sparse_adversarial: number of flips");
    c->add_option("--C", cor.spec.C, "sparse_adversarial: magnitude cap");
    c->add_option("--tau", cor.spec.tau, "stochastic: temperature");
    c->add_option("--gamma", cor.spec.gamma_m, "myopic: discount");
    c->add_option("--p", cor.spec.p, "irrational: exponent");
    c->add_option("--batch-size", cor.spec.batch_size, "irrational: batch size");
    c->add_option("--seed", cor.seed, "seed");
    c->add_option("--out", cor.out, "output directory");

    FitArgs fit;
    auto* f = app.add_subcommand("fit", "Fit a reward model or policy to preference data");
    f->add_option("--input", fit.input, "pairs (JSONL)")->required();
    f->add_option("--method", fit.method, "mle, r3m, dpo or r3m_dpo");
    f->add_option("--lambda", fit.lambda, "per-sample l1 weight");
    f->add_option("--beta", fit.beta, "DPO temperature");
    f->add_option("--B", fit.bound, "squared-norm bound of R_B");
    f->add_option("--model", fit.model, "tabular or mlp");
    f->add_option("--hidden", fit.hidden, "MLP hidden units");
    f->add_option("--epochs", fit.epochs, "maximum epochs");
    f->add_option("--learning-rate", fit.learning_rate, "learning rate");
    f->add_option("--seed", fit.seed, "seed");
    f->add_option("--out", fit.out, "output directory");
    f->add_option("--format", fit.format, "json, or csv for extra reward/delta tables");

    VerifyArgs ver;
    auto* v = app.add_subcommand("verify", "Error decomposition and bound diagnostics of a fit");
    v->add_option("--input", ver.input, "pairs the fit used (JSONL)")->required();
    v->add_option("--reward", ver.reward, "true reward (JSON)")->required();
    v->add_option("--estimate", ver.estimate, "report.json from fit")->required();
    v->add_option("--corruption", ver.corruption, "corruption.json from corrupt");
    v->add_option("--out", ver.out, "output directory (default: stdout)");
    v->add_option("--format", ver.format, "csv or json");

    ExperimentArgs exp;
    auto* e = app.add_subcommand("experiment", "Run an experiment grid from a config file");
    e->add_option("--config", exp.config, "experiment config (JSON)")->required();
    e->add_option("--seed", exp.seed, "override the config seed");
    e->add_option("--out", exp.out, "output directory (default: config output)");
    e->add_option("--workers", exp.workers, "worker threads");

    CompareArgs cmp;
    auto* p = app.add_subcommand("compare", "Paired comparison of two methods in a results CSV");
    p->add_option("--input", cmp.input, "results.csv")->required();
    p->add_option("--a", cmp.a, "first method")->required();
    p->add_option("--b", cmp.b, "second method")->required();
    p->add_option("--metric", cmp.metric, "reward_err, delta_err, combined or sign_agreement");
    p->add_option("--seed", cmp.seed, "bootstrap seed");
    p->add_option("--resamples", cmp.resamples, "bootstrap resamples");
    p->add_option("--format", cmp.format, "csv or json");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& err) {
        const int code = app.exit(err);
        return code == 0 ? 0 : kConfigError;
    }

    try {
        if (*g) run_generate(gen);
        if (*c) run_corrupt(cor);
        if (*f) run_fit(fit);
        if (*v) run_verify(ver);
        if (*e) run_experiment_verb(exp);
        if (*p) run_compare(cmp);
    } catch (const NumericalError& err) {
        std::cerr << "numerical failure: " << err.what() << '\n';
        return kNumericalError;
    } catch (const ConfigError& err) {
        std::cerr << "config error: " << err.what() << '\n';
        return kConfigError;
    } catch (const DomainError& err) {
        std::cerr << "input error: " << err.what() << '\n';
        return kConfigError;
    } catch (const ModeError& err) {
        std::cerr << "input error: " << err.what() << '\n';
        return kConfigError;
    } catch (const std::exception& err) {
        std::cerr << "error: " << err.what() << '\n';
        return 1;
    }
    return 0;
}
