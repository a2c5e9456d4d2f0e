#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "r3m/corruption.hpp"
#include "r3m/data.hpp"
#include "r3m/reward.hpp"
#include "r3m/solver.hpp"
#include "r3m/theory.hpp"

namespace r3m {

// ---------------------------------------------------------------------------
// Synthetic tabular bandit problems

/// R* in R_B: i.i.d. standard normals, centered, scaled to ||R*||^2 = fill * B.
TabularReward generate_true_reward(int num_states, int num_actions, double bound, std::uint64_t seed,
                                   double fill = 0.8);

/// n pairs with a uniform state and a uniform ordered pair of distinct
/// actions. Labels are placeholders (1) until a noise model is applied.
PreferenceDataset sample_bandit_pairs(int num_states, int num_actions, std::size_t n, std::uint64_t seed);

/// Fraction of (s, a, a') with r*(s,a) != r*(s,a') whose ordering the
/// estimate reproduces (ties in the estimate count as disagreement).
double sign_agreement(const Eigen::VectorXd& estimate, const TabularReward& truth);

// ---------------------------------------------------------------------------
// Configuration

enum class Method { mle, r3m, dpo, r3m_dpo };

std::string to_string(Method m);

struct MethodConfig {
    std::string name;
    Method method = Method::r3m;
    /// Per-sample weight; "theory" in the config file maps to 1.0, the
    /// per-sample equivalent of weight 1/n on ||delta||_1.
    double lambda = 0.5;
    bool theory_lambda = false;
    SolverConfig solver;
    ModelSpec model;
    double beta = 1.0;
};

struct SparsityRule {
    enum class Kind { fixed, exponent, fraction } kind = Kind::fixed;
    double value = 0.0;

    /// fixed: value; exponent: ceil(n^value); fraction: floor(value * n).
    std::size_t resolve(std::size_t n) const;
};

struct ExperimentConfig {
    int num_states = 5;
    int num_actions = 4;
    double bound = 2.0;
    std::vector<std::size_t> n_list;
    std::size_t seeds = 1;
    /// Seed of the true-reward stream; derived from `seed` when unset.
    /// R* depends only on the seed index, never on n.
    std::optional<std::uint64_t> reward_seed;

    NoiseSpec noise;
    SparsityRule sparsity;

    std::vector<MethodConfig> methods;

    bool rate_fit = true;
    bool bound_monitor = true;
    bool error_inequality = true;

    std::uint64_t seed = 0;
    std::string output_dir;
    std::size_t workers = 1;

    /// Throws ConfigError naming the offending field.
    static ExperimentConfig from_json(const nlohmann::json& j);
    /// Canonical form (sorted keys); from_json(to_json()) reproduces the config.
    nlohmann::json to_json() const;
    /// 16 hex digits of FNV-1a over the canonical JSON, excluding output
    /// location and worker count. Independent of key order in the source file.
    std::string hash() const;
};

ExperimentConfig load_experiment_config(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Results

struct RunRow {
    std::string method;
    std::size_t n = 0;
    std::size_t seed_index = 0;
    std::uint64_t seed = 0;
    ErrorReport error;
    double bound_ratio = 0.0;
    double audit_lhs = 0.0;
    double audit_rhs = 0.0;
    bool audit_holds = true;
    std::size_t outliers = 0;
    std::size_t flipped = 0;
    double outlier_precision = 0.0;  // NaN when no sample has a positive delta
    double sign_agreement = 0.0;
    std::size_t epochs = 0;
    bool converged = false;
    bool monotone = true;
};

struct MethodSummary {
    std::string method;
    std::optional<RateFit> reward_rate;
    std::optional<RateFit> combined_rate;
    std::vector<double> mean_bound_ratio;
    std::optional<double> bound_trend_slope;
    std::size_t audit_violations = 0;

    nlohmann::json to_json() const;
};

struct ExperimentResults {
    std::string config_hash;
    std::vector<RunRow> rows;  // sorted by (method order, n, seed index)
    std::vector<MethodSummary> summaries;

    std::vector<const RunRow*> rows_for(const std::string& method) const;
    const MethodSummary* summary_for(const std::string& method) const;
    nlohmann::json summary_json() const;
};

/// Runs every (n, seed, method) cell. Output is independent of `workers`.
ExperimentResults run_grid(const ExperimentConfig& config, std::size_t workers = 1);

void write_results_csv(std::ostream& out, const ExperimentResults& results);
/// Parses the columns written by write_results_csv that compare_methods needs.
std::vector<RunRow> read_results_csv(std::istream& in);

struct RunManifest {
    std::string config_hash;
    std::string version;
    std::filesystem::path results_csv;
    std::filesystem::path summary_json;
    std::filesystem::path config_json;
    double wall_seconds = 0.0;

    nlohmann::json to_json() const;
};

/// run_grid plus results.csv, summary.json, config.json and manifest.json
/// under `out_dir`. Throws ConfigError if the directory cannot be written.
RunManifest run_experiment(const ExperimentConfig& config, const std::filesystem::path& out_dir,
                           std::size_t workers = 1);

// ---------------------------------------------------------------------------
// Paired comparison

struct PairedSummary {
    std::string method_a;
    std::string method_b;
    std::string metric;
    std::vector<double> differences;  // a - b per (n, seed)
    double win_fraction = 0.0;        // a < b counts 1, ties 1/2
    double mean_difference = 0.0;
    double ci_low = 0.0;              // 95% bootstrap interval of the mean difference
    double ci_high = 0.0;
    double median_improvement = 0.0;  // median of (b - a) / b

    nlohmann::json to_json() const;
};

/// metric: reward_err, delta_err, combined or sign_agreement (for the last,
/// larger is better). Throws DomainError if the (n, seed) grids differ.
PairedSummary compare_methods(const std::vector<RunRow>& rows, const std::string& method_a,
                              const std::string& method_b, const std::string& metric = "reward_err",
                              std::uint64_t seed = 0, std::size_t resamples = 1000);

/// Project version, `git describe` style when built from a checkout.
std::string version_string();

}  // namespace r3m
