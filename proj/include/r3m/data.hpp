#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <iosfwd>
#include <vector>

#include "r3m/reward.hpp"

namespace r3m {

struct Step {
    int state = 0;
    int action = 0;

    friend bool operator==(const Step&, const Step&) = default;
};

/// Ordered (state, action) steps; length m >= 1.
struct TrajectorySegment {
    std::vector<Step> steps;

    std::size_t length() const noexcept { return steps.size(); }

    friend bool operator==(const TrajectorySegment&, const TrajectorySegment&) = default;
};

/// One comparison. label == 1 means `first` was preferred.
struct PreferencePair {
    TrajectorySegment first;
    TrajectorySegment second;
    int label = 1;

    static PreferencePair bandit(int state, int first_action, int second_action, int label);

    /// Unit-length segments sharing one state.
    bool is_bandit() const noexcept;

    // Bandit accessors; only meaningful when is_bandit().
    int state() const { return first.steps.front().state; }
    int first_action() const { return first.steps.front().action; }
    int second_action() const { return second.steps.front().action; }

    friend bool operator==(const PreferencePair&, const PreferencePair&) = default;
};

/// Immutable collection of preference pairs over a finite state/action space.
class PreferenceDataset {
public:
    /// Throws DomainError if empty, if any id is out of range, if a label is
    /// not 0/1, or if discount is outside (0, 1].
    PreferenceDataset(std::vector<PreferencePair> pairs, int num_states, int num_actions,
                      double discount = 1.0);

    const std::vector<PreferencePair>& pairs() const noexcept { return pairs_; }
    const PreferencePair& operator[](std::size_t i) const { return pairs_[i]; }
    std::size_t size() const noexcept { return pairs_.size(); }
    int num_states() const noexcept { return num_states_; }
    int num_actions() const noexcept { return num_actions_; }
    std::size_t dim() const noexcept { return static_cast<std::size_t>(num_states_) * num_actions_; }
    double discount() const noexcept { return discount_; }
    bool is_bandit() const noexcept { return bandit_; }

    /// Copy with replaced labels (same length as the dataset).
    PreferenceDataset with_labels(const std::vector<int>& labels) const;
    std::vector<int> labels() const;

    friend bool operator==(const PreferenceDataset&, const PreferenceDataset&) = default;

private:
    std::vector<PreferencePair> pairs_;
    int num_states_;
    int num_actions_;
    double discount_;
    bool bandit_;
};

/// sum_{t=1}^{m} discount^t * r(s_t, a_t), with t starting at 1.
double segment_reward(const TrajectorySegment& segment, const TabularReward& reward, double discount);

/// Label-independent difference vectors x_i = e(s_i, a_1i) - e(s_i, a_2i),
/// their second-moment matrix Sigma0 = (1/n) sum x_i x_i^T, and its
/// eigendecomposition with a relative rank cutoff.
class DesignMatrix {
public:
    struct Diff {
        Eigen::Index plus = -1;   // -1 when the pair is degenerate (x_i = 0)
        Eigen::Index minus = -1;
    };

    std::size_t num_samples() const noexcept { return diffs_.size(); }
    Eigen::Index dim() const noexcept { return sigma0_.rows(); }
    const std::vector<Diff>& diffs() const noexcept { return diffs_; }

    Eigen::VectorXd diff(std::size_t i) const;
    /// <x_i, v>
    double diff_dot(std::size_t i, const Eigen::VectorXd& v) const noexcept {
        const Diff& d = diffs_[i];
        return d.plus < 0 ? 0.0 : v[d.plus] - v[d.minus];
    }
    /// Dense dim x n matrix X = (x_1, ..., x_n).
    Eigen::MatrixXd diff_matrix() const;

    const Eigen::MatrixXd& sigma0() const noexcept { return sigma0_; }
    /// Ascending, clamped to >= 0.
    const Eigen::VectorXd& eigenvalues() const noexcept { return eigenvalues_; }
    const Eigen::MatrixXd& eigenvectors() const noexcept { return eigenvectors_; }
    double cutoff() const noexcept { return cutoff_; }
    double max_eigenvalue() const noexcept { return eigenvalues_.size() ? eigenvalues_.maxCoeff() : 0.0; }
    Eigen::Index rank() const noexcept;

    Eigen::MatrixXd pseudo_inverse() const;
    Eigen::MatrixXd sqrt() const;
    Eigen::MatrixXd sqrt_pseudo_inverse() const;

private:
    friend DesignMatrix build_design(const PreferenceDataset&, double);

    std::vector<Diff> diffs_;
    Eigen::MatrixXd sigma0_;
    Eigen::VectorXd eigenvalues_;
    Eigen::MatrixXd eigenvectors_;
    double cutoff_ = 0.0;
};

/// Throws ModeError for non-bandit datasets.
DesignMatrix build_design(const PreferenceDataset& dataset, double rel_tol = 1e-10);

/// sqrt(v^T Sigma0 v), tiny negative quadratic forms clamped to 0.
double sigma_norm(const Eigen::VectorXd& v, const DesignMatrix& design);

/// sqrt(v^T Sigma0^+ v) with eigenvalues at or below the cutoff treated as zero.
double sigma_dagger_norm(const Eigen::VectorXd& v, const DesignMatrix& design);

// JSONL: an optional header line {"format":"r3m-preferences", num_states,
// num_actions, discount}, then one object per pair. Bandit pairs are written
// as {state, first_action, second_action, label}; segment pairs as
// {first_steps: [[s,a],...], second_steps: [[s,a],...], label}.
void write_jsonl(std::ostream& out, const PreferenceDataset& dataset);
/// Without a header the dimensions are inferred as max id + 1.
PreferenceDataset read_jsonl(std::istream& in);

/// Row-major dump of Sigma0 with header "i,j,value".
void write_sigma_csv(std::ostream& out, const DesignMatrix& design);

}  // namespace r3m
