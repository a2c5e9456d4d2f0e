#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstddef>

namespace r3m {

/// Tabular reward R in R^{|S||A|}, laid out state-major: index(s, a) = s * |A| + a.
/// `bound` and `constrained` carry the R_B metadata (zero-sum, ||R||^2 <= B).
struct TabularReward {
    Eigen::VectorXd values;
    int num_states = 0;
    int num_actions = 0;
    double bound = 0.0;
    bool constrained = false;

    static TabularReward zeros(int num_states, int num_actions) {
        TabularReward r;
        r.num_states = num_states;
        r.num_actions = num_actions;
        r.values = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(num_states) * num_actions);
        return r;
    }

    Eigen::Index index(int state, int action) const noexcept {
        return static_cast<Eigen::Index>(state) * num_actions + action;
    }

    double operator()(int state, int action) const { return values[index(state, action)]; }

    Eigen::Index dim() const noexcept { return values.size(); }

    /// Membership in R_B within `tol` on both the sum and the squared norm.
    bool in_feasible_set(double tol = 1e-9) const {
        return std::abs(values.sum()) <= tol && values.squaredNorm() <= bound + tol;
    }
};

}  // namespace r3m
