#pragma once

#include <Eigen/Dense>
#include <cstddef>

#include "r3m/data.hpp"
#include "r3m/rng.hpp"

namespace r3m {

/// One-hidden-layer reward network on a one-hot (state, action) encoding of
/// size |S| + |A|: r(s, a) = w2 . tanh(W1 e(s, a) + b1) + b2.
///
/// Parameters are stored flat so they can be perturbed for finite-difference
/// checks: [W1 (hidden x (|S|+|A|), column-major) | b1 | w2 | b2].
class Mlp {
public:
    Mlp(int num_states, int num_actions, std::size_t hidden_units);

    /// Weights drawn from N(0, scale^2 / fan_in); biases zero.
    static Mlp random(int num_states, int num_actions, std::size_t hidden_units, Rng& rng, double scale = 1.0);

    int num_states() const noexcept { return num_states_; }
    int num_actions() const noexcept { return num_actions_; }
    std::size_t hidden_units() const noexcept { return hidden_; }
    Eigen::Index num_params() const noexcept { return params_.size(); }

    const Eigen::VectorXd& params() const noexcept { return params_; }
    Eigen::VectorXd& params() noexcept { return params_; }

    double reward(int state, int action) const;
    /// Adds weight * d r(s, a) / d params to `grad`.
    void accumulate_reward_grad(int state, int action, double weight, Eigen::VectorXd& grad) const;

    /// sum_{t=1}^m discount^t r(s_t, a_t)
    double segment_reward(const TrajectorySegment& segment, double discount) const;
    void accumulate_segment_grad(const TrajectorySegment& segment, double discount, double weight,
                                 Eigen::VectorXd& grad) const;

    /// Oriented reward difference: (winner - loser) under the pair's label.
    double oriented_diff(const PreferencePair& pair, double discount) const;

private:
    Eigen::Index w1_offset(std::size_t unit, int input) const noexcept {
        return static_cast<Eigen::Index>(input) * static_cast<Eigen::Index>(hidden_) + static_cast<Eigen::Index>(unit);
    }
    Eigen::Index b1_offset() const noexcept { return static_cast<Eigen::Index>(hidden_) * (num_states_ + num_actions_); }
    Eigen::Index w2_offset() const noexcept { return b1_offset() + static_cast<Eigen::Index>(hidden_); }
    Eigen::Index b2_offset() const noexcept { return w2_offset() + static_cast<Eigen::Index>(hidden_); }
    void check_ids(int state, int action) const;

    int num_states_;
    int num_actions_;
    std::size_t hidden_;
    Eigen::VectorXd params_;
};

/// r(s, a) under `net`.
double mlp_reward(const Mlp& net, int state, int action);

/// Gradient w.r.t. the parameters of the per-sample loss
/// -log sigma(r(z_w) - r(z_l) + delta) (the l1 term does not depend on them).
Eigen::VectorXd mlp_backprop(const Mlp& net, const PreferencePair& pair, double delta, double discount);

}  // namespace r3m
