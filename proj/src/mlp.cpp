#include "r3m/mlp.hpp"

#include <cmath>

#include "r3m/error.hpp"
#include "r3m/likelihood.hpp"

namespace r3m {

Mlp::Mlp(int num_states, int num_actions, std::size_t hidden_units)
    : num_states_(num_states), num_actions_(num_actions), hidden_(hidden_units) {
    if (num_states <= 0 || num_actions <= 0 || hidden_units == 0)
        throw DomainError("Mlp: sizes must be positive");
    params_ = Eigen::VectorXd::Zero(b2_offset() + 1);
}

Mlp Mlp::random(int num_states, int num_actions, std::size_t hidden_units, Rng& rng, double scale) {
    Mlp net(num_states, num_actions, hidden_units);
    // A one-hot input has exactly two active entries.
    const double in_scale = scale / std::sqrt(2.0);
    const double out_scale = scale / std::sqrt(static_cast<double>(hidden_units));
    for (Eigen::Index k = 0; k < net.b1_offset(); ++k) net.params_[k] = in_scale * rng.normal();
    for (Eigen::Index k = net.w2_offset(); k < net.b2_offset(); ++k) net.params_[k] = out_scale * rng.normal();
    return net;
}

void Mlp::check_ids(int state, int action) const {
    if (state < 0 || state >= num_states_ || action < 0 || action >= num_actions_)
        throw DomainError("Mlp: state/action id out of range");
}

double Mlp::reward(int state, int action) const {
    check_ids(state, action);
    double out = params_[b2_offset()];
    for (std::size_t u = 0; u < hidden_; ++u) {
        const double pre = params_[w1_offset(u, state)] + params_[w1_offset(u, num_states_ + action)] +
                           params_[b1_offset() + static_cast<Eigen::Index>(u)];
        out += params_[w2_offset() + static_cast<Eigen::Index>(u)] * std::tanh(pre);
    }
    return out;
}

void Mlp::accumulate_reward_grad(int state, int action, double weight, Eigen::VectorXd& grad) const {
    check_ids(state, action);
    if (grad.size() != params_.size()) throw DomainError("Mlp: gradient buffer has wrong size");
    for (std::size_t u = 0; u < hidden_; ++u) {
        const Eigen::Index ui = static_cast<Eigen::Index>(u);
        const double pre = params_[w1_offset(u, state)] + params_[w1_offset(u, num_states_ + action)] +
                           params_[b1_offset() + ui];
        const double h = std::tanh(pre);
        const double back = weight * params_[w2_offset() + ui] * (1.0 - h * h);
        grad[w1_offset(u, state)] += back;
        grad[w1_offset(u, num_states_ + action)] += back;
        grad[b1_offset() + ui] += back;
        grad[w2_offset() + ui] += weight * h;
    }
    grad[b2_offset()] += weight;
}

double Mlp::segment_reward(const TrajectorySegment& segment, double discount) const {
    double total = 0.0;
    double w = 1.0;
    for (const Step& st : segment.steps) {
        w *= discount;
        total += w * reward(st.state, st.action);
    }
    return total;
}

void Mlp::accumulate_segment_grad(const TrajectorySegment& segment, double discount, double weight,
                                  Eigen::VectorXd& grad) const {
    double w = 1.0;
    for (const Step& st : segment.steps) {
        w *= discount;
        accumulate_reward_grad(st.state, st.action, weight * w, grad);
    }
}

double Mlp::oriented_diff(const PreferencePair& pair, double discount) const {
    const double d = segment_reward(pair.first, discount) - segment_reward(pair.second, discount);
    return pair.label == 1 ? d : -d;
}

double mlp_reward(const Mlp& net, int state, int action) { return net.reward(state, action); }

Eigen::VectorXd mlp_backprop(const Mlp& net, const PreferencePair& pair, double delta, double discount) {
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(net.num_params());
    const double logit = net.oriented_diff(pair, discount) + delta;
    // d/dz [-log sigma(z)] = -sigma(-z); z depends on r(first) - r(second) through the label sign.
    const double outer = -sigmoid(-logit) * (pair.label == 1 ? 1.0 : -1.0);
    net.accumulate_segment_grad(pair.first, discount, outer, grad);
    net.accumulate_segment_grad(pair.second, discount, -outer, grad);
    return grad;
}

}  // namespace r3m
