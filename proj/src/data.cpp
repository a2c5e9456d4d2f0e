#include "r3m/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <string>

#include "json.hpp"
#include "r3m/error.hpp"

namespace r3m {

using nlohmann::json;

PreferencePair PreferencePair::bandit(int state, int first_action, int second_action, int label) {
    return PreferencePair{TrajectorySegment{{Step{state, first_action}}},
                          TrajectorySegment{{Step{state, second_action}}}, label};
}

bool PreferencePair::is_bandit() const noexcept {
    return first.length() == 1 && second.length() == 1 &&
           first.steps[0].state == second.steps[0].state;
}

namespace {

void check_segment(const TrajectorySegment& seg, int num_states, int num_actions, std::size_t i) {
    if (seg.steps.empty())
        throw DomainError("pair " + std::to_string(i) + ": empty trajectory segment");
    for (const Step& st : seg.steps) {
        if (st.state < 0 || st.state >= num_states || st.action < 0 || st.action >= num_actions)
            throw DomainError("pair " + std::to_string(i) + ": state/action id out of range");
    }
}

}  // namespace

PreferenceDataset::PreferenceDataset(std::vector<PreferencePair> pairs, int num_states, int num_actions,
                                     double discount)
    : pairs_(std::move(pairs)),
      num_states_(num_states),
      num_actions_(num_actions),
      discount_(discount),
      bandit_(true) {
    if (pairs_.empty()) throw DomainError("dataset must contain at least one pair");
    if (num_states <= 0 || num_actions <= 0) throw DomainError("num_states and num_actions must be positive");
    if (!(discount > 0.0 && discount <= 1.0)) throw DomainError("discount must lie in (0, 1]");
    for (std::size_t i = 0; i < pairs_.size(); ++i) {
        const PreferencePair& p = pairs_[i];
        check_segment(p.first, num_states, num_actions, i);
        check_segment(p.second, num_states, num_actions, i);
        if (p.label != 0 && p.label != 1) throw DomainError("pair " + std::to_string(i) + ": label must be 0 or 1");
        bandit_ = bandit_ && p.is_bandit();
    }
}

PreferenceDataset PreferenceDataset::with_labels(const std::vector<int>& labels) const {
    if (labels.size() != pairs_.size()) throw DomainError("label count does not match dataset size");
    std::vector<PreferencePair> pairs = pairs_;
    for (std::size_t i = 0; i < pairs.size(); ++i) pairs[i].label = labels[i];
    return PreferenceDataset(std::move(pairs), num_states_, num_actions_, discount_);
}

std::vector<int> PreferenceDataset::labels() const {
    std::vector<int> out;
    out.reserve(pairs_.size());
    for (const auto& p : pairs_) out.push_back(p.label);
    return out;
}

double segment_reward(const TrajectorySegment& segment, const TabularReward& reward, double discount) {
    double total = 0.0;
    double weight = 1.0;
    for (const Step& st : segment.steps) {
        if (st.state < 0 || st.state >= reward.num_states || st.action < 0 || st.action >= reward.num_actions)
            throw DomainError("segment_reward: state/action id out of range");
        weight *= discount;
        total += weight * reward(st.state, st.action);
    }
    return total;
}

Eigen::VectorXd DesignMatrix::diff(std::size_t i) const {
    Eigen::VectorXd x = Eigen::VectorXd::Zero(dim());
    const Diff& d = diffs_.at(i);
    if (d.plus >= 0) {
        x[d.plus] += 1.0;
        x[d.minus] -= 1.0;
    }
    return x;
}

Eigen::MatrixXd DesignMatrix::diff_matrix() const {
    Eigen::MatrixXd X = Eigen::MatrixXd::Zero(dim(), static_cast<Eigen::Index>(diffs_.size()));
    for (std::size_t i = 0; i < diffs_.size(); ++i) X.col(static_cast<Eigen::Index>(i)) = diff(i);
    return X;
}

Eigen::Index DesignMatrix::rank() const noexcept {
    Eigen::Index r = 0;
    for (Eigen::Index k = 0; k < eigenvalues_.size(); ++k)
        if (eigenvalues_[k] > cutoff_) ++r;
    return r;
}

Eigen::MatrixXd DesignMatrix::pseudo_inverse() const {
    Eigen::VectorXd inv = eigenvalues_.unaryExpr([this](double l) { return l > cutoff_ ? 1.0 / l : 0.0; });
    return eigenvectors_ * inv.asDiagonal() * eigenvectors_.transpose();
}

Eigen::MatrixXd DesignMatrix::sqrt() const {
    Eigen::VectorXd root = eigenvalues_.cwiseSqrt();
    return eigenvectors_ * root.asDiagonal() * eigenvectors_.transpose();
}

Eigen::MatrixXd DesignMatrix::sqrt_pseudo_inverse() const {
    Eigen::VectorXd inv =
        eigenvalues_.unaryExpr([this](double l) { return l > cutoff_ ? 1.0 / std::sqrt(l) : 0.0; });
    return eigenvectors_ * inv.asDiagonal() * eigenvectors_.transpose();
}

DesignMatrix build_design(const PreferenceDataset& dataset, double rel_tol) {
    if (!dataset.is_bandit()) throw ModeError("build_design requires a bandit-mode dataset");
    if (!(rel_tol >= 0.0)) throw DomainError("rank cutoff tolerance must be non-negative");

    const Eigen::Index dim = static_cast<Eigen::Index>(dataset.dim());
    const double inv_n = 1.0 / static_cast<double>(dataset.size());

    DesignMatrix design;
    design.diffs_.reserve(dataset.size());
    design.sigma0_ = Eigen::MatrixXd::Zero(dim, dim);
    for (const PreferencePair& p : dataset.pairs()) {
        DesignMatrix::Diff d;
        if (p.first_action() != p.second_action()) {
            d.plus = static_cast<Eigen::Index>(p.state()) * dataset.num_actions() + p.first_action();
            d.minus = static_cast<Eigen::Index>(p.state()) * dataset.num_actions() + p.second_action();
            design.sigma0_(d.plus, d.plus) += inv_n;
            design.sigma0_(d.minus, d.minus) += inv_n;
            design.sigma0_(d.plus, d.minus) -= inv_n;
            design.sigma0_(d.minus, d.plus) -= inv_n;
        }
        design.diffs_.push_back(d);
    }

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(design.sigma0_);
    design.eigenvalues_ = solver.eigenvalues().cwiseMax(0.0);
    design.eigenvectors_ = solver.eigenvectors();
    design.cutoff_ = rel_tol * design.max_eigenvalue();
    return design;
}

double sigma_norm(const Eigen::VectorXd& v, const DesignMatrix& design) {
    if (v.size() != design.dim()) throw DomainError("sigma_norm: dimension mismatch");
    const double q = v.dot(design.sigma0() * v);
    return std::sqrt(std::max(q, 0.0));
}

double sigma_dagger_norm(const Eigen::VectorXd& v, const DesignMatrix& design) {
    if (v.size() != design.dim()) throw DomainError("sigma_dagger_norm: dimension mismatch");
    const Eigen::VectorXd coords = design.eigenvectors().transpose() * v;
    double q = 0.0;
    for (Eigen::Index k = 0; k < coords.size(); ++k) {
        const double l = design.eigenvalues()[k];
        if (l > design.cutoff()) q += coords[k] * coords[k] / l;
    }
    return std::sqrt(q);
}

namespace {

json steps_to_json(const TrajectorySegment& seg) {
    json arr = json::array();
    for (const Step& st : seg.steps) arr.push_back({st.state, st.action});
    return arr;
}

TrajectorySegment steps_from_json(const json& arr, std::size_t line) {
    if (!arr.is_array()) throw DomainError("line " + std::to_string(line) + ": steps must be an array");
    TrajectorySegment seg;
    for (const json& st : arr) {
        if (!st.is_array() || st.size() != 2)
            throw DomainError("line " + std::to_string(line) + ": each step must be [state, action]");
        seg.steps.push_back(Step{st[0].get<int>(), st[1].get<int>()});
    }
    return seg;
}

}  // namespace

void write_jsonl(std::ostream& out, const PreferenceDataset& dataset) {
    json header = {{"format", "r3m-preferences"},
                   {"version", 1},
                   {"num_states", dataset.num_states()},
                   {"num_actions", dataset.num_actions()},
                   {"discount", dataset.discount()}};
    out << header.dump() << '\n';
    for (const PreferencePair& p : dataset.pairs()) {
        json line;
        if (p.is_bandit()) {
            line = {{"state", p.state()},
                    {"first_action", p.first_action()},
                    {"second_action", p.second_action()},
                    {"label", p.label}};
        } else {
            line = {{"first_steps", steps_to_json(p.first)},
                    {"second_steps", steps_to_json(p.second)},
                    {"label", p.label}};
        }
        out << line.dump() << '\n';
    }
}

PreferenceDataset read_jsonl(std::istream& in) {
    std::vector<PreferencePair> pairs;
    int num_states = -1;
    int num_actions = -1;
    double discount = 1.0;
    int max_state = -1;
    int max_action = -1;

    std::string text;
    std::size_t line_no = 0;
    while (std::getline(in, text)) {
        ++line_no;
        if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
        json line;
        try {
            line = json::parse(text);
        } catch (const json::parse_error& e) {
            throw DomainError("line " + std::to_string(line_no) + ": " + e.what());
        }
        if (line.contains("format")) {
            num_states = line.at("num_states").get<int>();
            num_actions = line.at("num_actions").get<int>();
            discount = line.value("discount", 1.0);
            continue;
        }
        PreferencePair p;
        if (line.contains("state")) {
            p = PreferencePair::bandit(line.at("state").get<int>(), line.at("first_action").get<int>(),
                                       line.at("second_action").get<int>(), line.at("label").get<int>());
        } else if (line.contains("first_steps")) {
            p.first = steps_from_json(line.at("first_steps"), line_no);
            p.second = steps_from_json(line.at("second_steps"), line_no);
            p.label = line.at("label").get<int>();
        } else {
            throw DomainError("line " + std::to_string(line_no) + ": unrecognized record");
        }
        for (const auto* seg : {&p.first, &p.second})
            for (const Step& st : seg->steps) {
                max_state = std::max(max_state, st.state);
                max_action = std::max(max_action, st.action);
            }
        pairs.push_back(std::move(p));
    }
    if (num_states < 0) num_states = max_state + 1;
    if (num_actions < 0) num_actions = max_action + 1;
    return PreferenceDataset(std::move(pairs), num_states, num_actions, discount);
}

void write_sigma_csv(std::ostream& out, const DesignMatrix& design) {
    out << "i,j,value\n";
    char buf[64];
    for (Eigen::Index i = 0; i < design.dim(); ++i)
        for (Eigen::Index j = 0; j < design.dim(); ++j) {
            std::snprintf(buf, sizeof buf, "%.17g", design.sigma0()(i, j));
            out << i << ',' << j << ',' << buf << '\n';
        }
}

}  // namespace r3m
