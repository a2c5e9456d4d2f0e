#include "r3m/corruption.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "r3m/error.hpp"

namespace r3m {

using nlohmann::json;

namespace {

constexpr double kImpliedMargin = 2.0;

double clean_gap(const PreferencePair& pair, const TabularReward& reward, double discount) {
    return segment_reward(pair.first, reward, discount) - segment_reward(pair.second, reward, discount);
}

/// Marks positions where `labels` differ from `reference` and assigns the
/// implied winner-oriented delta* there.
CorruptionRecord record_flips(const PreferenceDataset& dataset, const std::vector<int>& reference,
                              const std::vector<int>& labels, const TabularReward& reward, double cap) {
    CorruptionRecord rec;
    rec.implied_delta_star = PerturbationVector::zeros(dataset.size());
    rec.implied_delta_star.magnitude_bound = cap;
    rec.implied_delta_star.ground_truth = true;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] == reference[i]) continue;
        rec.flipped_indices.push_back(i);
        const double gap = std::abs(clean_gap(dataset[i], reward, dataset.discount()));
        rec.implied_delta_star.deltas[static_cast<Eigen::Index>(i)] = std::min(cap, gap + kImpliedMargin);
    }
    rec.implied_delta_star.sparsity_bound = rec.flipped_indices.size();
    return rec;
}

std::vector<int> bt_labels(const PreferenceDataset& dataset, const TabularReward& reward, double tau, Rng& rng) {
    std::vector<int> labels(dataset.size());
    for (std::size_t i = 0; i < dataset.size(); ++i)
        labels[i] = label_stochastic(dataset[i], reward, tau, dataset.discount(), rng).label;
    return labels;
}

std::vector<int> argmax_labels(const PreferenceDataset& dataset, const TabularReward& reward) {
    std::vector<int> labels(dataset.size());
    for (std::size_t i = 0; i < dataset.size(); ++i) labels[i] = label_argmax(dataset[i], reward, dataset.discount());
    return labels;
}

}  // namespace

std::string to_string(NoiseKind kind) {
    switch (kind) {
        case NoiseKind::clean: return "clean";
        case NoiseKind::stochastic: return "stochastic";
        case NoiseKind::myopic: return "myopic";
        case NoiseKind::irrational: return "irrational";
        case NoiseKind::random_flip: return "random_flip";
        case NoiseKind::sparse_adversarial: return "sparse_adversarial";
    }
    return "clean";
}

NoiseKind noise_kind_from_string(const std::string& name) {
    for (NoiseKind k : {NoiseKind::clean, NoiseKind::stochastic, NoiseKind::myopic, NoiseKind::irrational,
                        NoiseKind::random_flip, NoiseKind::sparse_adversarial})
        if (to_string(k) == name) return k;
    throw DomainError("unknown noise kind '" + name + "'");
}

void NoiseSpec::validate() const {
    switch (kind) {
        case NoiseKind::clean: break;
        case NoiseKind::stochastic:
            if (!(tau > 0.0)) throw DomainError("stochastic noise: tau must be positive");
            break;
        case NoiseKind::myopic:
            if (!(gamma_m > 0.0 && gamma_m <= 1.0)) throw DomainError("myopic noise: gamma must lie in (0, 1]");
            break;
        case NoiseKind::irrational:
            if (!(p > 0.0 && p < 1.0)) throw DomainError("irrational noise: p must lie in (0, 1)");
            if (batch_size == 0) throw DomainError("irrational noise: batch_size must be positive");
            break;
        case NoiseKind::random_flip:
            if (!(rate >= 0.0 && rate <= 1.0)) throw DomainError("random_flip: rate must lie in [0, 1]");
            break;
        case NoiseKind::sparse_adversarial:
            if (!(C > 0.0)) throw DomainError("sparse_adversarial: C must be positive");
            break;
    }
}

json NoiseSpec::to_json() const {
    json j = {{"kind", to_string(kind)}, {"seed", seed}};
    switch (kind) {
        case NoiseKind::clean: break;
        case NoiseKind::stochastic: j["tau"] = tau; break;
        case NoiseKind::myopic: j["gamma"] = gamma_m; break;
        case NoiseKind::irrational:
            j["p"] = p;
            j["batch_size"] = batch_size;
            break;
        case NoiseKind::random_flip: j["rate"] = rate; break;
        case NoiseKind::sparse_adversarial:
            j["s"] = s;
            j["C"] = C;
            break;
    }
    return j;
}

json CorruptionRecord::to_json() const {
    return {{"flipped_indices", flipped_indices},
            {"delta_star",
             std::vector<double>(implied_delta_star.deltas.begin(), implied_delta_star.deltas.end())}};
}

int label_argmax(const PreferencePair& pair, const TabularReward& reward, double discount) {
    return clean_gap(pair, reward, discount) > 0.0 ? 1 : 0;
}

StochasticDraw label_stochastic(const PreferencePair& pair, const TabularReward& reward, double tau,
                                double discount, Rng& rng) {
    if (!(tau > 0.0)) throw DomainError("label_stochastic: tau must be positive");
    const double prob = sigmoid(clean_gap(pair, reward, discount) / tau);
    return StochasticDraw{rng.bernoulli(prob) ? 1 : 0, prob};
}

int label_myopic(const PreferencePair& pair, const TabularReward& reward, double gamma_m) {
    if (!(gamma_m > 0.0 && gamma_m <= 1.0)) throw DomainError("label_myopic: gamma must lie in (0, 1]");
    const std::size_t m = pair.first.length();
    if (pair.second.length() != m) throw DomainError("label_myopic: segments must have equal length");
    auto score = [&](const TrajectorySegment& seg) {
        double total = 0.0;
        for (std::size_t t = 1; t <= m; ++t) {
            const Step& st = seg.steps[t - 1];
            if (st.state < 0 || st.state >= reward.num_states || st.action < 0 || st.action >= reward.num_actions)
                throw DomainError("label_myopic: state/action id out of range");
            total += std::pow(gamma_m, static_cast<double>(m - t)) * reward(st.state, st.action);
        }
        return total;
    };
    return score(pair.first) > score(pair.second) ? 1 : 0;
}

std::size_t irrational_flip_count(std::size_t batch, double p) {
    if (!(p > 0.0 && p < 1.0)) throw DomainError("irrational noise: p must lie in (0, 1)");
    const double raw = std::pow(static_cast<double>(batch), p);
    const auto count = static_cast<std::size_t>(std::ceil(raw - 1e-9 * std::max(1.0, raw)));
    return std::min(count, batch);
}

IrrationalLabels label_irrational(std::span<const PreferencePair> batch, const TabularReward& reward, double p,
                                  double discount) {
    if (batch.empty()) throw DomainError("label_irrational: empty batch");
    const std::size_t k = irrational_flip_count(batch.size(), p);

    IrrationalLabels out;
    std::vector<double> gaps(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const double gap = clean_gap(batch[i], reward, discount);
        out.labels.push_back(gap > 0.0 ? 1 : 0);
        gaps[i] = std::abs(gap);  // gap of the clean winner over the loser
    }
    std::vector<std::size_t> order(batch.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return gaps[a] > gaps[b]; });
    out.flipped.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
    std::sort(out.flipped.begin(), out.flipped.end());
    for (std::size_t i : out.flipped) out.labels[i] = 1 - out.labels[i];
    return out;
}

CorruptedDataset corrupt_sparse_adversarial(const PreferenceDataset& clean, const TabularReward& true_reward,
                                            std::size_t s, double C, std::uint64_t seed) {
    if (s > clean.size()) throw DomainError("corrupt_sparse_adversarial: s exceeds the number of samples");
    if (!(C > 0.0)) throw DomainError("corrupt_sparse_adversarial: C must be positive");
    Rng rng(seed);
    std::vector<int> labels = clean.labels();
    const std::vector<int> reference = labels;
    for (std::size_t i : rng.sample_without_replacement(clean.size(), s)) labels[i] = 1 - labels[i];
    CorruptedDataset out{clean.with_labels(labels), record_flips(clean, reference, labels, true_reward, C)};
    out.record.implied_delta_star.sparsity_bound = s;
    return out;
}

CorruptedDataset random_flip(const PreferenceDataset& dataset, double rate, std::uint64_t seed,
                             const TabularReward& true_reward) {
    if (!(rate >= 0.0 && rate <= 1.0)) throw DomainError("random_flip: rate must lie in [0, 1]");
    Rng rng(seed);
    std::vector<int> labels = dataset.labels();
    const std::vector<int> reference = labels;
    for (int& y : labels)
        if (rng.bernoulli(rate)) y = 1 - y;
    return CorruptedDataset{dataset.with_labels(labels),
                            record_flips(dataset, reference, labels, true_reward,
                                         std::numeric_limits<double>::infinity())};
}

CorruptedDataset apply_noise(const PreferenceDataset& pairs, const TabularReward& true_reward, const NoiseSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);
    Rng label_rng = rng.split(1);
    const double inf = std::numeric_limits<double>::infinity();

    switch (spec.kind) {
        case NoiseKind::clean: {
            PreferenceDataset ds = pairs.with_labels(bt_labels(pairs, true_reward, 1.0, label_rng));
            CorruptionRecord rec{{}, PerturbationVector::zeros(ds.size())};
            rec.implied_delta_star.ground_truth = true;
            return CorruptedDataset{std::move(ds), std::move(rec)};
        }
        case NoiseKind::stochastic: {
            const std::vector<int> labels = bt_labels(pairs, true_reward, spec.tau, label_rng);
            return CorruptedDataset{pairs.with_labels(labels),
                                    record_flips(pairs, argmax_labels(pairs, true_reward), labels, true_reward, inf)};
        }
        case NoiseKind::myopic: {
            std::vector<int> labels(pairs.size());
            for (std::size_t i = 0; i < pairs.size(); ++i) labels[i] = label_myopic(pairs[i], true_reward, spec.gamma_m);
            return CorruptedDataset{pairs.with_labels(labels),
                                    record_flips(pairs, argmax_labels(pairs, true_reward), labels, true_reward, inf)};
        }
        case NoiseKind::irrational: {
            std::vector<int> labels;
            labels.reserve(pairs.size());
            std::span<const PreferencePair> all(pairs.pairs());
            for (std::size_t start = 0; start < all.size(); start += spec.batch_size) {
                const std::size_t len = std::min(spec.batch_size, all.size() - start);
                IrrationalLabels batch = label_irrational(all.subspan(start, len), true_reward, spec.p, pairs.discount());
                labels.insert(labels.end(), batch.labels.begin(), batch.labels.end());
            }
            return CorruptedDataset{pairs.with_labels(labels),
                                    record_flips(pairs, argmax_labels(pairs, true_reward), labels, true_reward, inf)};
        }
        case NoiseKind::random_flip: {
            PreferenceDataset clean = pairs.with_labels(bt_labels(pairs, true_reward, 1.0, label_rng));
            return random_flip(clean, spec.rate, derive_seed(spec.seed, {2}), true_reward);
        }
        case NoiseKind::sparse_adversarial: {
            PreferenceDataset clean = pairs.with_labels(bt_labels(pairs, true_reward, 1.0, label_rng));
            return corrupt_sparse_adversarial(clean, true_reward, spec.s, spec.C, derive_seed(spec.seed, {3}));
        }
    }
    throw DomainError("unknown noise kind");
}

}  // namespace r3m
