#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "r3m/error.hpp"
#include "r3m/experiment.hpp"

using namespace r3m;
using nlohmann::json;

namespace {

json smoke_json() {
    return json::parse(R"({
        "seed": 3,
        "generation": {"num_states": 5, "num_actions": 4, "B": 2.0, "n_list": [500], "seeds": 2},
        "corruption": {"kind": "clean"},
        "methods": [{"name": "mle", "method": "mle"}]
    })");
}

std::string csv_of(const ExperimentResults& r) {
    std::ostringstream ss;
    write_results_csv(ss, r);
    return ss.str();
}

std::string config_error_path(const json& j) {
    try {
        ExperimentConfig::from_json(j);
    } catch (const ConfigError& e) {
        return e.path();
    }
    return "<none>";
}

}  // namespace

TEST_CASE("true reward lies inside R_B") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const TabularReward r = generate_true_reward(5, 4, 2.0, seed);
        CHECK(std::abs(r.values.sum()) < 1e-12);
        CHECK(r.values.squaredNorm() == doctest::Approx(1.6));
        CHECK(r.in_feasible_set());
    }
    CHECK(generate_true_reward(5, 4, 2.0, 1).values == generate_true_reward(5, 4, 2.0, 1).values);
    CHECK_THROWS_AS(generate_true_reward(5, 1, 2.0, 1), DomainError);
}

TEST_CASE("pair sampling") {
    const PreferenceDataset ds = sample_bandit_pairs(3, 4, 5000, 2);
    std::vector<int> state_count(3, 0);
    for (const auto& p : ds.pairs()) {
        CHECK(p.first_action() != p.second_action());
        ++state_count[static_cast<std::size_t>(p.state())];
    }
    for (int c : state_count) CHECK(std::abs(c - 5000.0 / 3.0) < 150.0);
}

TEST_CASE("sign agreement") {
    TabularReward t = TabularReward::zeros(1, 3);
    t.values << 1.0, 0.0, -1.0;
    CHECK(sign_agreement(t.values, t) == 1.0);
    CHECK(sign_agreement(-t.values, t) == 0.0);
    CHECK(sign_agreement(Eigen::Vector3d(1.0, 1.0, -1.0), t) == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("sparsity rules") {
    CHECK(SparsityRule{SparsityRule::Kind::exponent, 1.0 / 3.0}.resolve(1000) == 10);
    CHECK(SparsityRule{SparsityRule::Kind::exponent, 1.0 / 3.0}.resolve(8000) == 20);
    CHECK(SparsityRule{SparsityRule::Kind::exponent, 1.0 / 3.0}.resolve(500) == 8);
    CHECK(SparsityRule{SparsityRule::Kind::exponent, 0.5}.resolve(100) == 10);
    CHECK(SparsityRule{SparsityRule::Kind::fraction, 0.5}.resolve(4000) == 2000);
    CHECK(SparsityRule{SparsityRule::Kind::fixed, 7}.resolve(4000) == 7);
}

TEST_CASE("config parsing reports field paths") {
    CHECK(config_error_path(smoke_json()) == "<none>");
    json j = smoke_json();
    j["generation"]["n_list"] = json::array();
    CHECK(config_error_path(j) == "generation.n_list");
    j = smoke_json();
    j["generation"]["n_list"] = {500, 400};
    CHECK(config_error_path(j) == "generation.n_list[1]");
    j = smoke_json();
    j["methods"] = json::array();
    CHECK(config_error_path(j) == "methods");
    j = smoke_json();
    j["methods"][0]["lambda"] = 1.5;
    j["methods"][0]["method"] = "r3m";
    CHECK(config_error_path(j) == "methods[0]");
    j = smoke_json();
    j["methods"][0]["method"] = "ppo";
    CHECK(config_error_path(j) == "methods[0].method");
    j = smoke_json();
    j["generation"]["colour"] = "red";
    CHECK(config_error_path(j) == "generation.colour");
    j = smoke_json();
    j["corruption"]["kind"] = "stochastic";
    j["corruption"]["tau"] = -1.0;
    CHECK(config_error_path(j) == "corruption");
    j = smoke_json();
    j["corruption"] = {{"kind", "sparse_adversarial"}, {"s", 3}, {"s_fraction", 0.5}};
    CHECK(config_error_path(j) == "corruption");
    j = smoke_json();
    j["methods"].push_back(j["methods"][0]);
    CHECK(config_error_path(j) == "methods[1].name");
    j = smoke_json();
    j["methods"][0] = {{"method", "r3m_dpo"}, {"lambda", "theory"}};
    CHECK(config_error_path(j) == "methods[0].lambda");
    j = smoke_json();
    j["generation"]["seeds"] = -2;
    CHECK(config_error_path(j) == "generation.seeds");
    CHECK(config_error_path(json::array()) == "<root>");
}

TEST_CASE("config round trip and hash") {
    json j = smoke_json();
    j["corruption"] = {{"kind", "sparse_adversarial"}, {"s_exponent", 1.0 / 3.0}, {"C", 2.0}};
    j["methods"] = {{{"name", "r3m"}, {"method", "r3m"}, {"lambda", "theory"}},
                    {{"name", "dpo"}, {"method", "r3m_dpo"}, {"beta", 0.5}, {"lambda", 0.7}}};
    const ExperimentConfig c = ExperimentConfig::from_json(j);
    CHECK(c.methods[0].theory_lambda);
    CHECK(c.methods[0].solver.lambda == 1.0);
    const ExperimentConfig back = ExperimentConfig::from_json(c.to_json());
    CHECK(back.to_json() == c.to_json());
    CHECK(back.hash() == c.hash());

    // same content, different key order in the source text
    const std::string reordered = R"({
        "methods": [{"lambda": "theory", "method": "r3m", "name": "r3m"},
                    {"lambda": 0.7, "beta": 0.5, "method": "r3m_dpo", "name": "dpo"}],
        "corruption": {"C": 2.0, "s_exponent": 0.3333333333333333, "kind": "sparse_adversarial"},
        "generation": {"seeds": 2, "n_list": [500], "B": 2.0, "num_actions": 4, "num_states": 5},
        "seed": 3
    })";
    CHECK(ExperimentConfig::from_json(json::parse(reordered)).hash() == c.hash());

    ExperimentConfig other = c;
    other.seed = 4;
    CHECK(other.hash() != c.hash());
    ExperimentConfig moved = c;
    moved.output_dir = "/tmp/elsewhere";
    moved.workers = 8;
    CHECK(moved.hash() == c.hash());
    CHECK(c.hash().size() == 16);
}

TEST_CASE("smoke grid") {
    const ExperimentConfig c = ExperimentConfig::from_json(smoke_json());
    const ExperimentResults r = run_grid(c);
    REQUIRE(r.rows.size() == 2);
    for (const RunRow& row : r.rows) {
        CHECK(row.method == "mle");
        CHECK(row.n == 500);
        CHECK(row.error.reward_err > 0.0);
        CHECK(row.error.delta_err == 0.0);
        CHECK(row.converged);
        CHECK(row.audit_holds);
    }
    CHECK(r.rows[0].seed != r.rows[1].seed);
    CHECK(r.summaries.size() == 1);
    CHECK_FALSE(r.summaries[0].reward_rate.has_value());

    const std::string csv = csv_of(r);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
    CHECK(csv.find(r.config_hash) != std::string::npos);
}

TEST_CASE("grid output is independent of the worker count") {
    json j = smoke_json();
    j["generation"]["n_list"] = {100, 200};
    j["generation"]["seeds"] = 3;
    j["corruption"] = {{"kind", "random_flip"}, {"rate", 0.1}};
    j["methods"] = {{{"name", "mle"}, {"method", "mle"}},
                    {{"name", "r3m"}, {"method", "r3m"}, {"lambda", 0.7}},
                    {{"name", "dpo"}, {"method", "dpo"}},
                    {{"name", "rdpo"}, {"method", "r3m_dpo"}, {"lambda", 0.7}}};
    const ExperimentConfig c = ExperimentConfig::from_json(j);
    const std::string one = csv_of(run_grid(c, 1));
    CHECK(one == csv_of(run_grid(c, 1)));
    CHECK(one == csv_of(run_grid(c, 3)));

    const ExperimentResults r = run_grid(c, 2);
    CHECK(r.rows.size() == 24);
    // R* does not depend on n: rows of the same seed index share the seed column
    CHECK(r.rows[0].seed == r.rows[3].seed);
    CHECK(r.rows[0].n == 100);
    CHECK(r.rows[3].n == 200);
}

TEST_CASE("results csv round trip and comparison") {
    json j = smoke_json();
    j["generation"]["n_list"] = {300};
    j["generation"]["seeds"] = 4;
    j["methods"] = {{{"name", "mle"}, {"method", "mle"}}, {{"name", "r3m"}, {"method", "r3m"}}};
    const ExperimentResults r = run_grid(ExperimentConfig::from_json(j));
    std::stringstream ss;
    write_results_csv(ss, r);
    const std::vector<RunRow> rows = read_results_csv(ss);
    REQUIRE(rows.size() == r.rows.size());
    for (std::size_t k = 0; k < rows.size(); ++k) {
        CHECK(rows[k].method == r.rows[k].method);
        CHECK(rows[k].error.reward_err == r.rows[k].error.reward_err);
        CHECK(rows[k].seed == r.rows[k].seed);
    }

    const PairedSummary self = compare_methods(rows, "mle", "mle");
    CHECK(self.win_fraction == 0.5);
    for (double d : self.differences) CHECK(d == 0.0);
    CHECK(self.ci_low == 0.0);
    CHECK(self.ci_high == 0.0);

    std::vector<RunRow> synthetic;
    for (std::size_t s = 0; s < 10; ++s) {
        RunRow a, b;
        a.method = "a";
        b.method = "b";
        a.n = b.n = 100;
        a.seed_index = b.seed_index = s;
        b.error.reward_err = 1.0 + static_cast<double>(s);
        a.error.reward_err = b.error.reward_err / 2.0;
        synthetic.push_back(a);
        synthetic.push_back(b);
    }
    const PairedSummary half = compare_methods(synthetic, "a", "b");
    CHECK(half.win_fraction == 1.0);
    CHECK(half.median_improvement == doctest::Approx(0.5));
    CHECK(half.ci_high < 0.0);
    CHECK(compare_methods(synthetic, "b", "a").win_fraction == 0.0);
    CHECK(compare_methods(synthetic, "a", "b", "reward_err", 9).ci_low ==
          compare_methods(synthetic, "a", "b", "reward_err", 9).ci_low);

    synthetic.pop_back();
    CHECK_THROWS_AS(compare_methods(synthetic, "a", "b"), DomainError);
    CHECK_THROWS_AS(compare_methods(rows, "mle", "nope"), DomainError);
    CHECK_THROWS_AS(compare_methods(rows, "mle", "r3m", "speed"), DomainError);

    std::stringstream bad("method,n\nmle,3\n");
    CHECK_THROWS_AS(read_results_csv(bad), ConfigError);
}

TEST_CASE("run_experiment writes its files") {
    const auto dir = std::filesystem::temp_directory_path() / "r3m_test_run_experiment";
    std::filesystem::remove_all(dir);
    const ExperimentConfig c = ExperimentConfig::from_json(smoke_json());
    const RunManifest m = run_experiment(c, dir);
    CHECK(std::filesystem::exists(dir / "results.csv"));
    CHECK(std::filesystem::exists(dir / "summary.json"));
    CHECK(std::filesystem::exists(dir / "manifest.json"));
    CHECK(m.config_hash == c.hash());
    CHECK_FALSE(m.version.empty());
    std::ifstream cfg(dir / "config.json");
    CHECK(ExperimentConfig::from_json(json::parse(cfg)).hash() == c.hash());

    std::ifstream first(dir / "results.csv");
    const std::string a((std::istreambuf_iterator<char>(first)), {});
    run_experiment(c, dir);
    std::ifstream second(dir / "results.csv");
    const std::string b((std::istreambuf_iterator<char>(second)), {});
    CHECK(a == b);

    std::ofstream(dir / "blocker") << "x";
    CHECK_THROWS_AS(run_experiment(c, dir / "blocker" / "sub"), ConfigError);
    std::filesystem::remove_all(dir);
}
