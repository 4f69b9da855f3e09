#include <cmath>
#include <set>

#include "doctest.h"
#include "oracles.hpp"
#include "peft_forge/error.hpp"
#include "peft_forge/hpo.hpp"
#include "scenarios.hpp"

using namespace peft_forge;

namespace {

/// Posterior mean and variance from a dense solve of the kernel system.
std::pair<double, double> dense_posterior(const std::vector<std::vector<double>>& x,
                                          const std::vector<double>& y_std, const std::vector<double>& q,
                                          double ell, double noise) {
    const std::size_t n = x.size();
    std::vector<std::vector<double>> k(n, std::vector<double>(n));
    std::vector<double> kq(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) k[i][j] = rbf_kernel(x[i], x[j], ell) + (i == j ? noise : 0.0);
        kq[i] = rbf_kernel(x[i], q, ell);
    }
    const auto a = oracle::solve(k, y_std);
    const auto v = oracle::solve(k, kq);
    double mean = 0.0, reduce = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mean += kq[i] * a[i];
        reduce += kq[i] * v[i];
    }
    return {mean, 1.0 - reduce};
}

Point lora_point(double r, double alpha, double dropout) { return {r, alpha, dropout}; }

}  // namespace

TEST_CASE("search spaces") {
    CHECK(search_space(Stage::pretrain, Technique::lora).grid_size() == 4 * 4 * 3);
    CHECK(search_space(Stage::pretrain, Technique::prefix).grid_size() == 5 * 2);
    CHECK(search_space(Stage::pretrain, Technique::prompt).grid_size() == 5 * 2);
    CHECK(search_space(Stage::pretrain, Technique::ptuning).grid_size() == 5 * 2 * 4 * 5 * 3);
    CHECK(search_space(Stage::pretrain, Technique::adaption_prompt).grid_size() == 2 * 3);
    CHECK(search_space(Stage::finetune, Technique::lora).grid_size() == 48);
    for (Technique t : {Technique::prefix, Technique::prompt, Technique::ptuning, Technique::adaption_prompt}) {
        CHECK_THROWS_AS(search_space(Stage::finetune, t), UsageError);
    }

    const auto s = search_space(Stage::pretrain, Technique::ptuning);
    std::set<std::size_t> back;
    for (std::size_t i = 0; i < s.grid_size(); ++i) back.insert(s.flat_index(s.point_at(i)));
    CHECK(back.size() == s.grid_size());
    CHECK(*back.rbegin() == s.grid_size() - 1);

    const auto cfg = config_from_point(Technique::ptuning, s, s.point_at(s.grid_size() - 1));
    const auto& p = std::get<PTuningConfig>(cfg);
    CHECK(p.num_virtual_tokens == 20);
    CHECK(p.reparameterisation == Reparameterisation::lstm);
    CHECK(p.hidden == 768);
    CHECK(p.num_layers == 12);
    CHECK(p.dropout == 0.2);
    const auto lora = std::get<LoraConfig>(config_from_point(
        Technique::lora, search_space(Stage::finetune, Technique::lora), lora_point(16, 32, 0.1)));
    CHECK(lora == LoraConfig{});
}

TEST_CASE("encoding") {
    const auto lora = search_space(Stage::pretrain, Technique::lora);
    CHECK(encode(lora_point(2, 4, 0.0), lora) == std::vector<double>{0.0, 0.0, 0.0});
    CHECK(encode(lora_point(16, 32, 0.2), lora) == std::vector<double>{1.0, 1.0, 1.0});
    CHECK(encode(lora_point(4, 8, 0.1), lora)[0] == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    CHECK(encode(lora_point(4, 8, 0.1), lora)[2] == doctest::Approx(0.5).epsilon(1e-15));
    CHECK_THROWS_AS(encode(lora_point(3, 8, 0.1), lora), UsageError);

    const auto prefix = search_space(Stage::pretrain, Technique::prefix);
    const auto e = encode(Point{10.0, true}, prefix);
    REQUIRE(e.size() == 3);
    CHECK(e[1] == 0.0);
    CHECK(e[2] == 1.0);
    CHECK(e[0] == doctest::Approx(std::log2(10.0) / std::log2(20.0)).epsilon(1e-15));

    const auto prompt = search_space(Stage::pretrain, Technique::prompt);
    CHECK_THROWS_AS(encode(Point{5.0, std::string("words")}, prompt), UsageError);
    CHECK(encode(Point{5.0, std::string("random")}, prompt)[2] == 1.0);
}

TEST_CASE("GP regression against a dense solve") {
    // One dimension, three points.
    const std::vector<std::vector<double>> x{{0.0}, {0.4}, {1.0}};
    const std::vector<double> y{1.0, 3.0, 2.0};
    const auto s = gp_fit(x, y, 0.5, 1e-6);
    CHECK(s.y_mean == doctest::Approx(2.0));
    for (double q : {0.1, 0.25, 0.7, 2.0}) {
        const auto p = gp_posterior(s, std::vector<double>{q});
        const auto [m, v] = dense_posterior(x, s.y, {q}, 0.5, 1e-6);
        CHECK(std::abs(p.mean - m) <= 1e-8);
        CHECK(std::abs(p.variance - v) <= 1e-8);
    }
    for (std::size_t i = 0; i < 3; ++i) {
        const auto p = gp_posterior(s, x[i]);
        CHECK(std::abs(p.mean - s.y[i]) <= 1e-4);
        CHECK(p.variance <= 1e-4);
    }
    CHECK(gp_posterior(s, std::vector<double>{50.0}).variance == doctest::Approx(1.0));

    // Twenty observations in five dimensions.
    Rng rng(3);
    std::vector<std::vector<double>> xs(20, std::vector<double>(5));
    std::vector<double> ys(20);
    for (auto& row : xs)
        for (auto& v : row) v = rng.uniform();
    for (auto& v : ys) v = rng.gaussian();
    const auto big = gp_fit(xs, ys);
    for (int t = 0; t < 10; ++t) {
        std::vector<double> q(5);
        for (auto& v : q) v = rng.uniform();
        const auto p = gp_posterior(big, q);
        const auto [m, v] = dense_posterior(xs, big.y, q, 0.5, 1e-6);
        CHECK(std::abs(p.mean - m) <= 1e-8);
        CHECK(std::abs(p.variance - v) <= 1e-8);
        CHECK(p.variance >= 0.0);
    }

    CHECK_THROWS_AS(gp_fit({}, {}), UsageError);
    CHECK_THROWS_AS(gp_fit({{0.5}, {0.5}}, {1.0, 2.0}), UsageError);
}

TEST_CASE("expected improvement") {
    CHECK(expected_improvement({1.0, 0.0}, 0.5, 0.0) == 0.5);
    CHECK(expected_improvement({0.0, 0.0}, 0.5, 0.0) == 0.0);
    // Zero gain with unit variance: sigma * pdf(0).
    CHECK(expected_improvement({0.5, 1.0}, 0.5, 0.0) == doctest::Approx(1.0 / std::sqrt(2 * M_PI)));
    CHECK(expected_improvement({0.5, 1.0}, 0.5, 0.01) < expected_improvement({0.5, 1.0}, 0.5, 0.0));
}

TEST_CASE("suggest skips tried points") {
    const auto space = search_space(Stage::pretrain, Technique::adaption_prompt);
    std::vector<bool> tried(6, false);
    tried[0] = tried[5] = true;
    const auto s = gp_fit({encode(space.point_at(0), space), encode(space.point_at(5), space)}, {0.0, 1.0});
    const std::size_t next = suggest(s, space, tried, 1.0);
    CHECK(next != 0);
    CHECK(next != 5);
    std::fill(tried.begin(), tried.end(), true);
    CHECK_THROWS_AS(suggest(s, space, tried, 1.0), UsageError);
}

TEST_CASE("search finds the LoRA rank optimum") {
    const auto space = search_space(Stage::pretrain, Technique::lora);
    const Objective f = [](const Point& p) {
        const double r = std::get<double>(p[0]);
        return -(std::log2(r) - 3.0) * (std::log2(r) - 3.0);
    };
    for (std::uint64_t seed : {1, 2, 3, 4, 5}) {
        const auto result = search(space, f, {.seed = seed});
        CHECK(result.history.size() == 20);
        CHECK(std::get<double>(result.best_trial().point[0]) == 8.0);
    }
}

TEST_CASE("search contract") {
    // Space of size one.
    SearchSpace one{{Dimension::ordinal("x", {3.0})}};
    int calls = 0;
    const auto single = search(one, [&](const Point&) { ++calls; return 1.0; }, {});
    CHECK(single.history.size() == 1);
    CHECK(calls == 1);
    CHECK(std::get<double>(single.best_trial().point[0]) == 3.0);

    // Grid smaller than the budget: exhausted early, every point once.
    const auto adaption = search_space(Stage::pretrain, Technique::adaption_prompt);
    const auto small = search(adaption, scenarios::smooth_objective(adaption, 1), {});
    CHECK(small.history.size() == 6);

    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        CAPTURE(seed);
        for (Technique t : {Technique::lora, Technique::ptuning}) {
            const auto r = scenarios::hpo_contract(search_space(Stage::pretrain, t), seed);
            CHECK_MESSAGE(r.ok, r.detail);
        }
    }

    // Minimisation returns the smallest observed value.
    const auto lora = search_space(Stage::pretrain, Technique::lora);
    const auto f = scenarios::smooth_objective(lora, 9);
    const auto mn = search(lora, [&](const Point& p) { return -f(p); }, {.direction = Direction::minimize});
    for (const auto& t : mn.history) CHECK(*mn.best_trial().objective <= *t.objective);
}

TEST_CASE("failed trials are recorded and the search continues") {
    const auto space = search_space(Stage::pretrain, Technique::lora);
    const auto f = scenarios::smooth_objective(space, 4);
    const Objective flaky = [&](const Point& p) {
        if (std::get<double>(p[2]) == 0.2) throw NumericError("diverged");
        if (std::get<double>(p[1]) == 4.0) return std::nan("");
        return f(p);
    };
    const auto r = search(space, flaky, {.seed = 2});
    CHECK(r.history.size() == 20);
    std::size_t failed = 0;
    for (const auto& t : r.history) failed += !t.objective.has_value();
    CHECK(failed > 0);
    CHECK(r.best_trial().objective.has_value());
    const auto all_fail = search(space, [](const Point&) -> double { throw DataError("no"); }, {.max_trials = 3});
    CHECK(all_fail.history.size() == 3);
    CHECK_FALSE(all_fail.best.has_value());
    CHECK_THROWS_AS(all_fail.best_trial(), NumericError);
    CHECK(all_fail.to_jsonl(space).find("\"failed\"") != std::string::npos);
}
