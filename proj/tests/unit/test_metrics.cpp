#include <cmath>

#include "doctest.h"
#include "json.hpp"
#include "oracles.hpp"
#include "peft_forge/error.hpp"
#include "peft_forge/metrics.hpp"
#include "peft_forge/rng.hpp"

using namespace peft_forge;

TEST_CASE("perplexity") {
    CHECK(perplexity(128 * std::log(128.0), 128) == doctest::Approx(128.0));
    CHECK(perplexity(0.0, 10) == 1.0);
    CHECK(perplexity(5 * std::log(2.0), 5) == doctest::Approx(2.0));
    CHECK_THROWS_AS(perplexity(1.0, 0), UsageError);
}

TEST_CASE("binary AUROC hand cases") {
    const std::vector<double> s{0.1, 0.4, 0.35, 0.8};
    const std::vector<int> y{0, 0, 1, 1};
    CHECK(*auroc_binary(s, y) == 0.75);
    CHECK(*auroc_binary(std::vector<double>{0.1, 0.2, 0.9}, std::vector<int>{0, 0, 1}) == 1.0);
    CHECK(*auroc_binary(std::vector<double>{3, 3, 3, 3}, std::vector<int>{0, 1, 0, 1}) == 0.5);
    CHECK_FALSE(auroc_binary(std::vector<double>{0.1, 0.2}, std::vector<int>{1, 1}).has_value());
    CHECK_THROWS_AS(auroc_binary(std::vector<double>{0.1}, std::vector<int>{2}), UsageError);
}

TEST_CASE("binary AUROC properties") {
    Rng rng(5);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 2 + rng.below(60);
        std::vector<double> s(n);
        std::vector<int> y(n), flipped(n);
        for (std::size_t i = 0; i < n; ++i) {
            s[i] = static_cast<double>(rng.below(10)) / 10.0;  // plenty of ties
            y[i] = rng.bernoulli(0.4) ? 1 : 0;
            flipped[i] = 1 - y[i];
        }
        const auto a = auroc_binary(s, y);
        if (!a) continue;
        CHECK(*a + *auroc_binary(s, flipped) == doctest::Approx(1.0).epsilon(1e-15));
        std::vector<double> transformed(n);
        for (std::size_t i = 0; i < n; ++i) transformed[i] = std::exp(3.0 * s[i]) - 7.0;
        CHECK(*auroc_binary(transformed, y) == *a);
    }
}

TEST_CASE("AUROC equals the pair-counting oracle exactly") {
    Rng rng(11);
    for (int trial = 0; trial < 300; ++trial) {
        const std::size_t n = 1 + rng.below(200);
        std::vector<double> s(n);
        std::vector<int> y(n);
        for (std::size_t i = 0; i < n; ++i) {
            s[i] = rng.bernoulli(0.5) ? static_cast<double>(rng.below(7)) : rng.uniform();
            y[i] = rng.bernoulli(0.3) ? 1 : 0;
        }
        const auto fast = auroc_binary(s, y);
        const auto slow = oracle::auroc_pairs(s, y);
        REQUIRE(fast.has_value() == slow.has_value());
        if (fast) REQUIRE(*fast == *slow);
    }
}

TEST_CASE("multiclass AUROC") {
    // One-hot-correct and uniform extremes.
    const std::vector<int> y{0, 1, 2, 3, 1, 0};
    std::vector<double> onehot(6 * 4, 0.0), uniform(6 * 4, 0.25);
    for (std::size_t i = 0; i < 6; ++i) onehot[i * 4 + y[i]] = 1.0;
    CHECK(auroc_multiclass(onehot, 4, y).value == 1.0);
    CHECK(auroc_multiclass(uniform, 4, y).value == 0.5);

    // Hand table against the per-class oracle.
    const std::vector<double> p{0.7, 0.1, 0.1, 0.1, 0.2, 0.5, 0.2, 0.1, 0.1, 0.3, 0.4, 0.2,
                                0.25, 0.25, 0.25, 0.25, 0.3, 0.3, 0.3, 0.1, 0.4, 0.2, 0.2, 0.2};
    std::vector<std::vector<int>> cols(4, std::vector<int>(6));
    for (std::size_t c = 0; c < 4; ++c)
        for (std::size_t i = 0; i < 6; ++i) cols[c][i] = y[i] == static_cast<int>(c);
    CHECK(auroc_multiclass(p, 4, y).value == *oracle::macro_pairs(p, 4, cols));

    // An absent class is skipped.
    const std::vector<int> y3{0, 1, 2, 1, 0, 2};
    const auto r = auroc_multiclass(p, 4, y3);
    CHECK(r.used == 3);
    CHECK(r.skipped == 1);
    CHECK_THROWS_AS(auroc_multiclass(p, 4, std::vector<int>(6, 2)), NumericError);
}

TEST_CASE("multilabel AUROC") {
    const std::vector<double> s{0.9, 0.1, 0.5, 0.2, 0.8, 0.5, 0.7, 0.3, 0.1};
    const std::vector<std::uint8_t> y{1, 0, 1, 0, 1, 1, 1, 0, 0};
    std::vector<std::vector<int>> cols(3, std::vector<int>(3));
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < 3; ++i) cols[c][i] = y[i * 3 + c];
    const auto r = auroc_multilabel(s, 3, y);
    CHECK(r.value == *oracle::macro_pairs(s, 3, cols));
    CHECK(r.used + r.skipped == 3);

    // All-positive label skipped.
    const std::vector<std::uint8_t> y2{1, 1, 0, 1, 0, 0, 1, 1, 1};
    CHECK(auroc_multilabel(s, 3, y2).skipped == 1);
    CHECK_THROWS_AS(auroc_multilabel(s, 3, std::vector<std::uint8_t>(9, 1)), NumericError);
}

TEST_CASE("macro average") {
    // Mean 72.708 rounds half away from zero to 72.71.
    CHECK(macro_average(std::vector<double>{58.29, 81.83, 73.02, 72.08, 78.32}) == 72.71);
    CHECK(macro_average(std::vector<double>{59.43, 84.65, 72.71}) == 72.26);
    CHECK(macro_average(std::vector<double>{64.5}) == 64.5);
    CHECK(macro_average(std::vector<double>{62.36, 84.03, 72.37, 73.26, 79.6}) == 74.32);
    CHECK_THROWS_AS(macro_average(std::vector<double>{}), UsageError);
    // Permutation invariance.
    CHECK(macro_average(std::vector<double>{78.32, 72.08, 58.29, 73.02, 81.83}) == 72.71);
    CHECK(round_to(0.125, 2) == 0.13);
}

TEST_CASE("task AUROC and reports") {
    const TaskSpec bin = TaskSpec::binary("pmv");
    const std::vector<double> logits{-1.0, 2.0, 0.5, -3.0};
    const std::vector<ClassLabel> labels{ClassLabel::single(0), ClassLabel::single(1),
                                         ClassLabel::single(1), ClassLabel::single(0)};
    CHECK(task_auroc(bin, logits, labels).value == 1.0);

    EvalReport report;
    report.add_task("mor", 0.81834);
    report.add_task("pmv", 0.5829);
    const auto j = nlohmann::json::parse(report.to_json());
    CHECK(j["pmv"] == 58.29);
    CHECK(j["mor"] == 81.83);
    CHECK(j["macro_avg"] == 70.06);
    CHECK(report.to_json().find("\"pmv\"") < report.to_json().find("\"mor\""));
}
