#include "peft_forge/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "json.hpp"

#include "peft_forge/error.hpp"

namespace peft_forge {

double perplexity(double total_nll, std::size_t token_count) {
    if (token_count == 0) {
        throw UsageError("perplexity: no tokens");
    }
    const double ppl = std::exp(total_nll / static_cast<double>(token_count));
    if (!std::isfinite(ppl)) throw NumericError("perplexity is not finite");
    return ppl;
}

std::optional<double> auroc_binary(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size()) {
        throw UsageError("auroc: scores and labels differ in length");
    }
    const std::size_t n = scores.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    // Sum of (1-based) midranks of the positives, kept doubled so it stays integral.
    std::uint64_t twice_rank_sum = 0;
    std::uint64_t n_pos = 0;
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j < n && scores[order[j]] == scores[order[i]]) {
            ++j;
        }
        const std::uint64_t twice_midrank = i + 1 + j;  // (i+1) + j, ranks i+1..j
        for (std::size_t t = i; t < j; ++t) {
            const int y = labels[order[t]];
            if (y != 0 && y != 1) {
                throw UsageError("auroc: labels must be 0 or 1");
            }
            if (y == 1) {
                twice_rank_sum += twice_midrank;
                ++n_pos;
            }
        }
        i = j;
    }
    const std::uint64_t n_neg = n - n_pos;
    if (n_pos == 0 || n_neg == 0) {
        return std::nullopt;
    }
    // wins + ties / 2 = R+ - n+(n+ + 1)/2, doubled to stay integral.
    const std::uint64_t twice_u = twice_rank_sum - n_pos * (n_pos + 1);
    return 0.5 * static_cast<double>(twice_u) / static_cast<double>(n_pos * n_neg);
}

MacroAuroc auroc_multiclass(std::span<const double> scores, std::size_t k,
                            std::span<const int> labels) {
    if (k < 2) {
        throw UsageError("auroc_multiclass: need at least two classes");
    }
    const std::size_t n = labels.size();
    if (scores.size() != n * k) {
        throw UsageError("auroc_multiclass: scores must be [n, k]");
    }
    MacroAuroc out;
    double total = 0.0;
    std::vector<double> column(n);
    std::vector<int> is_class(n);
    for (std::size_t c = 0; c < k; ++c) {
        for (std::size_t i = 0; i < n; ++i) {
            if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= k) {
                throw UsageError("auroc_multiclass: label out of range");
            }
            column[i] = scores[i * k + c];
            is_class[i] = static_cast<std::size_t>(labels[i]) == c ? 1 : 0;
        }
        if (auto a = auroc_binary(column, is_class)) {
            total += *a;
            ++out.used;
        } else {
            ++out.skipped;
        }
    }
    if (out.used == 0) {
        throw NumericError("auroc_multiclass: fewer than two classes present");
    }
    out.value = total / static_cast<double>(out.used);
    return out;
}

MacroAuroc auroc_multilabel(std::span<const double> scores, std::size_t k,
                            std::span<const std::uint8_t> labels) {
    if (k == 0 || scores.size() != labels.size() || scores.size() % k != 0) {
        throw UsageError("auroc_multilabel: scores and labels must both be [n, k]");
    }
    const std::size_t n = scores.size() / k;
    MacroAuroc out;
    double total = 0.0;
    std::vector<double> column(n);
    std::vector<int> truth(n);
    for (std::size_t c = 0; c < k; ++c) {
        for (std::size_t i = 0; i < n; ++i) {
            column[i] = scores[i * k + c];
            truth[i] = labels[i * k + c];
        }
        if (auto a = auroc_binary(column, truth)) {
            total += *a;
            ++out.used;
        } else {
            ++out.skipped;
        }
    }
    if (out.used == 0) {
        throw NumericError("auroc_multilabel: no label has both outcomes");
    }
    out.value = total / static_cast<double>(out.used);
    return out;
}

MacroAuroc task_auroc(const TaskSpec& task, std::span<const double> logits,
                      std::span<const ClassLabel> labels) {
    const std::size_t n = labels.size();
    const std::size_t w = task.n_outputs();
    if (logits.size() != n * w) {
        throw UsageError("task_auroc: logits must be [n, " + std::to_string(w) + "]");
    }
    auto sigmoid = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };
    switch (task.kind) {
        case TaskKind::binary: {
            std::vector<double> s(n);
            std::vector<int> y(n);
            for (std::size_t i = 0; i < n; ++i) {
                s[i] = sigmoid(logits[i]);
                y[i] = labels[i].value;
            }
            const auto a = auroc_binary(s, y);
            if (!a) {
                throw NumericError("task " + task.name + ": evaluation split has a single class");
            }
            return {*a, 1, 0};
        }
        case TaskKind::multiclass: {
            std::vector<double> p(n * w);
            std::vector<int> y(n);
            for (std::size_t i = 0; i < n; ++i) {
                const double* row = logits.data() + i * w;
                const double m = *std::max_element(row, row + w);
                double z = 0.0;
                for (std::size_t c = 0; c < w; ++c) z += std::exp(row[c] - m);
                for (std::size_t c = 0; c < w; ++c) p[i * w + c] = std::exp(row[c] - m) / z;
                y[i] = labels[i].value;
            }
            return auroc_multiclass(p, w, y);
        }
        case TaskKind::multilabel: {
            std::vector<double> s(n * w);
            std::vector<std::uint8_t> y(n * w);
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t c = 0; c < w; ++c) {
                    s[i * w + c] = sigmoid(logits[i * w + c]);
                    y[i * w + c] = labels[i].multi.at(c);
                }
            }
            return auroc_multilabel(s, w, y);
        }
    }
    return {};
}

double round_to(double x, int decimals) {
    const double f = std::pow(10.0, decimals);
    return std::round(x * f) / f;
}

double macro_average(std::span<const double> scores) {
    if (scores.empty()) {
        throw UsageError("macro_average: no scores");
    }
    double total = 0.0;
    for (double s : scores) total += s;
    return round_to(total / static_cast<double>(scores.size()), 2);
}

void EvalReport::add_task(const std::string& name, double auroc_fraction) {
    tasks[name] = round_to(auroc_fraction * 100.0, 2);
}

std::optional<double> EvalReport::macro_avg() const {
    if (tasks.empty()) {
        return std::nullopt;
    }
    std::vector<double> values;
    for (const auto& [name, v] : tasks) values.push_back(v);
    return macro_average(values);
}

std::string EvalReport::to_json() const {
    nlohmann::ordered_json j = nlohmann::ordered_json::object();
    for (const char* key : {"pmv", "mor", "los", "diag", "proc"}) {
        if (auto it = tasks.find(key); it != tasks.end()) {
            j[key] = it->second;
        }
    }
    for (const auto& [name, v] : tasks) {
        if (!j.contains(name)) j[name] = v;
    }
    if (auto m = macro_avg()) {
        j["macro_avg"] = *m;
    }
    if (perplexity) {
        j["perplexity"] = *perplexity;
    }
    return j.dump();
}

}  // namespace peft_forge
