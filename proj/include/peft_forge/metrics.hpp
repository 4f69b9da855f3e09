#pragma once

// Perplexity and the AUROC family. AUROC values here are fractions in [0, 1];
// reports render them as percents.

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "peft_forge/task.hpp"

namespace peft_forge {

/// exp(total_nll / token_count). Throws UsageError when token_count == 0 and
/// NumericError when the result overflows or is NaN.
double perplexity(double total_nll, std::size_t token_count);

/// Mann-Whitney statistic via midranks, O(n log n). nullopt when only one
/// class is present.
std::optional<double> auroc_binary(std::span<const double> scores, std::span<const int> labels);

struct MacroAuroc {
    double value = 0.0;
    std::size_t used = 0;     // classes / labels with both outcomes present
    std::size_t skipped = 0;  // classes / labels with a single outcome
};

/// One-vs-rest macro average over the classes present in `labels`;
/// `scores` is row-major [n, k]. Throws NumericError when fewer than two
/// classes are present.
MacroAuroc auroc_multiclass(std::span<const double> scores, std::size_t k,
                            std::span<const int> labels);

/// Macro average over labels with both outcomes present; `scores` and
/// `labels` are row-major [n, k]. Throws NumericError when no label has both.
MacroAuroc auroc_multilabel(std::span<const double> scores, std::size_t k,
                            std::span<const std::uint8_t> labels);

/// AUROC of raw model outputs [n, n_outputs] for a task: sigmoid scores for
/// binary / multilabel, softmax probabilities for multiclass.
MacroAuroc task_auroc(const TaskSpec& task, std::span<const double> logits,
                      std::span<const ClassLabel> labels);

/// Round half away from zero to `decimals` places.
double round_to(double x, int decimals);

/// Arithmetic mean rounded to 2 decimals. Throws UsageError when empty.
double macro_average(std::span<const double> scores);

/// Per-task AUROC percents (2 decimals) plus their macro average, or a
/// language-model perplexity.
struct EvalReport {
    std::map<std::string, double> tasks;  // keys pmv, mor, los, diag, proc
    std::optional<double> perplexity;

    void add_task(const std::string& name, double auroc_fraction);
    std::optional<double> macro_avg() const;
    /// {"pmv": .., ..., "macro_avg": ..} or {"perplexity": ..}.
    std::string to_json() const;
};

}  // namespace peft_forge
