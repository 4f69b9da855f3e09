#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace peft_forge {

enum class TaskKind { binary, multiclass, multilabel };

std::string_view task_kind_name(TaskKind kind);

/// Shape of a document classification task.
struct TaskSpec {
    std::string name;
    TaskKind kind = TaskKind::binary;
    std::size_t num_classes = 2;  // 2 for binary, k otherwise

    /// Classifier width: one sigmoid logit for binary tasks, k otherwise.
    std::size_t n_outputs() const { return kind == TaskKind::binary ? 1 : num_classes; }

    static TaskSpec binary(std::string name) { return {std::move(name), TaskKind::binary, 2}; }
    static TaskSpec multiclass(std::string name, std::size_t k) {
        return {std::move(name), TaskKind::multiclass, k};
    }
    static TaskSpec multilabel(std::string name, std::size_t k) {
        return {std::move(name), TaskKind::multilabel, k};
    }

    bool operator==(const TaskSpec&) const = default;
};

/// Gold label of one example: `value` for binary / multiclass tasks, a
/// multi-hot row of width k for multilabel tasks.
struct ClassLabel {
    int value = 0;
    std::vector<std::uint8_t> multi;

    static ClassLabel single(int v) { return {v, {}}; }
    static ClassLabel multi_hot(std::vector<std::uint8_t> row) { return {0, std::move(row)}; }

    bool operator==(const ClassLabel&) const = default;
};

/// Throws DataError when `label` does not fit `task`.
void validate_label(const TaskSpec& task, const ClassLabel& label);

/// The five outcome-prediction task shapes at desk scale:
/// pmv (binary), mor (binary), los (4 classes), diag (50 labels), proc (30 labels).
const std::vector<TaskSpec>& standard_tasks();
/// Throws UsageError for an unknown name.
const TaskSpec& standard_task(std::string_view name);

}  // namespace peft_forge
