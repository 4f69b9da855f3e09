#pragma once

// Autoregressive domain-adaptive pretraining and downstream classification
// fine-tuning.

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "peft_forge/data.hpp"
#include "peft_forge/stacking.hpp"

namespace peft_forge {

enum class Stage { pretrain, finetune };

std::string_view stage_name(Stage s);
Stage parse_stage(std::string_view name);

struct TrainConfig {
    Stage stage = Stage::pretrain;
    double learning_rate = 3e-4;
    double warmup_ratio = 0.06;
    std::size_t max_seq_len = 512;  // capped to the model's limit
    std::size_t grad_accum_steps = 4;
    std::size_t batch_size = 10;
    std::size_t epochs = 3;
    std::uint64_t seed = 0;
    std::size_t max_steps = 0;  // 0: no cap on optimizer steps
    double clip_norm = 1.0;
    double weight_decay = 0.0;

    static TrainConfig pretrain_defaults();
    static TrainConfig finetune_defaults();
    void validate() const;

    bool operator==(const TrainConfig&) const = default;
};

/// Decoupled-weight-decay Adam over a fixed parameter list. Moments are
/// kept in double.
template <typename T>
class AdamW {
public:
    struct Options {
        double beta1 = 0.9;
        double beta2 = 0.999;
        double eps = 1e-8;
        double weight_decay = 0.0;
    };

    AdamW(std::vector<BasicTensor<T>> params, Options options);

    void step(double lr);
    void zero_grad();
    std::size_t steps() const { return t_; }

private:
    std::vector<BasicTensor<T>> params_;
    Options opt_;
    std::vector<std::vector<double>> m_, v_;
    std::size_t t_ = 0;
};

/// Scales gradients so their global L2 norm is at most `max_norm`; returns
/// the norm before clipping.
template <typename T>
double clip_grad_norm(std::span<BasicTensor<T>> params, double max_norm);

/// Linear warmup from 0 to peak over ceil(warmup_ratio * total_steps) steps,
/// then linear decay to 0 at total_steps. Throws UsageError when
/// total_steps == 0 or step > total_steps.
double lr_schedule(std::size_t step, std::size_t total_steps, double warmup_ratio, double peak_lr);

/// Mean next-token NLL over positions whose target is not kIgnoreIndex.
template <typename T>
BasicTensor<T> lm_loss(const BasicTensor<T>& logits, std::span<const int> targets);

/// Binary: sigmoid BCE; multiclass: softmax CE; multilabel: mean per-label BCE.
template <typename T>
BasicTensor<T> classification_loss(const BasicTensor<T>& logits,
                                   std::span<const ClassLabel> labels, const TaskSpec& task);

struct StepRecord {
    std::size_t step = 0;  // 1-based optimizer step
    std::size_t epoch = 0;
    double loss = 0.0;
    double lr = 0.0;
    double grad_norm = 0.0;
};

struct EpochRecord {
    std::size_t epoch = 0;  // 1-based
    double train_loss = 0.0;
    double train_metric = 0.0;  // perplexity or AUROC fraction
    double eval_metric = 0.0;   // held-out perplexity, or validation AUROC
    std::optional<double> test_metric;  // fine-tuning only
    double seconds = 0.0;
};

struct RunHistory {
    Stage stage = Stage::pretrain;
    std::vector<StepRecord> steps;
    std::vector<EpochRecord> epochs;
    std::size_t best_epoch = 0;  // 1-based, selected by eval_metric
    double best_eval = 0.0;
    std::optional<double> test_metric;  // at best_epoch (fine-tuning)

    /// One JSON object per line: {"type":"step",..} then {"type":"epoch",..}
    /// then {"type":"summary",..}.
    std::string to_jsonl() const;
    std::string steps_jsonl() const;
    /// Exactly one line per epoch.
    std::string epochs_jsonl() const;
    /// The summary object, without a trailing newline.
    std::string summary_json() const;
};

/// Token windows of at most `window` tokens; longer documents are chunked
/// and chunks shorter than two tokens dropped.
std::vector<std::vector<int>> chunk_documents(const std::vector<std::vector<int>>& documents,
                                              std::size_t window);

/// Sum of token NLLs and number of predicted tokens for `windows`.
template <typename T>
std::pair<double, std::size_t> lm_nll(const BaseModel<T>& base, const AdapterHooks<T>* hooks,
                                      const std::vector<std::vector<int>>& windows,
                                      std::size_t batch_size);

/// Trains `trainable` on the corpus' train split; evaluates held-out
/// perplexity each epoch and restores the best epoch's weights. `hooks` may
/// be null for plain base training. Throws DataError for an empty corpus or empty splits and
/// UsageError when nothing is trainable or there are zero steps.
template <typename T>
RunHistory pretrain_lm(const BaseModel<T>& base, const AdapterHooks<T>* hooks,
                       std::vector<BasicTensor<T>> trainable, const Corpus& corpus,
                       const TrainConfig& cfg);

/// Convenience overloads.
template <typename T>
RunHistory pretrain_lm(AdapterStack<T>& stack, const Corpus& corpus, const TrainConfig& cfg);
template <typename T>
RunHistory pretrain_base(BaseModel<T>& base, const Corpus& corpus, const TrainConfig& cfg);

/// Raw classifier outputs [n, n_outputs] for `examples`, evaluation mode.
template <typename T>
std::vector<double> predict(const AdapterStack<T>& stack, const std::vector<Example>& examples,
                            std::size_t batch_size, std::size_t max_seq_len);

/// AUROC fraction of the stack on `examples`.
template <typename T>
double evaluate_auroc(const AdapterStack<T>& stack, const std::vector<Example>& examples,
                      std::size_t batch_size, std::size_t max_seq_len);

/// Trains on the train split, selects the epoch with the best validation
/// AUROC (restoring its weights) and reports that epoch's test AUROC.
/// Throws DataError when the train split has a single class.
template <typename T>
RunHistory finetune_classify(AdapterStack<T>& stack, const Dataset& dataset,
                             const TrainConfig& cfg);

/// Keeps the first `limit` tokens (after leaving room for virtual tokens).
std::vector<int> truncate_tokens(const std::vector<int>& ids, std::size_t limit);

}  // namespace peft_forge
