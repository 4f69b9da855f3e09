#include "peft_forge/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "json.hpp"
#include "peft_forge/error.hpp"
#include "peft_forge/metrics.hpp"

namespace peft_forge {

std::string_view stage_name(Stage s) { return s == Stage::pretrain ? "pretrain" : "finetune"; }

Stage parse_stage(std::string_view name) {
    if (name == "pretrain") return Stage::pretrain;
    if (name == "finetune") return Stage::finetune;
    throw UsageError("unknown stage '" + std::string(name) + "' (expected pretrain|finetune)");
}

TrainConfig TrainConfig::pretrain_defaults() { return TrainConfig{}; }

TrainConfig TrainConfig::finetune_defaults() {
    TrainConfig c;
    c.stage = Stage::finetune;
    c.learning_rate = 5e-5;
    c.grad_accum_steps = 10;
    c.epochs = 5;
    return c;
}

void TrainConfig::validate() const {
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
        throw UsageError("train config: learning_rate must be positive");
    if (warmup_ratio < 0.0 || warmup_ratio > 1.0)
        throw UsageError("train config: warmup_ratio must lie in [0, 1]");
    if (max_seq_len < 2) throw UsageError("train config: max_seq_len must be at least 2");
    if (grad_accum_steps == 0) throw UsageError("train config: grad_accum_steps must be positive");
    if (batch_size == 0) throw UsageError("train config: batch_size must be positive");
    if (epochs == 0) throw UsageError("train config: epochs must be positive");
    if (clip_norm < 0.0) throw UsageError("train config: clip_norm must be non-negative");
    if (weight_decay < 0.0) throw UsageError("train config: weight_decay must be non-negative");
}

// ---------------------------------------------------------------- optimizer

template <typename T>
AdamW<T>::AdamW(std::vector<BasicTensor<T>> params, Options options)
    : params_(std::move(params)), opt_(options) {
    for (const auto& p : params_) {
        m_.emplace_back(p.numel(), 0.0);
        v_.emplace_back(p.numel(), 0.0);
    }
}

template <typename T>
void AdamW<T>::step(double lr) {
    ++t_;
    const double b1 = opt_.beta1, b2 = opt_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto& p = params_[i];
        if (!p.has_grad()) continue;
        const auto g = p.grad();
        auto w = p.mutable_data();
        auto& m = m_[i];
        auto& v = v_[i];
        for (std::size_t j = 0; j < w.size(); ++j) {
            const double gj = g[j];
            m[j] = b1 * m[j] + (1.0 - b1) * gj;
            v[j] = b2 * v[j] + (1.0 - b2) * gj * gj;
            double x = w[j];
            x -= lr * opt_.weight_decay * x;
            x -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + opt_.eps);
            w[j] = static_cast<T>(x);
        }
    }
}

template <typename T>
void AdamW<T>::zero_grad() {
    for (auto& p : params_) {
        if (p.has_grad()) p.zero_grad();
    }
}

template <typename T>
double clip_grad_norm(std::span<BasicTensor<T>> params, double max_norm) {
    double sq = 0.0;
    for (const auto& p : params) {
        if (!p.has_grad()) continue;
        for (T g : p.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
    }
    const double norm = std::sqrt(sq);
    if (!std::isfinite(norm)) throw NumericError("gradient norm is not finite");
    if (max_norm > 0.0 && norm > max_norm) {
        const T factor = static_cast<T>(max_norm / (norm + 1e-12));
        for (auto& p : params) {
            if (!p.has_grad()) continue;
            for (T& g : p.mutable_grad()) g *= factor;
        }
    }
    return norm;
}

double lr_schedule(std::size_t step, std::size_t total_steps, double warmup_ratio, double peak_lr) {
    if (total_steps == 0) throw UsageError("lr_schedule: total_steps must be positive");
    if (step > total_steps) throw UsageError("lr_schedule: step beyond total_steps");
    const auto warmup = static_cast<std::size_t>(
        std::ceil(warmup_ratio * static_cast<double>(total_steps) - 1e-9));
    if (warmup > 0 && step <= warmup) {
        return peak_lr * static_cast<double>(step) / static_cast<double>(warmup);
    }
    if (warmup >= total_steps) return peak_lr;
    return peak_lr * static_cast<double>(total_steps - step) /
           static_cast<double>(total_steps - warmup);
}

// ---------------------------------------------------------------- losses

template <typename T>
BasicTensor<T> lm_loss(const BasicTensor<T>& logits, std::span<const int> targets) {
    return cross_entropy(logits, targets);
}

template <typename T>
BasicTensor<T> classification_loss(const BasicTensor<T>& logits,
                                   std::span<const ClassLabel> labels, const TaskSpec& task) {
    if (logits.rank() != 2 || logits.dim(1) != task.n_outputs()) {
        throw UsageError("classification_loss: outputs " + shape_str(logits.shape()) +
                         " do not match task " + task.name);
    }
    if (logits.dim(0) != labels.size()) {
        throw UsageError("classification_loss: one label per row required");
    }
    for (const auto& l : labels) validate_label(task, l);
    switch (task.kind) {
        case TaskKind::binary: {
            std::vector<T> y;
            for (const auto& l : labels) y.push_back(static_cast<T>(l.value));
            return bce_with_logits(logits, std::span<const T>(y));
        }
        case TaskKind::multiclass: {
            std::vector<int> y;
            for (const auto& l : labels) y.push_back(l.value);
            return cross_entropy(logits, std::span<const int>(y));
        }
        case TaskKind::multilabel: {
            std::vector<T> y;
            for (const auto& l : labels)
                for (auto b : l.multi) y.push_back(static_cast<T>(b));
            return bce_with_logits(logits, std::span<const T>(y));
        }
    }
    throw UsageError("classification_loss: unknown task kind");
}

// ---------------------------------------------------------------- history

std::string RunHistory::steps_jsonl() const {
    std::string out;
    for (const auto& s : steps) {
        nlohmann::ordered_json j{{"type", "step"},   {"step", s.step}, {"epoch", s.epoch},
                                 {"loss", s.loss},   {"lr", s.lr},     {"grad_norm", s.grad_norm}};
        out += j.dump() + "\n";
    }
    return out;
}

std::string RunHistory::epochs_jsonl() const {
    const bool pre = stage == Stage::pretrain;
    std::string out;
    for (const auto& e : epochs) {
        nlohmann::ordered_json j{{"type", "epoch"}, {"epoch", e.epoch}, {"train_loss", e.train_loss}};
        j[pre ? "train_ppl" : "train_auroc"] = e.train_metric;
        j[pre ? "test_ppl" : "valid_auroc"] = e.eval_metric;
        if (e.test_metric) j["test_auroc"] = *e.test_metric;
        j["seconds"] = e.seconds;
        out += j.dump() + "\n";
    }
    return out;
}

std::string RunHistory::summary_json() const {
    const bool pre = stage == Stage::pretrain;
    nlohmann::ordered_json summary{{"type", "summary"},
                                   {"stage", std::string(stage_name(stage))},
                                   {"steps", steps.size()},
                                   {"best_epoch", best_epoch}};
    summary[pre ? "best_test_ppl" : "best_valid_auroc"] = best_eval;
    if (test_metric) summary["test_auroc"] = *test_metric;
    return summary.dump();
}

std::string RunHistory::to_jsonl() const { return steps_jsonl() + epochs_jsonl() + summary_json() + "\n"; }

// ---------------------------------------------------------------- helpers

namespace {

template <typename T>
std::size_t count_virtual_tokens(const AdapterHooks<T>* hooks) {
    if (hooks == nullptr) return 0;
    NoGradGuard guard;
    const auto vt = hooks->virtual_tokens(ForwardMode{});
    return vt ? vt->dim(0) : 0;
}

template <typename T>
std::vector<std::vector<T>> snapshot(const std::vector<BasicTensor<T>>& params) {
    std::vector<std::vector<T>> out;
    for (const auto& p : params) out.emplace_back(p.data().begin(), p.data().end());
    return out;
}

template <typename T>
void restore(std::vector<BasicTensor<T>>& params, const std::vector<std::vector<T>>& saved) {
    for (std::size_t i = 0; i < params.size(); ++i) {
        std::copy(saved[i].begin(), saved[i].end(), params[i].mutable_data().begin());
    }
}

std::vector<std::size_t> shuffled_order(std::size_t n, std::uint64_t seed) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(seed);
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    return order;
}

std::size_t total_steps_for(std::size_t micro_per_epoch, const TrainConfig& cfg) {
    const std::size_t per_epoch = (micro_per_epoch + cfg.grad_accum_steps - 1) / cfg.grad_accum_steps;
    std::size_t total = per_epoch * cfg.epochs;
    if (cfg.max_steps > 0) total = std::min(total, cfg.max_steps);
    if (total == 0) throw UsageError("training would run zero optimizer steps");
    return total;
}

double elapsed_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

bool has_two_classes(const TaskSpec& task, const std::vector<Example>& examples) {
    if (task.kind == TaskKind::multilabel) {
        for (std::size_t c = 0; c < task.num_classes; ++c) {
            bool pos = false, neg = false;
            for (const auto& e : examples) (e.label.multi[c] ? pos : neg) = true;
            if (pos && neg) return true;
        }
        return false;
    }
    for (const auto& e : examples) {
        if (e.label.value != examples.front().label.value) return true;
    }
    return false;
}

}  // namespace

std::vector<std::vector<int>> chunk_documents(const std::vector<std::vector<int>>& documents,
                                              std::size_t window) {
    if (window < 2) throw UsageError("chunk_documents: window must be at least 2");
    std::vector<std::vector<int>> out;
    for (const auto& doc : documents) {
        for (std::size_t i = 0; i < doc.size(); i += window) {
            const std::size_t len = std::min(window, doc.size() - i);
            if (len < 2) continue;
            out.emplace_back(doc.begin() + static_cast<std::ptrdiff_t>(i),
                             doc.begin() + static_cast<std::ptrdiff_t>(i + len));
        }
    }
    return out;
}

std::vector<int> truncate_tokens(const std::vector<int>& ids, std::size_t limit) {
    if (ids.size() <= limit) return ids;
    return {ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(limit)};
}

template <typename T>
std::pair<double, std::size_t> lm_nll(const BaseModel<T>& base, const AdapterHooks<T>* hooks,
                                      const std::vector<std::vector<int>>& windows,
                                      std::size_t batch_size) {
    NoGradGuard guard;
    // Batching by length keeps padding small; the sum is order-independent
    // up to rounding.
    std::vector<std::size_t> order(windows.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return windows[a].size() < windows[b].size();
    });
    double total = 0.0;
    std::size_t tokens = 0;
    for (std::size_t i = 0; i < order.size(); i += batch_size) {
        std::vector<std::vector<int>> seqs;
        for (std::size_t j = i; j < std::min(order.size(), i + batch_size); ++j)
            seqs.push_back(windows[order[j]]);
        const auto batch = TokenBatch::from_sequences(seqs);
        const auto out = forward_lm(base, batch, hooks);
        const auto targets = lm_targets(batch, out.virtual_tokens);
        const auto n = static_cast<std::size_t>(
            std::count_if(targets.begin(), targets.end(), [](int t) { return t != kIgnoreIndex; }));
        if (n == 0) continue;
        total += static_cast<double>(lm_loss(out.logits, targets).item()) * static_cast<double>(n);
        tokens += n;
    }
    return {total, tokens};
}

// ---------------------------------------------------------------- pretraining

template <typename T>
RunHistory pretrain_lm(const BaseModel<T>& base, const AdapterHooks<T>* hooks,
                       std::vector<BasicTensor<T>> trainable, const Corpus& corpus,
                       const TrainConfig& cfg) {
    cfg.validate();
    if (trainable.empty()) throw UsageError("pretrain: nothing is trainable");
    for (const auto& p : trainable) {
        if (!p.requires_grad()) throw UsageError("pretrain: trainable tensor is frozen");
    }
    if (corpus.size() == 0) throw DataError("pretrain: empty corpus");

    const std::size_t n_vt = count_virtual_tokens(hooks);
    if (n_vt + 2 > base.config.max_seq_len) {
        throw UsageError("pretrain: virtual tokens leave no room in max_seq_len");
    }
    const std::size_t window = std::min(cfg.max_seq_len, base.config.max_seq_len - n_vt);
    const auto train = chunk_documents(corpus.documents_in(Split::train), window);
    const auto test = chunk_documents(corpus.documents_in(Split::test), window);
    if (train.empty()) throw DataError("pretrain: corpus has no training documents");
    if (test.empty()) throw DataError("pretrain: corpus has no held-out documents");

    const std::size_t micro = (train.size() + cfg.batch_size - 1) / cfg.batch_size;
    const std::size_t total = total_steps_for(micro, cfg);

    AdamW<T> opt(trainable, {.weight_decay = cfg.weight_decay});
    Rng dropout_rng(derive_seed(cfg.seed, 0xD0));
    const ForwardMode mode{true, &dropout_rng};

    RunHistory history;
    history.stage = Stage::pretrain;
    std::optional<std::vector<std::vector<T>>> best;
    std::size_t step = 0;

    for (std::size_t epoch = 1; epoch <= cfg.epochs && step < total; ++epoch) {
        const auto start = std::chrono::steady_clock::now();
        const auto order = shuffled_order(train.size(), derive_seed(cfg.seed, epoch));
        double epoch_nll = 0.0;
        std::size_t epoch_tokens = 0;

        const std::size_t group = cfg.grad_accum_steps * cfg.batch_size;
        for (std::size_t g = 0; g < order.size() && step < total; g += group) {
            // Build the group's micro-batches first so each loss can be
            // weighted by its share of the group's predicted tokens.
            std::vector<TokenBatch> batches;
            std::vector<std::size_t> counts;
            std::size_t group_tokens = 0;
            for (std::size_t m = g; m < std::min(order.size(), g + group); m += cfg.batch_size) {
                std::vector<std::vector<int>> seqs;
                for (std::size_t j = m; j < std::min({order.size(), m + cfg.batch_size, g + group}); ++j)
                    seqs.push_back(train[order[j]]);
                batches.push_back(TokenBatch::from_sequences(seqs));
                std::size_t n = 0;
                for (const auto& s : seqs) n += s.size() - 1;
                counts.push_back(n);
                group_tokens += n;
            }
            double group_loss = 0.0;
            for (std::size_t b = 0; b < batches.size(); ++b) {
                const auto out = forward_lm(base, batches[b], hooks, mode);
                const auto targets = lm_targets(batches[b], out.virtual_tokens);
                const auto loss = lm_loss(out.logits, targets);
                const double w = static_cast<double>(counts[b]) / static_cast<double>(group_tokens);
                const double value = static_cast<double>(loss.item());
                group_loss += w * value;
                epoch_nll += value * static_cast<double>(counts[b]);
                scale(loss, w).backward();
            }
            epoch_tokens += group_tokens;
            ++step;
            const double norm = clip_grad_norm(std::span<BasicTensor<T>>(trainable), cfg.clip_norm);
            const double lr = lr_schedule(step, total, cfg.warmup_ratio, cfg.learning_rate);
            opt.step(lr);
            opt.zero_grad();
            if (!std::isfinite(group_loss)) throw NumericError("pretrain: loss is not finite");
            history.steps.push_back({step, epoch, group_loss, lr, norm});
        }

        const auto [test_nll, test_tokens] = lm_nll(base, hooks, test, cfg.batch_size);
        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = epoch_nll / static_cast<double>(epoch_tokens);
        rec.train_metric = std::exp(rec.train_loss);
        rec.eval_metric = perplexity(test_nll, test_tokens);
        rec.seconds = elapsed_since(start);
        history.epochs.push_back(rec);
        if (!best || rec.eval_metric < history.best_eval) {
            history.best_eval = rec.eval_metric;
            history.best_epoch = epoch;
            best = snapshot(trainable);
        }
    }
    restore(trainable, *best);
    return history;
}

template <typename T>
RunHistory pretrain_lm(AdapterStack<T>& stack, const Corpus& corpus, const TrainConfig& cfg) {
    std::vector<BasicTensor<T>> params;
    for (auto& [name, t] : stack.trainable_parameters()) params.push_back(t);
    return pretrain_lm(stack.base, static_cast<const AdapterHooks<T>*>(&stack), std::move(params),
                       corpus, cfg);
}

template <typename T>
RunHistory pretrain_base(BaseModel<T>& base, const Corpus& corpus, const TrainConfig& cfg) {
    base.set_trainable(true);
    std::vector<BasicTensor<T>> params;
    for (auto& [name, t] : base.named_parameters()) params.push_back(t);
    try {
        auto history = pretrain_lm<T>(base, nullptr, params, corpus, cfg);
        base.set_trainable(false);
        return history;
    } catch (...) {
        base.set_trainable(false);
        throw;
    }
}

// ---------------------------------------------------------------- fine-tuning

namespace {

template <typename T>
std::size_t content_limit(const AdapterStack<T>& stack, std::size_t max_seq_len) {
    const std::size_t n_vt = count_virtual_tokens<T>(&stack);
    const std::size_t model_max = stack.base.config.max_seq_len;
    if (n_vt + 1 > model_max) throw UsageError("virtual tokens leave no room in max_seq_len");
    return std::min(max_seq_len, model_max - n_vt);
}

template <typename T>
TokenBatch make_batch(const std::vector<Example>& examples, std::span<const std::size_t> idx,
                      std::size_t limit) {
    std::vector<std::vector<int>> seqs;
    for (std::size_t i : idx) seqs.push_back(truncate_tokens(examples[i].ids, limit));
    return TokenBatch::from_sequences(seqs);
}

}  // namespace

template <typename T>
std::vector<double> predict(const AdapterStack<T>& stack, const std::vector<Example>& examples,
                            std::size_t batch_size, std::size_t max_seq_len) {
    if (!stack.head) throw UsageError("predict: stack has no classification head");
    if (batch_size == 0) throw UsageError("predict: batch_size must be positive");
    NoGradGuard guard;
    const std::size_t limit = content_limit(stack, max_seq_len);
    const std::size_t k = stack.head->task.n_outputs();
    std::vector<double> out(examples.size() * k);
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < examples.size(); i += batch_size) {
        idx.clear();
        for (std::size_t j = i; j < std::min(examples.size(), i + batch_size); ++j) idx.push_back(j);
        const auto logits = stack.forward_classify(make_batch<T>(examples, idx, limit));
        const auto d = logits.data();
        std::copy(d.begin(), d.end(), out.begin() + static_cast<std::ptrdiff_t>(i * k));
    }
    return out;
}

template <typename T>
double evaluate_auroc(const AdapterStack<T>& stack, const std::vector<Example>& examples,
                      std::size_t batch_size, std::size_t max_seq_len) {
    const auto logits = predict(stack, examples, batch_size, max_seq_len);
    std::vector<ClassLabel> labels;
    for (const auto& e : examples) labels.push_back(e.label);
    return task_auroc(stack.head->task, logits, labels).value;
}

template <typename T>
RunHistory finetune_classify(AdapterStack<T>& stack, const Dataset& dataset,
                             const TrainConfig& cfg) {
    cfg.validate();
    if (!stack.head) throw UsageError("finetune: stack has no classification head");
    if (!(stack.head->task == dataset.task)) {
        throw UsageError("finetune: head task " + stack.head->task.name + " differs from dataset " +
                         dataset.task.name);
    }
    const TaskSpec& task = dataset.task;
    const auto train = dataset.in(Split::train);
    const auto valid = dataset.in(Split::valid);
    const auto test = dataset.in(Split::test);
    if (train.empty() || valid.empty() || test.empty()) {
        throw DataError("finetune: dataset needs non-empty train, valid and test splits");
    }
    for (const auto& e : dataset.examples) validate_label(task, e.label);
    if (!has_two_classes(task, train)) {
        throw DataError("finetune: training split of " + task.name + " has a single class");
    }

    std::vector<BasicTensor<T>> trainable;
    for (auto& [name, t] : stack.trainable_parameters()) trainable.push_back(t);
    if (trainable.empty()) throw UsageError("finetune: nothing is trainable");

    const std::size_t limit = content_limit(stack, cfg.max_seq_len);
    const std::size_t micro = (train.size() + cfg.batch_size - 1) / cfg.batch_size;
    const std::size_t total = total_steps_for(micro, cfg);

    AdamW<T> opt(trainable, {.weight_decay = cfg.weight_decay});
    Rng dropout_rng(derive_seed(cfg.seed, 0xD0));
    const ForwardMode mode{true, &dropout_rng};

    RunHistory history;
    history.stage = Stage::finetune;
    std::optional<std::vector<std::vector<T>>> best;
    std::size_t step = 0;

    for (std::size_t epoch = 1; epoch <= cfg.epochs && step < total; ++epoch) {
        const auto start = std::chrono::steady_clock::now();
        const auto order = shuffled_order(train.size(), derive_seed(cfg.seed, epoch));
        double epoch_loss = 0.0;
        std::size_t seen = 0;
        std::vector<double> train_logits;
        std::vector<ClassLabel> train_labels;

        const std::size_t group = cfg.grad_accum_steps * cfg.batch_size;
        for (std::size_t g = 0; g < order.size() && step < total; g += group) {
            const std::size_t group_end = std::min(order.size(), g + group);
            const double group_n = static_cast<double>(group_end - g);
            double group_loss = 0.0;
            for (std::size_t m = g; m < group_end; m += cfg.batch_size) {
                const std::size_t end = std::min(group_end, m + cfg.batch_size);
                const std::span<const std::size_t> idx(order.data() + m, end - m);
                std::vector<ClassLabel> labels;
                for (std::size_t i : idx) labels.push_back(train[i].label);
                const auto logits = stack.forward_classify(make_batch<T>(train, idx, limit), mode);
                const auto loss = classification_loss(logits, labels, task);
                const double w = static_cast<double>(idx.size()) / group_n;
                const double value = static_cast<double>(loss.item());
                group_loss += w * value;
                epoch_loss += value * static_cast<double>(idx.size());
                seen += idx.size();
                for (T z : logits.data()) train_logits.push_back(static_cast<double>(z));
                train_labels.insert(train_labels.end(), labels.begin(), labels.end());
                scale(loss, w).backward();
            }
            ++step;
            const double norm = clip_grad_norm(std::span<BasicTensor<T>>(trainable), cfg.clip_norm);
            const double lr = lr_schedule(step, total, cfg.warmup_ratio, cfg.learning_rate);
            opt.step(lr);
            opt.zero_grad();
            if (!std::isfinite(group_loss)) throw NumericError("finetune: loss is not finite");
            history.steps.push_back({step, epoch, group_loss, lr, norm});
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = epoch_loss / static_cast<double>(seen);
        // Logits gathered while training (dropout on, weights moving).
        try {
            rec.train_metric = task_auroc(task, train_logits, train_labels).value;
        } catch (const NumericError&) {
            rec.train_metric = std::nan("");  // partial epoch under max_steps
        }
        rec.eval_metric = evaluate_auroc(stack, valid, cfg.batch_size, cfg.max_seq_len);
        rec.test_metric = evaluate_auroc(stack, test, cfg.batch_size, cfg.max_seq_len);
        rec.seconds = elapsed_since(start);
        history.epochs.push_back(rec);
        if (!best || rec.eval_metric > history.best_eval) {
            history.best_eval = rec.eval_metric;
            history.best_epoch = epoch;
            history.test_metric = rec.test_metric;
            best = snapshot(trainable);
        }
    }
    restore(trainable, *best);
    return history;
}

#define PEFT_FORGE_INSTANTIATE(T)                                                               \
    template class AdamW<T>;                                                                    \
    template double clip_grad_norm<T>(std::span<BasicTensor<T>>, double);                       \
    template BasicTensor<T> lm_loss<T>(const BasicTensor<T>&, std::span<const int>);            \
    template BasicTensor<T> classification_loss<T>(const BasicTensor<T>&,                       \
                                                   std::span<const ClassLabel>, const TaskSpec&); \
    template std::pair<double, std::size_t> lm_nll<T>(                                          \
        const BaseModel<T>&, const AdapterHooks<T>*, const std::vector<std::vector<int>>&,      \
        std::size_t);                                                                           \
    template RunHistory pretrain_lm<T>(const BaseModel<T>&, const AdapterHooks<T>*,             \
                                       std::vector<BasicTensor<T>>, const Corpus&,              \
                                       const TrainConfig&);                                     \
    template RunHistory pretrain_lm<T>(AdapterStack<T>&, const Corpus&, const TrainConfig&);    \
    template RunHistory pretrain_base<T>(BaseModel<T>&, const Corpus&, const TrainConfig&);     \
    template std::vector<double> predict<T>(const AdapterStack<T>&, const std::vector<Example>&, \
                                            std::size_t, std::size_t);                          \
    template double evaluate_auroc<T>(const AdapterStack<T>&, const std::vector<Example>&,      \
                                      std::size_t, std::size_t);                                \
    template RunHistory finetune_classify<T>(AdapterStack<T>&, const Dataset&, const TrainConfig&);

PEFT_FORGE_INSTANTIATE(float)
PEFT_FORGE_INSTANTIATE(double)

}  // namespace peft_forge
