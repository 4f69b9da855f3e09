#pragma once

// LLaMA-style decoder-only transformer: RMSNorm, rotary attention, SwiGLU
// feed-forward, untied output projection. Weights are stored [in, out] so a
// projection is x * W.

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "peft_forge/task.hpp"
#include "peft_forge/tensor.hpp"

namespace peft_forge {

enum class Projection { q, k, v, o };

std::string_view projection_name(Projection p);
/// Accepts "q"/"wq" style names. Throws UsageError otherwise.
Projection parse_projection(std::string_view name);

struct ModelConfig {
    std::size_t vocab_size = 512;
    std::size_t d_model = 64;
    std::size_t n_layers = 2;
    std::size_t n_heads = 4;
    std::size_t d_ff = 256;
    std::size_t max_seq_len = 128;
    double rms_eps = 1e-5;

    /// Throws UsageError when the invariants do not hold.
    void validate() const;
    std::size_t head_dim() const { return d_model / n_heads; }

    /// Named parameter shapes in canonical order.
    std::vector<std::pair<std::string, Shape>> parameter_shapes() const;
    /// Sum of parameter_shapes() element counts; needs no allocation.
    std::uint64_t parameter_count() const;

    /// LLaMA-7B dimensions (vocab 32000, d 4096, 32 layers, 32 heads, d_ff 11008).
    static ModelConfig llama_7b();

    bool operator==(const ModelConfig&) const = default;
};

template <typename T>
struct LayerWeights {
    BasicTensor<T> attn_norm;
    BasicTensor<T> wq, wk, wv, wo;
    BasicTensor<T> ffn_norm;
    BasicTensor<T> w_gate, w_up, w_down;

    const BasicTensor<T>& projection(Projection p) const;
    BasicTensor<T>& projection(Projection p);
};

template <typename T>
struct NamedTensor {
    std::string name;
    BasicTensor<T> tensor;
};

/// The pretrained parameters plus architecture.
template <typename T>
struct BaseModel {
    ModelConfig config;
    BasicTensor<T> embedding;  // [vocab, d]
    std::vector<LayerWeights<T>> layers;
    BasicTensor<T> final_norm;  // [d]
    BasicTensor<T> lm_head;     // [d, vocab]

    /// Norm gains start at one; every matrix is gaussian(0, 0.02) from a
    /// per-parameter stream of `seed`.
    static BaseModel init(const ModelConfig& config, std::uint64_t seed);
    /// Builds a model from tensors named as in parameter_shapes().
    static BaseModel from_named(const ModelConfig& config, std::vector<NamedTensor<T>> tensors);

    /// Handles (aliasing storage) in canonical order.
    std::vector<NamedTensor<T>> named_parameters() const;
    std::uint64_t parameter_count() const;
    void set_trainable(bool trainable);
    /// Deep copy with frozen parameters.
    BaseModel clone() const;

    template <typename U>
    BaseModel<U> cast() const {
        std::vector<NamedTensor<U>> converted;
        for (auto& [name, t] : named_parameters()) {
            converted.push_back({name, t.template cast<U>()});
        }
        return BaseModel<U>::from_named(config, std::move(converted));
    }
};

/// Newly initialised classification layer over the pooled hidden state.
template <typename T>
struct ClassifierHead {
    TaskSpec task;
    BasicTensor<T> weight;  // [d, n_outputs]
    BasicTensor<T> bias;    // [n_outputs]

    /// weight ~ gaussian(0, 0.02), bias = 0.
    static ClassifierHead init(std::size_t d_model, const TaskSpec& task, std::uint64_t seed);
    std::vector<NamedTensor<T>> named_parameters() const;
    ClassifierHead clone() const;
};

/// Right-padded id matrix; pad id 0 never appears inside content.
struct TokenBatch {
    static constexpr int kPad = 0;

    std::size_t batch = 0;
    std::size_t seq = 0;
    std::vector<int> ids;  // [batch * seq]

    static TokenBatch from_sequences(const std::vector<std::vector<int>>& sequences);
    std::size_t length(std::size_t b) const;
    int at(std::size_t b, std::size_t t) const { return ids[b * seq + t]; }
};

struct ForwardMode {
    bool training = false;
    Rng* rng = nullptr;  // required when training with dropout
};

template <typename T>
struct PromptGate {
    BasicTensor<T> rows;  // [len, d], projected by the layer's Wk / Wv
    BasicTensor<T> gate;  // [1]
};

/// Extension points through which adapters reach into the forward pass.
/// The default implementation is the plain base model.
template <typename T>
class AdapterHooks {
public:
    virtual ~AdapterHooks() = default;

    /// Embeddings prepended to the input sequence, [n, d].
    virtual std::optional<BasicTensor<T>> virtual_tokens(const ForwardMode&) const { return {}; }
    /// Additive term for x * W_p at `layer`.
    virtual std::optional<BasicTensor<T>> projection_delta(std::size_t /*layer*/, Projection,
                                                           const BasicTensor<T>& /*x*/,
                                                           const ForwardMode&) const {
        return {};
    }
    /// Extra key/value rows visible to every query at `layer`.
    virtual std::optional<std::pair<BasicTensor<T>, BasicTensor<T>>> prefix_kv(
        std::size_t /*layer*/, const ForwardMode&) const {
        return {};
    }
    /// Zero-initialised gated prompts attended to at `layer`.
    virtual std::vector<PromptGate<T>> gated_prompts(std::size_t /*layer*/) const { return {}; }
};

template <typename T>
BasicTensor<T> rmsnorm(const BasicTensor<T>& x, const BasicTensor<T>& weight, double eps);

template <typename T>
std::pair<BasicTensor<T>, BasicTensor<T>> rotary_apply(const BasicTensor<T>& q,
                                                       const BasicTensor<T>& k,
                                                       std::span<const int> positions,
                                                       std::size_t n_heads);

/// Gated prompt after the layer's key/value projections.
template <typename T>
struct ProjectedPrompt {
    BasicTensor<T> keys;    // [len, d]
    BasicTensor<T> values;  // [len, d]
    BasicTensor<T> gate;    // [1]
};

/// Causal multi-head attention with optional prefix rows and gated prompts.
template <typename T>
BasicTensor<T> attention(const BasicTensor<T>& q, const BasicTensor<T>& k, const BasicTensor<T>& v,
                         std::size_t batch, std::size_t seq, std::size_t n_heads,
                         const std::pair<BasicTensor<T>, BasicTensor<T>>* prefix = nullptr,
                         std::span<const ProjectedPrompt<T>> gated = {});

template <typename T>
struct HiddenStates {
    BasicTensor<T> hidden;  // [batch * seq_total, d] after the final norm
    std::size_t batch = 0;
    std::size_t seq_total = 0;
    std::size_t virtual_tokens = 0;
};

template <typename T>
struct LmOutput {
    BasicTensor<T> logits;  // [batch, seq_total, vocab]
    std::size_t virtual_tokens = 0;
};

template <typename T>
HiddenStates<T> forward_hidden(const BaseModel<T>& model, const TokenBatch& tokens,
                               const AdapterHooks<T>* hooks = nullptr,
                               const ForwardMode& mode = {});

template <typename T>
LmOutput<T> forward_lm(const BaseModel<T>& model, const TokenBatch& tokens,
                       const AdapterHooks<T>* hooks = nullptr, const ForwardMode& mode = {});

/// Logits [batch, n_outputs] from the hidden state of each sequence's last
/// non-padding token.
template <typename T>
BasicTensor<T> forward_classify(const BaseModel<T>& model, const ClassifierHead<T>& head,
                                const TokenBatch& tokens, const AdapterHooks<T>* hooks = nullptr,
                                const ForwardMode& mode = {});

/// Next-token targets aligned with forward_lm logits: position n_virtual + t
/// predicts token t + 1; virtual and padding positions get kIgnoreIndex.
std::vector<int> lm_targets(const TokenBatch& tokens, std::size_t virtual_tokens);

}  // namespace peft_forge
