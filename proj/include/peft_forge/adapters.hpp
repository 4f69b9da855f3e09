#pragma once

// The five parameter-efficient techniques. Each adapter owns its leaves and
// exposes the same four hook methods as AdapterHooks (non-virtually); the
// stack module dispatches over them.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "peft_forge/model.hpp"

namespace peft_forge {

enum class Technique { lora, prefix, prompt, ptuning, adaption_prompt };

std::string_view technique_name(Technique t);
/// Accepts lora | prefix | prompt | ptuning | adaption (or adaption_prompt).
Technique parse_technique(std::string_view name);

// ---------------------------------------------------------------- LoRA

struct LoraConfig {
    std::size_t r = 16;
    double alpha = 32.0;
    double dropout = 0.1;
    std::vector<Projection> targets{Projection::q, Projection::v};

    void validate(const ModelConfig& model) const;
    double scaling() const { return alpha / static_cast<double>(r); }
    /// Trainable parameter count without allocating.
    std::uint64_t parameter_count(const ModelConfig& model) const;
    bool targets_projection(Projection p) const;

    bool operator==(const LoraConfig&) const = default;
};

template <typename T>
struct LoraModule {
    std::size_t layer = 0;
    Projection projection = Projection::q;
    BasicTensor<T> a;  // [r, d_in]
    BasicTensor<T> b;  // [d_out, r]
};

template <typename T>
struct LoraAdapter {
    LoraConfig config;
    ModelConfig model;
    std::vector<LoraModule<T>> modules;  // layer-major, targets in config order

    /// A ~ gaussian(0, 0.02), B = 0.
    static LoraAdapter init(const LoraConfig& config, const ModelConfig& model, std::uint64_t seed);

    const LoraModule<T>* find(std::size_t layer, Projection p) const;
    /// (alpha / r) * dropout(x) A^T B^T. Throws UsageError for an untargeted
    /// projection; dropout only in training mode.
    BasicTensor<T> delta(std::size_t layer, Projection p, const BasicTensor<T>& x,
                         const ForwardMode& mode) const;
    /// Dense update in the base [in, out] orientation: (alpha / r) A^T B^T.
    BasicTensor<T> dense_delta(std::size_t layer, Projection p) const;

    std::optional<BasicTensor<T>> projection_delta(std::size_t layer, Projection p,
                                                   const BasicTensor<T>& x,
                                                   const ForwardMode& mode) const;

    std::vector<NamedTensor<T>> named_parameters() const;
};

// ---------------------------------------------------------------- prefix

struct PrefixConfig {
    std::size_t num_virtual_tokens = 10;
    bool prefix_projection = false;
    std::size_t projection_hidden = 0;  // 0 means d_model

    void validate(const ModelConfig& model) const;
    std::size_t hidden(const ModelConfig& model) const {
        return projection_hidden == 0 ? model.d_model : projection_hidden;
    }
    std::uint64_t parameter_count(const ModelConfig& model) const;

    bool operator==(const PrefixConfig&) const = default;
};

template <typename T>
struct PrefixAdapter {
    PrefixConfig config;
    ModelConfig model;
    // Without projection: keys[l], values[l] are [n, d].
    std::vector<BasicTensor<T>> keys, values;
    // With projection: embedding [n, d] -> tanh(. W1 + b1) W2 + b2 -> [n, 2 L d].
    BasicTensor<T> embedding, w1, b1, w2, b2;

    static PrefixAdapter init(const PrefixConfig& config, const ModelConfig& model,
                              std::uint64_t seed);

    std::optional<std::pair<BasicTensor<T>, BasicTensor<T>>> prefix_kv(
        std::size_t layer, const ForwardMode& mode) const;

    std::vector<NamedTensor<T>> named_parameters() const;
};

// ---------------------------------------------------------------- prompt

enum class PromptInit { text, random };

inline constexpr std::string_view kDefaultPromptText = "Finish this clinical note:";

struct PromptConfig {
    std::size_t num_virtual_tokens = 10;
    PromptInit init = PromptInit::text;
    std::string init_text{kDefaultPromptText};

    void validate(const ModelConfig& model) const;
    std::uint64_t parameter_count(const ModelConfig& model) const;

    bool operator==(const PromptConfig&) const = default;
};

template <typename T>
struct PromptAdapter {
    PromptConfig config;
    ModelConfig model;
    BasicTensor<T> rows;  // [n, d]

    /// Text init copies base embeddings of `init_ids`, cycled or truncated
    /// to num_virtual_tokens; throws UsageError when `init_ids` is empty.
    static PromptAdapter init(const PromptConfig& config, const BaseModel<T>& base,
                              std::span<const int> init_ids, std::uint64_t seed);

    std::optional<BasicTensor<T>> virtual_tokens(const ForwardMode& mode) const;
    std::vector<NamedTensor<T>> named_parameters() const;
};

// ---------------------------------------------------------------- p-tuning

enum class Reparameterisation { mlp, lstm };

struct PTuningConfig {
    std::size_t num_virtual_tokens = 10;
    Reparameterisation reparameterisation = Reparameterisation::mlp;
    std::size_t hidden = 128;
    std::size_t num_layers = 1;
    double dropout = 0.0;

    void validate(const ModelConfig& model) const;
    std::uint64_t parameter_count(const ModelConfig& model) const;

    bool operator==(const PTuningConfig&) const = default;
};

template <typename T>
struct LinearLayer {
    BasicTensor<T> weight;  // [in, out]
    BasicTensor<T> bias;    // [out]
};

template <typename T>
struct LstmLayer {
    BasicTensor<T> w_input;   // [in, 4h], gate order i f g o
    BasicTensor<T> w_hidden;  // [h, 4h]
    BasicTensor<T> bias;      // [4h]
};

/// Soft prompt produced by an encoder over trainable seed rows.
template <typename T>
struct PTuningAdapter {
    PTuningConfig config;
    ModelConfig model;
    BasicTensor<T> seed_rows;               // [n, d]
    std::vector<LinearLayer<T>> mlp;        // ReLU hidden layers, mlp reparameterisation
    std::vector<LstmLayer<T>> lstm;         // stacked recurrent layers, lstm reparameterisation
    LinearLayer<T> output;                  // [h, d]

    static PTuningAdapter init(const PTuningConfig& config, const ModelConfig& model,
                               std::uint64_t seed);

    std::optional<BasicTensor<T>> virtual_tokens(const ForwardMode& mode) const;
    std::vector<NamedTensor<T>> named_parameters() const;
};

// ---------------------------------------------------------------- adaption prompt

struct AdaptionPromptConfig {
    std::size_t adapter_length = 10;
    std::size_t adapter_layers = 30;

    void validate(const ModelConfig& model) const;
    /// min(adapter_layers, n_layers)
    std::size_t effective_layers(const ModelConfig& model) const;
    std::uint64_t parameter_count(const ModelConfig& model) const;

    bool operator==(const AdaptionPromptConfig&) const = default;
};

template <typename T>
struct AdaptionPromptAdapter {
    AdaptionPromptConfig config;
    ModelConfig model;
    std::size_t first_layer = 0;           // affected layers are first_layer..n_layers-1
    std::vector<PromptGate<T>> prompts;    // one per affected layer, gates start at 0

    static AdaptionPromptAdapter init(const AdaptionPromptConfig& config, const ModelConfig& model,
                                      std::uint64_t seed);

    bool affects(std::size_t layer) const { return layer >= first_layer && layer < model.n_layers; }
    std::vector<PromptGate<T>> gated_prompts(std::size_t layer) const;
    std::vector<NamedTensor<T>> named_parameters() const;
};

/// Contribution added to the attention context at one layer:
/// tanh(gate) softmax(q (P Wk)^T / sqrt(d_head)) (P Wv).
template <typename T>
BasicTensor<T> adaption_prompt_forward(const AdaptionPromptAdapter<T>& adapter, std::size_t layer,
                                       const BasicTensor<T>& q, const BasicTensor<T>& wk,
                                       const BasicTensor<T>& wv);

// ---------------------------------------------------------------- any

template <typename T>
using AnyAdapter = std::variant<LoraAdapter<T>, PrefixAdapter<T>, PromptAdapter<T>,
                                PTuningAdapter<T>, AdaptionPromptAdapter<T>>;

using AnyAdapterConfig =
    std::variant<LoraConfig, PrefixConfig, PromptConfig, PTuningConfig, AdaptionPromptConfig>;

Technique technique_of(const AnyAdapterConfig& config);
std::uint64_t parameter_count(const AnyAdapterConfig& config, const ModelConfig& model);

template <typename T>
Technique technique_of(const AnyAdapter<T>& adapter);
template <typename T>
AnyAdapterConfig config_of(const AnyAdapter<T>& adapter);
template <typename T>
const ModelConfig& model_config_of(const AnyAdapter<T>& adapter);

/// Builds an adapter. Prompt tuning needs the base (for text init) and the
/// tokenized init text.
template <typename T>
AnyAdapter<T> make_adapter(const AnyAdapterConfig& config, const BaseModel<T>& base,
                           std::span<const int> prompt_init_ids, std::uint64_t seed);

/// Handles to every leaf, in a stable order with stable names.
template <typename T>
std::vector<NamedTensor<T>> named_parameters(const AnyAdapter<T>& adapter);
/// Replaces the leaves with `tensors` (same names and shapes as
/// named_parameters). Throws DataError on mismatch.
template <typename T>
void load_parameters(AnyAdapter<T>& adapter, std::vector<NamedTensor<T>> tensors);
template <typename T>
std::uint64_t parameter_count(const AnyAdapter<T>& adapter);
template <typename T>
void set_trainable(AnyAdapter<T>& adapter, bool trainable);
/// Deep copy; trainability is not carried over (copies start frozen).
template <typename T>
AnyAdapter<T> clone(const AnyAdapter<T>& adapter);

}  // namespace peft_forge
