#pragma once

// Composition of a frozen base with a domain adapter, a downstream adapter and
// a classification head, following one of the six evaluated variants.

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "peft_forge/adapters.hpp"

namespace peft_forge {

enum class Variant {
    head_only,
    lora_only,
    domain_frozen,
    domain_frozen_plus_downstream,
    domain_trainable,
    domain_trainable_plus_downstream,
};

std::string_view variant_name(Variant v);
Variant parse_variant(std::string_view name);
const std::vector<Variant>& all_variants();

struct VariantSpec {
    bool uses_domain = false;
    bool domain_trainable = false;
    bool uses_downstream = false;
};

VariantSpec variant_spec(Variant v);

struct TrainableCount {
    std::uint64_t count = 0;
    double fraction = 0.0;  // count / base parameter count
};

/// "0.12%" style rendering of a fraction.
std::string format_percent(double fraction, int decimals = 2);

template <typename T>
struct AttachedAdapter {
    AnyAdapter<T> adapter;
    bool frozen = false;
};

template <typename T>
class AdapterStack : public AdapterHooks<T> {
public:
    BaseModel<T> base;  // shares storage with the caller's model, always frozen
    std::optional<Variant> variant;
    std::optional<AttachedAdapter<T>> domain;
    std::optional<AttachedAdapter<T>> downstream;
    std::optional<ClassifierHead<T>> head;

    /// Domain-adaptive pretraining: one trainable adapter, no head.
    static AdapterStack for_pretraining(const BaseModel<T>& base, const AnyAdapter<T>& adapter);

    std::optional<BasicTensor<T>> virtual_tokens(const ForwardMode& mode) const override;
    std::optional<BasicTensor<T>> projection_delta(std::size_t layer, Projection p,
                                                   const BasicTensor<T>& x,
                                                   const ForwardMode& mode) const override;
    std::optional<std::pair<BasicTensor<T>, BasicTensor<T>>> prefix_kv(
        std::size_t layer, const ForwardMode& mode) const override;
    std::vector<PromptGate<T>> gated_prompts(std::size_t layer) const override;

    /// Every adapter and head leaf, prefixed "domain.", "downstream.", "head.".
    std::vector<NamedTensor<T>> named_parameters() const;
    /// The leaves that receive gradients.
    std::vector<NamedTensor<T>> trainable_parameters() const;
    TrainableCount count_trainable() const;

    LmOutput<T> forward_lm(const TokenBatch& tokens, const ForwardMode& mode = {}) const;
    BasicTensor<T> forward_classify(const TokenBatch& tokens, const ForwardMode& mode = {}) const;

    /// Deep copy of adapters and head with the same freeze flags; base shared.
    AdapterStack clone() const;
};

/// Builds the stack for `variant`. Adapters are deep-copied, so training the
/// stack never touches the arguments. Throws UsageError when an adapter the
/// variant needs is missing or one it does not use is supplied, DataError
/// when an adapter was built for different model dimensions.
template <typename T>
AdapterStack<T> compose(const BaseModel<T>& base, Variant variant,
                        const std::optional<AnyAdapter<T>>& domain,
                        const std::optional<AnyAdapter<T>>& downstream, const TaskSpec& task,
                        std::uint64_t head_seed);

/// Enumerated leaves of one adapter against its base dimensions.
template <typename T>
TrainableCount count_trainable(const AnyAdapter<T>& adapter);

/// Closed-form count for a configuration; needs no allocation.
TrainableCount count_trainable(const AnyAdapterConfig& config, const ModelConfig& model);

/// Base with W += (alpha / r) (BA)^T folded into every targeted projection.
/// Throws UsageError for non-LoRA adapters, DataError on dimension mismatch.
template <typename T>
BaseModel<T> merge_lora(const BaseModel<T>& base, const AnyAdapter<T>& adapter);

}  // namespace peft_forge
