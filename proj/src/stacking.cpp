#include "peft_forge/stacking.hpp"

#include <cstdio>

#include "peft_forge/error.hpp"

namespace peft_forge {

std::string_view variant_name(Variant v) {
    switch (v) {
        case Variant::head_only:
            return "head_only";
        case Variant::lora_only:
            return "lora_only";
        case Variant::domain_frozen:
            return "domain_frozen";
        case Variant::domain_frozen_plus_downstream:
            return "domain_frozen_plus_downstream";
        case Variant::domain_trainable:
            return "domain_trainable";
        case Variant::domain_trainable_plus_downstream:
            return "domain_trainable_plus_downstream";
    }
    return "head_only";
}

const std::vector<Variant>& all_variants() {
    static const std::vector<Variant> variants{
        Variant::head_only,        Variant::lora_only,
        Variant::domain_frozen,    Variant::domain_frozen_plus_downstream,
        Variant::domain_trainable, Variant::domain_trainable_plus_downstream,
    };
    return variants;
}

Variant parse_variant(std::string_view name) {
    for (Variant v : all_variants()) {
        if (variant_name(v) == name) {
            return v;
        }
    }
    throw UsageError("unknown variant '" + std::string(name) +
                     "' (expected head_only|lora_only|domain_frozen|domain_frozen_plus_downstream|"
                     "domain_trainable|domain_trainable_plus_downstream)");
}

VariantSpec variant_spec(Variant v) {
    switch (v) {
        case Variant::head_only:
            return {false, false, false};
        case Variant::lora_only:
            return {false, false, true};
        case Variant::domain_frozen:
            return {true, false, false};
        case Variant::domain_frozen_plus_downstream:
            return {true, false, true};
        case Variant::domain_trainable:
            return {true, true, false};
        case Variant::domain_trainable_plus_downstream:
            return {true, true, true};
    }
    return {};
}

std::string format_percent(double fraction, int decimals) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f%%", decimals, fraction * 100.0);
    return buf;
}

// ---------------------------------------------------------------- stack

namespace {

template <typename T>
void check_dims(const BaseModel<T>& base, const AnyAdapter<T>& adapter, std::string_view slot) {
    if (!(model_config_of(adapter) == base.config)) {
        throw DataError(std::string(slot) + " adapter was built for different model dimensions");
    }
}

template <typename T>
std::vector<const AttachedAdapter<T>*> attached(const AdapterStack<T>& s) {
    std::vector<const AttachedAdapter<T>*> out;
    if (s.domain) out.push_back(&*s.domain);
    if (s.downstream) out.push_back(&*s.downstream);
    return out;
}

template <typename T>
AttachedAdapter<T> attach(const AnyAdapter<T>& adapter, bool frozen) {
    AttachedAdapter<T> a{clone(adapter), frozen};
    set_trainable(a.adapter, !frozen);
    return a;
}

}  // namespace

template <typename T>
AdapterStack<T> AdapterStack<T>::for_pretraining(const BaseModel<T>& base,
                                                 const AnyAdapter<T>& adapter) {
    check_dims(base, adapter, "domain");
    AdapterStack s;
    s.base = base;
    s.base.set_trainable(false);
    s.domain = attach(adapter, false);
    return s;
}

template <typename T>
std::optional<BasicTensor<T>> AdapterStack<T>::virtual_tokens(const ForwardMode& mode) const {
    std::vector<BasicTensor<T>> parts;
    for (const auto* a : attached(*this)) {
        std::visit(
            [&](const auto& ad) {
                if constexpr (requires { ad.virtual_tokens(mode); }) {
                    if (auto rows = ad.virtual_tokens(mode)) {
                        parts.push_back(*rows);
                    }
                }
            },
            a->adapter);
    }
    if (parts.empty()) return std::nullopt;
    if (parts.size() == 1) return parts.front();
    return concat_rows(std::span<const BasicTensor<T>>(parts));
}

template <typename T>
std::optional<BasicTensor<T>> AdapterStack<T>::projection_delta(std::size_t layer, Projection p,
                                                                const BasicTensor<T>& x,
                                                                const ForwardMode& mode) const {
    std::optional<BasicTensor<T>> total;
    for (const auto* a : attached(*this)) {
        if (const auto* lora = std::get_if<LoraAdapter<T>>(&a->adapter)) {
            if (auto d = lora->projection_delta(layer, p, x, mode)) {
                total = total ? add(*total, *d) : *d;
            }
        }
    }
    return total;
}

template <typename T>
std::optional<std::pair<BasicTensor<T>, BasicTensor<T>>> AdapterStack<T>::prefix_kv(
    std::size_t layer, const ForwardMode& mode) const {
    std::vector<BasicTensor<T>> keys, values;
    for (const auto* a : attached(*this)) {
        if (const auto* prefix = std::get_if<PrefixAdapter<T>>(&a->adapter)) {
            auto kv = prefix->prefix_kv(layer, mode);
            keys.push_back(kv->first);
            values.push_back(kv->second);
        }
    }
    if (keys.empty()) return std::nullopt;
    if (keys.size() == 1) return std::make_pair(keys.front(), values.front());
    return std::make_pair(concat_rows(std::span<const BasicTensor<T>>(keys)),
                          concat_rows(std::span<const BasicTensor<T>>(values)));
}

template <typename T>
std::vector<PromptGate<T>> AdapterStack<T>::gated_prompts(std::size_t layer) const {
    std::vector<PromptGate<T>> out;
    for (const auto* a : attached(*this)) {
        if (const auto* ap = std::get_if<AdaptionPromptAdapter<T>>(&a->adapter)) {
            for (auto& g : ap->gated_prompts(layer)) {
                out.push_back(std::move(g));
            }
        }
    }
    return out;
}

template <typename T>
std::vector<NamedTensor<T>> AdapterStack<T>::named_parameters() const {
    std::vector<NamedTensor<T>> out;
    auto append = [&](std::string_view prefix, std::vector<NamedTensor<T>> params) {
        for (auto& p : params) {
            out.push_back({std::string(prefix) + p.name, std::move(p.tensor)});
        }
    };
    if (domain) append("domain.", peft_forge::named_parameters(domain->adapter));
    if (downstream) append("downstream.", peft_forge::named_parameters(downstream->adapter));
    if (head) append("head.", head->named_parameters());
    return out;
}

template <typename T>
std::vector<NamedTensor<T>> AdapterStack<T>::trainable_parameters() const {
    std::vector<NamedTensor<T>> out;
    for (auto& p : named_parameters()) {
        if (p.tensor.requires_grad()) {
            out.push_back(std::move(p));
        }
    }
    for (auto& p : base.named_parameters()) {
        if (p.tensor.requires_grad()) {
            out.push_back({"base." + p.name, p.tensor});
        }
    }
    return out;
}

template <typename T>
TrainableCount AdapterStack<T>::count_trainable() const {
    std::uint64_t n = 0;
    for (const auto& p : trainable_parameters()) {
        n += p.tensor.numel();
    }
    return {n, static_cast<double>(n) / static_cast<double>(base.config.parameter_count())};
}

template <typename T>
LmOutput<T> AdapterStack<T>::forward_lm(const TokenBatch& tokens, const ForwardMode& mode) const {
    return peft_forge::forward_lm(base, tokens, this, mode);
}

template <typename T>
BasicTensor<T> AdapterStack<T>::forward_classify(const TokenBatch& tokens,
                                                 const ForwardMode& mode) const {
    if (!head) {
        throw UsageError("stack has no classification head");
    }
    return peft_forge::forward_classify(base, *head, tokens, this, mode);
}

template <typename T>
AdapterStack<T> AdapterStack<T>::clone() const {
    AdapterStack s;
    s.base = base;
    s.variant = variant;
    if (domain) s.domain = attach(domain->adapter, domain->frozen);
    if (downstream) s.downstream = attach(downstream->adapter, downstream->frozen);
    if (head) {
        s.head = head->clone();
        s.head->weight.set_requires_grad(head->weight.requires_grad());
        s.head->bias.set_requires_grad(head->bias.requires_grad());
    }
    return s;
}

template <typename T>
AdapterStack<T> compose(const BaseModel<T>& base, Variant variant,
                        const std::optional<AnyAdapter<T>>& domain,
                        const std::optional<AnyAdapter<T>>& downstream, const TaskSpec& task,
                        std::uint64_t head_seed) {
    const VariantSpec spec = variant_spec(variant);
    const std::string name(variant_name(variant));
    if (spec.uses_domain && !domain) {
        throw UsageError("variant " + name + " needs a domain adapter");
    }
    if (!spec.uses_domain && domain) {
        throw UsageError("variant " + name + " takes no domain adapter");
    }
    if (spec.uses_downstream && !downstream) {
        throw UsageError("variant " + name + " needs a downstream adapter");
    }
    if (!spec.uses_downstream && downstream) {
        throw UsageError("variant " + name + " takes no downstream adapter");
    }
    AdapterStack<T> s;
    s.base = base;
    s.base.set_trainable(false);
    s.variant = variant;
    if (domain) {
        check_dims(base, *domain, "domain");
        s.domain = attach(*domain, !spec.domain_trainable);
    }
    if (downstream) {
        check_dims(base, *downstream, "downstream");
        s.downstream = attach(*downstream, false);
    }
    s.head = ClassifierHead<T>::init(base.config.d_model, task, head_seed);
    s.head->weight.set_requires_grad(true);
    s.head->bias.set_requires_grad(true);
    return s;
}

template <typename T>
TrainableCount count_trainable(const AnyAdapter<T>& adapter) {
    const std::uint64_t n = parameter_count(adapter);
    return {n, static_cast<double>(n) /
                   static_cast<double>(model_config_of(adapter).parameter_count())};
}

TrainableCount count_trainable(const AnyAdapterConfig& config, const ModelConfig& model) {
    const std::uint64_t n = parameter_count(config, model);
    return {n, static_cast<double>(n) / static_cast<double>(model.parameter_count())};
}

template <typename T>
BaseModel<T> merge_lora(const BaseModel<T>& base, const AnyAdapter<T>& adapter) {
    const auto* lora = std::get_if<LoraAdapter<T>>(&adapter);
    if (lora == nullptr) {
        throw UsageError("merge: only LoRA adapters can be merged, got " +
                         std::string(technique_name(technique_of(adapter))));
    }
    check_dims(base, adapter, "merged");
    NoGradGuard no_grad;
    BaseModel<T> merged = base.clone();
    for (const auto& m : lora->modules) {
        const BasicTensor<T> delta = lora->dense_delta(m.layer, m.projection);
        auto w = merged.layers[m.layer].projection(m.projection).mutable_data();
        const auto d = delta.data();
        for (std::size_t i = 0; i < w.size(); ++i) {
            w[i] += d[i];
        }
    }
    return merged;
}

#define PEFT_FORGE_INSTANTIATE(T)                                                                 \
    template class AdapterStack<T>;                                                               \
    template AdapterStack<T> compose(const BaseModel<T>&, Variant,                                \
                                     const std::optional<AnyAdapter<T>>&,                         \
                                     const std::optional<AnyAdapter<T>>&, const TaskSpec&,        \
                                     std::uint64_t);                                              \
    template TrainableCount count_trainable(const AnyAdapter<T>&);                                \
    template BaseModel<T> merge_lora(const BaseModel<T>&, const AnyAdapter<T>&);

PEFT_FORGE_INSTANTIATE(float)
PEFT_FORGE_INSTANTIATE(double)

#undef PEFT_FORGE_INSTANTIATE

}  // namespace peft_forge
