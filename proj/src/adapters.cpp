#include "peft_forge/adapters.hpp"

#include <algorithm>
#include <cmath>

#include "peft_forge/error.hpp"

namespace peft_forge {

namespace {

constexpr double kInitStd = 0.02;

template <typename T>
using Slots = std::vector<std::pair<std::string, BasicTensor<T>*>>;

std::string layer_prefix(std::size_t layer) { return "layers." + std::to_string(layer) + "."; }

void require_positive_tokens(std::size_t n, std::string_view what) {
    if (n == 0) {
        throw UsageError(std::string(what) + ": num_virtual_tokens must be at least 1");
    }
}

template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& x, const LinearLayer<T>& layer) {
    return add_rowvec(matmul(x, layer.weight), layer.bias);
}

template <typename T>
BasicTensor<T> maybe_dropout(const BasicTensor<T>& x, double p, const ForwardMode& mode) {
    if (!mode.training || p == 0.0) {
        return x;
    }
    if (mode.rng == nullptr) {
        throw UsageError("dropout in training mode needs a random generator");
    }
    return dropout(x, p, *mode.rng);
}

}  // namespace

std::string_view technique_name(Technique t) {
    switch (t) {
        case Technique::lora:
            return "lora";
        case Technique::prefix:
            return "prefix";
        case Technique::prompt:
            return "prompt";
        case Technique::ptuning:
            return "ptuning";
        case Technique::adaption_prompt:
            return "adaption";
    }
    return "lora";
}

Technique parse_technique(std::string_view name) {
    if (name == "lora") return Technique::lora;
    if (name == "prefix") return Technique::prefix;
    if (name == "prompt") return Technique::prompt;
    if (name == "ptuning" || name == "p-tuning") return Technique::ptuning;
    if (name == "adaption" || name == "adaption_prompt") return Technique::adaption_prompt;
    throw UsageError("unknown technique '" + std::string(name) +
                     "' (expected lora|prefix|prompt|ptuning|adaption)");
}

// ---------------------------------------------------------------- LoRA

void LoraConfig::validate(const ModelConfig& model) const {
    if (r == 0) {
        throw UsageError("lora: r must be at least 1");
    }
    if (r > model.d_model) {
        throw UsageError("lora: r = " + std::to_string(r) + " exceeds d_model = " +
                         std::to_string(model.d_model));
    }
    if (!(alpha > 0.0)) {
        throw UsageError("lora: alpha must be positive");
    }
    if (!(dropout >= 0.0 && dropout < 1.0)) {
        throw UsageError("lora: dropout must be in [0, 1)");
    }
    if (targets.empty()) {
        throw UsageError("lora: no target projections");
    }
    for (std::size_t i = 0; i < targets.size(); ++i) {
        for (std::size_t j = i + 1; j < targets.size(); ++j) {
            if (targets[i] == targets[j]) {
                throw UsageError("lora: duplicate target projection");
            }
        }
    }
}

std::uint64_t LoraConfig::parameter_count(const ModelConfig& model) const {
    const std::uint64_t per = 2ull * r * model.d_model;
    return static_cast<std::uint64_t>(model.n_layers) * targets.size() * per;
}

bool LoraConfig::targets_projection(Projection p) const {
    return std::find(targets.begin(), targets.end(), p) != targets.end();
}

template <typename T>
LoraAdapter<T> LoraAdapter<T>::init(const LoraConfig& config, const ModelConfig& model,
                                    std::uint64_t seed) {
    model.validate();
    config.validate(model);
    LoraAdapter out;
    out.config = config;
    out.model = model;
    std::uint64_t stream = 0;
    for (std::size_t l = 0; l < model.n_layers; ++l) {
        for (Projection p : config.targets) {
            LoraModule<T> m;
            m.layer = l;
            m.projection = p;
            m.a = BasicTensor<T>::gaussian({config.r, model.d_model}, 0.0, kInitStd,
                                           derive_seed(seed, stream++));
            m.b = BasicTensor<T>::zeros({model.d_model, config.r});
            m.a.set_requires_grad(true);
            m.b.set_requires_grad(true);
            out.modules.push_back(std::move(m));
        }
    }
    return out;
}

template <typename T>
const LoraModule<T>* LoraAdapter<T>::find(std::size_t layer, Projection p) const {
    for (const auto& m : modules) {
        if (m.layer == layer && m.projection == p) {
            return &m;
        }
    }
    return nullptr;
}

template <typename T>
BasicTensor<T> LoraAdapter<T>::delta(std::size_t layer, Projection p, const BasicTensor<T>& x,
                                     const ForwardMode& mode) const {
    const auto* m = find(layer, p);
    if (m == nullptr) {
        throw UsageError("lora: projection " + std::string(projection_name(p)) + " of layer " +
                         std::to_string(layer) + " is not targeted");
    }
    const BasicTensor<T> xd = maybe_dropout(x, config.dropout, mode);
    const BasicTensor<T> low = matmul(xd, transpose(m->a));
    return scale(matmul(low, transpose(m->b)), config.scaling());
}

template <typename T>
BasicTensor<T> LoraAdapter<T>::dense_delta(std::size_t layer, Projection p) const {
    const auto* m = find(layer, p);
    if (m == nullptr) {
        throw UsageError("lora: projection " + std::string(projection_name(p)) + " of layer " +
                         std::to_string(layer) + " is not targeted");
    }
    return scale(matmul(transpose(m->a), transpose(m->b)), config.scaling());
}

template <typename T>
std::optional<BasicTensor<T>> LoraAdapter<T>::projection_delta(std::size_t layer, Projection p,
                                                               const BasicTensor<T>& x,
                                                               const ForwardMode& mode) const {
    if (find(layer, p) == nullptr) {
        return std::nullopt;
    }
    return delta(layer, p, x, mode);
}

template <typename T>
Slots<T> slots(LoraAdapter<T>& a) {
    Slots<T> out;
    for (auto& m : a.modules) {
        const std::string p = layer_prefix(m.layer) + "w" + std::string(projection_name(m.projection));
        out.emplace_back(p + ".lora_a", &m.a);
        out.emplace_back(p + ".lora_b", &m.b);
    }
    return out;
}

// ---------------------------------------------------------------- prefix

void PrefixConfig::validate(const ModelConfig&) const {
    require_positive_tokens(num_virtual_tokens, "prefix");
}

std::uint64_t PrefixConfig::parameter_count(const ModelConfig& model) const {
    const std::uint64_t n = num_virtual_tokens;
    const std::uint64_t d = model.d_model;
    const std::uint64_t out = 2ull * model.n_layers * d;
    if (!prefix_projection) {
        return n * out;
    }
    const std::uint64_t h = hidden(model);
    return n * d + (d * h + h) + (h * out + out);
}

template <typename T>
PrefixAdapter<T> PrefixAdapter<T>::init(const PrefixConfig& config, const ModelConfig& model,
                                        std::uint64_t seed) {
    model.validate();
    config.validate(model);
    PrefixAdapter out;
    out.config = config;
    out.model = model;
    const std::size_t n = config.num_virtual_tokens;
    const std::size_t d = model.d_model;
    std::uint64_t stream = 0;
    auto trainable = [](BasicTensor<T> t) {
        t.set_requires_grad(true);
        return t;
    };
    if (!config.prefix_projection) {
        for (std::size_t l = 0; l < model.n_layers; ++l) {
            out.keys.push_back(trainable(
                BasicTensor<T>::gaussian({n, d}, 0.0, kInitStd, derive_seed(seed, stream++))));
            out.values.push_back(trainable(
                BasicTensor<T>::gaussian({n, d}, 0.0, kInitStd, derive_seed(seed, stream++))));
        }
    } else {
        const std::size_t h = config.hidden(model);
        const std::size_t width = 2 * model.n_layers * d;
        out.embedding = trainable(
            BasicTensor<T>::gaussian({n, d}, 0.0, kInitStd, derive_seed(seed, stream++)));
        out.w1 = trainable(
            BasicTensor<T>::gaussian({d, h}, 0.0, kInitStd, derive_seed(seed, stream++)));
        out.b1 = trainable(BasicTensor<T>::zeros({h}));
        out.w2 = trainable(
            BasicTensor<T>::gaussian({h, width}, 0.0, kInitStd, derive_seed(seed, stream++)));
        out.b2 = trainable(BasicTensor<T>::zeros({width}));
    }
    return out;
}

template <typename T>
std::optional<std::pair<BasicTensor<T>, BasicTensor<T>>> PrefixAdapter<T>::prefix_kv(
    std::size_t layer, const ForwardMode&) const {
    if (layer >= model.n_layers) {
        throw UsageError("prefix: layer " + std::to_string(layer) + " out of range");
    }
    if (!config.prefix_projection) {
        return std::make_pair(keys[layer], values[layer]);
    }
    const BasicTensor<T> hidden = tanh(add_rowvec(matmul(embedding, w1), b1));
    const BasicTensor<T> all = add_rowvec(matmul(hidden, w2), b2);
    const std::size_t d = model.d_model;
    return std::make_pair(slice_cols(all, 2 * layer * d, d), slice_cols(all, (2 * layer + 1) * d, d));
}

template <typename T>
Slots<T> slots(PrefixAdapter<T>& a) {
    Slots<T> out;
    if (!a.config.prefix_projection) {
        for (std::size_t l = 0; l < a.keys.size(); ++l) {
            out.emplace_back(layer_prefix(l) + "prefix_keys", &a.keys[l]);
            out.emplace_back(layer_prefix(l) + "prefix_values", &a.values[l]);
        }
    } else {
        out.emplace_back("prefix.embedding", &a.embedding);
        out.emplace_back("prefix.w1", &a.w1);
        out.emplace_back("prefix.b1", &a.b1);
        out.emplace_back("prefix.w2", &a.w2);
        out.emplace_back("prefix.b2", &a.b2);
    }
    return out;
}

// ---------------------------------------------------------------- prompt

void PromptConfig::validate(const ModelConfig&) const {
    require_positive_tokens(num_virtual_tokens, "prompt");
}

std::uint64_t PromptConfig::parameter_count(const ModelConfig& model) const {
    return static_cast<std::uint64_t>(num_virtual_tokens) * model.d_model;
}

template <typename T>
PromptAdapter<T> PromptAdapter<T>::init(const PromptConfig& config, const BaseModel<T>& base,
                                        std::span<const int> init_ids, std::uint64_t seed) {
    config.validate(base.config);
    PromptAdapter out;
    out.config = config;
    out.model = base.config;
    const std::size_t n = config.num_virtual_tokens;
    const std::size_t d = base.config.d_model;
    if (config.init == PromptInit::random) {
        out.rows = BasicTensor<T>::gaussian({n, d}, 0.0, kInitStd, seed);
    } else {
        if (init_ids.empty()) {
            throw UsageError("prompt: init text '" + config.init_text + "' tokenizes to no tokens");
        }
        std::vector<T> data(n * d);
        const auto table = base.embedding.data();
        for (std::size_t i = 0; i < n; ++i) {
            const int id = init_ids[i % init_ids.size()];
            if (id < 0 || static_cast<std::size_t>(id) >= base.config.vocab_size) {
                throw UsageError("prompt: init token id " + std::to_string(id) + " out of range");
            }
            std::copy_n(table.begin() + static_cast<std::ptrdiff_t>(id * d), d,
                        data.begin() + static_cast<std::ptrdiff_t>(i * d));
        }
        out.rows = BasicTensor<T>::from_data({n, d}, std::move(data));
    }
    out.rows.set_requires_grad(true);
    return out;
}

template <typename T>
std::optional<BasicTensor<T>> PromptAdapter<T>::virtual_tokens(const ForwardMode&) const {
    return rows;
}

template <typename T>
Slots<T> slots(PromptAdapter<T>& a) {
    return {{"prompt.rows", &a.rows}};
}

// ---------------------------------------------------------------- p-tuning

void PTuningConfig::validate(const ModelConfig&) const {
    require_positive_tokens(num_virtual_tokens, "ptuning");
    if (hidden == 0 || num_layers == 0) {
        throw UsageError("ptuning: hidden and num_layers must be positive");
    }
    if (!(dropout >= 0.0 && dropout < 1.0)) {
        throw UsageError("ptuning: dropout must be in [0, 1)");
    }
}

std::uint64_t PTuningConfig::parameter_count(const ModelConfig& model) const {
    const std::uint64_t n = num_virtual_tokens;
    const std::uint64_t d = model.d_model;
    const std::uint64_t h = hidden;
    std::uint64_t total = n * d + (h * d + d);
    for (std::uint64_t l = 0; l < num_layers; ++l) {
        const std::uint64_t in = l == 0 ? d : h;
        if (reparameterisation == Reparameterisation::mlp) {
            total += in * h + h;
        } else {
            total += in * 4 * h + h * 4 * h + 4 * h;
        }
    }
    return total;
}

template <typename T>
PTuningAdapter<T> PTuningAdapter<T>::init(const PTuningConfig& config, const ModelConfig& model,
                                          std::uint64_t seed) {
    model.validate();
    config.validate(model);
    PTuningAdapter out;
    out.config = config;
    out.model = model;
    const std::size_t d = model.d_model;
    const std::size_t h = config.hidden;
    std::uint64_t stream = 0;
    auto gaussian = [&](const Shape& shape) {
        auto t = BasicTensor<T>::gaussian(shape, 0.0, kInitStd, derive_seed(seed, stream++));
        t.set_requires_grad(true);
        return t;
    };
    auto zeros = [](const Shape& shape) {
        auto t = BasicTensor<T>::zeros(shape);
        t.set_requires_grad(true);
        return t;
    };
    out.seed_rows = gaussian({config.num_virtual_tokens, d});
    for (std::size_t l = 0; l < config.num_layers; ++l) {
        const std::size_t in = l == 0 ? d : h;
        if (config.reparameterisation == Reparameterisation::mlp) {
            out.mlp.push_back({gaussian({in, h}), zeros({h})});
        } else {
            out.lstm.push_back({gaussian({in, 4 * h}), gaussian({h, 4 * h}), zeros({4 * h})});
        }
    }
    out.output = {gaussian({h, d}), zeros({d})};
    return out;
}

template <typename T>
std::optional<BasicTensor<T>> PTuningAdapter<T>::virtual_tokens(const ForwardMode& mode) const {
    BasicTensor<T> x = seed_rows;
    const std::size_t h = config.hidden;
    if (config.reparameterisation == Reparameterisation::mlp) {
        for (const auto& layer : mlp) {
            x = maybe_dropout(relu(linear(x, layer)), config.dropout, mode);
        }
    } else {
        const std::size_t n = config.num_virtual_tokens;
        for (const auto& layer : lstm) {
            // Input contributions for every step at once; the recurrence adds h_{t-1} W_h.
            const BasicTensor<T> projected = add_rowvec(matmul(x, layer.w_input), layer.bias);
            BasicTensor<T> hidden = BasicTensor<T>::zeros({1, h});
            BasicTensor<T> cell = BasicTensor<T>::zeros({1, h});
            std::vector<BasicTensor<T>> outputs;
            outputs.reserve(n);
            for (std::size_t t = 0; t < n; ++t) {
                const std::size_t row = t;
                BasicTensor<T> gates = gather_rows(projected, std::span<const std::size_t>(&row, 1));
                if (t > 0) {
                    gates = add(gates, matmul(hidden, layer.w_hidden));
                }
                const BasicTensor<T> i = sigmoid(slice_cols(gates, 0, h));
                const BasicTensor<T> f = sigmoid(slice_cols(gates, h, h));
                const BasicTensor<T> g = tanh(slice_cols(gates, 2 * h, h));
                const BasicTensor<T> o = sigmoid(slice_cols(gates, 3 * h, h));
                cell = t == 0 ? mul(i, g) : add(mul(f, cell), mul(i, g));
                hidden = mul(o, tanh(cell));
                outputs.push_back(hidden);
            }
            x = maybe_dropout(concat_rows(std::span<const BasicTensor<T>>(outputs)), config.dropout,
                              mode);
        }
    }
    return linear(x, output);
}

template <typename T>
Slots<T> slots(PTuningAdapter<T>& a) {
    Slots<T> out{{"ptuning.seed_rows", &a.seed_rows}};
    for (std::size_t l = 0; l < a.mlp.size(); ++l) {
        const std::string p = "ptuning.mlp." + std::to_string(l) + ".";
        out.emplace_back(p + "weight", &a.mlp[l].weight);
        out.emplace_back(p + "bias", &a.mlp[l].bias);
    }
    for (std::size_t l = 0; l < a.lstm.size(); ++l) {
        const std::string p = "ptuning.lstm." + std::to_string(l) + ".";
        out.emplace_back(p + "w_input", &a.lstm[l].w_input);
        out.emplace_back(p + "w_hidden", &a.lstm[l].w_hidden);
        out.emplace_back(p + "bias", &a.lstm[l].bias);
    }
    out.emplace_back("ptuning.output.weight", &a.output.weight);
    out.emplace_back("ptuning.output.bias", &a.output.bias);
    return out;
}

// ---------------------------------------------------------------- adaption prompt

void AdaptionPromptConfig::validate(const ModelConfig&) const {
    if (adapter_length == 0 || adapter_layers == 0) {
        throw UsageError("adaption prompt: adapter_length and adapter_layers must be positive");
    }
}

std::size_t AdaptionPromptConfig::effective_layers(const ModelConfig& model) const {
    return std::min(adapter_layers, model.n_layers);
}

std::uint64_t AdaptionPromptConfig::parameter_count(const ModelConfig& model) const {
    return static_cast<std::uint64_t>(effective_layers(model)) *
           (static_cast<std::uint64_t>(adapter_length) * model.d_model + 1);
}

template <typename T>
AdaptionPromptAdapter<T> AdaptionPromptAdapter<T>::init(const AdaptionPromptConfig& config,
                                                        const ModelConfig& model,
                                                        std::uint64_t seed) {
    model.validate();
    config.validate(model);
    AdaptionPromptAdapter out;
    out.config = config;
    out.model = model;
    const std::size_t count = config.effective_layers(model);
    out.first_layer = model.n_layers - count;
    for (std::size_t i = 0; i < count; ++i) {
        PromptGate<T> p{
            BasicTensor<T>::gaussian({config.adapter_length, model.d_model}, 0.0, kInitStd,
                                     derive_seed(seed, i)),
            BasicTensor<T>::zeros({1})};
        p.rows.set_requires_grad(true);
        p.gate.set_requires_grad(true);
        out.prompts.push_back(std::move(p));
    }
    return out;
}

template <typename T>
std::vector<PromptGate<T>> AdaptionPromptAdapter<T>::gated_prompts(std::size_t layer) const {
    if (!affects(layer)) {
        return {};
    }
    return {prompts[layer - first_layer]};
}

template <typename T>
BasicTensor<T> adaption_prompt_forward(const AdaptionPromptAdapter<T>& adapter, std::size_t layer,
                                       const BasicTensor<T>& q, const BasicTensor<T>& wk,
                                       const BasicTensor<T>& wv) {
    if (!adapter.affects(layer)) {
        throw UsageError("adaption prompt: layer " + std::to_string(layer) + " is not adapted");
    }
    const auto& p = adapter.prompts[layer - adapter.first_layer];
    return gated_prompt_attention(q, matmul(p.rows, wk), matmul(p.rows, wv), p.gate,
                                  adapter.model.n_heads);
}

template <typename T>
Slots<T> slots(AdaptionPromptAdapter<T>& a) {
    Slots<T> out;
    for (std::size_t i = 0; i < a.prompts.size(); ++i) {
        const std::string p = layer_prefix(a.first_layer + i);
        out.emplace_back(p + "adaption_prompt", &a.prompts[i].rows);
        out.emplace_back(p + "adaption_gate", &a.prompts[i].gate);
    }
    return out;
}

// ---------------------------------------------------------------- named parameters

template <typename T>
std::vector<NamedTensor<T>> LoraAdapter<T>::named_parameters() const {
    return peft_forge::named_parameters(AnyAdapter<T>(*this));
}
template <typename T>
std::vector<NamedTensor<T>> PrefixAdapter<T>::named_parameters() const {
    return peft_forge::named_parameters(AnyAdapter<T>(*this));
}
template <typename T>
std::vector<NamedTensor<T>> PromptAdapter<T>::named_parameters() const {
    return peft_forge::named_parameters(AnyAdapter<T>(*this));
}
template <typename T>
std::vector<NamedTensor<T>> PTuningAdapter<T>::named_parameters() const {
    return peft_forge::named_parameters(AnyAdapter<T>(*this));
}
template <typename T>
std::vector<NamedTensor<T>> AdaptionPromptAdapter<T>::named_parameters() const {
    return peft_forge::named_parameters(AnyAdapter<T>(*this));
}

// ---------------------------------------------------------------- any

Technique technique_of(const AnyAdapterConfig& config) {
    return static_cast<Technique>(config.index());
}

std::uint64_t parameter_count(const AnyAdapterConfig& config, const ModelConfig& model) {
    return std::visit([&](const auto& c) { return c.parameter_count(model); }, config);
}

template <typename T>
Technique technique_of(const AnyAdapter<T>& adapter) {
    return static_cast<Technique>(adapter.index());
}

template <typename T>
AnyAdapterConfig config_of(const AnyAdapter<T>& adapter) {
    return std::visit([](const auto& a) { return AnyAdapterConfig(a.config); }, adapter);
}

template <typename T>
const ModelConfig& model_config_of(const AnyAdapter<T>& adapter) {
    return std::visit([](const auto& a) -> const ModelConfig& { return a.model; }, adapter);
}

template <typename T>
AnyAdapter<T> make_adapter(const AnyAdapterConfig& config, const BaseModel<T>& base,
                           std::span<const int> prompt_init_ids, std::uint64_t seed) {
    return std::visit(
        [&](const auto& c) -> AnyAdapter<T> {
            using C = std::decay_t<decltype(c)>;
            if constexpr (std::is_same_v<C, LoraConfig>) {
                return LoraAdapter<T>::init(c, base.config, seed);
            } else if constexpr (std::is_same_v<C, PrefixConfig>) {
                return PrefixAdapter<T>::init(c, base.config, seed);
            } else if constexpr (std::is_same_v<C, PromptConfig>) {
                return PromptAdapter<T>::init(c, base, prompt_init_ids, seed);
            } else if constexpr (std::is_same_v<C, PTuningConfig>) {
                return PTuningAdapter<T>::init(c, base.config, seed);
            } else {
                return AdaptionPromptAdapter<T>::init(c, base.config, seed);
            }
        },
        config);
}

template <typename T>
std::vector<NamedTensor<T>> named_parameters(const AnyAdapter<T>& adapter) {
    auto& mut = const_cast<AnyAdapter<T>&>(adapter);
    return std::visit(
        [](auto& a) {
            std::vector<NamedTensor<T>> out;
            for (auto& [name, t] : slots(a)) {
                out.push_back({name, *t});
            }
            return out;
        },
        mut);
}

template <typename T>
void load_parameters(AnyAdapter<T>& adapter, std::vector<NamedTensor<T>> tensors) {
    std::visit(
        [&](auto& a) {
            auto s = slots(a);
            if (s.size() != tensors.size()) {
                throw DataError("adapter: expected " + std::to_string(s.size()) + " tensors, got " +
                                std::to_string(tensors.size()));
            }
            for (std::size_t i = 0; i < s.size(); ++i) {
                if (s[i].first != tensors[i].name) {
                    throw DataError("adapter: expected tensor '" + s[i].first + "', got '" +
                                    tensors[i].name + "'");
                }
                if (s[i].second->shape() != tensors[i].tensor.shape()) {
                    throw DataError("adapter: tensor '" + s[i].first + "' has shape " +
                                    shape_str(tensors[i].tensor.shape()) + ", expected " +
                                    shape_str(s[i].second->shape()));
                }
            }
            for (std::size_t i = 0; i < s.size(); ++i) {
                *s[i].second = std::move(tensors[i].tensor);
            }
        },
        adapter);
}

template <typename T>
std::uint64_t parameter_count(const AnyAdapter<T>& adapter) {
    std::uint64_t n = 0;
    for (const auto& p : named_parameters(adapter)) {
        n += p.tensor.numel();
    }
    return n;
}

template <typename T>
void set_trainable(AnyAdapter<T>& adapter, bool trainable) {
    for (auto& p : named_parameters(adapter)) {
        p.tensor.set_requires_grad(trainable);
    }
}

template <typename T>
AnyAdapter<T> clone(const AnyAdapter<T>& adapter) {
    AnyAdapter<T> copy = adapter;
    std::vector<NamedTensor<T>> tensors;
    for (const auto& [name, t] : named_parameters(adapter)) {
        tensors.push_back({name, t.clone()});
    }
    load_parameters(copy, std::move(tensors));
    return copy;
}

#define PEFT_FORGE_INSTANTIATE(T)                                                                 \
    template struct LoraAdapter<T>;                                                               \
    template struct PrefixAdapter<T>;                                                             \
    template struct PromptAdapter<T>;                                                             \
    template struct PTuningAdapter<T>;                                                            \
    template struct AdaptionPromptAdapter<T>;                                                     \
    template BasicTensor<T> adaption_prompt_forward(const AdaptionPromptAdapter<T>&, std::size_t, \
                                                    const BasicTensor<T>&, const BasicTensor<T>&, \
                                                    const BasicTensor<T>&);                       \
    template Technique technique_of(const AnyAdapter<T>&);                                        \
    template AnyAdapterConfig config_of(const AnyAdapter<T>&);                                    \
    template const ModelConfig& model_config_of(const AnyAdapter<T>&);                            \
    template AnyAdapter<T> make_adapter(const AnyAdapterConfig&, const BaseModel<T>&,             \
                                        std::span<const int>, std::uint64_t);                     \
    template std::vector<NamedTensor<T>> named_parameters(const AnyAdapter<T>&);                  \
    template void load_parameters(AnyAdapter<T>&, std::vector<NamedTensor<T>>);                   \
    template std::uint64_t parameter_count(const AnyAdapter<T>&);                                 \
    template void set_trainable(AnyAdapter<T>&, bool);                                            \
    template AnyAdapter<T> clone(const AnyAdapter<T>&);

PEFT_FORGE_INSTANTIATE(float)
PEFT_FORGE_INSTANTIATE(double)

#undef PEFT_FORGE_INSTANTIATE

}  // namespace peft_forge
