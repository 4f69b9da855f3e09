#include "peft_forge/model.hpp"

#include <algorithm>

#include "peft_forge/error.hpp"

namespace peft_forge {

// ---------------------------------------------------------------- tasks

std::string_view task_kind_name(TaskKind kind) {
    switch (kind) {
        case TaskKind::binary:
            return "binary";
        case TaskKind::multiclass:
            return "multiclass";
        case TaskKind::multilabel:
            return "multilabel";
    }
    return "binary";
}

const std::vector<TaskSpec>& standard_tasks() {
    static const std::vector<TaskSpec> tasks{
        TaskSpec::binary("pmv"),
        TaskSpec::binary("mor"),
        TaskSpec::multiclass("los", 4),
        TaskSpec::multilabel("diag", 50),
        TaskSpec::multilabel("proc", 30),
    };
    return tasks;
}

const TaskSpec& standard_task(std::string_view name) {
    for (const auto& t : standard_tasks()) {
        if (t.name == name) {
            return t;
        }
    }
    throw UsageError("unknown task '" + std::string(name) + "' (expected pmv|mor|los|diag|proc)");
}

void validate_label(const TaskSpec& task, const ClassLabel& label) {
    switch (task.kind) {
        case TaskKind::binary:
            if (label.value != 0 && label.value != 1) {
                throw DataError("task " + task.name + ": binary label must be 0 or 1, got " +
                                std::to_string(label.value));
            }
            return;
        case TaskKind::multiclass:
            if (label.value < 0 || static_cast<std::size_t>(label.value) >= task.num_classes) {
                throw DataError("task " + task.name + ": class " + std::to_string(label.value) +
                                " outside [0, " + std::to_string(task.num_classes) + ")");
            }
            return;
        case TaskKind::multilabel:
            if (label.multi.size() != task.num_classes) {
                throw DataError("task " + task.name + ": label row has width " +
                                std::to_string(label.multi.size()) + ", expected " +
                                std::to_string(task.num_classes));
            }
            for (auto v : label.multi) {
                if (v > 1) {
                    throw DataError("task " + task.name + ": multi-hot entries must be 0 or 1");
                }
            }
            return;
    }
}

// ---------------------------------------------------------------- config

std::string_view projection_name(Projection p) {
    switch (p) {
        case Projection::q:
            return "q";
        case Projection::k:
            return "k";
        case Projection::v:
            return "v";
        case Projection::o:
            return "o";
    }
    return "q";
}

Projection parse_projection(std::string_view name) {
    if (name.size() == 2 && (name[0] == 'w' || name[0] == 'W')) {
        name.remove_prefix(1);
    }
    if (name == "q") return Projection::q;
    if (name == "k") return Projection::k;
    if (name == "v") return Projection::v;
    if (name == "o") return Projection::o;
    throw UsageError("unknown projection '" + std::string(name) + "' (expected q|k|v|o)");
}

void ModelConfig::validate() const {
    if (vocab_size < 2) {
        throw UsageError("model config: vocab_size must be at least 2");
    }
    if (d_model == 0 || n_layers == 0 || n_heads == 0 || d_ff == 0) {
        throw UsageError("model config: dimensions must be positive");
    }
    if (d_model % n_heads != 0) {
        throw UsageError("model config: d_model must be divisible by n_heads");
    }
    if (head_dim() % 2 != 0) {
        throw UsageError("model config: head dimension must be even for rotary embeddings");
    }
    if (max_seq_len < 1) {
        throw UsageError("model config: max_seq_len must be at least 1");
    }
    if (!(rms_eps > 0.0)) {
        throw UsageError("model config: rms_eps must be positive");
    }
}

std::vector<std::pair<std::string, Shape>> ModelConfig::parameter_shapes() const {
    std::vector<std::pair<std::string, Shape>> shapes;
    shapes.emplace_back("embedding", Shape{vocab_size, d_model});
    for (std::size_t l = 0; l < n_layers; ++l) {
        const std::string p = "layers." + std::to_string(l) + ".";
        shapes.emplace_back(p + "attn_norm", Shape{d_model});
        shapes.emplace_back(p + "wq", Shape{d_model, d_model});
        shapes.emplace_back(p + "wk", Shape{d_model, d_model});
        shapes.emplace_back(p + "wv", Shape{d_model, d_model});
        shapes.emplace_back(p + "wo", Shape{d_model, d_model});
        shapes.emplace_back(p + "ffn_norm", Shape{d_model});
        shapes.emplace_back(p + "w_gate", Shape{d_model, d_ff});
        shapes.emplace_back(p + "w_up", Shape{d_model, d_ff});
        shapes.emplace_back(p + "w_down", Shape{d_ff, d_model});
    }
    shapes.emplace_back("final_norm", Shape{d_model});
    shapes.emplace_back("lm_head", Shape{d_model, vocab_size});
    return shapes;
}

std::uint64_t ModelConfig::parameter_count() const {
    std::uint64_t total = 0;
    for (const auto& [name, shape] : parameter_shapes()) {
        std::uint64_t n = 1;
        for (auto d : shape) {
            n *= d;
        }
        total += n;
    }
    return total;
}

ModelConfig ModelConfig::llama_7b() {
    ModelConfig c;
    c.vocab_size = 32000;
    c.d_model = 4096;
    c.n_layers = 32;
    c.n_heads = 32;
    c.d_ff = 11008;
    c.max_seq_len = 2048;
    c.rms_eps = 1e-6;
    return c;
}

// ---------------------------------------------------------------- model

template <typename T>
const BasicTensor<T>& LayerWeights<T>::projection(Projection p) const {
    switch (p) {
        case Projection::q:
            return wq;
        case Projection::k:
            return wk;
        case Projection::v:
            return wv;
        case Projection::o:
            return wo;
    }
    return wq;
}

template <typename T>
BasicTensor<T>& LayerWeights<T>::projection(Projection p) {
    return const_cast<BasicTensor<T>&>(std::as_const(*this).projection(p));
}

namespace {

bool is_norm(const std::string& name) {
    return name.size() >= 4 && name.compare(name.size() - 4, 4, "norm") == 0;
}

template <typename T>
std::vector<BasicTensor<T>*> parameter_slots(BaseModel<T>& m) {
    std::vector<BasicTensor<T>*> slots{&m.embedding};
    for (auto& layer : m.layers) {
        for (auto* t : {&layer.attn_norm, &layer.wq, &layer.wk, &layer.wv, &layer.wo,
                        &layer.ffn_norm, &layer.w_gate, &layer.w_up, &layer.w_down}) {
            slots.push_back(t);
        }
    }
    slots.push_back(&m.final_norm);
    slots.push_back(&m.lm_head);
    return slots;
}

}  // namespace

template <typename T>
BaseModel<T> BaseModel<T>::init(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    std::vector<NamedTensor<T>> tensors;
    std::uint64_t stream = 0;
    for (const auto& [name, shape] : config.parameter_shapes()) {
        if (is_norm(name)) {
            tensors.push_back({name, BasicTensor<T>::full(shape, T(1))});
        } else {
            tensors.push_back(
                {name, BasicTensor<T>::gaussian(shape, 0.0, 0.02, derive_seed(seed, stream))});
        }
        ++stream;
    }
    return from_named(config, std::move(tensors));
}

template <typename T>
BaseModel<T> BaseModel<T>::from_named(const ModelConfig& config,
                                      std::vector<NamedTensor<T>> tensors) {
    config.validate();
    const auto shapes = config.parameter_shapes();
    if (tensors.size() != shapes.size()) {
        throw DataError("model: expected " + std::to_string(shapes.size()) + " tensors, got " +
                        std::to_string(tensors.size()));
    }
    BaseModel model;
    model.config = config;
    model.layers.resize(config.n_layers);
    auto slots = parameter_slots(model);
    for (std::size_t i = 0; i < shapes.size(); ++i) {
        if (tensors[i].name != shapes[i].first) {
            throw DataError("model: expected tensor '" + shapes[i].first + "', got '" +
                            tensors[i].name + "'");
        }
        if (tensors[i].tensor.shape() != shapes[i].second) {
            throw DataError("model: tensor '" + shapes[i].first + "' has shape " +
                            shape_str(tensors[i].tensor.shape()) + ", expected " +
                            shape_str(shapes[i].second));
        }
        *slots[i] = std::move(tensors[i].tensor);
    }
    return model;
}

template <typename T>
std::vector<NamedTensor<T>> BaseModel<T>::named_parameters() const {
    const auto shapes = config.parameter_shapes();
    auto slots = parameter_slots(const_cast<BaseModel&>(*this));
    std::vector<NamedTensor<T>> out;
    out.reserve(slots.size());
    for (std::size_t i = 0; i < slots.size(); ++i) {
        out.push_back({shapes[i].first, *slots[i]});
    }
    return out;
}

template <typename T>
std::uint64_t BaseModel<T>::parameter_count() const {
    std::uint64_t n = 0;
    for (const auto& p : named_parameters()) {
        n += p.tensor.numel();
    }
    return n;
}

template <typename T>
void BaseModel<T>::set_trainable(bool trainable) {
    for (auto* t : parameter_slots(*this)) {
        t->set_requires_grad(trainable);
    }
}

template <typename T>
BaseModel<T> BaseModel<T>::clone() const {
    std::vector<NamedTensor<T>> copies;
    for (const auto& [name, t] : named_parameters()) {
        copies.push_back({name, t.clone()});
    }
    return from_named(config, std::move(copies));
}

template <typename T>
ClassifierHead<T> ClassifierHead<T>::init(std::size_t d_model, const TaskSpec& task,
                                          std::uint64_t seed) {
    ClassifierHead head;
    head.task = task;
    head.weight = BasicTensor<T>::gaussian({d_model, task.n_outputs()}, 0.0, 0.02, seed);
    head.bias = BasicTensor<T>::zeros({task.n_outputs()});
    return head;
}

template <typename T>
std::vector<NamedTensor<T>> ClassifierHead<T>::named_parameters() const {
    return {{"weight", weight}, {"bias", bias}};
}

template <typename T>
ClassifierHead<T> ClassifierHead<T>::clone() const {
    return {task, weight.clone(), bias.clone()};
}

// ---------------------------------------------------------------- batches

TokenBatch TokenBatch::from_sequences(const std::vector<std::vector<int>>& sequences) {
    if (sequences.empty()) {
        throw UsageError("token batch: no sequences");
    }
    TokenBatch out;
    out.batch = sequences.size();
    for (const auto& s : sequences) {
        if (s.empty()) {
            throw UsageError("token batch: zero-length sequence");
        }
        out.seq = std::max(out.seq, s.size());
    }
    out.ids.assign(out.batch * out.seq, kPad);
    for (std::size_t b = 0; b < sequences.size(); ++b) {
        for (std::size_t t = 0; t < sequences[b].size(); ++t) {
            if (sequences[b][t] == kPad) {
                throw UsageError("token batch: pad id inside sequence content");
            }
            out.ids[b * out.seq + t] = sequences[b][t];
        }
    }
    return out;
}

std::size_t TokenBatch::length(std::size_t b) const {
    std::size_t len = seq;
    while (len > 0 && ids[b * seq + len - 1] == kPad) {
        --len;
    }
    return len;
}

std::vector<int> lm_targets(const TokenBatch& tokens, std::size_t virtual_tokens) {
    const std::size_t total = tokens.seq + virtual_tokens;
    std::vector<int> targets(tokens.batch * total, kIgnoreIndex);
    for (std::size_t b = 0; b < tokens.batch; ++b) {
        const std::size_t len = tokens.length(b);
        for (std::size_t t = 0; t + 1 < len; ++t) {
            targets[b * total + virtual_tokens + t] = tokens.at(b, t + 1);
        }
    }
    return targets;
}

// ---------------------------------------------------------------- blocks

template <typename T>
BasicTensor<T> rmsnorm(const BasicTensor<T>& x, const BasicTensor<T>& weight, double eps) {
    return mul_rowvec(rsqrt_meansq(x, eps), weight);
}

template <typename T>
std::pair<BasicTensor<T>, BasicTensor<T>> rotary_apply(const BasicTensor<T>& q,
                                                       const BasicTensor<T>& k,
                                                       std::span<const int> positions,
                                                       std::size_t n_heads) {
    return {rotary(q, positions, n_heads), rotary(k, positions, n_heads)};
}

template <typename T>
BasicTensor<T> attention(const BasicTensor<T>& q, const BasicTensor<T>& k, const BasicTensor<T>& v,
                         std::size_t batch, std::size_t seq, std::size_t n_heads,
                         const std::pair<BasicTensor<T>, BasicTensor<T>>* prefix,
                         std::span<const ProjectedPrompt<T>> gated) {
    BasicTensor<T> ctx =
        causal_attention(q, k, v, batch, seq, n_heads, prefix ? &prefix->first : nullptr,
                         prefix ? &prefix->second : nullptr);
    for (const auto& g : gated) {
        ctx = add(ctx, gated_prompt_attention(q, g.keys, g.values, g.gate, n_heads));
    }
    return ctx;
}

namespace {

template <typename T>
BasicTensor<T> project(const LayerWeights<T>& layer, std::size_t index, Projection p,
                       const BasicTensor<T>& x, const AdapterHooks<T>* hooks,
                       const ForwardMode& mode) {
    BasicTensor<T> y = matmul(x, layer.projection(p));
    if (hooks != nullptr) {
        if (auto delta = hooks->projection_delta(index, p, x, mode)) {
            y = add(y, *delta);
        }
    }
    return y;
}

void check_tokens(const ModelConfig& config, const TokenBatch& tokens, std::size_t virtual_tokens) {
    if (tokens.batch == 0 || tokens.seq == 0 || tokens.ids.size() != tokens.batch * tokens.seq) {
        throw UsageError("forward: malformed token batch");
    }
    for (int id : tokens.ids) {
        if (id < 0 || static_cast<std::size_t>(id) >= config.vocab_size) {
            throw UsageError("forward: token id " + std::to_string(id) +
                             " outside vocabulary of " + std::to_string(config.vocab_size));
        }
    }
    if (tokens.seq + virtual_tokens > config.max_seq_len) {
        throw UsageError("forward: sequence of " + std::to_string(tokens.seq) + " tokens (+" +
                         std::to_string(virtual_tokens) + " virtual) exceeds max_seq_len " +
                         std::to_string(config.max_seq_len));
    }
}

}  // namespace

template <typename T>
HiddenStates<T> forward_hidden(const BaseModel<T>& model, const TokenBatch& tokens,
                               const AdapterHooks<T>* hooks, const ForwardMode& mode) {
    const auto& cfg = model.config;
    std::optional<BasicTensor<T>> prompt;
    if (hooks != nullptr) {
        prompt = hooks->virtual_tokens(mode);
    }
    const std::size_t n_virtual = prompt ? prompt->dim(0) : 0;
    check_tokens(cfg, tokens, n_virtual);
    const std::size_t batch = tokens.batch;
    const std::size_t total = tokens.seq + n_virtual;

    BasicTensor<T> x = embedding(model.embedding, std::span<const int>(tokens.ids));
    if (prompt) {
        // Rows of [prompt; token embeddings] rearranged to [v_0.., tokens_b] per sequence.
        const std::vector<BasicTensor<T>> parts{*prompt, x};
        const BasicTensor<T> stacked = concat_rows(std::span<const BasicTensor<T>>(parts));
        std::vector<std::size_t> order;
        order.reserve(batch * total);
        for (std::size_t b = 0; b < batch; ++b) {
            for (std::size_t i = 0; i < n_virtual; ++i) {
                order.push_back(i);
            }
            for (std::size_t t = 0; t < tokens.seq; ++t) {
                order.push_back(n_virtual + b * tokens.seq + t);
            }
        }
        x = gather_rows(stacked, std::span<const std::size_t>(order));
    }

    std::vector<int> positions(batch * total);
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t t = 0; t < total; ++t) {
            positions[b * total + t] = static_cast<int>(t);
        }
    }

    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
        const auto& layer = model.layers[l];
        const BasicTensor<T> h = rmsnorm(x, layer.attn_norm, cfg.rms_eps);
        const BasicTensor<T> q = project(layer, l, Projection::q, h, hooks, mode);
        const BasicTensor<T> k = project(layer, l, Projection::k, h, hooks, mode);
        const BasicTensor<T> v = project(layer, l, Projection::v, h, hooks, mode);
        auto [qr, kr] = rotary_apply(q, k, std::span<const int>(positions), cfg.n_heads);

        std::optional<std::pair<BasicTensor<T>, BasicTensor<T>>> prefix;
        std::vector<ProjectedPrompt<T>> gated;
        if (hooks != nullptr) {
            prefix = hooks->prefix_kv(l, mode);
            // Prompt keys/values go through the layer's base projections, unrotated.
            for (const auto& g : hooks->gated_prompts(l)) {
                gated.push_back({matmul(g.rows, layer.wk), matmul(g.rows, layer.wv), g.gate});
            }
        }
        const BasicTensor<T> ctx =
            attention(qr, kr, v, batch, total, cfg.n_heads, prefix ? &*prefix : nullptr,
                      std::span<const ProjectedPrompt<T>>(gated));
        x = add(x, project(layer, l, Projection::o, ctx, hooks, mode));

        const BasicTensor<T> h2 = rmsnorm(x, layer.ffn_norm, cfg.rms_eps);
        const BasicTensor<T> gate = silu(matmul(h2, layer.w_gate));
        const BasicTensor<T> up = matmul(h2, layer.w_up);
        x = add(x, matmul(mul(gate, up), layer.w_down));
    }
    return {rmsnorm(x, model.final_norm, cfg.rms_eps), batch, total, n_virtual};
}

template <typename T>
LmOutput<T> forward_lm(const BaseModel<T>& model, const TokenBatch& tokens,
                       const AdapterHooks<T>* hooks, const ForwardMode& mode) {
    auto states = forward_hidden(model, tokens, hooks, mode);
    BasicTensor<T> logits = matmul(states.hidden, model.lm_head);
    return {reshape(logits, {states.batch, states.seq_total, model.config.vocab_size}),
            states.virtual_tokens};
}

template <typename T>
BasicTensor<T> forward_classify(const BaseModel<T>& model, const ClassifierHead<T>& head,
                                const TokenBatch& tokens, const AdapterHooks<T>* hooks,
                                const ForwardMode& mode) {
    if (head.weight.dim(0) != model.config.d_model) {
        throw UsageError("forward_classify: head width differs from d_model");
    }
    for (std::size_t b = 0; b < tokens.batch; ++b) {
        if (tokens.length(b) == 0) {
            throw UsageError("forward_classify: zero-length sequence in batch");
        }
    }
    auto states = forward_hidden(model, tokens, hooks, mode);
    std::vector<std::size_t> rows(tokens.batch);
    for (std::size_t b = 0; b < tokens.batch; ++b) {
        rows[b] = b * states.seq_total + states.virtual_tokens + tokens.length(b) - 1;
    }
    const BasicTensor<T> pooled = gather_rows(states.hidden, std::span<const std::size_t>(rows));
    return add_rowvec(matmul(pooled, head.weight), head.bias);
}

#define PEFT_FORGE_INSTANTIATE(T)                                                                  \
    template struct LayerWeights<T>;                                                               \
    template struct BaseModel<T>;                                                                  \
    template struct ClassifierHead<T>;                                                             \
    template BasicTensor<T> rmsnorm(const BasicTensor<T>&, const BasicTensor<T>&, double);         \
    template std::pair<BasicTensor<T>, BasicTensor<T>> rotary_apply(                               \
        const BasicTensor<T>&, const BasicTensor<T>&, std::span<const int>, std::size_t);          \
    template BasicTensor<T> attention(const BasicTensor<T>&, const BasicTensor<T>&,                \
                                      const BasicTensor<T>&, std::size_t, std::size_t, std::size_t, \
                                      const std::pair<BasicTensor<T>, BasicTensor<T>>*,            \
                                      std::span<const ProjectedPrompt<T>>);                             \
    template HiddenStates<T> forward_hidden(const BaseModel<T>&, const TokenBatch&,                \
                                            const AdapterHooks<T>*, const ForwardMode&);           \
    template LmOutput<T> forward_lm(const BaseModel<T>&, const TokenBatch&,                        \
                                    const AdapterHooks<T>*, const ForwardMode&);                   \
    template BasicTensor<T> forward_classify(const BaseModel<T>&, const ClassifierHead<T>&,        \
                                             const TokenBatch&, const AdapterHooks<T>*,            \
                                             const ForwardMode&);

PEFT_FORGE_INSTANTIATE(float)
PEFT_FORGE_INSTANTIATE(double)

#undef PEFT_FORGE_INSTANTIATE

}  // namespace peft_forge
