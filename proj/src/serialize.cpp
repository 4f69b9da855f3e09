#include "peft_forge/serialize.hpp"

#include <cstdio>
#include <set>

#include "peft_forge/error.hpp"

namespace peft_forge {

namespace {

/// Strict field reader over one JSON object.
class Reader {
public:
    Reader(const Json& j, std::string where) : j_(j), where_(std::move(where)) {
        if (!j_.is_object()) throw DataError(where_ + ": expected a JSON object");
    }

    void count(const char* key, std::size_t& out) {
        if (const Json* v = find(key)) {
            if (!v->is_number_integer() || v->get<long long>() < 0) fail(key, "a non-negative integer");
            out = v->get<std::size_t>();
        }
    }
    void u64(const char* key, std::uint64_t& out) {
        if (const Json* v = find(key)) {
            if (!v->is_number_integer() || v->get<long long>() < 0) fail(key, "a non-negative integer");
            out = v->get<std::uint64_t>();
        }
    }
    void number(const char* key, double& out) {
        if (const Json* v = find(key)) {
            if (!v->is_number()) fail(key, "a number");
            out = v->get<double>();
        }
    }
    void boolean(const char* key, bool& out) {
        if (const Json* v = find(key)) {
            if (!v->is_boolean()) fail(key, "true or false");
            out = v->get<bool>();
        }
    }
    void string(const char* key, std::string& out) {
        if (const Json* v = find(key)) {
            if (!v->is_string()) fail(key, "a string");
            out = v->get<std::string>();
        }
    }
    void strings(const char* key, std::vector<std::string>& out) {
        if (const Json* v = find(key)) {
            if (!v->is_array()) fail(key, "a list of strings");
            out.clear();
            for (const auto& s : *v) {
                if (!s.is_string()) fail(key, "a list of strings");
                out.push_back(s.get<std::string>());
            }
        }
    }
    void skip(const char* key) { used_.insert(key); }

    void finish() const {
        for (const auto& [k, v] : j_.items()) {
            if (!used_.count(k)) throw DataError(where_ + ": unknown key '" + k + "'");
        }
    }

    [[noreturn]] void fail(const std::string& key, const std::string& what) const {
        throw DataError(where_ + ": '" + key + "' must be " + what);
    }

    template <typename E, typename Parse>
    void choice(const char* key, E& out, Parse parse) {
        std::string s;
        string(key, s);
        if (s.empty()) return;
        try {
            out = parse(s);
        } catch (const Error& e) {
            throw DataError(where_ + ": " + e.what());
        }
    }

private:
    const Json* find(const char* key) {
        used_.insert(key);
        const auto it = j_.find(key);
        return it == j_.end() ? nullptr : &*it;
    }

    const Json& j_;
    std::string where_;
    std::set<std::string> used_;
};

TaskKind parse_task_kind(std::string_view s) {
    if (s == "binary") return TaskKind::binary;
    if (s == "multiclass") return TaskKind::multiclass;
    if (s == "multilabel") return TaskKind::multilabel;
    throw DataError("unknown task kind '" + std::string(s) + "'");
}

}  // namespace

Json to_json(const ModelConfig& c) {
    return Json{{"vocab_size", c.vocab_size}, {"d_model", c.d_model},     {"n_layers", c.n_layers},
                {"n_heads", c.n_heads},       {"d_ff", c.d_ff},           {"max_seq_len", c.max_seq_len},
                {"rms_eps", c.rms_eps}};
}

ModelConfig model_config_from_json(const Json& j) {
    ModelConfig c;
    Reader r(j, "model config");
    r.count("vocab_size", c.vocab_size);
    r.count("d_model", c.d_model);
    r.count("n_layers", c.n_layers);
    r.count("n_heads", c.n_heads);
    r.count("d_ff", c.d_ff);
    r.count("max_seq_len", c.max_seq_len);
    r.number("rms_eps", c.rms_eps);
    r.finish();
    try {
        c.validate();
    } catch (const UsageError& e) {
        throw DataError(e.what());
    }
    return c;
}

Json to_json(const TaskSpec& t) {
    return Json{{"name", t.name}, {"kind", std::string(task_kind_name(t.kind))}, {"num_classes", t.num_classes}};
}

TaskSpec task_from_json(const Json& j) {
    TaskSpec t;
    Reader r(j, "task");
    r.string("name", t.name);
    r.choice("kind", t.kind, parse_task_kind);
    r.count("num_classes", t.num_classes);
    r.finish();
    if (t.name.empty()) throw DataError("task: missing name");
    if (t.num_classes < 2) throw DataError("task: num_classes must be at least 2");
    if (t.kind == TaskKind::binary && t.num_classes != 2) throw DataError("task: binary tasks have 2 classes");
    return t;
}

Json to_json(const AnyAdapterConfig& config) {
    Json j{{"technique", std::string(technique_name(technique_of(config)))}};
    std::visit(
        [&](const auto& c) {
            using C = std::decay_t<decltype(c)>;
            if constexpr (std::is_same_v<C, LoraConfig>) {
                j["r"] = c.r;
                j["alpha"] = c.alpha;
                j["dropout"] = c.dropout;
                Json targets = Json::array();
                for (Projection p : c.targets) targets.push_back(std::string(projection_name(p)));
                j["targets"] = targets;
            } else if constexpr (std::is_same_v<C, PrefixConfig>) {
                j["num_virtual_tokens"] = c.num_virtual_tokens;
                j["prefix_projection"] = c.prefix_projection;
                j["projection_hidden"] = c.projection_hidden;
            } else if constexpr (std::is_same_v<C, PromptConfig>) {
                j["num_virtual_tokens"] = c.num_virtual_tokens;
                j["prompt_init"] = c.init == PromptInit::text ? "text" : "random";
                j["init_text"] = c.init_text;
            } else if constexpr (std::is_same_v<C, PTuningConfig>) {
                j["num_virtual_tokens"] = c.num_virtual_tokens;
                j["reparameterisation"] = c.reparameterisation == Reparameterisation::mlp ? "mlp" : "lstm";
                j["hidden"] = c.hidden;
                j["num_layers"] = c.num_layers;
                j["dropout"] = c.dropout;
            } else {
                j["adapter_length"] = c.adapter_length;
                j["adapter_layers"] = c.adapter_layers;
            }
        },
        config);
    return j;
}

AnyAdapterConfig adapter_config_from_json(Technique technique, const Json& j) {
    Reader r(j, std::string(technique_name(technique)) + " config");
    r.skip("technique");
    AnyAdapterConfig out;
    switch (technique) {
        case Technique::lora: {
            LoraConfig c;
            r.count("r", c.r);
            r.number("alpha", c.alpha);
            r.number("dropout", c.dropout);
            std::vector<std::string> names;
            r.strings("targets", names);
            if (!names.empty()) {
                c.targets.clear();
                for (const auto& n : names) {
                    try {
                        c.targets.push_back(parse_projection(n));
                    } catch (const UsageError& e) {
                        throw DataError(e.what());
                    }
                }
            }
            out = c;
            break;
        }
        case Technique::prefix: {
            PrefixConfig c;
            r.count("num_virtual_tokens", c.num_virtual_tokens);
            r.boolean("prefix_projection", c.prefix_projection);
            r.count("projection_hidden", c.projection_hidden);
            out = c;
            break;
        }
        case Technique::prompt: {
            PromptConfig c;
            r.count("num_virtual_tokens", c.num_virtual_tokens);
            r.choice("prompt_init", c.init, [](std::string_view s) {
                if (s == "text") return PromptInit::text;
                if (s == "random") return PromptInit::random;
                throw DataError("prompt_init must be text or random");
            });
            r.string("init_text", c.init_text);
            out = c;
            break;
        }
        case Technique::ptuning: {
            PTuningConfig c;
            r.count("num_virtual_tokens", c.num_virtual_tokens);
            r.choice("reparameterisation", c.reparameterisation, [](std::string_view s) {
                if (s == "mlp" || s == "MLP") return Reparameterisation::mlp;
                if (s == "lstm" || s == "LSTM") return Reparameterisation::lstm;
                throw DataError("reparameterisation must be mlp or lstm");
            });
            r.count("hidden", c.hidden);
            r.count("num_layers", c.num_layers);
            r.number("dropout", c.dropout);
            out = c;
            break;
        }
        case Technique::adaption_prompt: {
            AdaptionPromptConfig c;
            r.count("adapter_length", c.adapter_length);
            r.count("adapter_layers", c.adapter_layers);
            out = c;
            break;
        }
    }
    r.finish();
    return out;
}

AnyAdapterConfig adapter_config_from_json(const Json& j) {
    if (!j.is_object() || !j.contains("technique") || !j["technique"].is_string()) {
        throw DataError("adapter config: missing \"technique\"");
    }
    Technique t;
    try {
        t = parse_technique(j["technique"].get<std::string>());
    } catch (const UsageError& e) {
        throw DataError(e.what());
    }
    return adapter_config_from_json(t, j);
}

Json to_json(const TrainConfig& c) {
    return Json{{"stage", std::string(stage_name(c.stage))},
                {"learning_rate", c.learning_rate},
                {"warmup_ratio", c.warmup_ratio},
                {"max_seq_len", c.max_seq_len},
                {"grad_accum_steps", c.grad_accum_steps},
                {"batch_size", c.batch_size},
                {"epochs", c.epochs},
                {"seed", c.seed},
                {"max_steps", c.max_steps},
                {"clip_norm", c.clip_norm},
                {"weight_decay", c.weight_decay}};
}

TrainConfig train_config_from_json(const Json& j, TrainConfig c) {
    Reader r(j, "train config");
    r.choice("stage", c.stage, [](std::string_view s) { return parse_stage(s); });
    r.number("learning_rate", c.learning_rate);
    r.number("warmup_ratio", c.warmup_ratio);
    r.count("max_seq_len", c.max_seq_len);
    r.count("grad_accum_steps", c.grad_accum_steps);
    r.count("batch_size", c.batch_size);
    r.count("epochs", c.epochs);
    r.u64("seed", c.seed);
    r.count("max_steps", c.max_steps);
    r.number("clip_norm", c.clip_norm);
    r.number("weight_decay", c.weight_decay);
    r.finish();
    return c;
}

std::uint64_t config_fingerprint(const ModelConfig& c) {
    // nlohmann::json (not ordered) sorts object keys.
    const nlohmann::json canonical = nlohmann::json::parse(to_json(c).dump());
    const std::string text = canonical.dump();
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : text) h = (h ^ ch) * 0x100000001b3ULL;
    return h;
}

std::string fingerprint_hex(std::uint64_t fp) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fp));
    return buf;
}

}  // namespace peft_forge
