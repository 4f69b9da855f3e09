#include <fstream>
#include <set>

#include "cli.hpp"
#include "peft_forge/error.hpp"

namespace peft_forge::cli {

namespace {

const std::set<std::string> kTopKeys{"seed",  "peft",       "variant", "task",  "budget", "stage",  "eval_only",
                                     "model", "train",      "adapter", "downstream", "gen", "inputs"};

Json read_config_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw DataError("config: cannot open " + path);
    Json j;
    try {
        j = Json::parse(f);
    } catch (const Json::exception& e) {
        throw DataError("config " + path + ": " + e.what());
    }
    // A run manifest replays through its resolved config.
    if (j.is_object() && j.contains("command") && j.contains("config")) j = j["config"];
    if (!j.is_object()) throw DataError("config " + path + ": expected a JSON object");
    for (const auto& [k, v] : j.items()) {
        if (!kTopKeys.count(k)) throw DataError("config " + path + ": unknown key '" + k + "'");
    }
    return j;
}

template <typename T>
void take(const Json& j, const char* key, T& out) {
    const auto it = j.find(key);
    if (it == j.end()) return;
    try {
        if constexpr (std::is_same_v<T, std::string>) {
            if (!it->is_string()) throw DataError("");
        } else if constexpr (std::is_same_v<T, bool>) {
            if (!it->is_boolean()) throw DataError("");
        } else if constexpr (std::is_integral_v<T>) {
            if (!it->is_number_integer() || it->template get<long long>() < 0) throw DataError("");
        } else {
            if (!it->is_number()) throw DataError("");
        }
        out = it->template get<T>();
    } catch (const std::exception&) {
        throw DataError(std::string("config: '") + key + "' has the wrong type");
    }
}

void take_inputs(const Json& j, Inputs& in) {
    if (!j.is_object()) throw DataError("config: 'inputs' must be an object");
    const std::set<std::string> keys{"base", "corpus", "vocab", "data", "domain", "adapter", "stack"};
    for (const auto& [k, v] : j.items()) {
        if (!keys.count(k)) throw DataError("config: unknown input '" + k + "'");
    }
    take(j, "base", in.base);
    take(j, "corpus", in.corpus);
    take(j, "vocab", in.vocab);
    take(j, "data", in.data);
    take(j, "domain", in.domain);
    take(j, "adapter", in.adapter);
    take(j, "stack", in.stack);
}

void overlay(std::string& dst, const std::string& flag) {
    if (!flag.empty()) dst = flag;
}

}  // namespace

Json Settings::to_json() const {
    Json j{{"seed", seed}, {"peft", peft},     {"variant", variant},     {"task", task},
           {"budget", budget}, {"stage", stage}, {"eval_only", eval_only}};
    j["model"] = peft_forge::to_json(model);
    j["train"] = peft_forge::to_json(train);
    j["adapter"] = adapter ? peft_forge::to_json(*adapter) : Json(nullptr);
    j["downstream"] = peft_forge::to_json(AnyAdapterConfig{downstream});
    j["gen"] = Json{{"general_docs", gen.general_docs}, {"domain_docs", gen.domain_docs}, {"scale", gen.scale}};
    j["inputs"] = Json{{"base", inputs.base},     {"corpus", inputs.corpus}, {"vocab", inputs.vocab},
                       {"data", inputs.data},     {"domain", inputs.domain}, {"adapter", inputs.adapter},
                       {"stack", inputs.stack}};
    return j;
}

Settings resolve(const std::string& command, const Flags& flags) {
    Settings s;
    s.command = command;
    const Json file = flags.config ? read_config_file(*flags.config) : Json::object();

    take(file, "seed", s.seed);
    take(file, "peft", s.peft);
    take(file, "variant", s.variant);
    take(file, "task", s.task);
    take(file, "budget", s.budget);
    take(file, "stage", s.stage);
    take(file, "eval_only", s.eval_only);
    if (file.contains("inputs")) take_inputs(file["inputs"], s.inputs);
    if (file.contains("gen")) {
        const Json& g = file["gen"];
        if (!g.is_object()) throw DataError("config: 'gen' must be an object");
        for (const auto& [k, v] : g.items()) {
            if (k != "general_docs" && k != "domain_docs" && k != "scale") {
                throw DataError("config: unknown gen key '" + k + "'");
            }
        }
        take(g, "general_docs", s.gen.general_docs);
        take(g, "domain_docs", s.gen.domain_docs);
        take(g, "scale", s.gen.scale);
    }

    if (flags.seed) s.seed = *flags.seed;
    if (flags.peft) s.peft = *flags.peft;
    if (flags.variant) s.variant = *flags.variant;
    if (flags.task) s.task = *flags.task;
    if (flags.budget) s.budget = *flags.budget;
    if (flags.stage) s.stage = *flags.stage;
    if (flags.eval_only) s.eval_only = true;
    overlay(s.inputs.base, flags.inputs.base);
    overlay(s.inputs.corpus, flags.inputs.corpus);
    overlay(s.inputs.vocab, flags.inputs.vocab);
    overlay(s.inputs.data, flags.inputs.data);
    overlay(s.inputs.domain, flags.inputs.domain);
    overlay(s.inputs.adapter, flags.inputs.adapter);
    overlay(s.inputs.stack, flags.inputs.stack);
    s.out = flags.out;

    // Validate names early so bad values exit as usage errors.
    const Stage stage = command == "finetune" ? Stage::finetune
                        : command == "hpo"    ? parse_stage(s.stage)
                                              : Stage::pretrain;
    s.stage = std::string(stage_name(stage));
    (void)parse_variant(s.variant);
    if (s.budget == 0 || s.budget > 20) throw UsageError("--budget must be between 1 and 20");

    if (file.contains("model")) s.model = model_config_from_json(file["model"]);
    s.train = stage == Stage::finetune ? TrainConfig::finetune_defaults() : TrainConfig::pretrain_defaults();
    if (file.contains("train")) s.train = train_config_from_json(file["train"], s.train);
    s.train.stage = stage;
    s.train.seed = s.seed;
    s.train.validate();

    if (s.peft != "none") {
        const Technique t = parse_technique(s.peft);
        s.peft = std::string(technique_name(t));
        const Json section = file.contains("adapter") && !file["adapter"].is_null() ? file["adapter"] : Json::object();
        if (section.contains("technique") && section["technique"] != s.peft) {
            throw UsageError("config: adapter section is for " + section["technique"].dump() + " but peft is " +
                             s.peft);
        }
        s.adapter = adapter_config_from_json(t, section);
    }
    if (file.contains("downstream")) {
        s.downstream = std::get<LoraConfig>(adapter_config_from_json(Technique::lora, file["downstream"]));
    }
    if (s.gen.scale <= 0.0) throw UsageError("gen.scale must be positive");
    return s;
}

}  // namespace peft_forge::cli
