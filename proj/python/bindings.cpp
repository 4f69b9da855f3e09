// pybind11 module peft_forge._core. Configurations cross the boundary as
// plain dicts in the same JSON form the checkpoint headers use.

#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "peft_forge/error.hpp"
#include "peft_forge/hpo.hpp"
#include "peft_forge/metrics.hpp"
#include "peft_forge/serialize.hpp"
#include "peft_forge/store.hpp"

namespace py = pybind11;
using namespace peft_forge;

namespace {

using Model = BaseModel<float>;
using Stack = AdapterStack<float>;

// Holder so pybind11 sees a class rather than a std::variant.
struct Adapter {
    AnyAdapter<float> value;
};

Json to_cpp(const py::handle& obj) {
    return Json::parse(py::module_::import("json").attr("dumps")(obj).cast<std::string>());
}

py::object to_py(const Json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

ModelConfig model_config(const py::object& obj) {
    if (obj.is_none()) return ModelConfig{};
    Json defaults = to_json(ModelConfig{});
    defaults.update(to_cpp(obj));
    return model_config_from_json(defaults);
}

TrainConfig train_config(const py::object& obj, Stage stage) {
    TrainConfig base = stage == Stage::finetune ? TrainConfig::finetune_defaults() : TrainConfig::pretrain_defaults();
    if (obj.is_none()) return base;
    Json j = to_cpp(obj);
    j["stage"] = std::string(stage_name(stage));
    return train_config_from_json(j, base);
}

py::object history(const RunHistory& h) {
    py::list epochs;
    std::istringstream lines(h.epochs_jsonl());
    for (std::string line; std::getline(lines, line);) epochs.append(to_py(Json::parse(line)));
    py::dict out = to_py(Json::parse(h.summary_json()));
    out["epochs"] = epochs;
    return std::move(out);
}

std::vector<std::vector<int>> sequences(const std::vector<std::vector<int>>& seqs, const ModelConfig& mc) {
    for (const auto& s : seqs) {
        for (int id : s) {
            if (id < 0 || static_cast<std::size_t>(id) >= mc.vocab_size) throw UsageError("token id out of range");
        }
    }
    return seqs;
}

py::array_t<float> logits_array(const BasicTensor<float>& t) {
    std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
    py::array_t<float> out(shape);
    std::copy(t.data().begin(), t.data().end(), out.mutable_data());
    return out;
}

double corpus_perplexity(const Model& m, const AdapterHooks<float>* hooks, const Corpus& corpus,
                         std::size_t virtual_tokens, std::size_t batch_size) {
    const auto windows =
        chunk_documents(corpus.documents_in(Split::test), m.config.max_seq_len - virtual_tokens);
    const auto [nll, n] = lm_nll(m, hooks, windows, batch_size);
    return perplexity(nll, n);
}

std::size_t virtual_count(const Stack& s) {
    NoGradGuard guard;
    const auto vt = s.virtual_tokens(ForwardMode{});
    return vt ? vt->dim(0) : 0;
}

std::vector<double> flat_scores(const py::array_t<double, py::array::c_style | py::array::forcecast>& a,
                                std::size_t& k) {
    if (a.ndim() != 2) throw UsageError("scores must be a 2-D array [n, k]");
    k = static_cast<std::size_t>(a.shape(1));
    return {a.data(), a.data() + a.size()};
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Parameter-efficient fine-tuning of small decoder-only models";

    py::register_exception<UsageError>(m, "UsageError", PyExc_ValueError);
    py::register_exception<DataError>(m, "DataError", PyExc_RuntimeError);
    py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

    // ------------------------------------------------------------ metrics
    m.def("perplexity", &perplexity, py::arg("total_nll"), py::arg("token_count"));
    m.def("macro_average", [](const std::vector<double>& s) { return macro_average(s); }, py::arg("scores"),
          "Mean rounded half away from zero to two decimals.");
    m.def("format_percent", &format_percent, py::arg("fraction"), py::arg("decimals") = 2);
    m.def(
        "auroc_binary",
        [](const std::vector<double>& s, const std::vector<int>& y) {
            if (s.size() != y.size()) throw UsageError("scores and labels differ in length");
            return auroc_binary(s, y);
        },
        py::arg("scores"), py::arg("labels"), "None when only one class is present.");
    m.def(
        "auroc_multiclass",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& scores, const std::vector<int>& y) {
            std::size_t k = 0;
            const auto s = flat_scores(scores, k);
            return auroc_multiclass(s, k, y).value;
        },
        py::arg("scores"), py::arg("labels"));
    m.def(
        "auroc_multilabel",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& scores,
           const py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>& y) {
            std::size_t k = 0;
            const auto s = flat_scores(scores, k);
            if (static_cast<std::size_t>(y.size()) != s.size()) throw UsageError("labels must match scores");
            return auroc_multilabel(s, k, std::span<const std::uint8_t>(y.data(), y.size())).value;
        },
        py::arg("scores"), py::arg("labels"));

    // ------------------------------------------------------------ configs
    m.def("model_config", [](const py::object& o) { return to_py(to_json(model_config(o))); },
          py::arg("overrides") = py::none(), "The toy model configuration with overrides applied.");
    m.def("llama_7b_config", [] { return to_py(to_json(ModelConfig::llama_7b())); });
    m.def(
        "adapter_config",
        [](const std::string& technique, const py::object& overrides, const py::object& model) {
            const Json j = overrides.is_none() ? Json::object() : to_cpp(overrides);
            const auto cfg = adapter_config_from_json(parse_technique(technique), j);
            std::visit([&](const auto& c) { c.validate(model_config(model)); }, cfg);
            return to_py(to_json(cfg));
        },
        py::arg("technique"), py::arg("overrides") = py::none(), py::arg("model") = py::none(),
        "Defaults with overrides applied, validated against `model` (the toy model by default).");
    m.def(
        "count_trainable",
        [](const py::object& adapter, const py::object& model) {
            const auto c = count_trainable(adapter_config_from_json(to_cpp(adapter)), model_config(model));
            return py::make_tuple(c.count, c.fraction);
        },
        py::arg("adapter"), py::arg("model") = py::none(), "(count, fraction of the base) in closed form.");

    // ------------------------------------------------------------ data
    py::class_<Vocab>(m, "Vocab")
        .def(py::init<std::vector<std::string>>(), py::arg("tokens"))
        .def_static("synthetic", &synthetic_vocab)
        .def_static("build", [](const std::vector<std::string>& docs, std::size_t max_size) {
            return Vocab::build(docs, max_size);
        }, py::arg("documents"), py::arg("max_size"))
        .def_static("load", [](const std::filesystem::path& p) { return load_vocab(p); })
        .def("save", [](const Vocab& v, const std::filesystem::path& p) { write_vocab(p, v); })
        .def("encode", &Vocab::encode)
        .def("decode", [](const Vocab& v, const std::vector<int>& ids) { return v.decode(ids); })
        .def_property_readonly("tokens", &Vocab::tokens)
        .def("__len__", &Vocab::size)
        .def("__eq__", &Vocab::operator==);

    py::class_<Corpus>(m, "Corpus")
        .def_static("load", [](const std::filesystem::path& p, const Vocab& v, std::uint64_t seed) {
            return load_corpus(p, v, seed);
        }, py::arg("path"), py::arg("vocab"), py::arg("split_seed") = 0)
        .def_static("from_documents", [](std::vector<std::vector<int>> docs, std::uint64_t seed, double frac) {
            return make_corpus(std::move(docs), seed, frac);
        }, py::arg("documents"), py::arg("split_seed") = 0, py::arg("test_fraction") = 0.1)
        .def("save", [](const Corpus& c, const std::filesystem::path& p, const Vocab& v) { write_corpus(p, c, v); })
        .def("documents", [](const Corpus& c, const std::string& split) { return c.documents_in(parse_split(split)); },
             py::arg("split") = "train")
        .def("token_count", [](const Corpus& c, const std::string& split) { return c.token_count(parse_split(split)); },
             py::arg("split") = "train")
        .def("__len__", &Corpus::size);

    m.def("generate_corpora", &gen_domain_corpora, py::arg("seed"), py::arg("general_docs") = 1000,
          py::arg("domain_docs") = 1000, "(general, domain) synthetic corpora.");

    py::class_<Dataset>(m, "Dataset")
        .def_static("load", [](const std::filesystem::path& p, const std::string& task, const Vocab& v,
                               std::uint64_t seed) { return load_dataset(p, standard_task(task), v, seed); },
                    py::arg("path"), py::arg("task"), py::arg("vocab"), py::arg("split_seed") = 0)
        .def("save", [](const Dataset& d, const std::filesystem::path& p, const Vocab& v) { write_dataset(p, d, v); })
        .def_property_readonly("task", [](const Dataset& d) { return d.task.name; })
        .def("count", [](const Dataset& d, const std::string& split) { return d.count(parse_split(split)); })
        .def("__len__", [](const Dataset& d) { return d.examples.size(); });

    m.def("generate_datasets", &gen_classification_datasets, py::arg("seed"), py::arg("scale") = 1.0,
          "The five standard tasks pmv, mor, los, diag, proc.");

    // ------------------------------------------------------------ models
    py::class_<Model>(m, "Model")
        .def_static("init", [](const py::object& cfg, std::uint64_t seed) { return Model::init(model_config(cfg), seed); },
                    py::arg("config") = py::none(), py::arg("seed") = 0)
        .def_static("load", [](const std::filesystem::path& p) {
            auto loaded = load_base<float>(p);
            return py::make_tuple(std::move(loaded.model), std::move(loaded.vocab));
        }, py::arg("path"), "(model, vocab or None) from a base checkpoint.")
        .def("save", [](const Model& mdl, const std::filesystem::path& p, const std::optional<Vocab>& v) {
            save_base(mdl, p, v ? &*v : nullptr);
        }, py::arg("path"), py::arg("vocab") = py::none())
        .def_property_readonly("config", [](const Model& mdl) { return to_py(to_json(mdl.config)); })
        .def("parameter_count", &Model::parameter_count)
        .def("clone", &Model::clone)
        .def("logits", [](const Model& mdl, const std::vector<std::vector<int>>& seqs, const Adapter* adapter) {
            const auto tb = TokenBatch::from_sequences(sequences(seqs, mdl.config));
            NoGradGuard guard;
            if (adapter) return logits_array(Stack::for_pretraining(mdl, adapter->value).forward_lm(tb).logits);
            return logits_array(forward_lm(mdl, tb).logits);
        }, py::arg("sequences"), py::arg("adapter") = nullptr,
           "Next-token logits [batch, virtual + seq, vocab], right-padded.")
        .def("perplexity", [](const Model& mdl, const Corpus& c, const Adapter* adapter, std::size_t batch) {
            if (!adapter) return corpus_perplexity(mdl, nullptr, c, 0, batch);
            const auto s = Stack::for_pretraining(mdl, adapter->value);
            return corpus_perplexity(mdl, &s, c, virtual_count(s), batch);
        }, py::arg("corpus"), py::arg("adapter") = nullptr, py::arg("batch_size") = 10,
           "Test-split perplexity.")
        .def("pretrain", [](Model& mdl, const Corpus& c, const py::object& train) {
            return history(pretrain_base(mdl, c, train_config(train, Stage::pretrain)));
        }, py::arg("corpus"), py::arg("train") = py::none(), "Full-parameter training, in place.");

    py::class_<Adapter>(m, "Adapter")
        .def_static("create", [](const py::object& cfg, const Model& base, std::uint64_t seed,
                                 const std::vector<int>& prompt_ids) {
            return Adapter{make_adapter<float>(adapter_config_from_json(to_cpp(cfg)), base, prompt_ids, seed)};
        }, py::arg("config"), py::arg("base"), py::arg("seed") = 0, py::arg("prompt_ids") = std::vector<int>{})
        .def_static("load", [](const std::filesystem::path& p, const Model& base) {
            return Adapter{load_adapter<float>(p, base)};
        }, py::arg("path"), py::arg("base"), "Loaded adapters are frozen until pretrained again.")
        .def("save", [](const Adapter& a, const std::filesystem::path& p) { save_adapter(a.value, p); })
        .def_property_readonly("technique", [](const Adapter& a) { return std::string(technique_name(technique_of(a.value))); })
        .def_property_readonly("config", [](const Adapter& a) { return to_py(to_json(config_of(a.value))); })
        .def("parameter_count", [](const Adapter& a) { return parameter_count(a.value); })
        .def("trainable_fraction", [](const Adapter& a) { return count_trainable(a.value).fraction; })
        .def("pretrain", [](Adapter& a, const Model& base, const Corpus& c, const py::object& train) {
            set_trainable(a.value, true);
            auto stack = Stack::for_pretraining(base, a.value);
            const auto h = pretrain_lm(stack, c, train_config(train, Stage::pretrain));
            a.value = stack.domain->adapter;
            return history(h);
        }, py::arg("base"), py::arg("corpus"), py::arg("train") = py::none(),
           "Domain-adaptive pretraining over a frozen base, in place.");

    m.def("merge_lora", [](const Model& base, const Adapter& a) { return merge_lora(base, a.value); },
          py::arg("base"), py::arg("adapter"));

    py::class_<Stack>(m, "Stack")
        .def_static("load", &load_stack<float>, py::arg("path"), py::arg("base"))
        .def("save", [](const Stack& s, const std::filesystem::path& p) { save_stack(s, p); })
        .def_property_readonly("variant", [](const Stack& s) -> std::optional<std::string> {
            if (!s.variant) return std::nullopt;
            return std::string(variant_name(*s.variant));
        })
        .def("count_trainable", [](const Stack& s) {
            const auto c = s.count_trainable();
            return py::make_tuple(c.count, c.fraction);
        })
        .def("evaluate", [](const Stack& s, const Dataset& d, const std::string& split, std::size_t batch) {
            return evaluate_auroc(s, d.in(parse_split(split)), batch, s.base.config.max_seq_len);
        }, py::arg("dataset"), py::arg("split") = "test", py::arg("batch_size") = 10);

    m.def(
        "finetune",
        [](const Model& base, const std::string& variant, const Dataset& dataset, const py::object& train,
           const Adapter* domain, const py::object& downstream, std::uint64_t seed) {
            const Variant v = parse_variant(variant);
            std::optional<AnyAdapter<float>> dom, down;
            if (domain) dom = domain->value;
            if (variant_spec(v).uses_downstream) {
                const Json j = downstream.is_none() ? Json::object() : to_cpp(downstream);
                down = make_adapter<float>(adapter_config_from_json(Technique::lora, j), base, {}, derive_seed(seed, 2));
            }
            auto stack = compose(base, v, dom, down, dataset.task, derive_seed(seed, 3));
            TrainConfig cfg = train_config(train, Stage::finetune);
            const auto h = finetune_classify(stack, dataset, cfg);
            return py::make_tuple(std::move(stack), history(h));
        },
        py::arg("base"), py::arg("variant"), py::arg("dataset"), py::arg("train") = py::none(),
        py::arg("domain") = nullptr, py::arg("downstream") = py::none(), py::arg("seed") = 0,
        "Composes a variant stack, trains it and returns (stack, history).");

    // ------------------------------------------------------------ store
    m.def("inspect_checkpoint", [](const std::filesystem::path& p) {
        const auto info = inspect_checkpoint(p);
        py::dict out;
        out["kind"] = std::string(checkpoint_kind_name(info.kind));
        out["version"] = info.version;
        out["header"] = to_py(info.header);
        out["header_bytes"] = info.header_bytes;
        out["payload_bytes"] = info.payload_bytes;
        out["file_bytes"] = info.file_bytes;
        out["parameter_count"] = info.parameter_count;
        return out;
    }, py::arg("path"));

    // ------------------------------------------------------------ hpo
    m.def(
        "search",
        [](const std::string& stage, const std::string& technique, const std::function<double(py::object)>& objective,
           const std::string& direction, std::size_t max_trials, std::uint64_t seed) {
            const Technique t = parse_technique(technique);
            const SearchSpace space = search_space(parse_stage(stage), t);
            SearchOptions opt;
            opt.seed = seed;
            opt.max_trials = max_trials;
            if (direction == "minimize") opt.direction = Direction::minimize;
            else if (direction != "maximize") throw UsageError("direction must be minimize or maximize");
            const auto result = search(space, [&](const Point& p) {
                return objective(to_py(to_json(config_from_point(t, space, p))));
            }, opt);
            py::list trials;
            std::istringstream lines(result.to_jsonl(space));
            for (std::string line; std::getline(lines, line);) trials.append(to_py(Json::parse(line)));
            return trials;
        },
        py::arg("stage"), py::arg("technique"), py::arg("objective"), py::arg("direction") = "maximize",
        py::arg("max_trials") = 20, py::arg("seed") = 0,
        "Bayesian search; the objective receives an adapter config dict. Returns the trial records, "
        "the last being the best.");
}
