#include <chrono>
#include <ctime>
#include <fstream>
#include <iostream>

#include "cli.hpp"
#include "peft_forge/error.hpp"
#include "peft_forge/hpo.hpp"
#include "peft_forge/metrics.hpp"
#include "peft_forge/parallel.hpp"
#include "peft_forge/store.hpp"

namespace peft_forge::cli {

namespace fs = std::filesystem;

namespace {

// Corpus files carry no split; the held-out documents are chosen by a hash
// of their content under this fixed seed.
constexpr std::uint64_t kCorpusSplitSeed = 0;

std::string utc_now() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot write " + path.string());
    f << text;
    if (!f) throw DataError("write failed for " + path.string());
}

std::string require(const std::string& value, const char* flag, const std::string& command) {
    if (value.empty()) throw UsageError(command + " needs " + flag);
    return value;
}

LoadedBase<float> require_base(const Settings& s) {
    return load_base<float>(require(s.inputs.base, "--base", s.command));
}

/// --vocab, else the vocabulary stored with the base checkpoint.
Vocab resolve_vocab(const Settings& s, const std::optional<Vocab>& stored) {
    if (!s.inputs.vocab.empty()) return load_vocab(s.inputs.vocab);
    if (stored) return *stored;
    throw UsageError(s.command + " needs --vocab (the base checkpoint has none)");
}

void check_vocab_fits(const Vocab& vocab, const ModelConfig& mc) {
    if (vocab.size() > mc.vocab_size) {
        throw DataError("vocabulary has " + std::to_string(vocab.size()) + " entries but the model only " +
                        std::to_string(mc.vocab_size));
    }
}

std::vector<TaskSpec> resolve_tasks(const std::string& spec) {
    if (spec == "all") return standard_tasks();
    std::vector<TaskSpec> out;
    std::size_t start = 0;
    while (start <= spec.size()) {
        const std::size_t comma = spec.find(',', start);
        const std::string name = spec.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
        out.push_back(standard_task(name));
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    return out;
}

/// Stable per-task seed stream, independent of which tasks were requested.
std::uint64_t task_stream(const TaskSpec& task) {
    const auto& all = standard_tasks();
    for (std::size_t i = 0; i < all.size(); ++i) {
        if (all[i].name == task.name) return 100 + i;
    }
    return 199;
}

fs::path per_task(const std::string& location, const TaskSpec& task, const std::string& suffix,
                  std::size_t n_tasks, const char* flag) {
    if (fs::is_directory(location)) return fs::path(location) / (task.name + suffix);
    if (n_tasks > 1) throw UsageError(std::string(flag) + " must be a directory when several tasks run");
    return location;
}

Dataset load_task(const Settings& s, const TaskSpec& task, const Vocab& vocab, std::size_t n_tasks) {
    const auto path = per_task(require(s.inputs.data, "--data", s.command), task, ".jsonl", n_tasks, "--data");
    return load_dataset(path, task, vocab, s.seed);
}

std::vector<int> prompt_ids(const std::optional<AnyAdapterConfig>& cfg, const Vocab& vocab) {
    if (cfg) {
        if (const auto* p = std::get_if<PromptConfig>(&*cfg)) return vocab.encode(p->init_text);
    }
    return {};
}

Json history_metrics(const RunHistory& h) {
    Json j = Json::parse(h.summary_json());
    j.erase("type");
    return j;
}

void write_history(const fs::path& out, const std::string& stem, const RunHistory& h) {
    write_text(out / (stem + "history.jsonl"), h.epochs_jsonl());
    write_text(out / (stem + "steps.jsonl"), h.steps_jsonl());
}

Json report_json(const EvalReport& r) { return Json::parse(r.to_json()); }

// ---------------------------------------------------------------- commands

Json cmd_gen(const Settings& s, Json& outputs) {
    const Vocab vocab = synthetic_vocab();
    const auto [general, domain] = gen_domain_corpora(s.seed, s.gen.general_docs, s.gen.domain_docs);
    const auto datasets = gen_classification_datasets(s.seed, s.gen.scale);
    write_vocab(s.out / "vocab.txt", vocab);
    write_corpus(s.out / "general.txt", general, vocab);
    write_corpus(s.out / "domain.txt", domain, vocab);
    Json metrics{{"vocab_size", vocab.size()},
                 {"general_docs", general.size()},
                 {"domain_docs", domain.size()},
                 {"general_tokens", general.token_count(Split::train) + general.token_count(Split::test)},
                 {"domain_tokens", domain.token_count(Split::train) + domain.token_count(Split::test)}};
    outputs["files"] = Json{"vocab.txt", "general.txt", "domain.txt"};
    for (const auto& ds : datasets) {
        write_dataset(s.out / (ds.task.name + ".jsonl"), ds, vocab);
        outputs["files"].push_back(ds.task.name + ".jsonl");
        metrics["datasets"][ds.task.name] = Json{{"train", ds.count(Split::train)},
                                                 {"valid", ds.count(Split::valid)},
                                                 {"test", ds.count(Split::test)}};
    }
    return metrics;
}

Json cmd_pretrain(const Settings& s, Json& outputs) {
    std::optional<LoadedBase<float>> loaded;
    if (!s.inputs.base.empty()) loaded = load_base<float>(s.inputs.base);
    BaseModel<float> base = loaded ? loaded->model : BaseModel<float>::init(s.model, s.seed);
    Vocab vocab = !s.inputs.vocab.empty() || (loaded && loaded->vocab)
                      ? resolve_vocab(s, loaded ? loaded->vocab : std::nullopt)
                      : Vocab::build(read_lines(require(s.inputs.corpus, "--corpus", s.command)),
                                     base.config.vocab_size);
    check_vocab_fits(vocab, base.config);
    const Corpus corpus = load_corpus(require(s.inputs.corpus, "--corpus", s.command), vocab, kCorpusSplitSeed);

    Json metrics;
    RunHistory history;
    if (s.peft == "none") {
        history = pretrain_base(base, corpus, s.train);
        save_base(base, s.out / "base.peft", &vocab);
        outputs["checkpoint"] = (s.out / "base.peft").string();
        metrics["trainable_parameters"] = base.parameter_count();
    } else {
        auto adapter = make_adapter<float>(*s.adapter, base, prompt_ids(s.adapter, vocab), derive_seed(s.seed, 1));
        auto stack = AdapterStack<float>::for_pretraining(base, adapter);
        history = pretrain_lm(stack, corpus, s.train);
        save_adapter(stack.domain->adapter, s.out / "adapter.peft");
        outputs["checkpoint"] = (s.out / "adapter.peft").string();
        const auto count = count_trainable(stack.domain->adapter);
        metrics["trainable_parameters"] = count.count;
        metrics["trainable_percent"] = format_percent(count.fraction);
    }
    write_history(s.out, "", history);
    outputs["history"] = (s.out / "history.jsonl").string();
    metrics.update(history_metrics(history));
    Json epochs = Json::array();
    for (const auto& e : history.epochs) {
        epochs.push_back(Json{{"epoch", e.epoch}, {"train_ppl", e.train_metric}, {"test_ppl", e.eval_metric}});
    }
    metrics["epochs"] = epochs;
    return metrics;
}

/// Test AUROC of saved stacks, one per task.
Json evaluate_stacks(const Settings& s, const LoadedBase<float>& base, const Vocab& vocab) {
    const auto tasks = resolve_tasks(s.task);
    EvalReport report;
    Json raw;
    for (const auto& task : tasks) {
        const auto path =
            per_task(require(s.inputs.stack, "--stack", s.command), task, ".stack.peft", tasks.size(), "--stack");
        const auto stack = load_stack<float>(path, base.model);
        if (!stack.head || !(stack.head->task == task)) {
            throw UsageError(path.string() + " does not hold a " + task.name + " classifier");
        }
        const Dataset ds = load_task(s, task, vocab, tasks.size());
        const double auroc = evaluate_auroc(stack, ds.in(Split::test), s.train.batch_size, s.train.max_seq_len);
        report.add_task(task.name, auroc);
        raw[task.name] = auroc;
    }
    std::cout << report.to_json() << "\n";
    write_text(s.out / "report.json", report.to_json() + "\n");
    return Json{{"report", report_json(report)}, {"test_auroc", raw}};
}

Json cmd_finetune(const Settings& s, Json& outputs) {
    const auto base = require_base(s);
    const Vocab vocab = resolve_vocab(s, base.vocab);
    check_vocab_fits(vocab, base.model.config);
    if (s.eval_only) return evaluate_stacks(s, base, vocab);

    const Variant variant = parse_variant(s.variant);
    const auto spec = variant_spec(variant);
    std::optional<AnyAdapter<float>> domain, downstream;
    if (!s.inputs.domain.empty()) domain = load_adapter<float>(s.inputs.domain, base.model);
    if (spec.uses_downstream) {
        downstream = make_adapter<float>(AnyAdapterConfig{s.downstream}, base.model, {}, derive_seed(s.seed, 2));
    }

    const auto tasks = resolve_tasks(s.task);
    EvalReport report;
    Json raw, per_task_metrics;
    for (const auto& task : tasks) {
        const Dataset ds = load_task(s, task, vocab, tasks.size());
        auto stack = compose(base.model, variant, domain, downstream, task, derive_seed(s.seed, task_stream(task)));
        const auto history = finetune_classify(stack, ds, s.train);
        save_stack(stack, s.out / (task.name + ".stack.peft"));
        write_history(s.out, task.name + ".", history);
        outputs["stacks"][task.name] = (s.out / (task.name + ".stack.peft")).string();
        report.add_task(task.name, *history.test_metric);
        raw[task.name] = *history.test_metric;
        per_task_metrics[task.name] = history_metrics(history);
        per_task_metrics[task.name]["trainable_parameters"] = stack.count_trainable().count;
    }
    std::cout << report.to_json() << "\n";
    write_text(s.out / "report.json", report.to_json() + "\n");
    outputs["report"] = (s.out / "report.json").string();
    return Json{{"report", report_json(report)}, {"test_auroc", raw}, {"tasks", per_task_metrics}};
}

Json cmd_hpo(const Settings& s, Json& outputs) {
    const Stage stage = parse_stage(s.stage);
    if (s.peft == "none") throw UsageError("hpo needs a PEFT technique");
    const Technique technique = parse_technique(s.peft);
    const SearchSpace space = search_space(stage, technique);

    const auto base = require_base(s);
    const Vocab vocab = resolve_vocab(s, base.vocab);
    check_vocab_fits(vocab, base.model.config);

    Objective objective;
    SearchOptions options;
    options.seed = s.seed;
    options.max_trials = s.budget;
    std::optional<Corpus> corpus;
    std::optional<Dataset> dataset;
    std::optional<AnyAdapter<float>> domain;
    Variant variant = parse_variant(s.variant);
    if (stage == Stage::pretrain) {
        corpus = load_corpus(require(s.inputs.corpus, "--corpus", s.command), vocab, kCorpusSplitSeed);
        options.direction = Direction::minimize;
        objective = [&](const Point& p) {
            const auto cfg = config_from_point(technique, space, p);
            auto adapter = make_adapter<float>(cfg, base.model, prompt_ids(cfg, vocab), derive_seed(s.seed, 1));
            auto stack = AdapterStack<float>::for_pretraining(base.model, adapter);
            return pretrain_lm(stack, *corpus, s.train).best_eval;
        };
    } else {
        const auto tasks = resolve_tasks(s.task);
        if (tasks.size() != 1) throw UsageError("hpo --stage finetune needs a single --task");
        if (!variant_spec(variant).uses_downstream) {
            throw UsageError("hpo tunes the downstream LoRA; variant " + s.variant + " has none");
        }
        dataset = load_task(s, tasks.front(), vocab, 1);
        if (!s.inputs.domain.empty()) domain = load_adapter<float>(s.inputs.domain, base.model);
        options.direction = Direction::maximize;
        objective = [&](const Point& p) {
            const auto cfg = config_from_point(technique, space, p);
            auto downstream = make_adapter<float>(cfg, base.model, {}, derive_seed(s.seed, 2));
            auto stack = compose(base.model, variant, domain, std::optional(downstream), dataset->task,
                                 derive_seed(s.seed, task_stream(dataset->task)));
            return finetune_classify(stack, *dataset, s.train).best_eval;
        };
    }

    const auto result = search(space, objective, options);
    write_text(s.out / "trials.jsonl", result.to_jsonl(space));
    outputs["trials"] = (s.out / "trials.jsonl").string();
    Json metrics{{"trials", result.history.size()},
                 {"direction", options.direction == Direction::minimize ? "minimize" : "maximize"}};
    std::size_t failed = 0;
    for (const auto& t : result.history) failed += !t.objective.has_value();
    metrics["failed"] = failed;
    if (result.best) {
        const auto& best = result.best_trial();
        const Json best_json{{"trial", best.trial_index},
                             {"objective", *best.objective},
                             {"point", Json::parse(point_to_json(best.point, space))},
                             {"adapter", to_json(config_from_point(technique, space, best.point))}};
        write_text(s.out / "best.json", best_json.dump(2) + "\n");
        outputs["best"] = (s.out / "best.json").string();
        metrics["best"] = best_json;
    }
    return metrics;
}

Json cmd_eval(const Settings& s) {
    const auto base = require_base(s);
    const Vocab vocab = resolve_vocab(s, base.vocab);
    check_vocab_fits(vocab, base.model.config);
    if (!s.inputs.stack.empty()) return evaluate_stacks(s, base, vocab);

    const Corpus corpus = load_corpus(require(s.inputs.corpus, "--corpus or --stack", s.command), vocab,
                                      kCorpusSplitSeed);
    std::optional<AdapterStack<float>> stack;
    std::size_t virtual_tokens = 0;
    if (!s.inputs.adapter.empty()) {
        stack = AdapterStack<float>::for_pretraining(base.model, load_adapter<float>(s.inputs.adapter, base.model));
        NoGradGuard guard;
        if (const auto vt = stack->virtual_tokens(ForwardMode{})) virtual_tokens = vt->dim(0);
    }
    const std::size_t window = std::min(s.train.max_seq_len, base.model.config.max_seq_len - virtual_tokens);
    const auto windows = chunk_documents(corpus.documents_in(Split::test), window);
    const auto [nll, count] =
        lm_nll(base.model, stack ? &*stack : static_cast<const AdapterHooks<float>*>(nullptr), windows,
               s.train.batch_size);
    EvalReport report;
    report.perplexity = perplexity(nll, count);
    std::cout << report.to_json() << "\n";
    write_text(s.out / "report.json", report.to_json() + "\n");
    return Json{{"report", report_json(report)}, {"test_tokens", count}};
}

Json cmd_merge(const Settings& s, Json& outputs) {
    const auto base = require_base(s);
    const auto adapter = load_adapter<float>(require(s.inputs.adapter, "--adapter", s.command), base.model);
    const auto merged = merge_lora(base.model, adapter);
    save_base(merged, s.out / "base.peft", base.vocab ? &*base.vocab : nullptr);
    outputs["checkpoint"] = (s.out / "base.peft").string();
    std::size_t changed = 0;
    const auto before = base.model.named_parameters();
    const auto after = merged.named_parameters();
    for (std::size_t i = 0; i < before.size(); ++i) {
        const auto a = before[i].tensor.data();
        const auto b = after[i].tensor.data();
        changed += !std::equal(a.begin(), a.end(), b.begin());
    }
    return Json{{"tensors_changed", changed}, {"adapter", to_json(config_of(adapter))}};
}

}  // namespace

Json run(const Settings& s, const std::vector<std::string>& argv) {
    if (s.out.empty()) throw UsageError(s.command + " needs --out");
    std::error_code ec;
    fs::create_directories(s.out, ec);
    if (ec || !fs::is_directory(s.out)) {
        throw DataError("cannot create output directory " + s.out.string() + ": " + ec.message());
    }

    Json manifest{{"command", s.command},
                  {"argv", argv},
                  {"config", s.to_json()},
                  {"seed", s.seed},
                  {"threads", thread_count()},
                  {"out", s.out.string()},
                  {"started", utc_now()}};
    Json outputs = Json::object();
    auto finish = [&](const std::string& status, const Json& metrics) {
        manifest["outputs"] = outputs;
        manifest["finished"] = utc_now();
        manifest["status"] = status;
        manifest["metrics"] = metrics;
        write_text(s.out / "manifest.json", manifest.dump(2) + "\n");
    };
    try {
        Json metrics;
        if (s.command == "gen") metrics = cmd_gen(s, outputs);
        else if (s.command == "pretrain") metrics = cmd_pretrain(s, outputs);
        else if (s.command == "finetune") metrics = cmd_finetune(s, outputs);
        else if (s.command == "hpo") metrics = cmd_hpo(s, outputs);
        else if (s.command == "eval") metrics = cmd_eval(s);
        else if (s.command == "merge") metrics = cmd_merge(s, outputs);
        else throw UsageError("unknown command " + s.command);
        finish("ok", metrics);
        return metrics;
    } catch (const std::exception& e) {
        manifest["error"] = e.what();
        finish("error", nullptr);
        throw;
    }
}

void record_failure(const std::string& command, const fs::path& out, const std::vector<std::string>& argv,
                    const std::string& error) {
    if (out.empty()) return;
    std::error_code ec;
    fs::create_directories(out, ec);
    if (ec) return;
    const std::string now = utc_now();
    const Json manifest{{"command", command}, {"argv", argv},      {"config", nullptr},  {"out", out.string()},
                        {"started", now},     {"error", error},    {"outputs", Json::object()},
                        {"finished", now},    {"status", "error"}, {"metrics", nullptr}};
    try {
        write_text(out / "manifest.json", manifest.dump(2) + "\n");
    } catch (const Error&) {
    }
}

}  // namespace peft_forge::cli
