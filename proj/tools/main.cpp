// peft-forge: generate data, pretrain, fine-tune, search, evaluate, merge.
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

#include <iostream>

#include "CLI11.hpp"
#include "cli.hpp"
#include "peft_forge/error.hpp"

using namespace peft_forge;

int main(int argc, char** argv) {
    CLI::App app{"peft-forge: two-stage parameter-efficient fine-tuning at desk scale"};
    app.require_subcommand(1, 1);

    cli::Flags flags;
    std::uint64_t seed = 0;
    std::string config, peft, variant, task, stage;
    std::size_t budget = 0;

    struct Spec {
        const char* name;
        const char* help;
    };
    const Spec specs[] = {
        {"gen", "write synthetic corpora, vocabulary and the five task datasets"},
        {"pretrain", "train a base model (--peft none) or a domain adapter on a corpus"},
        {"finetune", "fine-tune a variant stack on one or more tasks and report test AUROC"},
        {"hpo", "Bayesian search over a technique's hyperparameter grid"},
        {"eval", "perplexity of a base (+adapter) on a corpus, or AUROC of saved stacks"},
        {"merge", "fold a LoRA adapter into its base checkpoint"},
    };
    std::vector<CLI::Option*> seed_opts, config_opts, peft_opts, variant_opts, task_opts, budget_opts, stage_opts;
    for (const auto& spec : specs) {
        CLI::App* sub = app.add_subcommand(spec.name, spec.help);
        seed_opts.push_back(sub->add_option("--seed", seed, "random seed (default 0)"));
        config_opts.push_back(sub->add_option("--config", config, "JSON config file or run manifest"));
        sub->add_option("--out", flags.out, "output directory")->required();
        peft_opts.push_back(sub->add_option("--peft", peft, "none|lora|prefix|prompt|ptuning|adaption"));
        variant_opts.push_back(sub->add_option("--variant", variant, "fine-tuning variant"));
        task_opts.push_back(sub->add_option("--task", task, "pmv|mor|los|diag|proc, a comma list, or all"));
        budget_opts.push_back(sub->add_option("--budget", budget, "hpo trials (at most 20)"));
        stage_opts.push_back(sub->add_option("--stage", stage, "hpo stage: pretrain|finetune"));
        sub->add_flag("--eval-only", flags.eval_only, "evaluate saved stacks instead of training");
        sub->add_option("--base", flags.inputs.base, "base checkpoint");
        sub->add_option("--corpus", flags.inputs.corpus, "corpus file, one document per line");
        sub->add_option("--vocab", flags.inputs.vocab, "vocabulary file, one token per line");
        sub->add_option("--data", flags.inputs.data, "dataset file or directory of <task>.jsonl");
        sub->add_option("--domain", flags.inputs.domain, "domain adapter checkpoint");
        sub->add_option("--adapter", flags.inputs.adapter, "adapter checkpoint");
        sub->add_option("--stack", flags.inputs.stack, "stack checkpoint or directory of <task>.stack.peft");
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : static_cast<int>(ErrorKind::usage);
    }

    auto given = [](const std::vector<CLI::Option*>& opts) {
        for (auto* o : opts) {
            if (o->count() > 0) return true;
        }
        return false;
    };
    if (given(seed_opts)) flags.seed = seed;
    if (given(config_opts)) flags.config = config;
    if (given(peft_opts)) flags.peft = peft;
    if (given(variant_opts)) flags.variant = variant;
    if (given(task_opts)) flags.task = task;
    if (given(budget_opts)) flags.budget = budget;
    if (given(stage_opts)) flags.stage = stage;

    const std::string command = app.get_subcommands().front()->get_name();
    const std::vector<std::string> args(argv, argv + argc);
    std::optional<cli::Settings> settings;
    try {
        settings = cli::resolve(command, flags);
        cli::run(*settings, args);
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "peft-forge " << command << ": " << e.what() << "\n";
        if (!settings) cli::record_failure(command, flags.out, args, e.what());
        // Filesystem and parser failures surface as data errors.
        const auto* err = dynamic_cast<const Error*>(&e);
        return static_cast<int>(err ? err->kind() : ErrorKind::data);
    }
}
