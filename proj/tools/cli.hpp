#pragma once

// Resolved settings and command entry points of the peft-forge tool.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "peft_forge/serialize.hpp"

namespace peft_forge::cli {

struct GenSettings {
    std::size_t general_docs = 1000;
    std::size_t domain_docs = 1000;
    double scale = 1.0;
};

struct Inputs {
    std::string base, corpus, vocab, data, domain, adapter, stack;
};

/// Every knob of one invocation after merging defaults, the config file and
/// flags (in that order of increasing precedence).
struct Settings {
    std::string command;
    std::uint64_t seed = 0;
    std::string peft = "lora";  // technique name or "none"
    std::string variant = "domain_trainable_plus_downstream";
    std::string task = "all";   // task name, comma list, or "all"
    std::size_t budget = 20;
    std::string stage = "pretrain";  // hpo only
    bool eval_only = false;
    ModelConfig model;
    TrainConfig train;
    std::optional<AnyAdapterConfig> adapter;  // for peft != none
    LoraConfig downstream;
    GenSettings gen;
    Inputs inputs;
    std::filesystem::path out;

    /// The config-file form, with every default materialized.
    Json to_json() const;
};

/// Flag values; empty optionals were not given on the command line.
struct Flags {
    std::optional<std::uint64_t> seed;
    std::optional<std::string> config, peft, variant, task, stage;
    std::optional<std::size_t> budget;
    bool eval_only = false;
    Inputs inputs;
    std::string out;
};

/// Applies defaults, then `flags.config` (a config file or a run manifest),
/// then the flags. Throws UsageError or DataError.
Settings resolve(const std::string& command, const Flags& flags);

/// Runs the command and writes out/manifest.json. Returns the metric summary.
Json run(const Settings& s, const std::vector<std::string>& argv);

/// Best-effort manifest for an invocation whose settings did not resolve.
void record_failure(const std::string& command, const std::filesystem::path& out,
                    const std::vector<std::string>& argv, const std::string& error);

}  // namespace peft_forge::cli
