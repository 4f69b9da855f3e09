#pragma once

// Tokenization, corpora, classification datasets and the synthetic
// generators that stand in for clinical text.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "peft_forge/task.hpp"

namespace peft_forge {

enum class Split { train, valid, test };

std::string_view split_name(Split s);
Split parse_split(std::string_view name);

std::vector<std::string> whitespace_tokenize(std::string_view text);

class Vocab {
public:
    static constexpr int kPad = 0;
    static constexpr int kUnk = 1;
    static constexpr int kBos = 2;
    static constexpr int kEos = 3;
    static constexpr std::size_t kReserved = 4;

    Vocab() = default;
    /// `tokens[i]` is the string of id i; the first four must be the
    /// reserved entries. Throws DataError on duplicates.
    explicit Vocab(std::vector<std::string> tokens);

    /// Whitespace tokens ranked by frequency, ties broken lexicographically,
    /// after the reserved entries; at most `max_size` entries in total.
    /// Throws DataError for an empty corpus.
    static Vocab build(std::span<const std::string> documents, std::size_t max_size);

    std::size_t size() const { return tokens_.size(); }
    const std::vector<std::string>& tokens() const { return tokens_; }
    int id(std::string_view token) const;
    const std::string& token(int id) const;

    std::vector<int> encode(std::string_view text) const;
    std::string decode(std::span<const int> ids) const;

    bool operator==(const Vocab& other) const { return tokens_ == other.tokens_; }

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> index_;
};

// ---------------------------------------------------------------- corpora

struct Corpus {
    std::vector<std::vector<int>> documents;
    std::vector<Split> split;  // train or test per document

    std::size_t size() const { return documents.size(); }
    std::vector<std::vector<int>> documents_in(Split s) const;
    std::size_t token_count(Split s) const;
};

/// Assigns each document to test with probability ~`test_fraction` from a
/// seeded hash of its content.
Corpus make_corpus(std::vector<std::vector<int>> documents, std::uint64_t split_seed,
                   double test_fraction = 0.1);

// ---------------------------------------------------------------- datasets

struct Example {
    std::vector<int> ids;
    ClassLabel label;
    Split split = Split::train;
};

struct Dataset {
    TaskSpec task;
    std::vector<Example> examples;

    std::vector<Example> in(Split s) const;
    std::size_t count(Split s) const;
};

/// Splits in order: first ~70% train, next ~10% valid, rest test, after a
/// seeded shuffle.
void assign_splits(std::vector<Example>& examples, std::uint64_t seed);

// ---------------------------------------------------------------- synthetic

/// Token layout of the synthetic vocabulary (512 ids).
struct SyntheticLayout {
    static constexpr int kPromptFirst = 4;  // Finish this clinical note:
    static constexpr int kPromptCount = 4;
    static constexpr int kMarkerFirst = 8;  // m0 .. m95
    static constexpr int kMarkerCount = 96;
    static constexpr int kGeneralFirst = 104;  // w0 .. w279
    static constexpr int kGeneralCount = 280;
    static constexpr int kDomainFirst = 384;  // c0 .. c127
    static constexpr int kDomainCount = 128;
    static constexpr int kSize = 512;

    static bool is_domain(int id) { return id >= kDomainFirst && id < kDomainFirst + kDomainCount; }
    static bool is_marker(int id) { return id >= kMarkerFirst && id < kMarkerFirst + kMarkerCount; }
    static int marker(int k) { return kMarkerFirst + k; }
};

Vocab synthetic_vocab();

/// General and domain corpora from order-1 Markov chains over the synthetic
/// vocabulary. Throws UsageError when either size is below 100.
std::pair<Corpus, Corpus> gen_domain_corpora(std::uint64_t seed, std::size_t general_docs,
                                             std::size_t domain_docs);

/// Marker ids planted for each task (see README for the rules).
struct TaskMarkers {
    static constexpr int kPmv = 0;          // m0, positive rate 0.3
    static constexpr int kMor = 1;          // m1, positive rate 0.2
    static constexpr int kLosFirst = 2;     // m2..m5, exactly one per note
    static constexpr int kDiagFirst = 6;    // m6..m55, one per label
    static constexpr int kProcFirst = 56;   // m56..m85, one per label
};

/// Label recomputed from the marker tokens of a note. Independent of the
/// generator's bookkeeping; used to validate files.
ClassLabel label_from_markers(const TaskSpec& task, std::span<const int> ids);

/// The five standard tasks, round(1000 * scale) notes each, split 70/10/20.
/// Throws UsageError when a split would hold fewer than 50 notes.
std::vector<Dataset> gen_classification_datasets(std::uint64_t seed, double scale);

// ---------------------------------------------------------------- files

/// One document per line, UTF-8. Throws DataError for an empty file, a blank
/// line or invalid UTF-8 (with the line number).
Corpus load_corpus(const std::filesystem::path& path, const Vocab& vocab,
                   std::uint64_t split_seed = 0);
std::vector<std::string> read_lines(const std::filesystem::path& path);
void write_corpus(const std::filesystem::path& path, const Corpus& corpus, const Vocab& vocab);

/// JSON lines {"text": str, "label": int | "labels": [int], "split"?: str}.
/// Without split fields the examples are split by assign_splits(seed).
Dataset load_dataset(const std::filesystem::path& path, const TaskSpec& task, const Vocab& vocab,
                     std::uint64_t split_seed = 0);
void write_dataset(const std::filesystem::path& path, const Dataset& dataset, const Vocab& vocab);

void write_vocab(const std::filesystem::path& path, const Vocab& vocab);
Vocab load_vocab(const std::filesystem::path& path);

}  // namespace peft_forge
