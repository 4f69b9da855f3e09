#include "peft_forge/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "peft_forge/error.hpp"
#include "peft_forge/rng.hpp"

namespace peft_forge {

std::string_view split_name(Split s) {
    switch (s) {
        case Split::train:
            return "train";
        case Split::valid:
            return "valid";
        case Split::test:
            return "test";
    }
    return "train";
}

Split parse_split(std::string_view name) {
    if (name == "train") return Split::train;
    if (name == "valid" || name == "validation") return Split::valid;
    if (name == "test") return Split::test;
    throw DataError("unknown split '" + std::string(name) + "' (expected train|valid|test)");
}

std::vector<std::string> whitespace_tokenize(std::string_view text) {
    std::vector<std::string> out;
    std::size_t i = 0;
    auto space = [](char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f'; };
    while (i < text.size()) {
        while (i < text.size() && space(text[i])) ++i;
        std::size_t j = i;
        while (j < text.size() && !space(text[j])) ++j;
        if (j > i) out.emplace_back(text.substr(i, j - i));
        i = j;
    }
    return out;
}

// ---------------------------------------------------------------- vocab

namespace {

const std::vector<std::string>& reserved_tokens() {
    static const std::vector<std::string> r{"<pad>", "<unk>", "<bos>", "<eos>"};
    return r;
}

}  // namespace

Vocab::Vocab(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
    if (tokens_.size() < kReserved ||
        !std::equal(reserved_tokens().begin(), reserved_tokens().end(), tokens_.begin())) {
        throw DataError("vocab: the first entries must be <pad> <unk> <bos> <eos>");
    }
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
        if (tokens_[i].empty() || !whitespace_tokenize(tokens_[i]).size() ||
            whitespace_tokenize(tokens_[i]).front() != tokens_[i]) {
            throw DataError("vocab: entry " + std::to_string(i) + " is not a single token");
        }
        if (!index_.emplace(tokens_[i], static_cast<int>(i)).second) {
            throw DataError("vocab: duplicate entry '" + tokens_[i] + "'");
        }
    }
}

Vocab Vocab::build(std::span<const std::string> documents, std::size_t max_size) {
    std::map<std::string, std::size_t> counts;
    for (const auto& doc : documents) {
        for (auto& tok : whitespace_tokenize(doc)) {
            ++counts[tok];
        }
    }
    for (const auto& r : reserved_tokens()) counts.erase(r);
    if (counts.empty()) {
        throw DataError("build_vocab: empty corpus");
    }
    std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
    // std::map iteration is lexicographic, so a stable sort on count keeps ties ordered.
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    std::vector<std::string> tokens = reserved_tokens();
    for (const auto& [tok, n] : ranked) {
        if (tokens.size() >= max_size) break;
        tokens.push_back(tok);
    }
    return Vocab(std::move(tokens));
}

int Vocab::id(std::string_view token) const {
    const auto it = index_.find(std::string(token));
    return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocab::token(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
        throw UsageError("vocab: id " + std::to_string(id) + " out of range");
    }
    return tokens_[static_cast<std::size_t>(id)];
}

std::vector<int> Vocab::encode(std::string_view text) const {
    std::vector<int> ids;
    for (const auto& tok : whitespace_tokenize(text)) ids.push_back(id(tok));
    return ids;
}

std::string Vocab::decode(std::span<const int> ids) const {
    std::string out;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (i) out += ' ';
        out += token(ids[i]);
    }
    return out;
}

// ---------------------------------------------------------------- corpora

std::vector<std::vector<int>> Corpus::documents_in(Split s) const {
    std::vector<std::vector<int>> out;
    for (std::size_t i = 0; i < documents.size(); ++i) {
        if (split[i] == s) out.push_back(documents[i]);
    }
    return out;
}

std::size_t Corpus::token_count(Split s) const {
    std::size_t n = 0;
    for (std::size_t i = 0; i < documents.size(); ++i) {
        if (split[i] == s) n += documents[i].size();
    }
    return n;
}

Corpus make_corpus(std::vector<std::vector<int>> documents, std::uint64_t split_seed,
                   double test_fraction) {
    Corpus c;
    c.split.reserve(documents.size());
    for (const auto& doc : documents) {
        std::uint64_t h = 14695981039346656037ull;
        for (int id : doc) {
            h ^= static_cast<std::uint32_t>(id);
            h *= 1099511628211ull;
        }
        const std::uint64_t mixed = splitmix64(h ^ splitmix64(split_seed));
        const double u = static_cast<double>(mixed >> 11) * 0x1.0p-53;
        c.split.push_back(u < test_fraction ? Split::test : Split::train);
    }
    c.documents = std::move(documents);
    return c;
}

std::vector<Example> Dataset::in(Split s) const {
    std::vector<Example> out;
    for (const auto& e : examples) {
        if (e.split == s) out.push_back(e);
    }
    return out;
}

std::size_t Dataset::count(Split s) const {
    return static_cast<std::size_t>(
        std::count_if(examples.begin(), examples.end(), [&](const Example& e) { return e.split == s; }));
}

void assign_splits(std::vector<Example>& examples, std::uint64_t seed) {
    const std::size_t n = examples.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(seed);
    for (std::size_t i = n; i > 1; --i) {
        std::swap(order[i - 1], order[rng.below(i)]);
    }
    const auto n_train = static_cast<std::size_t>(std::llround(0.7 * static_cast<double>(n)));
    const auto n_valid = static_cast<std::size_t>(std::llround(0.1 * static_cast<double>(n)));
    for (std::size_t r = 0; r < n; ++r) {
        examples[order[r]].split =
            r < n_train ? Split::train : (r < n_train + n_valid ? Split::valid : Split::test);
    }
}

// ---------------------------------------------------------------- synthetic

Vocab synthetic_vocab() {
    using L = SyntheticLayout;
    std::vector<std::string> tokens = reserved_tokens();
    for (const char* w : {"Finish", "this", "clinical", "note:"}) tokens.emplace_back(w);
    for (int i = 0; i < L::kMarkerCount; ++i) tokens.push_back("m" + std::to_string(i));
    for (int i = 0; i < L::kGeneralCount; ++i) tokens.push_back("w" + std::to_string(i));
    for (int i = 0; i < L::kDomainCount; ++i) tokens.push_back("c" + std::to_string(i));
    return Vocab(std::move(tokens));
}

namespace {

constexpr std::size_t kMinDocLength = 24;
constexpr std::size_t kMaxDocLength = 64;

struct Transition {
    std::vector<int> next;
    std::vector<double> cumulative;
};

class MarkovChain {
public:
    std::vector<int> states;
    std::vector<Transition> table;  // indexed by token id

    int start(Rng& rng) const { return states[rng.below(states.size())]; }

    int step(int from, Rng& rng) const {
        const auto& t = table[static_cast<std::size_t>(from)];
        const double u = rng.uniform();
        const auto it = std::upper_bound(t.cumulative.begin(), t.cumulative.end(), u);
        const auto i = std::min<std::size_t>(static_cast<std::size_t>(it - t.cumulative.begin()),
                                             t.next.size() - 1);
        return t.next[i];
    }

    std::vector<int> sample(std::size_t length, Rng& rng) const {
        std::vector<int> doc{start(rng)};
        while (doc.size() < length) doc.push_back(step(doc.back(), rng));
        return doc;
    }
};

std::vector<int> general_states() {
    using L = SyntheticLayout;
    std::vector<int> s;
    for (int i = 0; i < L::kPromptCount; ++i) s.push_back(L::kPromptFirst + i);
    for (int i = 0; i < L::kGeneralCount; ++i) s.push_back(L::kGeneralFirst + i);
    return s;
}

std::vector<int> domain_states() {
    using L = SyntheticLayout;
    std::vector<int> s;
    for (int i = 0; i < L::kDomainCount; ++i) s.push_back(L::kDomainFirst + i);
    return s;
}

/// `count` distinct picks from `pool` with random weights summing to `mass`.
void add_successors(Transition& t, const std::vector<int>& pool, std::size_t count, double mass,
                    Rng& rng) {
    std::vector<int> picks;
    while (picks.size() < count) {
        const int c = pool[rng.below(pool.size())];
        if (std::find(picks.begin(), picks.end(), c) == picks.end()) picks.push_back(c);
    }
    std::vector<double> w(count);
    double total = 0.0;
    for (auto& x : w) total += (x = 0.2 + rng.uniform());
    double acc = t.cumulative.empty() ? 0.0 : t.cumulative.back();
    for (std::size_t i = 0; i < count; ++i) {
        acc += mass * w[i] / total;
        t.next.push_back(picks[i]);
        t.cumulative.push_back(acc);
    }
}

MarkovChain general_chain(std::uint64_t seed) {
    Rng rng(derive_seed(seed, 1));
    MarkovChain chain;
    chain.states = general_states();
    chain.table.resize(SyntheticLayout::kSize);
    for (int s : chain.states) {
        add_successors(chain.table[static_cast<std::size_t>(s)], chain.states, 6, 1.0, rng);
    }
    return chain;
}

MarkovChain domain_chain(std::uint64_t seed) {
    Rng rng(derive_seed(seed, 2));
    MarkovChain chain;
    const auto general = general_states();
    const auto domain = domain_states();
    chain.states = general;
    chain.states.insert(chain.states.end(), domain.begin(), domain.end());
    chain.table.resize(SyntheticLayout::kSize);
    for (int s : chain.states) {
        auto& t = chain.table[static_cast<std::size_t>(s)];
        add_successors(t, general, 4, 0.6, rng);
        add_successors(t, domain, 4, 0.4, rng);
    }
    return chain;
}

std::size_t doc_length(Rng& rng) {
    return kMinDocLength + rng.below(kMaxDocLength - kMinDocLength + 1);
}

void insert_at_random(std::vector<int>& doc, int token, Rng& rng) {
    const std::size_t pos = rng.below(doc.size() + 1);
    doc.insert(doc.begin() + static_cast<std::ptrdiff_t>(pos), token);
}

}  // namespace

std::pair<Corpus, Corpus> gen_domain_corpora(std::uint64_t seed, std::size_t general_docs,
                                             std::size_t domain_docs) {
    if (general_docs < 100 || domain_docs < 100) {
        throw UsageError("gen: corpora need at least 100 documents each");
    }
    const MarkovChain general = general_chain(seed);
    const MarkovChain domain = domain_chain(seed);
    Rng g_rng(derive_seed(seed, 3));
    Rng d_rng(derive_seed(seed, 4));
    std::vector<std::vector<int>> g_docs, d_docs;
    for (std::size_t i = 0; i < general_docs; ++i) g_docs.push_back(general.sample(doc_length(g_rng), g_rng));
    for (std::size_t i = 0; i < domain_docs; ++i) d_docs.push_back(domain.sample(doc_length(d_rng), d_rng));
    return {make_corpus(std::move(g_docs), derive_seed(seed, 5)),
            make_corpus(std::move(d_docs), derive_seed(seed, 6))};
}

ClassLabel label_from_markers(const TaskSpec& task, std::span<const int> ids) {
    auto has = [&](int marker) {
        const int id = SyntheticLayout::marker(marker);
        return std::find(ids.begin(), ids.end(), id) != ids.end();
    };
    if (task.name == "pmv") return ClassLabel::single(has(TaskMarkers::kPmv) ? 1 : 0);
    if (task.name == "mor") return ClassLabel::single(has(TaskMarkers::kMor) ? 1 : 0);
    if (task.name == "los") {
        int found = -1;
        for (int c = 0; c < 4; ++c) {
            if (has(TaskMarkers::kLosFirst + c)) {
                if (found >= 0) throw DataError("los: note carries more than one class marker");
                found = c;
            }
        }
        if (found < 0) throw DataError("los: note carries no class marker");
        return ClassLabel::single(found);
    }
    const int first = task.name == "diag" ? TaskMarkers::kDiagFirst
                      : task.name == "proc" ? TaskMarkers::kProcFirst
                                            : -1;
    if (first < 0) throw UsageError("no marker rule for task '" + task.name + "'");
    std::vector<std::uint8_t> row(task.num_classes, 0);
    for (std::size_t c = 0; c < task.num_classes; ++c) {
        row[c] = has(first + static_cast<int>(c)) ? 1 : 0;
    }
    return ClassLabel::multi_hot(std::move(row));
}

std::vector<Dataset> gen_classification_datasets(std::uint64_t seed, double scale) {
    const auto n = static_cast<std::size_t>(std::llround(1000.0 * scale));
    if (std::llround(0.1 * static_cast<double>(n)) < 50) {
        throw UsageError("gen: scale " + std::to_string(scale) +
                         " leaves fewer than 50 notes in a split (need scale >= 0.5)");
    }
    const MarkovChain chain = domain_chain(seed);
    // Markers m86..m95 carry no label; they keep "has a rare token" from
    // being a shortcut.
    constexpr int kDistractorFirst = 86;
    constexpr int kDistractorCount = 10;
    constexpr double kLosWeights[4] = {0.35, 0.3, 0.2, 0.15};

    std::vector<Dataset> out;
    std::uint64_t stream = 100;
    for (const TaskSpec& task : standard_tasks()) {
        Rng rng(derive_seed(seed, stream++));
        Dataset ds;
        ds.task = task;
        for (std::size_t i = 0; i < n; ++i) {
            Example e;
            e.ids = chain.sample(doc_length(rng), rng);
            const std::size_t distractors = rng.below(3);
            for (std::size_t k = 0; k < distractors; ++k) {
                insert_at_random(
                    e.ids, SyntheticLayout::marker(kDistractorFirst + static_cast<int>(rng.below(kDistractorCount))),
                    rng);
            }
            if (task.name == "pmv" || task.name == "mor") {
                const double rate = task.name == "pmv" ? 0.3 : 0.2;
                const int marker = task.name == "pmv" ? TaskMarkers::kPmv : TaskMarkers::kMor;
                const bool positive = rng.bernoulli(rate);
                if (positive) insert_at_random(e.ids, SyntheticLayout::marker(marker), rng);
                e.label = ClassLabel::single(positive ? 1 : 0);
            } else if (task.name == "los") {
                const double u = rng.uniform();
                int c = 0;
                double acc = kLosWeights[0];
                while (c < 3 && u >= acc) acc += kLosWeights[++c];
                insert_at_random(e.ids, SyntheticLayout::marker(TaskMarkers::kLosFirst + c), rng);
                e.label = ClassLabel::single(c);
            } else {
                const int first = task.name == "diag" ? TaskMarkers::kDiagFirst : TaskMarkers::kProcFirst;
                std::vector<std::uint8_t> row(task.num_classes, 0);
                for (std::size_t c = 0; c < task.num_classes; ++c) {
                    if (rng.bernoulli(0.1)) {
                        row[c] = 1;
                        insert_at_random(e.ids, SyntheticLayout::marker(first + static_cast<int>(c)), rng);
                    }
                }
                e.label = ClassLabel::multi_hot(std::move(row));
            }
            ds.examples.push_back(std::move(e));
        }
        assign_splits(ds.examples, derive_seed(seed, stream++));
        out.push_back(std::move(ds));
    }
    return out;
}

// ---------------------------------------------------------------- files

namespace {

bool valid_utf8(std::string_view s) {
    std::size_t i = 0;
    while (i < s.size()) {
        const auto c = static_cast<unsigned char>(s[i]);
        std::size_t len = 0;
        if (c < 0x80) len = 1;
        else if ((c >> 5) == 0x6) len = 2;
        else if ((c >> 4) == 0xE) len = 3;
        else if ((c >> 3) == 0x1E) len = 4;
        else return false;
        if (i + len > s.size()) return false;
        for (std::size_t k = 1; k < len; ++k) {
            if ((static_cast<unsigned char>(s[i + k]) >> 6) != 0x2) return false;
        }
        i += len;
    }
    return true;
}

std::string where(const std::filesystem::path& path, std::size_t line) {
    return path.string() + ":" + std::to_string(line) + ": ";
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    out << text;
    if (!out.flush()) throw DataError("write failed for " + path.string());
}

std::vector<int> encode_checked(const Vocab& vocab, std::string_view text,
                                const std::filesystem::path& path, std::size_t line) {
    if (!valid_utf8(text)) throw DataError(where(path, line) + "invalid UTF-8");
    auto ids = vocab.encode(text);
    if (ids.empty()) throw DataError(where(path, line) + "empty document");
    return ids;
}

}  // namespace

std::vector<std::string> read_lines(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        lines.push_back(std::move(line));
    }
    if (lines.empty()) throw DataError(path.string() + ": empty file");
    return lines;
}

Corpus load_corpus(const std::filesystem::path& path, const Vocab& vocab, std::uint64_t split_seed) {
    const auto lines = read_lines(path);
    std::vector<std::vector<int>> docs;
    for (std::size_t i = 0; i < lines.size(); ++i) {
        docs.push_back(encode_checked(vocab, lines[i], path, i + 1));
    }
    return make_corpus(std::move(docs), split_seed);
}

void write_corpus(const std::filesystem::path& path, const Corpus& corpus, const Vocab& vocab) {
    std::string text;
    for (const auto& doc : corpus.documents) {
        text += vocab.decode(doc);
        text += '\n';
    }
    write_text(path, text);
}

Dataset load_dataset(const std::filesystem::path& path, const TaskSpec& task, const Vocab& vocab,
                     std::uint64_t split_seed) {
    const auto lines = read_lines(path);
    Dataset ds;
    ds.task = task;
    std::size_t with_split = 0;
    for (std::size_t i = 0; i < lines.size(); ++i) {
        const std::size_t line = i + 1;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(lines[i]);
        } catch (const nlohmann::json::parse_error&) {
            throw DataError(where(path, line) + "malformed JSON");
        }
        if (!j.is_object() || !j.contains("text") || !j["text"].is_string()) {
            throw DataError(where(path, line) + "expected an object with a string \"text\"");
        }
        Example e;
        e.ids = encode_checked(vocab, j["text"].get<std::string>(), path, line);
        const bool single = j.contains("label");
        const bool multi = j.contains("labels");
        if (task.kind == TaskKind::multilabel) {
            if (!multi || single || !j["labels"].is_array()) {
                throw DataError(where(path, line) + "multilabel task " + task.name +
                                " needs a \"labels\" list");
            }
            std::vector<std::uint8_t> row(task.num_classes, 0);
            for (const auto& v : j["labels"]) {
                if (!v.is_number_integer() || v.get<long long>() < 0 ||
                    v.get<long long>() >= static_cast<long long>(task.num_classes)) {
                    throw DataError(where(path, line) + "label index out of range for k = " +
                                    std::to_string(task.num_classes));
                }
                row[v.get<std::size_t>()] = 1;
            }
            e.label = ClassLabel::multi_hot(std::move(row));
        } else {
            if (!single || multi || !j["label"].is_number_integer()) {
                throw DataError(where(path, line) + "task " + task.name +
                                " needs a single integer \"label\"");
            }
            e.label = ClassLabel::single(j["label"].get<int>());
            try {
                validate_label(task, e.label);
            } catch (const DataError& err) {
                throw DataError(where(path, line) + err.what());
            }
        }
        if (j.contains("split")) {
            if (!j["split"].is_string()) throw DataError(where(path, line) + "split must be a string");
            try {
                e.split = parse_split(j["split"].get<std::string>());
            } catch (const DataError& err) {
                throw DataError(where(path, line) + err.what());
            }
            ++with_split;
        }
        ds.examples.push_back(std::move(e));
    }
    if (with_split != 0 && with_split != ds.examples.size()) {
        throw DataError(path.string() + ": either every line or no line may carry \"split\"");
    }
    if (with_split == 0) assign_splits(ds.examples, split_seed);
    return ds;
}

void write_dataset(const std::filesystem::path& path, const Dataset& dataset, const Vocab& vocab) {
    std::string text;
    for (const auto& e : dataset.examples) {
        nlohmann::ordered_json j;
        j["text"] = vocab.decode(e.ids);
        if (dataset.task.kind == TaskKind::multilabel) {
            std::vector<int> idx;
            for (std::size_t c = 0; c < e.label.multi.size(); ++c) {
                if (e.label.multi[c]) idx.push_back(static_cast<int>(c));
            }
            j["labels"] = idx;
        } else {
            j["label"] = e.label.value;
        }
        j["split"] = std::string(split_name(e.split));
        text += j.dump();
        text += '\n';
    }
    write_text(path, text);
}

void write_vocab(const std::filesystem::path& path, const Vocab& vocab) {
    std::string text;
    for (const auto& t : vocab.tokens()) {
        text += t;
        text += '\n';
    }
    write_text(path, text);
}

Vocab load_vocab(const std::filesystem::path& path) { return Vocab(read_lines(path)); }

}  // namespace peft_forge
