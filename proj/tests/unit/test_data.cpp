#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "peft_forge/data.hpp"
#include "peft_forge/error.hpp"

using namespace peft_forge;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
    auto dir = fs::temp_directory_path() / ("peft_forge_test_data_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

void write_file(const fs::path& p, const std::string& text) {
    std::ofstream(p, std::ios::binary) << text;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST_CASE("vocab build and encode") {
    const std::vector<std::string> docs{"a b b"};
    const auto v = Vocab::build(docs, 100);
    REQUIRE(v.size() == 6);
    CHECK(v.token(4) == "b");
    CHECK(v.token(5) == "a");
    CHECK(v.id("zebra") == Vocab::kUnk);
    CHECK(v.encode("b  a\tq") == std::vector<int>{4, 5, Vocab::kUnk});
    CHECK(v.decode(std::vector<int>{4, 5}) == "b a");

    // Ties broken lexicographically; cap respected.
    const std::vector<std::string> tie{"y x z x y z w"};
    const auto t = Vocab::build(tie, 7);
    CHECK(t.tokens() == std::vector<std::string>{"<pad>", "<unk>", "<bos>", "<eos>", "x", "y", "z"});
    CHECK(Vocab::build(tie, 100) == Vocab::build(tie, 100));
    CHECK_THROWS_AS(Vocab::build(std::vector<std::string>{}, 10), DataError);
    CHECK_THROWS_AS(Vocab(std::vector<std::string>{"a", "b"}), DataError);
}

TEST_CASE("domain corpora") {
    const auto [general, domain] = gen_domain_corpora(3, 150, 120);
    CHECK(general.size() == 150);
    CHECK(domain.size() == 120);

    std::size_t dom_positions = 0, dom_total = 0, gen_domain_tokens = 0;
    for (const auto& doc : domain.documents) {
        for (int id : doc) dom_positions += SyntheticLayout::is_domain(id);
        dom_total += doc.size();
    }
    for (const auto& doc : general.documents) {
        for (int id : doc) {
            gen_domain_tokens += SyntheticLayout::is_domain(id);
            CHECK(id >= 0);
            CHECK(id < SyntheticLayout::kSize);
        }
    }
    CHECK(static_cast<double>(dom_positions) / static_cast<double>(dom_total) >= 0.30);
    CHECK(gen_domain_tokens == 0);

    // Both splits present, and every document assigned to one.
    CHECK(general.documents_in(Split::test).size() > 0);
    CHECK(general.documents_in(Split::train).size() + general.documents_in(Split::test).size() == 150);

    const auto again = gen_domain_corpora(3, 150, 120);
    CHECK(again.first.documents == general.documents);
    CHECK(again.second.documents == domain.documents);
    CHECK(again.second.split == domain.split);
    CHECK(gen_domain_corpora(4, 150, 120).first.documents != general.documents);
    CHECK_THROWS_AS(gen_domain_corpora(3, 99, 120), UsageError);
}

TEST_CASE("classification datasets") {
    const auto sets = gen_classification_datasets(21, 1.0);
    REQUIRE(sets.size() == 5);
    const std::vector<std::string> names{"pmv", "mor", "los", "diag", "proc"};
    for (std::size_t i = 0; i < 5; ++i) {
        const auto& ds = sets[i];
        CHECK(ds.task.name == names[i]);
        CHECK(ds.examples.size() == 1000);
        CHECK(ds.count(Split::train) == 700);
        CHECK(ds.count(Split::valid) == 100);
        CHECK(ds.count(Split::test) == 200);
        // The rule checker reproduces every label.
        for (const auto& e : ds.examples) {
            REQUIRE(label_from_markers(ds.task, e.ids) == e.label);
        }
    }

    std::size_t pos = 0;
    for (const auto& e : sets[0].examples) pos += e.label.value;
    CHECK(static_cast<double>(pos) / 1000.0 == doctest::Approx(0.3).epsilon(0.05 / 0.3));

    std::set<int> los;
    for (const auto& e : sets[2].examples) los.insert(e.label.value);
    CHECK(los == std::set<int>{0, 1, 2, 3});
    CHECK(sets[2].task.num_classes == 4);
    CHECK(sets[3].task.num_classes == 50);
    CHECK(sets[4].task.num_classes == 30);

    const auto again = gen_classification_datasets(21, 1.0);
    for (std::size_t i = 0; i < 5; ++i) {
        for (std::size_t j = 0; j < again[i].examples.size(); ++j) {
            CHECK(again[i].examples[j].ids == sets[i].examples[j].ids);
            CHECK(again[i].examples[j].split == sets[i].examples[j].split);
        }
    }
    CHECK_THROWS_AS(gen_classification_datasets(21, 0.4), UsageError);
}

TEST_CASE("corpus and dataset files round-trip") {
    const auto dir = scratch_dir("roundtrip");
    const Vocab vocab = synthetic_vocab();
    CHECK(vocab.size() == SyntheticLayout::kSize);

    const auto [general, domain] = gen_domain_corpora(5, 100, 100);
    write_corpus(dir / "domain.txt", domain, vocab);
    const auto loaded = load_corpus(dir / "domain.txt", vocab, 0);
    CHECK(loaded.documents == domain.documents);

    const auto sets = gen_classification_datasets(6, 0.5);
    for (const auto& ds : sets) {
        const auto path = dir / (ds.task.name + ".jsonl");
        write_dataset(path, ds, vocab);
        const auto back = load_dataset(path, ds.task, vocab);
        REQUIRE(back.examples.size() == ds.examples.size());
        for (std::size_t i = 0; i < ds.examples.size(); ++i) {
            CHECK(back.examples[i].ids == ds.examples[i].ids);
            CHECK(back.examples[i].label == ds.examples[i].label);
            CHECK(back.examples[i].split == ds.examples[i].split);
        }
        write_dataset(dir / "again.jsonl", back, vocab);
        CHECK(slurp(dir / "again.jsonl") == slurp(path));
    }

    write_vocab(dir / "vocab.txt", vocab);
    CHECK(load_vocab(dir / "vocab.txt") == vocab);
}

TEST_CASE("file errors") {
    const auto dir = scratch_dir("errors");
    const Vocab vocab = synthetic_vocab();

    write_file(dir / "empty.txt", "");
    CHECK_THROWS_AS(load_corpus(dir / "empty.txt", vocab), DataError);
    CHECK_THROWS_AS(load_corpus(dir / "missing.txt", vocab), DataError);

    write_file(dir / "blank.txt", "w1 w2\n\nw3\n");
    try {
        load_corpus(dir / "blank.txt", vocab);
        FAIL("expected DataError");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find(":2") != std::string::npos);
    }
    write_file(dir / "utf.txt", "w1\n\xff\xfe\n");
    CHECK_THROWS_AS(load_corpus(dir / "utf.txt", vocab), DataError);

    // Multilabel indices become a multi-hot row.
    const TaskSpec& diag = standard_task("diag");
    write_file(dir / "diag.jsonl", "{\"text\": \"w1 m6\", \"labels\": [0, 5, 7]}\n");
    const auto ds = load_dataset(dir / "diag.jsonl", diag, vocab);
    REQUIRE(ds.examples.size() == 1);
    const auto& row = ds.examples[0].label.multi;
    REQUIRE(row.size() == 50);
    for (std::size_t c = 0; c < 50; ++c) CHECK(row[c] == (c == 0 || c == 5 || c == 7 ? 1 : 0));

    write_file(dir / "bad.jsonl", "{\"text\": \"w1\", \"labels\": [0, 50]}\n");
    CHECK_THROWS_AS(load_dataset(dir / "bad.jsonl", diag, vocab), DataError);
    const TaskSpec& pmv = standard_task("pmv");
    write_file(dir / "arity.jsonl", "{\"text\": \"w1\", \"label\": 0}\n{\"text\": \"w2\", \"labels\": [1]}\n");
    try {
        load_dataset(dir / "arity.jsonl", pmv, vocab);
        FAIL("expected DataError");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find(":2") != std::string::npos);
    }
    write_file(dir / "range.jsonl", "{\"text\": \"w1\", \"label\": 2}\n");
    CHECK_THROWS_AS(load_dataset(dir / "range.jsonl", pmv, vocab), DataError);
    write_file(dir / "json.jsonl", "{\"text\": \"w1\", \"label\": 0\n");
    CHECK_THROWS_AS(load_dataset(dir / "json.jsonl", pmv, vocab), DataError);

    // Without split fields, examples are split by seed.
    std::string lines;
    for (int i = 0; i < 20; ++i) lines += "{\"text\": \"w" + std::to_string(i) + "\", \"label\": " + std::to_string(i % 2) + "}\n";
    write_file(dir / "nosplit.jsonl", lines);
    const auto split = load_dataset(dir / "nosplit.jsonl", pmv, vocab, 4);
    CHECK(split.count(Split::train) == 14);
    CHECK(split.count(Split::valid) == 2);
    CHECK(split.count(Split::test) == 4);
}
