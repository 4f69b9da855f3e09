#include <cmath>

#include "doctest.h"
#include "peft_forge/error.hpp"
#include "peft_forge/model.hpp"
#include "support.hpp"

using namespace peft_forge;

namespace {

ModelConfig tiny() {
    ModelConfig c;
    c.vocab_size = 40;
    c.d_model = 16;
    c.n_layers = 2;
    c.n_heads = 2;
    c.d_ff = 24;
    c.max_seq_len = 32;
    return c;
}

TokenBatch random_batch(std::size_t batch, std::size_t seq, int vocab, std::uint64_t seed) {
    std::vector<std::vector<int>> seqs;
    for (std::size_t b = 0; b < batch; ++b) {
        seqs.push_back(test_support::random_ids(seq, vocab, seed + b));
    }
    return TokenBatch::from_sequences(seqs);
}

}  // namespace

TEST_CASE("config validation and parameter shapes") {
    ModelConfig c = tiny();
    CHECK_NOTHROW(c.validate());
    c.n_heads = 3;
    CHECK_THROWS_AS(c.validate(), UsageError);

    // Enumerated by hand: embedding + head, per layer 4 d^2 + 3 d d_ff + 2 d, final norm.
    const ModelConfig t = tiny();
    const std::uint64_t expect = 2 * 40 * 16 + 2 * (4 * 16 * 16 + 3 * 16 * 24 + 2 * 16) + 16;
    CHECK(t.parameter_count() == expect);
    CHECK(BaseModel<float>::init(t, 1).parameter_count() == expect);

    const ModelConfig big = ModelConfig::llama_7b();
    CHECK(big.parameter_count() == 6738415616ull);

    const ModelConfig toy;
    CHECK(toy.vocab_size == 512);
    CHECK(toy.d_model == 64);
}

TEST_CASE("init is deterministic and frozen") {
    const auto a = BaseModel<float>::init(tiny(), 7);
    const auto b = BaseModel<float>::init(tiny(), 7);
    const auto c = BaseModel<float>::init(tiny(), 8);
    const auto pa = a.named_parameters();
    const auto pb = b.named_parameters();
    const auto pc = c.named_parameters();
    REQUIRE(pa.size() == pb.size());
    bool any_diff = false;
    for (std::size_t i = 0; i < pa.size(); ++i) {
        CHECK(pa[i].name == pb[i].name);
        CHECK(std::equal(pa[i].tensor.data().begin(), pa[i].tensor.data().end(),
                         pb[i].tensor.data().begin()));
        CHECK_FALSE(pa[i].tensor.requires_grad());
        if (!std::equal(pa[i].tensor.data().begin(), pa[i].tensor.data().end(),
                        pc[i].tensor.data().begin())) {
            any_diff = true;
        }
    }
    CHECK(any_diff);
    CHECK(a.final_norm.at(0) == 1.0f);
}

TEST_CASE("token batches") {
    const auto tb = TokenBatch::from_sequences({{5, 6, 7}, {8}});
    CHECK(tb.seq == 3);
    CHECK(tb.length(0) == 3);
    CHECK(tb.length(1) == 1);
    CHECK(tb.at(1, 2) == TokenBatch::kPad);
    CHECK_THROWS_AS(TokenBatch::from_sequences({{}}), UsageError);

    const auto targets = lm_targets(tb, 2);
    // Sequence 0: positions 2, 3 predict 6, 7; last real token and virtual rows masked.
    CHECK(targets == std::vector<int>{-1, -1, 6, 7, -1, -1, -1, -1, -1, -1});
}

TEST_CASE("forward shapes and errors") {
    const auto m = BaseModel<float>::init(tiny(), 3);
    const auto tb = random_batch(3, 5, 40, 10);
    const auto out = forward_lm(m, tb);
    CHECK(out.logits.shape() == Shape{3, 5, 40});

    const ClassifierHead<float> head = ClassifierHead<float>::init(16, TaskSpec::multiclass("x", 4), 1);
    CHECK(forward_classify(m, head, tb).shape() == Shape{3, 4});

    auto bad = tb;
    bad.ids[0] = 40;
    CHECK_THROWS_AS(forward_lm(m, bad), UsageError);
    const auto too_long = random_batch(1, 33, 40, 11);
    CHECK_THROWS_AS(forward_lm(m, too_long), UsageError);
}

TEST_CASE("causality and padding independence") {
    const auto m = BaseModel<double>::init(tiny(), 4);
    auto seq = test_support::random_ids(8, 40, 20);
    const auto base = forward_lm(m, TokenBatch::from_sequences({seq}));
    auto changed = seq;
    changed[5] = changed[5] == 9 ? 10 : 9;
    const auto alt = forward_lm(m, TokenBatch::from_sequences({changed}));
    const std::size_t v = 40;
    for (std::size_t i = 0; i < 5 * v; ++i) REQUIRE(alt.logits.at(i) == base.logits.at(i));
    CHECK(alt.logits.at(5 * v) != base.logits.at(5 * v));

    // A shorter sequence padded in a batch sees the same logits as alone.
    const std::vector<int> short_seq(seq.begin(), seq.begin() + 4);
    const auto alone = forward_lm(m, TokenBatch::from_sequences({short_seq}));
    const auto padded = forward_lm(m, TokenBatch::from_sequences({seq, short_seq}));
    for (std::size_t i = 0; i < 4 * v; ++i) {
        CHECK(padded.logits.at(8 * v + i) == doctest::Approx(alone.logits.at(i)).epsilon(1e-12));
    }
}

TEST_CASE("classification pools the last real token") {
    const auto m = BaseModel<double>::init(tiny(), 5);
    const auto head = ClassifierHead<double>::init(16, TaskSpec::binary("b"), 2);
    const std::vector<int> s{4, 9, 13};
    const auto alone = forward_classify(m, head, TokenBatch::from_sequences({s}));
    const auto batched =
        forward_classify(m, head, TokenBatch::from_sequences({{7, 8, 9, 10, 11, 12}, s}));
    CHECK(batched.at(1) == doctest::Approx(alone.at(0)).epsilon(1e-12));
}

TEST_CASE("uniform logits give ln(vocab) loss") {
    auto m = BaseModel<float>::init(tiny(), 6);
    for (auto& x : m.lm_head.mutable_data()) x = 0.0f;
    const auto tb = random_batch(2, 6, 40, 30);
    const auto out = forward_lm(m, tb);
    const auto targets = lm_targets(tb, 0);
    CHECK(cross_entropy(out.logits, std::span<const int>(targets)).item() ==
          doctest::Approx(std::log(40.0)).epsilon(1e-6));
}

TEST_CASE("full model gradients match finite differences") {
    auto m = BaseModel<double>::init(tiny(), 9);
    // Larger weights than the default init make every path matter numerically.
    for (auto& p : m.named_parameters()) {
        Rng rng(derive_seed(77, p.tensor.numel()));
        for (auto& x : p.tensor.mutable_data()) x += 0.2 * rng.gaussian();
    }
    m.set_trainable(true);
    const auto tb = random_batch(2, 5, 40, 40);
    const auto targets = lm_targets(tb, 0);
    std::vector<TensorD> params;
    for (auto& p : m.named_parameters()) params.push_back(p.tensor);
    const auto report = grad_check_params(
        [&] {
            return cross_entropy(forward_lm(m, tb).logits, std::span<const int>(targets));
        },
        params, 1e-6, 300, 5);
    CHECK(report.coordinates == 300);
    CHECK(report.max_rel_error < 1e-5);
}

TEST_CASE("cast and clone") {
    const auto m = BaseModel<float>::init(tiny(), 2);
    const auto d = m.cast<double>();
    CHECK(d.embedding.at(5) == static_cast<double>(m.embedding.at(5)));
    auto c = m.clone();
    c.embedding.mutable_data()[0] += 1.0f;
    CHECK(c.embedding.at(0) != m.embedding.at(0));
}
