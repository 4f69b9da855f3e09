#include <cmath>

#include "doctest.h"
#include "peft_forge/adapters.hpp"
#include "peft_forge/error.hpp"
#include "peft_forge/stacking.hpp"
#include "support.hpp"

using namespace peft_forge;

namespace {

ModelConfig tiny() {
    ModelConfig c;
    c.vocab_size = 40;
    c.d_model = 16;
    c.n_layers = 3;
    c.n_heads = 2;
    c.d_ff = 24;
    c.max_seq_len = 48;
    return c;
}

TokenBatch random_batch(std::size_t batch, std::size_t seq, std::uint64_t seed) {
    std::vector<std::vector<int>> seqs;
    for (std::size_t b = 0; b < batch; ++b) {
        seqs.push_back(test_support::random_ids(seq - b, 40, seed + b));
    }
    return TokenBatch::from_sequences(seqs);
}

template <typename T>
void perturb(AnyAdapter<T>& a, double sd, std::uint64_t seed) {
    Rng rng(seed);
    for (auto& p : named_parameters(a)) {
        for (auto& x : p.tensor.mutable_data()) x += static_cast<T>(sd * rng.gaussian());
    }
}

template <typename T>
bool bit_equal(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    return a.shape() == b.shape() && std::equal(a.data().begin(), a.data().end(), b.data().begin());
}

/// Hooks wrapper for a single adapter.
template <typename T>
AdapterStack<T> single(const BaseModel<T>& base, const AnyAdapter<T>& a) {
    return AdapterStack<T>::for_pretraining(base, a);
}

}  // namespace

TEST_CASE("LoRA delta on the hand example") {
    ModelConfig c;
    c.vocab_size = 8;
    c.d_model = 2;
    c.n_layers = 1;
    c.n_heads = 1;
    c.d_ff = 2;
    LoraConfig lc;
    lc.r = 1;
    lc.alpha = 2.0;
    lc.dropout = 0.0;
    auto lora = LoraAdapter<double>::init(lc, c, 1);
    lora.modules[0].a = TensorD::from_data({1, 2}, {1, 2});
    lora.modules[0].b = TensorD::from_data({2, 1}, {1, 0});
    const TensorD x = TensorD::from_data({1, 2}, {1, 1});
    const TensorD d = lora.delta(0, Projection::q, x, {});
    CHECK(d.at(0) == 6.0);
    CHECK(d.at(1) == 0.0);
    // Dense update agrees with the factored product: x * dW.
    const TensorD dense = matmul(x, lora.dense_delta(0, Projection::q));
    CHECK(dense.at(0) == 6.0);
    CHECK(dense.at(1) == 0.0);
    CHECK_THROWS_AS(lora.delta(0, Projection::k, x, {}), UsageError);
}

TEST_CASE("LoRA config rules") {
    const ModelConfig c = tiny();
    LoraConfig lc;
    lc.r = 17;
    CHECK_THROWS_AS(LoraAdapter<float>::init(lc, c, 1), UsageError);
    lc.r = 4;
    lc.targets.clear();
    CHECK_THROWS_AS(LoraAdapter<float>::init(lc, c, 1), UsageError);
    lc.targets = {Projection::q, Projection::v};
    const auto a = LoraAdapter<float>::init(lc, c, 1);
    for (const auto& m : a.modules) {
        for (float x : m.b.data()) REQUIRE(x == 0.0f);
        CHECK(m.a.requires_grad());
    }
    CHECK(parse_projection("wq") == Projection::q);
    CHECK_THROWS_AS(parse_projection("x"), UsageError);
}

TEST_CASE("parameter counts match closed forms") {
    ModelConfig toy;  // d 64, 2 layers
    LoraConfig lc;
    lc.r = 4;
    const AnyAdapter<float> lora = LoraAdapter<float>::init(lc, toy, 1);
    CHECK(parameter_count(lora) == 2048);
    CHECK(lc.parameter_count(toy) == 2048);

    const auto base = BaseModel<float>::init(tiny(), 2);
    const std::vector<int> ids{4, 5, 6, 7};
    PrefixConfig pre;
    pre.num_virtual_tokens = 5;
    PrefixConfig pre_proj = pre;
    pre_proj.prefix_projection = true;
    PromptConfig prompt;
    prompt.num_virtual_tokens = 6;
    PTuningConfig mlp;
    mlp.num_virtual_tokens = 4;
    mlp.hidden = 64;
    mlp.num_layers = 2;
    PTuningConfig lstm = mlp;
    lstm.reparameterisation = Reparameterisation::lstm;
    AdaptionPromptConfig ap;
    ap.adapter_length = 5;
    ap.adapter_layers = 10;
    const std::vector<AnyAdapterConfig> configs{LoraConfig{}, pre,  pre_proj, prompt,
                                                mlp,          lstm, ap};
    for (const auto& cfg : configs) {
        const auto a = make_adapter<float>(cfg, base, std::span<const int>(ids), 3);
        CHECK(parameter_count(a) == parameter_count(cfg, base.config));
        CHECK(technique_of(a) == technique_of(cfg));
    }
    // Direct enumerations.
    CHECK(pre.parameter_count(tiny()) == 5 * 2 * 3 * 16);
    CHECK(prompt.parameter_count(tiny()) == 6 * 16);
    CHECK(ap.parameter_count(tiny()) == 3 * (5 * 16 + 1));
}

TEST_CASE("paper-scale parameter accounting") {
    const ModelConfig big = ModelConfig::llama_7b();
    LoraConfig lc;
    lc.r = 16;
    const auto count = count_trainable(AnyAdapterConfig(lc), big);
    CHECK(count.count == 8388608ull);
    CHECK(format_percent(count.fraction) == "0.12%");

    AdaptionPromptConfig ap;
    ap.adapter_length = 10;
    ap.adapter_layers = 30;
    CHECK(ap.parameter_count(big) == 30ull * (10 * 4096 + 1));
    PromptConfig prompt;
    prompt.num_virtual_tokens = 15;
    CHECK(prompt.parameter_count(big) == 61440);
    PrefixConfig prefix;
    prefix.num_virtual_tokens = 20;
    CHECK(prefix.parameter_count(big) == 20ull * 2 * 32 * 4096);
}

TEST_CASE("identity at init for LoRA and adaption prompt") {
    const auto base = BaseModel<float>::init(tiny(), 4);
    LoraConfig lc;
    lc.r = 4;
    lc.targets = {Projection::q, Projection::k, Projection::v, Projection::o};
    AdaptionPromptConfig ap;
    ap.adapter_layers = 2;
    const AnyAdapter<float> lora = LoraAdapter<float>::init(lc, base.config, 5);
    const AnyAdapter<float> gated = AdaptionPromptAdapter<float>::init(ap, base.config, 6);
    for (std::uint64_t trial = 0; trial < 5; ++trial) {
        const auto tb = random_batch(3, 7, 100 + trial * 7);
        const auto plain = forward_lm(base, tb);
        CHECK(bit_equal(single(base, lora).forward_lm(tb).logits, plain.logits));
        CHECK(bit_equal(single(base, gated).forward_lm(tb).logits, plain.logits));
    }
}

TEST_CASE("adaption prompt layers and gate") {
    const ModelConfig c = tiny();
    AdaptionPromptConfig ap;
    ap.adapter_layers = 30;  // capped at n_layers
    auto a = AdaptionPromptAdapter<double>::init(ap, c, 1);
    CHECK(a.prompts.size() == 3);
    CHECK(a.first_layer == 0);
    ap.adapter_layers = 2;
    a = AdaptionPromptAdapter<double>::init(ap, c, 1);
    CHECK(a.first_layer == 1);
    CHECK(a.gated_prompts(0).empty());
    CHECK(a.gated_prompts(2).size() == 1);
    CHECK(a.prompts[0].gate.at(0) == 0.0);

    // Saturated gate with a single prompt row yields that row's value projection.
    ap.adapter_length = 1;
    a = AdaptionPromptAdapter<double>::init(ap, c, 2);
    a.prompts[1].gate.mutable_data()[0] = 40.0;
    const TensorD q = TensorD::gaussian({4, 16}, 0, 1, 3);
    const TensorD wk = TensorD::gaussian({16, 16}, 0, 1, 4);
    const TensorD wv = TensorD::gaussian({16, 16}, 0, 1, 5);
    const TensorD out = adaption_prompt_forward(a, 2, q, wk, wv);
    const TensorD value = matmul(a.prompts[1].rows, wv);
    for (std::size_t r = 0; r < 4; ++r)
        for (std::size_t j = 0; j < 16; ++j) CHECK(out.at(r * 16 + j) == doctest::Approx(value.at(j)));
    CHECK_THROWS_AS(adaption_prompt_forward(a, 0, q, wk, wv), UsageError);
}

TEST_CASE("prefix tuning") {
    const auto base = BaseModel<double>::init(tiny(), 7);
    PrefixConfig pc;
    pc.num_virtual_tokens = 4;
    auto raw = PrefixAdapter<double>::init(pc, base.config, 1);
    const auto kv = raw.prefix_kv(1, {});
    CHECK(kv->first.impl() == raw.keys[1].impl());
    CHECK(kv->first.shape() == Shape{4, 16});

    pc.prefix_projection = true;
    const auto proj = PrefixAdapter<double>::init(pc, base.config, 2);
    for (std::size_t l = 0; l < 3; ++l) {
        const auto p = proj.prefix_kv(l, {});
        CHECK(p->first.shape() == Shape{4, 16});
        CHECK(p->second.shape() == Shape{4, 16});
    }
    pc.num_virtual_tokens = 0;
    CHECK_THROWS_AS(PrefixAdapter<double>::init(pc, base.config, 1), UsageError);

    // Query count unchanged; prefix changes outputs.
    const auto tb = random_batch(2, 5, 60);
    const AnyAdapter<double> any = raw;
    const auto out = single(base, any).forward_lm(tb);
    CHECK(out.logits.shape() == Shape{2, 5, 40});
    CHECK(out.virtual_tokens == 0);
    CHECK_FALSE(bit_equal(out.logits, forward_lm(base, tb).logits));
}

TEST_CASE("prompt tuning") {
    const auto base = BaseModel<double>::init(tiny(), 8);
    PromptConfig pc;
    pc.num_virtual_tokens = 4;
    const std::vector<int> ids{4, 5, 6, 7};
    const auto exact = PromptAdapter<double>::init(pc, base, std::span<const int>(ids), 1);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 16; ++j)
            CHECK(exact.rows.at(i * 16 + j) == base.embedding.at(ids[i] * 16 + j));

    pc.num_virtual_tokens = 6;
    const auto cycled = PromptAdapter<double>::init(pc, base, std::span<const int>(ids), 1);
    CHECK(cycled.rows.at(4 * 16) == base.embedding.at(4 * 16));
    pc.num_virtual_tokens = 2;
    const auto truncated = PromptAdapter<double>::init(pc, base, std::span<const int>(ids), 1);
    CHECK(truncated.rows.at(16) == base.embedding.at(5 * 16));

    CHECK_THROWS_AS(PromptAdapter<double>::init(pc, base, {}, 1), UsageError);
    pc.init = PromptInit::random;
    CHECK_NOTHROW(PromptAdapter<double>::init(pc, base, {}, 1));

    // Virtual rows lengthen the sequence; with identity-like rows the token
    // logits are those of a sequence prefixed by the init tokens.
    pc.num_virtual_tokens = 4;
    pc.init = PromptInit::text;
    const AnyAdapter<double> any = PromptAdapter<double>::init(pc, base, std::span<const int>(ids), 1);
    const std::vector<int> s{9, 10, 11};
    const auto out = single(base, any).forward_lm(TokenBatch::from_sequences({s}));
    CHECK(out.virtual_tokens == 4);
    CHECK(out.logits.shape() == Shape{1, 7, 40});
    std::vector<int> joined = ids;
    joined.insert(joined.end(), s.begin(), s.end());
    const auto ref = forward_lm(base, TokenBatch::from_sequences({joined}));
    for (std::size_t i = 0; i < 7 * 40; ++i)
        CHECK(out.logits.at(i) == doctest::Approx(ref.logits.at(i)).epsilon(1e-12));
}

TEST_CASE("p-tuning encoders") {
    const auto base = BaseModel<double>::init(tiny(), 9);
    PTuningConfig pc;
    pc.num_virtual_tokens = 3;
    pc.hidden = 64;
    for (auto kind : {Reparameterisation::mlp, Reparameterisation::lstm}) {
        pc.reparameterisation = kind;
        pc.num_layers = 2;
        const auto a = PTuningAdapter<double>::init(pc, base.config, 3);
        const auto rows = a.virtual_tokens({});
        CHECK(rows->shape() == Shape{3, 16});
    }
}

TEST_CASE("adapter gradients through the full model") {
    auto base = BaseModel<double>::init(tiny(), 10);
    // Larger weights than the default init keep gradients well above the
    // finite-difference noise floor.
    for (auto& p : base.named_parameters()) {
        Rng rng(derive_seed(78, p.tensor.numel()));
        for (auto& x : p.tensor.mutable_data()) x += 0.2 * rng.gaussian();
    }
    const std::vector<int> ids{4, 5, 6, 7};
    LoraConfig lc;
    lc.r = 2;
    lc.dropout = 0.0;
    PrefixConfig pre;
    pre.num_virtual_tokens = 2;
    pre.prefix_projection = true;
    PTuningConfig lstm;
    lstm.num_virtual_tokens = 2;
    lstm.hidden = 8;
    lstm.reparameterisation = Reparameterisation::lstm;
    PTuningConfig mlp = lstm;
    mlp.reparameterisation = Reparameterisation::mlp;
    AdaptionPromptConfig ap;
    ap.adapter_length = 3;
    PromptConfig prompt;
    prompt.num_virtual_tokens = 3;
    const std::vector<AnyAdapterConfig> configs{lc, pre, prompt, mlp, lstm, ap};
    const auto tb = random_batch(2, 5, 70);
    for (const auto& cfg : configs) {
        CAPTURE(technique_name(technique_of(cfg)));
        auto a = make_adapter<double>(cfg, base, std::span<const int>(ids), 4);
        perturb(a, 0.3, 5);  // move off the zero-init point so every path carries gradient
        if (auto* g = std::get_if<AdaptionPromptAdapter<double>>(&a)) {
            for (auto& p : g->prompts) p.gate.mutable_data()[0] = 0.7;
        }
        const auto stack = single(base, a);
        const auto targets = lm_targets(tb, stack.virtual_tokens({}) ? stack.virtual_tokens({})->dim(0) : 0);
        std::vector<TensorD> params;
        for (auto& p : stack.trainable_parameters()) params.push_back(p.tensor);
        const auto report = grad_check_params(
            [&] { return cross_entropy(stack.forward_lm(tb).logits, std::span<const int>(targets)); },
            params, 1e-5, 150, 6);
        CAPTURE(report.worst_param);
        CAPTURE(report.worst_analytic);
        CAPTURE(report.worst_numeric);
        // Some of these gradients are ~1e-7, where central differences carry
        // ~1e-11 of rounding noise; structural errors would be orders larger.
        CHECK(report.max_rel_error < 1e-4);
    }
}

TEST_CASE("eval-mode determinism with dropout configured") {
    const auto base = BaseModel<float>::init(tiny(), 11);
    LoraConfig lc;
    lc.r = 4;
    lc.dropout = 0.2;
    AnyAdapter<float> a = LoraAdapter<float>::init(lc, base.config, 1);
    perturb(a, 0.1, 2);
    const auto stack = single(base, a);
    const auto tb = random_batch(2, 6, 80);
    CHECK(bit_equal(stack.forward_lm(tb).logits, stack.forward_lm(tb).logits));
    ForwardMode training{true, nullptr};
    CHECK_THROWS_AS(stack.forward_lm(tb, training), UsageError);
    Rng rng(3);
    training.rng = &rng;
    CHECK_FALSE(bit_equal(stack.forward_lm(tb, training).logits, stack.forward_lm(tb).logits));
}

TEST_CASE("named parameters, load and clone") {
    const auto base = BaseModel<float>::init(tiny(), 12);
    AnyAdapter<float> a = LoraAdapter<float>::init(LoraConfig{}, base.config, 1);
    const auto names = named_parameters(a);
    CHECK(names.front().name == "layers.0.wq.lora_a");
    const auto copy = clone(a);
    perturb(a, 1.0, 3);
    CHECK_FALSE(bit_equal(named_parameters(copy)[0].tensor, named_parameters(a)[0].tensor));
    CHECK_FALSE(named_parameters(copy)[0].tensor.requires_grad());

    auto tensors = named_parameters(copy);
    tensors.pop_back();
    AnyAdapter<float> target = clone(a);
    CHECK_THROWS_AS(load_parameters(target, tensors), DataError);
    CHECK(parse_technique("adaption") == Technique::adaption_prompt);
    CHECK_THROWS_AS(parse_technique("ia3"), UsageError);
}
