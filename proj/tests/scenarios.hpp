#pragma once

// Multi-module scenarios shared by the unit tests and the acceptance runner.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <set>
#include <string>

#include "peft_forge/error.hpp"
#include "peft_forge/hpo.hpp"
#include "peft_forge/stacking.hpp"
#include "peft_forge/store.hpp"
#include "peft_forge/train.hpp"
#include "support.hpp"

namespace scenarios {

using namespace peft_forge;

struct Outcome {
    bool ok = true;
    std::string detail;

    void fail(const std::string& why) {
        if (ok) detail = why;
        ok = false;
    }
};

/// Trains `variant` for `steps` optimizer steps on the pmv task and checks
/// that exactly the declared trainable tensors changed.
inline Outcome freeze_safety(Variant variant, std::size_t steps, std::uint64_t seed) {
    Outcome out;
    const ModelConfig mc;
    const auto base = BaseModel<float>::init(mc, seed);
    const auto spec = variant_spec(variant);
    std::optional<AnyAdapter<float>> domain, downstream;
    if (spec.uses_domain) {
        domain = make_adapter<float>(AnyAdapterConfig{LoraConfig{}}, base, {}, derive_seed(seed, 1));
    }
    if (spec.uses_downstream) {
        downstream = make_adapter<float>(AnyAdapterConfig{LoraConfig{}}, base, {}, derive_seed(seed, 2));
    }
    const auto datasets = gen_classification_datasets(seed, 0.5);
    const Dataset& pmv = datasets.front();
    auto stack = compose(base, variant, domain, downstream, pmv.task, derive_seed(seed, 3));

    const auto base_before = test_support::bytes_hash(base.named_parameters());
    const auto before = test_support::snapshot(stack.named_parameters());
    std::set<std::string> declared;
    for (const auto& nt : stack.trainable_parameters()) declared.insert(nt.name);
    for (const auto& [name, data] : before) {
        const bool head = name.rfind("head.", 0) == 0;
        const bool dom = name.rfind("domain.", 0) == 0;
        const bool down = name.rfind("downstream.", 0) == 0;
        const bool expected = head || (dom && spec.domain_trainable) || down;
        if (expected != static_cast<bool>(declared.count(name))) {
            out.fail("declared trainable set disagrees with the variant at " + name);
        }
    }

    TrainConfig cfg = TrainConfig::finetune_defaults();
    cfg.learning_rate = 1e-3;
    cfg.grad_accum_steps = 1;
    cfg.max_steps = steps;
    cfg.epochs = 100;
    cfg.seed = seed;
    const auto history = finetune_classify(stack, pmv, cfg);
    if (history.steps.size() != steps) out.fail("ran " + std::to_string(history.steps.size()) + " steps");

    if (test_support::bytes_hash(base.named_parameters()) != base_before) {
        out.fail("base weights changed");
    }
    if (test_support::bytes_hash(stack.base.named_parameters()) != base_before) {
        out.fail("stack base weights changed");
    }
    const auto after = test_support::snapshot(stack.named_parameters());
    for (const auto& [name, data] : before) {
        const bool changed = after.at(name) != data;
        if (changed != static_cast<bool>(declared.count(name))) {
            out.fail(name + (changed ? " changed but is frozen" : " is trainable but unchanged"));
        }
    }
    // The caller's adapters are never touched.
    if (domain && test_support::bytes_hash(named_parameters(*domain)) !=
                      test_support::bytes_hash(named_parameters(make_adapter<float>(
                          AnyAdapterConfig{LoraConfig{}}, base, {}, derive_seed(seed, 1))))) {
        out.fail("caller's domain adapter changed");
    }
    return out;
}

/// max |a - b| / max |b| over two equally shaped tensors.
template <typename T>
double max_relative_diff(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    double diff = 0.0, scale = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        diff = std::max(diff, std::abs(static_cast<double>(a.at(i)) - static_cast<double>(b.at(i))));
        scale = std::max(scale, std::abs(static_cast<double>(b.at(i))));
    }
    return diff / std::max(scale, 1e-30);
}

struct MergeResult {
    double single = 0.0;   // merged vs dynamic, one LoRA
    double stacked = 0.0;  // two stacked LoRAs vs merge-then-attach
    std::size_t steps = 0;
};

/// Trains two LoRA adapters (`steps` optimizer steps each) on a synthetic
/// domain corpus, then compares merged and dynamic forwards on held-out
/// windows.
inline MergeResult merge_equivalence(std::size_t steps, std::uint64_t seed) {
    const ModelConfig mc;
    const auto base = BaseModel<float>::init(mc, seed);
    const auto [general, domain] = gen_domain_corpora(seed, 100, 200);

    TrainConfig cfg;
    cfg.learning_rate = 1e-3;
    cfg.batch_size = 4;
    cfg.grad_accum_steps = 1;
    cfg.max_steps = steps;
    cfg.epochs = 1000;
    cfg.max_seq_len = 64;
    cfg.seed = seed;

    LoraConfig lc;
    lc.targets = {Projection::q, Projection::k, Projection::v, Projection::o};
    auto first = AdapterStack<float>::for_pretraining(
        base, make_adapter<float>(AnyAdapterConfig{lc}, base, {}, derive_seed(seed, 1)));
    MergeResult r;
    r.steps = pretrain_lm(first, domain, cfg).steps.size();
    auto second = AdapterStack<float>::for_pretraining(
        base, make_adapter<float>(AnyAdapterConfig{lc}, base, {}, derive_seed(seed, 2)));
    r.steps += pretrain_lm(second, general, cfg).steps.size();

    const auto& a = first.domain->adapter;
    const auto& b = second.domain->adapter;
    const auto windows = chunk_documents(domain.documents_in(Split::test), 64);
    std::vector<std::vector<int>> some(windows.begin(),
                                       windows.begin() + static_cast<std::ptrdiff_t>(std::min<std::size_t>(8, windows.size())));
    const auto batch = TokenBatch::from_sequences(some);
    NoGradGuard guard;

    const auto merged = merge_lora(base, a);
    const auto dynamic = AdapterStack<float>::for_pretraining(base, a).forward_lm(batch).logits;
    r.single = max_relative_diff(forward_lm(merged, batch).logits, dynamic);

    AdapterStack<float> both;
    both.base = base;
    both.domain = AttachedAdapter<float>{clone(a), true};
    both.downstream = AttachedAdapter<float>{clone(b), true};
    const auto stacked = both.forward_lm(batch).logits;
    const auto attached = AdapterStack<float>::for_pretraining(merged, b).forward_lm(batch).logits;
    r.stacked = max_relative_diff(attached, stacked);
    return r;
}

/// Seeded smooth objective over the encoded grid: a weighted negative
/// squared distance to a random target.
inline Objective smooth_objective(const SearchSpace& space, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<double> centre(space.encoded_size()), weight(space.encoded_size());
    for (std::size_t i = 0; i < centre.size(); ++i) {
        centre[i] = rng.uniform();
        weight[i] = 0.5 + rng.uniform();
    }
    return [space, centre, weight](const Point& p) {
        const auto x = encode(p, space);
        double f = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) f -= weight[i] * (x[i] - centre[i]) * (x[i] - centre[i]);
        return f;
    };
}

/// Budget, uniqueness, determinism and top-5% quality of one search,
/// checked against exhaustive enumeration of the grid.
inline Outcome hpo_contract(const SearchSpace& space, std::uint64_t seed) {
    Outcome out;
    const auto objective = smooth_objective(space, seed);
    SearchOptions opt;
    opt.seed = seed;
    const auto a = search(space, objective, opt);
    const auto b = search(space, objective, opt);
    if (a.history.size() > 20) out.fail("more than 20 trials");
    std::set<std::size_t> seen;
    for (const auto& t : a.history) {
        if (!seen.insert(t.grid_index).second) out.fail("repeated grid point");
    }
    if (a.history.size() != b.history.size()) out.fail("non-deterministic history length");
    for (std::size_t i = 0; i < std::min(a.history.size(), b.history.size()); ++i) {
        if (a.history[i].grid_index != b.history[i].grid_index) out.fail("non-deterministic trial sequence");
    }
    std::vector<double> all;
    for (std::size_t i = 0; i < space.grid_size(); ++i) all.push_back(objective(space.point_at(i)));
    std::sort(all.begin(), all.end());
    // Value at the 95th percentile of the grid.
    const std::size_t k = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(all.size()))) - 1;
    const double best = *a.best_trial().objective;
    double observed = -1e300;
    for (const auto& t : a.history) observed = std::max(observed, *t.objective);
    if (best != observed) out.fail("returned best is not the best observed");
    if (best < all[k]) out.fail("best " + std::to_string(best) + " below the 95th percentile " + std::to_string(all[k]));
    return out;
}

inline std::string file_bytes(const std::filesystem::path& p) {
    std::ifstream f(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), {}};
}

/// Model configs that differ from `mc` in exactly one field.
inline std::vector<ModelConfig> one_field_changes(const ModelConfig& mc) {
    std::vector<ModelConfig> out(7, mc);
    out[0].vocab_size = mc.vocab_size / 2;
    out[1].d_model = mc.d_model / 2;
    out[2].n_layers = mc.n_layers + 1;
    out[3].n_heads = mc.n_heads / 2;
    out[4].d_ff = mc.d_ff / 2;
    out[5].max_seq_len = mc.max_seq_len / 2;
    out[6].rms_eps = mc.rms_eps * 10;
    return out;
}

/// Byte-level round trips of every checkpoint kind, the adapter/base size
/// ratio, and fingerprint rejection for every single-field config change.
/// Files go under `dir`, which must exist.
inline Outcome persistence(const std::filesystem::path& dir, std::uint64_t seed) {
    Outcome out;
    const ModelConfig mc;
    const auto base = BaseModel<double>::init(mc, seed);
    auto roundtrip = [&](const std::string& name, auto save, auto load_and_save) {
        const auto a = dir / (name + ".a"), b = dir / (name + ".b");
        save(a);
        load_and_save(a, b);
        if (file_bytes(a) != file_bytes(b)) out.fail(name + ": save-load-save is not byte-identical");
    };

    roundtrip(
        "base", [&](const auto& p) { save_base(base, p); },
        [&](const auto& a, const auto& b) { save_base(load_base<double>(a).model, b); });

    const AnyAdapterConfig configs[] = {LoraConfig{}, PrefixConfig{}, PromptConfig{}, PTuningConfig{},
                                        AdaptionPromptConfig{}};
    for (const auto& cfg : configs) {
        const auto adapter = make_adapter<double>(cfg, base, std::vector<int>{5, 6, 7}, derive_seed(seed, 1));
        const std::string name(technique_name(technique_of(cfg)));
        roundtrip(
            name, [&](const auto& p) { save_adapter(adapter, p); },
            [&](const auto& a, const auto& b) { save_adapter(load_adapter<double>(a, base), b); });
    }

    const TaskSpec diag{"diag", TaskKind::multilabel, 6};
    const auto dom = make_adapter<double>(AnyAdapterConfig{LoraConfig{}}, base, {}, derive_seed(seed, 2));
    const auto down = make_adapter<double>(AnyAdapterConfig{LoraConfig{}}, base, {}, derive_seed(seed, 3));
    const auto stack = compose(base, Variant::domain_trainable_plus_downstream, std::optional(dom),
                               std::optional(down), diag, derive_seed(seed, 4));
    roundtrip(
        "stack", [&](const auto& p) { save_stack(stack, p); },
        [&](const auto& a, const auto& b) { save_stack(load_stack<double>(a, base), b); });
    roundtrip(
        "head", [&](const auto& p) { save_head(*stack.head, mc, p); },
        [&](const auto& a, const auto& b) { save_head(load_head<double>(a, base), mc, b); });

    // Size ratio: payloads are exactly 4 bytes per parameter.
    LoraConfig small;
    small.r = 4;
    const auto lora = make_adapter<double>(AnyAdapterConfig{small}, base, {}, seed);
    save_adapter(lora, dir / "lora4.peft");
    const auto ai = inspect_checkpoint(dir / "lora4.peft");
    const auto bi = inspect_checkpoint(dir / "base.a");
    const double fraction = count_trainable(AnyAdapterConfig{small}, mc).fraction;
    if (ai.payload_bytes != 4 * ai.parameter_count) out.fail("adapter payload is not 4 bytes per parameter");
    if (static_cast<double>(ai.payload_bytes) / static_cast<double>(bi.payload_bytes) != fraction) {
        out.fail("payload ratio differs from the trainable fraction");
    }
    const double file_ratio = static_cast<double>(ai.file_bytes) / static_cast<double>(bi.file_bytes);
    const double overhead =
        static_cast<double>(12 + ai.header_bytes) / static_cast<double>(bi.payload_bytes);
    if (file_ratio < fraction || file_ratio > fraction + overhead) {
        out.fail("file ratio outside the header overhead band");
    }

    // Every pairing with a different base config is rejected.
    for (const auto& other_cfg : one_field_changes(mc)) {
        const auto other = BaseModel<double>::init(other_cfg, seed);
        auto rejected = [&](auto load) {
            try {
                load();
            } catch (const DataError& e) {
                return std::string(e.what()).find("fingerprint") != std::string::npos;
            }
            return false;
        };
        if (!rejected([&] { (void)load_adapter<double>(dir / "lora4.peft", other); }) ||
            !rejected([&] { (void)load_adapter<double>(dir / "prefix.a", other); }) ||
            !rejected([&] { (void)load_stack<double>(dir / "stack.a", other); }) ||
            !rejected([&] { (void)load_head<double>(dir / "head.a", other); })) {
            out.fail("a mismatched base was accepted");
        }
        const auto foreign = make_adapter<double>(AnyAdapterConfig{small}, other, {}, seed);
        save_adapter(foreign, dir / "foreign.peft");
        if (!rejected([&] { (void)load_adapter<double>(dir / "foreign.peft", base); })) {
            out.fail("an adapter for a different base was accepted");
        }
    }
    return out;
}

}  // namespace scenarios
