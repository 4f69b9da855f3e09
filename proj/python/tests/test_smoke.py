import math

import numpy as np
import pytest

import peft_forge as pf


def test_accounting_and_metrics():
    lora = pf.adapter_config("lora", {"r": 16, "targets": ["q", "v"]})
    count, fraction = pf.count_trainable(lora, pf.llama_7b_config())
    assert count == 8388608
    assert pf.format_percent(fraction) == "0.12%"

    assert pf.macro_average([59.43, 84.65, 72.71]) == 72.26
    assert pf.auroc_binary([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75
    assert pf.auroc_binary([0.1, 0.2], [1, 1]) is None
    assert pf.perplexity(5 * math.log(2.0), 5) == pytest.approx(2.0)

    onehot = np.eye(3)[[0, 1, 2, 1]]
    assert pf.auroc_multiclass(onehot, [0, 1, 2, 1]) == 1.0
    labels = np.array([[1, 0], [0, 1], [1, 1], [0, 0]], dtype=np.uint8)
    assert pf.auroc_multilabel(labels.astype(float), labels) == 1.0


def test_errors_map_to_python_exceptions(tmp_path):
    with pytest.raises(ValueError):
        pf.macro_average([])
    with pytest.raises(pf.DataError):
        pf.inspect_checkpoint(tmp_path / "absent.peft")
    with pytest.raises(pf.UsageError):
        pf.adapter_config("lora", {"r": 0})


def test_identity_at_init_and_merge(tmp_path):
    model = pf.Model.init({"n_layers": 1, "d_model": 32, "n_heads": 2, "d_ff": 64}, seed=1)
    adapter = pf.Adapter.create(pf.adapter_config("lora", {"r": 4}), model, seed=2)
    seqs = [[5, 6, 7, 8], [9, 10]]
    plain = model.logits(seqs)
    assert plain.shape == (2, 4, 512)
    assert np.array_equal(model.logits(seqs, adapter), plain)

    merged = pf.merge_lora(model, adapter)
    assert np.array_equal(merged.logits(seqs), plain)

    path = tmp_path / "lora.peft"
    adapter.save(path)
    info = pf.inspect_checkpoint(path)
    assert info["kind"] == "adapter"
    assert info["payload_bytes"] == 4 * adapter.parameter_count()
    again = pf.Adapter.load(path, model)
    assert again.config == adapter.config


def test_two_stage_pipeline(tmp_path):
    vocab = pf.Vocab.synthetic()
    general, domain = pf.generate_corpora(3, 100, 100)
    model = pf.Model.init({"d_model": 32, "n_heads": 2, "d_ff": 64, "max_seq_len": 64}, seed=3)
    quick = {"epochs": 1, "max_steps": 3, "batch_size": 8, "grad_accum_steps": 1, "learning_rate": 3e-3,
             "max_seq_len": 64}
    model.pretrain(general, quick)
    model.save(tmp_path / "base.peft", vocab)
    loaded, stored_vocab = pf.Model.load(tmp_path / "base.peft")
    assert stored_vocab == vocab

    adapter = pf.Adapter.create(pf.adapter_config("lora"), loaded, seed=4)
    before = loaded.perplexity(domain, adapter)
    history = adapter.pretrain(loaded, domain, quick)
    assert history["steps"] == 3
    assert len(history["epochs"]) == 1
    assert loaded.perplexity(domain, adapter) < before

    pmv = pf.generate_datasets(5, 0.5)[0]
    assert pmv.task == "pmv"
    stack, h = pf.finetune(loaded, "domain_trainable_plus_downstream", pmv, quick, domain=adapter, seed=6)
    assert 0.0 <= h["test_auroc"] <= 1.0
    assert stack.evaluate(pmv) == h["test_auroc"]
    stack.save(tmp_path / "pmv.stack.peft")
    replay = pf.Stack.load(tmp_path / "pmv.stack.peft", loaded)
    assert replay.variant == "domain_trainable_plus_downstream"
    assert replay.evaluate(pmv) == h["test_auroc"]


def test_search_with_python_objective():
    def objective(cfg):
        return -abs(math.log2(cfg["r"]) - 3) - abs(cfg["alpha"] - 16) / 16

    trials = pf.search("finetune", "lora", objective, max_trials=12, seed=1)
    assert trials[-1]["type"] == "best"
    points = [t["grid_index"] for t in trials[:-1]]
    assert len(points) == 12
    assert len(set(points)) == 12
    assert pf.search("finetune", "lora", objective, max_trials=12, seed=1) == trials
