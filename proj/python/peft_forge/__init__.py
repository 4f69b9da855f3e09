"""Parameter-efficient fine-tuning of small decoder-only models.

Configurations are plain dicts in the JSON form used by checkpoint headers;
see ``model_config()`` and ``adapter_config()`` for the defaults.
"""

from ._core import (
    Adapter,
    Corpus,
    DataError,
    Dataset,
    Model,
    NumericError,
    Stack,
    UsageError,
    Vocab,
    adapter_config,
    auroc_binary,
    auroc_multiclass,
    auroc_multilabel,
    count_trainable,
    finetune,
    format_percent,
    generate_corpora,
    generate_datasets,
    inspect_checkpoint,
    llama_7b_config,
    macro_average,
    merge_lora,
    model_config,
    perplexity,
    search,
)

VARIANTS = (
    "head_only",
    "lora_only",
    "domain_frozen",
    "domain_frozen_plus_downstream",
    "domain_trainable",
    "domain_trainable_plus_downstream",
)

__all__ = [name for name in dir() if not name.startswith("_")]
