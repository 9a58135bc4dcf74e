"""Contrastive distillation on intermediate representations."""

from ._core import (
    CodirError,
    Dataset,
    Encoder,
    MemoryBank,
    bench,
    cosine,
    crd_loss,
    evaluate,
    generate_synthetic,
    grad_check,
    kd_loss,
    load_model,
    load_tsv,
    mask_tokens,
    sample_negatives_finetune,
    sample_negatives_pretrain,
    softmax,
    train,
)

__version__ = "0.1.0"
