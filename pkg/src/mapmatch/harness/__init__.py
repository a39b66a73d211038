"""Experiment pipeline and manifest plumbing."""

from .pipeline import (
    FINETUNE_MASKS,
    ExperimentSpec,
    SplitSpec,
    derive_seed,
    evaluate_predictions,
    export_attention,
    match_corpus_hmm,
    match_corpus_transformer,
    run_experiment,
    split_corpus,
)

__all__ = [
    "FINETUNE_MASKS",
    "ExperimentSpec",
    "SplitSpec",
    "derive_seed",
    "evaluate_predictions",
    "export_attention",
    "match_corpus_hmm",
    "match_corpus_transformer",
    "run_experiment",
    "split_corpus",
]
