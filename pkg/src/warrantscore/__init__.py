"""warrantscore: warrant selection for argument reasoning.

A small, dependency-light implementation of a three-stage scorer (shared
BiLSTM sentence encoder, per-role localization, heuristic-feature logistic
regression) together with its full training and multi-seed evaluation
pipeline, a from-scratch reverse-mode autodiff core, and synthetic corpora
with decidable ground truth for desk-scale verification.
"""

from .bundle import BundleError, read_bundle, write_bundle
from .data import (
    ArcInstance,
    Batch,
    ScoredTriple,
    expand_instances,
    gen_pretrain_corpus,
    gen_synthetic_arc,
    make_batches,
    parse_arc_tsv,
    tokenize,
    write_arc_tsv,
)
from .encoder import (
    EncoderWeights,
    LstmDirectionWeights,
    LstmLayerWeights,
    SentenceRep,
    bilstm_forward,
    encode,
    lstm_step,
    read_encoder_bundle,
    scratch_encoder_weights,
    write_encoder_bundle,
)
from .model import (
    Localizer,
    OutputHead,
    WarrantScorer,
    heuristic_features,
    localize,
)
from .ndcore import (
    ShapeError,
    Tape,
    Tensor,
    affine,
    backward,
    concat,
    dropout,
    elementwise,
    grad_check,
    last_pool,
    masked_max_pool,
)
from .rng import RngStream
from .training import (
    AdamState,
    RunRecord,
    TrainConfig,
    adam_step,
    aggregate_runs,
    build_model,
    evaluate,
    load_model_bundle,
    loss,
    pretrain_encoder,
    run_pretraining,
    save_model_bundle,
    train,
)
from .vocab import (
    EmbeddingMatrix,
    Vocabulary,
    build_vocab,
    embed,
    load_embeddings,
)

__version__ = "0.1.0"

__all__ = [
    "ArcInstance", "AdamState", "Batch", "BundleError", "EmbeddingMatrix",
    "EncoderWeights", "Localizer", "LstmDirectionWeights", "LstmLayerWeights",
    "OutputHead", "RngStream", "RunRecord", "ScoredTriple", "SentenceRep",
    "ShapeError", "Tape", "Tensor", "TrainConfig", "Vocabulary",
    "WarrantScorer", "adam_step", "affine", "aggregate_runs", "backward",
    "bilstm_forward", "build_model", "build_vocab", "concat", "dropout",
    "elementwise", "embed", "encode", "evaluate", "expand_instances",
    "gen_pretrain_corpus", "gen_synthetic_arc", "grad_check",
    "heuristic_features", "last_pool", "load_embeddings", "load_model_bundle",
    "localize", "loss", "lstm_step", "make_batches", "masked_max_pool",
    "parse_arc_tsv", "pretrain_encoder", "read_bundle", "read_encoder_bundle",
    "run_pretraining", "save_model_bundle", "scratch_encoder_weights",
    "tokenize", "train", "write_arc_tsv", "write_bundle",
    "write_encoder_bundle",
]
