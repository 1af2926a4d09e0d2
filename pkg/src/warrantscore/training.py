"""Optimization and the experiment protocol.

One training run is fully determined by its TrainConfig: Adam on the mean
binary cross-entropy plus a squared-L2 penalty over every trainable
parameter, at most max_epochs passes, and the epoch checkpoint with the
best development accuracy retained (earliest epoch on ties). Encoder
pretraining for the transfer experiment trains the same BiLSTM plus a
throwaway per-token head on duplicate detection, then keeps only the
encoder (and optionally exports the co-trained embeddings as a word-vector
text file, playing the role of generic pretrained embeddings downstream).
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace

import numpy as np

from .bundle import BundleError, read_bundle, write_bundle
from .data import ArcInstance, Batch, ScoredTriple, make_batches
from .encoder import (
    EncoderWeights,
    PRETRAINED,
    bilstm_forward,
    read_encoder_bundle,
    scratch_encoder_weights,
    write_encoder_bundle,
)
from .model import Localizer, OutputHead, WarrantScorer
from .ndcore import (
    Tape,
    Tensor,
    add,
    affine,
    backward,
    clamp,
    concat,
    hadamard,
    linear_const,
    log,
    mean_all,
    sigmoid,
    sqsum,
    zero_grads,
)
from .rng import RngStream
from .vocab import EmbeddingMatrix, Vocabulary, embed

PROB_CLAMP = 1e-12  # keeps the cross-entropy finite at saturated scores

POOLINGS = ("max", "last")
ENCODER_KINDS = ("scratch", "pretrained", "bow")


@dataclass
class TrainConfig:
    """All hyperparameters of one run. Defaults are the production values;
    the dimension fields may be shrunk for desk-scale experiments and are
    recorded with every run."""

    learning_rate: float = 0.001
    batch_size: int = 64
    max_epochs: int = 10
    l2_weight: float = 1e-5
    dropout_p: float = 0.1
    pooling: str = "max"            # max | last
    heuristics: bool = True
    encoder: str = "scratch"        # scratch | pretrained | bow
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    embed_dim: int = 300
    hidden_size: int = 300          # per direction
    feature_dim: int = 300
    localizer_init: str = "independent"  # independent | shared
    localizer_scale: float | str = 0.005  # float range, or "auto" to probe
    encoder_recurrent_scale: float = 1.0
    encoder_forget_bias: float = 0.0

    def validate(self):
        if self.localizer_init not in ("independent", "shared"):
            raise ValueError("localizer_init must be 'independent' or "
                             f"'shared', got '{self.localizer_init}'")
        if self.localizer_scale != "auto" and \
                not (isinstance(self.localizer_scale, (int, float))
                     and self.localizer_scale > 0):
            raise ValueError("localizer_scale must be a positive number "
                             f"or 'auto', got {self.localizer_scale!r}")
        if self.pooling not in POOLINGS:
            raise ValueError(f"pooling must be one of {POOLINGS}, "
                             f"got '{self.pooling}'")
        if self.encoder not in ENCODER_KINDS:
            raise ValueError(f"encoder must be one of {ENCODER_KINDS}, "
                             f"got '{self.encoder}'")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.max_epochs < 0:
            raise ValueError("max_epochs must be >= 0")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError("dropout_p must be in [0, 1)")
        return self

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @property
    def variant(self) -> str:
        """Human-readable model variant name for report tables."""
        kind = "bow" if self.encoder == "bow" else f"{self.encoder}-{self.pooling}"
        suffix = "w/ heuristics" if self.heuristics else "w/o heuristics"
        return f"{kind} ({suffix})"


def config_from_dict(values: dict) -> TrainConfig:
    known = {f.name for f in fields(TrainConfig)}
    unknown = set(values) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    return TrainConfig(**values).validate()


# --- optimizer ---------------------------------------------------------------


class AdamState:
    """First/second moment accumulators, one pair per parameter."""

    def __init__(self, params: list[Tensor]):
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]
        self.t = 0


def adam_step(params: list[Tensor], grads: list[np.ndarray], state: AdamState,
              lr: float, betas: tuple[float, float] = (0.9, 0.999),
              eps: float = 1e-8):
    """One bias-corrected Adam update, in place."""
    b1, b2 = betas
    state.t += 1
    t = state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g.shape != p.data.shape:
            raise ValueError(
                f"gradient shape {g.shape} does not match parameter "
                f"shape {p.data.shape}")
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * (g * g)
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        p.data -= lr * m_hat / (np.sqrt(v_hat) + eps)


# --- objective ---------------------------------------------------------------


def _bce_term(prob: Tensor, target: int) -> Tensor:
    """-log p(target) with the probability clamped away from 0 and 1."""
    p = prob if target == 1 else linear_const(prob, -1.0, 1.0)
    return linear_const(log(clamp(p, PROB_CLAMP, 1.0 - PROB_CLAMP)), -1.0, 0.0)


def l2_penalty(params: list[Tensor], l2_weight: float) -> Tensor | None:
    if l2_weight == 0.0:
        return None
    total = None
    for p in params:
        term = sqsum(p)
        total = term if total is None else add(total, term)
    return linear_const(total, l2_weight, 0.0)


def loss(batch: Batch, model: WarrantScorer, l2_weight: float,
         mode: str = "train") -> Tensor:
    """Mean binary cross-entropy over the batch plus the squared-L2 norm of
    every trainable parameter scaled by l2_weight."""
    if len(batch) == 0:
        raise ValueError("empty batch")
    terms = []
    for i in range(len(batch)):
        claim, reason, warrant, target = batch.triple(i)
        prob, _ = model.forward_ids(claim, reason, warrant, mode=mode)
        terms.append(_bce_term(prob, target))
    data_term = mean_all(concat(terms))
    penalty = l2_penalty(model.parameters(), l2_weight)
    return data_term if penalty is None else add(data_term, penalty)


# --- model assembly ----------------------------------------------------------


def build_model(config: TrainConfig, vocab: Vocabulary,
                embeddings: EmbeddingMatrix | None = None,
                encoder_weights: EncoderWeights | None = None) -> WarrantScorer:
    """Assemble a model per the config, deep-copying any provided arrays so
    runs never mutate shared inputs. Fresh weights use the run seed."""
    rng = RngStream(config.seed)
    if embeddings is None:
        emb = EmbeddingMatrix.random_init(vocab, rng.child(1), dim=config.embed_dim)
    else:
        if embeddings.dim != config.embed_dim:
            raise ValueError(
                f"embedding dim {embeddings.dim} != config embed_dim "
                f"{config.embed_dim}")
        emb = EmbeddingMatrix(Tensor(embeddings.weights.data.copy(),
                                     requires_grad=True))

    encoder = None
    if config.encoder == "scratch":
        encoder = scratch_encoder_weights(
            rng.child(2), hidden=config.hidden_size, in_dim=config.embed_dim,
            recurrent_scale=config.encoder_recurrent_scale,
            forget_bias=config.encoder_forget_bias)
        if encoder_weights is not None:
            raise ValueError("scratch config cannot take encoder weights")
    elif config.encoder == "pretrained":
        if encoder_weights is None:
            raise ValueError("pretrained config needs encoder weights")
        copied = [
            type(layer)(
                fwd=_copy_direction(layer.fwd),
                bwd=_copy_direction(layer.bwd),
            ) for layer in encoder_weights.layers
        ]
        encoder = EncoderWeights(layers=copied, provenance=PRETRAINED)
        if encoder.hidden != config.hidden_size:
            raise ValueError(
                f"encoder hidden size {encoder.hidden} != config hidden_size "
                f"{config.hidden_size}")

    rep_dim = config.embed_dim if config.encoder == "bow" else 2 * config.hidden_size
    scale = config.localizer_scale if config.localizer_scale != "auto" else 0.005
    localizer = Localizer.random_init(rng.child(3), rep_dim, config.feature_dim,
                                      shared=config.localizer_init == "shared",
                                      scale=float(scale))
    head = OutputHead.random_init(rng.child(4), config.feature_dim,
                                  config.heuristics)
    return WarrantScorer(vocab, emb, localizer, head, encoder=encoder,
                         pooling=config.pooling, encoder_kind=config.encoder,
                         dropout_p=config.dropout_p, rng=rng.child(5))


def calibrate_localizer(model: WarrantScorer, config: TrainConfig,
                        sample_triples: list[ScoredTriple],
                        target_rms: float = 0.5, probe_size: int = 64):
    """Data-dependent localizer init: redraw the role maps so pre-tanh
    activations have roughly ``target_rms`` spread on probe sentences
    (classic variance-calibrated init; encoders differ widely in the scale
    of their pooled outputs, which a fixed range cannot anticipate)."""
    probe = sample_triples[:probe_size]
    if not probe:
        raise ValueError("no probe sentences for localizer calibration")
    total = 0.0
    count = 0
    for t in probe:
        rep = model._sentence_rep(t.claim_ids, "eval")
        total += float((rep.data ** 2).sum())
        count += rep.size
    s_rms = np.sqrt(total / count)
    scale = target_rms / max(s_rms * np.sqrt(model.localizer.in_dim), 1e-12)
    model.localizer.reinit_weights(RngStream(config.seed).child(9), scale,
                                   shared=config.localizer_init == "shared")
    return scale


def _copy_direction(d):
    from .encoder import LstmDirectionWeights

    return LstmDirectionWeights(
        w_x=Tensor(d.w_x.data.copy(), requires_grad=True),
        w_h=Tensor(d.w_h.data.copy(), requires_grad=True),
        b=Tensor(d.b.data.copy(), requires_grad=True),
    )


# --- training loop -----------------------------------------------------------


@dataclass
class RunRecord:
    """Everything one run produced: the config, per-epoch curves, the
    selected checkpoint, and an optional final test accuracy."""

    config: TrainConfig
    train_losses: list[float] = field(default_factory=list)
    dev_accuracies: list[float] = field(default_factory=list)
    best_epoch: int = 0  # 1-based; 0 means the initial weights were kept
    best_dev_accuracy: float = 0.0
    best_state: dict[str, np.ndarray] = field(default_factory=dict)
    test_accuracy: float | None = None

    def report_text(self) -> str:
        lines = [f"config {k} {v}" for k, v in self.config.to_dict().items()]
        for k, (ls, acc) in enumerate(zip(self.train_losses,
                                          self.dev_accuracies), start=1):
            lines.append(f"epoch {k} loss {ls!r} dev_acc {acc!r}")
        lines.append(f"best_epoch {self.best_epoch}")
        if self.test_accuracy is not None:
            lines.append(f"test_acc {self.test_accuracy!r}")
        return "\n".join(lines) + "\n"


def evaluate(model: WarrantScorer, instances: list[ArcInstance]) -> float:
    """Fraction of instances whose predicted warrant matches the label."""
    if not instances:
        raise ValueError("cannot evaluate on an empty instance list")
    hits = sum(model.predict(inst) == inst.correct_label for inst in instances)
    return hits / len(instances)


def train(config: TrainConfig, train_triples: list[ScoredTriple],
          dev_instances: list[ArcInstance], vocab: Vocabulary,
          embeddings: EmbeddingMatrix | None = None,
          encoder_weights: EncoderWeights | None = None) -> RunRecord:
    """Run one training job and return its record.

    Each epoch reshuffles, iterates batches (loss -> backward -> Adam with
    the pad-embedding gradient zeroed), then scores the dev set in eval
    mode. Identical configs and inputs reproduce bit-identical records.
    """
    config.validate()
    if not train_triples:
        raise ValueError("empty training set")
    model = build_model(config, vocab, embeddings, encoder_weights)
    if config.localizer_scale == "auto":
        calibrate_localizer(model, config, train_triples)
    params = model.parameters()
    state = AdamState(params)
    shuffle_rng = RngStream(config.seed).child(6)

    record = RunRecord(config=config, best_state=model.snapshot())
    best_acc = None
    for epoch in range(1, config.max_epochs + 1):
        batches = make_batches(train_triples, config.batch_size, shuffle_rng)
        epoch_losses = []
        for batch in batches:
            zero_grads(params)
            with Tape() as tape:
                batch_loss = loss(batch, model, config.l2_weight, mode="train")
                backward(batch_loss, tape)
            model.embedding.zero_pad_grad()
            grads = [p.grad for p in params]
            adam_step(params, grads, state, config.learning_rate,
                      (config.adam_beta1, config.adam_beta2), config.adam_eps)
            epoch_losses.append(batch_loss.item())
        dev_acc = evaluate(model, dev_instances)
        record.train_losses.append(float(np.mean(epoch_losses)))
        record.dev_accuracies.append(dev_acc)
        if best_acc is None or dev_acc > best_acc:
            best_acc = dev_acc
            record.best_epoch = epoch
            record.best_dev_accuracy = dev_acc
            record.best_state = model.snapshot()
    return record


def aggregate_runs(accuracies: list[float]) -> tuple[float, float]:
    """Mean and sample (n-1) standard deviation; std is 0 for one value."""
    if not accuracies:
        raise ValueError("no accuracies to aggregate")
    arr = np.asarray(accuracies, dtype=np.float64)
    mean = float(arr.mean())
    std = float(arr.std(ddof=1)) if len(arr) > 1 else 0.0
    return mean, std


# --- encoder pretraining ------------------------------------------------------


@dataclass
class PretrainResult:
    encoder: EncoderWeights
    embedding: EmbeddingMatrix
    vocab: Vocabulary
    head_w: Tensor
    head_b: Tensor
    epoch_losses: list[float]


def run_pretraining(corpus: list[tuple[list[str], list[int]]],
                    config: TrainConfig,
                    embeddings_path=None) -> PretrainResult:
    """Train the BiLSTM (plus a temporary per-token sigmoid head) to flag
    tokens that repeat something seen earlier in the sequence.

    When a word-vector file is given, the encoder consumes those vectors
    frozen (mirroring contextual encoders trained on top of fixed
    pretrained embeddings); otherwise embeddings are random-initialized
    and co-trained.
    """
    from .vocab import build_vocab, load_embeddings

    if not corpus:
        raise ValueError("empty pretraining corpus")
    config.validate()
    rng = RngStream(config.seed)
    vocab = build_vocab([tokens for tokens, _ in corpus])
    if embeddings_path is not None:
        emb, _ = load_embeddings(embeddings_path, vocab, rng.child(11),
                                 dim=config.embed_dim)
        emb.weights.requires_grad = False
        emb_params = []
    else:
        emb = EmbeddingMatrix.random_init(vocab, rng.child(11),
                                          dim=config.embed_dim)
        emb_params = [emb.weights]
    encoder = scratch_encoder_weights(
        rng.child(12), hidden=config.hidden_size, in_dim=config.embed_dim,
        recurrent_scale=config.encoder_recurrent_scale,
        forget_bias=config.encoder_forget_bias)
    head_w = Tensor(rng.child(13).uniform(-0.005, 0.005,
                                          (2 * config.hidden_size, 1)),
                    requires_grad=True)
    head_b = Tensor(np.zeros(1), requires_grad=True)
    params = emb_params + encoder.parameters() + [head_w, head_b]
    state = AdamState(params)
    order_rng = rng.child(14)

    items = [(vocab.ids(tokens), labels) for tokens, labels in corpus]
    epoch_losses = []
    for _ in range(config.max_epochs):
        order = order_rng.permutation(len(items))
        batch_losses = []
        for start in range(0, len(items), config.batch_size):
            chunk = [items[i] for i in order[start:start + config.batch_size]]
            zero_grads(params)
            with Tape() as tape:
                terms = []
                for ids, labels in chunk:
                    states = bilstm_forward(embed(ids, emb), len(ids), encoder)
                    probs = sigmoid(affine(states, head_w, head_b))
                    p = clamp(probs, PROB_CLAMP, 1.0 - PROB_CLAMP)
                    target = Tensor(np.array(labels, dtype=np.float64)
                                    .reshape(-1, 1))
                    log_lik = add(
                        hadamard(target, log(p)),
                        hadamard(linear_const(target, -1.0, 1.0),
                                 log(linear_const(p, -1.0, 1.0))),
                    )
                    terms.append(linear_const(mean_all(log_lik), -1.0, 0.0))
                total = _mean_scalars(terms)
                penalty = l2_penalty(params, config.l2_weight)
                batch_loss = total if penalty is None else add(total, penalty)
                backward(batch_loss, tape)
            emb.zero_pad_grad()
            adam_step(params, [p.grad for p in params], state,
                      config.learning_rate,
                      (config.adam_beta1, config.adam_beta2), config.adam_eps)
            batch_losses.append(batch_loss.item())
        epoch_losses.append(float(np.mean(batch_losses)))
    encoder.provenance = PRETRAINED
    return PretrainResult(encoder, emb, vocab, head_w, head_b, epoch_losses)


def _mean_scalars(terms: list[Tensor]) -> Tensor:
    total = terms[0]
    for t in terms[1:]:
        total = add(total, t)
    return linear_const(total, 1.0 / len(terms), 0.0)


def pretrain_encoder(corpus, config: TrainConfig, bundle_path=None,
                     embeddings_path=None) -> EncoderWeights:
    """Pretrain and return just the encoder weights (the per-token head is
    discarded); writes the portable bundle when a path is given."""
    result = run_pretraining(corpus, config, embeddings_path=embeddings_path)
    if bundle_path is not None:
        write_encoder_bundle(result.encoder, bundle_path)
    return result.encoder


def duplicate_token_accuracy(result: PretrainResult,
                             corpus: list[tuple[list[str], list[int]]]) -> float:
    """Per-token accuracy of the pretrained encoder + head at threshold 0.5."""
    hits = total = 0
    for tokens, labels in corpus:
        ids = result.vocab.ids(tokens)
        states = bilstm_forward(embed(ids, result.embedding), len(ids),
                                result.encoder)
        probs = sigmoid(affine(states, result.head_w, result.head_b))
        pred = (probs.data[:, 0] >= 0.5).astype(int)
        hits += int((pred == np.array(labels)).sum())
        total += len(labels)
    return hits / total


def model_from_state(config: TrainConfig, vocab: Vocabulary,
                     state: dict[str, np.ndarray]) -> WarrantScorer:
    """Rebuild a scorer from an in-memory parameter snapshot."""
    if config.encoder == "pretrained":
        model = build_model(replace(config, encoder="scratch"), vocab)
        model.encoder_kind = "pretrained"
        model.encoder.provenance = PRETRAINED
    else:
        model = build_model(config, vocab)
    model.restore(state)
    return model


# --- checkpoints --------------------------------------------------------------

_KIND_CODE = {"scratch": 0.0, "pretrained": 1.0, "bow": 2.0}
_KIND_NAME = {v: k for k, v in _KIND_CODE.items()}
_POOL_CODE = {"max": 0.0, "last": 1.0}
_POOL_NAME = {v: k for k, v in _POOL_CODE.items()}


def save_model_bundle(state: dict[str, np.ndarray], config: TrainConfig, path):
    """Write a full-model checkpoint: every named parameter array plus the
    metadata needed to rebuild the architecture."""
    arrays = dict(state)
    arrays["meta.encoder_kind"] = np.array([_KIND_CODE[config.encoder]])
    arrays["meta.pooling"] = np.array([_POOL_CODE[config.pooling]])
    arrays["meta.heuristics"] = np.array([1.0 if config.heuristics else 0.0])
    arrays["meta.dropout_p"] = np.array([config.dropout_p])
    write_bundle(path, arrays)


def load_model_bundle(path, vocab: Vocabulary) -> WarrantScorer:
    """Rebuild a scorer from a checkpoint; dimensions come from the stored
    array shapes, everything else from the meta arrays."""
    arrays = read_bundle(path)
    for needed in ("embed.E", "loc.claim.w", "head.w", "meta.encoder_kind"):
        if needed not in arrays:
            raise BundleError(f"{path}: not a model checkpoint "
                              f"(missing {needed!r})")
    kind = _KIND_NAME.get(float(arrays["meta.encoder_kind"][0]))
    pool = _POOL_NAME.get(float(arrays["meta.pooling"][0]), "max")
    heuristics = bool(arrays["meta.heuristics"][0])
    dropout_p = float(arrays["meta.dropout_p"][0])
    if kind is None:
        raise BundleError(f"{path}: unknown encoder kind code")
    embed_dim, v_size = arrays["embed.E"].shape
    if v_size != len(vocab):
        raise BundleError(
            f"{path}: embedding has {v_size} columns but the vocabulary "
            f"holds {len(vocab)} tokens")
    feature_dim = arrays["loc.claim.w"].shape[1]
    hidden = (arrays["enc.lstm0.fwd.w_h"].shape[1]
              if kind != "bow" else 0)
    config = TrainConfig(encoder=kind, pooling=pool, heuristics=heuristics,
                         dropout_p=dropout_p, embed_dim=embed_dim,
                         hidden_size=hidden or TrainConfig.hidden_size,
                         feature_dim=feature_dim)
    if kind == "pretrained":
        # rebuild via a scratch skeleton, then overwrite every array
        config = replace(config, encoder="scratch")
        model = build_model(config, vocab)
        model.encoder_kind = "pretrained"
        model.encoder.provenance = PRETRAINED
    else:
        model = build_model(config, vocab)
    for name, tensor in model.named_parameters():
        if name not in arrays:
            raise BundleError(f"{path}: checkpoint missing array {name!r}")
        stored = arrays[name]
        if stored.shape != tensor.data.shape:
            raise BundleError(
                f"{path}: array {name!r} has shape {stored.shape}, expected "
                f"{tensor.data.shape}")
        tensor.data[:] = np.asarray(stored, dtype=np.float64)
    return model
