"""The warrant-scoring head.

A shared encoder turns claim, reason, and warrant into fixed-length
vectors; three separate affine+tanh maps project each onto its own space;
the output layer runs logistic regression over the concatenation of the
three projections plus two matching features (absolute residual and
three-way elementwise product). At test time the two candidate warrants
are scored independently and the higher-scoring one wins.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encoder import EncoderWeights, encode
from .ndcore import (
    ShapeError,
    Tensor,
    absolute,
    affine,
    concat,
    dropout,
    hadamard,
    sigmoid,
    sub,
    tanh,
)
from .rng import RngStream
from .vocab import EmbeddingMatrix, Vocabulary, embed
from .data import ArcInstance, tokenize

FEATURE_DIM = 300  # width of each localized representation

_INIT_RANGE = 0.005


@dataclass
class Localizer:
    """Three independent affine maps, one per sentence role; weights are
    stored (in_dim, out_dim) so application is s @ w + b."""

    claim_w: Tensor
    claim_b: Tensor
    reason_w: Tensor
    reason_b: Tensor
    warrant_w: Tensor
    warrant_b: Tensor

    @classmethod
    def random_init(cls, rng: RngStream, in_dim: int,
                    out_dim: int = FEATURE_DIM, shared: bool = False,
                    scale: float = _INIT_RANGE) -> "Localizer":
        """Uniform(-scale, scale) weights, zero biases. With ``shared`` the
        three role maps start from one common draw (still separate
        parameters that specialize during training), so the matching
        features compare the roles in a common space from step one."""
        common = rng.uniform(-scale, scale, (in_dim, out_dim)) \
            if shared else None

        def pair():
            w = common.copy() if shared \
                else rng.uniform(-scale, scale, (in_dim, out_dim))
            return (Tensor(w, requires_grad=True),
                    Tensor(np.zeros(out_dim), requires_grad=True))

        cw, cb = pair()
        rw, rb = pair()
        ww, wb = pair()
        return cls(cw, cb, rw, rb, ww, wb)

    def reinit_weights(self, rng: RngStream, scale: float, shared: bool):
        """Redraw the role maps at a new range (biases untouched)."""
        common = rng.uniform(-scale, scale, self.claim_w.shape) if shared else None
        for w in (self.claim_w, self.reason_w, self.warrant_w):
            w.data[:] = common if shared \
                else rng.uniform(-scale, scale, w.shape)

    @property
    def in_dim(self) -> int:
        return self.claim_w.shape[0]

    @property
    def out_dim(self) -> int:
        return self.claim_w.shape[1]

    def parameters(self) -> list[Tensor]:
        return [self.claim_w, self.claim_b, self.reason_w, self.reason_b,
                self.warrant_w, self.warrant_b]


def _as_tensor(rep) -> Tensor:
    return rep.s if hasattr(rep, "s") else rep


def localize(loc: Localizer, s_c, s_r, s_w) -> tuple[Tensor, Tensor, Tensor]:
    """Project each sentence representation onto its own role space via
    tanh(w s + b); the three maps share no parameters."""
    s_c, s_r, s_w = _as_tensor(s_c), _as_tensor(s_r), _as_tensor(s_w)
    v_c = tanh(affine(s_c, loc.claim_w, loc.claim_b))
    v_r = tanh(affine(s_r, loc.reason_w, loc.reason_b))
    v_w = tanh(affine(s_w, loc.warrant_w, loc.warrant_b))
    return v_c, v_r, v_w


def heuristic_features(v_c: Tensor, v_r: Tensor, v_w: Tensor) -> tuple[Tensor, Tensor]:
    """Matching features: |v_w - v_r - v_c| and v_w * v_r * v_c (elementwise)."""
    if not v_c.shape == v_r.shape == v_w.shape:
        raise ShapeError(
            f"heuristic_features: shapes differ "
            f"{v_c.shape} {v_r.shape} {v_w.shape}")
    v_d = absolute(sub(sub(v_w, v_r), v_c))
    v_m = hadamard(hadamard(v_w, v_r), v_c)
    return v_d, v_m


@dataclass
class OutputHead:
    """Logistic regression over the assembled feature vector."""

    w: Tensor  # (feature_width, 1)
    b: Tensor  # (1,)
    heuristics_enabled: bool = True

    @classmethod
    def random_init(cls, rng: RngStream, feature_dim: int,
                    heuristics_enabled: bool = True) -> "OutputHead":
        width = (5 if heuristics_enabled else 3) * feature_dim
        w = Tensor(rng.uniform(-_INIT_RANGE, _INIT_RANGE, (width, 1)),
                   requires_grad=True)
        b = Tensor(np.zeros(1), requires_grad=True)
        return cls(w, b, heuristics_enabled)

    @property
    def input_width(self) -> int:
        return self.w.shape[0]

    def parameters(self) -> list[Tensor]:
        return [self.w, self.b]


class WarrantScorer:
    """Full pipeline from token ids to a plausibility score in (0, 1).

    The same encoder weights serve all three sentences. Dropout is applied
    to each sentence representation before localization and to the feature
    vector before the output layer, in train mode only.
    """

    def __init__(self, vocab: Vocabulary, embedding: EmbeddingMatrix,
                 localizer: Localizer, head: OutputHead,
                 encoder: EncoderWeights | None = None,
                 pooling: str = "max", encoder_kind: str = "scratch",
                 dropout_p: float = 0.1, rng: RngStream | None = None):
        if encoder_kind not in ("scratch", "pretrained", "bow"):
            raise ValueError(f"unknown encoder kind '{encoder_kind}'")
        if pooling not in ("max", "last"):
            raise ValueError(f"unknown pooling '{pooling}'")
        if encoder_kind != "bow" and encoder is None:
            raise ValueError(f"encoder kind '{encoder_kind}' needs encoder weights")
        self.vocab = vocab
        self.embedding = embedding
        self.localizer = localizer
        self.head = head
        self.encoder = encoder if encoder_kind != "bow" else None
        self.pooling = pooling
        self.encoder_kind = encoder_kind
        self.dropout_p = dropout_p
        self.rng = rng if rng is not None else RngStream(0)

    @property
    def encode_mode(self) -> str:
        if self.encoder_kind == "bow":
            return "bow-mean"
        return f"bilstm-{self.pooling}"

    @property
    def heuristics_enabled(self) -> bool:
        return self.head.heuristics_enabled

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        out = [("embed.E", self.embedding.weights)]
        if self.encoder is not None:
            for li, layer in enumerate(self.encoder.layers):
                for tag, d in (("fwd", layer.fwd), ("bwd", layer.bwd)):
                    out.append((f"enc.lstm{li}.{tag}.w_x", d.w_x))
                    out.append((f"enc.lstm{li}.{tag}.w_h", d.w_h))
                    out.append((f"enc.lstm{li}.{tag}.b", d.b))
        loc = self.localizer
        out.extend([
            ("loc.claim.w", loc.claim_w), ("loc.claim.b", loc.claim_b),
            ("loc.reason.w", loc.reason_w), ("loc.reason.b", loc.reason_b),
            ("loc.warrant.w", loc.warrant_w), ("loc.warrant.b", loc.warrant_b),
            ("head.w", self.head.w), ("head.b", self.head.b),
        ])
        return out

    def snapshot(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.named_parameters()}

    def restore(self, state: dict[str, np.ndarray]):
        for name, t in self.named_parameters():
            t.data[:] = state[name]

    # --- forward ---

    def _valid_length(self, ids) -> int:
        """Sentence length with trailing pad ids stripped (content ids are
        never the pad id, so only a trailing run can occur)."""
        n = len(ids)
        pad = self.vocab.pad_id
        while n > 0 and ids[n - 1] == pad:
            n -= 1
        return n

    def _sentence_rep(self, ids, mode: str) -> Tensor:
        valid = self._valid_length(ids)
        x = embed(ids[:valid], self.embedding)
        rep = encode(x, valid, self.encode_mode, self.encoder)
        return dropout(rep.s, self.dropout_p, mode, self.rng)

    def _head_logit(self, s_c: Tensor, s_r: Tensor, s_w: Tensor,
                    mode: str) -> Tensor:
        v_c, v_r, v_w = localize(self.localizer, s_c, s_r, s_w)
        if self.heuristics_enabled:
            v_d, v_m = heuristic_features(v_c, v_r, v_w)
            features = concat([v_c, v_r, v_w, v_d, v_m])
        else:
            features = concat([v_c, v_r, v_w])
        features = dropout(features, self.dropout_p, mode, self.rng)
        return affine(features, self.head.w, self.head.b)

    def forward_ids(self, claim_ids, reason_ids, warrant_ids,
                    mode: str = "eval") -> tuple[Tensor, Tensor]:
        """Score one (claim, reason, warrant) triple.

        Returns (probability, logit) as scalar tensors of shape (1,).
        """
        for name, ids in (("claim", claim_ids), ("reason", reason_ids),
                          ("warrant", warrant_ids)):
            if self._valid_length(ids) == 0:
                raise ValueError(f"empty {name} sentence")
        s_c = self._sentence_rep(claim_ids, mode)
        s_r = self._sentence_rep(reason_ids, mode)
        s_w = self._sentence_rep(warrant_ids, mode)
        logit = self._head_logit(s_c, s_r, s_w, mode)
        return sigmoid(logit), logit

    def score(self, claim_ids, reason_ids, warrant_ids,
              mode: str = "eval") -> float:
        prob, _ = self.forward_ids(claim_ids, reason_ids, warrant_ids, mode)
        return prob.item()

    # --- pairwise decision ---

    def ids_for(self, text: str) -> list[int]:
        return self.vocab.ids(tokenize(text))

    def predict(self, instance: ArcInstance) -> int:
        """0 if warrant0 scores higher, 1 if warrant1 does, 0 on an exact
        tie. Compared on logits: the sigmoid is strictly increasing, so
        this matches comparing scores while being immune to float
        saturation. The claim and reason are encoded once for both
        candidates."""
        claim = self.ids_for(instance.claim)
        reason = self.ids_for(instance.reason)
        for name, ids in (("claim", claim), ("reason", reason)):
            if self._valid_length(ids) == 0:
                raise ValueError(f"empty {name} sentence")
        s_c = self._sentence_rep(claim, "eval")
        s_r = self._sentence_rep(reason, "eval")
        logits = []
        for text in (instance.warrant0, instance.warrant1):
            ids = self.ids_for(text)
            if self._valid_length(ids) == 0:
                raise ValueError("empty warrant sentence")
            s_w = self._sentence_rep(ids, "eval")
            logits.append(self._head_logit(s_c, s_r, s_w, "eval").item())
        return 1 if logits[1] > logits[0] else 0
