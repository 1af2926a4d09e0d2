"""Vocabulary construction and word-embedding ingestion.

The embedding matrix is stored column-per-token (dim x vocab) and is always
trainable. Column 0 (padding) is pinned to zero: its rows never enter the
valid-length computation and the training loop additionally zeroes its
gradient before every optimizer step.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ndcore
from .ndcore import Tensor
from .rng import RngStream

PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"
PAD_ID = 0
UNK_ID = 1

EMBED_DIM = 300

INIT_RANGE = 0.005  # uniform(-0.005, 0.005) for weights absent from any file


@dataclass
class Vocabulary:
    """Token <-> id bijection with reserved padding/unknown slots."""

    token_to_id: dict[str, int] = field(default_factory=dict)
    id_to_token: list[str] = field(default_factory=lambda: [PAD_TOKEN, UNK_TOKEN])
    pad_id: int = PAD_ID
    unk_id: int = UNK_ID

    def __len__(self) -> int:
        return len(self.id_to_token)

    def add(self, token: str) -> int:
        if token in (PAD_TOKEN, UNK_TOKEN):
            # reserved spellings never become content tokens
            return self.unk_id
        tid = self.token_to_id.get(token)
        if tid is None:
            tid = len(self.id_to_token)
            self.token_to_id[token] = tid
            self.id_to_token.append(token)
        return tid

    def id_of(self, token: str) -> int:
        if token in (PAD_TOKEN, UNK_TOKEN):
            return self.unk_id
        return self.token_to_id.get(token, self.unk_id)

    def ids(self, tokens: list[str]) -> list[int]:
        """Map tokens to ids; unseen tokens map to the unknown id."""
        return [self.id_of(t) for t in tokens]

    def content_tokens(self) -> list[str]:
        return self.id_to_token[2:]


def build_vocab(token_streams) -> Vocabulary:
    """Assign ids in first-occurrence order starting at 2 (0=pad, 1=unk)."""
    vocab = Vocabulary()
    for stream in token_streams:
        for token in stream:
            vocab.add(token)
    return vocab


def write_vocab_file(path, vocab: Vocabulary):
    """One token per line in id order (reserved slots included)."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(vocab.id_to_token) + "\n")


def read_vocab_file(path) -> Vocabulary:
    with open(path, "r", encoding="utf-8") as fh:
        tokens = fh.read().split("\n")
    if tokens and tokens[-1] == "":
        tokens.pop()
    if tokens[:2] != [PAD_TOKEN, UNK_TOKEN]:
        raise ValueError(
            f"{path}: not a vocabulary file (expected reserved tokens first)")
    vocab = Vocabulary()
    for token in tokens[2:]:
        vocab.add(token)
    return vocab


class EmbeddingMatrix:
    """Trainable dim x |V| matrix; one column per token id."""

    def __init__(self, weights: Tensor, pad_id: int = PAD_ID):
        if weights.data.ndim != 2:
            raise ndcore.ShapeError(
                f"embedding matrix must be 2-d, got shape {weights.shape}")
        self.weights = weights
        self.weights.requires_grad = True
        self.trainable = True
        self.pad_id = pad_id

    @property
    def dim(self) -> int:
        return self.weights.shape[0]

    @property
    def vocab_size(self) -> int:
        return self.weights.shape[1]

    def zero_pad_grad(self):
        """Pin the pad column: drop any gradient it picked up."""
        if self.weights._grad is not None:
            self.weights._grad[:, self.pad_id] = 0.0

    @classmethod
    def random_init(cls, vocab: Vocabulary, rng: RngStream,
                    dim: int = EMBED_DIM) -> "EmbeddingMatrix":
        w = rng.uniform(-INIT_RANGE, INIT_RANGE, (dim, len(vocab)))
        w[:, PAD_ID] = 0.0
        return cls(Tensor(w, requires_grad=True))


class EmbeddingParseError(ValueError):
    """Malformed line in a word-vector text file."""


def load_embeddings(path, vocab: Vocabulary, rng: RngStream,
                    dim: int = EMBED_DIM) -> tuple[EmbeddingMatrix, int]:
    """Read a word-vector text file (token then ``dim`` floats per line).

    In-vocabulary tokens found in the file take the file vector; everything
    else is sampled uniform(-0.005, 0.005). The pad column is zeroed.
    Returns the matrix and the number of covered content tokens. The result
    is a pure function of (file bytes, vocab, rng seed): vectors for missing
    tokens are drawn in id order after the file is read.
    """
    file_vectors: dict[str, np.ndarray] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            fields = line.split(" ")
            if len(fields) != dim + 1:
                raise EmbeddingParseError(
                    f"{path}: line {lineno}: expected 1 token + {dim} floats, "
                    f"got {len(fields)} fields")
            try:
                vec = np.array([float(v) for v in fields[1:]], dtype=np.float64)
            except ValueError as exc:
                raise EmbeddingParseError(
                    f"{path}: line {lineno}: {exc}") from None
            file_vectors[fields[0]] = vec

    w = np.zeros((dim, len(vocab)), dtype=np.float64)
    coverage = 0
    for tid, token in enumerate(vocab.id_to_token):
        if tid == vocab.pad_id:
            continue
        vec = file_vectors.get(token) if tid >= 2 else None
        if vec is not None:
            w[:, tid] = vec
            coverage += 1
        else:
            w[:, tid] = rng.uniform(-INIT_RANGE, INIT_RANGE, (dim,))
    return EmbeddingMatrix(Tensor(w, requires_grad=True)), coverage


def write_embeddings_text(path, vocab: Vocabulary, emb: EmbeddingMatrix):
    """Serialize content-token columns in the word-vector text format."""
    with open(path, "w", encoding="utf-8") as fh:
        for tid in range(2, len(vocab)):
            vec = emb.weights.data[:, tid]
            fh.write(vocab.id_to_token[tid] + " "
                     + " ".join(repr(float(v)) for v in vec) + "\n")


def embed(token_ids, emb: EmbeddingMatrix) -> Tensor:
    """Rows of the output are the embedding columns of the given ids."""
    ids = np.asarray(token_ids, dtype=np.int64)
    if ids.ndim != 1:
        raise ndcore.ShapeError(f"token ids must be 1-d, got shape {ids.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= emb.vocab_size):
        raise IndexError(
            f"token id out of range [0, {emb.vocab_size}): {ids.tolist()}")
    weights = emb.weights
    out = Tensor(weights.data[:, ids].T.copy())

    def bwd(g):
        buf = np.zeros_like(weights.data)
        np.add.at(buf.T, ids, g)
        weights.accumulate_grad(buf)

    ndcore.record("embed", (weights,), (out,), bwd)
    return out
