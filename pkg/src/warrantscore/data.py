"""Task-file ingestion, instance doubling, tokenization, batching, and
synthetic corpora with decidable ground truth.

The task TSV format is tab-separated with a header row and the columns
id, warrant0, warrant1, correctLabelW0orW1, reason, claim, debateTitle,
debateInfo (a leading '#' on the id column, as some releases carry, is
accepted). Synthetic datasets serialize to the same format.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rng import RngStream
from .vocab import PAD_ID, Vocabulary

TSV_COLUMNS = ("id", "warrant0", "warrant1", "correctLabelW0orW1",
               "reason", "claim", "debateTitle", "debateInfo")

_DETACH_CHARS = set(".,!?;:'\"()[]")


@dataclass
class ArcInstance:
    """One task item: a claim/reason pair with two candidate warrants."""

    id: str
    warrant0: str
    warrant1: str
    correct_label: int  # index of the correct warrant
    reason: str
    claim: str
    debate_title: str = ""
    debate_info: str = ""


@dataclass
class ScoredTriple:
    """One training example after doubling: a single warrant with its
    plausibility target (1 for the correct warrant, 0 for the other)."""

    claim_ids: list[int]
    reason_ids: list[int]
    warrant_ids: list[int]
    target: int


class DataFormatError(ValueError):
    """Malformed task file."""


def tokenize(text: str) -> list[str]:
    """Split on whitespace, then detach leading/trailing punctuation from
    the set .,!?;:'\"()[] as separate tokens. Case is preserved."""
    out = []
    for chunk in text.split():
        lead = []
        while chunk and chunk[0] in _DETACH_CHARS:
            lead.append(chunk[0])
            chunk = chunk[1:]
        trail = []
        while chunk and chunk[-1] in _DETACH_CHARS:
            trail.append(chunk[-1])
            chunk = chunk[:-1]
        out.extend(lead)
        if chunk:
            out.append(chunk)
        out.extend(reversed(trail))
    return out


def parse_arc_tsv(path) -> list[ArcInstance]:
    """Read task instances, preserving row order. Rows are validated for
    field count and a binary label; errors name the offending row."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise DataFormatError(f"{path}: empty file")
    header = [name.lstrip("#") for name in lines[0].split("\t")]
    positions = {}
    for col in TSV_COLUMNS:
        if col not in header:
            raise DataFormatError(f"{path}: missing column '{col}'")
        positions[col] = header.index(col)

    instances = []
    for rownum, line in enumerate(lines[1:], start=2):
        fields = line.split("\t")
        if len(fields) != len(header):
            raise DataFormatError(
                f"{path}: row {rownum}: expected {len(header)} fields, "
                f"got {len(fields)}")
        label_text = fields[positions["correctLabelW0orW1"]]
        if label_text not in ("0", "1"):
            raise DataFormatError(
                f"{path}: row {rownum}: label must be 0 or 1, got "
                f"'{label_text}'")
        instances.append(ArcInstance(
            id=fields[positions["id"]],
            warrant0=fields[positions["warrant0"]],
            warrant1=fields[positions["warrant1"]],
            correct_label=int(label_text),
            reason=fields[positions["reason"]],
            claim=fields[positions["claim"]],
            debate_title=fields[positions["debateTitle"]],
            debate_info=fields[positions["debateInfo"]],
        ))
    return instances


def write_arc_tsv(path, instances: list[ArcInstance]):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\t".join(TSV_COLUMNS) + "\n")
        for inst in instances:
            fh.write("\t".join([
                inst.id, inst.warrant0, inst.warrant1,
                str(inst.correct_label), inst.reason, inst.claim,
                inst.debate_title, inst.debate_info,
            ]) + "\n")


def expand_instances(instances: list[ArcInstance],
                     vocab: Vocabulary) -> list[ScoredTriple]:
    """Double each instance into two scored triples, correct warrant first
    (target 1), then the other warrant (target 0)."""
    triples = []
    for inst in instances:
        claim = vocab.ids(tokenize(inst.claim))
        reason = vocab.ids(tokenize(inst.reason))
        warrants = (inst.warrant0, inst.warrant1)
        correct = inst.correct_label
        for warrant_text, target in ((warrants[correct], 1),
                                     (warrants[1 - correct], 0)):
            triples.append(ScoredTriple(
                claim_ids=claim,
                reason_ids=reason,
                warrant_ids=vocab.ids(tokenize(warrant_text)),
                target=target,
            ))
    return triples


@dataclass
class Batch:
    """Padded id matrices plus valid lengths for the three sentence roles."""

    claim_ids: np.ndarray
    claim_len: np.ndarray
    reason_ids: np.ndarray
    reason_len: np.ndarray
    warrant_ids: np.ndarray
    warrant_len: np.ndarray
    targets: np.ndarray

    def __len__(self) -> int:
        return len(self.targets)

    def triple(self, i: int) -> tuple[list[int], list[int], list[int], int]:
        """Un-padded token ids for item i."""
        return (
            self.claim_ids[i, :self.claim_len[i]].tolist(),
            self.reason_ids[i, :self.reason_len[i]].tolist(),
            self.warrant_ids[i, :self.warrant_len[i]].tolist(),
            int(self.targets[i]),
        )


def _pad_role(id_lists: list[list[int]]) -> tuple[np.ndarray, np.ndarray]:
    lengths = np.array([len(ids) for ids in id_lists], dtype=np.int64)
    width = int(lengths.max())
    mat = np.full((len(id_lists), width), PAD_ID, dtype=np.int64)
    for i, ids in enumerate(id_lists):
        mat[i, :len(ids)] = ids
    return mat, lengths


def make_batches(triples: list[ScoredTriple], batch_size: int,
                 rng: RngStream) -> list[Batch]:
    """Shuffle, chunk (keeping the final partial batch), and pad each role
    to the batch's own maximum length."""
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    order = rng.permutation(len(triples))
    batches = []
    for start in range(0, len(triples), batch_size):
        chunk = [triples[i] for i in order[start:start + batch_size]]
        c_ids, c_len = _pad_role([t.claim_ids for t in chunk])
        r_ids, r_len = _pad_role([t.reason_ids for t in chunk])
        w_ids, w_len = _pad_role([t.warrant_ids for t in chunk])
        targets = np.array([t.target for t in chunk], dtype=np.float64)
        batches.append(Batch(c_ids, c_len, r_ids, r_len, w_ids, w_len, targets))
    return batches


# --- synthetic corpora ------------------------------------------------------
#
# Generator rule: per instance, four distinct key tokens x, y, z, q are
# drawn. The reason contains {x, y}, the claim {y, z}, the correct warrant
# {x, z} and the incorrect warrant {x, q}; the correct warrant's slot is a
# fair coin. Each sentence embeds its keys at random positions among the
# instance's 2-4 filler tokens, which are shared by all four sentences and
# never coincide with keys. Sharing the fillers makes the key structure
# the only thing that varies between candidate warrants, so "the warrant
# containing both x and z" is the unique discriminative signal. The keys
# are recorded in debate_info for oracle replay.


def token_name(i: int) -> str:
    return f"t{i}"


def synthetic_vocab_tokens(vocab_size: int) -> list[str]:
    return [token_name(i) for i in range(vocab_size)]


def synthetic_keys(instance: ArcInstance) -> dict[str, str]:
    """Recover the generator's key tokens from the debate_info field."""
    keys = {}
    for part in instance.debate_info.split():
        if "=" in part:
            name, _, value = part.partition("=")
            keys[name] = value
    return keys


def _build_sentence(keys: list[str], fillers: list[str], rng: RngStream) -> str:
    tokens = list(keys) + list(fillers)
    order = rng.permutation(len(tokens))
    return " ".join(tokens[i] for i in order)


def gen_synthetic_arc(n: int, vocab_size: int, rng: RngStream) -> list[ArcInstance]:
    """Generate n instances whose label follows the closed-form key rule."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if vocab_size < 8:
        raise ValueError(
            f"vocab too small to sample distinct keys: {vocab_size} < 8")
    names = synthetic_vocab_tokens(vocab_size)
    instances = []
    for i in range(n):
        kx, ky, kz, kq = (names[j] for j in rng.choice(vocab_size, size=4))
        pool = [t for t in names if t not in (kx, ky, kz, kq)]
        n_fill = min(int(rng.integers(2, 5)), len(pool))
        fillers = [pool[j] for j in rng.choice(len(pool), size=n_fill)]
        reason = _build_sentence([kx, ky], fillers, rng)
        claim = _build_sentence([ky, kz], fillers, rng)
        correct = _build_sentence([kx, kz], fillers, rng)
        incorrect = _build_sentence([kx, kq], fillers, rng)
        label = rng.coin()
        warrants = (correct, incorrect) if label == 0 else (incorrect, correct)
        instances.append(ArcInstance(
            id=f"synthetic-{i}",
            warrant0=warrants[0],
            warrant1=warrants[1],
            correct_label=label,
            reason=reason,
            claim=claim,
            debate_title="synthetic",
            debate_info=f"keys x={kx} y={ky} z={kz} q={kq}",
        ))
    return instances


def write_synthetic_embeddings(path, vocab_size: int, dim: int,
                               rng: RngStream, offset: float = 0.4,
                               scale: float = 6.0):
    """A stand-in for a real pretrained word-vector file.

    Mirrors the geometry of published embedding inventories: mutually
    orthogonal per-token directions (high-dimensional real vectors are
    near-orthogonal) plus a common direction scaled by ``offset`` (the
    well-known anisotropy of embedding spaces), at vector norms around
    ``scale`` (published 300-d vectors sit near norm 6). Requires
    dim > vocab_size.
    """
    if dim <= vocab_size:
        raise ValueError(
            f"need dim > vocab_size for orthogonal vectors, got "
            f"{dim} <= {vocab_size}")
    gauss = rng.uniform(-1.0, 1.0, (dim, vocab_size + 1))
    basis, _ = np.linalg.qr(gauss)
    common = basis[:, 0]
    with open(path, "w", encoding="utf-8") as fh:
        for i, token in enumerate(synthetic_vocab_tokens(vocab_size)):
            vec = scale * (basis[:, i + 1] + offset * common)
            fh.write(token + " " + " ".join(repr(float(v)) for v in vec) + "\n")


def gen_pretrain_corpus(n: int, vocab_size: int,
                        rng: RngStream) -> list[tuple[list[str], list[int]]]:
    """Sequences of 5-15 tokens over the synthetic vocabulary, labeled per
    token with 1 iff the token already occurred earlier in the sequence.

    Each sequence draws its tokens from a small random subset of the
    vocabulary so repeats are frequent (~40-50% of positions); sampling
    the whole vocabulary uniformly would leave so few positive labels
    that the all-zero predictor is near-optimal and nothing about
    repetition gets learned.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    names = synthetic_vocab_tokens(vocab_size)
    corpus = []
    for _ in range(n):
        length = int(rng.integers(5, 16))
        subset_size = min(int(rng.integers(4, 9)), vocab_size)
        subset = rng.choice(vocab_size, size=subset_size)
        ids = subset[rng.integers(0, subset_size, (length,))]
        tokens = [names[j] for j in ids]
        seen = set()
        labels = []
        for tok in tokens:
            labels.append(1 if tok in seen else 0)
            seen.add(tok)
        corpus.append((tokens, labels))
    return corpus


def write_pretrain_corpus(path, corpus):
    """One sequence per line: space-joined tokens, a tab, space-joined labels."""
    with open(path, "w", encoding="utf-8") as fh:
        for tokens, labels in corpus:
            fh.write(" ".join(tokens) + "\t" + " ".join(map(str, labels)) + "\n")


def read_pretrain_corpus(path) -> list[tuple[list[str], list[int]]]:
    corpus = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise DataFormatError(
                    f"{path}: line {lineno}: expected tokens<TAB>labels")
            tokens = parts[0].split()
            labels = [int(v) for v in parts[1].split()]
            if len(tokens) != len(labels) or any(v not in (0, 1) for v in labels):
                raise DataFormatError(
                    f"{path}: line {lineno}: labels must be one 0/1 per token")
            corpus.append((tokens, labels))
    return corpus
