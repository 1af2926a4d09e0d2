"""Dense float64 tensors with reverse-mode automatic differentiation.

Eager tape design: operations compute numpy values immediately and, when a
Tape is active and some input is tracked, append a backward closure to the
tape. Replaying the tape in reverse visits every node exactly once and the
append order is already topological. With no active tape (evaluation,
finite-difference probes) operations are plain numpy and record nothing.

Compute precision is 64-bit throughout; portable weight bundles downcast to
32-bit on serialization only.
"""

from __future__ import annotations

import math
import threading

import numpy as np

from .rng import RngStream


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class Tensor:
    """A dense float64 array, optionally tracked for gradients."""

    __slots__ = ("data", "requires_grad", "_grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self._grad = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def grad(self):
        """Accumulated gradient; zeros for tracked tensors that never
        participated in the differentiated computation, None for untracked."""
        if self._grad is not None:
            return self._grad
        if self.requires_grad:
            return np.zeros_like(self.data)
        return None

    def zero_grad(self):
        self._grad = None

    def accumulate_grad(self, g):
        if not self.requires_grad:
            return
        if self._grad is None:
            self._grad = np.zeros_like(self.data)
        self._grad += g

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a scalar tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def zero_grads(tensors):
    for t in tensors:
        t.zero_grad()


# --- tape ----------------------------------------------------------------

_LOCAL = threading.local()


def _tape_stack() -> list:
    stack = getattr(_LOCAL, "stack", None)
    if stack is None:
        stack = _LOCAL.stack = []
    return stack


class TapeNode:
    __slots__ = ("op", "inputs", "outputs", "backward")

    def __init__(self, op, inputs, outputs, backward):
        self.op = op
        self.inputs = inputs
        self.outputs = outputs
        self.backward = backward


class Tape:
    """Execution-ordered record of differentiable operations.

    Used as a context manager; while active, tracked operations append
    nodes. Node order is the execution order, hence every node's parents
    precede it.
    """

    def __init__(self):
        self.nodes: list[TapeNode] = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        _tape_stack().pop()
        return False


def active_tape() -> Tape | None:
    stack = _tape_stack()
    return stack[-1] if stack else None


def record(op: str, inputs, outputs, backward) -> bool:
    """Register one computed operation on the active tape.

    ``backward`` receives one gradient array per output (zeros substituted
    where an output has no incoming gradient) and must accumulate into the
    inputs via ``accumulate_grad``. Returns True when a node was recorded.
    """
    tape = active_tape()
    if tape is None or not any(t.requires_grad for t in inputs):
        return False
    for out in outputs:
        out.requires_grad = True
    tape.nodes.append(TapeNode(op, tuple(inputs), tuple(outputs), backward))
    return True


def backward(loss: Tensor, tape: Tape):
    """Populate gradients of everything the scalar loss depends on.

    Walks the tape once in reverse. Tracked tensors that do not participate
    keep a zero gradient (see Tensor.grad).
    """
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    loss.accumulate_grad(np.ones_like(loss.data))
    for node in reversed(tape.nodes):
        grads = [out._grad for out in node.outputs]
        if all(g is None for g in grads):
            continue
        grads = [np.zeros_like(out.data) if g is None else g
                 for out, g in zip(node.outputs, grads)]
        node.backward(*grads)


# --- primitive operations ------------------------------------------------


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x @ w + b, with the bias broadcast over rows; x may be a vector."""
    xd, wd, bd = x.data, w.data, b.data
    if xd.ndim not in (1, 2) or wd.ndim != 2 or bd.ndim != 1 \
            or xd.shape[-1] != wd.shape[0] or bd.shape[0] != wd.shape[1]:
        raise ShapeError(
            f"affine: incompatible shapes x{xd.shape} w{wd.shape} b{bd.shape}")
    out = Tensor(xd @ wd + bd)

    def bwd(g):
        if x.requires_grad:
            x.accumulate_grad(g @ wd.T)
        if w.requires_grad:
            w.accumulate_grad(np.outer(xd, g) if xd.ndim == 1 else xd.T @ g)
        if b.requires_grad:
            b.accumulate_grad(g if g.ndim == 1 else g.sum(axis=0))

    record("affine", (x, w, b), (out,), bwd)
    return out


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    # sigma(x) = (tanh(x/2) + 1) / 2: one call, saturates without overflow
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


def tanh(a: Tensor) -> Tensor:
    out = Tensor(np.tanh(a.data))

    def bwd(g):
        a.accumulate_grad(g * (1.0 - out.data * out.data))

    record("tanh", (a,), (out,), bwd)
    return out


def sigmoid(a: Tensor) -> Tensor:
    out = Tensor(_stable_sigmoid(a.data))

    def bwd(g):
        a.accumulate_grad(g * out.data * (1.0 - out.data))

    record("sigmoid", (a,), (out,), bwd)
    return out


def absolute(a: Tensor) -> Tensor:
    """Elementwise |a|; the subgradient at 0 is taken as 0."""
    out = Tensor(np.abs(a.data))
    sign = np.sign(a.data)

    def bwd(g):
        a.accumulate_grad(g * sign)

    record("abs", (a,), (out,), bwd)
    return out


def _binary(op: str, a: Tensor, b: Tensor, forward, da, db) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")
    out = Tensor(forward(a.data, b.data))

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(da(g, a.data, b.data))
        if b.requires_grad:
            b.accumulate_grad(db(g, a.data, b.data))

    record(op, (a, b), (out,), bwd)
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    return _binary("add", a, b, np.add, lambda g, x, y: g, lambda g, x, y: g)


def sub(a: Tensor, b: Tensor) -> Tensor:
    return _binary("sub", a, b, np.subtract, lambda g, x, y: g, lambda g, x, y: -g)


def hadamard(a: Tensor, b: Tensor) -> Tensor:
    return _binary("hadamard", a, b, np.multiply,
                   lambda g, x, y: g * y, lambda g, x, y: g * x)


_ELEMENTWISE_UNARY = {"tanh": tanh, "sigmoid": sigmoid, "abs": absolute}
_ELEMENTWISE_BINARY = {"hadamard": hadamard, "add": add, "sub": sub}


def elementwise(kind: str, a: Tensor, b: Tensor | None = None) -> Tensor:
    """Dispatch by name: tanh | sigmoid | abs (unary), hadamard | add | sub."""
    if kind in _ELEMENTWISE_UNARY:
        if b is not None:
            raise ValueError(f"elementwise kind '{kind}' is unary")
        return _ELEMENTWISE_UNARY[kind](a)
    if kind in _ELEMENTWISE_BINARY:
        if b is None:
            raise ValueError(f"elementwise kind '{kind}' needs two operands")
        return _ELEMENTWISE_BINARY[kind](a, b)
    raise ValueError(f"unknown elementwise kind '{kind}'")


def linear_const(x: Tensor, scale: float, shift: float) -> Tensor:
    """scale * x + shift for python constants (covers negation, 1 - x, ...)."""
    out = Tensor(scale * x.data + shift)

    def bwd(g):
        x.accumulate_grad(scale * g)

    record("linear_const", (x,), (out,), bwd)
    return out


def log(x: Tensor) -> Tensor:
    if np.any(x.data <= 0.0):
        raise ValueError("log: input must be strictly positive; clamp first")
    out = Tensor(np.log(x.data))

    def bwd(g):
        x.accumulate_grad(g / x.data)

    record("log", (x,), (out,), bwd)
    return out


def clamp(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clip into [lo, hi]; gradient passes only where the value was kept."""
    out = Tensor(np.clip(x.data, lo, hi))
    # boundary values count as kept, so the op is the identity inside [lo, hi]
    mask = (x.data >= lo) & (x.data <= hi)

    def bwd(g):
        x.accumulate_grad(g * mask)

    record("clamp", (x,), (out,), bwd)
    return out


def concat(parts: list[Tensor]) -> Tensor:
    """Join tensors along the last axis; backward routes slices to parents."""
    if not parts:
        raise ValueError("concat: empty list")
    ndim = parts[0].data.ndim
    lead = parts[0].shape[:-1]
    for p in parts:
        if p.data.ndim != ndim or p.shape[:-1] != lead:
            raise ShapeError(
                f"concat: incompatible part shapes {[p.shape for p in parts]}")
    out = Tensor(np.concatenate([p.data for p in parts], axis=-1))
    widths = [p.shape[-1] for p in parts]
    offsets = np.concatenate([[0], np.cumsum(widths)])

    def bwd(g):
        for p, a, b in zip(parts, offsets, offsets[1:]):
            if p.requires_grad:
                p.accumulate_grad(g[..., a:b])

    record("concat", tuple(parts), (out,), bwd)
    return out


def narrow(x: Tensor, start: int, stop: int) -> Tensor:
    """Slice [start, stop) along the last axis."""
    d = x.shape[-1]
    if not (0 <= start < stop <= d):
        raise ShapeError(f"narrow: bad range [{start}, {stop}) for width {d}")
    out = Tensor(x.data[..., start:stop].copy())

    def bwd(g):
        buf = np.zeros_like(x.data)
        buf[..., start:stop] = g
        x.accumulate_grad(buf)

    record("narrow", (x,), (out,), bwd)
    return out


def stack_rows(rows: list[Tensor]) -> Tensor:
    """Stack equal-width vectors into a matrix, one per row."""
    if not rows:
        raise ValueError("stack_rows: empty list")
    width = rows[0].shape
    for r in rows:
        if r.data.ndim != 1 or r.shape != width:
            raise ShapeError(f"stack_rows: inconsistent row shapes "
                             f"{[r.shape for r in rows]}")
    out = Tensor(np.stack([r.data for r in rows]))

    def bwd(g):
        for i, r in enumerate(rows):
            if r.requires_grad:
                r.accumulate_grad(g[i])

    record("stack_rows", tuple(rows), (out,), bwd)
    return out


def take_row(x: Tensor, index: int) -> Tensor:
    """Row ``index`` of a matrix as a vector."""
    if x.data.ndim != 2 or not 0 <= index < x.shape[0]:
        raise ShapeError(f"take_row: index {index} out of shape {x.shape}")
    out = Tensor(x.data[index].copy())

    def bwd(g):
        buf = np.zeros_like(x.data)
        buf[index] = g
        x.accumulate_grad(buf)

    record("take_row", (x,), (out,), bwd)
    return out


def take_rows(x: Tensor, stop: int) -> Tensor:
    """The leading ``stop`` rows of a matrix."""
    if x.data.ndim != 2 or not 0 < stop <= x.shape[0]:
        raise ShapeError(f"take_rows: bad row count {stop} for shape {x.shape}")
    out = Tensor(x.data[:stop].copy())

    def bwd(g):
        buf = np.zeros_like(x.data)
        buf[:stop] = g
        x.accumulate_grad(buf)

    record("take_rows", (x,), (out,), bwd)
    return out


def pad_rows(x: Tensor, total: int) -> Tensor:
    """Append zero rows below a matrix until it has ``total`` rows."""
    if x.data.ndim != 2 or total < x.shape[0]:
        raise ShapeError(f"pad_rows: cannot pad shape {x.shape} to {total} rows")
    if total == x.shape[0]:
        return x
    buf = np.zeros((total, x.shape[1]))
    buf[:x.shape[0]] = x.data
    out = Tensor(buf)

    def bwd(g):
        x.accumulate_grad(g[:x.shape[0]])

    record("pad_rows", (x,), (out,), bwd)
    return out


def _check_valid_len(h: Tensor, valid_len: int):
    if h.data.ndim != 2:
        raise ShapeError(f"pooling expects a 2-d input, got shape {h.shape}")
    if not 1 <= valid_len <= h.shape[0]:
        raise ValueError(
            f"valid_len {valid_len} outside [1, {h.shape[0]}]")


def masked_max_pool(h: Tensor, valid_len: int) -> Tensor:
    """Per-dimension max over the first valid_len rows; pad rows never
    contribute, and the gradient flows to the (first) argmax row only."""
    _check_valid_len(h, valid_len)
    valid = h.data[:valid_len]
    arg = np.argmax(valid, axis=0)
    cols = np.arange(h.shape[1])
    out = Tensor(valid[arg, cols].copy())

    def bwd(g):
        buf = np.zeros_like(h.data)
        buf[arg, cols] = g
        h.accumulate_grad(buf)

    record("masked_max_pool", (h,), (out,), bwd)
    return out


def last_pool(h: Tensor, valid_len: int) -> Tensor:
    """The row at the final valid timestep."""
    _check_valid_len(h, valid_len)
    return take_row(h, valid_len - 1)


def mean_rows(x: Tensor, valid_len: int) -> Tensor:
    """Mean over the first valid_len rows (pad rows excluded)."""
    _check_valid_len(x, valid_len)
    out = Tensor(x.data[:valid_len].mean(axis=0))

    def bwd(g):
        buf = np.zeros_like(x.data)
        buf[:valid_len] = g / valid_len
        x.accumulate_grad(buf)

    record("mean_rows", (x,), (out,), bwd)
    return out


def dropout(x: Tensor, p: float, mode: str, rng: RngStream) -> Tensor:
    """Inverted dropout: train mode zeroes entries with probability p and
    scales survivors by 1/(1-p). Eval mode is the identity and consumes no
    randomness."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if mode not in ("train", "eval"):
        raise ValueError(f"dropout mode must be 'train' or 'eval', got '{mode}'")
    if mode == "eval" or p == 0.0:
        return x
    mask = (rng.random(x.shape) >= p) / (1.0 - p)
    out = Tensor(x.data * mask)

    def bwd(g):
        x.accumulate_grad(g * mask)

    record("dropout", (x,), (out,), bwd)
    return out


def sum_all(x: Tensor) -> Tensor:
    out = Tensor(x.data.sum())

    def bwd(g):
        x.accumulate_grad(np.full_like(x.data, float(g)))

    record("sum_all", (x,), (out,), bwd)
    return out


def mean_all(x: Tensor) -> Tensor:
    out = Tensor(x.data.mean())

    def bwd(g):
        x.accumulate_grad(np.full_like(x.data, float(g) / x.size))

    record("mean_all", (x,), (out,), bwd)
    return out


def sqsum(x: Tensor) -> Tensor:
    """Sum of squared entries (the squared L2 norm)."""
    out = Tensor((x.data * x.data).sum())

    def bwd(g):
        x.accumulate_grad(2.0 * float(g) * x.data)

    record("sqsum", (x,), (out,), bwd)
    return out


# --- gradient verification ------------------------------------------------


def grad_check(f, params: list[Tensor], eps: float = 1e-5) -> float:
    """Compare reverse-mode gradients of f against central differences.

    ``f`` is a zero-argument callable that evaluates the scalar loss from
    the current values of ``params`` (it is re-run many times, so any
    internal randomness must be re-seeded identically per call). Returns
    the worst coordinate-wise relative error
        |g_analytic - g_fd| / max(1e-12, |g_analytic| + |g_fd|),
    or inf if either gradient contains a non-finite value. Call with no
    Tape active; probes then run without recording.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError(f"eps {eps} outside [1e-7, 1e-3]")
    zero_grads(params)
    with Tape() as tape:
        out = f()
        backward(out, tape)
    analytic = [np.array(p.grad, copy=True) for p in params]
    zero_grads(params)

    worst = 0.0
    for p, ga in zip(params, analytic):
        flat = p.data.reshape(-1)
        gflat = ga.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = f().item()
            flat[i] = orig - eps
            f_minus = f().item()
            flat[i] = orig
            g_fd = (f_plus - f_minus) / (2.0 * eps)
            g_an = gflat[i]
            if not (math.isfinite(g_fd) and math.isfinite(g_an)):
                return math.inf
            err = abs(g_an - g_fd) / max(1e-12, abs(g_an) + abs(g_fd))
            worst = max(worst, err)
    return worst
