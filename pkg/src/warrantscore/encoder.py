"""Generic sentence encoder: a two-layer bidirectional LSTM over word
vectors, pooled into a fixed-length representation.

Three encode modes are supported: max-pooling and last-pooling over the
BiLSTM's top-layer states, and a mean-of-word-vectors baseline that skips
the recurrent encoder entirely. All modes ignore positions at or beyond
the sentence's valid length, so representations are invariant to padding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ndcore
from .bundle import BundleError, read_bundle, write_bundle
from .ndcore import (
    ShapeError,
    Tensor,
    concat,
    last_pool,
    masked_max_pool,
    mean_rows,
    pad_rows,
    take_rows,
)
from .rng import RngStream

HIDDEN_SIZE = 300          # per direction; top-layer output is 2x this
NUM_LAYERS = 2
GATE_ORDER = ("input", "forget", "cell", "output")
ENCODE_MODES = ("bilstm-max", "bilstm-last", "bow-mean")

SCRATCH = "scratch"
PRETRAINED = "pretrained"

_INIT_RANGE = 0.005


@dataclass
class LstmDirectionWeights:
    """One direction of one layer. Rows of w_x/w_h hold the four gates
    stacked in GATE_ORDER, each block of size hidden."""

    w_x: Tensor  # (4h, in_dim)
    w_h: Tensor  # (4h, h)
    b: Tensor    # (4h,)

    @property
    def hidden(self) -> int:
        return self.w_h.shape[1]

    @property
    def in_dim(self) -> int:
        return self.w_x.shape[1]

    def check(self):
        h = self.hidden
        if self.w_x.shape[0] != 4 * h or self.w_h.shape != (4 * h, h) \
                or self.b.shape != (4 * h,):
            raise ShapeError(
                f"inconsistent LSTM weights: w_x{self.w_x.shape} "
                f"w_h{self.w_h.shape} b{self.b.shape}")


@dataclass
class LstmLayerWeights:
    fwd: LstmDirectionWeights
    bwd: LstmDirectionWeights


@dataclass
class EncoderWeights:
    """Both layers of the bidirectional encoder plus provenance."""

    layers: list[LstmLayerWeights]
    provenance: str = SCRATCH
    format_version: int = 1

    @property
    def hidden(self) -> int:
        return self.layers[0].fwd.hidden

    @property
    def output_dim(self) -> int:
        return 2 * self.hidden

    def directions(self):
        for layer in self.layers:
            yield layer.fwd
            yield layer.bwd

    def parameters(self) -> list[Tensor]:
        out = []
        for d in self.directions():
            out.extend((d.w_x, d.w_h, d.b))
        return out

    def named_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for li, layer in enumerate(self.layers):
            for tag, d in (("fwd", layer.fwd), ("bwd", layer.bwd)):
                out[f"lstm{li}.{tag}.w_x"] = d.w_x.data
                out[f"lstm{li}.{tag}.w_h"] = d.w_h.data
                out[f"lstm{li}.{tag}.b"] = d.b.data
        return out


def scratch_encoder_weights(rng: RngStream, hidden: int = HIDDEN_SIZE,
                            in_dim: int = HIDDEN_SIZE,
                            init_scale: float | None = None,
                            recurrent_scale: float = 1.0,
                            forget_bias: float = 0.0) -> EncoderWeights:
    """Randomly initialized encoder. Weights default to the standard
    recurrent-network range uniform(-1/sqrt(hidden), 1/sqrt(hidden)); the
    tiny init used for the shallow layers would stack twice here and
    squash every signal below trainability. ``recurrent_scale`` multiplies
    the recurrent-weight range and ``forget_bias`` offsets the forget-gate
    bias block (negative values start the cells token-local); both are
    per-run knobs recorded in the experiment config. Layer 2 consumes the
    concatenated directions of layer 1."""
    scale = init_scale if init_scale is not None else 1.0 / np.sqrt(hidden)

    def direction(d_in):
        b = np.zeros(4 * hidden)
        b[hidden:2 * hidden] = forget_bias
        return LstmDirectionWeights(
            w_x=Tensor(rng.uniform(-scale, scale, (4 * hidden, d_in)),
                       requires_grad=True),
            w_h=Tensor(rng.uniform(-scale * recurrent_scale,
                                   scale * recurrent_scale,
                                   (4 * hidden, hidden)),
                       requires_grad=True),
            b=Tensor(b, requires_grad=True),
        )

    layers = [
        LstmLayerWeights(direction(in_dim), direction(in_dim)),
        LstmLayerWeights(direction(2 * hidden), direction(2 * hidden)),
    ]
    return EncoderWeights(layers=layers, provenance=SCRATCH)


def lstm_step(x_t: Tensor, h_prev: Tensor, c_prev: Tensor,
              w: LstmDirectionWeights) -> tuple[Tensor, Tensor]:
    """One LSTM cell update (gate order: input, forget, cell, output)."""
    h = w.hidden
    if x_t.shape != (w.in_dim,) or h_prev.shape != (h,) or c_prev.shape != (h,):
        raise ShapeError(
            f"lstm_step: x{x_t.shape} h{h_prev.shape} c{c_prev.shape} vs "
            f"weights expecting in_dim={w.in_dim}, hidden={h}")
    a = w.w_x.data @ x_t.data + w.w_h.data @ h_prev.data + w.b.data
    gi = ndcore._stable_sigmoid(a[:h])
    gf = ndcore._stable_sigmoid(a[h:2 * h])
    gc = np.tanh(a[2 * h:3 * h])
    go = ndcore._stable_sigmoid(a[3 * h:])
    c = gf * c_prev.data + gi * gc
    tc = np.tanh(c)
    h_t = Tensor(go * tc)
    c_t = Tensor(c)

    def bwd(g_h, g_c):
        d_o = g_h * tc
        d_c = g_c + g_h * go * (1.0 - tc * tc)
        d_f = d_c * c_prev.data
        d_i = d_c * gc
        d_g = d_c * gi
        d_a = np.concatenate([
            d_i * gi * (1.0 - gi),
            d_f * gf * (1.0 - gf),
            d_g * (1.0 - gc * gc),
            d_o * go * (1.0 - go),
        ])
        if w.w_x.requires_grad:
            w.w_x.accumulate_grad(np.outer(d_a, x_t.data))
        if w.w_h.requires_grad:
            w.w_h.accumulate_grad(np.outer(d_a, h_prev.data))
        if w.b.requires_grad:
            w.b.accumulate_grad(d_a)
        if x_t.requires_grad:
            x_t.accumulate_grad(w.w_x.data.T @ d_a)
        if h_prev.requires_grad:
            h_prev.accumulate_grad(w.w_h.data.T @ d_a)
        if c_prev.requires_grad:
            c_prev.accumulate_grad(d_c * gf)

    ndcore.record("lstm_step", (x_t, h_prev, c_prev, w.w_x, w.w_h, w.b),
                  (h_t, c_t), bwd)
    return h_t, c_t


def lstm_sequence(x: Tensor, w: LstmDirectionWeights,
                  reverse: bool = False) -> Tensor:
    """All timesteps of one direction as a single fused tape node.

    Equivalent to folding lstm_step over the rows of x from zero initial
    states (over reversed rows when ``reverse``, with the output realigned
    to input positions). One node keeps tapes short and lets the input
    projection run as a single matmul.
    """
    if x.data.ndim != 2 or x.shape[1] != w.in_dim:
        raise ShapeError(
            f"lstm_sequence: input {x.shape} vs weights expecting "
            f"in_dim={w.in_dim}")
    n = x.shape[0]
    h = w.hidden
    xs = x.data[::-1] if reverse else x.data
    wx, wh, b = w.w_x.data, w.w_h.data, w.b.data

    pre = xs @ wx.T + b  # per-step input contribution, (n, 4h)
    gate_i = np.empty((n, h))
    gate_f = np.empty((n, h))
    gate_g = np.empty((n, h))
    gate_o = np.empty((n, h))
    tanh_c = np.empty((n, h))
    h_in = np.empty((n, h))
    c_in = np.empty((n, h))
    states = np.empty((n, h))
    hv = np.zeros(h)
    cv = np.zeros(h)
    for t in range(n):
        h_in[t] = hv
        c_in[t] = cv
        a = pre[t] + wh @ hv
        gi = ndcore._stable_sigmoid(a[:2 * h])
        gate_i[t] = gi[:h]
        gate_f[t] = gi[h:]
        gate_g[t] = np.tanh(a[2 * h:3 * h])
        gate_o[t] = ndcore._stable_sigmoid(a[3 * h:])
        cv = gate_f[t] * cv + gate_i[t] * gate_g[t]
        tanh_c[t] = np.tanh(cv)
        hv = gate_o[t] * tanh_c[t]
        states[t] = hv
    out = Tensor(states[::-1].copy() if reverse else states)

    def bwd(g_out):
        grads = g_out[::-1] if reverse else g_out
        d_pre = np.empty((n, 4 * h))
        dh_next = np.zeros(h)
        dc_next = np.zeros(h)
        for t in range(n - 1, -1, -1):
            gi, gf, gg, go = gate_i[t], gate_f[t], gate_g[t], gate_o[t]
            tc = tanh_c[t]
            dh = grads[t] + dh_next
            d_o = dh * tc
            d_c = dc_next + dh * go * (1.0 - tc * tc)
            d_pre[t, :h] = (d_c * gg) * gi * (1.0 - gi)
            d_pre[t, h:2 * h] = (d_c * c_in[t]) * gf * (1.0 - gf)
            d_pre[t, 2 * h:3 * h] = (d_c * gi) * (1.0 - gg * gg)
            d_pre[t, 3 * h:] = d_o * go * (1.0 - go)
            dh_next = wh.T @ d_pre[t]
            dc_next = d_c * gf
        if w.w_x.requires_grad:
            w.w_x.accumulate_grad(d_pre.T @ xs)
        if w.w_h.requires_grad:
            w.w_h.accumulate_grad(d_pre.T @ h_in)
        if w.b.requires_grad:
            w.b.accumulate_grad(d_pre.sum(axis=0))
        if x.requires_grad:
            dx = d_pre @ wx
            x.accumulate_grad(dx[::-1] if reverse else dx)

    ndcore.record("lstm_sequence", (x, w.w_x, w.w_h, w.b), (out,), bwd)
    return out


def bilstm_forward(x: Tensor, valid_len: int, w: EncoderWeights) -> Tensor:
    """Per-token top-layer states [h_fwd; h_bwd]; rows >= valid_len are zero.

    Both directions start from zero states and traverse only the valid
    prefix, so pad rows never influence any output position.
    """
    if x.data.ndim != 2:
        raise ShapeError(f"bilstm_forward expects (n, d) input, got {x.shape}")
    n = x.shape[0]
    if not 1 <= valid_len <= n:
        raise ValueError(f"valid_len {valid_len} outside [1, {n}]")
    current = x if valid_len == n else take_rows(x, valid_len)
    for layer in w.layers:
        fwd = lstm_sequence(current, layer.fwd)
        rev = lstm_sequence(current, layer.bwd, reverse=True)
        current = concat([fwd, rev])
    return pad_rows(current, n)


@dataclass
class SentenceRep:
    s: Tensor
    pooling: str  # max | last | bow-mean


def encode(tokens: Tensor, valid_len: int, mode: str,
           w: EncoderWeights | None = None) -> SentenceRep:
    """Fixed-length sentence representation from per-token word vectors."""
    if mode not in ENCODE_MODES:
        raise ValueError(f"unknown encode mode '{mode}' (use one of {ENCODE_MODES})")
    if mode == "bow-mean":
        return SentenceRep(mean_rows(tokens, valid_len), "bow-mean")
    if w is None:
        raise ValueError(f"encode mode '{mode}' requires encoder weights")
    states = bilstm_forward(tokens, valid_len, w)
    if mode == "bilstm-max":
        return SentenceRep(masked_max_pool(states, valid_len), "max")
    return SentenceRep(last_pool(states, valid_len), "last")


# --- persistence -----------------------------------------------------------

_PROVENANCE_CODE = {SCRATCH: 0.0, PRETRAINED: 1.0}
_PROVENANCE_NAME = {v: k for k, v in _PROVENANCE_CODE.items()}


def write_encoder_bundle(w: EncoderWeights, path):
    arrays = dict(w.named_arrays())
    arrays["meta.provenance"] = np.array([_PROVENANCE_CODE[w.provenance]])
    write_bundle(path, arrays)


def _direction_from_arrays(arrays, prefix, in_dim, hidden):
    parts = {}
    for tag, want in (("w_x", (4 * hidden, in_dim)),
                      ("w_h", (4 * hidden, hidden)),
                      ("b", (4 * hidden,))):
        name = f"{prefix}.{tag}"
        if name not in arrays:
            raise BundleError(f"encoder bundle missing array {name!r}")
        arr = arrays[name]
        if arr.shape != want:
            raise BundleError(
                f"encoder bundle array {name!r} has shape {arr.shape}, "
                f"expected {want}")
        parts[tag] = Tensor(np.asarray(arr, dtype=np.float64), requires_grad=True)
    return LstmDirectionWeights(**parts)


def read_encoder_bundle(path) -> EncoderWeights:
    """Reconstruct encoder weights, validating every shape against the
    two-layer bidirectional layout implied by the stored hidden size."""
    arrays = read_bundle(path)
    if "lstm0.fwd.w_h" not in arrays:
        raise BundleError(f"{path}: not an encoder bundle (no lstm0.fwd.w_h)")
    hidden = arrays["lstm0.fwd.w_h"].shape[1]
    in_dim = arrays["lstm0.fwd.w_x"].shape[1] if "lstm0.fwd.w_x" in arrays else None
    if in_dim is None:
        raise BundleError(f"{path}: missing array 'lstm0.fwd.w_x'")
    layers = []
    for li, d_in in ((0, in_dim), (1, 2 * hidden)):
        layers.append(LstmLayerWeights(
            fwd=_direction_from_arrays(arrays, f"lstm{li}.fwd", d_in, hidden),
            bwd=_direction_from_arrays(arrays, f"lstm{li}.bwd", d_in, hidden),
        ))
    code = float(arrays.get("meta.provenance", np.array([0.0]))[0])
    provenance = _PROVENANCE_NAME.get(code, SCRATCH)
    return EncoderWeights(layers=layers, provenance=provenance)
