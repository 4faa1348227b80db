"""Neural-network building blocks on top of the autodiff core.

Contains the fused sequence kernel (single-direction LSTM over a padded
batch), the 2-D convolution kernel, and small layer classes (Linear,
two-layer perceptron, bidirectional LSTM encoder, embedding table,
conv layer).  Layers register their parameters in a ``ParameterStore``
under dotted names at construction time.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor
from .rng import Rng

__all__ = [
    "lstm_seq",
    "conv2d",
    "uniform_init",
    "Linear",
    "Mlp2",
    "BiLstm",
    "bilstm_encode",
    "EmbeddingTable",
    "Conv2d",
]


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-x))


def lstm_seq(x: Tensor, w_ih: Tensor, w_hh: Tensor, b: Tensor,
             mask: np.ndarray | None = None, reverse: bool = False) -> Tensor:
    """Run one LSTM direction over a (B, L, d_in) batch.

    Gate layout along the last weight axis is input/forget/cell/output.
    ``mask`` is a constant (B, L) array of 0/1 floats; masked steps do
    not update the recurrent state and their outputs are zero, so
    right-padded batches behave like their unpadded sequences in both
    directions.  Returns (B, L, H).

    The whole pass is recorded as a single tape node with a hand-rolled
    BPTT backward, which keeps tape overhead off the per-step path.
    """
    B, L, d_in = x.shape
    if w_ih.shape[0] != d_in or w_ih.shape[1] % 4 != 0:
        raise ShapeError(f"lstm_seq: w_ih {w_ih.shape} incompatible with input {x.shape}")
    H = w_ih.shape[1] // 4
    if w_hh.shape != (H, 4 * H) or b.shape != (4 * H,):
        raise ShapeError(f"lstm_seq: recurrent shapes {w_hh.shape}/{b.shape} "
                         f"do not match hidden size {H}")
    if mask is None:
        m_all = np.ones((B, L), dtype=np.float64)
    else:
        m_all = np.asarray(mask, dtype=np.float64)
        if m_all.shape != (B, L):
            raise ShapeError(f"lstm_seq: mask {m_all.shape} does not match batch {(B, L)}")

    order = range(L - 1, -1, -1) if reverse else range(L)
    pre = x.data @ w_ih.data + b.data
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    out = np.zeros((B, L, H))
    cache = []
    for t in order:
        g = pre[:, t] + h @ w_hh.data
        i = _sigmoid(g[:, :H])
        f = _sigmoid(g[:, H:2 * H])
        gg = np.tanh(g[:, 2 * H:3 * H])
        o = _sigmoid(g[:, 3 * H:])
        c_new = f * c + i * gg
        tc = np.tanh(c_new)
        h_new = o * tc
        m = m_all[:, t:t + 1]
        out[:, t] = m * h_new
        cache.append((t, i, f, gg, o, tc, c, h, m))
        h = m * h_new + (1.0 - m) * h
        c = m * c_new + (1.0 - m) * c

    out_t = Tensor(out, x.requires_grad or w_ih.requires_grad
                   or w_hh.requires_grad or b.requires_grad)

    def bwd(grad_out):
        dpre = np.zeros_like(pre)
        dw_hh = np.zeros_like(w_hh.data)
        dh = np.zeros((B, H))
        dc = np.zeros((B, H))
        for t, i, f, gg, o, tc, c_prev, h_prev, m in reversed(cache):
            dh_new = m * (dh + grad_out[:, t])
            dh_prev_carry = (1.0 - m) * dh
            dc_new = m * dc
            dc_prev_carry = (1.0 - m) * dc
            do = dh_new * tc
            dc_new = dc_new + dh_new * o * (1.0 - tc * tc)
            df = dc_new * c_prev
            di = dc_new * gg
            dgg = dc_new * i
            dc = dc_new * f + dc_prev_carry
            dg = np.concatenate([
                di * i * (1.0 - i),
                df * f * (1.0 - f),
                dgg * (1.0 - gg * gg),
                do * o * (1.0 - o),
            ], axis=1)
            dpre[:, t] = dg
            dw_hh += h_prev.T @ dg
            dh = dg @ w_hh.data.T + dh_prev_carry
        dx = dpre @ w_ih.data.T
        dw_ih = x.data.reshape(-1, d_in).T @ dpre.reshape(-1, 4 * H)
        db = dpre.sum(axis=(0, 1))
        return dx, dw_ih, dw_hh, db

    ad._record("lstm_seq", (x, w_ih, w_hh, b), out_t, bwd)
    return out_t


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """2-D convolution, stride 1, zero padding that preserves H and W.

    ``x`` is (B, C, H, W), ``w`` is (K, C, kh, kw) with odd kernel
    sides, ``b`` is (K,).  Forward is im2col + one matmul; backward is
    the matching col2im scatter, all in a single tape node.
    """
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d: need 4-D input and kernel, got {x.shape} and {w.shape}")
    B, C, H, W = x.shape
    K, Cw, kh, kw = w.shape
    if Cw != C:
        raise ShapeError(f"conv2d: input has {C} channels but kernel expects {Cw}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"conv2d: kernel sides must be odd for same-padding, got {kh}x{kw}")
    if b is not None and b.shape != (K,):
        raise ShapeError(f"conv2d: bias {b.shape} does not match {K} output channels")
    ph, pw = kh // 2, kw // 2

    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(B * H * W, C * kh * kw)
    wflat = w.data.reshape(K, C * kh * kw)
    out_flat = cols @ wflat.T
    if b is not None:
        out_flat = out_flat + b.data
    out_data = out_flat.reshape(B, H, W, K).transpose(0, 3, 1, 2)
    req = x.requires_grad or w.requires_grad or (b is not None and b.requires_grad)
    out = Tensor(out_data, req)

    def bwd(g):
        gflat = g.transpose(0, 2, 3, 1).reshape(B * H * W, K)
        gw = (gflat.T @ cols).reshape(K, C, kh, kw)
        gcols = gflat @ wflat
        gwin = gcols.reshape(B, H, W, C, kh, kw)
        gxp = np.zeros_like(xp)
        for u in range(kh):
            for v in range(kw):
                gxp[:, :, u:u + H, v:v + W] += gwin[:, :, :, :, u, v].transpose(0, 3, 1, 2)
        gx = gxp[:, :, ph:ph + H, pw:pw + W]
        if b is None:
            return gx, gw
        return gx, gw, gflat.sum(axis=0)

    inputs = (x, w) if b is None else (x, w, b)
    ad._record("conv2d", inputs, out, bwd)
    return out


ad.OPS["lstm_seq"] = lambda inputs, attrs: lstm_seq(
    inputs[0], inputs[1], inputs[2], inputs[3],
    attrs.get("mask"), attrs.get("reverse", False))
ad.OPS["conv2d"] = lambda inputs, attrs: conv2d(
    inputs[0], inputs[1], inputs[2] if len(inputs) > 2 else None)


# ---------------------------------------------------------------------------
# layers


def uniform_init(rng: Rng, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    """Uniform init in [-1/sqrt(fan_in), 1/sqrt(fan_in)]."""
    bound = 1.0 / np.sqrt(max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape)


class Linear:
    """Affine map over the last axis: y = x @ w + b."""

    def __init__(self, store, prefix: str, d_in: int, d_out: int, rng: Rng):
        self.w = store.param(f"{prefix}.w", uniform_init(rng, (d_in, d_out), d_in))
        self.b = store.param(f"{prefix}.b", uniform_init(rng, (d_out,), d_in))

    def __call__(self, x: Tensor) -> Tensor:
        return ad.add(ad.matmul(x, self.w), self.b)


class Mlp2:
    """Two-layer perceptron with a tanh hidden layer."""

    def __init__(self, store, prefix: str, d_in: int, d_hidden: int, d_out: int, rng: Rng):
        self.fc1 = Linear(store, f"{prefix}.fc1", d_in, d_hidden, rng)
        self.fc2 = Linear(store, f"{prefix}.fc2", d_hidden, d_out, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(ad.tanh(self.fc1(x)))


class _LstmDirection:
    def __init__(self, store, prefix: str, d_in: int, hidden: int, rng: Rng):
        self.w_ih = store.param(f"{prefix}.w_ih", uniform_init(rng, (d_in, 4 * hidden), hidden))
        self.w_hh = store.param(f"{prefix}.w_hh", uniform_init(rng, (hidden, 4 * hidden), hidden))
        bias = uniform_init(rng, (4 * hidden,), hidden)
        bias[hidden:2 * hidden] = 1.0  # forget gate starts open
        self.b = store.param(f"{prefix}.b", bias)


class BiLstm:
    """Bidirectional LSTM whose output concatenates both directions."""

    def __init__(self, store, prefix: str, d_in: int, d_out: int, rng: Rng):
        if d_out % 2 != 0:
            raise ValueError(f"BiLstm output dim must be even, got {d_out}")
        self.hidden = d_out // 2
        self.fwd = _LstmDirection(store, f"{prefix}.fwd", d_in, self.hidden, rng)
        self.bwd = _LstmDirection(store, f"{prefix}.bwd", d_in, self.hidden, rng)

    def __call__(self, x: Tensor, mask: np.ndarray | None = None) -> Tensor:
        """Encode (B, L, d_in) -> (B, L, d_out)."""
        if x.ndim != 3:
            raise ShapeError(f"BiLstm: expected (B, L, d_in), got {x.shape}")
        if x.shape[1] == 0:
            raise ShapeError("BiLstm: empty sequence")
        f = lstm_seq(x, self.fwd.w_ih, self.fwd.w_hh, self.fwd.b, mask, reverse=False)
        b = lstm_seq(x, self.bwd.w_ih, self.bwd.w_hh, self.bwd.b, mask, reverse=True)
        return ad.concat([f, b], axis=-1)


def bilstm_encode(sequence: Tensor, encoder: BiLstm, mask: np.ndarray | None = None) -> Tensor:
    """Encode a single (L, d_in) sequence to (L, d_out)."""
    if sequence.ndim != 2:
        raise ShapeError(f"bilstm_encode: expected (L, d_in), got {sequence.shape}")
    if sequence.shape[0] == 0:
        raise ShapeError("bilstm_encode: empty sequence")
    batched = ad.reshape(sequence, (1,) + sequence.shape)
    out = encoder(batched, None if mask is None else np.asarray(mask)[None, :])
    return ad.reshape(out, (sequence.shape[0], 2 * encoder.hidden))


class EmbeddingTable:
    """Trainable token embeddings with PAD (id 0) pinned to zero."""

    def __init__(self, store, prefix: str, vocab_size: int, dim: int, rng: Rng):
        table = uniform_init(rng, (vocab_size, dim), dim)
        table[0] = 0.0
        self.table = store.param(f"{prefix}.table", table)
        self.dim = dim

    def lookup(self, ids) -> Tensor:
        return ad.embedding(self.table, ids, pad_zero=True)

    def bag(self, ids) -> Tensor:
        return ad.embedding_bag(self.table, ids, pad_zero=True)


class Conv2d:
    """Same-padding 3x3-style convolution layer."""

    def __init__(self, store, prefix: str, c_in: int, c_out: int, kernel: int, rng: Rng):
        fan_in = c_in * kernel * kernel
        self.w = store.param(f"{prefix}.w",
                             uniform_init(rng, (c_out, c_in, kernel, kernel), fan_in))
        self.b = store.param(f"{prefix}.b", uniform_init(rng, (c_out,), fan_in))

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.w, self.b)
