"""Full-precision reference implementation of the training math.

All kernels are pure functions over (B, CH, R, C) numpy arrays and follow
the accelerator's arithmetic exactly: plain SGD, batch statistics over the
whole mini-batch, loss routed through recorded pool argmax codes.  The
training pipeline runs in float32; kernels keep the dtype of their inputs
so the same code serves float64 gradient checking.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import (LabelOutOfRange, MissingIndices, ShapeMismatch,
                     StaleState)
from .model import Kind, NetworkSpec, require_trainable

BN_EPSILON = 1e-5


def _check(cond: bool, msg: str) -> None:
    if not cond:
        raise ShapeMismatch(msg)


def _pad2d(a: np.ndarray, pad: int) -> np.ndarray:
    if pad == 0:
        return a
    return np.pad(a, ((0, 0), (0, 0), (pad, pad), (pad, pad)))


def _windows(a_pad: np.ndarray, k: int, s: int) -> np.ndarray:
    """(B, N, R, C, k, k) view of every stride-s window."""
    w = sliding_window_view(a_pad, (k, k), axis=(2, 3))
    return w[:, :, ::s, ::s]


def conv_fp(a: np.ndarray, w: np.ndarray, stride: int = 1, pad: int = 0) -> np.ndarray:
    """out[b,m,r,c] = sum_n,kr,kc a[b,n,s*r+kr,s*c+kc] * w[m,n,kr,kc]."""
    _check(a.ndim == 4 and w.ndim == 4, "conv_fp expects 4-d tensors")
    _check(a.shape[1] == w.shape[1], f"channels {a.shape[1]} != kernel n {w.shape[1]}")
    k = w.shape[2]
    _check(w.shape[2] == w.shape[3], "kernel must be square")
    win = _windows(_pad2d(a, pad), k, stride)
    return np.einsum("bnrckl,mnkl->bmrc", win, w, optimize=True)


def conv_bp(l_next: np.ndarray, w: np.ndarray, stride: int = 1, pad: int = 0,
            in_hw: tuple[int, int] | None = None) -> np.ndarray:
    """Adjoint of conv_fp with respect to the activations.

    Scatter of l_next * w back through every window: transposed-convolution
    semantics (the loss is implicitly dilated by the stride before the
    kernel-flipped correlation).
    """
    _check(l_next.ndim == 4 and w.ndim == 4, "conv_bp expects 4-d tensors")
    _check(l_next.shape[1] == w.shape[0], f"loss channels {l_next.shape[1]} != m {w.shape[0]}")
    b, m, r, c = l_next.shape
    _, n, k, _ = w.shape
    if in_hw is None:
        in_hw = ((r - 1) * stride + k - 2 * pad, (c - 1) * stride + k - 2 * pad)
    hi, wi = in_hw
    grad_pad = np.zeros((b, n, hi + 2 * pad, wi + 2 * pad), dtype=l_next.dtype)
    g = np.einsum("bmrc,mnkl->bnrckl", l_next, w, optimize=True)
    for kr in range(k):
        for kc in range(k):
            grad_pad[:, :, kr:kr + stride * r:stride, kc:kc + stride * c:stride] += g[..., kr, kc]
    if pad:
        grad_pad = grad_pad[:, :, pad:pad + hi, pad:pad + wi]
    return grad_pad


def conv_wu(a: np.ndarray, l_next: np.ndarray, k: int, stride: int = 1,
            pad: int = 0) -> np.ndarray:
    """dW[m,n,kr,kc] = sum_b,r,c l_next[b,m,r,c] * a[b,n,s*r+kr,s*c+kc].

    Accumulates over the whole mini-batch.
    """
    _check(a.ndim == 4 and l_next.ndim == 4, "conv_wu expects 4-d tensors")
    _check(a.shape[0] == l_next.shape[0], "batch sizes differ")
    win = _windows(_pad2d(a, pad), k, stride)
    _check(win.shape[2:4] == l_next.shape[2:4],
           f"loss map {l_next.shape[2:4]} inconsistent with windows {win.shape[2:4]}")
    return np.einsum("bmrc,bnrckl->mnkl", l_next, win, optimize=True)


def sgd_apply(w: np.ndarray, dw: np.ndarray, lr: float) -> np.ndarray:
    _check(w.shape == dw.shape, "weight/gradient shapes differ")
    return w - np.asarray(lr, dtype=w.dtype) * dw


def relu_fp(a: np.ndarray) -> np.ndarray:
    return np.maximum(a, 0)


def relu_bp(l_next: np.ndarray, a: np.ndarray) -> np.ndarray:
    _check(l_next.shape == a.shape, "relu_bp shapes differ")
    return np.where(a > 0, l_next, 0)


def pool_fp(a: np.ndarray, k: int, stride: int,
            mode: Kind) -> tuple[np.ndarray, np.ndarray | None]:
    """Window-max or window-mean; max pooling records the argmax code.

    The code is the row-major position inside the window (2 bits for the
    common 2x2 window); ties take the first maximum.
    """
    win = _windows(a, k, stride)
    b, ch, r, c, _, _ = win.shape
    flat = win.reshape(b, ch, r, c, k * k)
    if mode is Kind.MAXPOOL:
        idx = np.argmax(flat, axis=-1).astype(np.uint8)
        out = np.take_along_axis(flat, idx[..., None].astype(np.int64), axis=-1)[..., 0]
        return out, idx
    if mode is Kind.AVGPOOL:
        return flat.mean(axis=-1, dtype=a.dtype), None
    raise ShapeMismatch(f"not a pooling kind: {mode}")


def pool_bp(l_next: np.ndarray, idx: np.ndarray | None, k: int, stride: int,
            mode: Kind, in_hw: tuple[int, int]) -> np.ndarray:
    """Route loss to the recorded argmax cell (max) or spread l/k^2 (avg)."""
    b, ch, r, c = l_next.shape
    hi, wi = in_hw
    out = np.zeros((b, ch, hi, wi), dtype=l_next.dtype)
    if mode is Kind.MAXPOOL:
        if idx is None:
            raise MissingIndices("max-pool backward needs the recorded indices")
        _check(idx.shape == l_next.shape, "index/loss shapes differ")
        kr = (idx // k).astype(np.int64)
        kc = (idx % k).astype(np.int64)
        rr = stride * np.arange(r)[None, None, :, None] + kr
        cc = stride * np.arange(c)[None, None, None, :] + kc
        bb = np.arange(b)[:, None, None, None]
        mm = np.arange(ch)[None, :, None, None]
        np.add.at(out, (bb, mm, rr, cc), l_next)
        return out
    if mode is Kind.AVGPOOL:
        share = l_next / np.asarray(k * k, dtype=l_next.dtype)
        for kr in range(k):
            for kc in range(k):
                out[:, :, kr:kr + stride * r:stride, kc:kc + stride * c:stride] += share
        return out
    raise ShapeMismatch(f"not a pooling kind: {mode}")


@dataclass
class BnState:
    """Learnable gamma/beta plus the per-batch carriers the backward needs."""

    gamma: np.ndarray
    beta: np.ndarray
    eps: float = BN_EPSILON
    lam: np.ndarray | None = None
    a_hat: np.ndarray | None = None
    ex: np.ndarray | None = None
    ex2: np.ndarray | None = None
    var: np.ndarray | None = None

    @classmethod
    def init(cls, channels: int, dtype=np.float32) -> "BnState":
        return cls(gamma=np.ones(channels, dtype=dtype),
                   beta=np.zeros(channels, dtype=dtype))


def bn_fp(a: np.ndarray, st: BnState) -> np.ndarray:
    """Normalize per channel over the whole mini-batch, then scale/shift.

    E(X) and E(X^2) are plain means over (batch, rows, cols); the variance
    is E(X^2) - E(X)^2 and lambda = 1/sqrt(var + eps).
    """
    _check(a.ndim == 4 and a.shape[1] == st.gamma.shape[0], "bn_fp channel mismatch")
    dt = a.dtype
    st.ex = a.mean(axis=(0, 2, 3), dtype=dt)
    st.ex2 = (a * a).mean(axis=(0, 2, 3), dtype=dt)
    st.var = st.ex2 - st.ex * st.ex
    st.lam = 1.0 / np.sqrt(st.var + np.asarray(st.eps, dtype=dt))
    st.a_hat = (a - st.ex[None, :, None, None]) * st.lam[None, :, None, None]
    return st.a_hat * st.gamma.astype(dt)[None, :, None, None] \
        + st.beta.astype(dt)[None, :, None, None]


def bn_bp(l_next: np.ndarray, st: BnState, lr: float) -> np.ndarray:
    """Gradients for gamma/beta, in-place SGD on them, and the input loss.

    l[b,m,r,c] = gamma*lambda*(l_next - dbeta/(B*R*C) - a_hat*dgamma/(B*R*C))
    """
    if st.lam is None or st.a_hat is None:
        raise StaleState("bn_bp without a preceding bn_fp")
    _check(l_next.shape == st.a_hat.shape, "bn_bp loss shape differs from a_hat")
    dt = l_next.dtype
    count = l_next.shape[0] * l_next.shape[2] * l_next.shape[3]
    dgamma = np.sum(l_next * st.a_hat, axis=(0, 2, 3), dtype=dt)
    dbeta = np.sum(l_next, axis=(0, 2, 3), dtype=dt)
    inv = np.asarray(1.0 / count, dtype=dt)
    coeff = (st.gamma.astype(dt) * st.lam)[None, :, None, None]
    out = coeff * (l_next - dbeta[None, :, None, None] * inv
                   - st.a_hat * dgamma[None, :, None, None] * inv)
    st.gamma = (st.gamma - np.asarray(lr, st.gamma.dtype) * dgamma.astype(st.gamma.dtype))
    st.beta = (st.beta - np.asarray(lr, st.beta.dtype) * dbeta.astype(st.beta.dtype))
    st.lam = st.a_hat = None  # consumed; a second bn_bp would use stale carriers
    return out


def softmax_xent(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy after softmax; gradient (softmax - onehot)/B."""
    _check(logits.ndim == 4 and logits.shape[2:] == (1, 1),
           "softmax expects (B, classes, 1, 1) logits")
    b, classes = logits.shape[:2]
    labels = np.asarray(labels)
    if labels.shape != (b,):
        raise ShapeMismatch(f"labels shape {labels.shape} != ({b},)")
    if labels.min() < 0 or labels.max() >= classes:
        raise LabelOutOfRange(f"labels outside [0, {classes})")
    z = logits[:, :, 0, 0]
    z = z - z.max(axis=1, keepdims=True)
    ez = np.exp(z)
    soft = ez / ez.sum(axis=1, keepdims=True)
    loss = float(-np.log(soft[np.arange(b), labels] + 1e-30).mean())
    grad = soft.copy()
    grad[np.arange(b), labels] -= 1
    grad /= b
    return loss, grad[:, :, None, None].astype(logits.dtype)


@dataclass
class Params:
    """Per-layer trainable state for one network."""

    weights: dict[int, np.ndarray] = field(default_factory=dict)
    bn: dict[int, BnState] = field(default_factory=dict)

    def copy(self) -> "Params":
        out = Params()
        out.weights = {i: w.copy() for i, w in self.weights.items()}
        for i, st in self.bn.items():
            out.bn[i] = BnState(gamma=st.gamma.copy(), beta=st.beta.copy(), eps=st.eps)
        return out


def init_params(net: NetworkSpec, seed: int = 0, dtype=np.float32) -> Params:
    """Uniform(-s, s) with s = sqrt(1 / (n * k^2)), deterministic per seed."""
    rng = np.random.default_rng(seed)
    params = Params()
    for i, l in enumerate(net.layers):
        if l.weighted:
            s = float(np.sqrt(1.0 / (l.n * l.k * l.k)))
            params.weights[i] = rng.uniform(-s, s, size=(l.m, l.n, l.k, l.k)).astype(dtype)
        elif l.kind is Kind.BATCHNORM:
            params.bn[i] = BnState.init(l.m, dtype=dtype)
    return params


def _flat(a: np.ndarray) -> np.ndarray:
    return a.reshape(a.shape[0], -1, 1, 1)


def forward(net: NetworkSpec, params: Params, x: np.ndarray,
            keep: bool = False):
    """Run the forward pass; with keep=True also return what BP/WU need.

    acts[i] holds the input of layer i exactly as the previous layer
    produced it; flattening for 1x1 FC layers happens at the use site.
    """
    acts: list[np.ndarray] = []
    pool_idx: dict[int, np.ndarray] = {}
    a = x
    for i, l in enumerate(net.layers):
        acts.append(a)
        if l.weighted:
            a = conv_fp(_flat(a) if l.flatten_input else a,
                        params.weights[i], l.s, l.pad)
        elif l.is_pool:
            a, idx = pool_fp(a, l.k, l.s, l.kind)
            if idx is not None:
                pool_idx[i] = idx
        elif l.kind is Kind.RELU:
            a = relu_fp(a)
        elif l.kind is Kind.BATCHNORM:
            a = bn_fp(a, params.bn[i])
        elif l.kind is Kind.SOFTMAX_XENT:
            break
    if keep:
        return a, acts, pool_idx
    return a


def train_minibatch(net: NetworkSpec, params: Params, x: np.ndarray,
                    labels: np.ndarray) -> tuple[float, Params]:
    """One full FP -> loss -> BP -> WU -> SGD pass over a mini-batch."""
    require_trainable(net)
    logits, acts, pool_idx = forward(net, params, x, keep=True)
    loss, l_back = softmax_xent(logits, labels)
    lr = net.learning_rate
    grads: dict[int, np.ndarray] = {}
    for i in range(len(net.layers) - 2, -1, -1):
        l = net.layers[i]
        if l.weighted:
            a_in = _flat(acts[i]) if l.flatten_input else acts[i]
            grads[i] = conv_wu(a_in, l_back, l.k, l.s, l.pad)
            if i == 0:
                break  # loss is never propagated past the first layer
            l_back = conv_bp(l_back, params.weights[i], l.s, l.pad,
                             (a_in.shape[2], a_in.shape[3]))
            if l.flatten_input:
                l_back = l_back.reshape(acts[i].shape)
        elif l.is_pool:
            l_back = pool_bp(l_back, pool_idx.get(i), l.k, l.s, l.kind,
                             (l.r_in, l.c_in))
        elif l.kind is Kind.RELU:
            l_back = relu_bp(l_back, acts[i])
        elif l.kind is Kind.BATCHNORM:
            l_back = bn_bp(l_back, params.bn[i], lr)
    for i, dw in grads.items():
        params.weights[i] = sgd_apply(params.weights[i], dw, lr)
    return loss, params


# -- checkpoint container: versioned magic, per-array dims header, RAW float32 --

CHECKPOINT_MAGIC = b"TSCKPT01"


def save_checkpoint(path, params: Params) -> None:
    items: list[tuple[str, np.ndarray]] = []
    for i, w in sorted(params.weights.items()):
        items.append((f"w{i}", w))
    for i, st in sorted(params.bn.items()):
        items.append((f"bn{i}.gamma", st.gamma))
        items.append((f"bn{i}.beta", st.beta))
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", len(items)))
        for name, arr in items:
            enc = name.encode()
            a32 = np.ascontiguousarray(arr, dtype="<f4")
            f.write(struct.pack("<H", len(enc)))
            f.write(enc)
            f.write(struct.pack("<I", a32.ndim))
            f.write(struct.pack(f"<{a32.ndim}I", *a32.shape))
            f.write(a32.tobytes())


def load_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as f:
        if f.read(8) != CHECKPOINT_MAGIC:
            raise ValueError("bad checkpoint magic")
        (count,) = struct.unpack("<I", f.read(4))
        out: dict[str, np.ndarray] = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<H", f.read(2))
            name = f.read(nlen).decode()
            (ndim,) = struct.unpack("<I", f.read(4))
            shape = struct.unpack(f"<{ndim}I", f.read(4 * ndim))
            n = int(np.prod(shape)) if shape else 1
            out[name] = np.frombuffer(f.read(4 * n), dtype="<f4").reshape(shape).copy()
    return out


__all__ = [
    "BN_EPSILON", "BnState", "Params",
    "conv_fp", "conv_bp", "conv_wu", "sgd_apply", "relu_fp", "relu_bp",
    "pool_fp", "pool_bp", "bn_fp", "bn_bp", "softmax_xent",
    "init_params", "forward", "train_minibatch",
    "save_checkpoint", "load_checkpoint",
]
