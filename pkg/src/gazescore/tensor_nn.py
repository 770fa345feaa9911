"""Minimal layer engine for the gaze DenseNet.

Every primitive is a pair of plain functions (forward, backward) on numpy
arrays. Sequence tensors use the layout (batch, channels, length); flat
tensors use (batch, features). There is no autodiff graph: callers keep
whatever the backward function needs.
"""
from __future__ import annotations

import io
import json
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np


class ShapeError(ValueError):
    pass


class StatisticsError(ValueError):
    pass


class CheckpointError(Exception):
    pass


@dataclass
class Parameter:
    """Trainable array plus its gradient and Adam moment buffers."""

    value: np.ndarray
    grad: np.ndarray = field(init=False, repr=False)
    m: np.ndarray = field(init=False, repr=False)
    v: np.ndarray = field(init=False, repr=False)
    step_count: int = 0

    def __post_init__(self):
        self.grad = np.zeros_like(self.value)
        self.m = np.zeros_like(self.value)
        self.v = np.zeros_like(self.value)

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad.fill(0)


@dataclass(frozen=True)
class ConvSpec:
    in_channels: int
    out_channels: int
    kernel: int = 3
    dilation: int = 1
    stride: int = 1
    padding: int | None = None

    @property
    def pad(self) -> int:
        return self.dilation * (self.kernel - 1) // 2 if self.padding is None else self.padding

    def __post_init__(self):
        if self.stride != 1:
            raise ValueError("only stride 1 is supported")
        if self.dilation < 1 or self.kernel < 1:
            raise ValueError("kernel and dilation must be >= 1")
        if 2 * self.pad != self.dilation * (self.kernel - 1):
            raise ValueError("padding must preserve length: 2*padding == dilation*(kernel-1)")


# ---------------------------------------------------------------------------
# convolution


def _pack(x: np.ndarray, gap: int) -> np.ndarray:
    """Lay a (B, C, L) batch out as one (C, gap + B*(L+gap)) sequence.

    Each sample is followed by `gap` zeros and the first one is preceded by
    `gap` zeros, so a length-preserving convolution over the packed sequence
    is exactly the per-sample zero-padded convolution.
    """
    B, C, L = x.shape
    buf = np.zeros((C, gap + B * (L + gap)), dtype=x.dtype)
    buf[:, gap:].reshape(C, B, L + gap)[:, :, :L] = x.transpose(1, 0, 2)
    return buf


def _unpack(buf: np.ndarray, B: int, L: int, gap: int) -> np.ndarray:
    C = buf.shape[0]
    view = buf[:, gap:].reshape(C, B, L + gap)[:, :, :L]
    return np.ascontiguousarray(view.transpose(1, 0, 2))


def _tap_ranges(kernel: int, dilation: int, pad: int, T: int):
    for j in range(kernel):
        s = j * dilation - pad
        lo, hi = max(0, -s), T - max(0, s)
        yield j, s, lo, hi


def _check_conv(x, w, spec):
    if x.ndim != 3 or w.ndim != 3:
        raise ShapeError(f"conv1d expects x (B,C,L) and w (O,C,k), got {x.shape} and {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise ShapeError(f"input has {x.shape[1]} channels, weight expects {w.shape[1]}")
    if spec is not None and (w.shape[0], w.shape[1], w.shape[2]) != (
        spec.out_channels, spec.in_channels, spec.kernel
    ):
        raise ShapeError(f"weight shape {w.shape} does not match {spec}")


def conv1d_forward(x: np.ndarray, w: np.ndarray, dilation: int = 1, spec: ConvSpec | None = None) -> np.ndarray:
    """Bias-free, zero-padded, length-preserving dilated convolution.

    out[b, o, t] = sum_c sum_j w[o, c, j] * x[b, c, t + j*d - p]
    """
    _check_conv(x, w, spec)
    if spec is not None:
        dilation = spec.dilation
    B, _, L = x.shape
    k = w.shape[2]
    pad = ConvSpec(w.shape[1], w.shape[0], k, dilation).pad
    xp = _pack(x, pad)
    T = xp.shape[1]
    out = np.zeros((w.shape[0], T), dtype=np.result_type(x, w))
    for j, s, lo, hi in _tap_ranges(k, dilation, pad, T):
        out[:, lo:hi] += np.ascontiguousarray(w[:, :, j]) @ xp[:, lo + s:hi + s]
    return _unpack(out, B, L, pad)


def conv1d_backward(grad_out: np.ndarray, x: np.ndarray, w: np.ndarray, dilation: int = 1,
                    spec: ConvSpec | None = None) -> tuple[np.ndarray, np.ndarray]:
    _check_conv(x, w, spec)
    if spec is not None:
        dilation = spec.dilation
    B, _, L = x.shape
    if grad_out.shape != (B, w.shape[0], L):
        raise ShapeError(f"grad_out shape {grad_out.shape} != {(B, w.shape[0], L)}")
    k = w.shape[2]
    pad = ConvSpec(w.shape[1], w.shape[0], k, dilation).pad
    xp = _pack(x, pad)
    gp = _pack(grad_out, pad)
    T = xp.shape[1]
    gxp = np.zeros_like(xp)
    gw = np.empty_like(w)
    for j, s, lo, hi in _tap_ranges(k, dilation, pad, T):
        gw[:, :, j] = gp[:, lo:hi] @ xp[:, lo + s:hi + s].T
        gxp[:, lo + s:hi + s] += np.ascontiguousarray(w[:, :, j].T) @ gp[:, lo:hi]
    return _unpack(gxp, B, L, pad), gw


# ---------------------------------------------------------------------------
# batch normalization


@dataclass
class BatchNormState:
    gamma: Parameter
    beta: Parameter
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    eps: float = 1e-5

    @classmethod
    def create(cls, channels: int, dtype=np.float32, momentum: float = 0.1, eps: float = 1e-5):
        if eps <= 0:
            raise ValueError("eps must be positive")
        return cls(
            gamma=Parameter(np.ones(channels, dtype=dtype)),
            beta=Parameter(np.zeros(channels, dtype=dtype)),
            running_mean=np.zeros(channels, dtype=dtype),
            running_var=np.ones(channels, dtype=dtype),
            momentum=momentum,
            eps=eps,
        )


@dataclass
class BatchNormCache:
    xhat: np.ndarray
    inv_std: np.ndarray
    gamma: np.ndarray
    training: bool


def _per_channel(a: np.ndarray, ndim: int) -> np.ndarray:
    return a.reshape((1, -1) + (1,) * (ndim - 2))


def _channel_sum(x: np.ndarray) -> np.ndarray:
    return x.sum(axis=0) if x.ndim == 2 else x.sum(axis=(0, 2))


def _channel_dot(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.einsum("bc,bc->c", a, b) if a.ndim == 2 else np.einsum("bcl,bcl->c", a, b)


def batch_normalize(x: np.ndarray, eps: float) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Two-pass batch statistics. Returns (xhat, mean, biased var, inv_std)."""
    n = x.size // x.shape[1]
    if n < 2:
        raise StatisticsError("batch statistics need at least two values per channel")
    mean = _channel_sum(x) / x.dtype.type(n)
    xhat = x - _per_channel(mean, x.ndim)
    var = _channel_dot(xhat, xhat) / x.dtype.type(n)
    inv_std = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
    xhat *= _per_channel(inv_std, x.ndim)
    return xhat, mean, var, inv_std


def update_running_stats(state: BatchNormState, mean: np.ndarray, var: np.ndarray, n: int) -> None:
    m = state.momentum
    state.running_mean[...] = (1 - m) * state.running_mean + m * mean
    state.running_var[...] = (1 - m) * state.running_var + m * var * (n / (n - 1))


def batchnorm_forward(x: np.ndarray, state: BatchNormState, training: bool) -> tuple[np.ndarray, BatchNormCache]:
    """Per-channel normalization over batch and time jointly (or batch for flat input).

    Training mode normalizes with batch statistics and folds them into the
    running estimates (unbiased variance); eval mode uses the running estimates.
    """
    if x.ndim not in (2, 3) or x.shape[1] != state.gamma.value.shape[0]:
        raise ShapeError(f"batchnorm input {x.shape} does not match {state.gamma.value.shape[0]} channels")
    if training:
        xhat, mean, var, inv_std = batch_normalize(x, state.eps)
        update_running_stats(state, mean, var, x.size // x.shape[1])
    else:
        inv_std = (1.0 / np.sqrt(state.running_var + state.eps)).astype(x.dtype)
        xhat = (x - _per_channel(state.running_mean, x.ndim)) * _per_channel(inv_std, x.ndim)
    out = batchnorm_affine(xhat, state)
    return out, BatchNormCache(xhat, inv_std, state.gamma.value.copy(), training)


def batchnorm_affine(xhat: np.ndarray, state: BatchNormState, out: np.ndarray | None = None) -> np.ndarray:
    out = np.multiply(xhat, _per_channel(state.gamma.value, xhat.ndim), out=out)
    out += _per_channel(state.beta.value, xhat.ndim)
    return out


def batchnorm_backward(grad_out: np.ndarray, cache: BatchNormCache) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    xhat = cache.xhat
    if grad_out.shape != xhat.shape:
        raise ShapeError(f"grad_out shape {grad_out.shape} != {xhat.shape}")
    nd = xhat.ndim
    grad_beta = _channel_sum(grad_out)
    grad_gamma = _channel_dot(grad_out, xhat)
    scale = _per_channel(cache.gamma * cache.inv_std, nd)
    if not cache.training:
        return grad_out * scale, grad_gamma, grad_beta
    n = xhat.dtype.type(xhat.size // xhat.shape[1])
    grad_x = xhat * _per_channel(grad_gamma / n, nd)
    np.subtract(grad_out, grad_x, out=grad_x)
    grad_x -= _per_channel(grad_beta / n, nd)
    grad_x *= scale
    return grad_x, grad_gamma, grad_beta


# ---------------------------------------------------------------------------
# elementwise, pooling, dense layers


def relu(x: np.ndarray, out: np.ndarray | None = None) -> np.ndarray:
    return np.maximum(x, 0, out=out)


def relu_backward(grad_out: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Mask the incoming gradient where x <= 0 (x may be the input or the output)."""
    return grad_out * (x > 0)


def dropout(x: np.ndarray, rate: float, training: bool, rng: np.random.Generator | None = None
            ) -> tuple[np.ndarray, np.ndarray | None]:
    """Inverted dropout. Returns the output and the scaled keep-mask (None when inactive)."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x, None
    if rng is None:
        raise ValueError("training-mode dropout needs a random generator")
    keep = rng.random(x.shape) >= rate
    mask = keep.astype(x.dtype) / x.dtype.type(1.0 - rate)
    return x * mask, mask


def dropout_backward(grad_out: np.ndarray, mask: np.ndarray | None) -> np.ndarray:
    return grad_out if mask is None else grad_out * mask


def concat_channels(xs: list[np.ndarray]) -> np.ndarray:
    return np.concatenate(xs, axis=1)


def concat_backward(grad_out: np.ndarray, sizes: list[int]) -> list[np.ndarray]:
    if sum(sizes) != grad_out.shape[1]:
        raise ShapeError(f"channel sizes {sizes} do not sum to {grad_out.shape[1]}")
    return np.split(grad_out, np.cumsum(sizes)[:-1], axis=1)


def global_avg_pool(x: np.ndarray) -> np.ndarray:
    return x.mean(axis=2)


def global_avg_pool_backward(grad_out: np.ndarray, length: int) -> np.ndarray:
    g = grad_out / grad_out.dtype.type(length)
    return np.broadcast_to(g[:, :, None], g.shape + (length,)).copy()


def linear_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    if x.ndim != 2 or x.shape[1] != w.shape[1] or b.shape != (w.shape[0],):
        raise ShapeError(f"linear: x {x.shape}, w {w.shape}, b {b.shape}")
    return x @ w.T + b


def linear_backward(grad_out: np.ndarray, x: np.ndarray, w: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    return grad_out @ w, grad_out.T @ x, grad_out.sum(axis=0)


def smooth_l1(pred: np.ndarray, target: np.ndarray, beta: float = 1.0) -> tuple[float, np.ndarray]:
    """Mean Smooth-L1 loss over all elements and its gradient w.r.t. ``pred``."""
    if pred.shape != target.shape:
        raise ShapeError(f"pred {pred.shape} vs target {target.shape}")
    if beta <= 0:
        raise ValueError("beta must be positive")
    e = pred - target
    a = np.abs(e)
    small = a < beta
    per = np.where(small, 0.5 * e * e / beta, a - 0.5 * beta)
    n = e.size
    grad = np.where(small, e / beta, np.sign(e)) / n
    return float(per.sum() / n), grad.astype(pred.dtype)


# ---------------------------------------------------------------------------
# optimizer


def adam_step(params, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
              weight_decay: float = 0.0) -> None:
    """Bias-corrected Adam with decoupled weight decay, updating in place."""
    for p in params:
        p.step_count += 1
        if weight_decay:
            p.value *= p.value.dtype.type(1.0 - lr * weight_decay)
        g = p.grad
        p.m *= beta1
        p.m += (1.0 - beta1) * g
        p.v *= beta2
        p.v += (1.0 - beta2) * (g * g)
        bc1 = 1.0 - beta1 ** p.step_count
        bc2 = 1.0 - beta2 ** p.step_count
        denom = np.sqrt(p.v / bc2) + eps
        p.value -= ((lr / bc1) * p.m / denom).astype(p.value.dtype)


# ---------------------------------------------------------------------------
# checkpoint container
#
# Layout (all integers little-endian):
#   magic b"GZSC" | u32 version | u32 header_len | header JSON (utf-8)
#   | raw array bytes, little-endian, C order, concatenated in header order
#   | u32 CRC32 of everything before it
# The header holds {"config": ..., "arrays": [{"name", "shape", "dtype", "offset", "nbytes"}],
# "meta": ...}.

CHECKPOINT_MAGIC = b"GZSC"
CHECKPOINT_VERSION = 1


def write_arrays(path, arrays: dict[str, np.ndarray], config: dict, meta: dict | None = None) -> None:
    entries, blobs, offset = [], [], 0
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        data = arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes(order="C")
        entries.append({"name": name, "shape": list(arr.shape), "dtype": arr.dtype.str.lstrip("<>|="),
                        "offset": offset, "nbytes": len(data)})
        blobs.append(data)
        offset += len(data)
    header = json.dumps({"config": config, "arrays": entries, "meta": meta or {}}, sort_keys=True).encode()
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<II", CHECKPOINT_VERSION, len(header)))
    buf.write(header)
    for b in blobs:
        buf.write(b)
    body = buf.getvalue()
    with open(path, "wb") as fh:
        fh.write(body)
        fh.write(struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF))


def read_arrays(path) -> tuple[dict[str, np.ndarray], dict, dict]:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 16 or raw[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    body, (crc,) = raw[:-4], struct.unpack("<I", raw[-4:])
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise CheckpointError(f"{path}: checksum mismatch (truncated or corrupted)")
    version, hlen = struct.unpack("<II", body[4:12])
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(body[12:12 + hlen])
    data = body[12 + hlen:]
    arrays = {}
    for e in header["arrays"]:
        dt = np.dtype("<" + e["dtype"]) if e["dtype"][0] in "fiuc" else np.dtype(e["dtype"])
        chunk = data[e["offset"]:e["offset"] + e["nbytes"]]
        if len(chunk) != e["nbytes"]:
            raise CheckpointError(f"{path}: array {e['name']} is truncated")
        arrays[e["name"]] = np.frombuffer(chunk, dtype=dt).reshape(e["shape"]).astype(dt.newbyteorder("="))
    return arrays, header["config"], header["meta"]
