"""Forward and hand-written backward passes for the encoder and classifier.

Feature maps are [channels, height, width] with height = frequency and
width = time. Every backward function takes the forward input (and params)
plus the upstream gradient and returns a :class:`GradBundle`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError


@dataclass
class ConvParams:
    kernels: np.ndarray  # [out_channels, in_channels, kh, kw]
    bias: np.ndarray  # [out_channels]
    stride: int = 1
    pad: int = 0

    def __post_init__(self):
        if self.kernels.ndim != 4:
            raise ShapeError(f"conv kernels must be rank 4, got shape {self.kernels.shape}")
        if self.bias.shape != (self.kernels.shape[0],):
            raise ShapeError(
                f"conv bias shape {self.bias.shape} does not match {self.kernels.shape[0]} kernels")
        if self.stride < 1 or self.pad < 0:
            raise ShapeError(f"invalid stride={self.stride} / pad={self.pad}")


@dataclass(frozen=True)
class LrnParams:
    depth_radius: int = 5  # window size n, in channels
    k: float = 2.0
    alpha: float = 1e-4
    beta: float = 0.75

    def __post_init__(self):
        if self.alpha <= 0 or self.beta <= 0 or self.k < 1 or self.depth_radius < 1:
            raise ValueError(f"invalid LRN parameters {self}")


@dataclass
class LinearParams:
    weight: np.ndarray  # [out_dim, in_dim]
    bias: np.ndarray  # [out_dim]


@dataclass
class GradBundle:
    input: np.ndarray | None
    params: dict[str, np.ndarray] = field(default_factory=dict)


def conv_output_extent(extent: int, kernel: int, stride: int, pad: int) -> int:
    return (extent + 2 * pad - kernel) // stride + 1


def pool_output_extent(extent: int, kernel: int, stride: int) -> int:
    return (extent - kernel) // stride + 1


# ---------------------------------------------------------------------------
# Convolution (cross-correlation, no kernel flip)

def _columns(x_padded, kh, kw, stride):
    """[C, H, W] -> [H'*W', C*kh*kw] patch matrix."""
    c = x_padded.shape[0]
    win = sliding_window_view(x_padded, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
    h_out, w_out = win.shape[1], win.shape[2]
    cols = win.transpose(1, 2, 0, 3, 4).reshape(h_out * w_out, c * kh * kw)
    return cols, h_out, w_out


def _check_conv(x, p: ConvParams):
    if x.ndim != 3:
        raise ShapeError(f"conv input must be [C, H, W], got shape {x.shape}")
    c_out, c_in, kh, kw = p.kernels.shape
    if x.shape[0] != c_in:
        raise ShapeError(f"conv expects {c_in} input channels, got {x.shape[0]}")
    h, w = x.shape[1] + 2 * p.pad, x.shape[2] + 2 * p.pad
    if h < kh or w < kw:
        raise ShapeError(f"kernel {kh}x{kw} larger than padded input {h}x{w}")


def _pad(x, pad):
    if pad == 0:
        return x
    return np.pad(x, ((0, 0), (pad, pad), (pad, pad)))


def conv2d(x: np.ndarray, p: ConvParams) -> np.ndarray:
    _check_conv(x, p)
    c_out = p.kernels.shape[0]
    kh, kw = p.kernels.shape[2:]
    cols, h_out, w_out = _columns(_pad(x, p.pad), kh, kw, p.stride)
    out = p.kernels.reshape(c_out, -1) @ cols.T
    out += p.bias[:, None]
    return out.reshape(c_out, h_out, w_out)


def conv2d_backward(x: np.ndarray, p: ConvParams, grad: np.ndarray) -> GradBundle:
    _check_conv(x, p)
    c_out, c_in, kh, kw = p.kernels.shape
    xp = _pad(x, p.pad)
    cols, h_out, w_out = _columns(xp, kh, kw, p.stride)
    if grad.shape != (c_out, h_out, w_out):
        raise ShapeError(f"upstream gradient {grad.shape} != output {(c_out, h_out, w_out)}")
    g = grad.reshape(c_out, -1)
    d_kernels = (g @ cols).reshape(p.kernels.shape)
    d_bias = g.sum(axis=1)

    d_cols = (p.kernels.reshape(c_out, -1).T @ g).reshape(c_in, kh, kw, h_out, w_out)
    d_xp = np.zeros_like(xp)
    s = p.stride
    for i in range(kh):
        for j in range(kw):
            d_xp[:, i:i + s * h_out:s, j:j + s * w_out:s] += d_cols[:, i, j]
    if p.pad:
        d_xp = d_xp[:, p.pad:-p.pad, p.pad:-p.pad]
    return GradBundle(np.ascontiguousarray(d_xp), {"kernels": d_kernels, "bias": d_bias})


# ---------------------------------------------------------------------------
# Max pooling

def _pool_argmax(x, kernel, stride):
    if x.ndim != 3:
        raise ShapeError(f"pool input must be [C, H, W], got shape {x.shape}")
    if x.shape[1] < kernel or x.shape[2] < kernel:
        raise ShapeError(f"pool kernel {kernel} larger than input {x.shape[1]}x{x.shape[2]}")
    win = sliding_window_view(x, (kernel, kernel), axis=(1, 2))[:, ::stride, ::stride]
    flat = win.reshape(win.shape[:3] + (kernel * kernel,))
    # argmax picks the first maximum: lowest linear index within the window
    return flat, flat.argmax(axis=-1)


def maxpool(x: np.ndarray, kernel: int = 3, stride: int = 2) -> np.ndarray:
    flat, idx = _pool_argmax(x, kernel, stride)
    return np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]


def maxpool_backward(x: np.ndarray, grad: np.ndarray, kernel: int = 3,
                     stride: int = 2) -> GradBundle:
    _, idx = _pool_argmax(x, kernel, stride)
    if grad.shape != idx.shape:
        raise ShapeError(f"upstream gradient {grad.shape} != pooled output {idx.shape}")
    c, h, w = x.shape
    _, h_out, w_out = idx.shape
    rows = np.arange(h_out)[:, None] * stride + idx // kernel
    cols = np.arange(w_out)[None, :] * stride + idx % kernel
    flat_index = (np.arange(c)[:, None, None] * h + rows) * w + cols
    d_x = np.bincount(flat_index.ravel(), weights=grad.ravel(), minlength=x.size)
    return GradBundle(d_x.reshape(x.shape).astype(x.dtype, copy=False))


# ---------------------------------------------------------------------------
# ReLU

def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_backward(x: np.ndarray, grad: np.ndarray) -> GradBundle:
    # subgradient 0 at exactly 0
    return GradBundle(np.where(x > 0, grad, 0).astype(grad.dtype, copy=False))


# ---------------------------------------------------------------------------
# Local response normalization (across channels)

def _window_sum(v: np.ndarray, n: int, transpose: bool = False) -> np.ndarray:
    """Sum over a window of ``n`` channels centred on each channel, clipped at edges."""
    c = v.shape[0]
    lo = (n - 1) // 2
    hi = n - 1 - lo
    if transpose:
        lo, hi = hi, lo
    csum = np.concatenate([np.zeros((1,) + v.shape[1:], dtype=v.dtype), np.cumsum(v, axis=0)])
    idx = np.arange(c)
    top = np.minimum(idx + hi + 1, c)
    bottom = np.maximum(idx - lo, 0)
    return csum[top] - csum[bottom]


def _lrn_scale(x, p: LrnParams):
    return p.k + (p.alpha / p.depth_radius) * _window_sum(x * x, p.depth_radius)


def lrn(x: np.ndarray, p: LrnParams = LrnParams()) -> np.ndarray:
    return x * _lrn_scale(x, p) ** -p.beta


def lrn_backward(x: np.ndarray, grad: np.ndarray, p: LrnParams = LrnParams()) -> GradBundle:
    scale = _lrn_scale(x, p)
    direct = grad * scale ** -p.beta
    # channel j feeds every window containing it; for even n that window is mirrored
    cross = _window_sum(grad * x * scale ** (-p.beta - 1), p.depth_radius, transpose=True)
    d_x = direct - (2.0 * p.alpha * p.beta / p.depth_radius) * x * cross
    return GradBundle(d_x)


# ---------------------------------------------------------------------------
# Classifier head

def linear(x: np.ndarray, p: LinearParams) -> np.ndarray:
    if x.ndim != 1 or x.shape[0] != p.weight.shape[1]:
        raise ShapeError(f"linear expects input of length {p.weight.shape[1]}, got {x.shape}")
    return p.weight @ x + p.bias


def linear_backward(x: np.ndarray, p: LinearParams, grad: np.ndarray) -> GradBundle:
    if grad.shape != (p.weight.shape[0],):
        raise ShapeError(f"upstream gradient {grad.shape} != ({p.weight.shape[0]},)")
    return GradBundle(p.weight.T @ grad, {"weight": np.outer(grad, x), "bias": grad.copy()})


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def softmax_cross_entropy(logits: np.ndarray, label: int) -> tuple[float, np.ndarray]:
    k = logits.shape[0]
    if not 0 <= label < k:
        raise ValueError(f"label {label} outside [0, {k})")
    shifted = logits - logits.max()
    log_z = np.log(np.exp(shifted).sum())
    loss = float(log_z - shifted[label])
    grad = np.exp(shifted - log_z)
    grad[label] -= 1.0
    return loss, grad


# ---------------------------------------------------------------------------
# Optimizer

def sgd_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
             velocity: dict[str, np.ndarray], lr: float, momentum: float = 0.9,
             weight_decay: float = 0.0, frozen: frozenset = frozenset()) -> None:
    """In-place momentum SGD: v <- m*v - lr*(g + wd*p); p <- p + v."""
    for name, p in params.items():
        if name in frozen:
            continue
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        v = velocity.get(name)
        if v is None:
            v = velocity[name] = np.zeros_like(p)
        v *= momentum
        v -= lr * (g + weight_decay * p)
        p += v
