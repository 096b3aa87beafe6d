"""Central finite-difference checks of every hand-written backward pass."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from . import layers as L
from .attention import AttentionParams, FeatureGrid, attention_backward, attention_forward
from .errors import ShapeError
from .model import ALEXNET_DESK_STACK, Model, ModelConfig, build_model, infer_shapes

THRESHOLD = 1e-4


@dataclass
class CheckResult:
    name: str
    max_rel_error: float
    worst_tensor: str
    worst_index: tuple
    analytic: float
    numeric: float
    coords: int

    @property
    def passed(self) -> bool:
        return self.max_rel_error < THRESHOLD


def relative_error(analytic, numeric):
    a, n = np.abs(analytic), np.abs(numeric)
    return np.abs(analytic - numeric) / np.maximum(a + n, 1e-8)


def _sample(size: int, max_coords: int, rng) -> np.ndarray:
    if size <= max_coords:
        return np.arange(size)
    return np.sort(rng.choice(size, max_coords, replace=False))


def grad_check(loss_fn: Callable[[], float], tensors: dict[str, np.ndarray],
               analytic: dict[str, np.ndarray], name: str = "check", epsilon: float = 1e-5,
               max_coords: int = 256, seed: int = 0) -> CheckResult:
    """Compare ``analytic`` gradients with central differences of ``loss_fn``.

    ``loss_fn`` must read the arrays in ``tensors``, which are perturbed in
    place one coordinate at a time. Tensors larger than ``max_coords`` are
    checked on a random subset of that many coordinates.
    """
    rng = np.random.default_rng(seed)
    worst = CheckResult(name, 0.0, "", (), 0.0, 0.0, 0)
    for key, t in tensors.items():
        if t.dtype not in (np.float64, np.longdouble):
            raise TypeError(f"{key}: gradient checks need float64 or wider, got {t.dtype}")
        flat = t.reshape(-1)  # view: perturbations reach the caller's array
        g = analytic[key].reshape(-1)
        for i in _sample(flat.size, max_coords, rng):
            old = flat[i]
            flat[i] = old + epsilon
            up = loss_fn()
            flat[i] = old - epsilon
            down = loss_fn()
            flat[i] = old
            numeric = (up - down) / (2 * epsilon)
            err = float(relative_error(g[i], numeric))
            worst.coords += 1
            if err > worst.max_rel_error or not worst.worst_tensor:
                worst.max_rel_error = err
                worst.worst_tensor = key
                worst.worst_index = np.unravel_index(i, t.shape)
                worst.analytic = float(g[i])
                worst.numeric = float(numeric)
    return worst


def _projection(shape, rng):
    return rng.standard_normal(shape)


# ---------------------------------------------------------------------------
# Per-layer checks. Each builds random float64 inputs, projects the layer
# output onto a fixed random tensor to get a scalar loss, and compares.

def check_conv2d(seed=0, c_in=3, c_out=8, size=(5, 5), kernel=3, stride=1, pad=1, **kw):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((c_in,) + size)
    p = L.ConvParams(rng.standard_normal((c_out, c_in, kernel, kernel)) * 0.5,
                     rng.standard_normal(c_out), stride, pad)
    r = _projection(L.conv2d(x, p).shape, rng)
    gb = L.conv2d_backward(x, p, r)
    return grad_check(lambda: float(np.sum(L.conv2d(x, p) * r)),
                      {"input": x, "kernels": p.kernels, "bias": p.bias},
                      {"input": gb.input, **gb.params}, "conv2d", **kw)


def check_maxpool(seed=0, shape=(4, 9, 9), kernel=3, stride=2, **kw):
    rng = np.random.default_rng(seed)
    # distinct values spaced well beyond epsilon: no ties, no argmax flips
    x = rng.permutation(np.prod(shape)).reshape(shape) * 0.01
    x = x.astype(np.float64)
    r = _projection(L.maxpool(x, kernel, stride).shape, rng)
    gb = L.maxpool_backward(x, r, kernel, stride)
    return grad_check(lambda: float(np.sum(L.maxpool(x, kernel, stride) * r)),
                      {"input": x}, {"input": gb.input}, "maxpool", **kw)


def check_relu(seed=0, shape=(4, 6, 6), **kw):
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.1, 2.0, shape) * rng.choice([-1.0, 1.0], shape)
    r = _projection(shape, rng)
    gb = L.relu_backward(x, r)
    return grad_check(lambda: float(np.sum(L.relu(x) * r)), {"input": x},
                      {"input": gb.input}, "relu", **kw)


def check_lrn(seed=0, shape=(7, 4, 4), params: L.LrnParams = L.LrnParams(), scale=30.0, **kw):
    # scale the input so the normalizing term is far from the constant k
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(shape) * scale
    r = _projection(shape, rng)
    gb = L.lrn_backward(x, r, params)
    return grad_check(lambda: float(np.sum(L.lrn(x, params) * r)), {"input": x},
                      {"input": gb.input}, "lrn", **kw)


def check_linear(seed=0, in_dim=6, out_dim=4, **kw):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(in_dim)
    p = L.LinearParams(rng.standard_normal((out_dim, in_dim)), rng.standard_normal(out_dim))
    r = _projection(out_dim, rng)
    gb = L.linear_backward(x, p, r)
    return grad_check(lambda: float(np.sum(L.linear(x, p) * r)),
                      {"input": x, "weight": p.weight, "bias": p.bias},
                      {"input": gb.input, **gb.params}, "linear", **kw)


def check_softmax_ce(seed=0, classes=4, **kw):
    rng = np.random.default_rng(seed)
    z = rng.standard_normal(classes) * 2
    label = int(rng.integers(classes))
    _, g = L.softmax_cross_entropy(z, label)
    return grad_check(lambda: L.softmax_cross_entropy(z, label)[0], {"logits": z},
                      {"logits": g}, "softmax_ce", **kw)


def check_attention(seed=0, freq=2, time=3, channels=5, hidden=4, lam=0.3, **kw):
    rng = np.random.default_rng(seed)
    grid = FeatureGrid(rng.standard_normal((freq, time, channels)))
    p = AttentionParams(rng.standard_normal((hidden, channels)), rng.standard_normal(hidden),
                        rng.standard_normal(hidden), lam)
    r = _projection(channels, rng)
    grads, d_grid = attention_backward(grid, p, r)
    return grad_check(lambda: float(attention_forward(grid, p)[0] @ r),
                      {"grid": grid.annotations, "W": p.W, "b": p.b, "u": p.u},
                      {"grid": d_grid, **grads}, f"attention(lambda={lam:g})", **kw)


def end_to_end_config(channel_scale=0.125) -> ModelConfig:
    return ModelConfig(stack=ALEXNET_DESK_STACK, channel_scale=channel_scale)


def check_end_to_end(seed=0, cfg: ModelConfig | None = None, input_shape=(1, 40, 50),
                     label=1, model: Model | None = None, oracle_dtype=np.longdouble, **kw):
    """Loss -> every parameter of a small model.

    Analytic gradients come from the float64 model. The finite-difference
    oracle runs on a copy in ``oracle_dtype``: LRN cross-channel terms give
    some conv kernels true gradients near 1e-9, below what float64 central
    differences of an O(1) loss can resolve.
    """
    cfg = cfg or end_to_end_config()
    rng = np.random.default_rng(seed)
    if model is None:
        model = build_model(cfg, seed=seed, keep_bins=None, dtype=np.float64)
        # nonzero biases so no unit sits exactly on a ReLU kink
        for name, t in model.params.items():
            if name.endswith(".bias") or name.endswith(".b"):
                t[...] = rng.uniform(-0.1, 0.1, t.shape)
    x = np.abs(rng.standard_normal(input_shape[1:]))
    _, _, grads = model.loss_and_grads(x, label)
    oracle = model.astype(oracle_dtype)
    x_oracle = x.astype(oracle_dtype)
    name = f"end_to_end{tuple(input_shape)}"
    return grad_check(lambda: oracle.loss(x_oracle, label), oracle.params, grads, name, **kw)


def end_to_end_shapes(cfg: ModelConfig) -> list[tuple[int, int, int]]:
    """[1, 40, 50] when the stack accepts it, plus the smallest input giving a
    grid of at least 2x2 cells so the attention softmax is exercised."""
    def grid(shape):
        try:
            return infer_shapes(cfg, shape).final[:2]
        except ShapeError:
            return (0, 0)

    c = cfg.input_channels
    first = (c, 40, 50)
    if grid(first)[0] < 1:
        n = 40
        while grid((c, n, n))[0] < 1:
            n += 1
        first = (c, n, n + 10)
    n = first[1]
    while min(grid((c, n, n))) < 2:
        n += 1
    return [first, (c, n, n + n // 2)]


def run_suite(seed: int = 0, model_config: ModelConfig | None = None,
              channel_scale: float = 0.125, max_coords: int = 200) -> list[CheckResult]:
    """Every layer, the attention block at three lambdas, and end to end.

    The end-to-end model takes the stack of ``model_config`` (default: the
    desk stack) at ``channel_scale``.
    """
    kw = dict(max_coords=max_coords)
    results = [
        check_conv2d(seed, **kw),
        check_conv2d(seed + 1, c_in=2, c_out=3, size=(9, 11), kernel=4, stride=2, pad=0, **kw),
        check_maxpool(seed, **kw),
        check_lrn(seed, **kw),
        check_relu(seed, **kw),
        check_linear(seed, **kw),
        check_softmax_ce(seed, **kw),
    ]
    for lam in (0.0, 0.3, 1.0):
        results.append(check_attention(seed, lam=lam, **kw))
    if model_config is None:
        cfg = end_to_end_config(channel_scale)
    else:
        cfg = replace(model_config, channel_scale=channel_scale)
    for shape in end_to_end_shapes(cfg):
        results.append(check_end_to_end(seed, cfg, shape, **kw))
    return results
