"""AlexNet-style fully convolutional encoder + attention pooling + softmax head."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Union

import numpy as np

from . import layers as L
from .attention import AttentionParams, AttentionWeights, FeatureGrid, attention_backward, \
    attention_forward
from .errors import ConfigError, ShapeError, TrainingError


@dataclass(frozen=True)
class ConvSpec:
    kernel: int
    stride: int
    pad: int
    channels: int
    lrn: bool = False

    def token(self) -> str:
        return f"conv:{self.kernel}:{self.stride}:{self.pad}:{self.channels}" + (":lrn" if self.lrn else "")


@dataclass(frozen=True)
class PoolSpec:
    kernel: int
    stride: int

    def token(self) -> str:
        return f"pool:{self.kernel}:{self.stride}"


LayerSpec = Union[ConvSpec, PoolSpec]

ALEXNET_STACK: tuple[LayerSpec, ...] = (
    ConvSpec(11, 4, 0, 96, lrn=True),
    PoolSpec(3, 2),
    ConvSpec(5, 1, 2, 256, lrn=True),
    PoolSpec(3, 2),
    ConvSpec(3, 1, 1, 384),
    ConvSpec(3, 1, 1, 384),
    ConvSpec(3, 1, 1, 256),
    PoolSpec(3, 2),
)

# Same layers without the final pool: utterances down to 35 frames (0.38 s)
# still yield a grid, and the grid keeps 16-frame time resolution.
ALEXNET_DESK_STACK: tuple[LayerSpec, ...] = ALEXNET_STACK[:-1]

STACK_PRESETS = {"alexnet": ALEXNET_STACK, "alexnet-desk": ALEXNET_DESK_STACK}


def parse_stack(text: str) -> tuple[LayerSpec, ...]:
    """Parse a preset name or a comma-separated list such as
    ``conv:11:4:0:96:lrn,pool:3:2,conv:3:1:1:64``."""
    text = text.strip()
    if text in STACK_PRESETS:
        return STACK_PRESETS[text]
    specs: list[LayerSpec] = []
    for token in filter(None, (t.strip() for t in text.split(","))):
        parts = token.split(":")
        try:
            if parts[0] == "conv" and len(parts) in (5, 6):
                if len(parts) == 6 and parts[5] != "lrn":
                    raise ValueError(parts[5])
                specs.append(ConvSpec(*map(int, parts[1:5]), lrn=len(parts) == 6))
            elif parts[0] == "pool" and len(parts) == 3:
                specs.append(PoolSpec(*map(int, parts[1:3])))
            else:
                raise ValueError(token)
        except ValueError:
            raise ConfigError(f"cannot parse layer {token!r}") from None
    if not specs or not isinstance(specs[0], ConvSpec):
        raise ConfigError(f"stack must start with a conv layer: {text!r}")
    return tuple(specs)


def format_stack(stack) -> str:
    for name, preset in STACK_PRESETS.items():
        if tuple(stack) == preset:
            return name
    return ",".join(s.token() for s in stack)


@dataclass(frozen=True)
class ModelConfig:
    stack: tuple[LayerSpec, ...] = ALEXNET_STACK
    input_channels: int = 1
    attention_dim: int | None = None  # None: same as encoder channels
    attention_lambda: float = 0.3
    num_classes: int = 4
    channel_scale: float = 1.0
    lrn: L.LrnParams = field(default_factory=L.LrnParams)

    def __post_init__(self):
        if self.input_channels not in (1, 3):
            raise ConfigError(f"input_channels must be 1 or 3, got {self.input_channels}")
        if self.channel_scale <= 0:
            raise ConfigError("channel_scale must be positive")
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")
        if not 0 <= self.attention_lambda <= 1:
            raise ConfigError(f"attention_lambda must lie in [0, 1], got {self.attention_lambda}")
        for spec in self.stack:
            if spec.kernel < 1 or spec.stride < 1:
                raise ConfigError(f"invalid layer {spec}")

    def named_layers(self) -> list[tuple[str, LayerSpec]]:
        out, n_conv, n_pool = [], 0, 0
        for spec in self.stack:
            if isinstance(spec, ConvSpec):
                n_conv += 1
                out.append((f"conv{n_conv}", spec))
            else:
                n_pool += 1
                out.append((f"pool{n_pool}", spec))
        return out

    def scaled(self, channels: int) -> int:
        return max(1, int(round(channels * self.channel_scale)))

    @property
    def encoder_channels(self) -> int:
        convs = [s for s in self.stack if isinstance(s, ConvSpec)]
        return self.scaled(convs[-1].channels)

    @property
    def hidden_dim(self) -> int:
        return self.attention_dim or self.encoder_channels


# ---------------------------------------------------------------------------
# Shape inference (pure floor arithmetic)

@dataclass
class ShapeReport:
    layers: list[tuple[str, tuple[int, int, int]]]
    freq: int
    time: int
    channels: int

    @property
    def final(self) -> tuple[int, int, int]:
        return self.freq, self.time, self.channels

    @property
    def length(self) -> int:
        return self.freq * self.time


def infer_shapes(cfg: ModelConfig, input_shape) -> ShapeReport:
    c, h, w = (int(v) for v in input_shape)
    if min(c, h, w) < 1:
        raise ShapeError(f"input extents must be positive, got {tuple(input_shape)}")
    report = []
    for name, spec in cfg.named_layers():
        if isinstance(spec, ConvSpec):
            h = L.conv_output_extent(h, spec.kernel, spec.stride, spec.pad)
            w = L.conv_output_extent(w, spec.kernel, spec.stride, spec.pad)
            c = cfg.scaled(spec.channels)
        else:
            h = L.pool_output_extent(h, spec.kernel, spec.stride)
            w = L.pool_output_extent(w, spec.kernel, spec.stride)
        if h < 1 or w < 1:
            axis = "frequency" if h < 1 else "time"
            raise ShapeError(f"{axis} axis collapses below 1 at layer {name} "
                             f"(input {tuple(input_shape)})")
        report.append((name, (c, h, w)))
    return ShapeReport(report, h, w, c)


def min_extent(cfg: ModelConfig) -> int:
    """Smallest input extent (along either axis) that survives the stack."""
    n = 1
    while True:
        try:
            infer_shapes(cfg, (cfg.input_channels, n, n))
            return n
        except ShapeError:
            n += 1


def receptive_geometry(cfg: ModelConfig) -> tuple[float, int, int]:
    """(first cell centre, cell spacing, receptive field size) in input cells."""
    start, jump, size = 0.0, 1, 1
    for spec in cfg.stack:
        pad = spec.pad if isinstance(spec, ConvSpec) else 0
        start += ((spec.kernel - 1) / 2.0 - pad) * jump
        size += (spec.kernel - 1) * jump
        jump *= spec.stride
    return start, jump, size


# ---------------------------------------------------------------------------
# Model

@dataclass
class ForwardResult:
    logits: np.ndarray
    attention: AttentionWeights
    grid: FeatureGrid


class Model:
    """Parameter container with forward and full backward passes.

    Parameters live in ``self.params`` keyed by checkpoint tensor name,
    e.g. ``encoder.conv1.kernels``.
    """

    def __init__(self, config: ModelConfig, params: dict[str, np.ndarray]):
        self.config = config
        self.params = params
        self.validate()

    # -- structure -----------------------------------------------------------

    def expected_shapes(self) -> dict[str, tuple[int, ...]]:
        return expected_shapes(self.config)

    def validate(self) -> None:
        expected = self.expected_shapes()
        missing = [n for n in expected if n not in self.params]
        if missing:
            raise ShapeError(f"missing tensors: {', '.join(missing)}")
        bad = [f"{n}: {self.params[n].shape} != {s}" for n, s in expected.items()
               if self.params[n].shape != s]
        extra = [n for n in self.params if n not in expected]
        if bad or extra:
            raise ShapeError("incompatible parameters: " + "; ".join(bad + [f"unknown {n}" for n in extra]))

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    def astype(self, dtype) -> "Model":
        return Model(self.config, {k: v.astype(dtype) for k, v in self.params.items()})

    def copy(self) -> "Model":
        return Model(self.config, {k: v.copy() for k, v in self.params.items()})

    def encoder_names(self) -> list[str]:
        return [n for n in self.params if n.startswith("encoder.")]

    def attention_params(self, lam: float | None = None) -> AttentionParams:
        p = self.params
        return AttentionParams(p["attention.W"], p["attention.b"], p["attention.u"],
                               self.config.attention_lambda if lam is None else lam)

    def minimum_frames(self, bins: int) -> int:
        t = 1
        while True:
            try:
                infer_shapes(self.config, (self.config.input_channels, bins, t))
                return t
            except ShapeError as exc:
                if "frequency" in str(exc):
                    raise
                t += 1

    # -- passes ----------------------------------------------------------------

    def prepare_input(self, spec) -> np.ndarray:
        grid = getattr(spec, "grid", spec)
        grid = np.asarray(grid, dtype=self.dtype)
        if grid.ndim == 2:
            grid = grid[None]
        if grid.shape[0] == 1 and self.config.input_channels == 3:
            grid = np.repeat(grid, 3, axis=0)
        if grid.shape[0] != self.config.input_channels:
            raise ShapeError(f"model expects {self.config.input_channels} input channels, "
                             f"got {grid.shape[0]}")
        try:
            infer_shapes(self.config, grid.shape)
        except ShapeError as exc:
            if "time" in str(exc):
                need = self.minimum_frames(grid.shape[1])
                raise ShapeError(f"utterance has {grid.shape[2]} frames; this encoder needs "
                                 f"at least {need}") from None
            raise
        return np.ascontiguousarray(grid)

    def _encode(self, x, tape=None):
        p = self.params
        for name, spec in self.config.named_layers():
            if isinstance(spec, ConvSpec):
                cp = L.ConvParams(p[f"encoder.{name}.kernels"], p[f"encoder.{name}.bias"],
                                  spec.stride, spec.pad)
                if tape is not None:
                    tape.append(("conv", name, x, cp))
                x = L.conv2d(x, cp)
                if tape is not None:
                    tape.append(("relu", name, x, None))
                x = L.relu(x)
                if spec.lrn:
                    if tape is not None:
                        tape.append(("lrn", name, x, None))
                    x = L.lrn(x, self.config.lrn)
            else:
                if tape is not None:
                    tape.append(("pool", name, x, spec))
                x = L.maxpool(x, spec.kernel, spec.stride)
        return x

    def forward(self, spec, lam: float | None = None) -> ForwardResult:
        x = self.prepare_input(spec)
        grid = FeatureGrid.from_channels_first(self._encode(x))
        context, weights = attention_forward(grid, self.attention_params(lam))
        cls = L.LinearParams(self.params["classifier.weight"], self.params["classifier.bias"])
        return ForwardResult(L.linear(context, cls), weights, grid)

    def loss(self, spec, label: int, lam: float | None = None):
        """Cross-entropy only, kept in the parameters' dtype (no rounding to float)."""
        z = self.forward(spec, lam).logits
        z = z - z.max()
        return np.log(np.exp(z).sum()) - z[label]

    def loss_and_grads(self, spec, label: int, lam: float | None = None):
        """Cross-entropy loss, logits and gradients for every parameter."""
        x = self.prepare_input(spec)
        tape: list = []
        fmap = self._encode(x, tape)
        grid = FeatureGrid.from_channels_first(fmap)
        ap = self.attention_params(lam)
        context, _ = attention_forward(grid, ap)
        cls = L.LinearParams(self.params["classifier.weight"], self.params["classifier.bias"])
        logits = L.linear(context, cls)
        loss, d_logits = L.softmax_cross_entropy(logits, label)

        grads: dict[str, np.ndarray] = {}
        gb = L.linear_backward(context, cls, d_logits)
        grads["classifier.weight"] = gb.params["weight"]
        grads["classifier.bias"] = gb.params["bias"]
        att_grads, d_grid = attention_backward(grid, ap, gb.input)
        for k, v in att_grads.items():
            grads[f"attention.{k}"] = v
        g = np.ascontiguousarray(d_grid.transpose(2, 0, 1))
        for kind, name, inp, extra in reversed(tape):
            if kind == "conv":
                gb = L.conv2d_backward(inp, extra, g)
                grads[f"encoder.{name}.kernels"] = gb.params["kernels"]
                grads[f"encoder.{name}.bias"] = gb.params["bias"]
                g = gb.input
            elif kind == "relu":
                g = L.relu_backward(inp, g).input
            elif kind == "lrn":
                g = L.lrn_backward(inp, g, self.config.lrn).input
            else:
                g = L.maxpool_backward(inp, g, extra.kernel, extra.stride).input
        grads = {n: grads[n].astype(self.dtype, copy=False) for n in self.params}
        return loss, logits, grads

    def predict(self, spec) -> int:
        return int(np.argmax(self.forward(spec).logits))

    def assert_finite(self, step: int) -> None:
        for name, t in self.params.items():
            if not np.all(np.isfinite(t)):
                raise TrainingError(f"non-finite values in {name} after step {step}")


def expected_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {}
    c_in = cfg.input_channels
    for name, spec in cfg.named_layers():
        if isinstance(spec, ConvSpec):
            c_out = cfg.scaled(spec.channels)
            shapes[f"encoder.{name}.kernels"] = (c_out, c_in, spec.kernel, spec.kernel)
            shapes[f"encoder.{name}.bias"] = (c_out,)
            c_in = c_out
    d = cfg.hidden_dim
    shapes["attention.W"] = (d, c_in)
    shapes["attention.b"] = (d,)
    shapes["attention.u"] = (d,)
    shapes["classifier.weight"] = (cfg.num_classes, c_in)
    shapes["classifier.bias"] = (cfg.num_classes,)
    return shapes


def build_model(cfg: ModelConfig = ModelConfig(), seed: int = 0, keep_bins: int | None = 200,
                dtype=np.float32) -> Model:
    """Deterministically initialize a model.

    Convs use Kaiming-uniform kernels and zero bias; attention uses
    uniform(+-sqrt(6/(C+D))) for W and u with b = 0; the classifier is
    Glorot-uniform with zero bias.
    """
    if keep_bins is not None:
        probe = 10 ** 6
        try:
            infer_shapes(cfg, (cfg.input_channels, keep_bins, probe))
        except ShapeError as exc:
            raise ConfigError(f"keep_bins={keep_bins}: {exc}") from None
    rng = np.random.default_rng(seed)
    params: dict[str, np.ndarray] = {}
    for name, shape in expected_shapes(cfg).items():
        if name.endswith(".kernels"):
            fan_in = shape[1] * shape[2] * shape[3]
            bound = math.sqrt(6.0 / fan_in)
            params[name] = rng.uniform(-bound, bound, shape)
        elif name.startswith("encoder.") or name.endswith(".b") or name.endswith(".bias"):
            params[name] = np.zeros(shape)
        elif name.startswith("attention."):
            r = math.sqrt(6.0 / (cfg.encoder_channels + cfg.hidden_dim))
            params[name] = rng.uniform(-r, r, shape)
        else:
            bound = math.sqrt(6.0 / (shape[0] + shape[1]))
            params[name] = rng.uniform(-bound, bound, shape)
    return Model(cfg, {k: v.astype(dtype) for k, v in params.items()})


def frozen_names(model: Model, freeze_through: str | None) -> frozenset:
    """Encoder tensors of every conv layer up to and including ``freeze_through``."""
    if not freeze_through:
        return frozenset()
    names = [n for n, s in model.config.named_layers() if isinstance(s, ConvSpec)]
    if freeze_through not in names:
        raise ConfigError(f"freeze_through={freeze_through!r} is not one of {names}")
    keep = names[:names.index(freeze_through) + 1]
    return frozenset(f"encoder.{n}.{t}" for n in keep for t in ("kernels", "bias"))


def with_lambda(cfg: ModelConfig, lam: float) -> ModelConfig:
    return replace(cfg, attention_lambda=lam)
