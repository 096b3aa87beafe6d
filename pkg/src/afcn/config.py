"""Flat ``key = value`` run configuration shared by every CLI verb."""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path

from .dsp import SpectrogramConfig
from .errors import ConfigError
from .layers import LrnParams
from .model import ModelConfig, format_stack, parse_stack
from .training import TrainConfig


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    # paths
    manifest: str = "manifest.csv"
    cache_dir: str = "cache"
    # spectrogram
    window_ms: float = 40.0
    shift_ms: float = 10.0
    dft_len: int = 800
    keep_bins: int = 200
    log_offset: float = 0.0
    # model
    stack: str = "alexnet"
    channel_scale: float = 1.0
    input_channels: int = 1
    attention_dim: int = 0  # 0: same as encoder channels
    attention_lambda: float = 0.3
    num_classes: int = 4
    lrn_size: int = 5
    lrn_k: float = 2.0
    lrn_alpha: float = 1e-4
    lrn_beta: float = 0.75
    # optimization
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 5e-4
    accumulate: int = 16
    epochs: int = 200
    patience: int = 10
    freeze_through: str = ""
    freeze_attention: bool = False
    init_encoder: str = ""
    import_strict: bool = False
    num_folds: int = 5

    def spectrogram_config(self) -> SpectrogramConfig:
        return SpectrogramConfig(self.window_ms, self.shift_ms, self.dft_len, self.keep_bins,
                                 self.log_offset)

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            stack=parse_stack(self.stack),
            input_channels=self.input_channels,
            attention_dim=self.attention_dim or None,
            attention_lambda=self.attention_lambda,
            num_classes=self.num_classes,
            channel_scale=self.channel_scale,
            lrn=LrnParams(self.lrn_size, self.lrn_k, self.lrn_alpha, self.lrn_beta),
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(epochs=self.epochs, lr=self.lr, momentum=self.momentum,
                           weight_decay=self.weight_decay, accumulate=self.accumulate,
                           patience=self.patience, seed=self.seed,
                           freeze_through=self.freeze_through or None,
                           freeze_attention=self.freeze_attention)

    def dumps(self) -> str:
        """Every resolved value, one ``key = value`` per line; parseable by :func:`loads`."""
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "stack":
                v = format_stack(parse_stack(v))
            elif isinstance(v, bool):
                v = "true" if v else "false"
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"


_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off", ""}


def _coerce(name: str, kind, raw: str):
    try:
        if kind is bool:
            low = raw.lower()
            if low not in _TRUE | _FALSE:
                raise ValueError(raw)
            return low in _TRUE
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {raw!r} as {kind.__name__}") from None


_TYPES = {"int": int, "float": float, "str": str, "bool": bool}


def loads(text: str, source: str = "<config>", base: RunConfig = RunConfig()) -> RunConfig:
    kinds = {f.name: _TYPES[f.type] for f in fields(RunConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key = value")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in kinds:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        values[key] = _coerce(key, kinds[key], raw)
    cfg = replace(base, **values)
    # fail early on values the typed configs reject
    cfg.model_config()
    return cfg


def load(path) -> RunConfig:
    """Read a config file; relative paths inside it resolve against its directory."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    cfg = loads(text, str(path))
    return resolve_paths(cfg, path.parent)


def resolve_paths(cfg: RunConfig, root) -> RunConfig:
    root = Path(root)
    updates = {}
    for key in ("manifest", "cache_dir", "init_encoder"):
        value = getattr(cfg, key)
        if value and not Path(value).is_absolute():
            updates[key] = str((root / value).resolve())
    return replace(cfg, **updates)
