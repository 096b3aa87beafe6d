"""2D attention pooling over the encoder's frequency x time grid.

Every grid cell a_i (a C-vector) is scored with a one-hidden-layer tanh MLP,
the scores are normalized by a temperature-scaled softmax, and the utterance
vector is the alpha-weighted sum of the cells::

    e_i   = u . tanh(W a_i + b)
    alpha = softmax(lam * e)
    c     = sum_i alpha_i a_i

``lam`` in [0, 1] interpolates between uniform pooling (0) and plain
softmax (1).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError


@dataclass
class FeatureGrid:
    annotations: np.ndarray  # [F', T', C]

    def __post_init__(self):
        if self.annotations.ndim != 3 or min(self.annotations.shape) < 1:
            raise ShapeError(f"feature grid must be [F', T', C] with L >= 1, "
                             f"got {self.annotations.shape}")

    @classmethod
    def from_channels_first(cls, fmap: np.ndarray) -> "FeatureGrid":
        """Build from an encoder map laid out [C, F', T']."""
        return cls(np.ascontiguousarray(fmap.transpose(1, 2, 0)))

    @property
    def freq(self) -> int:
        return self.annotations.shape[0]

    @property
    def time(self) -> int:
        return self.annotations.shape[1]

    @property
    def channels(self) -> int:
        return self.annotations.shape[2]

    @property
    def length(self) -> int:
        return self.freq * self.time

    def flat(self) -> np.ndarray:
        """[L, C] view, row-major over (F', T')."""
        return self.annotations.reshape(self.length, self.channels)


@dataclass
class AttentionParams:
    W: np.ndarray  # [D, C]
    b: np.ndarray  # [D]
    u: np.ndarray  # [D]
    lam: float = 0.3

    def __post_init__(self):
        check_lambda(self.lam)
        d = self.W.shape[0]
        if self.W.ndim != 2 or self.b.shape != (d,) or self.u.shape != (d,):
            raise ShapeError(f"inconsistent attention shapes W={self.W.shape}, "
                             f"b={self.b.shape}, u={self.u.shape}")

    @classmethod
    def init(cls, channels: int, hidden: int, lam: float = 0.3, rng=None,
             dtype=np.float32) -> "AttentionParams":
        rng = np.random.default_rng(rng)
        r = np.sqrt(6.0 / (channels + hidden))
        return cls(W=rng.uniform(-r, r, (hidden, channels)).astype(dtype),
                   b=np.zeros(hidden, dtype=dtype),
                   u=rng.uniform(-r, r, hidden).astype(dtype),
                   lam=lam)


@dataclass
class AttentionWeights:
    alpha: np.ndarray  # [L]
    scores: np.ndarray  # [L]
    grid_shape: tuple[int, int]  # (F', T')

    def as_grid(self) -> np.ndarray:
        return self.alpha.reshape(self.grid_shape)


def check_lambda(lam: float) -> None:
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")


def _hidden(a: np.ndarray, p: AttentionParams) -> np.ndarray:
    if a.shape[1] != p.W.shape[1]:
        raise ShapeError(f"grid has C={a.shape[1]} but W expects {p.W.shape[1]} columns")
    return np.tanh(a @ p.W.T + p.b)


def attention_scores(grid: FeatureGrid, p: AttentionParams) -> np.ndarray:
    return _hidden(grid.flat(), p) @ p.u


def scaled_softmax(e: np.ndarray, lam: float) -> np.ndarray:
    check_lambda(lam)
    if lam == 0.0:
        return np.full(e.shape, 1.0 / e.shape[0], dtype=e.dtype)
    z = lam * e
    z = np.exp(z - z.max())
    return z / z.sum()


def attend(grid: FeatureGrid, alpha: np.ndarray) -> np.ndarray:
    if alpha.shape != (grid.length,):
        raise ShapeError(f"alpha has shape {alpha.shape}, grid has L={grid.length}")
    return alpha @ grid.flat()


def attention_forward(grid: FeatureGrid, p: AttentionParams) -> tuple[np.ndarray, AttentionWeights]:
    e = attention_scores(grid, p)
    alpha = scaled_softmax(e, p.lam)
    return attend(grid, alpha), AttentionWeights(alpha, e, (grid.freq, grid.time))


def attention_backward(grid: FeatureGrid, p: AttentionParams,
                       grad_c: np.ndarray) -> tuple[dict[str, np.ndarray], np.ndarray]:
    """Gradients of a loss w.r.t. W, b, u and the grid, given dLoss/dc.

    Returns ``(param_grads, grid_grad)`` with ``grid_grad`` shaped like
    ``grid.annotations``.
    """
    a = grid.flat()
    if grad_c.shape != (a.shape[1],):
        raise ShapeError(f"upstream gradient {grad_c.shape} != ({a.shape[1]},)")
    h = _hidden(a, p)
    alpha = scaled_softmax(h @ p.u, p.lam)

    d_alpha = a @ grad_c
    # softmax Jacobian: d e_i = lam * alpha_i * (d alpha_i - sum_k alpha_k d alpha_k)
    d_e = p.lam * alpha * (d_alpha - alpha @ d_alpha)
    d_u = h.T @ d_e
    d_pre = np.outer(d_e, p.u) * (1.0 - h * h)
    d_W = d_pre.T @ a
    d_b = d_pre.sum(axis=0)
    d_a = np.outer(alpha, grad_c) + d_pre @ p.W
    return {"W": d_W, "b": d_b, "u": d_u}, d_a.reshape(grid.annotations.shape)
