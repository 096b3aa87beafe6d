"""Map attention weights back onto the spectrogram and write CSV / PGM files."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .model import ModelConfig, receptive_geometry


def nearest_cells(n_input: int, n_cells: int, start: float, jump: int) -> np.ndarray:
    """Index of the grid cell whose receptive-field centre is nearest each input position."""
    pos = np.arange(n_input)
    idx = np.floor((pos - start) / jump + 0.5).astype(np.int64)
    return np.clip(idx, 0, n_cells - 1)


def upsample_alpha(alpha_grid: np.ndarray, cfg: ModelConfig, bins: int, frames: int) -> np.ndarray:
    """Paint every alpha cell over its receptive-field centre tile: [bins, frames]."""
    start, jump, _ = receptive_geometry(cfg)
    rows = nearest_cells(bins, alpha_grid.shape[0], start, jump)
    cols = nearest_cells(frames, alpha_grid.shape[1], start, jump)
    return alpha_grid[np.ix_(rows, cols)]


def to_gray(values: np.ndarray) -> np.ndarray:
    """Scale so the maximum maps to 255."""
    top = float(values.max()) if values.size else 0.0
    if top <= 0:
        return np.zeros(values.shape, dtype=np.uint8)
    return np.clip(np.floor(values / top * 255.0 + 0.5), 0, 255).astype(np.uint8)


def log_gray(grid: np.ndarray) -> np.ndarray:
    return to_gray(np.log1p(np.maximum(grid, 0) / max(float(grid.max()), 1e-12) * 1000.0))


def write_pgm(path, image: np.ndarray, flip_vertical: bool = True) -> None:
    """Binary P5 greymap; low frequencies at the bottom by default."""
    img = np.asarray(image, dtype=np.uint8)
    if flip_vertical:
        img = img[::-1]
    h, w = img.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + img.tobytes())


def read_pgm(path, flip_vertical: bool = True) -> np.ndarray:
    raw = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while raw[pos:pos + 1].isspace():
            pos += 1
        start = pos
        while not raw[pos:pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos])
    pos += 1
    if tokens[0] != b"P5":
        raise ValueError(f"{path}: not a P5 greymap")
    w, h = int(tokens[1]), int(tokens[2])
    img = np.frombuffer(raw, dtype=np.uint8, count=w * h, offset=pos).reshape(h, w)
    return img[::-1] if flip_vertical else img


def write_alpha_csv(path, alpha_grid: np.ndarray) -> None:
    """One row per frequency cell (lowest first), one column per time cell."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        for row in alpha_grid:
            w.writerow([repr(float(v)) for v in row])


def read_alpha_csv(path) -> np.ndarray:
    with Path(path).open(newline="") as fh:
        return np.array([[float(v) for v in row] for row in csv.reader(fh)])
