"""Spectrogram front end: WAV parsing, Hamming framing, direct DFT magnitudes.

Defaults follow the 40 ms window / 10 ms shift / 800-point DFT recipe and
keep the 200 lowest bins (0-4 kHz at 16 kHz sampling).
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError, TooShortError

SPG_MAGIC = b"SPG1"


@dataclass(frozen=True)
class SampleBuffer:
    samples: np.ndarray
    sample_rate_hz: int

    def __len__(self):
        return len(self.samples)


@dataclass(frozen=True)
class SpectrogramConfig:
    window_ms: float = 40.0
    shift_ms: float = 10.0
    dft_len: int = 800
    keep_bins: int = 200
    log_offset: float = 0.0  # >0 applies log(1 + x/eps); off by default

    def window_samples(self, rate: int) -> int:
        return int(round(self.window_ms * rate / 1000.0))

    def shift_samples(self, rate: int) -> int:
        return int(round(self.shift_ms * rate / 1000.0))

    def validate(self, rate: int) -> None:
        if self.dft_len < 2 or self.keep_bins < 1:
            raise ConfigError("dft_len must be >= 2 and keep_bins >= 1")
        if self.keep_bins > self.dft_len // 2 + 1:
            raise ConfigError(
                f"keep_bins={self.keep_bins} exceeds dft_len/2+1={self.dft_len // 2 + 1}")
        win = self.window_samples(rate)
        if win < 2 or win > self.dft_len:
            raise ConfigError(f"window of {win} samples must lie in [2, dft_len={self.dft_len}]")
        if self.shift_samples(rate) < 1:
            raise ConfigError("shift must be at least one sample")
        if self.log_offset < 0:
            raise ConfigError("log_offset must be >= 0")


@dataclass
class Spectrogram:
    grid: np.ndarray  # [keep_bins, num_frames], frequency x time
    sample_rate_hz: int
    config: SpectrogramConfig = field(default_factory=SpectrogramConfig)

    @property
    def num_frames(self) -> int:
        return self.grid.shape[1]

    @property
    def keep_bins(self) -> int:
        return self.grid.shape[0]


# ---------------------------------------------------------------------------
# WAV I/O

def read_wav(path) -> SampleBuffer:
    """Parse a RIFF/WAVE file holding 16-bit little-endian mono PCM."""
    raw = Path(path).read_bytes()
    if len(raw) < 12:
        raise FormatError(f"{path}: truncated RIFF header at byte {len(raw)}")
    if raw[0:4] != b"RIFF" or raw[8:12] != b"WAVE":
        raise FormatError(f"{path}: not a RIFF/WAVE file (byte 0)")

    fmt = None
    data = None
    pos = 12
    while pos + 8 <= len(raw):
        chunk_id = raw[pos:pos + 4]
        (size,) = struct.unpack_from("<I", raw, pos + 4)
        body = pos + 8
        if body + size > len(raw):
            raise FormatError(
                f"{path}: chunk {chunk_id!r} at byte {pos} claims {size} bytes, "
                f"file ends at byte {len(raw)}")
        if chunk_id == b"fmt ":
            if size < 16:
                raise FormatError(f"{path}: fmt chunk too short at byte {pos}")
            fmt = struct.unpack_from("<HHIIHH", raw, body), body
        elif chunk_id == b"data":
            data = (body, size)
        pos = body + size + (size & 1)
    if fmt is None:
        raise FormatError(f"{path}: missing fmt chunk (scanned to byte {pos})")
    if data is None:
        raise FormatError(f"{path}: missing data chunk (scanned to byte {pos})")

    (tag, channels, rate, _, _, bits), fmt_at = fmt
    if tag != 1:
        raise FormatError(f"{path}: format tag {tag} is not PCM (byte {fmt_at})")
    if channels != 1:
        raise FormatError(f"{path}: channels={channels} unsupported (byte {fmt_at + 2})")
    if bits != 16:
        raise FormatError(f"{path}: bits_per_sample={bits} unsupported (byte {fmt_at + 14})")
    if rate <= 0:
        raise FormatError(f"{path}: sample rate {rate} invalid (byte {fmt_at + 4})")

    start, size = data
    if size % 2:
        raise FormatError(f"{path}: odd data length {size} at byte {start}")
    pcm = np.frombuffer(raw, dtype="<i2", count=size // 2, offset=start)
    return SampleBuffer(pcm.astype(np.float64) / 32768.0, int(rate))


def write_wav(path, buf: SampleBuffer) -> None:
    """Write mono 16-bit PCM; samples are clipped to [-1, 1)."""
    pcm = np.clip(np.round(np.asarray(buf.samples) * 32768.0), -32768, 32767).astype("<i2")
    payload = pcm.tobytes()
    header = b"RIFF" + struct.pack("<I", 36 + len(payload)) + b"WAVE"
    header += b"fmt " + struct.pack("<IHHIIHH", 16, 1, 1, buf.sample_rate_hz,
                                    buf.sample_rate_hz * 2, 2, 16)
    header += b"data" + struct.pack("<I", len(payload))
    Path(path).write_bytes(header + payload)


# ---------------------------------------------------------------------------
# Framing and DFT

def hamming_window(n: int) -> np.ndarray:
    if n < 2:
        raise ValueError(f"hamming window needs n >= 2, got {n}")
    k = np.arange(n)
    return 0.54 - 0.46 * np.cos(2.0 * np.pi * k / (n - 1))


def num_frames(n_samples: int, window: int, shift: int) -> int:
    if n_samples < window:
        return 0
    return (n_samples - window) // shift + 1


def frame_signal(buf: SampleBuffer, cfg: SpectrogramConfig = SpectrogramConfig()) -> np.ndarray:
    """Return windowed frames as a [num_frames, window_samples] array.

    The trailing partial frame is dropped.
    """
    cfg.validate(buf.sample_rate_hz)
    win = cfg.window_samples(buf.sample_rate_hz)
    shift = cfg.shift_samples(buf.sample_rate_hz)
    x = np.asarray(buf.samples, dtype=np.float64)
    if len(x) < win:
        raise TooShortError(
            f"utterance has {len(x)} samples, one {cfg.window_ms:g} ms window needs {win}")
    count = num_frames(len(x), win, shift)
    frames = np.lib.stride_tricks.sliding_window_view(x, win)[::shift][:count]
    return frames * hamming_window(win)


@lru_cache(maxsize=8)
def _twiddles(dft_len: int, frame_len: int) -> tuple[np.ndarray, np.ndarray]:
    # integer product mod N keeps the phase exact for large k*n
    k = np.arange(dft_len // 2 + 1)
    n = np.arange(frame_len)
    phase = 2.0 * np.pi * ((np.outer(n, k) % dft_len) / dft_len)
    cos, sin = np.cos(phase), -np.sin(phase)
    cos.flags.writeable = False
    sin.flags.writeable = False
    return cos, sin


def dft_magnitude(frame: np.ndarray, dft_len: int = 800) -> np.ndarray:
    """|DFT| of a frame zero-padded to ``dft_len``; bins 0..dft_len/2.

    Accepts a single frame or a [num_frames, frame_len] stack.
    """
    frame = np.asarray(frame, dtype=np.float64)
    frame_len = frame.shape[-1]
    if frame_len > dft_len:
        raise ValueError(f"frame of length {frame_len} exceeds dft_len {dft_len}")
    cos, sin = _twiddles(dft_len, frame_len)
    return np.hypot(frame @ cos, frame @ sin)


def spectrogram(buf: SampleBuffer, cfg: SpectrogramConfig = SpectrogramConfig()) -> Spectrogram:
    frames = frame_signal(buf, cfg)
    mags = dft_magnitude(frames, cfg.dft_len)[:, :cfg.keep_bins]
    grid = np.ascontiguousarray(mags.T)
    if cfg.log_offset > 0:
        grid = np.log1p(grid / cfg.log_offset)
    return Spectrogram(grid, buf.sample_rate_hz, cfg)


# ---------------------------------------------------------------------------
# SPG1 cache files

def save_spectrogram(path, spec: Spectrogram) -> None:
    bins, frames = spec.grid.shape
    header = SPG_MAGIC + struct.pack("<III", bins, frames, spec.sample_rate_hz)
    # column-major: all bins of frame 0, then frame 1, ...
    body = np.ascontiguousarray(spec.grid.T, dtype="<f4").tobytes()
    Path(path).write_bytes(header + body)


def load_spectrogram(path, cfg: SpectrogramConfig | None = None) -> Spectrogram:
    raw = Path(path).read_bytes()
    if len(raw) < 16:
        raise FormatError(f"{path}: truncated SPG1 header ({len(raw)} bytes)")
    if raw[:4] != SPG_MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r}")
    bins, frames, rate = struct.unpack_from("<III", raw, 4)
    expected = 16 + 4 * bins * frames
    if len(raw) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, found {len(raw)}")
    values = np.frombuffer(raw, dtype="<f4", offset=16).reshape(frames, bins)
    grid = np.ascontiguousarray(values.T, dtype=np.float32)
    return Spectrogram(grid, int(rate), cfg or SpectrogramConfig(keep_bins=bins))


def bin_width_hz(cfg: SpectrogramConfig, rate: int) -> float:
    return rate / cfg.dft_len


def bin_for_frequency(freq_hz: float, cfg: SpectrogramConfig, rate: int) -> int:
    return int(math.floor(freq_hz / bin_width_hz(cfg, rate) + 0.5))
