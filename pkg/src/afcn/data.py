"""Utterance manifests, speaker-disjoint cross-validation folds and a
synthetic four-class corpus for desk-scale runs."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import CLASS_NAMES
from .dsp import SampleBuffer, write_wav
from .errors import ManifestError, SplitError

MANIFEST_FIELDS = ("id", "path", "label", "session", "speaker")


@dataclass(frozen=True)
class Utterance:
    id: str
    path: Path
    label: int
    session: str
    speaker: str


@dataclass(frozen=True)
class Fold:
    index: int
    train_sessions: tuple[str, ...]
    validation_speaker: str
    test_speaker: str
    train: tuple[Utterance, ...]
    validation: tuple[Utterance, ...]
    test: tuple[Utterance, ...]


def label_index(name: str) -> int:
    try:
        return CLASS_NAMES.index(name.strip().lower())
    except ValueError:
        raise ManifestError(f"unknown label {name!r}; expected one of {CLASS_NAMES}") from None


def load_manifest(path, check_files: bool = True) -> list[Utterance]:
    path = Path(path)
    root = path.parent
    out: list[Utterance] = []
    seen: dict[str, int] = {}
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != MANIFEST_FIELDS:
            raise ManifestError(f"{path}:1: header must be {','.join(MANIFEST_FIELDS)}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(MANIFEST_FIELDS):
                raise ManifestError(f"{path}:{lineno}: expected 5 fields, got {len(row)}")
            uid, rel, label, session, speaker = (c.strip() for c in row)
            try:
                idx = label_index(label)
            except ManifestError as exc:
                raise ManifestError(f"{path}:{lineno}: {exc}") from None
            if not uid or not session or not speaker:
                raise ManifestError(f"{path}:{lineno}: id, session and speaker are required")
            if uid in seen:
                raise ManifestError(f"{path}:{lineno}: duplicate id {uid!r} "
                                    f"(first on line {seen[uid]})")
            seen[uid] = lineno
            audio = Path(rel) if Path(rel).is_absolute() else root / rel
            if check_files and not audio.is_file():
                raise ManifestError(f"{path}:{lineno}: missing file {audio}")
            out.append(Utterance(uid, audio, idx, session, speaker))
    return out


def write_manifest(path, utterances, root=None) -> None:
    root = Path(root or Path(path).parent)
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(MANIFEST_FIELDS)
        for u in utterances:
            try:
                rel = Path(u.path).relative_to(root)
            except ValueError:
                rel = u.path
            w.writerow([u.id, rel.as_posix(), CLASS_NAMES[u.label], u.session, u.speaker])


def split_folds(utterances, num_folds: int = 5) -> list[Fold]:
    """Fold k holds out the k-th session (sorted). Its lexicographically first
    speaker validates, the other is the test speaker."""
    speakers: dict[str, set[str]] = {}
    for u in utterances:
        speakers.setdefault(u.session, set()).add(u.speaker)
    sessions = sorted(speakers)
    if len(sessions) != num_folds:
        raise SplitError(f"need exactly {num_folds} sessions, found {len(sessions)}: {sessions}")
    owner: dict[str, str] = {}
    for s in sessions:
        if len(speakers[s]) != 2:
            raise SplitError(f"session {s} has {len(speakers[s])} speakers, expected 2")
        for spk in speakers[s]:
            if spk in owner:
                raise SplitError(f"speaker {spk} appears in sessions {owner[spk]} and {s}")
            owner[spk] = s

    folds = []
    for k, held in enumerate(sessions):
        val_spk, test_spk = sorted(speakers[held])
        train_sessions = tuple(s for s in sessions if s != held)
        folds.append(Fold(
            index=k,
            train_sessions=train_sessions,
            validation_speaker=val_spk,
            test_speaker=test_spk,
            train=tuple(u for u in utterances if u.session != held),
            validation=tuple(u for u in utterances if u.speaker == val_spk),
            test=tuple(u for u in utterances if u.speaker == test_spk),
        ))
    return folds


# ---------------------------------------------------------------------------
# Synthetic corpus

@dataclass(frozen=True)
class SynthConfig:
    per_class: int = 10
    min_duration_s: float = 0.5
    max_duration_s: float = 3.0
    sample_rate_hz: int = 16000
    sessions: int = 5
    speakers_per_session: int = 2
    band_top_hz: float = 4000.0
    band_fill: float = 0.5  # fraction of each class band occupied by noise
    am_rates_hz: tuple[float, ...] = (2.0, 3.5, 5.0, 6.5)
    silence_fraction: tuple[float, float] = (0.3, 0.45)  # each of lead and trail
    peak: float = 0.5
    noise_floor: float = 0.01  # std of class-independent white noise over the whole file


@dataclass(frozen=True)
class SynthRecord:
    utterance: Utterance
    lead_samples: int
    voiced_samples: int
    trail_samples: int


def class_band(label: int, cfg: SynthConfig) -> tuple[float, float]:
    width = cfg.band_top_hz / len(CLASS_NAMES)
    centre = (label + 0.5) * width
    half = 0.5 * cfg.band_fill * width
    return centre - half, centre + half


def synth_utterance(label: int, n_voiced: int, rng: np.random.Generator,
                    cfg: SynthConfig) -> np.ndarray:
    """Band-limited noise in the class band, amplitude-modulated at the class rate."""
    rate = cfg.sample_rate_hz
    noise = rng.standard_normal(n_voiced)
    spec = np.fft.rfft(noise)
    freqs = np.fft.rfftfreq(n_voiced, 1.0 / rate)
    lo, hi = class_band(label, cfg)
    spec[(freqs < lo) | (freqs > hi)] = 0.0
    band = np.fft.irfft(spec, n_voiced)
    t = np.arange(n_voiced) / rate
    phase = rng.uniform(0, 2 * np.pi)
    envelope = 0.6 + 0.4 * np.sin(2 * np.pi * cfg.am_rates_hz[label] * t + phase)
    x = band * envelope
    peak = np.abs(x).max()
    return x * (cfg.peak / peak) if peak > 0 else x


def synth_corpus(out_dir, cfg: SynthConfig = SynthConfig(), seed: int = 0) -> list[SynthRecord]:
    """Write WAVs, ``manifest.csv`` and ``synth_meta.csv`` under ``out_dir``.

    Utterances of each class are spread round-robin over the
    sessions x speakers grid so every speaker holds every class.
    """
    out_dir = Path(out_dir)
    wav_dir = out_dir / "wav"
    wav_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    rate = cfg.sample_rate_hz
    slots = [(s, j) for s in range(cfg.sessions) for j in range(cfg.speakers_per_session)]
    records = []
    for label, name in enumerate(CLASS_NAMES):
        for i in range(cfg.per_class):
            s, j = slots[i % len(slots)]
            session = f"Ses{s + 1:02d}"
            speaker = f"{session}_{chr(ord('A') + j)}"
            total = int(round(rng.uniform(cfg.min_duration_s, cfg.max_duration_s) * rate))
            lead = int(round(rng.uniform(*cfg.silence_fraction) * total))
            trail = int(round(rng.uniform(*cfg.silence_fraction) * total))
            voiced = total - lead - trail
            x = np.zeros(total)
            x[lead:lead + voiced] = synth_utterance(label, voiced, rng, cfg)
            if cfg.noise_floor > 0:
                x += cfg.noise_floor * rng.standard_normal(total)
            uid = f"{name}_{i:04d}"
            path = wav_dir / f"{uid}.wav"
            write_wav(path, SampleBuffer(x, rate))
            records.append(SynthRecord(Utterance(uid, path, label, session, speaker),
                                       lead, voiced, trail))
    write_manifest(out_dir / "manifest.csv", [r.utterance for r in records], out_dir)
    with (out_dir / "synth_meta.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "lead_samples", "voiced_samples", "trail_samples"])
        for r in records:
            w.writerow([r.utterance.id, r.lead_samples, r.voiced_samples, r.trail_samples])
    return records


def load_synth_meta(path) -> dict[str, tuple[int, int, int]]:
    with Path(path).open(newline="") as fh:
        return {row["id"]: (int(row["lead_samples"]), int(row["voiced_samples"]),
                            int(row["trail_samples"]))
                for row in csv.DictReader(fh)}
