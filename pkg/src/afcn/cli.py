"""``afcn`` command line: synth, extract, train, eval, attend, gradcheck.

Exit codes: 0 success, 1 operational failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import config as runcfg
from . import dsp, heatmap, plotting
from .checkpoint import import_encoder, load_checkpoint, save_checkpoint
from .data import SynthConfig, load_manifest, split_folds, synth_corpus
from .errors import AfcnError, ConfigError
from .gradcheck import run_suite
from .metrics import (confusion, metrics_row, write_confusion_csv, write_metrics_csv)
from .model import build_model
from .training import EpochLog, predict_all, train, worker_count

log = logging.getLogger("afcn")

EXTRACT_STAMP = "extract.cfg"


# ---------------------------------------------------------------------------
# helpers

def cache_path(cache_dir, uid: str) -> Path:
    return Path(cache_dir) / f"{uid}.spg"


def _load_cfg(args) -> runcfg.RunConfig:
    cfg = runcfg.load(args.config) if args.config else runcfg.RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def _write_run_log(out_dir: Path, verb: str, cfg: runcfg.RunConfig, extra: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = [f"# afcn {verb}"] + [f"# {k}: {v}" for k, v in extra.items()]
    (out_dir / "run.log").write_text("\n".join(lines) + "\n" + cfg.dumps())


def _examples(utts, cfg: runcfg.RunConfig):
    out = []
    for u in utts:
        p = cache_path(cfg.cache_dir, u.id)
        if not p.is_file():
            raise AfcnError(f"missing spectrogram cache for {u.id}: {p} (run `afcn extract`)")
        out.append((dsp.load_spectrogram(p).grid, u.label))
    return out


def _fold(cfg: runcfg.RunConfig, index: int):
    folds = split_folds(load_manifest(cfg.manifest), cfg.num_folds)
    if not 0 <= index < len(folds):
        raise ConfigError(f"fold {index} outside [0, {len(folds)})")
    return folds[index]


# ---------------------------------------------------------------------------
# verbs

def cmd_synth(args) -> int:
    scfg = SynthConfig(per_class=args.per_class, min_duration_s=args.min_duration,
                       max_duration_s=args.max_duration, noise_floor=args.noise_floor)
    records = synth_corpus(args.out, scfg, seed=args.seed if args.seed is not None else 0)
    print(f"wrote {len(records)} utterances and manifest.csv to {args.out}")
    return 0


def _extract_one(u, cfg: runcfg.RunConfig, scfg: dsp.SpectrogramConfig, fresh: bool):
    target = cache_path(cfg.cache_dir, u.id)
    buf = dsp.read_wav(u.path)
    scfg.validate(buf.sample_rate_hz)
    frames = dsp.num_frames(len(buf), scfg.window_samples(buf.sample_rate_hz),
                            scfg.shift_samples(buf.sample_rate_hz))
    expected = 16 + 4 * scfg.keep_bins * frames
    if (not fresh and target.is_file() and target.stat().st_size == expected
            and target.stat().st_mtime >= Path(u.path).stat().st_mtime):
        return False
    dsp.save_spectrogram(target, dsp.spectrogram(buf, scfg))
    return True


def cmd_extract(args) -> int:
    cfg = _load_cfg(args)
    if args.manifest:
        cfg = replace(cfg, manifest=str(Path(args.manifest).resolve()))
    if args.out:
        cfg = replace(cfg, cache_dir=str(Path(args.out).resolve()))
    scfg = cfg.spectrogram_config()
    cache = Path(cfg.cache_dir)
    cache.mkdir(parents=True, exist_ok=True)
    stamp = cache / EXTRACT_STAMP
    stamp_text = repr(scfg) + "\n"
    fresh = not stamp.is_file() or stamp.read_text() != stamp_text

    utts = load_manifest(cfg.manifest, check_files=False)

    def job(u):
        try:
            return u, _extract_one(u, cfg, scfg, fresh), None
        except (AfcnError, OSError) as exc:
            return u, False, exc

    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        results = list(pool.map(job, utts))
    stamp.write_text(stamp_text)
    written = sum(1 for _, w, _ in results if w)
    failures = [(u, e) for u, _, e in results if e is not None]
    print(f"extracted {written}, up to date {len(utts) - written - len(failures)}, "
          f"failed {len(failures)}")
    for u, exc in failures:
        print(f"FAILED {u.id}: {exc}", file=sys.stderr)
    return 1 if failures else 0


def cmd_train(args) -> int:
    cfg = _load_cfg(args)
    fold = _fold(cfg, args.fold)
    out = Path(args.out or f"runs/fold{args.fold}")
    _write_run_log(out, "train", cfg, {"fold": args.fold})
    train_set = _examples(fold.train, cfg)
    val_set = _examples(fold.validation, cfg)

    mcfg = cfg.model_config()
    model = build_model(mcfg, seed=cfg.seed, keep_bins=cfg.keep_bins)
    if cfg.init_encoder:
        model = import_encoder(cfg.init_encoder, model, strict=cfg.import_strict)

    log_path = out / "train_log.csv"
    with log_path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "val_wa", "val_ua"])

        def on_epoch(e: EpochLog):
            writer.writerow([e.epoch, f"{e.train_loss:.6f}", f"{e.val_wa:.6f}", f"{e.val_ua:.6f}"])
            fh.flush()

        result = train(model, train_set, val_set, cfg.train_config(), on_epoch)
    save_checkpoint(result.model, out / "model.afcn")
    plotting.plot_training_curve(result.history, out / "train_curve.png")
    print(f"trained {len(result.history)} epochs; best epoch {result.best_epoch}; "
          f"checkpoint {out / 'model.afcn'}")
    return 0


def cmd_eval(args) -> int:
    cfg = _load_cfg(args)
    mcfg = cfg.model_config()
    folds = split_folds(load_manifest(cfg.manifest), cfg.num_folds)
    indices = range(len(folds)) if args.fold == "all" else [int(args.fold)]
    out = Path(args.out or "eval")
    _write_run_log(out, "eval", cfg, {"fold": args.fold, "checkpoint": args.checkpoint,
                                      "split": args.split})
    rows, pooled = [], None
    for k in indices:
        if not 0 <= k < len(folds):
            raise ConfigError(f"fold {k} outside [0, {len(folds)})")
        ckpt = Path(args.checkpoint.format(fold=k))
        if not ckpt.is_file():
            raise AfcnError(f"checkpoint not found: {ckpt}")
        model = load_checkpoint(ckpt, mcfg)
        examples = _examples(getattr(folds[k], args.split), cfg)
        preds = predict_all(model, [g for g, _ in examples])
        m = confusion(preds, [y for _, y in examples], mcfg.num_classes)
        pooled = m if pooled is None else pooled + m
        rows.append(metrics_row(k, m))
        write_confusion_csv(out / f"confusion_fold{k}.csv", m)
        plotting.plot_confusion(m.counts, out / f"confusion_fold{k}.png", f"fold {k}")
    if len(rows) > 1:
        mean = {key: float(np.nanmean([r[key] for r in rows])) for key in rows[0] if key != "fold"}
        rows.append({"fold": "mean", **mean})
        rows.append(metrics_row("pooled", pooled))
        write_confusion_csv(out / "confusion_pooled.csv", pooled)
    write_metrics_csv(out / "metrics.csv", rows)
    for r in rows:
        print(f"fold {r['fold']}: WA {r['wa']:.4f} UA {r['ua']:.4f}")
    return 0


def attention_maps(model, spec: dsp.Spectrogram):
    result = model.forward(spec)
    alpha = result.attention.as_grid()
    up = heatmap.upsample_alpha(alpha, model.config, spec.keep_bins, spec.num_frames)
    return result, alpha, up


def cmd_attend(args) -> int:
    cfg = _load_cfg(args)
    mcfg = cfg.model_config()
    if not Path(args.checkpoint).is_file():
        raise AfcnError(f"checkpoint not found: {args.checkpoint}")
    model = load_checkpoint(args.checkpoint, mcfg)
    spec = dsp.spectrogram(dsp.read_wav(args.wav), cfg.spectrogram_config())
    result, alpha, up = attention_maps(model, spec)
    prefix = Path(args.out or Path(args.wav).stem)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    heatmap.write_alpha_csv(f"{prefix}_alpha.csv", alpha)
    heatmap.write_pgm(f"{prefix}_attention.pgm", heatmap.to_gray(up))
    heatmap.write_pgm(f"{prefix}_spectrogram.pgm", heatmap.log_gray(spec.grid))
    plotting.plot_attention(spec.grid, up, f"{prefix}_attention.png",
                            title=Path(args.wav).name, frame_shift_ms=cfg.shift_ms,
                            bin_hz=dsp.bin_width_hz(cfg.spectrogram_config(), spec.sample_rate_hz))
    pred = int(np.argmax(result.logits))
    print(f"grid {alpha.shape[0]}x{alpha.shape[1]}, predicted class {pred}; wrote {prefix}_*")
    return 0


def cmd_gradcheck(args) -> int:
    cfg = _load_cfg(args)
    results = run_suite(seed=cfg.seed, model_config=cfg.model_config())
    rows = [["check", "coords", "max_rel_error", "worst_tensor", "worst_index", "analytic",
             "numeric", "status"]]
    for r in results:
        rows.append([r.name, r.coords, f"{r.max_rel_error:.3e}", r.worst_tensor,
                     "/".join(str(int(i)) for i in r.worst_index), f"{r.analytic:.6e}",
                     f"{r.numeric:.6e}", "ok" if r.passed else "FAIL"])
    writer = csv.writer(sys.stdout)
    writer.writerows(rows)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        with Path(args.out).open("w", newline="") as fh:
            csv.writer(fh).writerows(rows)
    failed = [r for r in results if not r.passed]
    if failed:
        worst = max(failed, key=lambda r: r.max_rel_error)
        print(f"gradcheck FAILED: {worst.name} {worst.worst_tensor}{tuple(map(int, worst.worst_index))} "
              f"rel error {worst.max_rel_error:.3e}", file=sys.stderr)
        return 1
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value run configuration file")
    common.add_argument("--seed", type=int, help="overrides the config seed")
    common.add_argument("--out", help="output directory (or file prefix for attend)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="afcn", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic 4-class corpus")
    p.add_argument("--per-class", type=int, default=10)
    p.add_argument("--min-duration", type=float, default=0.5)
    p.add_argument("--max-duration", type=float, default=3.0)
    p.add_argument("--noise-floor", type=float, default=SynthConfig.noise_floor)
    p.set_defaults(func=cmd_synth, require_out=True)

    p = sub.add_parser("extract", parents=[common], help="compute spectrogram caches")
    p.add_argument("--manifest")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("train", parents=[common], help="train one cross-validation fold")
    p.add_argument("--fold", type=int, choices=range(0, 5), required=True, metavar="0..4")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="score a checkpoint on a fold")
    p.add_argument("--fold", default="0", choices=[str(i) for i in range(5)] + ["all"])
    p.add_argument("--checkpoint", required=True,
                   help="path; may contain {fold} when --fold all")
    p.add_argument("--split", default="test", choices=["train", "validation", "test"])
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("attend", parents=[common], help="export attention heatmaps for a WAV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--wav", required=True)
    p.set_defaults(func=cmd_attend)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient suite")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "require_out", False) and not args.out:
        parser.error("--out is required")
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (AfcnError, OSError) as exc:
        print(f"afcn {args.verb}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
