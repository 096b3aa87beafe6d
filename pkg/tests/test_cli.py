import csv
import functools
import os
import shutil

import numpy as np
import pytest

from afcn import cli, gradcheck
from afcn import layers as L
from afcn.dsp import load_spectrogram
from afcn.heatmap import read_alpha_csv, read_pgm

DESK_CFG = """\
manifest = manifest.csv
cache_dir = cache
stack = alexnet-desk
channel_scale = 0.0625
epochs = 2
patience = 5
accumulate = 8
"""


@pytest.fixture(scope="module")
def workspace(small_corpus, tmp_path_factory):
    """Copy of the small corpus with a config and extracted caches."""
    src, _ = small_corpus
    root = tmp_path_factory.mktemp("ws")
    shutil.copytree(src, root, dirs_exist_ok=True)
    (root / "run.cfg").write_text(DESK_CFG)
    assert cli.main(["extract", "--config", str(root / "run.cfg")]) == 0
    return root


@pytest.fixture(scope="module")
def trained(workspace):
    out = workspace / "runs" / "fold0"
    assert cli.main(["train", "--config", str(workspace / "run.cfg"), "--fold", "0",
                     "--out", str(out)]) == 0
    return out


def test_usage_errors_exit_2(capsys):
    for argv in (["bogus"], ["train"], ["train", "--fold", "7"], ["synth"], []):
        with pytest.raises(SystemExit) as exc:
            cli.main(argv)
        assert exc.value.code == 2


def test_synth_verb(tmp_path, capsys):
    assert cli.main(["synth", "--out", str(tmp_path), "--per-class", "1", "--seed", "3",
                     "--max-duration", "0.6"]) == 0
    assert len(list((tmp_path / "wav").glob("*.wav"))) == 4
    assert (tmp_path / "manifest.csv").is_file()


def test_extract_writes_and_is_idempotent(workspace, capsys):
    caches = sorted((workspace / "cache").glob("*.spg"))
    assert len(caches) == 40
    assert load_spectrogram(caches[0]).grid.shape[0] == 200
    mtimes = [c.stat().st_mtime_ns for c in caches]
    capsys.readouterr()
    assert cli.main(["extract", "--config", str(workspace / "run.cfg")]) == 0
    assert "extracted 0," in capsys.readouterr().out
    assert [c.stat().st_mtime_ns for c in caches] == mtimes


def test_extract_failure_summary(workspace, tmp_path, capsys):
    manifest = tmp_path / "m.csv"
    good = workspace / "wav" / "neutral_0000.wav"
    (tmp_path / "bad.wav").write_bytes(b"RIFF....WAVEjunk")
    manifest.write_text("id,path,label,session,speaker\n"
                        f"ok,{good},neutral,S1,S1_A\nbroken,bad.wav,sad,S1,S1_B\n")
    code = cli.main(["extract", "--manifest", str(manifest), "--out", str(tmp_path / "c")])
    err = capsys.readouterr().err
    assert code == 1
    assert "FAILED broken" in err
    assert (tmp_path / "c" / "ok.spg").is_file()


def test_train_outputs(trained):
    rows = list(csv.reader((trained / "train_log.csv").open()))
    assert rows[0] == ["epoch", "train_loss", "val_wa", "val_ua"]
    assert len(rows) - 1 == 2
    assert (trained / "model.afcn").is_file()
    assert (trained / "train_curve.png").stat().st_size > 0
    log_text = (trained / "run.log").read_text()
    assert "stack = alexnet-desk" in log_text and "channel_scale = 0.0625" in log_text


def test_train_deterministic(workspace, trained, tmp_path):
    out = tmp_path / "again"
    assert cli.main(["train", "--config", str(workspace / "run.cfg"), "--fold", "0",
                     "--out", str(out)]) == 0
    first = list(csv.reader((trained / "train_log.csv").open()))[1]
    assert list(csv.reader((out / "train_log.csv").open()))[1] == first
    assert (out / "model.afcn").read_bytes() == (trained / "model.afcn").read_bytes()


def test_train_missing_cache(workspace, tmp_path, capsys):
    cfg = tmp_path / "c.cfg"
    cfg.write_text(DESK_CFG.replace("cache_dir = cache", f"cache_dir = {tmp_path}/none")
                   .replace("manifest = manifest.csv", f"manifest = {workspace}/manifest.csv"))
    assert cli.main(["train", "--config", str(cfg), "--fold", "1", "--out",
                     str(tmp_path / "r")]) == 1
    assert "missing spectrogram cache" in capsys.readouterr().err


def test_eval_single_and_deterministic(workspace, trained, tmp_path):
    args = ["eval", "--config", str(workspace / "run.cfg"), "--fold", "0",
            "--checkpoint", str(trained / "model.afcn")]
    assert cli.main(args + ["--out", str(tmp_path / "a")]) == 0
    assert cli.main(args + ["--out", str(tmp_path / "b")]) == 0
    a = (tmp_path / "a" / "metrics.csv").read_text()
    assert a == (tmp_path / "b" / "metrics.csv").read_text()
    assert a.splitlines()[0].startswith("fold,wa,ua")
    assert (tmp_path / "a" / "confusion_fold0.csv").is_file()
    assert (tmp_path / "a" / "confusion_fold0.png").stat().st_size > 0


def test_eval_all_folds_reports_mean_and_pooled(workspace, trained, tmp_path):
    assert cli.main(["eval", "--config", str(workspace / "run.cfg"), "--fold", "all",
                     "--checkpoint", str(trained / "model.afcn"),
                     "--out", str(tmp_path)]) == 0
    folds = [r["fold"] for r in csv.DictReader((tmp_path / "metrics.csv").open())]
    assert folds == ["0", "1", "2", "3", "4", "mean", "pooled"]


def test_eval_missing_checkpoint(workspace, tmp_path, capsys):
    assert cli.main(["eval", "--config", str(workspace / "run.cfg"), "--checkpoint",
                     str(tmp_path / "none.afcn"), "--out", str(tmp_path)]) == 1
    assert "checkpoint not found" in capsys.readouterr().err


def test_eval_incompatible_checkpoint(workspace, trained, tmp_path, capsys):
    cfg = tmp_path / "c.cfg"
    cfg.write_text((workspace / "run.cfg").read_text().replace("0.0625", "0.125")
                   .replace("manifest.csv", f"{workspace}/manifest.csv")
                   .replace("cache_dir = cache", f"cache_dir = {workspace}/cache"))
    assert cli.main(["eval", "--config", str(cfg), "--checkpoint",
                     str(trained / "model.afcn"), "--out", str(tmp_path)]) == 1
    assert "encoder.conv1.kernels" in capsys.readouterr().err


def test_attend_outputs(workspace, trained, tmp_path):
    prefix = tmp_path / "h" / "utt"
    wav = workspace / "wav" / "sad_0001.wav"
    assert cli.main(["attend", "--config", str(workspace / "run.cfg"), "--checkpoint",
                     str(trained / "model.afcn"), "--wav", str(wav),
                     "--out", str(prefix)]) == 0
    alpha = read_alpha_csv(f"{prefix}_alpha.csv")
    assert abs(alpha.sum() - 1) < 1e-6
    spec = load_spectrogram(workspace / "cache" / "sad_0001.spg")
    att = read_pgm(f"{prefix}_attention.pgm")
    assert att.shape == spec.grid.shape
    assert att.max() == 255
    assert read_pgm(f"{prefix}_spectrogram.pgm").shape == spec.grid.shape
    assert os.path.getsize(f"{prefix}_attention.png") > 0


def test_attend_too_short(workspace, trained, tmp_path, capsys):
    from afcn.dsp import SampleBuffer, write_wav
    write_wav(tmp_path / "short.wav", SampleBuffer(np.zeros(3000), 16000))
    assert cli.main(["attend", "--config", str(workspace / "run.cfg"), "--checkpoint",
                     str(trained / "model.afcn"), "--wav", str(tmp_path / "short.wav"),
                     "--out", str(tmp_path / "x")]) == 1
    assert "needs at least 35" in capsys.readouterr().err


@pytest.fixture
def quick_suite(monkeypatch):
    monkeypatch.setattr(cli, "run_suite", functools.partial(gradcheck.run_suite, max_coords=8))


def test_gradcheck_report_rows(workspace, quick_suite, capsys):
    assert cli.main(["gradcheck", "--config", str(workspace / "run.cfg")]) == 0
    rows = list(csv.reader(capsys.readouterr().out.splitlines()))
    assert rows[0][0] == "check"
    names = [r[0] for r in rows[1:]]
    assert len(names) == 12
    for want in ("conv2d", "maxpool", "lrn", "relu", "linear", "softmax_ce",
                 "attention(lambda=0.3)"):
        assert want in names
    assert all(r[-1] == "ok" for r in rows[1:])


def test_gradcheck_corrupted_backward(workspace, quick_suite, monkeypatch, capsys):
    real = L.relu_backward

    def broken(x, grad):
        gb = real(x, grad)
        return L.GradBundle(gb.input * 1.01, gb.params)

    monkeypatch.setattr(L, "relu_backward", broken)
    assert cli.main(["gradcheck", "--config", str(workspace / "run.cfg")]) == 1
    err = capsys.readouterr().err
    assert "gradcheck FAILED" in err and "rel error" in err
