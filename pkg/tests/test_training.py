import numpy as np
import pytest

from afcn.errors import TrainingError
from afcn.metrics import weighted_accuracy
from afcn.model import ALEXNET_DESK_STACK, ModelConfig, build_model
from afcn.training import TrainConfig, evaluate, predict_all, train

CFG = ModelConfig(stack=ALEXNET_DESK_STACK, channel_scale=0.0625)


def toy_set(n, seed):
    """Four classes told apart by which band of a 40-bin grid carries energy."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        y = i % 4
        g = rng.uniform(0, 0.05, (40, 50))
        g[y * 10:(y + 1) * 10] += 1.0
        out.append((g, y))
    return out


def test_learns_toy_task():
    res = train(build_model(CFG, keep_bins=40), toy_set(16, 0), toy_set(8, 1),
                TrainConfig(epochs=15, lr=0.05, accumulate=4, patience=15))
    m = evaluate(res.model, toy_set(8, 1))
    assert weighted_accuracy(m) == 1.0


def test_patience_zero_stops_after_first_non_improvement():
    # lr 0: validation UA never improves after epoch 1
    res = train(build_model(CFG, keep_bins=40), toy_set(4, 0), toy_set(4, 1),
                TrainConfig(epochs=10, lr=0.0, patience=0))
    assert len(res.history) == 2
    assert res.best_epoch == 1


def test_history_length_and_steps():
    res = train(build_model(CFG, keep_bins=40), toy_set(5, 0),
                cfg=TrainConfig(epochs=3, accumulate=2))
    assert [h.epoch for h in res.history] == [1, 2, 3]
    assert res.steps == 9  # ceil(5/2) per epoch


def test_frozen_layers_stay_fixed():
    m = build_model(CFG, keep_bins=40)
    before = m.params["encoder.conv1.kernels"].copy()
    res = train(m, toy_set(4, 0), cfg=TrainConfig(epochs=1, accumulate=1,
                                                   freeze_through="conv1"))
    assert np.array_equal(res.model.params["encoder.conv1.kernels"], before)
    assert not np.array_equal(res.model.params["encoder.conv2.kernels"],
                              build_model(CFG, keep_bins=40).params["encoder.conv2.kernels"])


def test_nan_loss_aborts():
    m = build_model(CFG, keep_bins=40)
    data = toy_set(3, 0)
    data[1] = (np.full((40, 50), np.nan), 1)
    with pytest.raises(TrainingError, match="step"):
        train(m, data, cfg=TrainConfig(epochs=1, accumulate=16))


def test_threaded_predictions_keep_order(monkeypatch):
    m = build_model(CFG, keep_bins=40)
    grids = [g for g, _ in toy_set(9, 3)]
    serial = predict_all(m, grids)
    monkeypatch.setenv("AFCN_THREADS", "3")
    assert np.array_equal(predict_all(m, grids), serial)


def test_empty_training_set():
    with pytest.raises(TrainingError):
        train(build_model(CFG, keep_bins=40), [])


def test_freeze_attention():
    m = build_model(CFG, keep_bins=40)
    before = {k: v.copy() for k, v in m.params.items() if k.startswith("attention.")}
    res = train(m, toy_set(4, 0), cfg=TrainConfig(epochs=1, accumulate=1, weight_decay=0.1,
                                                   freeze_attention=True))
    for k, v in before.items():
        assert np.array_equal(res.model.params[k], v)
