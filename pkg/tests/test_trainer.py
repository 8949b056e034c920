import csv
import math

import numpy as np
import pytest

from hybrid_pinn.network import NetworkConfig
from hybrid_pinn.problems import regression_problem, two_slab_problem
from hybrid_pinn.trainer import (AdamState, AnnealConfig, Phase, TrainConfig, Trainer, TrainingDiverged, adam_step,
                                 clip_global_norm, evaluate_losses, learning_rate, train)

NO_ANNEAL = AnnealConfig(enabled=False)


def test_adam_first_step_is_signed_lr():
    g = np.array([0.3, -2.0, 1e-3])
    p, st, ok = adam_step(np.zeros(3), g, AdamState.zeros(3), 1e-3)
    assert ok and st.t == 1
    assert np.allclose(p, -1e-3 * g / (np.abs(g) + 1e-8), rtol=1e-6)


def test_adam_zero_gradient_keeps_params():
    p0 = np.array([1.0, -2.0])
    p, _, _ = adam_step(p0, np.zeros(2), AdamState.zeros(2), 1e-3)
    assert np.array_equal(p, p0)


def test_adam_skips_nonfinite_gradient():
    p0 = np.ones(2)
    st0 = AdamState.zeros(2)
    p, st, ok = adam_step(p0, np.array([np.nan, 1.0]), st0, 1e-3)
    assert not ok and st is st0 and np.array_equal(p, p0)


def test_clip_examples():
    g, n = clip_global_norm(np.array([6.0, 8.0]), 1.0)
    assert n == 10.0 and np.allclose(g, [0.6, 0.8]) and np.linalg.norm(g) == pytest.approx(1.0)
    g = np.array([0.3, 0.4])
    assert np.array_equal(clip_global_norm(g, 1.0)[0], g)
    assert np.array_equal(clip_global_norm(np.zeros(3), 1.0)[0], np.zeros(3))
    with pytest.raises(ValueError):
        clip_global_norm(g, 0.0)


def test_learning_rate_schedule():
    assert learning_rate(0) == 1e-3
    assert learning_rate(9_999) == 1e-3
    assert learning_rate(10_000) == pytest.approx(9e-4, rel=0, abs=1e-18)
    assert learning_rate(25_000) == 1e-3 * 0.9 ** 2


def _linear_problem(seed=0, hidden=(8, 8)):
    x = np.linspace(-1, 1, 64)
    return regression_problem(x, 2 * x + 1, NetworkConfig(1, ["T"], list(hidden), seed=seed))


def test_batch_size_and_resample_determinism():
    prob = _linear_problem()
    cfg = TrainConfig([Phase("warm_start", ["data"], 1)], batch_fraction=0.02, anneal=NO_ANNEAL)
    tr = Trainer(prob, cfg)
    assert tr.batch_size(10_000) == 200
    assert tr.batch_size(10) == 1
    a, b = Trainer(prob, cfg), Trainer(prob, cfg)
    for _ in range(3):
        a.resample()
        b.resample()
        assert all(np.array_equal(a.batches[k], b.batches[k]) for k in a.batches)


def test_resampling_cadence():
    prob = _linear_problem()
    cfg = TrainConfig([Phase("warm_start", ["data"], 7)], batch_fraction=0.1, resample_every=3, anneal=NO_ANNEAL)
    tr = Trainer(prob, cfg)
    calls = []
    orig = tr.resample
    tr.resample = lambda: (calls.append(tr.step), orig())[1]
    tr.run()
    assert calls == [0, 3, 6]


def test_phase_order_validation():
    with pytest.raises(ValueError):
        TrainConfig([Phase("physics", ["residual", "data"], 5), Phase("warm_start", ["data"], 5)])
    with pytest.raises(ValueError):
        Phase("x", ["magic"], 1)
    with pytest.raises(ValueError):
        TrainConfig([Phase("warm_start", ["data"], 1)], batch_fraction=0.0)
    cfg = TrainConfig.hybrid(100, 0.2)
    assert [p.max_steps for p in cfg.phases] == [20, 80] and cfg.total_steps == 100


def test_data_only_linear_fit():
    prob = _linear_problem()
    cfg = TrainConfig([Phase("warm_start", ["data"], 10_000)], lr0=2e-2, lr_decay=0.6, decay_every=1500,
                      batch_fraction=1.0, clip_norm=10.0, anneal=NO_ANNEAL)
    train(prob, cfg)
    assert evaluate_losses(prob)["data"] < 1e-6


def test_identical_runs_are_identical(tmp_path):
    out = []
    for k in range(2):
        prob = _linear_problem(seed=3)
        cfg = TrainConfig([Phase("warm_start", ["data"], 50)], batch_fraction=0.3, seed=5, log_every=10,
                          anneal=NO_ANNEAL)
        model, hist = train(prob, cfg)
        hist.to_csv(tmp_path / f"h{k}.csv")
        out.append(model.flat().tobytes())
    assert out[0] == out[1]
    assert (tmp_path / "h0.csv").read_bytes() == (tmp_path / "h1.csv").read_bytes()


def test_divergence_guard_restores_last_good(tmp_path):
    prob = _linear_problem()
    cfg = TrainConfig([Phase("warm_start", ["data"], 20)], batch_fraction=1.0, divergence=1e-12, anneal=NO_ANNEAL)
    before = prob.model.flat().copy()
    with pytest.raises(TrainingDiverged) as err:
        train(prob, cfg, tmp_path)
    assert np.array_equal(err.value.model.flat(), before)
    assert (tmp_path / "checkpoint_last_good_main.json").exists()


def test_two_slab_history_and_warm_start_ordering(tmp_path):
    prob = two_slab_problem(n_interior=40)
    # two-slab has no data points, so the warm start is skipped by leaving it out
    cfg = TrainConfig([Phase("physics", ["residual", "boundary", "interface"], 30)], batch_fraction=1.0,
                      log_every=5, anneal=AnnealConfig(every=10))
    model, hist = train(prob, cfg, tmp_path)
    path = tmp_path / "history.csv"
    hist.to_csv(path)
    rows = list(csv.DictReader(open(path)))
    assert all(r["loss_flux:iface"] != "" and r["loss_val:iface"] != "" for r in rows)
    assert "lambda_flux:iface" in rows[0]
    steps = [int(r["step"]) for r in rows]
    assert steps == sorted(set(steps))
    assert all(math.isfinite(float(r["total"])) for r in rows)
    assert {f"checkpoint_physics_{r}.json" for r in ("slab1", "slab2")} <= {p.name for p in tmp_path.iterdir()}


def test_warm_start_records_only_data():
    x = np.linspace(-1, 1, 20)
    prob = regression_problem(x, np.sin(x), NetworkConfig(1, ["T"], [4]))
    cfg = TrainConfig([Phase("warm_start", ["data"], 10), Phase("fit", ["data"], 5)], log_every=1,
                      batch_fraction=1.0, anneal=NO_ANNEAL)
    _, hist = train(prob, cfg)
    assert [r["phase"] for r in hist.records] == ["warm_start"] * 10 + ["fit"] * 5
    assert all(set(k for k in r if k.startswith("loss_")) == {"loss_data"} for r in hist.records)
