import json

import jsonschema
import numpy as np
import pytest

from pointr import numerics as nx
from pointr.data import desk_spec, eval_samples_for, synth_shape
from pointr.harness import (
    REPORT_SCHEMA,
    AdamState,
    NumericalError,
    TrainConfig,
    adamw_step,
    checkpoint_load,
    checkpoint_save,
    clip_grad_norm,
    evaluate,
    lr_at,
    model_predictor,
    oracle_predictor,
    parameter_census,
    read_log,
    summary_line,
    train,
    write_log,
)
from pointr.model import PoinTr

from conftest import tiny_config

SPEC = desk_spec(gt_points=128, input_points=64, n_range_train=(32, 64), eval_n=(16, 32, 64))


def _clouds(n=3):
    return [synth_shape(k, i, SPEC.gt_points) for i, k in zip(range(n), ("sphere", "box", "torus"))]


def _param(value, name="w"):
    p = nx.Parameter(np.array(value, dtype=np.float64))
    p.name = name
    return p


def test_adamw_first_step_hand_oracle():
    p = _param([1.0])
    adamw_step([p], [np.array([1.0])], AdamState(), lr=0.1, wd=0.0)
    assert p.data[0] == pytest.approx(1.0 - 0.1 / (1 + 1e-8), abs=1e-6)


def test_adamw_zero_grad_zero_wd_is_identity():
    p = _param([0.3, -2.0])
    before = p.data.copy()
    state = AdamState()
    for _ in range(5):
        adamw_step([p], [np.zeros(2)], state, lr=0.1, wd=0.0)
    np.testing.assert_array_equal(p.data, before)


def test_weight_decay_is_geometric_in_f64():
    p = _param([0.7, -1.3])
    expected = p.data.copy()
    state = AdamState()
    for _ in range(10):
        adamw_step([p], [np.zeros(2)], state, lr=0.01, wd=0.5)
        expected = expected * (1.0 - 0.01 * 0.5)
        np.testing.assert_array_equal(p.data, expected)


def test_adamw_shape_mismatch():
    with pytest.raises(nx.DimensionError):
        adamw_step([_param([1.0, 2.0])], [np.ones(3)], AdamState(), 0.1, 0.0)


def test_clip_grad_norm():
    a, b = _param([0.0, 0.0], "a"), _param([0.0], "b")
    a.grad, b.grad = np.array([3.0, 0.0]), np.array([4.0])
    assert clip_grad_norm([a, b], 1.0) == pytest.approx(5.0)
    np.testing.assert_allclose(np.concatenate([a.grad, b.grad]), [0.6, 0.0, 0.8])


def test_lr_schedule_examples():
    cfg = TrainConfig(lr_decay_factor=0.9)
    assert lr_at(0, cfg) == 0.0005
    assert lr_at(20, cfg) == pytest.approx(0.00045, rel=1e-12)
    assert lr_at(10, cfg) == pytest.approx(0.0005 * 0.9**0.5, rel=1e-12)
    with pytest.raises(ValueError):
        lr_at(-1, cfg)
    with pytest.raises(ValueError):
        TrainConfig(lr_decay_factor=1.5)
    with pytest.raises(ValueError, match="lr_decay"):
        TrainConfig.from_dict({"lr_decay": 0.9})


def test_train_log_and_loss_bookkeeping():
    model = PoinTr(tiny_config(), seed=0)
    cfg = TrainConfig(batch_size=2, steps=4)
    log, state = train(model, _clouds(), cfg, SPEC)
    assert [r["step"] for r in log] == [0, 1, 2, 3]
    assert state.step == 4
    for r in log:
        assert r["j0"] >= 0 and r["j1"] >= 0
        assert r["j"] == pytest.approx(r["j0"] + r["j1"], abs=1e-6)
    assert log[2]["epoch"] == 1


def test_training_is_deterministic():
    runs = []
    for _ in range(2):
        model = PoinTr(tiny_config(), seed=0)
        log, _ = train(model, _clouds(), TrainConfig(batch_size=2, steps=3), SPEC)
        runs.append((log, model.state_dict()))
    assert runs[0][0] == runs[1][0]
    for k in runs[0][1]:
        np.testing.assert_array_equal(runs[0][1][k], runs[1][1][k])


def test_zero_lr_leaves_parameters_bit_identical():
    model = PoinTr(tiny_config(), seed=0)
    before = model.state_dict()
    train(model, _clouds(), TrainConfig(lr=0.0, batch_size=2, steps=2), SPEC)
    for k, v in model.state_dict().items():
        np.testing.assert_array_equal(v, before[k])


def test_resume_equals_uninterrupted(tmp_path):
    cfg = TrainConfig(batch_size=2, steps=6)
    full = PoinTr(tiny_config(), seed=0)
    log_full, _ = train(full, _clouds(), cfg, SPEC)

    half = PoinTr(tiny_config(), seed=0)
    log_a, state = train(half, _clouds(), cfg, SPEC, until=3)
    checkpoint_save(half, state, tmp_path / "mid.ckpt", cfg)
    resumed, state2, cfg2 = checkpoint_load(tmp_path / "mid.ckpt")
    assert cfg2 == cfg and state2.step == 3
    log_b, _ = train(resumed, _clouds(), cfg2, SPEC, state=state2)
    assert log_a + log_b == log_full
    for k, v in full.state_dict().items():
        np.testing.assert_array_equal(resumed.state_dict()[k], v)


def test_non_finite_loss_names_the_step():
    model = PoinTr(tiny_config(), seed=0)
    model.folding.fold2[-1].bias.data[...] = np.nan
    with pytest.raises(NumericalError, match="step 0"):
        train(model, _clouds(), TrainConfig(batch_size=1, steps=1), SPEC)


def test_checkpoint_roundtrip_and_mismatch(tmp_path):
    model = PoinTr(tiny_config(), seed=2)
    state = AdamState(step=7)
    for name, p in model.named_parameters():
        state.m[name] = np.full(p.shape, 0.25, np.float32)
        state.v[name] = np.full(p.shape, 0.5, np.float32)
    checkpoint_save(model, state, tmp_path / "a.ckpt")
    loaded, st, tc = checkpoint_load(tmp_path / "a.ckpt")
    assert tc is None and st.step == 7
    for k, v in model.state_dict().items():
        np.testing.assert_array_equal(loaded.state_dict()[k], v)
        np.testing.assert_array_equal(st.m[k], state.m[k])
    with pytest.raises(ValueError, match="shape"):
        checkpoint_load(tmp_path / "a.ckpt", tiny_config(embed_dim=32))
    census = parameter_census(tmp_path / "a.ckpt")
    assert sum(c for _, _, c in census) == model.num_parameters()


def test_oracle_evaluation_and_schema():
    gt = synth_shape("box", 0, SPEC.gt_points)
    samples = eval_samples_for("box-0000", "box", gt, SPEC)
    report = evaluate(oracle_predictor, samples)
    jsonschema.validate(report, REPORT_SCHEMA)
    for tier in report["tiers"].values():
        assert tier["cd_l1"] == 0 and tier["cd_l2"] == 0 and tier["fscore"] == 1
    s = report["summary"]
    assert s["cd_avg"] == 0.0 and report["n_samples"] == 24
    assert summary_line(report).startswith("CD-S=0.0000")


def test_model_evaluation_is_idempotent_and_consistent():
    samples = eval_samples_for("torus-0000", "torus", synth_shape("torus", 0, SPEC.gt_points), SPEC)[:6]
    predict = model_predictor(PoinTr(tiny_config(), seed=1))
    a, b = evaluate(predict, samples), evaluate(predict, samples)
    assert json.dumps(a) == json.dumps(b)
    s = a["summary"]
    assert abs(s["cd_avg"] - np.mean([s["cd_s"], s["cd_m"], s["cd_h"]])) < 1e-9
    assert all(t["fidelity"] == 0.0 for t in a["tiers"].values())
    with pytest.raises(ValueError):
        evaluate(predict, [])


def test_log_roundtrip(tmp_path):
    recs = [{"step": 0, "j": 1.5}, {"step": 1, "j": 0.5}]
    write_log(recs[:1], tmp_path / "log.jsonl")
    write_log(recs[1:], tmp_path / "log.jsonl", append=True)
    assert read_log(tmp_path / "log.jsonl") == recs
