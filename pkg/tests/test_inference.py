import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from neoseize import inference as I
from neoseize import io
from neoseize import model as M
from neoseize.preprocessing import Recording, events_to_mask


def constant_model(bias):
    base = M.build(M.VARIANTS["nano"], seed=0)
    return base.replace({"head.weight": np.zeros_like(base["head.weight"]), "head.bias": np.array([bias])})


def noise_recording(seconds, channels=2, seed=0):
    rng = np.random.default_rng(seed)
    data = rng.normal(scale=20, size=(channels, seconds * 64))
    return Recording("r", [f"c{i}" for i in range(channels)], 64, data)


def test_window_count_example():
    assert I.window_count(60 * 64) == 177
    assert I.window_count(16 * 64) == 1
    assert I.window_count(16 * 64 - 1) == 0


@settings(max_examples=300, deadline=None)
@given(st.integers(1024, 64 * 3600))
def test_window_count_formula(n):
    t = n / 64
    assert I.window_count(n) == math.floor((t - 16) / 0.25) + 1
    starts = np.arange(0, n - 1024 + 1, 16)
    assert len(starts) == I.window_count(n)


def test_constant_model_gives_constant_trace():
    rec = noise_recording(20)
    trace = I.sliding_predict(constant_model(0.7), rec)
    expected = 1 / (1 + math.exp(-0.7))
    assert trace.probability.shape == (2, 20 * 4)
    assert np.allclose(trace.probability, expected, atol=1e-15)
    assert trace.valid.all()


def test_short_recording_gives_empty_trace():
    trace = I.sliding_predict(constant_model(0.0), noise_recording(15))
    assert trace.probability.shape == (2, 0)
    assert trace.probability_1hz().shape == (2, 0)
    assert I.globalize(trace.probability_1hz()) == []


def test_artifact_windows_are_zero_and_flagged():
    rec = noise_recording(40)
    rec.data[1, 20 * 64 : 22 * 64] = 0.0
    trace = I.sliding_predict(constant_model(2.0), rec)
    assert trace.valid[0].all()
    bad = ~trace.valid[1]
    assert bad.any() and not bad.all()
    assert (trace.probability[1, bad] == 0).all()
    assert (trace.probability[1, ~bad] > 0.8).all()


def test_sliding_predict_matches_direct_forward():
    rec = noise_recording(18, channels=1, seed=3)
    params = M.build(M.VARIANTS["nano"], seed=4)
    trace = I.sliding_predict(params, rec)
    for j in range(I.window_count(rec.n_samples)):
        direct = M.forward(params, rec.data[0, 16 * j : 16 * j + 1024])
        assert trace.probability[0, min(j + 32, trace.probability.shape[1] - 1)] == pytest.approx(direct, abs=1e-12)


def test_edge_hold_mapping():
    k, n_samples = 10, (16 + 9 * 0.25) * 64
    tr = I.PredictionTrace.from_windows("x", ["a"], np.arange(k)[None] / 10, np.ones((1, k)), int(n_samples))
    expected = np.clip(np.arange(int(n_samples) // 16) - 32, 0, k - 1) / 10
    assert np.array_equal(tr.probability[0], expected)
    # the window starting at 0 is centred on t = 8 s, i.e. trace index 32
    assert tr.probability[0, 32] == 0.0 and tr.probability[0, 33] == 0.1


def test_trace_rejects_out_of_range():
    with pytest.raises(ValueError):
        I.PredictionTrace("x", ["a"], np.array([[1.5]]), np.array([[True]]))


# --- smoothing ---


def test_smooth_constant_and_idempotent():
    x = np.full(500, 0.7)
    assert np.allclose(I.smooth(x), 0.7, atol=1e-15)
    assert np.allclose(I.smooth(I.smooth(x)), 0.7, atol=1e-15)
    assert I.smooth(np.zeros(0)).shape == (0,)


def test_smooth_impulse_plateau():
    x = np.zeros(600)
    x[300] = 1.0
    y = I.smooth(x)
    nz = np.flatnonzero(y > 1e-15)
    assert len(nz) == 128
    assert np.allclose(y[nz], 1 / 128, atol=1e-15)


def test_smooth_matches_direct_window_mean():
    rng = np.random.default_rng(5)
    x = rng.random((3, 300))
    y = I.smooth(x)
    for i in range(300):
        window = x[:, max(0, i - 64) : min(300, i + 64)]
        assert np.allclose(y[:, i], window.mean(axis=1), atol=1e-12)


# --- decisions ---


def test_threshold_is_inclusive():
    assert I.binarize(np.array([[0.4999, 0.5, 0.2]]), ["a"]) == {"a": [(1.0, 2.0)]}


def test_global_takes_channel_max():
    p = np.array([[0.2], [0.9], [0.1]])
    assert I.globalize(p) == [(0.0, 1.0)]
    assert I.globalize(np.full((3, 10), 0.3)) == []
    assert I.binarize(np.full((2, 5), 0.3), ["a", "b"]) == {"a": [], "b": []}


def test_or_of_channel_masks_equals_max_threshold():
    rng = np.random.default_rng(6)
    for _ in range(200):
        p = rng.random((int(rng.integers(1, 6)), 50))
        per = I.binarize(p, [f"c{i}" for i in range(len(p))])
        union = np.zeros(50, bool)
        for evs in per.values():
            union |= events_to_mask(evs, 50).astype(bool)
        assert np.array_equal(union, events_to_mask(I.globalize(p), 50).astype(bool))


def test_raising_a_value_never_removes_detection():
    rng = np.random.default_rng(7)
    for _ in range(100):
        prob = rng.random((3, 400)) * 0.9
        tr = I.PredictionTrace("x", ["a", "b", "c"], prob, np.ones_like(prob, bool))
        before = tr.global_mask()
        c, i = int(rng.integers(3)), int(rng.integers(400))
        raised = prob.copy()
        raised[c, i] = min(1.0, raised[c, i] + rng.random())
        after = I.PredictionTrace("x", ["a", "b", "c"], raised, tr.valid).global_mask()
        assert (after >= before).all()


def test_global_mask_is_or_of_channel_masks():
    rng = np.random.default_rng(8)
    prob = rng.random((4, 1200))
    tr = I.PredictionTrace("x", list("abcd"), prob, np.ones_like(prob, bool))
    assert np.array_equal(tr.global_mask(), tr.masks().max(axis=0))
    assert tr.probability_1hz().shape == (4, 300)


def test_prediction_csv_round_trip(tmp_path):
    rng = np.random.default_rng(9)
    prob = rng.random((2, 40))
    valid = rng.random((2, 40)) > 0.2
    tr = I.PredictionTrace("x", ["Fp1-C3", "C3-O1"], prob, valid)
    io.write_prediction_csv(tr, tmp_path / "p.csv")
    names, p, v = io.read_prediction_csv(tmp_path / "p.csv")
    assert names == ["Fp1-C3", "C3-O1"]
    assert np.allclose(p, prob, rtol=1e-8) and np.array_equal(v, valid)
    header = (tmp_path / "p.csv").read_text().splitlines()[0]
    assert header == "channel,t_s,probability,valid"
