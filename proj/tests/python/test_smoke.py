"""Smoke tests for the native module (imported directly from the build dir)."""

import math

import numpy as np
import pytest

import _multibreath as mb


def test_resample_tone_roundtrip():
    rate = 8000
    t = np.arange(rate, dtype=np.float32) / rate
    tone = np.sin(2 * math.pi * 440.0 * t).astype(np.float32)
    up = np.asarray(mb.resample(tone.tolist(), rate, 16000), dtype=np.float32)
    assert len(up) == 2 * rate
    ref = np.sin(2 * math.pi * 440.0 * np.arange(2 * rate) / 16000)
    core = slice(200, -200)
    corr = np.dot(up[core], ref[core]) / (
        np.linalg.norm(up[core]) * np.linalg.norm(ref[core])
    )
    assert corr > 0.999


def test_log_mel_shape_and_floor():
    silent = [0.0] * 4000
    spec = mb.log_mel(silent, 8000)
    assert spec.shape == (64, 256)
    assert np.allclose(spec, math.log(1e-10))

    tone = np.sin(2 * math.pi * 400.0 * np.arange(8000) / 8000.0)
    spec = mb.log_mel(tone.astype(np.float32).tolist(), 8000)
    assert spec.shape == (64, 256)
    assert spec.max() > math.log(1e-10)


def test_icbhi_metrics():
    truth = [(0, 0), (1, 0), (0, 1), (1, 1)]
    r = mb.icbhi_metrics(truth, truth)
    assert r.specificity == 1.0
    assert r.sensitivity == 1.0
    assert r.score == 1.0

    all_normal = [(0, 0)] * 4
    r = mb.icbhi_metrics(truth, all_normal)
    assert r.specificity == 1.0
    assert r.sensitivity == 0.0
    assert r.score == 0.5
    assert "confusion_matrix" in repr(r)


def test_gradient_suite_small():
    results = mb.gradient_suite(seeds=2)
    assert results, "suite returned no checks"
    names = {name for name, _, _ in results}
    assert any("conv2d" in n for n in names)
    assert any("csra_head" in n for n in names)
    for name, err, ok in results:
        assert ok, f"{name} failed with max rel err {err}"


def test_model_checkpoint_roundtrip(tmp_path):
    pytest.importorskip("numpy")
    # model loading is exercised end to end by the native test-suite; here we
    # just confirm the error path surfaces as a Python exception
    with pytest.raises(Exception):
        mb.Model.load(str(tmp_path / "missing.bin"))
