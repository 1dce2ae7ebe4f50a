import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from rtf_forge.errors import DataError, DegenerateError
from rtf_forge.evaluate import (
    aliasing_frequency,
    export_curve,
    mae_per_freq,
    measurement_error_experiment,
    read_curve,
    write_report,
)
from rtf_forge.room_sim import MicArray, RoomSpec
from rtf_forge.rtf import rtf_to_features

N_BINS = 513


def _features(ild, phase):
    ild = np.atleast_2d(ild)
    phase = np.atleast_2d(phase)
    return np.concatenate([ild, np.sin(phase), np.cos(phase)], axis=1)


def test_identity_gives_zero():
    rng = np.random.default_rng(0)
    x = _features(rng.normal(size=(5, 4)), rng.uniform(-3, 3, (5, 4)))
    rep = mae_per_freq(x, x)
    assert rep.ild_mae_mean == 0 and rep.ipd_mae_mean == 0
    assert max(rep.ild_ci + rep.ipd_ci) == 0


def test_hand_example_two_samples():
    preds = _features([[1.0], [3.0]], [[0.0], [0.0]])
    targets = _features([[0.0], [0.0]], [[0.0], [0.0]])
    rep = mae_per_freq(preds, targets)
    assert rep.ild_mae == [2.0]
    assert rep.ild_ci[0] == pytest.approx(1.96, abs=1e-12)


def test_hand_example_wrapped_phase():
    preds = _features([[0.0], [0.0]], [[3.1], [3.1]])
    targets = _features([[0.0], [0.0]], [[-3.1], [-3.1]])
    # |3.1 - (-3.1)| wraps to 2 pi - 6.2
    assert mae_per_freq(preds, targets).ipd_mae[0] == pytest.approx(2 * np.pi - 6.2, abs=1e-12)
    assert 2 * np.pi - 6.2 == pytest.approx(0.08319, abs=1e-5)


def test_needs_two_samples_and_matching_shapes():
    x = _features([[0.0]], [[0.0]])
    with pytest.raises(DataError):
        mae_per_freq(x, x)
    with pytest.raises(DataError):
        mae_per_freq(np.zeros((2, 6)), np.zeros((2, 9)))


@given(st.integers(2, 12), st.integers(1, 6), st.integers(0, 2**31), st.floats(0.1, 10))
def test_metric_properties(n, bins, seed, scale):
    rng = np.random.default_rng(seed)
    a = _features(rng.normal(size=(n, bins)), rng.uniform(-4, 4, (n, bins)))
    b = _features(rng.normal(size=(n, bins)), rng.uniform(-4, 4, (n, bins)))
    r = mae_per_freq(a, b)
    s = mae_per_freq(b, a)
    np.testing.assert_allclose(r.ild_mae, s.ild_mae)
    np.testing.assert_allclose(r.ipd_mae, s.ipd_mae, atol=1e-12)
    perm = rng.permutation(n)
    np.testing.assert_allclose(mae_per_freq(a[perm], b[perm]).ild_mae, r.ild_mae)
    assert max(r.ipd_mae) <= np.pi + 1e-12
    assert min(r.ild_ci + r.ipd_ci) >= 0
    a2 = a.copy()
    a2[:, :bins] = b[:, :bins] + scale * (a[:, :bins] - b[:, :bins])
    q = mae_per_freq(a2, b)
    np.testing.assert_allclose(q.ild_mae, scale * np.asarray(r.ild_mae), rtol=1e-9)
    np.testing.assert_allclose(q.ild_ci, scale * np.asarray(r.ild_ci), rtol=1e-9)


@pytest.mark.parametrize(
    "d, expected", [(0.18, 952.7778), (343.0 / 2, 1.0), (0.0858 * 343 / 343.2, 2000.0)]
)
def test_aliasing_frequency(d, expected):
    assert aliasing_frequency(d, 343.0) == pytest.approx(expected, rel=1e-6)


def test_aliasing_quarter_wavelength_example():
    assert aliasing_frequency(0.0858, 343.0) == pytest.approx(2000.0, rel=1e-3)
    with pytest.raises(DegenerateError):
        aliasing_frequency(0.0)


def test_curve_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    a = _features(rng.normal(size=(4, N_BINS)), rng.uniform(-3, 3, (4, N_BINS)))
    b = _features(rng.normal(size=(4, N_BINS)), rng.uniform(-3, 3, (4, N_BINS)))
    rep = mae_per_freq(a, b)
    fa = aliasing_frequency(0.18)
    path = tmp_path / "curve.csv"
    export_curve(rep, path, 16000.0, fa)
    lines = path.read_text().splitlines()
    assert len(lines) == N_BINS + 2 and lines[0].startswith("#")
    got_fa, cols = read_curve(path)
    assert got_fa == pytest.approx(fa, rel=1e-5)
    f = cols["freq_hz"]
    assert f[0] == 0 and f[-1] == 8000 and np.all(np.diff(f) > 0)
    for key in ("ild_mae", "ild_ci", "ipd_mae", "ipd_ci"):
        np.testing.assert_allclose(cols[key], getattr(rep, key), rtol=5e-6)


def test_report_json(tmp_path):
    x = _features(np.zeros((2, 3)), np.zeros((2, 3)))
    rep = mae_per_freq(x, x, {"regressor": "linear"})
    write_report(rep, tmp_path / "r.json")
    assert json.loads((tmp_path / "r.json").read_text()) == rep.to_dict()


def test_measurement_error_orders_by_duration():
    room = RoomSpec.from_rt60((4.0, 6.0, 3.0), 0.2)
    mics = MicArray.pair((2.0, 1.0, 1.4))
    pos = (1.75, 2.4, 1.2)
    short = measurement_error_experiment(room, mics, pos, 20, 1.0, 0, 1024)
    long = measurement_error_experiment(room, mics, pos, 20, 4.0, 0, 1024)
    assert short.ild_mae_mean > 0 and short.ipd_mae_mean > 0
    assert long.ild_mae_mean < short.ild_mae_mean and long.ipd_mae_mean < short.ipd_mae_mean
    exact = measurement_error_experiment(room, mics, pos, 3, 1.0, 0, 1024, mode="analytic")
    assert exact.ild_mae_mean == 0 and exact.ipd_mae_mean == 0
    with pytest.raises(DataError):
        measurement_error_experiment(room, mics, pos, 1)
