import numpy as np
import pytest
from hypothesis import given, strategies as st

from rtf_forge import dataset as ds
from rtf_forge.errors import ContractError, DataError, FormatError, GeometryError
from rtf_forge.evaluate import mae_per_freq
from rtf_forge.room_sim import MicArray, RoomSpec
from rtf_forge.rtf import blocks, check_unit_ipd, free_field_rtf_batch, rtf_to_features
from rtf_forge.signal import bin_frequencies

MICS = MicArray.pair((2.0, 1.0, 1.4))
ROOM = RoomSpec.from_rt60((4.0, 6.0, 3.0), 0.2)
ANECHOIC = RoomSpec.from_rt60((4.0, 6.0, 3.0), 0.0)


def _small(room=ROOM, measurement=None, seed=0, extent=(0.1, 0.1, 0.05)):
    grid = ds.build_grid((1.8, 2.5, 1.2), extent, 0.05, room)
    return ds.generate_dataset(room, MICS, grid, measurement, seed, 1024, workers=1)


def test_grid_counts_and_ordering():
    grid = ds.build_grid((1.0, 1.0, 1.0), (0.1, 0.1, 0.05), 0.05)
    assert grid.counts == (3, 3, 2) and len(grid) == 18
    p = grid.positions()
    assert np.allclose(p[1] - p[0], [0, 0, 0.05])
    assert len(ds.build_grid((1.0, 1.0, 1.0), (0.01, 0.01, 0.01), 0.05)) == 1


def test_desk_grid_size():
    grid = ds.build_grid((1.5, 2.0, 1.0), (1.0, 1.0, 0.5), 0.05, ROOM)
    assert grid.counts == (21, 21, 11) and len(grid) == 4851


def test_grid_errors():
    with pytest.raises(GeometryError):
        ds.build_grid((1.0, 1.0, 1.0), (0.1, 0.1, 0.1), 0.0)
    with pytest.raises(GeometryError, match="clearance"):
        ds.build_grid((3.5, 1.0, 1.0), (0.5, 0.1, 0.1), 0.05, ROOM)


def test_anechoic_rows_match_free_field():
    d = _small(ANECHOIC)
    ff = rtf_to_features(free_field_rtf_batch(d.poses.astype(float), MICS))[0]
    low = bin_frequencies(16000.0) < 343.0 / (2 * 0.18)
    ild_d, ild_f = blocks(d.targets.astype(float))[0], blocks(ff)[0]
    assert np.max(np.abs(ild_d - ild_f)[:, low]) < 0.1
    rep = mae_per_freq(d.targets, ff)
    assert np.mean(np.asarray(rep.ipd_mae)[low]) < 0.02


def test_generation_is_deterministic_and_worker_independent(tmp_path):
    m = ds.Measurement(mode="noise_excited", duration=0.25, snr_db=20.0)
    grid = ds.build_grid((1.8, 2.5, 1.2), (0.05, 0.05, 0.05), 0.05, ROOM)
    a = ds.generate_dataset(ROOM, MICS, grid, m, 7, 1024, workers=1)
    b = ds.generate_dataset(ROOM, MICS, grid, m, 7, 1024, workers=2)
    np.testing.assert_array_equal(a.targets, b.targets)
    ds.save(a, tmp_path / "a.rtfd")
    ds.save(b, tmp_path / "b.rtfd")
    assert (tmp_path / "a.rtfd").read_bytes() == (tmp_path / "b.rtfd").read_bytes()
    c = ds.generate_dataset(ROOM, MICS, grid, m, 8, 1024, workers=1)
    assert not np.array_equal(a.targets, c.targets)


def _noisy_vs_exact(room):
    exact = _small(room, extent=(0.05, 0.05, 0.05))
    m = ds.Measurement(mode="noise_excited", duration=1.0)
    noisy = _small(room, measurement=m, extent=(0.05, 0.05, 0.05))
    return mae_per_freq(noisy.targets, exact.targets).ild_mae_mean


def test_noise_excited_without_snr_is_close_to_analytic():
    assert _noisy_vs_exact(ANECHOIC) < 1.5


@pytest.mark.xfail(strict=True, reason="Hann-1024 cross-spectral estimate smooths reverberant notches (~3 dB bias)")
def test_noise_excited_matches_analytic_in_reverberant_room():
    assert _noisy_vs_exact(ROOM) < 1.5


def test_geometry_error_names_the_pose():
    with pytest.raises(GeometryError, match="pose 1"):
        ds.generate_dataset(ROOM, MICS, np.array([[1.0, 1.0, 1.0], [5.0, 1.0, 1.0]]), seed=0, air_length=1024)


def test_rows_pass_unit_ipd():
    check_unit_ipd(_small().targets)


@pytest.mark.parametrize("n", [4, 8, 9, 15])
@pytest.mark.parametrize("rule", ["alternating", "random"])
def test_split_partition(n, rule):
    d = ds.DatasetFile({"n_rows": n}, np.arange(3 * n, dtype=np.float32).reshape(n, 3), np.zeros((n, 6), np.float32))
    parts = ds.split(d, rule, seed=3)
    rows = np.concatenate([p.poses[:, 0] for p in parts]) / 3
    assert sorted(rows.tolist()) == list(range(n))
    if n == 8 and rule == "alternating":
        assert [len(p) for p in parts] == [4, 2, 2]
        np.testing.assert_array_equal(parts[0].poses[:, 0] / 3, [0, 2, 4, 6])
    again = ds.split(d, rule, seed=3)
    for p, q in zip(parts, again):
        np.testing.assert_array_equal(p.poses, q.poses)


def test_split_needs_four_rows():
    d = ds.DatasetFile({}, np.zeros((3, 3)), np.zeros((3, 6)))
    with pytest.raises(DataError):
        ds.split(d)


def _lattice_file(counts):
    grid = ds.SamplingGrid((1.0, 1.0, 1.0), tuple(0.05 * (c - 1) for c in counts), 0.05)
    p = grid.positions()
    header = {"grid": grid.info().to_dict(), "n_rows": len(p)}
    return ds.DatasetFile(header, p.astype(np.float32), np.zeros((len(p), 6), np.float32))


def test_decimate_examples():
    d = _lattice_file((3, 3, 2))
    assert len(ds.decimate(d, 1)) == 18
    np.testing.assert_array_equal(ds.decimate(d, 1).poses, d.poses)
    half = ds.decimate(d, 2)
    assert len(half) == 4 and half.grid.spacing == pytest.approx(0.1)
    one = ds.decimate(d, 5)
    assert len(one) == 1 and np.allclose(one.poses[0], 1.0)
    with pytest.raises(ContractError):
        ds.decimate(ds.DatasetFile({}, d.poses, d.targets), 2)


@given(st.tuples(*[st.integers(1, 9)] * 3), st.integers(1, 3), st.integers(1, 3))
def test_decimate_composes(counts, a, b):
    d = _lattice_file(counts)
    np.testing.assert_array_equal(ds.decimate(d, a * b).poses, ds.decimate(ds.decimate(d, a), b).poses)


def test_save_load_round_trip_and_corruption(tmp_path):
    d = _small()
    path = tmp_path / "d.rtfd"
    ds.save(d, path)
    back = ds.load(path)
    np.testing.assert_array_equal(back.poses, d.poses)
    np.testing.assert_array_equal(back.targets, d.targets)
    assert back.header["grid"] == d.header["grid"]
    raw = path.read_bytes()
    assert raw[:4] == b"RTFD" and int.from_bytes(raw[4:8], "little") == 1
    (tmp_path / "t.rtfd").write_bytes(raw[:-5])
    with pytest.raises(FormatError, match="offset"):
        ds.load(tmp_path / "t.rtfd")
    (tmp_path / "m.rtfd").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(FormatError, match="RTFD"):
        ds.load(tmp_path / "m.rtfd")


def test_manifest(tmp_path):
    import json

    d = _small()
    parts = dict(zip(("train", "dev", "test"), ds.split(d)))
    m = ds.write_manifest(tmp_path / "manifest.json", parts, {"extra": 1})
    on_disk = json.loads((tmp_path / "manifest.json").read_text())
    assert on_disk == m
    assert sum(f["rows"] for f in m["files"].values()) == len(d)
    assert m["header"]["n_bins"] == 513 and m["extra"] == 1


def test_thread_cap(monkeypatch):
    monkeypatch.setenv("RTF_FORGE_THREADS", "1")
    assert ds.worker_count() == 1
