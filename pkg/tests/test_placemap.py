import numpy as np
import pytest

from seqlpd import placemap
from seqlpd.cloud import Pose
from seqlpd.errors import DimensionError, FormatError, IoError, NormError, OrderError

from oracles import random_unit


def _entry(fid, desc, pose=None):
    return placemap.PlaceEntry(fid, pose or Pose(float(fid), 0.0, 0.0, fid), desc)


def _unit(dim=256, seed=0):
    rng = np.random.default_rng(seed)
    return random_unit(rng, 1, dim)[0]


def test_insert_in_order():
    pm = placemap.PlaceMap()
    for fid in (0, 1, 2):
        pm.insert(_entry(fid, _unit(seed=fid)))
    assert len(pm) == 3
    np.testing.assert_array_equal(pm.frame_ids(), [0, 1, 2])
    assert pm.dim == 256


def test_insert_rejects_non_increasing_ids():
    pm = placemap.PlaceMap()
    pm.insert(_entry(1, _unit()))
    with pytest.raises(OrderError):
        pm.insert(_entry(1, _unit()))
    with pytest.raises(OrderError):
        pm.insert(_entry(0, _unit()))


def test_insert_rejects_bad_norm():
    pm = placemap.PlaceMap()
    with pytest.raises(NormError):
        pm.insert(_entry(0, 0.5 * _unit()))


def test_insert_rejects_dim_change():
    pm = placemap.PlaceMap()
    pm.insert(_entry(0, _unit(dim=16)))
    with pytest.raises(DimensionError):
        pm.insert(_entry(1, _unit(dim=32)))


def test_l2_basic_properties():
    d = _unit()
    assert placemap.l2(d, d) == 0.0
    e1 = np.zeros(4)
    e1[0] = 1.0
    e2 = np.zeros(4)
    e2[1] = 1.0
    assert placemap.l2(e1, e2) == pytest.approx(np.sqrt(2.0), rel=1e-12)
    with pytest.raises(DimensionError):
        placemap.l2(np.zeros(3), np.zeros(4))


def test_l2_unit_vectors_bounded_and_triangle():
    rng = np.random.default_rng(1)
    descs = random_unit(rng, 30, 64)
    for _ in range(200):
        i, j, k = rng.integers(0, 30, size=3)
        dij = placemap.l2(descs[i], descs[j])
        assert 0.0 <= dij <= 2.0 + 1e-12
        assert dij <= placemap.l2(descs[i], descs[k]) + placemap.l2(descs[k], descs[j]) + 1e-6
        assert dij == pytest.approx(placemap.l2(descs[j], descs[i]), abs=0.0)


def test_lpdm_round_trip_exact(tmp_path):
    rng = np.random.default_rng(2)
    pm = placemap.PlaceMap()
    descs = random_unit(rng, 40, 256)
    for i in range(40):
        pose = Pose(*rng.normal(size=3), i * 2)
        pm.insert(placemap.PlaceEntry(i * 2, pose, descs[i]))
    path = tmp_path / "map.lpdm"
    placemap.save(pm, path)
    back = placemap.load(path)
    assert len(back) == len(pm)
    for a, b in zip(pm, back):
        assert a.frame_id == b.frame_id
        assert (a.pose.x, a.pose.y, a.pose.z) == (b.pose.x, b.pose.y, b.pose.z)
        np.testing.assert_array_equal(a.descriptor, b.descriptor)
    path2 = tmp_path / "map2.lpdm"
    placemap.save(back, path2)
    assert path.read_bytes() == path2.read_bytes()


def test_lpdm_empty_map_round_trip(tmp_path):
    pm = placemap.PlaceMap()
    path = tmp_path / "empty.lpdm"
    placemap.save(pm, path)
    assert len(placemap.load(path)) == 0


def test_lpdm_corrupt_fixtures(tmp_path):
    pm = placemap.PlaceMap()
    pm.insert(_entry(0, _unit()))
    path = tmp_path / "map.lpdm"
    placemap.save(pm, path)
    blob = path.read_bytes()

    bad = tmp_path / "bad.lpdm"
    bad.write_bytes(b"NOPE" + blob[4:])
    with pytest.raises(FormatError, match="magic"):
        placemap.load(bad)
    bad.write_bytes(blob[:4] + (2).to_bytes(4, "little") + blob[8:])
    with pytest.raises(FormatError, match="unsupported version"):
        placemap.load(bad)
    bad.write_bytes(blob[:-3])
    with pytest.raises(FormatError, match="truncated"):
        placemap.load(bad)
    bad.write_bytes(blob + b"\x99")
    with pytest.raises(FormatError, match="trailing"):
        placemap.load(bad)


def test_lpdm_missing_file(tmp_path):
    with pytest.raises(IoError):
        placemap.load(tmp_path / "absent.lpdm")
