import os

import numpy as np
import pytest

from seqlpd import cloud, net
from seqlpd.errors import EmptyInput, FormatError, NormError, ShapeError

from oracles import quadruplet_oracle

SMALL = net.NetConfig(k_graph=4, vlad_clusters=6, point_mlp=(12, 16),
                      edge_mlp=(16, 24), post_mlp=(32,), tnet_mlp=(8, 12, 16),
                      tnet_fc=(12, 8), descriptor_dim=40)


def _submap(rng, n=64):
    return cloud.Submap(points=rng.uniform(-1, 1, size=(n, 3)), scale=1.0)


def _features(rng, n=64):
    f = rng.uniform(0.0, 1.0, size=(n, 4))
    return f.astype(np.float32)


def test_expected_shapes_chain_consistency():
    shapes = net.expected_shapes(SMALL)
    assert shapes["tin.out.w"] == (8, 9)
    assert shapes["tin.out.b"] == (9,)
    assert shapes["tfeat.out.w"] == (8, 16 * 16)
    assert shapes["point.0.w"] == (7, 12)
    assert shapes["edge.0.w"] == (32, 16)
    assert shapes["vlad.assign.w"] == (32, 6)
    assert shapes["vlad.centers"] == (6, 32)
    assert shapes["vlad.proj.w"] == (6 * 32, 40)
    assert shapes["vlad.proj.b"] == (40,)


def test_random_weights_validate_and_identity_bias():
    ws = net.random_weights(SMALL, seed=0)
    ws.validate(SMALL)
    np.testing.assert_array_equal(ws["tin.out.b"].reshape(3, 3), np.eye(3))
    np.testing.assert_array_equal(ws["tfeat.out.b"].reshape(16, 16), np.eye(16))
    w = ws["point.0.w"]
    assert w.dtype == np.float32
    assert np.abs(w).max() <= 0.05


def test_weightset_validation_errors():
    ws = net.random_weights(SMALL, seed=1)
    tensors = dict(ws.items())
    del tensors["edge.1.b"]
    with pytest.raises(ShapeError, match="edge.1.b"):
        net.WeightSet(tensors).validate(SMALL)
    tensors = dict(ws.items())
    tensors["point.0.w"] = np.zeros((3, 3), dtype=np.float32)
    with pytest.raises(ShapeError, match="point.0.w"):
        net.WeightSet(tensors).validate(SMALL)
    tensors = dict(ws.items())
    tensors["extra.w"] = np.zeros(2, dtype=np.float32)
    with pytest.raises(ShapeError, match="extra.w"):
        net.WeightSet(tensors).validate(SMALL)


def test_lpdw_round_trip(tmp_path):
    ws = net.random_weights(SMALL, seed=2)
    path = tmp_path / "w.lpdw"
    net.save_weights(ws, path)
    back = net.load_weights(path, SMALL)
    assert back.names() == ws.names()
    for name, tensor in ws.items():
        np.testing.assert_array_equal(back[name], tensor)
    # byte-exact on re-save
    path2 = tmp_path / "w2.lpdw"
    net.save_weights(back, path2)
    assert path.read_bytes() == path2.read_bytes()


def test_lpdw_corrupt_fixtures(tmp_path):
    ws = net.random_weights(SMALL, seed=3)
    path = tmp_path / "w.lpdw"
    net.save_weights(ws, path)
    blob = path.read_bytes()

    bad = tmp_path / "bad.lpdw"
    bad.write_bytes(b"XXXX" + blob[4:])
    with pytest.raises(FormatError, match="magic"):
        net.load_weights(bad)
    bad.write_bytes(blob[:4] + (2).to_bytes(4, "little") + blob[8:])
    with pytest.raises(FormatError, match="version"):
        net.load_weights(bad)
    bad.write_bytes(blob[:-5])
    with pytest.raises(FormatError, match="truncated"):
        net.load_weights(bad)
    bad.write_bytes(blob + b"\x00")
    with pytest.raises(FormatError, match="trailing"):
        net.load_weights(bad)


def test_input_transform_starts_near_identity():
    # with zero weights everywhere, the identity bias makes Texactly I
    shapes = net.expected_shapes(SMALL)
    tensors = {n: np.zeros(s, dtype=np.float32) for n, s in shapes.items()}
    tensors["tin.out.b"] = np.eye(3, dtype=np.float32).ravel()
    tensors["tfeat.out.b"] = np.eye(16, dtype=np.float32).ravel()
    ws = net.WeightSet(tensors)
    rng = np.random.default_rng(4)
    t = net.input_transform(rng.normal(size=(10, 3)), ws, SMALL)
    np.testing.assert_array_equal(t, np.eye(3, dtype=np.float32))
    tf = net.feature_transform(rng.normal(size=(10, 16)).astype(np.float32), ws, SMALL)
    np.testing.assert_array_equal(tf, np.eye(16, dtype=np.float32))


def test_transform_rejects_empty():
    ws = net.random_weights(SMALL, seed=5)
    with pytest.raises(EmptyInput):
        net.input_transform(np.zeros((0, 3)), ws, SMALL)


def test_graph_aggregate_shapes_and_single_point():
    ws = net.random_weights(SMALL, seed=6)
    rng = np.random.default_rng(6)
    feats = rng.normal(size=(30, 16)).astype(np.float32)
    out = net.graph_aggregate(feats, SMALL.k_graph, ws, SMALL)
    assert out.shape == (30, 24)
    single = net.graph_aggregate(feats[:1], SMALL.k_graph, ws, SMALL)
    assert single.shape == (1, 24)


def test_netvlad_unit_norm_and_dtype():
    ws = net.random_weights(SMALL, seed=7)
    rng = np.random.default_rng(7)
    feats = rng.normal(size=(50, 32)).astype(np.float32)
    d = net.netvlad(feats, ws, SMALL)
    assert d.dtype == np.float32
    assert d.shape == (40,)
    assert np.linalg.norm(d.astype(np.float64)) == pytest.approx(1.0, abs=1e-5)


def test_netvlad_zero_projection_guard():
    shapes = net.expected_shapes(SMALL)
    tensors = {n: np.zeros(s, dtype=np.float32) for n, s in shapes.items()}
    ws = net.WeightSet(tensors)
    with pytest.raises(NormError):
        net.netvlad(np.zeros((5, 32), dtype=np.float32), ws, SMALL)


def test_describe_shape_checks():
    ws = net.random_weights(SMALL, seed=8)
    rng = np.random.default_rng(8)
    sub = _submap(rng, 20)
    with pytest.raises(ShapeError):
        net.describe(sub, _features(rng, 19), ws, SMALL)
    with pytest.raises(ShapeError):
        net.describe(sub, rng.normal(size=(20, 3)), ws, SMALL)


def test_describe_permutation_invariance():
    rng = np.random.default_rng(9)
    ws = net.random_weights(SMALL, seed=9)
    sub = _submap(rng, 80)
    lf = _features(rng, 80)
    d0 = net.describe(sub, lf, ws, SMALL)
    perm = rng.permutation(80)
    d1 = net.describe(cloud.Submap(points=sub.points[perm], scale=1.0), lf[perm], ws, SMALL)
    assert np.abs(d0.astype(np.float64) - d1.astype(np.float64)).max() < 1e-6


def test_describe_default_config_dimensions():
    rng = np.random.default_rng(10)
    ws = net.random_weights(net.NetConfig(), seed=10)
    sub = _submap(rng, 4096)
    lf = _features(rng, 4096)
    d = net.describe(sub, lf, ws)
    assert d.shape == (256,)
    assert np.linalg.norm(d.astype(np.float64)) == pytest.approx(1.0, abs=1e-5)


def test_describe_many_matches_scalar_and_threads(monkeypatch):
    rng = np.random.default_rng(11)
    ws = net.random_weights(SMALL, seed=11)
    items = [(_submap(rng, 40), _features(rng, 40)) for _ in range(6)]
    monkeypatch.setenv("SEQLPD_THREADS", "1")
    one = net.describe_many(items, ws, SMALL)
    monkeypatch.setenv("SEQLPD_THREADS", "4")
    four = net.describe_many(items, ws, SMALL)
    scalar = [net.describe(s, f, ws, SMALL) for s, f in items]
    for a, b, c in zip(one, four, scalar):
        np.testing.assert_array_equal(a, b)
        np.testing.assert_array_equal(a, c)


def test_baseline_descriptor_properties():
    rng = np.random.default_rng(12)
    sub = _submap(rng, 500)
    lf = _features(rng, 500)
    d = net.baseline_descriptor(sub, lf)
    assert d.shape == (256,)
    assert d.dtype == np.float32
    assert np.linalg.norm(d.astype(np.float64)) == pytest.approx(1.0, abs=1e-6)
    perm = rng.permutation(500)
    d2 = net.baseline_descriptor(cloud.Submap(points=sub.points[perm], scale=1.0),
                                 lf[perm])
    np.testing.assert_array_equal(d, d2)


def test_baseline_separates_different_scenes():
    rng = np.random.default_rng(13)
    a = _submap(rng, 400)
    fa = _features(rng, 400)
    b = _submap(rng, 400)
    fb = _features(rng, 400)
    da = net.baseline_descriptor(a, fa).astype(np.float64)
    db = net.baseline_descriptor(b, fb).astype(np.float64)
    same = net.baseline_descriptor(a, fa).astype(np.float64)
    assert np.linalg.norm(da - same) == 0.0
    assert np.linalg.norm(da - db) > 1e-3


def test_lazy_quadruplet_matches_oracle():
    rng = np.random.default_rng(14)
    for _ in range(50):
        a = rng.normal(size=8)
        pos = rng.normal(size=(2, 8))
        neg = rng.normal(size=(18, 8))
        star = rng.normal(size=8)
        got = net.lazy_quadruplet_loss(a, pos, neg, star, alpha=0.5, beta=0.2)
        want = quadruplet_oracle(a, pos, neg, star, 0.5, 0.2)
        assert got == pytest.approx(want, abs=1e-7)


def test_lazy_quadruplet_zero_when_margins_satisfied():
    a = np.zeros(4)
    pos = np.full((2, 4), 0.01)
    neg = np.zeros((3, 4))
    neg[:, 0] = [10.0, 11.0, 12.0]
    star = np.full(4, -10.0)
    assert net.lazy_quadruplet_loss(a, pos, neg, star, alpha=0.5, beta=0.2) == 0.0


def test_lazy_quadruplet_requires_examples():
    with pytest.raises(EmptyInput):
        net.lazy_quadruplet_loss(np.zeros(3), np.zeros((0, 3)), np.ones((1, 3)),
                                 np.zeros(3))
    with pytest.raises(EmptyInput):
        net.lazy_quadruplet_loss(np.zeros(3), np.ones((1, 3)), np.zeros((0, 3)),
                                 np.zeros(3))
