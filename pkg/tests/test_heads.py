import numpy as np
import pytest

from sao import diffcore as dc
from sao import geom, heads
from sao.checks import SMALL_ENCODER
from sao.diffcore import ParameterStore, Tensor
from sao.encoder import encode, init_encoder
from sao.protein import N_AA
from sao.synth import synth_protein

D_M = 8


def store64(arrays):
    with dc.precision(np.float64):
        return ParameterStore(arrays)


def test_project_predict_shapes_and_determinism():
    rng = np.random.default_rng(0)
    arr = heads.init_projector(D_M, rng)
    arr.update(heads.init_predictor(rng))
    params = store64(arr)
    zero = Tensor(np.zeros(D_M))
    z1, q1 = heads.project_predict(params, zero)
    z2, q2 = heads.project_predict(params, zero)
    assert z1.shape == q1.shape == (64,)
    np.testing.assert_array_equal(z1.data, z2.data)
    np.testing.assert_array_equal(q1.data, q2.data)
    # zero input propagates only the biases
    h = params["projector/l1/b"].data
    want = dc.gelu(Tensor(h)).data @ params["projector/l2/w"].data + params["projector/l2/b"].data
    np.testing.assert_allclose(z1.data, want, atol=1e-12)


def test_project_shape_mismatch():
    params = store64(heads.init_projector(D_M, np.random.default_rng(0)))
    with pytest.raises(dc.ShapeMismatch):
        heads.project(params, Tensor(np.zeros(D_M + 1)))


def test_project_predict_grad_check():
    rng = np.random.default_rng(1)
    arr = heads.init_projector(D_M, rng)
    arr.update(heads.init_predictor(rng))
    paths = sorted(arr)
    x = rng.normal(size=D_M)
    w = rng.normal(size=64)

    def f(pooled, *ts):
        z, q = heads.project_predict(dict(zip(paths, ts)), pooled)
        return dc.add(dc.reduce_sum(dc.mul(q, w)), dc.reduce_sum(dc.square(z)))

    assert dc.grad_check(f, [x] + [arr[k] for k in paths]) < 1e-4


def test_mlm_head():
    rng = np.random.default_rng(2)
    arr = heads.init_mlm(D_M, rng)
    nodes = rng.normal(size=(5, D_M))
    params = store64(arr)
    assert heads.mlm_logits(params, Tensor(nodes)).shape == (5, N_AA)
    zero = store64({k: np.zeros_like(v) for k, v in arr.items()})
    probs = dc.softmax(heads.mlm_logits(zero, Tensor(nodes))).data
    np.testing.assert_allclose(probs, 1.0 / 21)
    paths = sorted(arr)
    w = rng.normal(size=(5, N_AA))
    f = lambda n, *ts: dc.reduce_sum(dc.mul(heads.mlm_logits(dict(zip(paths, ts)), n), w))  # noqa: E731
    assert dc.grad_check(f, [nodes] + [arr[k] for k in paths]) < 1e-4


def test_downstream_head():
    rng = np.random.default_rng(3)
    arr = heads.init_downstream(D_M, 8, rng)
    params = store64(arr)
    x = Tensor(rng.normal(size=D_M))
    a, b = heads.downstream_logits(params, x), heads.downstream_logits(params, x)
    assert a.shape == (8,)
    np.testing.assert_array_equal(a.data, b.data)
    paths = sorted(arr)
    w = rng.normal(size=8)
    f = lambda p, *ts: dc.reduce_sum(dc.mul(heads.downstream_logits(dict(zip(paths, ts)), p), w))  # noqa: E731
    assert dc.grad_check(f, [x.data] + [arr[k] for k in paths]) < 1e-4


def test_zero_denoise_head_is_identity():
    p = synth_protein(12, 4)
    arr = {k: np.zeros_like(v) for k, v in heads.init_denoise(D_M, np.random.default_rng(0)).items()}
    out = heads.denoise_update(store64(arr), Tensor(np.random.default_rng(1).normal(size=(12, D_M))), p.frames)
    assert np.array_equal(out.translation.data, p.frames.translation)
    np.testing.assert_allclose(out.rotation.data, p.frames.rotation, atol=1e-12)
    np.testing.assert_allclose(out.atoms.data, geom.backbone_from_frame(p.frames), atol=1e-12)


def test_denoise_matches_manual_composition():
    # recompute each residue's update with plain numpy frame arithmetic
    rng = np.random.default_rng(5)
    p = synth_protein(4, 6)
    arr = heads.init_denoise(D_M, rng)
    nodes = rng.normal(size=(4, D_M))
    out = heads.denoise_update(store64(arr), Tensor(nodes), p.frames)
    hidden = dc.gelu(Tensor(nodes @ arr["denoise/l1/w"] + arr["denoise/l1/b"])).data
    raw = hidden @ arr["denoise/l2/w"] + arr["denoise/l2/b"]
    for i in range(4):
        f_i = p.frames[i]
        step = geom.Frame(geom.rotation_from_so3(raw[i, :3]), np.zeros(3))
        rot = f_i.compose(step).rotation
        trans = f_i.translation + f_i.rotation @ raw[i, 3:]
        np.testing.assert_allclose(out.rotation.data[i], rot, atol=1e-12)
        np.testing.assert_allclose(out.translation.data[i], trans, atol=1e-12)
        np.testing.assert_allclose(out.atoms.data[i], geom.backbone_from_frame(geom.Frame(rot, trans)), atol=1e-12)


def test_denoise_equivariance_through_encoder():
    cfg = SMALL_ENCODER
    rng = np.random.default_rng(7)
    arr = init_encoder(cfg, rng)
    arr.update(heads.init_denoise(cfg.d_m, rng))
    params = ParameterStore(arr)
    p = synth_protein(20, 8)
    base = heads.denoise_update(params, encode(params, p, cfg).nodes, p.frames)
    for _ in range(5):
        r, t = geom.random_rotation(rng), rng.normal(scale=10, size=3)
        q = p.transformed(r, t)
        moved = heads.denoise_update(params, encode(params, q, cfg).nodes, q.frames)
        want = base.atoms.data.astype(np.float64) @ r.T + t
        np.testing.assert_allclose(moved.atoms.data, want, atol=1e-5)
        np.testing.assert_allclose(moved.rotation.data, r @ base.rotation.data, atol=1e-5)


def test_place_backbone_matches_numpy():
    rng = np.random.default_rng(9)
    rots = np.stack([geom.random_rotation(rng) for _ in range(3)])
    trans = rng.normal(size=(3, 3))
    with dc.precision(np.float64):
        atoms = heads.place_backbone(Tensor(rots), Tensor(trans)).data
    np.testing.assert_allclose(atoms, geom.backbone_from_frame(geom.Frame(rots, trans)), atol=1e-12)
