import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sao import diffcore as dc
from sao import geom
from sao.diffcore import Tensor
from sao.losses import (
    DegenerateNorm,
    EmptyMaskSet,
    LengthMismatch,
    LossWeights,
    align_loss,
    bce_multilabel_loss,
    combine,
    fape_loss,
    mlm_loss,
)
from sao.synth import PerturbationConfig, perturb, synth_protein


@pytest.fixture(autouse=True)
def _float64():
    with dc.precision(np.float64):
        yield


def f64(x):
    return Tensor(np.asarray(x, dtype=np.float64))


def scalar(t):
    return float(t.data.reshape(-1)[0])


@pytest.mark.parametrize(
    "q, z, want",
    [([1.0, 2.0, 3.0], [1.0, 2.0, 3.0], 0.0), ([1.0, 0.0], [-1.0, 0.0], 4.0), ([1.0, 0.0], [0.0, 1.0], 2.0)],
)
def test_align_examples(q, z, want):
    assert scalar(align_loss(f64(q), f64(z))) == pytest.approx(want, abs=1e-12)


def test_align_degenerate():
    with pytest.raises(DegenerateNorm):
        align_loss(f64([0.0, 0.0]), f64([1.0, 0.0]))


vecs = st.lists(st.floats(-10, 10), min_size=4, max_size=4).map(np.array).filter(lambda v: np.linalg.norm(v) > 1e-3)


@settings(max_examples=100, deadline=None)
@given(vecs, vecs, st.floats(0.01, 100), st.floats(0.01, 100))
def test_align_cosine_form_and_scale_invariance(a, b, c, d):
    val = scalar(align_loss(f64(a), f64(b)))
    cos = a @ b / (np.linalg.norm(a) * np.linalg.norm(b))
    assert 0.0 <= val <= 4.0 + 1e-12
    assert val == pytest.approx(2 - 2 * cos, abs=1e-7)
    assert scalar(align_loss(f64(c * a), f64(d * b))) == pytest.approx(val, abs=1e-7)


def test_align_target_gets_no_gradient():
    q = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    z = Tensor(np.array([0.5, -1.0]), requires_grad=True)
    grads = dc.backward(align_loss(q, z))
    assert id(q) in grads
    assert id(z) not in grads


def test_mlm_uniform_and_confident():
    logits = f64(np.zeros((5, 21)))
    assert scalar(mlm_loss(logits, np.arange(5), [0, 3])) == pytest.approx(math.log(21), abs=1e-12)
    seq = np.array([3, 7, 1])
    sharp = np.zeros((3, 21))
    sharp[np.arange(3), seq] = 1000.0
    assert scalar(mlm_loss(f64(sharp), seq, [0, 1, 2])) == pytest.approx(0.0, abs=1e-9)


def test_mlm_hand_case():
    # two masked positions, three non-zero logits each, worked by hand
    logits = np.zeros((4, 21))
    logits[1, :3] = [2.0, 1.0, 0.0]
    logits[3, :3] = [0.0, 0.5, -1.0]
    seq = np.array([5, 0, 9, 2])
    z1 = math.exp(2) + math.exp(1) + 1 + 18
    z3 = 1 + math.exp(0.5) + math.exp(-1) + 18
    want = 0.5 * ((math.log(z1) - 2.0) + (math.log(z3) - (-1.0)))
    assert scalar(mlm_loss(f64(logits), seq, [1, 3])) == pytest.approx(want, abs=1e-12)
    assert scalar(mlm_loss(f64(logits), seq, [3, 1])) == pytest.approx(want, abs=1e-12)


def test_mlm_empty_mask():
    with pytest.raises(EmptyMaskSet):
        mlm_loss(f64(np.zeros((3, 21))), np.zeros(3, dtype=int), [])


def fape_of(pred, truth):
    pf, tf = pred.frames, truth.frames
    with dc.precision(np.float64):
        return scalar(fape_loss(f64(pf.rotation), f64(pf.translation), f64(pred.backbone),
                                tf.rotation, tf.translation, truth.backbone))


def test_fape_identical_and_global_motion():
    p = synth_protein(20, 1)
    # each term is sqrt(0 + 1e-8) = 1e-4 up to rounding
    assert fape_of(p, p) == pytest.approx(1e-4, rel=1e-9)
    rng = np.random.default_rng(0)
    q = p.transformed(geom.random_rotation(rng), rng.normal(size=3) * 30)
    assert fape_of(q, p) == pytest.approx(1e-4, rel=1e-3)


def test_fape_brute_force_two_residues():
    # identity frames at two sites, one atom displaced by 1 A along y
    std = geom.STANDARD_ATOMS
    rot = np.repeat(np.eye(3)[None], 2, axis=0)
    trans = np.array([[0.0, 0.0, 0.0], [3.8, 0.0, 0.0]])
    true_atoms = np.stack([std + trans[0], std + trans[1]])
    pred_atoms = true_atoms.copy()
    pred_atoms[1, 3] += [0.0, 1.0, 0.0]
    total = 0.0
    for i in range(2):
        for k in range(2):
            for j in range(4):
                d = (pred_atoms[k, j] - trans[i]) @ rot[i] - (true_atoms[k, j] - trans[i]) @ rot[i]
                total += math.sqrt(d @ d + 1e-8)
    want = total / 16
    with dc.precision(np.float64):
        got = scalar(fape_loss(f64(rot), f64(trans), f64(pred_atoms), rot, trans, true_atoms))
    assert got == want or got == pytest.approx(want, rel=1e-15)


def test_fape_brute_force_random():
    truth = synth_protein(5, 4)
    pred = perturb(truth, PerturbationConfig(1.0, 0.2, seed=2)).predicted
    pf, tf = pred.frames, truth.frames
    total = 0.0
    for i in range(5):
        for k in range(5):
            for j in range(4):
                a = pf.rotation[i].T @ (pred.backbone[k, j] - pf.translation[i])
                b = tf.rotation[i].T @ (truth.backbone[k, j] - tf.translation[i])
                total += math.sqrt(np.sum((a - b) ** 2) + 1e-8)
    assert fape_of(pred, truth) == pytest.approx(total / 100, rel=1e-12)


def test_fape_invariance_and_clamp():
    truth = synth_protein(15, 5)
    pred = perturb(truth, PerturbationConfig(2.0, 0.3, apply_global=False, seed=1)).predicted
    base = fape_of(pred, truth)
    rng = np.random.default_rng(1)
    moved = pred.transformed(geom.random_rotation(rng), rng.normal(size=3) * 10)
    assert fape_of(moved, truth) == pytest.approx(base, abs=1e-5)
    pf, tf = pred.frames, truth.frames
    with dc.precision(np.float64):
        clamped = scalar(fape_loss(f64(pf.rotation), f64(pf.translation), f64(pred.backbone),
                                   tf.rotation, tf.translation, truth.backbone, clamp=0.5))
    assert clamped <= 0.5 < base


def test_fape_length_mismatch():
    a, b = synth_protein(5, 0), synth_protein(6, 0)
    with pytest.raises(LengthMismatch):
        fape_of(a, b)


def test_bce_examples():
    assert scalar(bce_multilabel_loss(f64([0.0, 0.0, 0.0]), [1, 0, 1])) == pytest.approx(math.log(2), abs=1e-12)
    assert scalar(bce_multilabel_loss(f64([1000.0]), [1])) == pytest.approx(0.0, abs=1e-12)
    # hand case K=3
    x, y = [2.0, -1.0, 0.5], [1, 1, 0]
    want = (math.log1p(math.exp(-2.0)) + math.log1p(math.exp(1.0)) + math.log1p(math.exp(0.5))) / 3
    assert scalar(bce_multilabel_loss(f64(x), y)) == pytest.approx(want, abs=1e-12)
    with pytest.raises(LengthMismatch):
        bce_multilabel_loss(f64([0.0, 1.0]), [1, 0, 1])


def test_combine():
    parts = [f64(v) for v in (0.4, 1.2, 3.0, 2.5)]
    total, br = combine(*parts, LossWeights(0.5, 2.0, 0.1))
    want = 0.5 * (0.4 + 1.2) / 2 + 2.0 * 3.0 + 0.1 * 2.5
    assert scalar(total) == pytest.approx(want, abs=1e-12)
    assert br.total == pytest.approx(want)
    assert (br.align_pred, br.align_mask, br.mlm, br.mse) == pytest.approx((0.4, 1.2, 3.0, 2.5))
    zero, _ = combine(*parts, LossWeights(0.0, 0.0, 0.0))
    assert scalar(zero) == 0.0


def test_loss_weights_validation():
    with pytest.raises(ValueError):
        LossWeights(gamma_mlm=-1.0)
    with pytest.raises(ValueError):
        LossWeights(gamma_align=float("nan"))
