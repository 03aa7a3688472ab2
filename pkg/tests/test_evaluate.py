import json

import numpy as np
import pytest

from sao import diffcore as dc
from sao import evaluate, trainer
from sao.checks import SMALL_ENCODER
from sao.diffcore import Tensor
from sao.encoder import encode, residue_features
from sao.heads import downstream_logits
from sao.synth import PerturbationConfig, perturb, synth_protein
from sao.trainer import TrainConfig


def model(precision="float32", seed=0, k=4):
    cfg = TrainConfig(encoder=SMALL_ENCODER, precision=precision, seed=seed)
    return trainer.init_finetune_model(cfg, k)


def dataset(sigma_t, sigma_r, apply_global, n=6, k=4):
    rng = np.random.default_rng(1)
    out = []
    for i in range(n):
        pair = perturb(synth_protein(14, i), PerturbationConfig(sigma_t, sigma_r, apply_global, seed=50 + i))
        labels = (rng.random(k) < 0.5).astype(int)
        labels[i % k] = 1
        labels[(i + 1) % k] = 0
        out.append((pair, labels))
    return out


def test_zero_noise_gap_is_exactly_zero():
    rep = evaluate.performance_gap(model(), dataset(0.0, 0.0, False))
    assert rep.gap == {"fmax_gap": 0.0, "aupr_gap": 0.0}
    assert rep.n_proteins == 6


def test_rigid_motion_only_gap_is_zero():
    rep = evaluate.performance_gap(model(), dataset(0.0, 0.0, True))
    assert abs(rep.gap["fmax_gap"]) <= 1e-6
    assert abs(rep.gap["aupr_gap"]) <= 1e-6


def test_report_fields():
    rep = evaluate.performance_gap(model(), dataset(1.0, 0.2, True))
    for side in (rep.experimental, rep.predicted):
        assert 0.0 <= side["fmax"] <= 1.0 and 0.0 <= side["aupr"] <= 1.0
    assert rep.gap["fmax_gap"] == rep.predicted["fmax"] - rep.experimental["fmax"]
    json.dumps(rep.to_dict())
    with pytest.raises(evaluate.EmptyInput):
        evaluate.performance_gap(model(), [])


def test_embedding_bias(tmp_path):
    st = model()
    pairs = [p for p, _ in dataset(0.0, 0.0, True)]
    rep = evaluate.embedding_bias(st.online, pairs, SMALL_ENCODER, "rand", tmp_path / "emb.jsonl")
    assert max(rep.distances) <= 1e-5
    noisy = [p for p, _ in dataset(2.0, 0.4, True)]
    rep2 = evaluate.embedding_bias(st.online, noisy, SMALL_ENCODER, "rand")
    assert all(0.0 <= d <= 2.0 for d in rep2.distances)
    assert rep2.mean_distance > rep.mean_distance
    lines = [json.loads(x) for x in (tmp_path / "emb.jsonl").read_text().splitlines()]
    assert len(lines) == len(pairs)
    assert set(lines[0]) == {"id", "experimental", "predicted"}
    assert len(lines[0]["experimental"]) == SMALL_ENCODER.d_m
    with pytest.raises(evaluate.EmptyInput):
        evaluate.embedding_bias(st.online, [], SMALL_ENCODER)


def test_saliency_shape_and_zero_head():
    st = model()
    p = synth_protein(9, 3)
    sal = evaluate.saliency(st, p, 1)
    assert sal.shape == (9,)
    assert np.all(sal >= 0) and sal.any()
    for k in ("downstream/l1/w", "downstream/l2/w"):
        st.online[k].data = np.zeros_like(st.online[k].data)
    np.testing.assert_array_equal(evaluate.saliency(st, p, 1), 0.0)
    with pytest.raises(evaluate.LabelOutOfRange):
        evaluate.saliency(st, p, 4)


def test_saliency_matches_finite_differences():
    st = model("float64")
    p = synth_protein(6, 2)
    label = 2
    sal = evaluate.saliency(st, p, label)
    params = {k: Tensor(v.data) for k, v in st.online.items()}
    base = residue_features(p)
    h = 1e-5

    def logit(feats):
        with dc.precision(np.float64):
            out = encode(params, p, SMALL_ENCODER, features=Tensor(feats), need_pairs=False)
            return float(downstream_logits(params, out.pooled).data[label])

    fd = np.zeros_like(base)
    for i in range(base.shape[0]):
        for j in range(base.shape[1]):
            up, down = base.copy(), base.copy()
            up[i, j] += h
            down[i, j] -= h
            fd[i, j] = (logit(up) - logit(down)) / (2 * h)
    np.testing.assert_allclose(sal, np.linalg.norm(fd, axis=1), rtol=1e-4)


def test_evaluation_is_read_only():
    st = model()
    before = {k: t.data.copy() for k, t in st.online.items()}
    evaluate.performance_gap(st, dataset(1.0, 0.2, True))
    evaluate.saliency(st, synth_protein(8, 0), 0)
    for k, t in st.online.items():
        assert np.array_equal(t.data, before[k])
