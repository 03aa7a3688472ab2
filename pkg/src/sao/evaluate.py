"""Performance gap, embedding bias and gradient saliency for trained models."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import diffcore as dc
from . import heads
from .diffcore import Tensor
from .encoder import encode, residue_features
from .metrics import aupr, fmax
from .trainer import pooled_embeddings, predict_scores


class EmptyInput(ValueError):
    pass


class LabelOutOfRange(IndexError):
    pass


@dataclass
class EvalReport:
    experimental: dict
    predicted: dict
    gap: dict
    n_proteins: int
    config: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)


@dataclass
class BiasReport:
    mean_distance: float
    distances: list
    encoder_id: str

    def to_dict(self):
        return asdict(self)


def score_split(state, pairs_with_labels):
    """Label scores on experimental and predicted structures, plus the label matrix."""
    exp = predict_scores(state, [p.experimental for p, _ in pairs_with_labels])
    pred = predict_scores(state, [p.predicted for p, _ in pairs_with_labels])
    labels = np.array([lab for _, lab in pairs_with_labels])
    return exp, pred, labels


def performance_gap(state, pairs_with_labels):
    """Fmax and AUPR on each structure source; gaps are predicted minus experimental."""
    if not pairs_with_labels:
        raise EmptyInput("no test proteins")
    exp, pred, labels = score_split(state, pairs_with_labels)
    res = {}
    for name, scores in (("experimental", exp), ("predicted", pred)):
        res[name] = {"fmax": fmax(scores, labels), "aupr": aupr(scores, labels)}
    gap = {
        "fmax_gap": res["predicted"]["fmax"] - res["experimental"]["fmax"],
        "aupr_gap": res["predicted"]["aupr"] - res["experimental"]["aupr"],
    }
    return EvalReport(res["experimental"], res["predicted"], gap, len(labels),
                      {"train": state.config.to_dict(), "meta": state.meta})


def embedding_bias(params, pairs, cfg, encoder_id="encoder", dump_path=None):
    """Distances between normalized pooled embeddings of each experimental/predicted pair.

    ``dump_path`` receives one JSON line per protein with both raw embeddings.
    """
    pairs = list(pairs)
    if not pairs:
        raise EmptyInput("embedding_bias needs at least one pair")
    e_exp = pooled_embeddings(params, [p.experimental for p in pairs], cfg)
    e_pred = pooled_embeddings(params, [p.predicted for p in pairs], cfg)

    def unit(x):
        return x / np.maximum(np.linalg.norm(x, axis=1, keepdims=True), 1e-12)

    dist = np.linalg.norm(unit(e_exp) - unit(e_pred), axis=1)
    if dump_path is not None:
        with open(dump_path, "w") as f:
            for p, a, b in zip(pairs, e_exp, e_pred):
                f.write(json.dumps({"id": p.experimental.id, "experimental": a.tolist(), "predicted": b.tolist()}) + "\n")
    return BiasReport(float(dist.mean()), dist.tolist(), encoder_id)


def saliency(state, protein, label_index):
    """L2 norm of d(logit[label]) / d(feature row) for every residue."""
    n_labels = state.online["downstream/l2/b"].shape[0]
    if not 0 <= label_index < n_labels:
        raise LabelOutOfRange(f"label {label_index} outside [0, {n_labels})")
    cfg = state.config
    params = {k: Tensor(v.data) for k, v in state.online.items()}
    with dc.precision(cfg.dtype):
        feats = Tensor(residue_features(protein).astype(cfg.dtype), requires_grad=True)
        out = encode(params, protein, cfg.encoder, features=feats, need_pairs=False)
        logit = dc.index(heads.downstream_logits(params, out.pooled), label_index)
        grads = dc.backward(logit)
    g = grads.get(id(feats))
    if g is None:
        return np.zeros(len(protein))
    return np.linalg.norm(np.asarray(g, dtype=np.float64), axis=1)
