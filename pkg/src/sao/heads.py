"""Projector, predictor, denoise, MLM and downstream heads."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from . import geom
from .diffcore import Tensor
from .encoder import add_linear, mlp
from .protein import N_AA

PROJ_HIDDEN = 128
PROJ_DIM = 64
DENOISE_HIDDEN = 128
DOWNSTREAM_HIDDEN = 64


def init_projector(d_m, rng, prefix="projector"):
    arr = {}
    add_linear(arr, prefix + "/l1", d_m, PROJ_HIDDEN, rng)
    add_linear(arr, prefix + "/l2", PROJ_HIDDEN, PROJ_DIM, rng)
    return arr


def init_predictor(rng, prefix="predictor"):
    arr = {}
    add_linear(arr, prefix + "/l1", PROJ_DIM, PROJ_HIDDEN, rng)
    add_linear(arr, prefix + "/l2", PROJ_HIDDEN, PROJ_DIM, rng)
    return arr


def init_denoise(d_m, rng, prefix="denoise"):
    arr = {}
    add_linear(arr, prefix + "/l1", d_m, DENOISE_HIDDEN, rng)
    add_linear(arr, prefix + "/l2", DENOISE_HIDDEN, 6, rng)
    return arr


def init_mlm(d_m, rng, prefix="mlm"):
    arr = {}
    add_linear(arr, prefix + "/l1", d_m, N_AA, rng)
    return arr


def init_downstream(d_m, k, rng, prefix="downstream"):
    arr = {}
    add_linear(arr, prefix + "/l1", d_m, DOWNSTREAM_HIDDEN, rng)
    add_linear(arr, prefix + "/l2", DOWNSTREAM_HIDDEN, k, rng)
    return arr


def _check_dim(x, path, params):
    expected = params[path + "/l1/w"].shape[0]
    if x.shape[-1] != expected:
        raise dc.ShapeMismatch(f"{path}: expected input dim {expected}, got {x.shape}")


def _row(x):
    return dc.reshape(x, (1, x.shape[-1])) if x.ndim == 1 else x


def project(params, pooled, prefix="projector"):
    _check_dim(pooled, prefix, params)
    return dc.reshape(mlp(_row(pooled), params, prefix), (PROJ_DIM,))


def project_predict(params, pooled):
    """Online path: ``(z, q(z))``.  The target path calls :func:`project` only."""
    z = project(params, pooled)
    q = dc.reshape(mlp(_row(z), params, "predictor"), (PROJ_DIM,))
    return z, q


def mlm_logits(params, nodes):
    _check_dim(nodes, "mlm", params)
    return mlp(nodes, params, "mlm", layers=1)


def downstream_logits(params, pooled):
    _check_dim(pooled, "downstream", params)
    return dc.reshape(mlp(_row(pooled), params, "downstream"), (params["downstream/l2/b"].shape[0],))


@dataclass
class DenoisedStructure:
    rotation: Tensor  # (N, 3, 3)
    translation: Tensor  # (N, 3)
    atoms: Tensor  # (N, 4, 3)
    so3: Tensor  # (N, 3) raw head output
    t_local: Tensor  # (N, 3)

    def frames(self):
        return geom.Frame(self.rotation.data.astype(np.float64), self.translation.data.astype(np.float64))


def denoise_update(params, nodes, frames):
    """One frame update predicted from node embeddings.

    Per residue the head emits an axis-angle vector and a translation in the
    residue's local frame; the new frame is ``{O exp(v), t + O t_local}`` and
    the backbone is rebuilt from the standard residue.
    """
    _check_dim(nodes, "denoise", params)
    n_res = nodes.shape[0]
    dtype = nodes.dtype
    out = mlp(nodes, params, "denoise")
    so3 = dc.index(out, (slice(None), slice(0, 3)))
    t_local = dc.index(out, (slice(None), slice(3, 6)))
    rot0 = Tensor(frames.rotation.astype(dtype))
    rot = dc.matmul(rot0, dc.so3_exp(so3))
    delta = dc.reshape(dc.matmul(rot0, dc.reshape(t_local, (n_res, 3, 1))), (n_res, 3))
    trans = dc.add(Tensor(frames.translation.astype(dtype)), delta)
    atoms = place_backbone(rot, trans)
    return DenoisedStructure(rot, trans, atoms, so3, t_local)


def place_backbone(rot, trans):
    """Differentiable ``backbone_from_frame``: ``(N, 4, 3)`` atom tensor."""
    std_t = Tensor(geom.STANDARD_ATOMS.T.astype(rot.dtype))
    local = dc.transpose(dc.matmul(rot, std_t), (0, 2, 1))
    return dc.add(local, dc.repeat(trans, 4, axis=1))
