"""Alignment, masked-residue, local-frame structure and multi-label losses."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .diffcore import Tensor


class LossError(ValueError):
    pass


class DegenerateNorm(LossError):
    pass


class EmptyMaskSet(LossError):
    pass


class LengthMismatch(LossError):
    pass


@dataclass(frozen=True)
class LossWeights:
    gamma_align: float = 1.0
    gamma_mlm: float = 1.0
    gamma_mse: float = 1.0

    def __post_init__(self):
        for name in ("gamma_align", "gamma_mlm", "gamma_mse"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and non-negative")


@dataclass
class LossBreakdown:
    align_pred: float
    align_mask: float
    mlm: float
    mse: float
    total: float

    def as_dict(self):
        return {
            "align_pred": self.align_pred,
            "align_mask": self.align_mask,
            "mlm": self.mlm,
            "mse": self.mse,
            "total": self.total,
        }


def align_loss(q_out, target_z):
    """Squared distance of the l2-normalized vectors, i.e. ``2 - 2 cos``.

    ``target_z`` is detached here, so no gradient ever reaches the target path.
    """
    q_out = dc.as_tensor(q_out)
    target = dc.stop_gradient(dc.as_tensor(target_z))
    if q_out.shape != target.shape:
        raise dc.ShapeMismatch(f"align_loss: {q_out.shape} vs {target.shape}")
    if np.linalg.norm(q_out.data) < 1e-8 or np.linalg.norm(target.data) < 1e-8:
        raise DegenerateNorm("align_loss needs non-zero vectors")
    diff = dc.sub(dc.l2_normalize(q_out), dc.l2_normalize(target))
    return dc.reduce_sum(dc.square(diff))


def mlm_loss(logits, true_sequence, masked_positions):
    """Mean cross-entropy at the masked positions only."""
    masked = np.asarray(masked_positions, dtype=np.intp)
    if masked.size == 0:
        raise EmptyMaskSet("mlm_loss needs at least one masked position")
    targets = np.asarray(true_sequence)[masked]
    return dc.cross_entropy_logits(dc.gather_rows(logits, masked), targets)


def local_coordinates(rot, trans, atoms):
    """Numpy reference: every atom of ``atoms (N, 4, 3)`` in every frame, ``(N, 4N, 3)``."""
    x = atoms.reshape(-1, 3)
    return np.einsum("iab,ika->ikb", rot, x[None, :, :] - trans[:, None, :])


def fape_loss(pred_rot, pred_trans, pred_atoms, true_rot, true_trans, true_atoms, clamp=None):
    """Frame-aligned error over all frames x all backbone atoms.

    Predicted quantities are tensors (``(N,3,3)``, ``(N,3)``, ``(N,4,3)``);
    the truth is given as arrays.  Each term is ``sqrt(|d|^2 + 1e-8)``;
    ``clamp`` caps each term (10 A mimics the usual FAPE clamp).
    """
    pred_rot, pred_trans, pred_atoms = (dc.as_tensor(t) for t in (pred_rot, pred_trans, pred_atoms))
    n_res = pred_rot.shape[0]
    if pred_atoms.shape != (n_res, 4, 3) or np.shape(true_atoms) != (n_res, 4, 3):
        raise LengthMismatch(
            f"fape_loss: prediction has {n_res} frames / atoms {pred_atoms.shape}, "
            f"truth atoms {np.shape(true_atoms)}"
        )
    dtype = pred_rot.dtype
    true_local = local_coordinates(
        np.asarray(true_rot, np.float64), np.asarray(true_trans, np.float64), np.asarray(true_atoms, np.float64)
    ).astype(dtype)
    n_atoms = 4 * n_res
    x = dc.reshape(pred_atoms, (n_atoms, 3))
    # (x_k - t_i) O_i == x_k O_i - t_i O_i
    xo = dc.matmul(x, pred_rot)
    to = dc.reshape(dc.matmul(dc.reshape(pred_trans, (n_res, 1, 3)), pred_rot), (n_res, 3))
    local = dc.sub(xo, dc.repeat(to, n_atoms, axis=1))
    diff = dc.sub(local, Tensor(true_local))
    err = dc.sqrt(dc.reduce_sum(dc.square(diff), axis=-1), eps=1e-8)
    if clamp is not None:
        err = dc.clamp_max(err, clamp)
    return dc.reduce_mean(err)


def bce_multilabel_loss(logits, labels):
    logits = dc.as_tensor(logits)
    labels = np.asarray(labels)
    if logits.shape != labels.shape:
        raise LengthMismatch(f"bce: {logits.shape[0] if logits.ndim else 0} logits vs {labels.shape} labels")
    return dc.bce_with_logits(logits, labels)


def combine(align_pred, align_mask, mlm, mse, weights):
    """Weighted total; align terms are averaged over the two views."""
    align = dc.mul(dc.add(align_pred, align_mask), 0.5)
    total = dc.add(
        dc.add(dc.mul(align, weights.gamma_align), dc.mul(mlm, weights.gamma_mlm)),
        dc.mul(mse, weights.gamma_mse),
    )
    breakdown = LossBreakdown(
        float(align_pred.data), float(align_mask.data), float(mlm.data), float(mse.data), float(total.data)
    )
    return total, breakdown
