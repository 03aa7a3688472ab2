"""Rigid-body geometry: SO(3) exp/log maps, residue frames, torsions and RMSD.

All routines work in float64 and broadcast over leading batch dimensions, so a
single call can handle one residue or a whole chain (``(..., 3)`` vectors and
``(..., 3, 3)`` rotation matrices).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "BackboneResidue",
    "CollinearAtoms",
    "DegenerateDihedral",
    "Frame",
    "LengthMismatch",
    "backbone_from_frame",
    "dihedral",
    "frame_apply",
    "frame_apply_inverse",
    "frame_compose",
    "frame_from_backbone",
    "frame_invert",
    "hat",
    "kabsch_rmsd",
    "random_rotation",
    "rotation_from_so3",
    "so3_from_rotation",
    "standard_backbone",
    "STANDARD_ATOMS",
]


class GeometryError(ValueError):
    pass


class CollinearAtoms(GeometryError):
    pass


class DegenerateDihedral(GeometryError):
    pass


class LengthMismatch(GeometryError):
    pass


# Idealized backbone with CA at the origin, C on +x and N in the xy-plane.
# Row order is N, CA, C, O throughout the package.
STANDARD_ATOMS = np.array(
    [
        [-0.525, 1.363, 0.0],
        [0.0, 0.0, 0.0],
        [1.523, 0.0, 0.0],
        [2.152, -1.059, 0.0],
    ]
)


def hat(v):
    """Skew-symmetric cross-product matrix of ``v`` (shape ``(..., 3)``)."""
    v = np.asarray(v, dtype=np.float64)
    out = np.zeros(v.shape[:-1] + (3, 3))
    x, y, z = v[..., 0], v[..., 1], v[..., 2]
    out[..., 0, 1] = -z
    out[..., 0, 2] = y
    out[..., 1, 0] = z
    out[..., 1, 2] = -x
    out[..., 2, 0] = -y
    out[..., 2, 1] = x
    return out


def vee(m):
    return np.stack([m[..., 2, 1], m[..., 0, 2], m[..., 1, 0]], axis=-1)


def rotation_from_so3(v):
    """Rodrigues exponential map from axis-angle vectors to rotation matrices."""
    v = np.asarray(v, dtype=np.float64)
    theta2 = np.sum(v * v, axis=-1)
    theta = np.sqrt(theta2)
    small = theta < 1e-4
    safe = np.where(small, 1.0, theta)
    # Taylor series below 1e-4 rad; truncation error is far below 1e-16.
    a = np.where(small, 1.0 - theta2 / 6.0, np.sin(safe) / safe)
    b = np.where(small, 0.5 - theta2 / 24.0, (1.0 - np.cos(safe)) / (safe * safe))
    k = hat(v)
    eye = np.broadcast_to(np.eye(3), k.shape)
    return eye + a[..., None, None] * k + b[..., None, None] * (k @ k)


def so3_from_rotation(r):
    """Principal logarithm of a rotation matrix, with ``|v|`` in ``[0, pi]``."""
    r = np.asarray(r, dtype=np.float64)
    if r.ndim > 2:
        flat = r.reshape(-1, 3, 3)
        return np.stack([so3_from_rotation(m) for m in flat]).reshape(r.shape[:-2] + (3,))
    cos = np.clip((np.trace(r) - 1.0) / 2.0, -1.0, 1.0)
    angle = float(np.arccos(cos))
    skew = vee(r - r.T) / 2.0  # sin(angle) * axis
    if angle < 1e-6:
        return skew
    if np.pi - angle > 1e-3:
        return skew * (angle / np.sin(angle))
    # Near the half-turn sin(angle) vanishes; read the axis off the symmetric
    # part using its largest diagonal entry, then fix the sign from the skew part.
    s = (r + r.T) / 2.0 - cos * np.eye(3)
    i = int(np.argmax(np.diag(s)))
    axis = s[i] / np.sqrt(s[i, i])
    axis /= np.linalg.norm(axis)
    if axis @ skew < 0:
        axis = -axis
    return axis * angle


def random_rotation(rng):
    """Haar-uniform random rotation via QR of a Gaussian matrix."""
    q, rr = np.linalg.qr(rng.standard_normal((3, 3)))
    q = q * np.sign(np.diag(rr))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


@dataclass(frozen=True)
class Frame:
    """Rigid transform ``x -> rotation @ x + translation``.

    ``rotation`` has shape ``(..., 3, 3)`` and ``translation`` ``(..., 3)``, so a
    Frame may hold one residue or a stack of them.
    """

    rotation: np.ndarray
    translation: np.ndarray

    @classmethod
    def identity(cls, shape=()):
        rot = np.broadcast_to(np.eye(3), tuple(shape) + (3, 3)).copy()
        return cls(rot, np.zeros(tuple(shape) + (3,)))

    def __len__(self):
        return self.translation.shape[0]

    def __getitem__(self, idx):
        return Frame(self.rotation[idx], self.translation[idx])

    def compose(self, other):
        return frame_compose(self, other)

    def invert(self):
        return frame_invert(self)

    def apply(self, x):
        return frame_apply(self, x)

    def apply_inverse(self, x):
        return frame_apply_inverse(self, x)

    def allclose(self, other, atol=1e-9):
        return np.allclose(self.rotation, other.rotation, atol=atol, rtol=0) and np.allclose(
            self.translation, other.translation, atol=atol, rtol=0
        )


def frame_compose(a, b):
    """Frame equivalent to applying ``b`` first, then ``a``."""
    rot = a.rotation @ b.rotation
    trans = np.einsum("...ij,...j->...i", a.rotation, b.translation) + a.translation
    return Frame(rot, trans)


def frame_invert(t):
    rot_t = np.swapaxes(t.rotation, -1, -2)
    return Frame(rot_t, -np.einsum("...ij,...j->...i", rot_t, t.translation))


def frame_apply(t, x):
    x = np.asarray(x, dtype=np.float64)
    return np.einsum("...ij,...j->...i", t.rotation, x) + t.translation


def frame_apply_inverse(t, x):
    x = np.asarray(x, dtype=np.float64)
    return np.einsum("...ji,...j->...i", t.rotation, x - t.translation)


@dataclass(frozen=True)
class BackboneResidue:
    n: np.ndarray
    ca: np.ndarray
    c: np.ndarray
    o: np.ndarray

    def as_array(self):
        return np.stack([self.n, self.ca, self.c, self.o], axis=-2)

    @classmethod
    def from_array(cls, atoms):
        atoms = np.asarray(atoms, dtype=np.float64)
        return cls(atoms[..., 0, :], atoms[..., 1, :], atoms[..., 2, :], atoms[..., 3, :])


def standard_backbone():
    return BackboneResidue.from_array(STANDARD_ATOMS.copy())


def frame_from_backbone(n, ca, c):
    """Gram-Schmidt frame with e1 along CA->C and N in the e1/e2 half-plane."""
    n, ca, c = (np.asarray(a, dtype=np.float64) for a in (n, ca, c))
    v1 = c - ca
    e1 = v1 / np.linalg.norm(v1, axis=-1, keepdims=True)
    v2 = n - ca
    u2 = v2 - np.sum(e1 * v2, axis=-1, keepdims=True) * e1
    norm2 = np.linalg.norm(u2, axis=-1, keepdims=True)
    if np.any(norm2 < 1e-6):
        raise CollinearAtoms("N, CA and C are collinear; frame is undefined")
    e2 = u2 / norm2
    e3 = np.cross(e1, e2)
    return Frame(np.stack([e1, e2, e3], axis=-1), ca.copy())


def backbone_from_frame(f):
    """Place the standard backbone atoms with frame ``f``; returns ``(..., 4, 3)``."""
    return np.einsum("...ij,aj->...ai", f.rotation, STANDARD_ATOMS) + f.translation[..., None, :]


def dihedral(p1, p2, p3, p4):
    """Signed torsion angle in ``(-pi, pi]``.

    The sign follows the right-hand rule about the p2->p3 axis: rotating the
    p1 half-plane by the returned angle about that axis lands on p4.
    """
    p1, p2, p3, p4 = (np.asarray(p, dtype=np.float64) for p in (p1, p2, p3, p4))
    b1 = p2 - p1
    b2 = p3 - p2
    b3 = p4 - p3
    n1 = np.cross(b1, b2)
    n2 = np.cross(b2, b3)
    if (
        np.any(np.linalg.norm(n1, axis=-1) < 1e-9)
        or np.any(np.linalg.norm(n2, axis=-1) < 1e-9)
    ):
        raise DegenerateDihedral("consecutive bond vectors are parallel")
    b2_unit = b2 / np.linalg.norm(b2, axis=-1, keepdims=True)
    y = np.sum(b2_unit * np.cross(n1, n2), axis=-1)
    x = np.sum(n1 * n2, axis=-1)
    angle = np.arctan2(y, x)
    # atan2 returns -pi for the exact anti-periplanar case with y = -0.0.
    angle = np.where(angle <= -np.pi, np.pi, angle)
    return float(angle) if np.ndim(angle) == 0 else angle


def kabsch_rmsd(xs, ys):
    """RMSD between two point sets after optimal rigid superposition."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if xs.shape != ys.shape:
        raise LengthMismatch(f"point sets differ in shape: {xs.shape} vs {ys.shape}")
    if len(xs) < 3:
        raise LengthMismatch("need at least 3 points for superposition")
    if np.array_equal(xs, ys):
        return 0.0
    x = xs - xs.mean(axis=0)
    y = ys - ys.mean(axis=0)
    u, _, vt = np.linalg.svd(x.T @ y)
    d = np.sign(np.linalg.det(u @ vt))
    rot = u @ np.diag([1.0, 1.0, d]) @ vt
    diff = x @ rot - y
    return float(np.sqrt(np.sum(diff * diff) / len(x)))
