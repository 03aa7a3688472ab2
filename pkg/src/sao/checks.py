"""Randomized property suites behind ``sao check``.

Each suite returns a :class:`CheckResult` with the worst error per property
and the tolerance it was held to.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import diffcore as dc
from . import geom, heads
from .diffcore import Tensor
from .encoder import EncoderConfig, encode, init_encoder
from .losses import align_loss, bce_multilabel_loss, fape_loss, mlm_loss
from .synth import synth_protein


@dataclass
class CheckResult:
    name: str
    cases: int
    worst: dict = field(default_factory=dict)
    tolerance: dict = field(default_factory=dict)

    @property
    def passed(self):
        return all(self.worst[k] < self.tolerance[k] for k in self.worst)

    def failures(self):
        return {k: v for k, v in self.worst.items() if not v < self.tolerance[k]}

    def summary(self):
        lines = [f"{self.name}: {'PASS' if self.passed else 'FAIL'} ({self.cases} cases)"]
        for k in sorted(self.worst):
            lines.append(f"  {k}: worst {self.worst[k]:.3e} (tol {self.tolerance[k]:.0e})")
        return "\n".join(lines)


def _record(res, key, value, tol):
    res.worst[key] = max(res.worst.get(key, 0.0), float(value))
    res.tolerance[key] = tol


def _random_frame(rng, scale=10.0):
    return geom.Frame(geom.random_rotation(rng), rng.normal(scale=scale, size=3))


# ---------------------------------------------------------------- geometry


def check_frames(n_cases=200, seed=0):
    rng = np.random.default_rng(seed)
    res = CheckResult("frames", n_cases)
    std = geom.standard_backbone()
    ident = geom.frame_from_backbone(std.n, std.ca, std.c)
    _record(res, "standard_identity", np.abs(ident.rotation - np.eye(3)).max()
            + np.abs(ident.translation).max(), 1e-6)
    for i in range(n_cases):
        # cover the identity, generic angles and the half-turn
        angle = [0.0, 1e-7, np.pi][i] if i < 3 else rng.uniform(0.0, np.pi)
        axis = rng.normal(size=3)
        v = axis / np.linalg.norm(axis) * angle
        r = geom.rotation_from_so3(v)
        back = geom.rotation_from_so3(geom.so3_from_rotation(r))
        _record(res, "exp_log_exp", np.abs(back - r).max(), 1e-8)
        if angle < np.pi - 1e-6:
            _record(res, "log_exp", np.abs(geom.so3_from_rotation(r) - v).max(), 1e-8)
        _record(res, "orthonormal", np.abs(r @ r.T - np.eye(3)).max(), 1e-8)

        a, b, c = (_random_frame(rng) for _ in range(3))
        x = rng.normal(scale=5.0, size=(4, 3))
        lhs = a.compose(b).compose(c)
        rhs = a.compose(b.compose(c))
        _record(res, "compose_assoc", max(np.abs(lhs.rotation - rhs.rotation).max(),
                                          np.abs(lhs.translation - rhs.translation).max()), 1e-9)
        ident_err = a.compose(a.invert())
        _record(res, "compose_inverse", max(np.abs(ident_err.rotation - np.eye(3)).max(),
                                            np.abs(ident_err.translation).max()), 1e-9)
        _record(res, "apply_compose", np.abs(a.compose(b).apply(x) - a.apply(b.apply(x))).max(), 1e-9)
        _record(res, "apply_inverse", np.abs(a.apply_inverse(a.apply(x)) - x).max(), 1e-9)

        atoms = geom.backbone_from_frame(b) + rng.normal(scale=0.2, size=(4, 3))
        f = geom.frame_from_backbone(atoms[0], atoms[1], atoms[2])
        moved = a.apply(atoms)
        g = geom.frame_from_backbone(moved[0], moved[1], moved[2])
        expect = a.compose(f)
        _record(res, "frame_equivariance", max(np.abs(g.rotation - expect.rotation).max(),
                                               np.abs(g.translation - expect.translation).max()), 1e-9)
    return res


# ---------------------------------------------------------------- gradients


def _away_from_zero(rng, shape, low=0.2):
    x = rng.uniform(low, 1.5, size=shape)
    return x * rng.choice([-1.0, 1.0], size=shape)


def op_cases(rng):
    """``(name, f, inputs)`` for every differentiable op and loss."""
    a = rng.normal(size=(3, 4))
    b = rng.normal(size=(3, 4))
    pos = rng.uniform(0.5, 2.0, size=(3, 4))
    row = rng.normal(size=(4,))
    sq = rng.normal(size=(2, 3, 4))
    rots = np.stack([geom.random_rotation(rng) for _ in range(3)])
    trans = rng.normal(scale=2.0, size=(3, 3))
    true_atoms = geom.backbone_from_frame(geom.Frame(rots, trans)) + rng.normal(scale=0.3, size=(3, 4, 3))
    true_f = geom.frame_from_backbone(true_atoms[:, 0], true_atoms[:, 1], true_atoms[:, 2])
    idx = np.array([2, 0, 2, 1])
    labels = rng.integers(0, 2, size=5)
    seq = rng.integers(0, 21, size=4)

    def s(t):
        # weighted sum so every output element matters differently
        w = np.linspace(0.5, 1.5, t.data.size).reshape(t.shape)
        return dc.reduce_sum(dc.mul(t, Tensor(w)))

    def fape_case(v, t):
        rot = dc.matmul(Tensor(rots), dc.so3_exp(v))
        return fape_loss(rot, t, heads.place_backbone(rot, t), true_f.rotation, true_f.translation, true_atoms)

    return [
        ("add", lambda x, y: s(dc.add(x, y)), [a, b]),
        ("add_row", lambda x, y: s(dc.add(x, y)), [a, row]),
        ("sub", lambda x, y: s(dc.sub(x, y)), [a, b]),
        ("mul", lambda x, y: s(dc.mul(x, y)), [a, b]),
        ("reciprocal", lambda x: s(dc.reciprocal(x)), [pos]),
        ("exp", lambda x: s(dc.exp(x)), [a]),
        ("log", lambda x: s(dc.log(x)), [pos]),
        ("sin", lambda x: s(dc.sin(x)), [a]),
        ("cos", lambda x: s(dc.cos(x)), [a]),
        ("square", lambda x: s(dc.square(x)), [a]),
        ("sqrt", lambda x: s(dc.sqrt(x)), [pos]),
        ("relu", lambda x: s(dc.relu(x)), [_away_from_zero(rng, (3, 4))]),
        ("gelu", lambda x: s(dc.gelu(x)), [a]),
        ("softplus", lambda x: s(dc.softplus(x)), [a]),
        ("sigmoid", lambda x: s(dc.sigmoid(x)), [a]),
        ("clamp_max", lambda x: s(dc.clamp_max(x, 0.0)), [_away_from_zero(rng, (3, 4))]),
        ("pair_hidden", lambda x, y, z: s(dc.pair_hidden(x, y, z)), [a, b[:2], row]),
        ("matmul", lambda x, y: s(dc.matmul(x, y)), [a, b.T]),
        ("matmul_stack", lambda x, y: s(dc.matmul(x, y)), [sq, rng.normal(size=(4, 2))]),
        ("matmul_batched", lambda x, y: s(dc.matmul(x, y)), [sq, rng.normal(size=(2, 4, 3))]),
        ("outer_sum", lambda x, y: s(dc.outer_sum(x, y)), [a, b[:2]]),
        ("reshape", lambda x: s(dc.reshape(x, (4, 3))), [a]),
        ("transpose", lambda x: s(dc.transpose(x, (2, 0, 1))), [sq]),
        ("repeat", lambda x: s(dc.repeat(x, 3, axis=1)), [a]),
        ("concat", lambda x, y: s(dc.concat([x, y], axis=-1)), [a, b]),
        ("index", lambda x: s(dc.index(x, (slice(None), slice(1, 3)))), [a]),
        ("gather_rows", lambda x: s(dc.gather_rows(x, idx)), [a]),
        ("reduce_sum", lambda x: s(dc.reduce_sum(x, axis=1)), [a]),
        ("reduce_mean", lambda x: s(dc.reduce_mean(x, axis=0)), [a]),
        ("softmax", lambda x: s(dc.softmax(x)), [a]),
        ("layer_norm", lambda x: s(dc.layer_norm(x)), [a]),
        ("l2_normalize", lambda x: s(dc.l2_normalize(x)), [a]),
        ("gaussian_density", lambda x, m, sd: s(dc.gaussian_density(x, m, sd)),
         [rng.normal(size=(2, 3)), rng.normal(size=4), rng.uniform(0.5, 1.5, size=4)]),
        ("so3_exp", lambda v: s(dc.so3_exp(v)), [rng.normal(size=(3, 3))]),
        ("so3_exp_small", lambda v: s(dc.so3_exp(v)), [rng.normal(scale=1e-3, size=(2, 3))]),
        ("cross_entropy", lambda x: dc.cross_entropy_logits(x, np.array([1, 0, 3])), [a]),
        ("bce_multilabel", lambda x: bce_multilabel_loss(x, labels), [rng.normal(size=5)]),
        ("align_loss", lambda q, z: align_loss(q, z), [rng.normal(size=6), Tensor(rng.normal(size=6))]),
        ("mlm_loss", lambda x: mlm_loss(x, seq, np.array([0, 2])), [rng.normal(size=(4, 21))]),
        ("fape_loss", fape_case, [rng.normal(scale=0.3, size=(3, 3)), trans + rng.normal(size=(3, 3))]),
        ("fape_loss_clamped", lambda v, t: fape_case(v, t), [rng.normal(scale=0.3, size=(3, 3)), trans]),
    ]


SMALL_ENCODER = EncoderConfig(d_m=8, d_z=4, layers=2, heads=2, pe_channels=4)


def end_to_end_case(seed=0, length=6):
    """Loss touching encoder, MLM, denoise and downstream heads on a short protein."""
    rng = np.random.default_rng(seed)
    cfg = SMALL_ENCODER
    protein = synth_protein(length, seed)
    arrays = init_encoder(cfg, rng)
    arrays.update(heads.init_denoise(cfg.d_m, rng))
    arrays.update(heads.init_mlm(cfg.d_m, rng))
    arrays.update(heads.init_downstream(cfg.d_m, 3, rng))
    # only the types present in this protein receive gradients; check those rows
    paths = sorted(arrays)
    labels = np.array([1, 0, 1])
    masked = np.array([1, 4])
    frames = protein.frames

    def f(*ts):
        params = dict(zip(paths, ts))
        out = encode(params, protein, cfg, mask=masked)
        loss = bce_multilabel_loss(heads.downstream_logits(params, out.pooled), labels)
        loss = dc.add(loss, mlm_loss(heads.mlm_logits(params, out.nodes), protein.sequence, masked))
        den = heads.denoise_update(params, out.nodes, frames)
        fape = fape_loss(den.rotation, den.translation, den.atoms, frames.rotation, frames.translation,
                         protein.backbone)
        z = dc.reduce_mean(dc.reduce_mean(out.pairs, axis=0), axis=0)
        return dc.add(dc.add(loss, fape), dc.reduce_sum(dc.square(z)))

    inputs = []
    for p in paths:
        arr = arrays[p]
        if p.endswith(("pe/a", "pe/b")):
            # untouched pair types have exactly zero gradient; freeze them
            # to keep the check fast
            inputs.append(Tensor(arr, requires_grad=False))
        else:
            inputs.append(arr)
    return f, inputs


def check_grads(seed=0, h=1e-5, end_to_end=True):
    rng = np.random.default_rng(seed)
    res = CheckResult("grads", 0)
    for name, f, inputs in op_cases(rng):
        _record(res, name, dc.grad_check(f, inputs, h=h), 1e-4)
        res.cases += 1
    if end_to_end:
        f, inputs = end_to_end_case(seed)
        _record(res, "end_to_end", dc.grad_check(f, inputs, h=h), 1e-4)
        res.cases += 1
    return res


# ---------------------------------------------------------------- invariance


def check_equivariance(n_transforms=20, seed=0, length=24):
    """Encoder invariance, denoise equivariance and FAPE invariance at 32-bit."""
    rng = np.random.default_rng(seed)
    res = CheckResult("equivariance", n_transforms)
    cfg = EncoderConfig()
    arrays = init_encoder(cfg, rng)
    arrays.update(heads.init_denoise(cfg.d_m, rng))
    params = {k: Tensor(v.astype(np.float32)) for k, v in arrays.items()}
    protein = synth_protein(length, seed)
    target = synth_protein(length, seed + 1)
    with dc.precision(np.float32):
        base = encode(params, protein, cfg)
        den = heads.denoise_update(params, base.nodes, protein.frames)
        tf = target.frames
        fape0 = float(fape_loss(den.rotation, den.translation, den.atoms, tf.rotation, tf.translation,
                                target.backbone).data)
        for _ in range(n_transforms):
            g = _random_frame(rng)
            moved = protein.transformed(g.rotation, g.translation)
            out = encode(params, moved, cfg)
            for key in ("nodes", "pairs", "pooled"):
                diff = np.abs(getattr(out, key).data - getattr(base, key).data).max()
                _record(res, f"encoder_{key}", diff, 1e-5)
            den_m = heads.denoise_update(params, out.nodes, moved.frames)
            want = g.compose(den.frames())
            got = den_m.frames()
            _record(res, "denoise_rotation", np.abs(got.rotation - want.rotation).max(), 1e-5)
            _record(res, "denoise_translation", np.abs(got.translation - want.translation).max(), 1e-5)
            atoms_want = g.apply(den.atoms.data.astype(np.float64))
            _record(res, "denoise_atoms", np.abs(den_m.atoms.data - atoms_want).max(), 1e-5)
            # global motion of the prediction only
            rot_p = Tensor((g.rotation @ den.rotation.data.astype(np.float64)).astype(np.float32))
            trans_p = Tensor(g.apply(den.translation.data.astype(np.float64)).astype(np.float32))
            atoms_p = Tensor(atoms_want.astype(np.float32))
            fape = float(fape_loss(rot_p, trans_p, atoms_p, tf.rotation, tf.translation, target.backbone).data)
            _record(res, "fape_invariance", abs(fape - fape0), 1e-5)
    return res


SUITES = {"frames": check_frames, "grads": check_grads, "equivariance": check_equivariance}
