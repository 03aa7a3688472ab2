"""Synthetic proteins, experimental/predicted pairs, mask views and labels.

Predicted structures are produced by injecting noise in frame space and then
rebuilding rigid residues, so every pair has an exactly known relationship
between its two structures.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import geom
from .protein import Protein, protein_from_dict, protein_to_dict

CA_STEP = 3.8

# Constant step that winds a compact helix: CA(i)-CA(i+4) ~ 5.7 A and
# CA(i)-CA(i+5) ~ 6.6 A, both inside the 8 A contact cutoff.
_HELIX_AXIS = np.array([math.cos(1.2217), 0.0, math.sin(1.2217)])
HELIX_STEP = 1.35 * _HELIX_AXIS
COIL_SPREAD = 0.3  # rad, std of coil step rotations
HELIX_MAX = 0.6  # upper bound of the per-protein helix propensity


class LengthOutOfRange(ValueError):
    pass


class EmptyDataset(ValueError):
    pass


@dataclass(frozen=True)
class PerturbationConfig:
    sigma_t: float = 0.8
    sigma_r: float = 0.15
    apply_global: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.sigma_t < 0:
            raise ValueError("sigma_t must be non-negative")
        if not 0 <= self.sigma_r <= math.pi / 2:
            raise ValueError("sigma_r must lie in [0, pi/2]")


@dataclass(eq=False)
class StructurePair:
    experimental: Protein
    predicted: Protein
    meta: dict

    def to_dict(self):
        return {
            "experimental": protein_to_dict(self.experimental),
            "predicted": protein_to_dict(self.predicted),
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, obj):
        return cls(
            protein_from_dict(obj["experimental"], "/experimental"),
            protein_from_dict(obj["predicted"], "/predicted"),
            dict(obj.get("meta", {})),
        )


@dataclass(eq=False)
class MaskedView:
    base: Protein
    masked_positions: np.ndarray
    ratio: float


def synth_protein(length, seed, pid=None):
    """Chain of rigid residues grown frame by frame with 3.8 A CA steps.

    The chain alternates helical segments (a fixed compact twist plus a little
    jitter) and coil segments (broad random rotations).  Each protein draws its
    own helix propensity, which is what makes contact-derived labels vary.
    """
    if not 2 <= length <= 512:
        raise LengthOutOfRange(f"length must be in [2, 512], got {length}")
    rng = np.random.default_rng(seed)
    helix_frac = rng.uniform(0.0, HELIX_MAX)
    steps = np.empty((length - 1, 3))
    i = 0
    while i < length - 1:
        seg = int(rng.integers(6, 19))
        seg = min(seg, length - 1 - i)
        if rng.uniform() < helix_frac:
            steps[i : i + seg] = HELIX_STEP + rng.normal(0.0, 0.05, size=(seg, 3))
        else:
            steps[i : i + seg] = rng.normal(0.0, COIL_SPREAD, size=(seg, 3))
        i += seg
    step_rot = geom.rotation_from_so3(steps)
    step_t = np.array([CA_STEP, 0.0, 0.0])
    rot = np.empty((length, 3, 3))
    trans = np.empty((length, 3))
    rot[0] = geom.random_rotation(rng)
    trans[0] = rng.normal(0.0, 5.0, size=3)
    for k in range(length - 1):
        trans[k + 1] = trans[k] + rot[k] @ step_t
        rot[k + 1] = rot[k] @ step_rot[k]
    sequence = rng.integers(0, 20, size=length)
    return Protein.from_frames(pid or f"synth_{seed}", sequence, geom.Frame(rot, trans))


def perturb(p, cfg):
    """Noisy copy of ``p`` standing in for a predicted structure.

    Each frame becomes ``{O_i exp(eps_r), t_i + eps_t}`` with Gaussian noise,
    residues are rebuilt from the standard backbone, and optionally the whole
    prediction is moved by a random rigid transform.
    """
    rng = np.random.default_rng(cfg.seed)
    n_res = len(p)
    eps_r = rng.normal(0.0, cfg.sigma_r, size=(n_res, 3))
    eps_t = rng.normal(0.0, cfg.sigma_t, size=(n_res, 3))
    frames = p.frames
    if cfg.sigma_r > 0 or cfg.sigma_t > 0:
        frames = geom.Frame(frames.rotation @ geom.rotation_from_so3(eps_r), frames.translation + eps_t)
        backbone = geom.backbone_from_frame(frames)
    else:
        backbone = p.backbone.copy()
    if cfg.apply_global:
        rot = geom.random_rotation(rng)
        backbone = backbone @ rot.T + rng.normal(0.0, 10.0, size=3)
    predicted = Protein(p.id, p.sequence.copy(), backbone)
    rmsd = geom.kabsch_rmsd(p.ca, predicted.ca)
    meta = {"sigma_t": float(cfg.sigma_t), "sigma_r": float(cfg.sigma_r), "rmsd": rmsd}
    return StructurePair(p, predicted, meta)


def mask_count(n_res, ratio):
    return max(1, int(math.floor(ratio * n_res)))


def make_mask_view(p, ratio=0.15, seed=0):
    if not 0 < ratio < 1:
        raise ValueError("mask ratio must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    positions = np.sort(rng.choice(len(p), size=mask_count(len(p), ratio), replace=False))
    return MaskedView(p, positions, ratio)


def contact_pairs(p, cutoff=8.0, min_sep=4):
    ca = p.ca
    d = np.linalg.norm(ca[:, None] - ca[None], axis=-1)
    a, b = np.nonzero(np.triu(d < cutoff, k=min_sep))
    return a, b


def synth_labels(p, k=8):
    """Multi-label targets from long-range CA contacts and residue identities.

    Label ``j`` is on when more than ``N/16`` contacts (CA-CA < 8 A, sequence
    separation >= 4) have ``(id_a + id_b) mod k == j``.
    """
    a, b = contact_pairs(p)
    buckets = (p.sequence[a] + p.sequence[b]) % k
    counts = np.bincount(buckets, minlength=k)
    return (counts > len(p) / 16.0).astype(np.int64)


# ---------------------------------------------------------------- datasets


@dataclass
class DatasetEntry:
    pair: str
    labels: str
    split: str
    id: str


class Dataset:
    """Directory of pair/label files described by ``manifest.json``."""

    def __init__(self, root, entries, config=None):
        self.root = Path(root)
        self.entries = list(entries)
        self.config = config or {}

    @classmethod
    def load(cls, root):
        root = Path(root)
        manifest = json.loads((root / "manifest.json").read_text())
        entries = [DatasetEntry(**e) for e in manifest["entries"]]
        for e in entries:
            for rel in (e.pair, e.labels):
                if not (root / rel).exists():
                    raise FileNotFoundError(root / rel)
        return cls(root, entries, manifest.get("config"))

    def split(self, name):
        return [e for e in self.entries if e.split == name]

    def load_pair(self, entry):
        return StructurePair.from_dict(json.loads((self.root / entry.pair).read_text()))

    def load_labels(self, entry):
        return np.array(json.loads((self.root / entry.labels).read_text()), dtype=np.int64)

    def load_split(self, name):
        """List of ``(pair, labels)`` for a split, in manifest order."""
        return [(self.load_pair(e), self.load_labels(e)) for e in self.split(name)]


def build_dataset(out_dir, n_train=256, n_valid=32, n_test=64, len_min=48, len_max=96,
                  sigma_t=0.8, sigma_r=0.15, seed=7, n_labels=8, apply_global=True):
    """Write a deterministic synthetic dataset and return its :class:`Dataset`."""
    counts = {"train": n_train, "valid": n_valid, "test": n_test}
    if min(counts.values()) < 1:
        raise EmptyDataset("every split needs at least one pair")
    if not 2 <= len_min <= len_max <= 512:
        raise LengthOutOfRange(f"bad length range [{len_min}, {len_max}]")
    out = Path(out_dir)
    entries = []
    seeds = iter(np.random.SeedSequence(seed).generate_state(3 * sum(counts.values()), dtype=np.uint64))
    for split, n in counts.items():
        (out / split).mkdir(parents=True, exist_ok=True)
        for i in range(n):
            pid = f"{split}_{i:04d}"
            len_seed, prot_seed, pert_seed = (int(next(seeds)) for _ in range(3))
            length = int(np.random.default_rng(len_seed).integers(len_min, len_max + 1))
            exp = synth_protein(length, prot_seed, pid=pid)
            cfg = PerturbationConfig(sigma_t, sigma_r, apply_global, pert_seed)
            pair = perturb(exp, cfg)
            labels = synth_labels(exp, n_labels)
            pair_rel = f"{split}/{pid}.pair.json"
            label_rel = f"{split}/{pid}.labels.json"
            (out / pair_rel).write_text(json.dumps(pair.to_dict(), separators=(",", ":")))
            (out / label_rel).write_text(json.dumps(labels.tolist()))
            entries.append(DatasetEntry(pair_rel, label_rel, split, pid))
    config = {
        "n_train": n_train, "n_valid": n_valid, "n_test": n_test,
        "len_min": len_min, "len_max": len_max, "sigma_t": sigma_t,
        "sigma_r": sigma_r, "seed": seed, "n_labels": n_labels,
        "apply_global": apply_global,
    }
    manifest = {"format": 1, "config": config, "entries": [asdict(e) for e in entries]}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1))
    return Dataset(out, entries, config)
