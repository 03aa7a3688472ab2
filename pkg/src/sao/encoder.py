"""Roto-translation invariant graph transformer over residues.

Node inputs only see geometry expressed in each residue's own frame, and pair
inputs only see CA-CA distances, so every output is invariant to a global
rigid motion of the input structure.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import diffcore as dc
from .diffcore import Tensor
from .protein import MASK_ID, N_AA, UNKNOWN_ID

N_PAIR_TYPES_USED = N_AA * (N_AA + 1) // 2  # 231
MASKED_PAIR_TYPE = N_PAIR_TYPES_USED  # reserved slot for pairs touching a masked residue
D_IN = N_AA + 6 + 36


class MaskOutOfRange(IndexError):
    pass


@dataclass(frozen=True)
class EncoderConfig:
    d_m: int = 64
    d_z: int = 32
    layers: int = 3
    heads: int = 4
    pe_channels: int = 16
    n_pair_types: int = N_PAIR_TYPES_USED + 1

    def __post_init__(self):
        if min(self.d_m, self.d_z, self.layers, self.heads, self.pe_channels) < 1:
            raise ValueError("all encoder dimensions must be >= 1")
        if self.d_m % self.heads:
            raise ValueError("d_m must be divisible by heads")
        if self.n_pair_types < N_PAIR_TYPES_USED + 1:
            raise ValueError(f"n_pair_types must be at least {N_PAIR_TYPES_USED + 1}")

    def to_dict(self):
        return asdict(self)


@dataclass
class EncoderOutput:
    nodes: Tensor  # (N, d_m)
    pairs: Tensor  # (N, N, d_z)
    pooled: Tensor  # (d_m,)


# ---------------------------------------------------------------- features


def residue_features(p):
    """Invariant per-residue inputs, ``(N, 63)`` float64.

    Columns: amino-acid one-hot (21), sin/cos of phi, psi, omega with absent
    angles as (0, 0) (6), then N/CA/C/O of residues i-1, i, i+1 in the frame
    of residue i (36), zero where the neighbour does not exist.
    """
    n_res = len(p)
    feats = np.zeros((n_res, D_IN))
    feats[np.arange(n_res), np.minimum(p.sequence, UNKNOWN_ID)] = 1.0
    trig = np.stack([np.sin(p.torsions), np.cos(p.torsions)], axis=-1)  # (N, 3, 2)
    trig *= p.torsion_mask[..., None]
    feats[:, N_AA : N_AA + 6] = trig.reshape(n_res, 6)
    rot, trans = p.frames.rotation, p.frames.translation
    start = N_AA + 6
    for block, offset in enumerate((-1, 0, 1)):
        lo, hi = max(0, -offset), min(n_res, n_res - offset)
        idx = np.arange(lo, hi)
        atoms = p.backbone[idx + offset]  # (M, 4, 3)
        local = np.einsum("mji,maj->mai", rot[idx], atoms - trans[idx, None, :])
        cols = slice(start + 12 * block, start + 12 * (block + 1))
        feats[idx, cols] = local.reshape(len(idx), 12)
    return feats


def pair_type(aa_i, aa_j):
    """Index of the unordered amino-acid pair among the 231 type pairs."""
    u = np.minimum(aa_i, aa_j)
    v = np.maximum(aa_i, aa_j)
    return u * N_AA - u * (u - 1) // 2 + (v - u)


def pair_types(sequence, masked=None):
    seq = np.asarray(sequence)
    types = pair_type(seq[:, None], seq[None, :])
    if masked is not None and len(masked):
        types[masked, :] = MASKED_PAIR_TYPE
        types[:, masked] = MASKED_PAIR_TYPE
    return types


def ca_distances(p):
    ca = p.ca
    return np.linalg.norm(ca[:, None] - ca[None], axis=-1)


def pair_encoding(distances, types, params, prefix="encoder/"):
    """Gaussian basis of the type-specific affine map of each distance, ``(N, N, D)``."""
    a = dc.gather_rows(params[prefix + "pe/a"], types)
    b = dc.gather_rows(params[prefix + "pe/b"], types)
    d = Tensor(np.asarray(distances, dtype=a.dtype))
    affine = dc.add(dc.mul(a, d), b)
    return dc.gaussian_density(affine, params[prefix + "pe/mu"], pe_sigma(params, prefix))


def pe_sigma(params, prefix="encoder/"):
    return dc.add(dc.softplus(params[prefix + "pe/sigma_raw"]), 1e-3)


# ---------------------------------------------------------------- parameters


def _uniform(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def add_linear(arrays, path, d_in, d_out, rng, bias=True):
    arrays[path + "/w"] = _uniform(rng, (d_in, d_out), d_in)
    if bias:
        arrays[path + "/b"] = _uniform(rng, (d_out,), d_in)


def init_encoder(cfg, rng, prefix="encoder/"):
    """Fresh encoder parameters as ``{path: float64 array}``."""
    arr = {}
    dm, dz, hidden = cfg.d_m, cfg.d_z, 2 * cfg.d_m
    add_linear(arr, prefix + "embed/l1", D_IN, dm, rng)
    add_linear(arr, prefix + "embed/l2", dm, dm, rng)
    arr[prefix + "embed/mask"] = _uniform(rng, (1, dm), D_IN)
    arr[prefix + "pe/a"] = np.ones(cfg.n_pair_types)
    arr[prefix + "pe/b"] = np.zeros(cfg.n_pair_types)
    arr[prefix + "pe/mu"] = np.linspace(0.0, 20.0, cfg.pe_channels)
    # softplus(raw) + 1e-3 == 1.0
    arr[prefix + "pe/sigma_raw"] = np.full(cfg.pe_channels, np.log(np.expm1(1.0 - 1e-3)))
    add_linear(arr, prefix + "pair_embed/l1", cfg.pe_channels, dz, rng)
    add_linear(arr, prefix + "pair_embed/l2", dz, dz, rng)
    for layer in range(cfg.layers):
        blk = f"{prefix}block{layer}/"
        for name in ("q", "k", "v", "o"):
            add_linear(arr, blk + "attn/" + name, dm, dm, rng, bias=name in ("v", "o"))
        add_linear(arr, blk + "attn/pair_bias", dz, cfg.heads, rng, bias=False)
        arr[blk + "ln1/g"] = np.ones(dm)
        arr[blk + "ln1/b"] = np.zeros(dm)
        add_linear(arr, blk + "ff/l1", dm, hidden, rng)
        add_linear(arr, blk + "ff/l2", hidden, dm, rng)
        arr[blk + "ln2/g"] = np.ones(dm)
        arr[blk + "ln2/b"] = np.zeros(dm)
        # the first pair-update layer acts on concat(m_i, m_j) split in halves
        arr[blk + "pair/wi"] = _uniform(rng, (dm, dz), 2 * dm)
        arr[blk + "pair/wj"] = _uniform(rng, (dm, dz), 2 * dm)
        arr[blk + "pair/b1"] = _uniform(rng, (dz,), 2 * dm)
        add_linear(arr, blk + "pair/l2", dz, dz, rng)
    return arr


def mlp(x, params, path, layers=2):
    """``layers`` dense layers with GELU between them."""
    for k in range(1, layers + 1):
        x = dc.linear(x, params[f"{path}/l{k}/w"], params.get(f"{path}/l{k}/b"))
        if k < layers:
            x = dc.gelu(x)
    return x


# ---------------------------------------------------------------- forward


def _attention(m, z, params, blk, cfg):
    n_res = m.shape[0]
    h, dh = cfg.heads, cfg.d_m // cfg.heads
    q = dc.transpose(dc.reshape(dc.matmul(m, params[blk + "attn/q/w"]), (n_res, h, dh)), (1, 0, 2))
    k = dc.transpose(dc.reshape(dc.matmul(m, params[blk + "attn/k/w"]), (n_res, h, dh)), (1, 2, 0))
    v = dc.transpose(
        dc.reshape(dc.linear(m, params[blk + "attn/v/w"], params[blk + "attn/v/b"]), (n_res, h, dh)),
        (1, 0, 2),
    )
    logits = dc.mul(dc.matmul(q, k), 1.0 / np.sqrt(dh))
    bias = dc.transpose(dc.matmul(z, params[blk + "attn/pair_bias/w"]), (2, 0, 1))
    attn = dc.softmax(dc.add(logits, bias), axis=-1)
    out = dc.reshape(dc.transpose(dc.matmul(attn, v), (1, 0, 2)), (n_res, cfg.d_m))
    return dc.linear(out, params[blk + "attn/o/w"], params[blk + "attn/o/b"])


def _norm(x, params, path):
    return dc.add(dc.mul(dc.layer_norm(x), params[path + "/g"]), params[path + "/b"])


def encode(params, protein, cfg=EncoderConfig(), mask=None, features=None, prefix="encoder/", need_pairs=True):
    """Run the encoder on one protein.

    ``mask`` lists residue positions whose identity is hidden: their one-hot
    block is zeroed, a learned mask embedding is added, and their pair types
    collapse to a reserved slot.  Geometry stays visible.  ``features`` may
    supply a precomputed (possibly differentiable) feature tensor.  With
    ``need_pairs=False`` the last block's pair update is skipped; nodes and
    pooled output are unchanged and ``pairs`` holds the pre-update state.
    """
    n_res = len(protein)
    dtype = params[prefix + "embed/l1/w"].dtype
    masked = None
    if mask is not None and len(mask):
        masked = np.unique(np.asarray(mask, dtype=np.intp))
        if masked[0] < 0 or masked[-1] >= n_res:
            raise MaskOutOfRange(f"mask positions must lie in [0, {n_res})")
    if features is None:
        feats = residue_features(protein)
        if masked is not None:
            feats[masked, :N_AA] = 0.0
        features = Tensor(feats.astype(dtype))
    x = dc.linear(features, params[prefix + "embed/l1/w"], params[prefix + "embed/l1/b"])
    if masked is not None:
        indicator = np.zeros((n_res, 1), dtype=dtype)
        indicator[masked] = 1.0
        x = dc.add(x, dc.matmul(Tensor(indicator), params[prefix + "embed/mask"]))
    m = dc.linear(dc.gelu(x), params[prefix + "embed/l2/w"], params[prefix + "embed/l2/b"])

    pe = pair_encoding(ca_distances(protein), pair_types(protein.sequence, masked), params, prefix)
    z = mlp(pe, params, prefix + "pair_embed")

    for layer in range(cfg.layers):
        blk = f"{prefix}block{layer}/"
        m = _norm(dc.add(m, _attention(m, z, params, blk, cfg)), params, blk + "ln1")
        ff = mlp(m, params, blk + "ff")
        m = _norm(dc.add(m, ff), params, blk + "ln2")
        if layer == cfg.layers - 1 and not need_pairs:
            break
        hid = dc.pair_hidden(
            dc.matmul(m, params[blk + "pair/wi"]), dc.matmul(m, params[blk + "pair/wj"]), params[blk + "pair/b1"]
        )
        z = dc.add(z, dc.linear(hid, params[blk + "pair/l2/w"], params[blk + "pair/l2/b"]))

    pooled = dc.reduce_mean(m, axis=0)
    return EncoderOutput(m, z, pooled)
