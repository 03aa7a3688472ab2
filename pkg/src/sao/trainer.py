"""Pretraining with an EMA target network, downstream finetuning, checkpoints."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import diffcore as dc
from . import heads
from .diffcore import ParameterStore, Tensor
from .encoder import EncoderConfig, encode, init_encoder
from .losses import LossWeights, align_loss, bce_multilabel_loss, combine, fape_loss, mlm_loss
from .synth import EmptyDataset, make_mask_view

CHECKPOINT_FORMAT = 1
TARGET_PREFIXES = ("encoder/", "projector/")
MODES = ("vanilla", "tonp", "mixed", "sao")
_ADAM_B1, _ADAM_B2, _ADAM_EPS = 0.9, 0.999, 1e-8


class CheckpointError(ValueError):
    pass


class FormatVersionMismatch(CheckpointError):
    pass


class ManifestLengthMismatch(CheckpointError):
    pass


class IoError(OSError):
    pass


class MissingCheckpoint(ValueError):
    pass


# ---------------------------------------------------------------- config


@dataclass(frozen=True)
class LRSchedule:
    warmup_steps: int = 100
    max_lr: float = 1e-4
    decay_per_epoch: float = 0.99

    def __post_init__(self):
        if self.max_lr <= 0:
            raise ValueError("max_lr must be positive")
        if self.warmup_steps < 0:
            raise ValueError("warmup_steps must be >= 0")
        if not 0 < self.decay_per_epoch <= 1:
            raise ValueError("decay_per_epoch must lie in (0, 1]")

    def at(self, step, epoch):
        warm = 1.0 if self.warmup_steps == 0 else min(step / self.warmup_steps, 1.0)
        return self.max_lr * warm * self.decay_per_epoch**epoch


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 8
    ema_lambda: float = 0.99
    weights: LossWeights = field(default_factory=LossWeights)
    lr: LRSchedule = field(default_factory=LRSchedule)
    seed: int = 0
    precision: str = "float32"
    mask_ratio: float = 0.15
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    fape_clamp: float | None = None
    grad_clip: float | None = None

    def __post_init__(self):
        if not 0.0 <= self.ema_lambda <= 1.0:
            raise ValueError("ema_lambda must lie in [0, 1]")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.precision not in ("float32", "float64"):
            raise ValueError("precision must be float32 or float64")
        if not 0 < self.mask_ratio < 1:
            raise ValueError("mask_ratio must lie in (0, 1)")

    @property
    def dtype(self):
        return np.dtype(self.precision)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "weights" in d:
            d["weights"] = LossWeights(**d["weights"])
        if "lr" in d:
            d["lr"] = LRSchedule(**d["lr"])
        if "encoder" in d:
            d["encoder"] = EncoderConfig(**d["encoder"])
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


# ---------------------------------------------------------------- state


@dataclass
class ModelState:
    """Online parameters, optional EMA target, and Adam moments.

    ``kind`` is ``"pretrain"`` (online = encoder + projector + predictor +
    denoise + mlm, with a target) or ``"finetune"`` (encoder + downstream).
    """

    online: ParameterStore
    target: ParameterStore | None
    config: TrainConfig
    kind: str = "pretrain"
    step: int = 0
    epoch: int = 0
    adam_m: dict = field(default_factory=dict)
    adam_v: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def tensors(self):
        """Every array in the state under a namespaced path."""
        out = {f"online/{k}": v.data for k, v in self.online.items()}
        if self.target is not None:
            out.update({f"target/{k}": v.data for k, v in self.target.items()})
        out.update({f"adam_m/{k}": v for k, v in self.adam_m.items()})
        out.update({f"adam_v/{k}": v for k, v in self.adam_v.items()})
        return out


def _rngs(seed, n):
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


def _store(arrays, dtype):
    return ParameterStore({k: Tensor(np.asarray(v, dtype=dtype)) for k, v in arrays.items()})


def init_model(config=TrainConfig(), seed=None):
    """Fresh pretraining state; the target is an exact copy of encoder + projector."""
    seed = config.seed if seed is None else seed
    rng_enc, rng_heads = _rngs(seed, 2)
    d_m = config.encoder.d_m
    arrays = init_encoder(config.encoder, rng_enc)
    arrays.update(heads.init_projector(d_m, rng_heads))
    arrays.update(heads.init_predictor(rng_heads))
    arrays.update(heads.init_denoise(d_m, rng_heads))
    arrays.update(heads.init_mlm(d_m, rng_heads))
    online = _store(arrays, config.dtype)
    return ModelState(online, online.copy(TARGET_PREFIXES), config, "pretrain", meta={"seed": seed})


def init_finetune_model(config, n_labels, seed=None, encoder_from=None):
    """Encoder + downstream head.  ``encoder_from`` supplies pretrained encoder weights."""
    seed = config.seed if seed is None else seed
    rng_enc, rng_head = _rngs(seed + 1_000_003, 2)
    arrays = init_encoder(config.encoder, rng_enc)
    if encoder_from is not None:
        for path in arrays:
            if path not in encoder_from:
                raise MissingCheckpoint(f"pretrained state lacks {path}")
            arrays[path] = np.array(encoder_from[path].data)
    arrays.update(heads.init_downstream(config.encoder.d_m, n_labels, rng_head))
    return ModelState(_store(arrays, config.dtype), None, config, "finetune", meta={"seed": seed, "n_labels": n_labels})


def ema_update(state, lam):
    """``target <- lam * target + (1 - lam) * online`` for every target tensor."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lambda must lie in [0, 1]")
    lam = float(lam)
    for path, t in state.target.items():
        t.data = lam * t.data + (1.0 - lam) * state.online[path].data


# ---------------------------------------------------------------- optimizer


def optimizer_step(state, grads, lr=None):
    """One Adam update of the online store; advances ``state.step``.

    The learning rate defaults to the schedule value at the current step and
    epoch, so the very first step runs with ``lr = 0``.
    """
    cfg = state.config
    if set(grads) != set(state.online):
        raise dc.ShapeMismatch("gradient paths do not match the online store")
    if lr is None:
        lr = cfg.lr.at(state.step, state.epoch)
    if cfg.grad_clip is not None:
        norm = math.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values()))
        if norm > cfg.grad_clip:
            grads = {k: g * (cfg.grad_clip / norm) for k, g in grads.items()}
    t = state.step + 1
    c1 = 1.0 - _ADAM_B1**t
    c2 = 1.0 - _ADAM_B2**t
    for path, p in state.online.items():
        g = grads[path]
        if g.shape != p.shape:
            raise dc.ShapeMismatch(f"{path}: gradient {g.shape} vs parameter {p.shape}")
        m = state.adam_m.get(path)
        v = state.adam_v.get(path)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = _ADAM_B1 * m + (1.0 - _ADAM_B1) * g
        v = _ADAM_B2 * v + (1.0 - _ADAM_B2) * (g * g)
        state.adam_m[path], state.adam_v[path] = m, v
        if lr:
            p.data = p.data - (lr / c1) * m / (np.sqrt(v / c2) + _ADAM_EPS)
    state.step += 1
    return lr


# ---------------------------------------------------------------- pretraining


def pretrain_loss(state, pair, mask_seed):
    """Per-protein objective: ``(total, LossBreakdown)``.

    The online network sees the predicted structure and the mask view of the
    experimental one; the target sees the unmasked experimental structure and
    its projection is detached inside the alignment loss.
    """
    cfg = state.config
    exp, pred = pair.experimental, pair.predicted
    view = make_mask_view(exp, cfg.mask_ratio, mask_seed)
    online, target = state.online, state.target
    out_pred = encode(online, pred, cfg.encoder, need_pairs=False)
    out_mask = encode(online, exp, cfg.encoder, mask=view.masked_positions, need_pairs=False)
    out_tgt = encode(target, exp, cfg.encoder, need_pairs=False)
    z_tgt = heads.project(target, out_tgt.pooled)
    _, q_pred = heads.project_predict(online, out_pred.pooled)
    _, q_mask = heads.project_predict(online, out_mask.pooled)
    mlm = mlm_loss(heads.mlm_logits(online, out_mask.nodes), exp.sequence, view.masked_positions)
    den = heads.denoise_update(online, out_pred.nodes, pred.frames)
    true = exp.frames
    mse = fape_loss(den.rotation, den.translation, den.atoms, true.rotation, true.translation, exp.backbone,
                    clamp=cfg.fape_clamp)
    return combine(align_loss(q_pred, z_tgt), align_loss(q_mask, z_tgt), mlm, mse, cfg.weights)


def _batches(n, batch_size, rng):
    order = rng.permutation(n)
    return [order[i : i + batch_size] for i in range(0, n, batch_size)]


def _accumulate(state, items, loss_fn):
    """Sum per-item gradients in a fixed order and average them."""
    total = None
    records = []
    for item in items:
        loss, record = loss_fn(item)
        grads = dc.backward(loss, state.online)
        records.append(record)
        if total is None:
            # backward may hand the same array to several parameters
            total = {k: np.array(g) for k, g in grads.items()}
        else:
            for k in total:
                total[k] += grads[k]
    scale = 1.0 / len(items)
    return {k: g * scale for k, g in total.items()}, records


def _write_log(handle, row):
    if handle is not None:
        handle.write(json.dumps(row) + "\n")
        handle.flush()


def pretrain(pairs, config=TrainConfig(), state=None, log_path=None, optimize=True, on_step=None):
    """Run the pretraining loop over a list of :class:`StructurePair`.

    Each step averages per-protein gradients over a batch, applies Adam to the
    online store and then the EMA update to the target.  ``optimize=False``
    freezes the online parameters (the EMA still runs).  ``on_step(state, row)``
    is called after each step.  Returns ``(state, log_rows)``.
    """
    pairs = list(pairs)
    if not pairs:
        raise EmptyDataset("pretraining needs at least one pair")
    state = state or init_model(config)
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 1]))
    rows = []
    handle = open(log_path, "w") if log_path else None
    try:
        with dc.precision(config.dtype):
            for epoch in range(config.epochs):
                state.epoch = epoch
                for batch in _batches(len(pairs), config.batch_size, rng):
                    mask_seeds = rng.integers(0, 2**31, size=len(batch))
                    grads, recs = _accumulate(
                        state, list(zip(batch, mask_seeds)),
                        lambda item: pretrain_loss(state, pairs[item[0]], int(item[1])),
                    )
                    if optimize:
                        lr = optimizer_step(state, grads)
                    else:
                        lr = 0.0
                        state.step += 1
                    ema_update(state, config.ema_lambda)
                    row = {"step": state.step - 1, "epoch": epoch, "lr": lr}
                    for key in ("align_pred", "align_mask", "mlm", "mse", "total"):
                        row[key] = float(np.mean([getattr(r, key) for r in recs]))
                    rows.append(row)
                    _write_log(handle, row)
                    if on_step is not None:
                        on_step(state, row)
            state.epoch = config.epochs
    finally:
        if handle is not None:
            handle.close()
    return state, rows


def epoch_means(rows, key="total"):
    by_epoch = {}
    for r in rows:
        by_epoch.setdefault(r["epoch"], []).append(r[key])
    return [float(np.mean(by_epoch[e])) for e in sorted(by_epoch)]


# ---------------------------------------------------------------- finetuning


def finetune_samples(pairs_with_labels, mode):
    """``(protein, labels)`` samples a mode trains on, in dataset order."""
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    out = []
    for pair, labels in pairs_with_labels:
        if mode in ("vanilla", "sao", "mixed"):
            out.append((pair.experimental, labels))
        if mode in ("tonp", "mixed"):
            out.append((pair.predicted, labels))
    return out


def downstream_forward(params, protein, cfg):
    out = encode(params, protein, cfg, need_pairs=False)
    return heads.downstream_logits(params, out.pooled)


def finetune(pairs_with_labels, mode, config=TrainConfig(), init=None, log_path=None, on_step=None):
    """Train encoder + downstream head with multi-label BCE.

    ``init`` is a pretraining :class:`ModelState` (or a checkpoint path) and
    is required for ``mode="sao"``; only its online encoder is used.
    Returns ``(state, log_rows)``.
    """
    data = list(pairs_with_labels)
    if not data:
        raise EmptyDataset("finetuning needs at least one labelled pair")
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    if mode == "sao" and init is None:
        raise MissingCheckpoint("mode 'sao' needs a pretrained checkpoint")
    if isinstance(init, (str, Path)):
        init = load_checkpoint(init)
    samples = finetune_samples(data, mode)
    n_labels = len(data[0][1])
    state = init_finetune_model(config, n_labels, encoder_from=init.online if init is not None else None)
    state.meta["mode"] = mode
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 2]))
    rows = []
    handle = open(log_path, "w") if log_path else None

    def loss_fn(idx):
        protein, labels = samples[idx]
        loss = bce_multilabel_loss(downstream_forward(state.online, protein, config.encoder), labels)
        return loss, float(loss.data)

    try:
        with dc.precision(config.dtype):
            for epoch in range(config.epochs):
                state.epoch = epoch
                for batch in _batches(len(samples), config.batch_size, rng):
                    grads, losses = _accumulate(state, list(batch), loss_fn)
                    lr = optimizer_step(state, grads)
                    row = {"step": state.step - 1, "epoch": epoch, "lr": lr, "bce": float(np.mean(losses)),
                           "n": len(batch)}
                    rows.append(row)
                    _write_log(handle, row)
                    if on_step is not None:
                        on_step(state, row)
            state.epoch = config.epochs
    finally:
        if handle is not None:
            handle.close()
    return state, rows


def predict_scores(state, proteins):
    """Sigmoid label scores, ``(len(proteins), K)`` float64."""
    cfg = state.config
    params = {k: Tensor(v.data) for k, v in state.online.items()}
    out = []
    with dc.precision(cfg.dtype):
        for p in proteins:
            logits = downstream_forward(params, p, cfg.encoder).data.astype(np.float64)
            out.append(1.0 / (1.0 + np.exp(-logits)))
    return np.array(out)


def pooled_embeddings(params, proteins, cfg):
    """Pooled encoder outputs for each protein, ``(n, d_m)`` float64."""
    frozen = {k: Tensor(v.data) for k, v in params.items() if k.startswith("encoder/")}
    dtype = next(iter(frozen.values())).dtype
    with dc.precision(dtype):
        return np.array([encode(frozen, p, cfg, need_pairs=False).pooled.data.astype(np.float64)
                         for p in proteins])


# ---------------------------------------------------------------- checkpoints


def save_checkpoint(state, path):
    """JSON header line, then little-endian float32 arrays in manifest order."""
    tensors = state.tensors()
    manifest, offset = [], 0
    for name in tensors:
        arr = tensors[name]
        manifest.append({"path": name, "shape": list(arr.shape), "offset": offset})
        offset += 4 * int(np.prod(arr.shape, dtype=np.int64))
    header = {
        "format": CHECKPOINT_FORMAT,
        "kind": state.kind,
        "config": state.config.to_dict(),
        "step": state.step,
        "epoch": state.epoch,
        "meta": state.meta,
        "manifest": manifest,
    }
    try:
        with open(path, "wb") as f:
            f.write(json.dumps(header).encode() + b"\n")
            for name in tensors:
                f.write(np.ascontiguousarray(tensors[name], dtype="<f4").tobytes())
    except OSError as exc:
        raise IoError(f"cannot write checkpoint {path}: {exc}") from exc


def read_checkpoint_header(path):
    try:
        with open(path, "rb") as f:
            line = f.readline()
            payload = f.read()
    except OSError as exc:
        raise IoError(f"cannot read checkpoint {path}: {exc}") from exc
    try:
        header = json.loads(line)
    except ValueError as exc:
        raise CheckpointError(f"{path}: header is not valid JSON") from exc
    if not isinstance(header, dict) or "format" not in header:
        raise CheckpointError(f"{path}: header lacks a format field")
    if header["format"] != CHECKPOINT_FORMAT:
        raise FormatVersionMismatch(f"{path}: format {header['format']}, expected {CHECKPOINT_FORMAT}")
    return header, payload


def load_checkpoint(path):
    header, payload = read_checkpoint_header(path)
    expected = sum(4 * int(np.prod(e["shape"], dtype=np.int64)) for e in header["manifest"])
    if len(payload) != expected:
        raise ManifestLengthMismatch(f"{path}: payload has {len(payload)} bytes, manifest needs {expected}")
    config = TrainConfig.from_dict(header["config"])
    groups = {"online": {}, "target": {}, "adam_m": {}, "adam_v": {}}
    for e in header["manifest"]:
        count = int(np.prod(e["shape"], dtype=np.int64))
        arr = np.frombuffer(payload, dtype="<f4", count=count, offset=e["offset"]).reshape(e["shape"])
        group, name = e["path"].split("/", 1)
        groups[group][name] = arr.astype(config.dtype)
    target = _store(groups["target"], config.dtype) if groups["target"] else None
    return ModelState(
        _store(groups["online"], config.dtype), target, config, header["kind"],
        header["step"], header["epoch"], groups["adam_m"], groups["adam_v"], header.get("meta", {}),
    )


def with_overrides(config, **overrides):
    """Copy of ``config`` with non-None overrides applied (``lr_*`` keys reach the schedule)."""
    lr = {k[3:]: v for k, v in overrides.items() if k.startswith("lr_") and v is not None}
    top = {k: v for k, v in overrides.items() if not k.startswith("lr_") and v is not None}
    if lr:
        top["lr"] = replace(config.lr, **lr)
    return replace(config, **top)
