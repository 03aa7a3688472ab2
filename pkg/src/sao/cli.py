"""Command-line entry point: ``sao <command> ...``.

Exit codes: 0 success, 1 validation or check failure, 2 I/O or format error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import checks, evaluate, protein, synth, trainer
from .encoder import EncoderConfig, init_encoder

log = logging.getLogger("sao")

EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 1, 2

# Errors that mean "the bytes on disk are wrong or unreadable".
_IO_ERRORS = (
    OSError,
    json.JSONDecodeError,
    protein.SchemaError,
    protein.MalformedLine,
    trainer.CheckpointError,
)


def _load_config(args):
    """TrainConfig from ``--config`` with explicit flags taking precedence."""
    base = trainer.TrainConfig()
    if getattr(args, "config", None):
        raw = json.loads(Path(args.config).read_text())
        base = trainer.TrainConfig.from_dict(raw)
    return trainer.with_overrides(
        base,
        epochs=getattr(args, "epochs", None),
        seed=getattr(args, "seed", None),
        batch_size=getattr(args, "batch_size", None),
        ema_lambda=getattr(args, "ema_lambda", None),
        precision=getattr(args, "precision", None),
        lr_max_lr=getattr(args, "max_lr", None),
        lr_warmup_steps=getattr(args, "warmup_steps", None),
    )


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=1) + "\n")


# ---------------------------------------------------------------- commands


def cmd_gen(args):
    ds = synth.build_dataset(
        args.out, args.n_train, args.n_valid, args.n_test, args.len_min, args.len_max,
        args.sigma_t, args.sigma_r, args.seed, args.n_labels,
    )
    print(f"wrote {len(ds.entries)} pairs to {args.out}")
    return EXIT_OK


def cmd_pretrain(args):
    cfg = _load_config(args)
    ds = synth.Dataset.load(args.data)
    pairs = [p for p, _ in ds.load_split("train")]
    state, rows = trainer.pretrain(pairs, cfg, log_path=args.log)
    trainer.save_checkpoint(state, args.out)
    means = trainer.epoch_means(rows)
    print(f"pretrained {cfg.epochs} epochs, total loss {means[0]:.4f} -> {means[-1]:.4f}; saved {args.out}")
    return EXIT_OK


def cmd_finetune(args):
    cfg = _load_config(args)
    ds = synth.Dataset.load(args.data)
    state, rows = trainer.finetune(ds.load_split("train"), args.mode, cfg, init=args.init, log_path=args.log)
    trainer.save_checkpoint(state, args.out)
    means = trainer.epoch_means(rows, "bce")
    print(f"finetuned ({args.mode}) {cfg.epochs} epochs, bce {means[0]:.4f} -> {means[-1]:.4f}; saved {args.out}")
    return EXIT_OK


def _finetuned(path):
    state = trainer.load_checkpoint(path)
    if state.kind != "finetune":
        raise trainer.CheckpointError(f"{path} is a {state.kind} checkpoint; a finetuned model is required")
    return state


def cmd_eval(args):
    state = _finetuned(args.model)
    ds = synth.Dataset.load(args.data)
    report = evaluate.performance_gap(state, ds.load_split(args.split))
    _write_json(args.report, report.to_dict())
    print(f"fmax exp {report.experimental['fmax']:.4f} pred {report.predicted['fmax']:.4f} "
          f"gap {report.gap['fmax_gap']:+.4f}")
    return EXIT_OK


def cmd_bias(args):
    ds = synth.Dataset.load(args.data)
    pairs = [p for p, _ in ds.load_split(args.split)]
    if args.model:
        state = trainer.load_checkpoint(args.model)
        params, enc_cfg, name = state.online, state.config.encoder, str(args.model)
    else:
        enc_cfg = EncoderConfig()
        params = {k: trainer.Tensor(v.astype(np.float32))
                  for k, v in init_encoder(enc_cfg, np.random.default_rng(args.seed)).items()}
        name = f"random_init_seed{args.seed}"
    report = evaluate.embedding_bias(params, pairs, enc_cfg, name, args.dump_embeddings)
    _write_json(args.out, report.to_dict())
    print(f"mean paired embedding distance {report.mean_distance:.4f} over {len(pairs)} pairs")
    return EXIT_OK


def cmd_saliency(args):
    state = _finetuned(args.model)
    obj = json.loads(Path(args.protein).read_text())
    if "experimental" in obj:
        obj = obj["predicted" if args.structure == "predicted" else "experimental"]
    prot = protein.protein_from_dict(obj)
    values = evaluate.saliency(state, prot, args.label)
    _write_json(args.out, {"id": prot.id, "label": args.label, "saliency": values.tolist()})
    print(f"wrote {len(values)} saliency values to {args.out}")
    return EXIT_OK


def cmd_check(args):
    suite = checks.SUITES[args.suite]
    result = suite(seed=args.seed)
    print(result.summary())
    return EXIT_OK if result.passed else EXIT_INVALID


def cmd_parse_pdb(args):
    text = Path(args.inp).read_text()
    chains = protein.parse_pdb_lite(text, strict=args.strict)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for chain in chains:
        (out / f"{chain.id}.json").write_text(protein.write_protein_json(chain))
    print(f"wrote {len(chains)} chain(s) to {out}")
    return EXIT_OK


# ---------------------------------------------------------------- parser


def _add_train_flags(p, epochs_default=30):
    p.add_argument("--data", required=True, help="dataset directory written by `gen`")
    p.add_argument("--out", required=True, help="checkpoint path to write")
    p.add_argument("--epochs", type=int, default=None, help=f"training epochs (default {epochs_default})")
    p.add_argument("--config", help="JSON file mirroring TrainConfig; flags override it")
    p.add_argument("--seed", type=int, default=None, help="RNG seed (default 0)")
    p.add_argument("--batch-size", type=int, default=None, help="proteins per optimizer step (default 8)")
    p.add_argument("--max-lr", type=float, default=None, help="peak learning rate (default 1e-4)")
    p.add_argument("--warmup-steps", type=int, default=None, help="linear warmup steps (default 100)")
    p.add_argument("--precision", choices=("float32", "float64"), default=None, help="default float32")
    p.add_argument("--log", help="write per-step metrics as JSON lines here")


def build_parser():
    parser = argparse.ArgumentParser(prog="sao", description=__doc__.splitlines()[0],
                                     formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)
    fmt = argparse.ArgumentDefaultsHelpFormatter

    p = sub.add_parser("gen", help="write a synthetic paired dataset", formatter_class=fmt)
    p.add_argument("--out", required=True, help="dataset directory to create")
    p.add_argument("--n-train", type=int, default=256, help="training pairs")
    p.add_argument("--n-valid", type=int, default=32, help="validation pairs")
    p.add_argument("--n-test", type=int, default=64, help="test pairs")
    p.add_argument("--len-min", type=int, default=48, help="shortest chain")
    p.add_argument("--len-max", type=int, default=96, help="longest chain")
    p.add_argument("--sigma-t", type=float, default=0.8, help="translation noise per residue (A)")
    p.add_argument("--sigma-r", type=float, default=0.15, help="rotation noise per residue (rad)")
    p.add_argument("--n-labels", type=int, default=8, help="labels per protein")
    p.add_argument("--seed", type=int, default=7, help="dataset seed")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("pretrain", help="pretrain the encoder on structure pairs", formatter_class=fmt)
    _add_train_flags(p)
    p.add_argument("--ema-lambda", type=float, default=None, help="target EMA decay (default 0.99)")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("finetune", help="train the downstream property predictor", formatter_class=fmt)
    _add_train_flags(p)
    p.add_argument("--mode", choices=trainer.MODES, required=True)
    p.add_argument("--init", help="pretraining checkpoint (required for --mode sao)")
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("eval", help="Fmax/AUPR on experimental vs predicted structures", formatter_class=fmt)
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--model", required=True, help="finetuned checkpoint")
    p.add_argument("--report", required=True, help="EvalReport JSON to write")
    p.add_argument("--split", default="test", help="dataset split to score")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bias", help="paired embedding distance of an encoder", formatter_class=fmt)
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--model", help="checkpoint; omit to use a randomly initialized encoder")
    p.add_argument("--seed", type=int, default=0, help="seed of the random encoder when --model is omitted")
    p.add_argument("--out", required=True, help="BiasReport JSON to write")
    p.add_argument("--dump-embeddings", help="JSON lines of raw pooled embeddings")
    p.add_argument("--split", default="test", help="dataset split to embed")
    p.set_defaults(func=cmd_bias)

    p = sub.add_parser("saliency", help="per-residue gradient saliency", formatter_class=fmt)
    p.add_argument("--model", required=True, help="finetuned checkpoint")
    p.add_argument("--protein", required=True, help="protein JSON (or a pair JSON)")
    p.add_argument("--structure", choices=("experimental", "predicted"), default="experimental",
                   help="which member of a pair file to use")
    p.add_argument("--label", type=int, required=True, help="label index")
    p.add_argument("--out", required=True, help="saliency JSON to write")
    p.set_defaults(func=cmd_saliency)

    p = sub.add_parser("check", help="run a property suite", formatter_class=fmt)
    p.add_argument("suite", choices=sorted(checks.SUITES), help="property suite to run")
    p.add_argument("--seed", type=int, default=0, help="case generator seed")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("parse-pdb", help="extract backbone chains from a PDB file", formatter_class=fmt)
    p.add_argument("--in", dest="inp", required=True, help="PDB file")
    p.add_argument("--out-dir", required=True, help="directory for one protein JSON per chain")
    p.add_argument("--strict", action="store_true", help="reject malformed ATOM lines instead of skipping")
    p.set_defaults(func=cmd_parse_pdb)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except _IO_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, IndexError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
