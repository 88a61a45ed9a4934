"""Command-line entry point: ``spdvae <subcommand> [options]``.

Configuration comes from defaults, then ``--config`` (TOML or JSON), then
``--set key=value`` overrides, then explicit flags. Errors are reported on
stderr as one JSON line; usage errors exit with 2, runtime failures with 1.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import checkpoint, dataio
from .errors import InvalidInput, SpdVaeError

log = logging.getLogger("spdvae")

JOBS_ENV = "SPDVAE_JOBS"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _error_line(kind: str, message: str, code: int) -> str:
    return json.dumps({"error": kind, "message": message, "exit_code": code}, sort_keys=True)


def _common(p):
    p.add_argument("--config", help="TOML or JSON run configuration")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a configuration key (repeatable)")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="spdvae", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("preprocess", help="trial container -> covariance container")
    _common(p)
    p.add_argument("--data")
    p.add_argument("--out")

    p = sub.add_parser("synth-data", help="write a synthetic Wishart covariance dataset")
    _common(p)
    p.add_argument("--subjects", type=int, default=4)
    p.add_argument("--trials", type=int, default=200)
    p.add_argument("--dim", type=int, default=8)
    p.add_argument("--separation", type=float, default=1.0)
    p.add_argument("--spread", type=float, default=0.5)
    p.add_argument("--df", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")

    p = sub.add_parser("train", help="train one class model")
    _common(p)
    p.add_argument("--data")
    p.add_argument("--class", dest="class_index", type=int, required=True)
    p.add_argument("--holdout", type=int, help="align and train without this subject")
    p.add_argument("--out")
    p.add_argument("--curve", help="training-curve CSV path")

    p = sub.add_parser("generate", help="sample synthetic matrices from a checkpoint")
    _common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--mode", choices=("prior", "posterior"), default="prior")
    p.add_argument("--data", help="real matrices for posterior sampling")
    p.add_argument("--label", type=int, default=0, help="label attached to the output")
    p.add_argument("--out")

    p = sub.add_parser("evaluate", help="full leave-one-subject-out protocol")
    _common(p)
    p.add_argument("--data")
    p.add_argument("--out")
    p.add_argument("--no-figures", action="store_true")

    p = sub.add_parser("fidelity", help="variance ratio and geometric diversity")
    _common(p)
    p.add_argument("--real", required=True)
    p.add_argument("--synthetic", required=True)
    p.add_argument("--out")

    p = sub.add_parser("scramble-check", help="scrambled-label diagnostic on one fold")
    _common(p)
    p.add_argument("--data")
    p.add_argument("--subject", type=int)
    p.add_argument("--out")

    p = sub.add_parser("export-latents", help="latent means of a dataset as CSV")
    _common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--data")
    p.add_argument("--out")
    return parser


def _config(args) -> dataio.RunConfig:
    overrides = dict(dataio.parse_override(o) for o in args.overrides)
    try:
        cfg = dataio.load_config(args.config, overrides)
    except (InvalidInput, TypeError) as exc:
        raise UsageError(str(exc)) from exc
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot read config {args.config}: {exc}") from exc
    explicit = {k: getattr(args, k) for k in ("data", "out") if getattr(args, k, None) is not None}
    if getattr(args, "seed", None) is not None:
        explicit["seed"] = args.seed
    if "n_jobs" not in overrides and os.environ.get(JOBS_ENV):
        explicit["n_jobs"] = int(os.environ[JOBS_ENV])
    return cfg.replace(**explicit)


def _need(cfg, key):
    value = getattr(cfg, key)
    if value is None:
        raise UsageError(f"missing config key: {key}")
    return value


def _emit(obj, out):
    text = json.dumps(obj, indent=1, sort_keys=True, default=float) + "\n"
    if out:
        dataio.atomic_write_text(out, text)
    else:
        sys.stdout.write(text)


def cmd_preprocess(args, cfg):
    from .preprocess import preprocess_pipeline
    trials = dataio.read_trials(_need(cfg, "data"))
    ds = preprocess_pipeline(trials, trials.sampling_rate, (cfg.band_low, cfg.band_high),
                             trials.units, cfg.ems_decay, cfg.ems_eps)
    dataio.write_covariances(_need(cfg, "out"), ds, {"source": str(cfg.data), "stage": "preprocess"})
    log.info("wrote %d matrices", len(ds))


def cmd_synth(args, cfg):
    ds = dataio.synth_dataset(args.subjects, args.trials, args.dim, args.separation, args.spread,
                              df=args.df, seed=cfg.seed)
    dataio.write_covariances(_need(cfg, "out"), ds)


def _training_data(cfg, class_index, holdout):
    from .evaluate import align_training
    ds = dataio.read_covariances(_need(cfg, "data"))
    if holdout is not None:
        ds = ds.subset(ds.subject_ids != holdout)
    aligned, _, _ = align_training(ds, len(ds.class_names), cfg.frechet_tol, cfg.frechet_max_iter)
    if class_index not in range(len(ds.class_names)):
        raise UsageError(f"--class must be in 0..{len(ds.class_names) - 1}")
    return aligned.matrices[aligned.labels == class_index]


def cmd_train(args, cfg):
    from .report import CURVE_FIELDS, write_csv
    from .vae import train
    x = _training_data(cfg, args.class_index, args.holdout)
    result = train(x, cfg.vae_config(x.shape[-1]), cfg.train_config(), seed=cfg.seed)
    hyper = cfg.to_dict()
    hyper.update(class_index=args.class_index, holdout=args.holdout)
    checkpoint.save_checkpoint(_need(cfg, "out"), result.model, hyper)
    if args.curve:
        write_csv(args.curve, result.history, CURVE_FIELDS)


def cmd_generate(args, cfg):
    from .generate import GenerationConfig, generate
    from .preprocess import CovarianceDataset
    model, _ = checkpoint.load_checkpoint(args.model)
    gcfg = GenerationConfig(args.mode, cfg.noise_scale, cfg.prior_count, cfg.posterior_ratio, cfg.seed)
    real = None
    if args.mode == "posterior":
        real_ds = dataio.read_covariances(_need(cfg, "data"))
        real = real_ds.matrices[real_ds.labels == args.label] if np.any(real_ds.labels == args.label) \
            else real_ds.matrices
    mats = generate(model, gcfg, real)
    ds = CovarianceDataset(mats, np.full(len(mats), args.label), np.zeros(len(mats), dtype=int))
    provenance = {"mode": args.mode, "seed": cfg.seed, "noise_scale": cfg.noise_scale,
                  "checkpoint_sha256": checkpoint.checkpoint_hash(args.model)}
    dataio.write_covariances(_need(cfg, "out"), ds, provenance)


def cmd_evaluate(args, cfg):
    from .evaluate import run_experiment
    from .report import write_report
    ds = dataio.read_covariances(_need(cfg, "data"))
    out = _need(cfg, "out")
    report, folds = run_experiment(ds, cfg)
    write_report(report, folds, out, figures=not args.no_figures)


def cmd_fidelity(args, cfg):
    from dataclasses import asdict
    from .evaluate import fidelity_metrics
    real = dataio.read_covariances(args.real)
    synth = dataio.read_covariances(args.synthetic)
    # a single class model's output is compared with that class only
    real = real.subset(np.isin(real.labels, np.unique(synth.labels)))
    _emit(asdict(fidelity_metrics(real, synth, cfg.fidelity_max_pairs, cfg.seed)), args.out)


def cmd_scramble(args, cfg):
    from .evaluate import scramble_check
    ds = dataio.read_covariances(_need(cfg, "data"))
    _emit(scramble_check(ds, cfg, test_subject=args.subject), cfg.out)


def cmd_export_latents(args, cfg):
    from .report import write_csv
    from .vae import encode_batch
    model, _ = checkpoint.load_checkpoint(args.model)
    ds = dataio.read_covariances(_need(cfg, "data"))
    mu, _ = encode_batch(model, ds.matrices)
    fields = ["index", "subject_id", "label"] + [f"z{i}" for i in range(mu.shape[1])]
    rows = [dict(index=i, subject_id=int(s), label=int(k), **{f"z{j}": float(v) for j, v in enumerate(row)})
            for i, (s, k, row) in enumerate(zip(ds.subject_ids, ds.labels, mu))]
    write_csv(_need(cfg, "out"), rows, fields)


COMMANDS = {
    "preprocess": cmd_preprocess,
    "synth-data": cmd_synth,
    "train": cmd_train,
    "generate": cmd_generate,
    "evaluate": cmd_evaluate,
    "fidelity": cmd_fidelity,
    "scramble-check": cmd_scramble,
    "export-latents": cmd_export_latents,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not args.command:
            raise UsageError("a subcommand is required: " + ", ".join(COMMANDS))
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        cfg = _config(args)
        COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        print(_error_line("usage", str(exc), 2), file=sys.stderr)
        return 2
    except (SpdVaeError, OSError) as exc:
        print(_error_line(type(exc).__name__, str(exc), 1), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
