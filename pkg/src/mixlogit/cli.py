"""Command-line entry point: ``mixlogit {estimate,transfer,benchmark,evaluate,synth}``.

Exit codes: 0 success, 1 numerical failure, 2 usage or input error.
Set ``MIXLOGIT_LOG`` (DEBUG, INFO, WARNING, ...) for verbosity.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .controller import (EarlyStopConfig, direct_application, evaluate, run_benchmark,
                         run_esbda)
from .data_io import (GroundTruth, generate_synthetic, load_dataset, load_model, load_plan,
                      load_spec, model_to_json, save_dataset, write_text_atomic)
from .engine import GibbsConfig
from .errors import DataError, MixLogitError, NumericalError, SpecificationError
from .metrics import behavioral_consistency
from .reports import consistency_csv, stop_report, write_benchmark, write_estimation
from .samplers import rng_stream

log = logging.getLogger("mixlogit")

SYNTH_STREAM = 3


class UsageError(MixLogitError):
    pass


def _existing(path, what):
    if path is None:
        raise UsageError(f"--{what} is required")
    p = Path(path)
    if not p.exists():
        raise UsageError(f"{what} path does not exist: {p}")
    return p


def _gibbs(args) -> GibbsConfig:
    return GibbsConfig(max_epochs=args.epochs, thin=args.thin, plot_interval=args.plot_interval,
                       draws=args.draws, seed=args.seed, window=args.window,
                       workers=args.workers)


def _stop(args) -> EarlyStopConfig:
    if getattr(args, "no_early_stop", False):
        return EarlyStopConfig(patience=None)
    return EarlyStopConfig(patience=args.patience, min_epochs=args.min_epochs)


def _json_out(path, doc):
    write_text_atomic(path, json.dumps(doc, indent=2) + "\n")


def cmd_estimate(args) -> int:
    spec = load_spec(_existing(args.spec, "spec"))
    train = load_dataset(_existing(args.data or args.train, "data"), spec)
    validation = load_dataset(_existing(args.validation, "validation"), spec) \
        if args.validation else None
    gibbs = _gibbs(args)
    summary, trace = run_esbda(train, validation, None, gibbs, EarlyStopConfig(patience=None))
    out = Path(args.out)
    write_estimation(out, summary, trace, gibbs.plot_interval, "nonconjugate", seed=args.seed,
                     provenance="nonconjugate estimate")
    print(f"estimated {spec.p} random and {spec.q} fixed coefficients; wrote {out}")
    return 0


def cmd_transfer(args) -> int:
    spec = load_spec(_existing(args.spec, "spec"))
    prior = load_model(_existing(args.prior, "prior"), spec)
    train = load_dataset(_existing(args.train or args.data, "train"), spec)
    validation = load_dataset(_existing(args.validation, "validation"), spec)
    gibbs, stop = _gibbs(args), _stop(args)
    summary, trace = run_esbda(train, validation, prior, gibbs, stop)
    out = Path(args.out)
    label = "bda" if stop.patience is None else "esbda"
    write_estimation(out, summary, trace, gibbs.plot_interval, label, seed=args.seed,
                     provenance=f"{label} transfer of {prior.provenance or args.prior}",
                     output_epoch=trace.output_epoch if trace.stopped else None)
    report = stop_report(trace, stop.patience)
    if args.test:
        test = load_dataset(_existing(args.test, "test"), spec)
        m = evaluate(summary.params(), test, gibbs.draws, gibbs.seed)
        report["test"] = {"cel": m.cel, "gmpca": m.gmpca}
    _json_out(out / "stop_report.json", report)
    if args.cost:
        ref = _prior_summary(prior, summary)
        write_text_atomic(out / "consistency.csv",
                          consistency_csv({label: behavioral_consistency(summary, ref, args.cost)}))
    if trace.stopped:
        print(f"early stop at epoch {trace.stop_epoch}; output epoch {trace.output_epoch} "
              f"(validation CEL {trace.best_cel:.4f})")
    else:
        print(f"no early stop; ran {trace.epochs[-1] if trace.epochs else 0} epochs")
    return 0


def _prior_summary(prior, like):
    """A summary-shaped view of a prior model for consistency screening."""
    from dataclasses import replace

    from .model import transform_latent

    sim = transform_latent(prior.zeta, prior.spec.kinds)
    zeros_p, zeros_q = np.zeros(prior.spec.p), np.zeros(prior.spec.q)
    return replace(like, zeta_mean=prior.zeta, zeta_sd=zeros_p,
                   sigma_mean=np.sqrt(np.diag(prior.omega)), sigma_sd=zeros_p,
                   omega_mean=prior.omega, alpha_mean=prior.alpha, alpha_sd=zeros_q,
                   simulated_mean=sim, simulated_sd=zeros_p, n_draws=0)


def cmd_benchmark(args) -> int:
    spec, levels, options = load_plan(_existing(args.plan, "plan"))
    gibbs, stop = _gibbs(args), _stop(args)
    seed = options.get("seed", args.seed)
    report = run_benchmark(levels, gibbs, stop, seed=seed,
                           cost_coefficient=args.cost or options.get("cost_coefficient"))
    written = write_benchmark(report, args.out, gibbs.plot_interval, stop.patience)
    print(f"benchmark over {len(levels)} levels; wrote {len(written)} files to {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    spec = load_spec(_existing(args.spec, "spec"))
    model = load_model(_existing(args.prior or args.model, "prior"), spec)
    data = load_dataset(_existing(args.data, "data"), spec)
    m = direct_application(model, data, args.draws, args.seed)
    doc = {"cel": m.cel, "gmpca": m.gmpca, "situations": data.n_situations}
    print(json.dumps(doc))
    if args.out:
        _json_out(Path(args.out) / "metrics.json", doc)
    return 0


def cmd_synth(args) -> int:
    spec = load_spec(_existing(args.spec, "spec"))
    if args.truth:
        t = load_model(_existing(args.truth, "truth"), spec)
        truth = GroundTruth(spec, t.alpha, t.zeta, t.omega, args.seed)
    else:
        truth = GroundTruth(spec, np.full(spec.q, 0.5), np.zeros(spec.p),
                            0.25 * np.eye(spec.p), args.seed)
    data = generate_synthetic(truth, args.individuals, args.situations,
                              rng_stream(args.seed, SYNTH_STREAM), group_size=args.group_size,
                              id_prefix=args.prefix)
    out = Path(args.out)
    save_dataset(data, out / "data.csv")
    write_text_atomic(out / "truth.json", model_to_json(truth, provenance="synthetic truth"))
    print(f"wrote {data.n_situations} situations for {len(data)} individuals to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--spec", help="utility specification (JSON)")
    common.add_argument("--data", help="dataset CSV")
    common.add_argument("--train", help="training fold CSV")
    common.add_argument("--validation", help="validation fold CSV")
    common.add_argument("--test", help="test fold CSV")
    common.add_argument("--prior", help="prior model artifact (JSON)")
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--epochs", type=int, default=10000, help="maximum epochs")
    common.add_argument("--thin", type=int, default=10, help="checkpoint interval T1")
    common.add_argument("--plot-interval", type=int, default=20, help="plot interval T2")
    common.add_argument("--patience", type=int, default=200, help="early-stopping patience k")
    common.add_argument("--min-epochs", type=int, default=0)
    common.add_argument("--draws", type=int, default=100, help="simulation draws R")
    common.add_argument("--window", type=int, default=50, help="retained draws summarized")
    common.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    common.add_argument("--cost", help="cost coefficient for monetary-ratio screening")

    parser = argparse.ArgumentParser(prog="mixlogit", description="Hierarchical Bayes mixed logit estimation and transfer.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("estimate", parents=[common], help="nonconjugate estimation") \
        .set_defaults(func=cmd_estimate)
    p = sub.add_parser("transfer", parents=[common], help="prior-based transfer with early stopping")
    p.add_argument("--no-early-stop", action="store_true", help="plain BDA (no early stopping)")
    p.set_defaults(func=cmd_transfer)
    p = sub.add_parser("benchmark", parents=[common], help="four-way benchmark over a level plan")
    p.add_argument("--plan", help="level plan (JSON)")
    p.set_defaults(func=cmd_benchmark)
    p = sub.add_parser("evaluate", parents=[common], help="CEL/GMPCA of a model on a dataset")
    p.add_argument("--model", help="alias of --prior")
    p.set_defaults(func=cmd_evaluate)
    p = sub.add_parser("synth", parents=[common], help="generate a synthetic dataset")
    p.add_argument("--truth", help="generating model artifact (JSON)")
    p.add_argument("--individuals", type=int, default=100)
    p.add_argument("--situations", type=int, default=10)
    p.add_argument("--group-size", type=int, default=1)
    p.add_argument("--prefix", default="", help="prefix for individual and group ids")
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    level = os.environ.get("MIXLOGIT_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 1
    except (UsageError, DataError, SpecificationError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
