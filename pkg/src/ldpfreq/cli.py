"""Command-line interface: ``ldpfreq <subcommand> ...``.

Exit status: 0 on success, 2 on usage errors, 1 on runtime failures.
Machine-readable output goes to stdout or ``--out``; summaries go to stderr.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import io as lio
from .bounds import bound_report
from .core import DirichletPrior, EstimateReport, InvariantError, SignedVector, ldp_epsilon
from .estimators import MLEConfig, fo_estimate, mle_estimate, mle_objective, norm_sub, rr_mle_exact
from .harness import (
    ExperimentConfig,
    ingest_real,
    parse_prior,
    run_real,
    run_synthetic,
    write_results,
)
from .mechanisms import RRSpec, UESpec, rr_matrix, ue_matrix, rr_spec_of
from .posterior import posterior_from_tally, posterior_mse_exact

log = logging.getLogger("ldpfreq")


class UsageError(Exception):
    pass


def parse_mechanism(text: str):
    """``rr:a,eps``, ``ue:a,eps`` (symmetric), ``oue:a,eps`` or a matrix CSV path."""
    kind, sep, rest = text.partition(":")
    if sep and kind in ("rr", "ue", "oue"):
        try:
            a_text, eps_text = rest.split(",")
            a, eps = int(a_text), float(eps_text)
        except ValueError:
            raise UsageError(f"bad mechanism spec {text!r}; expected {kind}:a,eps") from None
        if kind == "rr":
            return rr_matrix(RRSpec(a, eps))
        spec = UESpec.symmetric(a, eps) if kind == "ue" else UESpec.optimized(a, eps)
        return ue_matrix(spec)
    if not Path(text).exists():
        raise FileNotFoundError(text)
    return lio.read_matrix(text, name=Path(text).stem)


def _prior(text, a: int) -> DirichletPrior:
    if text in ("jeffreys", "uniform"):
        return parse_prior(text, a)
    if not Path(text).exists():
        raise FileNotFoundError(text)
    return parse_prior(lio.read_gamma(text), a)


def _emit(args, name: str, text: str):
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / name).write_text(text)
    else:
        sys.stdout.write(text)


def _require_seed(seed):
    if seed is None:
        raise UsageError("a seed is required for stochastic commands (--seed or config 'seed')")
    print(f"seed={seed}", file=sys.stderr)
    return seed


# ---------------------------------------------------------------------------


def cmd_mechanism(args):
    if args.kind == "rr":
        mech = rr_matrix(RRSpec(args.a, args.eps))
    elif args.variant == "optimized":
        mech = ue_matrix(UESpec.optimized(args.a, args.eps))
    else:
        mech = ue_matrix(UESpec.symmetric(args.a, args.eps))
    text = lio.format_matrix(mech.matrix)
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text)
    else:
        sys.stdout.write(text)
    print(f"epsilon={ldp_epsilon(mech):.6f}")
    return 0


def cmd_estimate(args):
    mech = parse_mechanism(args.mechanism)
    if not Path(args.tallies).exists():
        raise FileNotFoundError(args.tallies)
    S = lio.read_tally(args.tallies)
    if len(S) != mech.output_size:
        raise InvariantError(f"tally has {len(S)} entries, mechanism outputs {mech.output_size}")
    method = args.method
    if method == "fo":
        est = fo_estimate(mech, S)
        report = EstimateReport(est, norm_sub(est.values), "fo")
    elif method == "normsub":
        dist = norm_sub(fo_estimate(mech, S).values)
        report = EstimateReport(SignedVector(dist.probs), dist, "normsub")
    elif method == "mle":
        report = mle_estimate(mech, S, MLEConfig(max_iterations=args.max_iter, tol=args.tol))
    elif method == "rr-exact":
        spec = rr_spec_of(mech)
        if spec is None:
            raise InvariantError("rr-exact needs an rr:a,eps mechanism")
        dist = rr_mle_exact(spec, S)
        report = EstimateReport(SignedVector(dist.probs), dist, "rr-exact",
                                objective=mle_objective(mech, S, dist.probs))
    else:
        prior = _prior(args.prior or "jeffreys", mech.input_size)
        post = posterior_from_tally(mech, prior, S)
        report = EstimateReport(SignedVector(post.mean.probs), post.mean, "posterior",
                                iterations=post.terms)
    meta = report.to_dict()
    meta["epsilon"] = ldp_epsilon(mech)
    meta["n"] = S.total
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        lio.write_vector(out / "estimate.csv", report.estimate.values, "prob")
        (out / "report.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    else:
        sys.stdout.write(lio.format_vector(report.estimate.values, "prob"))
        print(json.dumps(meta, sort_keys=True), file=sys.stderr)
    return 0


def _load_raw_config(args) -> dict:
    path = Path(args.config)
    if not path.exists():
        raise FileNotFoundError(args.config)
    raw = json.loads(path.read_text())
    if args.seed is not None:
        raw["seed"] = args.seed
    if "seed" not in raw:
        _require_seed(None)
    if args.threads is not None:
        raw["threads"] = args.threads
    return raw


def cmd_simulate(args):
    raw = _load_raw_config(args)
    cfg = ExperimentConfig.from_dict(raw)
    _require_seed(cfg.seed)
    start = time.perf_counter()
    agg = run_synthetic(cfg)
    wall = time.perf_counter() - start
    path = write_results(args.out, agg, cfg, wall, name="sweep")
    print(f"wrote {path} ({len(agg)} rows, {wall:.1f}s)", file=sys.stderr)
    return 0


def cmd_real(args):
    raw = _load_raw_config(args)
    bins = None
    if args.bins:
        try:
            count, lo, hi = args.bins.split(",")
            bins = (int(count), float(lo), float(hi))
        except ValueError:
            raise UsageError("--bins expects count,min,max") from None
    if not Path(args.data).exists():
        raise FileNotFoundError(args.data)
    ing = ingest_real(args.data, args.column, bins=bins, delimiter=args.delimiter)
    raw["a"] = len(ing.tally)
    cfg = ExperimentConfig.from_dict(raw)
    _require_seed(cfg.seed)
    start = time.perf_counter()
    agg = run_real(ing.tally, cfg)
    wall = time.perf_counter() - start
    extra = {"data": str(args.data), "column": args.column, "valid": ing.valid,
             "invalid": ing.invalid, "mapping": ing.mapping}
    path = write_results(args.out, agg, cfg, wall, name="real", extra=extra)
    lio.write_tally(Path(args.out) / "tally.csv", ing.tally)
    print(f"wrote {path}; valid={ing.valid} invalid={ing.invalid}", file=sys.stderr)
    return 0


def cmd_bounds(args):
    mech = parse_mechanism(args.mechanism)
    prior = _prior(args.prior, mech.input_size)
    seed = _require_seed(args.seed)
    report = bound_report(mech, prior, samples=args.samples, seed=seed, n=args.n)
    _emit(args, "bounds.json", json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    return 0


def cmd_posterior(args):
    mech = parse_mechanism(args.mechanism)
    prior = _prior(args.prior, mech.input_size)
    result = {}
    if args.tallies:
        if not Path(args.tallies).exists():
            raise FileNotFoundError(args.tallies)
        S = lio.read_tally(args.tallies)
        post = posterior_from_tally(mech, prior, S)
        result.update({
            "mean": post.mean.probs.tolist(),
            "frequency_mean": post.freq_mean.probs.tolist(),
            "posterior_variance": post.variance.tolist(),
            "log_normalizer": post.log_normalizer,
            "terms": post.terms,
        })
    if args.mse_n is not None:
        result["mse_n"] = args.mse_n
        result["mse_distr"] = posterior_mse_exact(mech, prior, args.mse_n)
    if not result:
        raise UsageError("posterior needs --tallies and/or --mse-n")
    _emit(args, "posterior.json", json.dumps(result, indent=2, sort_keys=True) + "\n")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ldpfreq", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("mechanism", help="write a mechanism matrix as CSV and print its epsilon")
    p.add_argument("kind", choices=["rr", "ue"])
    p.add_argument("--a", type=int, required=True, help="input alphabet size")
    p.add_argument("--eps", type=float, required=True, help="privacy level")
    p.add_argument("--variant", choices=["symmetric", "optimized"], default="symmetric",
                   help="UE parameter choice")
    p.add_argument("--out", help="output CSV path (stdout if omitted)")
    p.set_defaults(func=cmd_mechanism)

    p = sub.add_parser("estimate", help="estimate the input distribution from output tallies")
    p.add_argument("--mechanism", required=True, help="matrix CSV, rr:a,eps, ue:a,eps or oue:a,eps")
    p.add_argument("--tallies", required=True, help="CSV with header index,count")
    p.add_argument("--method", choices=["fo", "normsub", "mle", "rr-exact", "posterior"], default="mle")
    p.add_argument("--prior", help="jeffreys, uniform or gamma CSV (posterior only)")
    p.add_argument("--max-iter", type=int, default=10000)
    p.add_argument("--tol", type=float, default=1e-9)
    p.add_argument("--out", help="directory for estimate.csv and report.json")
    p.set_defaults(func=cmd_estimate)

    for name, func, helptext in (
        ("simulate", cmd_simulate, "run a synthetic sweep from a JSON config"),
        ("real", cmd_real, "run repeated perturbation of a real data column"),
    ):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", required=True, help="JSON experiment config")
        p.add_argument("--out", required=True, help="results directory")
        p.add_argument("--seed", type=int, help="overrides the config seed")
        p.add_argument("--threads", type=int, help="worker threads (default $LDPFREQ_THREADS or 1)")
        if name == "real":
            p.add_argument("--data", required=True, help="delimited text file")
            p.add_argument("--column", required=True, help="column name or 0-based index")
            p.add_argument("--bins", help="count,min,max for numeric binning")
            p.add_argument("--delimiter", default=",")
        p.set_defaults(func=func)

    p = sub.add_parser("bounds", help="Monte-Carlo privacy-utility bound report (JSON)")
    p.add_argument("--mechanism", required=True)
    p.add_argument("--prior", default="jeffreys")
    p.add_argument("--samples", type=int, default=10000)
    p.add_argument("--seed", type=int)
    p.add_argument("--n", type=int, help="number of users for per-n bounds")
    p.add_argument("--out", help="directory for bounds.json (stdout if omitted)")
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("posterior", help="exact posterior mean / minimum MSE for small instances")
    p.add_argument("--mechanism", required=True)
    p.add_argument("--prior", default="jeffreys")
    p.add_argument("--tallies", help="CSV with header index,count")
    p.add_argument("--mse-n", type=int, help="also compute the exact minimum MSE at this n")
    p.add_argument("--out", help="directory for posterior.json (stdout if omitted)")
    p.set_defaults(func=cmd_posterior)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose > 1 else logging.INFO if args.verbose else logging.WARNING,
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"ldpfreq: usage error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"ldpfreq: file not found: {exc.filename or exc}", file=sys.stderr)
        return 1
    except json.JSONDecodeError as exc:
        print(f"ldpfreq: malformed JSON: {exc}", file=sys.stderr)
        return 1
    except InvariantError as exc:
        print(f"ldpfreq: invalid input: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError, np.linalg.LinAlgError) as exc:
        print(f"ldpfreq: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
