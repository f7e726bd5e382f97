"""Seeded Monte-Carlo experiment runner and real-data ingestion.

Every trial owns a generator seeded by ``(master_seed, epsilon_index,
trial_index)``, so results do not depend on execution order or thread count.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
import platform
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .core import DirichletPrior, InvariantError, TallyVector
from .estimators import fo_estimate, mle_estimate, norm_sub, rr_mle_exact
from .mechanisms import (
    MAX_UE_BITS,
    RRSpec,
    UESpec,
    rr_matrix,
    sample_prior,
    sample_private_data,
    sample_reports,
)

ESTIMATORS = ("fo", "normsub", "mle", "mle-pgd")
TARGETS = ("distr", "freq", "both")
CSV_HEADER = ("epsilon", "estimator", "target", "mean_mse", "stderr", "trials", "excluded")
THREADS_ENV = "LDPFREQ_THREADS"


def default_epsilons():
    return [round(0.2 * k, 10) for k in range(1, 11)]


def parse_prior(spec, a: int) -> DirichletPrior:
    """``"jeffreys"``, ``"uniform"``, a list of parameters, or a DirichletPrior."""
    if isinstance(spec, DirichletPrior):
        prior = spec
    elif isinstance(spec, str) and spec.lower() == "jeffreys":
        prior = DirichletPrior.jeffreys(a)
    elif isinstance(spec, str) and spec.lower() == "uniform":
        prior = DirichletPrior.uniform(a)
    else:
        prior = DirichletPrior(np.asarray(spec, dtype=float))
    if prior.alphabet_size != a:
        raise InvariantError(f"prior has {prior.alphabet_size} categories, expected {a}")
    return prior


@dataclass
class ExperimentConfig:
    mechanism: str = "rr"
    a: int = 2
    epsilons: list = field(default_factory=default_epsilons)
    n: int = 1000
    trials: int = 100
    prior: object = "jeffreys"
    estimators: list = field(default_factory=lambda: ["fo", "normsub", "mle"])
    seed: int = 0
    target: str = "both"
    ue_variant: str = "symmetric"
    datasets_per_draw: int = 1
    threads: int | None = None

    def __post_init__(self):
        if self.mechanism not in ("rr", "ue"):
            raise InvariantError(f"unknown mechanism {self.mechanism!r}")
        if self.trials < 1:
            raise InvariantError("trials must be >= 1")
        if self.n < 1:
            raise InvariantError("n must be >= 1")
        if self.datasets_per_draw < 1:
            raise InvariantError("datasets_per_draw must be >= 1")
        if not self.epsilons or any(e <= 0 for e in self.epsilons):
            raise InvariantError("epsilon grid must be non-empty and strictly positive")
        if self.target not in TARGETS:
            raise InvariantError(f"target must be one of {TARGETS}")
        unknown = set(self.estimators) - set(ESTIMATORS)
        if unknown:
            raise InvariantError(f"unknown estimators {sorted(unknown)}")
        if self.mechanism == "ue" and self.a > MAX_UE_BITS:
            raise InvariantError(f"UE experiments need a <= {MAX_UE_BITS}")
        self.epsilons = [float(e) for e in self.epsilons]
        self.estimators = list(self.estimators)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(d) - known
        if extra:
            raise InvariantError(f"unknown config keys {sorted(extra)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        d = asdict(self)
        if isinstance(self.prior, DirichletPrior):
            d["prior"] = self.prior.gamma.tolist()
        return d


@dataclass(frozen=True)
class TrialRecord:
    epsilon: float
    trial: int
    estimator: str
    seed: tuple
    err_distr: float | None
    err_freq: float
    failed: bool = False
    runtime: float = 0.0


@dataclass(frozen=True)
class AggregateRecord:
    epsilon: float
    estimator: str
    target: str
    mean_mse: float
    stderr: float
    trials: int
    excluded: int

    def row(self):
        return (
            repr(self.epsilon),
            self.estimator,
            self.target,
            repr(self.mean_mse),
            repr(self.stderr),
            str(self.trials),
            str(self.excluded),
        )


def _mechanism_for(cfg: ExperimentConfig, eps: float):
    if cfg.mechanism == "rr":
        return rr_matrix(RRSpec(cfg.a, eps))
    if cfg.ue_variant == "symmetric":
        return UESpec.symmetric(cfg.a, eps)
    if cfg.ue_variant == "optimized":
        return UESpec.optimized(cfg.a, eps)
    raise InvariantError(f"unknown UE variant {cfg.ue_variant!r}")


def _reports_tally(y: np.ndarray, mechanism):
    if isinstance(mechanism, UESpec):
        return tuple(np.unique(y, return_counts=True))
    return np.bincount(y, minlength=mechanism.output_size)


def estimate(name: str, mechanism, S) -> np.ndarray:
    """Point estimate of P for one estimator name."""
    if name == "fo":
        return fo_estimate(mechanism, S).values
    if name == "normsub":
        return norm_sub(fo_estimate(mechanism, S).values).probs
    if name == "mle":
        if isinstance(mechanism, UESpec) or mechanism.params.get("kind") != "rr":
            return mle_estimate(mechanism, S).projected.probs
        p = mechanism.params
        return rr_mle_exact(RRSpec(p["a"], p["epsilon"]), S).probs
    if name == "mle-pgd":
        return mle_estimate(mechanism, S).projected.probs
    raise InvariantError(f"unknown estimator {name!r}")


def _run_estimators(names, mechanism, S, p_true, f_true, eps, trial, seed):
    out = []
    for name in names:
        start = time.perf_counter()
        try:
            est = estimate(name, mechanism, S)
            err_d = None if p_true is None else float(np.sum((p_true - est) ** 2))
            err_f = float(np.sum((f_true - est) ** 2))
            out.append(TrialRecord(eps, trial, name, seed, err_d, err_f, False,
                                   time.perf_counter() - start))
        except (InvariantError, ValueError, np.linalg.LinAlgError, FloatingPointError):
            out.append(TrialRecord(eps, trial, name, seed, None, math.nan, True,
                                   time.perf_counter() - start))
    return out


def trial_seed(master_seed: int, eps_index: int, trial: int) -> tuple:
    return (int(master_seed), int(eps_index), int(trial))


def _synthetic_trial(cfg, prior, mechanism, eps, eps_index, trial):
    seed = trial_seed(cfg.seed, eps_index, trial)
    rng = np.random.default_rng(seed)
    p = sample_prior(prior, rng)
    records = []
    for _ in range(cfg.datasets_per_draw):
        x, T = sample_private_data(p, cfg.n, rng)
        y, _ = sample_reports(mechanism, x, rng)
        S = _reports_tally(y, mechanism)
        f = T.counts / cfg.n
        records.extend(_run_estimators(cfg.estimators, mechanism, S, p.probs, f, eps, trial, seed))
    return records


def _resolve_threads(threads):
    if threads is None:
        env = os.environ.get(THREADS_ENV)
        threads = int(env) if env else 1
    return max(1, int(threads))


def _map_trials(fn, count, threads):
    threads = _resolve_threads(threads)
    if threads == 1:
        return [fn(t) for t in range(count)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, range(count)))


def run_trials(cfg: ExperimentConfig) -> list:
    """All per-trial records of a synthetic sweep, in (epsilon, trial, estimator) order."""
    prior = parse_prior(cfg.prior, cfg.a)
    records = []
    for eps_index, eps in enumerate(cfg.epsilons):
        mechanism = _mechanism_for(cfg, eps)
        batches = _map_trials(
            lambda t: _synthetic_trial(cfg, prior, mechanism, eps, eps_index, t),
            cfg.trials,
            cfg.threads,
        )
        for batch in batches:
            records.extend(batch)
    return records


def aggregate(records, estimators, epsilons, target: str = "both") -> list:
    """Mean and standard error per (epsilon, estimator, target); failed trials are excluded."""
    targets = ("distr", "freq") if target == "both" else (target,)
    out = []
    for eps in epsilons:
        for name in estimators:
            group = [r for r in records if r.epsilon == eps and r.estimator == name]
            excluded = sum(r.failed for r in group)
            ok = [r for r in group if not r.failed]
            for tgt in targets:
                vals = [r.err_distr if tgt == "distr" else r.err_freq for r in ok]
                if tgt == "distr" and any(v is None for v in vals):
                    continue
                vals = np.array(vals, dtype=float)
                k = vals.shape[0]
                mean = float(vals.mean()) if k else math.nan
                se = float(vals.std(ddof=1) / math.sqrt(k)) if k > 1 else math.nan
                out.append(AggregateRecord(eps, name, tgt, mean, se, k, excluded))
    return out


def run_synthetic(cfg: ExperimentConfig, return_trials: bool = False):
    """Draw P from the prior, sample, perturb and estimate for every epsilon and trial."""
    records = run_trials(cfg)
    agg = aggregate(records, cfg.estimators, cfg.epsilons, cfg.target)
    return (agg, records) if return_trials else agg


# ---------------------------------------------------------------------------
# real data


@dataclass(frozen=True)
class IngestResult:
    tally: TallyVector
    mapping: dict
    invalid: int
    valid: int


def ingest_real(path, column, bins=None, delimiter: str = ",", has_header: bool = True) -> IngestResult:
    """Tally one column of a delimited file.

    ``column`` is a header name or 0-based index. With ``bins=(count, lo, hi)``
    values are parsed as floats and placed in equal-width bins over
    ``[lo, hi)``; unparseable or out-of-range values are counted as invalid.
    Without ``bins`` each distinct string is a category, indexed in order of
    first appearance.
    """
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise InvariantError(f"cannot read {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh, delimiter=delimiter)
        header = next(reader, None) if has_header else None
        if isinstance(column, str) and not column.isdigit():
            if header is None or column not in header:
                raise InvariantError(f"column {column!r} not found")
            col = header.index(column)
        else:
            col = int(column)
        values = [row[col].strip() if col < len(row) else "" for row in reader]
    if not values:
        raise InvariantError("column is empty")
    invalid = 0
    if bins is not None:
        count, lo, hi = int(bins[0]), float(bins[1]), float(bins[2])
        if count < 1 or not hi > lo:
            raise InvariantError("bins need count >= 1 and hi > lo")
        width = (hi - lo) / count
        idx = []
        for v in values:
            try:
                x = float(v)
            except ValueError:
                invalid += 1
                continue
            if not math.isfinite(x) or x < lo or x >= hi:
                invalid += 1
                continue
            idx.append(min(int((x - lo) // width), count - 1))
        mapping = {f"[{lo + k * width!r},{lo + (k + 1) * width!r})": k for k in range(count)}
        size = count
    else:
        mapping = {}
        idx = []
        for v in values:
            if v == "":
                invalid += 1
                continue
            idx.append(mapping.setdefault(v, len(mapping)))
        size = len(mapping)
    if not idx:
        raise InvariantError("no valid values in column")
    tally = TallyVector(np.bincount(np.array(idx, dtype=np.int64), minlength=size))
    return IngestResult(tally, mapping, invalid, len(idx))


def _real_trial(cfg, mechanism, x, f, eps, eps_index, trial):
    seed = trial_seed(cfg.seed, eps_index, trial)
    rng = np.random.default_rng(seed)
    y, _ = sample_reports(mechanism, x, rng)
    S = _reports_tally(y, mechanism)
    return _run_estimators(cfg.estimators, mechanism, S, None, f, eps, trial, seed)


def run_real(T, cfg: ExperimentConfig, return_trials: bool = False):
    """Re-perturb fixed private data ``cfg.trials`` times per epsilon; frequency error only."""
    counts = np.asarray(getattr(T, "counts", T), dtype=np.int64)
    if counts.shape[0] != cfg.a:
        raise InvariantError(f"tally has {counts.shape[0]} categories, config says a={cfg.a}")
    n = int(counts.sum())
    if n < 1:
        raise InvariantError("empty tally")
    x = np.repeat(np.arange(cfg.a, dtype=np.int64), counts)
    f = counts / n
    records = []
    for eps_index, eps in enumerate(cfg.epsilons):
        mechanism = _mechanism_for(cfg, eps)
        batches = _map_trials(
            lambda t: _real_trial(cfg, mechanism, x, f, eps, eps_index, t),
            cfg.trials,
            cfg.threads,
        )
        for batch in batches:
            records.extend(batch)
    agg = aggregate(records, cfg.estimators, cfg.epsilons, "freq")
    return (agg, records) if return_trials else agg


# ---------------------------------------------------------------------------
# output


def results_csv(records) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for r in records:
        writer.writerow(r.row())
    return buf.getvalue()


def write_results(out_dir, aggregates, cfg: ExperimentConfig, wall_time: float, name: str = "sweep", extra=None):
    """Write ``<name>.csv`` and ``<name>_manifest.json`` into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / f"{name}.csv"
    csv_path.write_text(results_csv(aggregates))
    manifest = {
        "config": cfg.to_dict(),
        "seed": cfg.seed,
        "versions": {
            "ldpfreq": __version__,
            "numpy": np.__version__,
            "python": platform.python_version(),
        },
        "wall_time_seconds": wall_time,
        "results": csv_path.name,
    }
    if extra:
        manifest.update(extra)
    (out / f"{name}_manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return csv_path
