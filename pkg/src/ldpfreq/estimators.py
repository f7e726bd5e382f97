"""Estimators of the input distribution from perturbed tallies.

Functional API (``fo_estimate``, ``norm_sub``, ``mle_estimate``,
``rr_mle_exact``) plus scikit-learn style wrappers whose ``fit`` takes the
raw reports (or the output alphabet with ``sample_weight`` set to the tallies).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted, column_or_1d

from .core import (
    Distribution,
    EstimateReport,
    InvariantError,
    Mechanism,
    SignedVector,
    TallyVector,
    _project,
)
from .mechanisms import (
    RRSpec,
    UESpec,
    rr_matrix,
    rr_spec_of,
    ue_spec_of,
    unpack_bits,
)

LOG_FLOOR = 1e-300


# ---------------------------------------------------------------------------
# tally plumbing


def _sparse(S, b: int | None = None):
    """Return ``(symbols, counts, n)`` with only the observed symbols kept."""
    if isinstance(S, tuple):
        symbols = np.asarray(S[0], dtype=np.int64)
        counts = np.asarray(S[1], dtype=np.int64)
    else:
        dense = np.asarray(S.counts if isinstance(S, TallyVector) else S)
        if b is not None and dense.shape[0] != b:
            raise InvariantError(f"tally length {dense.shape[0]} does not match b={b}")
        dense = TallyVector(dense).counts
        symbols = np.flatnonzero(dense)
        counts = dense[symbols]
    if np.any(counts < 0):
        raise InvariantError("negative tally")
    keep = counts > 0
    symbols, counts = symbols[keep], counts[keep]
    n = int(counts.sum())
    if n < 1:
        raise InvariantError("at least one report is required")
    return symbols, counts, n


def _rows(mechanism, symbols: np.ndarray) -> np.ndarray:
    if isinstance(mechanism, UESpec):
        return mechanism.row_probs(symbols)
    return mechanism.matrix[symbols, :]


def _input_size(mechanism) -> int:
    return mechanism.a if isinstance(mechanism, UESpec) else mechanism.input_size


def _output_size(mechanism) -> int:
    return mechanism.output_size


# ---------------------------------------------------------------------------
# frequency oracles


def fo_estimate(mechanism, S) -> SignedVector:
    """Unbiased frequency-oracle estimate of the input distribution.

    RR and UE use their closed forms; any other mechanism is inverted by
    least squares on the empirical output distribution.
    """
    rr = rr_spec_of(mechanism) if isinstance(mechanism, Mechanism) else None
    ue = mechanism if isinstance(mechanism, UESpec) else (
        ue_spec_of(mechanism) if isinstance(mechanism, Mechanism) else None
    )
    symbols, counts, n = _sparse(S, None if isinstance(mechanism, UESpec) else _output_size(mechanism))
    if rr is not None:
        e = math.exp(rr.epsilon)
        s = np.bincount(symbols, weights=counts, minlength=rr.a)
        return SignedVector(((e + rr.a - 1) * s / n - 1.0) / (e - 1.0))
    if ue is not None:
        bit_counts = unpack_bits(symbols, ue.a).T @ counts
        return SignedVector((bit_counts / n - ue.q_flip) / (ue.p_keep - ue.q_flip))
    freq = np.bincount(symbols, weights=counts, minlength=mechanism.output_size) / n
    q = mechanism.matrix
    p = np.linalg.solve(q.T @ q, q.T @ freq)
    return SignedVector(p)


def fo_estimate_ue_reports(spec: UESpec, reports) -> SignedVector:
    """UE frequency oracle straight from bitmask reports (any ``a``)."""
    reports = np.asarray(reports, dtype=np.int64)
    if reports.size == 0:
        raise InvariantError("at least one report is required")
    bit_counts = unpack_bits(reports, spec.a).sum(axis=0)
    return SignedVector((bit_counts / reports.shape[0] - spec.q_flip) / (spec.p_keep - spec.q_flip))


def norm_sub(v) -> Distribution:
    """Shift-and-clamp post-processing: ``max(v - delta, 0)`` summing to one."""
    return Distribution(_norm_sub(np.asarray(v, dtype=float))[0])


def norm_sub_shift(v) -> float:
    """The shift ``delta`` used by :func:`norm_sub`."""
    return _norm_sub(np.asarray(v, dtype=float))[1]


def _norm_sub(v: np.ndarray):
    if v.ndim != 1 or v.size == 0 or not np.all(np.isfinite(v)):
        raise InvariantError("norm_sub needs a finite non-empty vector")
    lo, hi = float(v.min()) - 1.0, float(v.max())
    # sum(max(v - d, 0)) is decreasing in d; >= 1 at lo, 0 at hi
    while hi - lo > 1e-12:
        mid = 0.5 * (lo + hi)
        if np.maximum(v - mid, 0.0).sum() > 1.0:
            lo = mid
        else:
            hi = mid
    active = v > lo
    delta = (v[active].sum() - 1.0) / np.count_nonzero(active)
    out = np.maximum(v - delta, 0.0)
    return out, float(delta)


# ---------------------------------------------------------------------------
# maximum likelihood


@dataclass(frozen=True)
class MLEConfig:
    """Projected gradient settings. ``tol`` bounds the gradient-mapping norm of the per-report objective."""

    max_iterations: int = 10000
    tol: float = 1e-9
    initial: np.ndarray | None = None
    polish: bool = True

    def __post_init__(self):
        if self.tol <= 0:
            raise InvariantError("tolerance must be > 0")
        if self.max_iterations < 1:
            raise InvariantError("max_iterations must be >= 1")


class NegLogLikelihood:
    """``f(p) = -sum_beta s_beta log((Q p)_beta)`` restricted to observed outputs."""

    def __init__(self, rows: np.ndarray, counts: np.ndarray):
        self.rows = rows
        self.counts = np.asarray(counts, dtype=float)
        self.n = float(self.counts.sum())

    def value(self, p) -> float:
        qp = np.maximum(self.rows @ p, LOG_FLOOR)
        return float(-self.counts @ np.log(qp))

    def gradient(self, p) -> np.ndarray:
        qp = np.maximum(self.rows @ p, LOG_FLOOR)
        return -(self.rows.T @ (self.counts / qp))

    def hessian(self, p) -> np.ndarray:
        qp = np.maximum(self.rows @ p, LOG_FLOOR)
        scaled = self.rows * np.sqrt(self.counts / qp**2)[:, None]
        return scaled.T @ scaled


def mle_objective(mechanism, S, p) -> float:
    symbols, counts, _ = _sparse(S)
    return NegLogLikelihood(_rows(mechanism, symbols), counts).value(np.asarray(p, float))


def mle_gradient(mechanism, S, p) -> np.ndarray:
    symbols, counts, _ = _sparse(S)
    return NegLogLikelihood(_rows(mechanism, symbols), counts).gradient(np.asarray(p, float))


def _gradient_mapping(p, g) -> float:
    return float(np.linalg.norm(p - _project(p - g), ord=np.inf))


def _newton_polish(f: NegLogLikelihood, p: np.ndarray, max_steps: int = 30):
    """Equality-constrained Newton on the current support; returns (p, steps) or None."""
    support = p > 1e-12
    k = int(support.sum())
    if k > 512:
        return None
    x = p.copy()
    x[~support] = 0.0
    x /= x.sum()
    n = f.n
    steps = 0
    for _ in range(max_steps):
        g = f.gradient(x)[support] / n
        h = f.hessian(x)[np.ix_(support, support)] / n
        kkt = np.zeros((k + 1, k + 1))
        kkt[:k, :k] = h
        kkt[:k, k] = 1.0
        kkt[k, :k] = 1.0
        rhs = np.concatenate([-g, [0.0]])
        try:
            sol = np.linalg.solve(kkt, rhs)
        except np.linalg.LinAlgError:
            return None
        d = sol[:k]
        xs = x[support]
        neg = d < 0
        step = 1.0
        if np.any(neg):
            step = min(1.0, 0.99 * float(np.min(-xs[neg] / d[neg])))
        # backtrack on the objective
        f0 = f.value(x)
        while True:
            trial = x.copy()
            trial[support] = xs + step * d
            if f.value(trial) <= f0 + 1e-4 * step * float(g @ d) * n or step < 1e-12:
                break
            step *= 0.5
        x = trial
        steps += 1
        if np.linalg.norm(step * d, ord=np.inf) < 1e-15:
            break
    x = np.maximum(x, 0.0)
    x /= x.sum()
    return x, steps


def _solve_mle(f: NegLogLikelihood, a: int, cfg: MLEConfig):
    n = f.n
    if cfg.initial is not None:
        p = _project(np.asarray(cfg.initial, dtype=float))
    else:
        p = np.full(a, 1.0 / a)

    def fbar(x):
        return f.value(x) / n

    def gbar(x):
        return f.gradient(x) / n

    t = 1.0
    y = p.copy()
    momentum = 1.0
    fp = fbar(p)
    it = 0
    converged = False
    next_polish = 50
    while it < cfg.max_iterations:
        it += 1
        if np.any(f.rows @ y <= 0):
            y, momentum = p.copy(), 1.0
        fy, gy = fbar(y), gbar(y)
        while True:
            cand = _project(y - t * gy)
            diff = cand - y
            fc = fbar(cand)
            if fc <= fy + gy @ diff + (diff @ diff) / (2.0 * t) + 1e-15 or t < 1e-14:
                break
            t *= 0.5
        if fc > fp:
            # adaptive restart
            y, momentum = p.copy(), 1.0
            continue
        new_momentum = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * momentum**2))
        y = cand + ((momentum - 1.0) / new_momentum) * (cand - p)
        momentum = new_momentum
        p, fp = cand, fc
        gm = _gradient_mapping(p, gbar(p))
        if gm <= cfg.tol:
            converged = True
            break
        if cfg.polish and (it >= next_polish or gm < 1e-6):
            next_polish = it + 50
            polished = _newton_polish(f, p)
            if polished is not None:
                q, steps = polished
                fq = fbar(q)
                if fq <= fp + 1e-15:
                    gq = _gradient_mapping(q, gbar(q))
                    if gq <= cfg.tol:
                        p, fp = q, fq
                        it += steps
                        converged = True
                        break
    return p, f.value(p), it, converged


def mle_estimate(mechanism, S, cfg: MLEConfig | None = None) -> EstimateReport:
    """Maximum-likelihood estimate over the simplex by projected gradient descent.

    ``mechanism`` is a :class:`Mechanism` or a :class:`UESpec`; ``S`` is a
    dense tally over the output alphabet or a ``(symbols, counts)`` pair.
    Only observed outputs enter the objective.
    """
    cfg = cfg or MLEConfig()
    symbols, counts, _ = _sparse(S, None if isinstance(mechanism, UESpec) else _output_size(mechanism))
    f = NegLogLikelihood(_rows(mechanism, symbols), counts)
    a = _input_size(mechanism)
    p, obj, iters, converged = _solve_mle(f, a, cfg)
    dist = Distribution(p)
    return EstimateReport(
        estimate=SignedVector(p),
        projected=dist,
        estimator_name="mle",
        objective=obj,
        iterations=iters,
        converged=converged,
    )


def rr_mle_exact(spec: RRSpec, S) -> Distribution:
    """Closed-form MLE for k-ary Randomised Response in O(a log a).

    Categories are dropped in increasing order of their tally (ties by index)
    until the closed form is non-negative on the remaining support.
    """
    s = np.asarray(S.counts if isinstance(S, TallyVector) else S, dtype=float)
    a = spec.a
    if s.shape != (a,):
        raise InvariantError(f"RR tally must have length {a}")
    if np.any(s < 0) or s.sum() < 1:
        raise InvariantError("RR tally must be non-negative with n >= 1")
    em1 = math.expm1(spec.epsilon)
    order = np.argsort(s, kind="stable")
    sorted_s = s[order]
    suffix = np.cumsum(sorted_s[::-1])[::-1]
    k = 0
    while k < a - 1 and (
        sorted_s[k] == 0 or (a - k) + em1 - suffix[k] / sorted_s[k] < 0
    ):
        k += 1
    support = order[k:]
    total = suffix[k]
    p = np.zeros(a)
    p[support] = (s[support] / total) * ((a - k) / em1 + 1.0) - 1.0 / em1
    p = np.maximum(p, 0.0)
    return Distribution(p / p.sum())


# ---------------------------------------------------------------------------
# scikit-learn style wrappers


class _TallyEstimator(BaseEstimator):
    """Shared ``fit`` for estimators that consume output reports.

    ``fit(X)`` takes the reports; ``fit(symbols, sample_weight=counts)`` takes
    a tally. After fitting, ``estimate_`` is the raw (possibly signed) estimate
    and ``distribution_`` its simplex version.
    """

    def _tallies(self, X, sample_weight):
        x = column_or_1d(X).astype(np.int64)
        if sample_weight is None:
            symbols, counts = np.unique(x, return_counts=True)
        else:
            w = column_or_1d(sample_weight)
            if w.shape != x.shape:
                raise ValueError("sample_weight must match X")
            if not np.all(np.equal(np.mod(w, 1), 0)):
                raise ValueError("sample_weight must hold integer tallies")
            symbols, inverse = np.unique(x, return_inverse=True)
            counts = np.bincount(inverse, weights=w).astype(np.int64)
        return symbols, counts

    def _finish(self, report: EstimateReport):
        self.report_ = report
        self.estimate_ = report.estimate.values
        self.distribution_ = report.projected.probs
        self.n_iter_ = report.iterations
        return self

    def predict_proba(self, X=None):
        """The estimated distribution (the same for every row of ``X``)."""
        check_is_fitted(self, "distribution_")
        if X is None:
            return self.distribution_.copy()
        rows = len(X)
        return np.tile(self.distribution_, (rows, 1))


class FrequencyOracle(_TallyEstimator):
    def __init__(self, mechanism=None):
        self.mechanism = mechanism

    def fit(self, X, y=None, sample_weight=None):
        est = fo_estimate(self.mechanism, self._tallies(X, sample_weight))
        return self._finish(
            EstimateReport(est, Distribution(_project(est.values)), "fo")
        )


class NormSub(_TallyEstimator):
    def __init__(self, mechanism=None):
        self.mechanism = mechanism

    def fit(self, X, y=None, sample_weight=None):
        est = fo_estimate(self.mechanism, self._tallies(X, sample_weight))
        dist = norm_sub(est.values)
        return self._finish(EstimateReport(SignedVector(dist.probs), dist, "normsub"))


class MaximumLikelihood(_TallyEstimator):
    """Generic MLE for any mechanism (or ``UESpec``) via projected gradient."""

    def __init__(self, mechanism=None, max_iter=10000, tol=1e-9, polish=True):
        self.mechanism = mechanism
        self.max_iter = max_iter
        self.tol = tol
        self.polish = polish

    def fit(self, X, y=None, sample_weight=None):
        cfg = MLEConfig(max_iterations=self.max_iter, tol=self.tol, polish=self.polish)
        report = mle_estimate(self.mechanism, self._tallies(X, sample_weight), cfg)
        self.converged_ = report.converged
        self.objective_ = report.objective
        return self._finish(report)


class RRExactMLE(_TallyEstimator):
    def __init__(self, epsilon=1.0, n_categories=2):
        self.epsilon = epsilon
        self.n_categories = n_categories

    def fit(self, X, y=None, sample_weight=None):
        spec = RRSpec(int(self.n_categories), float(self.epsilon))
        symbols, counts = self._tallies(X, sample_weight)
        s = np.bincount(symbols, weights=counts, minlength=spec.a).astype(np.int64)
        dist = rr_mle_exact(spec, s)
        obj = mle_objective(rr_matrix(spec), s, dist.probs)
        return self._finish(
            EstimateReport(SignedVector(dist.probs), dist, "rr-exact", objective=obj)
        )
