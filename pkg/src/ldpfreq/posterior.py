"""Exact posterior-mean estimation under a Dirichlet prior.

Given reports ``y_1..y_n`` the posterior of P is a mixture of Dirichlet
distributions, one per input sequence ``x``, with weight proportional to
``B(gamma + t(x)) / B(gamma) * prod_i Q[y_i, x_i]``. Two evaluation routes are
provided:

* ``"enumerate"`` sums over every input sequence in ``A^n``;
* ``"tally"`` sums over joint tallies ``s[y, x]`` whose row sums match the
  observed output tally, weighting each by its multinomial multiplicity.

Both run in the log domain and must agree to rounding error.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import gammaln
from sklearn.base import BaseEstimator
from sklearn.utils.validation import column_or_1d

from .core import DirichletPrior, Distribution, InvariantError, Mechanism

ENUMERATION_BUDGET = 10**7
RISK_BUDGET = 5 * 10**6
_CHUNK = 1 << 16


def log_beta(gamma: np.ndarray) -> np.ndarray:
    """Log multivariate Beta along the last axis."""
    return gammaln(gamma).sum(axis=-1) - gammaln(gamma.sum(axis=-1))


@dataclass(frozen=True)
class PosteriorResult:
    """Posterior summaries for one report vector.

    ``log_normalizer`` is ``log P(Y = y)`` for the ordered report sequence.
    ``second_moment[a]`` is ``E[P_a^2 | y]`` and ``variance`` the posterior
    variance, whose sum is the expected squared error of the posterior mean.
    """

    mean: Distribution
    log_normalizer: float
    second_moment: np.ndarray
    variance: np.ndarray
    freq_mean: Distribution
    terms: int

    @property
    def mse_contribution(self) -> float:
        return float(self.variance.sum())


class _Accumulator:
    """Weighted sums with a running log-scale so nothing under/overflows."""

    def __init__(self, a: int):
        self.ref = -np.inf
        self.w = 0.0
        self.m = np.zeros(a)
        self.m2 = np.zeros(a)
        self.t = np.zeros(a)
        self.terms = 0

    def add(self, logw: np.ndarray, t: np.ndarray, gamma: np.ndarray, n: int):
        if logw.size == 0:
            return
        top = float(logw.max())
        if top > self.ref:
            scale = math.exp(self.ref - top) if np.isfinite(self.ref) else 0.0
            self.w *= scale
            self.m *= scale
            self.m2 *= scale
            self.t *= scale
            self.ref = top
        w = np.exp(logw - self.ref)
        g0 = gamma.sum() + n
        m = (gamma + t) / g0
        var = m * (1.0 - m) / (g0 + 1.0)
        self.w += w.sum()
        self.m += w @ m
        self.m2 += w @ (m * m + var)
        self.t += w @ t
        self.terms += logw.size

    def result(self, n: int) -> PosteriorResult:
        mean = self.m / self.w
        second = self.m2 / self.w
        freq = self.t / self.w / n if n > 0 else np.full(mean.shape, np.nan)
        return PosteriorResult(
            mean=Distribution(mean / mean.sum()),
            log_normalizer=self.ref + math.log(self.w),
            second_moment=second,
            variance=np.maximum(second - mean * mean, 0.0),
            freq_mean=Distribution(freq / freq.sum()) if n > 0 else Distribution(mean / mean.sum()),
            terms=self.terms,
        )


def _check(mechanism: Mechanism, prior: DirichletPrior):
    if prior.alphabet_size != mechanism.input_size:
        raise InvariantError(
            f"prior has {prior.alphabet_size} categories, mechanism has {mechanism.input_size}"
        )


def _enumerate(mechanism: Mechanism, prior: DirichletPrior, y: np.ndarray) -> PosteriorResult:
    a, n = mechanism.input_size, y.shape[0]
    total = a**n
    if total > ENUMERATION_BUDGET:
        raise InvariantError(f"enumeration of {a}^{n} input sequences exceeds budget")
    gamma = prior.gamma
    log_q = np.log(mechanism.matrix)[y, :]  # (n, a)
    lb0 = log_beta(gamma)
    acc = _Accumulator(a)
    powers = a ** np.arange(n, dtype=np.int64)
    for start in range(0, total, _CHUNK):
        idx = np.arange(start, min(total, start + _CHUNK), dtype=np.int64)
        xs = (idx[:, None] // powers) % a  # (chunk, n)
        t = np.zeros((idx.shape[0], a))
        for i in range(n):
            t[np.arange(idx.shape[0]), xs[:, i]] += 1.0
        logw = log_beta(gamma + t) - lb0
        if n:
            logw = logw + log_q[np.arange(n), xs].sum(axis=1)
        acc.add(logw, t, gamma, n)
    return acc.result(n)


@lru_cache(maxsize=None)
def compositions(total: int, parts: int) -> np.ndarray:
    """All non-negative integer vectors of length ``parts`` summing to ``total``."""
    if parts == 1:
        return np.array([[total]], dtype=np.int64)
    rows = []
    for bars in itertools.combinations(range(total + parts - 1), parts - 1):
        prev = -1
        row = []
        for b in bars:
            row.append(b - prev - 1)
            prev = b
        row.append(total + parts - 2 - prev)
        rows.append(row)
    out = np.array(rows, dtype=np.int64)
    out.setflags(write=False)
    return out


def _class_count(s: np.ndarray, a: int) -> int:
    return int(np.prod([math.comb(int(sb) + a - 1, a - 1) for sb in s], dtype=object))


def _by_tally_classes(mechanism: Mechanism, prior: DirichletPrior, s: np.ndarray) -> PosteriorResult:
    a = mechanism.input_size
    n = int(s.sum())
    if _class_count(s, a) > ENUMERATION_BUDGET:
        raise InvariantError("joint-tally enumeration exceeds budget")
    gamma = prior.gamma
    log_q = np.log(mechanism.matrix)
    # fold outputs one at a time: running (t, log weight) over partial joint tallies
    t = np.zeros((1, a))
    logw = np.zeros(1)
    for beta, sb in enumerate(s):
        if sb == 0:
            continue
        comp = compositions(int(sb), a).astype(float)
        part = (
            gammaln(sb + 1.0)
            - gammaln(comp + 1.0).sum(axis=1)
            + comp @ log_q[beta]
        )
        t = (t[:, None, :] + comp[None, :, :]).reshape(-1, a)
        logw = (logw[:, None] + part[None, :]).reshape(-1)
    # per-symbol multinomials count the input sequences consistent with the
    # fixed report order, so the total is C_y for that ordered y
    logw = logw + log_beta(gamma + t) - log_beta(gamma)
    acc = _Accumulator(a)
    acc.add(logw, t, gamma, n)
    return acc.result(n)


def posterior_mean_exact(mechanism: Mechanism, prior: DirichletPrior, reports, method: str = "enumerate") -> PosteriorResult:
    """Exact posterior mean of P given the ordered reports.

    ``method`` is ``"enumerate"`` (sum over all input sequences) or
    ``"tally"`` (sum over joint tallies; depends on the reports only through
    their output tally).
    """
    _check(mechanism, prior)
    y = np.asarray(reports, dtype=np.int64).reshape(-1)
    if y.size and (y.min() < 0 or y.max() >= mechanism.output_size):
        raise InvariantError("report outside output alphabet")
    if method == "enumerate":
        return _enumerate(mechanism, prior, y)
    if method == "tally":
        s = np.bincount(y, minlength=mechanism.output_size)
        return _by_tally_classes(mechanism, prior, s)
    raise ValueError(f"unknown method {method!r}")


def posterior_from_tally(mechanism: Mechanism, prior: DirichletPrior, S) -> PosteriorResult:
    """Tally-class posterior for an output tally (order of reports is irrelevant)."""
    _check(mechanism, prior)
    s = np.asarray(getattr(S, "counts", S), dtype=np.int64)
    if s.shape != (mechanism.output_size,):
        raise InvariantError("tally length does not match output alphabet")
    return _by_tally_classes(mechanism, prior, s)


def _risk_terms(mechanism: Mechanism, prior: DirichletPrior, n: int):
    a, b = mechanism.input_size, mechanism.output_size
    outputs = compositions(int(n), b)
    work = sum(_class_count(s, a) for s in outputs)
    if work > RISK_BUDGET:
        raise InvariantError(f"exact risk needs {work} terms, over budget {RISK_BUDGET}")
    for s in outputs:
        post = _by_tally_classes(mechanism, prior, s)
        log_mult = gammaln(n + 1.0) - gammaln(s + 1.0).sum()
        yield s, math.exp(log_mult + post.log_normalizer), post


def bayes_risk(mechanism: Mechanism, prior: DirichletPrior, n: int, estimator=None) -> float:
    """Exact ``E ||P - estimator(S)||^2`` over P ~ prior and n reports.

    ``estimator`` maps an output tally to a vector in R^a; the default is the
    posterior mean, for which this is the minimum achievable risk.
    """
    _check(mechanism, prior)
    total = 0.0
    for s, prob, post in _risk_terms(mechanism, prior, n):
        if estimator is None:
            loss = post.variance.sum()
        else:
            est = np.asarray(estimator(s), dtype=float)
            m = post.mean.probs
            loss = (post.second_moment - 2.0 * est * m + est * est).sum()
        total += prob * loss
    return float(total)


def posterior_mse_exact(mechanism: Mechanism, prior: DirichletPrior, n: int) -> float:
    """Minimum mean squared error for estimating P from n reports."""
    return bayes_risk(mechanism, prior, n)


def output_tally_probabilities(mechanism: Mechanism, prior: DirichletPrior, n: int):
    """``(tallies, probabilities)`` of the output tally S; probabilities sum to one."""
    rows, probs = [], []
    for s, prob, _ in _risk_terms(mechanism, prior, n):
        rows.append(s)
        probs.append(prob)
    return np.array(rows), np.array(probs)


class PosteriorMean(BaseEstimator):
    """Exact posterior-mean (minimum MSE) estimator for small instances.

    ``fit`` takes the output reports, or output symbols with tallies passed as
    ``sample_weight``. Sets ``distribution_`` (posterior mean of P),
    ``frequency_`` (posterior mean of the empirical frequencies) and
    ``posterior_variance_``.
    """

    def __init__(self, mechanism=None, prior=None):
        self.mechanism = mechanism
        self.prior = prior

    def fit(self, X, y=None, sample_weight=None):
        x = column_or_1d(X).astype(np.int64)
        prior = self.prior
        if prior is None:
            prior = DirichletPrior.jeffreys(self.mechanism.input_size)
        s = np.bincount(
            x, weights=None if sample_weight is None else column_or_1d(sample_weight),
            minlength=self.mechanism.output_size,
        ).astype(np.int64)
        res = posterior_from_tally(self.mechanism, prior, s)
        self.result_ = res
        self.distribution_ = res.mean.probs
        self.estimate_ = res.mean.probs
        self.frequency_ = res.freq_mean.probs
        self.posterior_variance_ = res.variance
        return self
