"""Privacy-utility lower bounds.

The asymptotic constants ``gamma_mu`` and ``delta_mu`` are expectations over
the prior of log-determinants of small matrices built from the mechanism;
they are estimated by Monte Carlo. The epsilon-only bounds and the exact
binary Randomised Response errors are closed forms. Natural logarithms
throughout.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass

import numpy as np

from .core import DirichletPrior, Distribution, InvariantError, Mechanism, ldp_epsilon
from .mechanisms import as_generator, sample_prior_many

log = logging.getLogger(__name__)

LOG_2PIE = math.log(2.0 * math.pi * math.e)
COND_LIMIT = 1e14


def matrix_D(mechanism: Mechanism, p) -> np.ndarray:
    """``Q^T diag(Q p)^-1 Q`` (a x a); requires p in the open simplex."""
    p = np.asarray(getattr(p, "probs", p), dtype=float)
    if np.any(p <= 0):
        raise InvariantError("matrix_D needs an interior point (all entries > 0)")
    q = mechanism.matrix
    return q.T @ (q / (q @ p)[:, None])


def matrix_E(mechanism: Mechanism, x: int) -> np.ndarray:
    """``diag(w_x) - w_x w_x^T`` with ``w_x`` column x minus its last entry."""
    w = mechanism.truncated_column(x)
    return np.diag(w) - np.outer(w, w)


def matrix_G(mechanism: Mechanism, p) -> np.ndarray:
    """``sum_x p_x E_x``."""
    p = np.asarray(getattr(p, "probs", p), dtype=float)
    w = mechanism.matrix[:-1, :]  # (b-1, a)
    return np.diag(w @ p) - (w * p) @ w.T


def logdet_spd(m: np.ndarray) -> float:
    """Log-determinant via Cholesky; raises ``LinAlgError`` if not positive definite."""
    chol = np.linalg.cholesky(m)
    return 2.0 * float(np.log(np.diag(chol)).sum())


@dataclass(frozen=True)
class BoundReport:
    gamma_mu: float
    gamma_mu_stderr: float
    delta_mu: float
    delta_mu_stderr: float
    mc_samples: int
    rejected_samples: int
    epsilon: float
    eps_bound_gamma: float
    eps_bound_delta: float
    mse_lower_distr: float | None = None
    mse_lower_freq: float | None = None
    linalg_bound_distr: float | None = None
    linalg_bound_freq: float | None = None
    linalg_bound_distr_stderr: float | None = None
    linalg_bound_freq_stderr: float | None = None
    n: int | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def _pairwise_sum(v: np.ndarray) -> float:
    # fixed reduction order regardless of how samples were produced
    v = np.asarray(v, dtype=float)
    while v.shape[0] > 1:
        if v.shape[0] % 2:
            v = np.append(v, 0.0)
        v = v[0::2] + v[1::2]
    return float(v[0]) if v.size else 0.0


def _mean_stderr(v: np.ndarray):
    k = v.shape[0]
    mean = _pairwise_sum(v) / k
    if k < 2:
        return mean, 0.0
    var = _pairwise_sum((v - mean) ** 2) / (k - 1)
    return mean, math.sqrt(var / k)


def gamma_delta_mc(mechanism: Mechanism, prior: DirichletPrior, samples: int = 10000, seed=0):
    """Monte-Carlo estimates of ``gamma_mu`` and ``delta_mu``.

    Returns ``(gamma, gamma_se, delta, delta_se, used, rejected)``. Samples
    whose ``D_P`` has condition number above 1e14 are dropped and counted.
    """
    if samples < 100:
        raise InvariantError("gamma_delta_mc needs at least 100 samples")
    if prior.alphabet_size != mechanism.input_size:
        raise InvariantError("prior and mechanism alphabets differ")
    a = mechanism.input_size
    draws = sample_prior_many(prior, samples, as_generator(seed))
    g_terms, d_terms = [], []
    rejected = 0
    for p in draws:
        if np.any(p <= 0):
            rejected += 1
            continue
        D = matrix_D(mechanism, p)
        G = matrix_G(mechanism, p)
        if np.linalg.cond(D) > COND_LIMIT:
            rejected += 1
            continue
        try:
            ld_D = logdet_spd(D)
            ld_G = logdet_spd(G) if G.size else 0.0
        except np.linalg.LinAlgError:
            rejected += 1
            continue
        gamma_i = 0.5 * (a - 1) * LOG_2PIE - 0.5 * ld_D
        qp = mechanism.matrix @ p
        g_terms.append(gamma_i)
        d_terms.append(gamma_i + 0.5 * (ld_G - float(np.log(qp).sum())))
    if rejected:
        log.warning("gamma_delta_mc: rejected %d of %d samples", rejected, samples)
    if not g_terms:
        raise InvariantError("every Monte-Carlo sample was rejected")
    g, g_se = _mean_stderr(np.array(g_terms))
    d, d_se = _mean_stderr(np.array(d_terms))
    return g, g_se, d, d_se, len(g_terms), rejected


def eps_gamma_bound(a: int, epsilon: float) -> float:
    """Lower bound on gamma_mu for any epsilon-LDP mechanism."""
    return (a - 1) * (0.5 * LOG_2PIE - math.log(math.expm1(epsilon)))


def eps_delta_bound(a: int, b: int, epsilon: float) -> float:
    """Lower bound on delta_mu for any epsilon-LDP mechanism with b outputs."""
    return eps_gamma_bound(a, epsilon) - 0.5 * b * epsilon


def eps_lower_bounds(a: int, b: int, epsilon: float, n: int):
    """Asymptotic MSE lower bounds at n users: ``(distr, freq)``.

    ``n * MSE_distr >= a / (e^eps - 1)^2`` and
    ``n * MSE_freq >= a e^(-b eps / (2(a-1))) / (e^eps - 1)^2``.
    """
    if a < 2 or epsilon <= 0 or n < 1:
        raise InvariantError("eps_lower_bounds needs a >= 2, epsilon > 0, n >= 1")
    base = a / (n * math.expm1(epsilon) ** 2)
    return base, base * math.exp(-b * epsilon / (2.0 * (a - 1)))


def entropy_bound_forms(h: float, a: int, n: int | None = None, target: str = "distr") -> float:
    """Right-hand side of the entropy-power MSE bound.

    ``target="distr"``: ``a/(2 pi e) exp(2 h / (a-1))`` for a differential
    entropy ``h``. ``target="freq"``: the same with a ``1/n^2`` prefactor for a
    discrete entropy. Passing ``gamma_mu`` (or ``delta_mu``) as ``h`` with
    ``target="distr"`` gives the limit of ``n * MSE``.
    """
    if a < 2:
        raise InvariantError("entropy_bound_forms needs a >= 2")
    value = a / (2.0 * math.pi * math.e) * math.exp(2.0 * h / (a - 1))
    if target == "distr":
        return value
    if target == "freq":
        if not n or n < 1:
            raise InvariantError("frequency form needs n >= 1")
        return value / (n * n)
    raise ValueError(f"unknown target {target!r}")


def linalg_bound(constant: float, a: int, stderr: float = 0.0):
    """Asymptotic ``n * MSE`` bound from gamma_mu / delta_mu, with delta-method stderr."""
    value = entropy_bound_forms(constant, a)
    return value, value * 2.0 / (a - 1) * stderr


def rr_exact_mse(epsilon: float, n: int, prior: DirichletPrior | None = None, cross_moment: float | None = None):
    """Exact MSEs of the unbiased binary RR estimator: ``(distr, freq)``.

    ``E[P_1 P_2]`` comes from the Dirichlet moment formula, or from
    ``cross_moment`` when the prior is not Dirichlet.
    """
    if epsilon <= 0 or n < 1:
        raise InvariantError("rr_exact_mse needs epsilon > 0 and n >= 1")
    if cross_moment is None:
        if prior is None or prior.alphabet_size != 2:
            raise InvariantError("binary RR needs a two-category prior")
        cross_moment = prior.cross_moment(0, 1)
    e = math.exp(epsilon)
    em1sq = math.expm1(epsilon) ** 2
    distr = 2.0 / n * (e / em1sq + cross_moment)
    freq = 2.0 * e / (n * em1sq)
    return distr, freq


def bound_report(mechanism: Mechanism, prior: DirichletPrior, samples: int = 10000, seed=0, n: int | None = None) -> BoundReport:
    """Everything the ``bounds`` command reports for one mechanism and prior."""
    a, b = mechanism.input_size, mechanism.output_size
    eps = ldp_epsilon(mechanism)
    g, g_se, d, d_se, used, rejected = gamma_delta_mc(mechanism, prior, samples, seed)
    lin_distr, lin_distr_se = linalg_bound(g, a, g_se)
    lin_freq, lin_freq_se = linalg_bound(d, a, d_se)
    distr = freq = None
    if n is not None:
        distr, freq = eps_lower_bounds(a, b, eps, n)
        lin_distr, lin_distr_se = lin_distr / n, lin_distr_se / n
        lin_freq, lin_freq_se = lin_freq / n, lin_freq_se / n
    return BoundReport(
        gamma_mu=g,
        gamma_mu_stderr=g_se,
        delta_mu=d,
        delta_mu_stderr=d_se,
        mc_samples=used,
        rejected_samples=rejected,
        epsilon=eps,
        eps_bound_gamma=eps_gamma_bound(a, eps),
        eps_bound_delta=eps_delta_bound(a, b, eps),
        mse_lower_distr=distr,
        mse_lower_freq=freq,
        linalg_bound_distr=lin_distr,
        linalg_bound_freq=lin_freq,
        linalg_bound_distr_stderr=lin_distr_se,
        linalg_bound_freq_stderr=lin_freq_se,
        n=n,
    )
