"""Randomised Response and Unary Encoding, plus samplers for the LDP pipeline.

Unary Encoding outputs are integer bitmasks: bit ``j`` of a report is the
perturbed membership bit of category ``j`` (bit 0 is the least significant).
The explicit ``2**a x a`` matrix is only built for ``a <= 20``; sampling and
likelihood evaluation use the per-bit product form for any ``a``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted, column_or_1d

from .core import (
    DirichletPrior,
    Distribution,
    InvariantError,
    Mechanism,
    TallyVector,
)

MAX_UE_EXPANSION = 20
MAX_UE_BITS = 62


def as_generator(seed) -> np.random.Generator:
    """Coerce an int, SeedSequence, Generator or None into a Generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


@dataclass(frozen=True)
class RRSpec:
    a: int
    epsilon: float

    def __post_init__(self):
        if int(self.a) != self.a or self.a < 2:
            raise InvariantError(f"RR needs a >= 2, got {self.a}")
        if not (self.epsilon > 0 and math.isfinite(self.epsilon)):
            raise InvariantError(f"RR needs epsilon > 0, got {self.epsilon}")

    @property
    def keep_prob(self) -> float:
        e = math.exp(self.epsilon)
        return e / (e + self.a - 1)

    @property
    def other_prob(self) -> float:
        return 1.0 / (math.exp(self.epsilon) + self.a - 1)


@dataclass(frozen=True)
class UESpec:
    """Unary Encoding with per-bit keep probability ``p_keep`` and flip probability ``q_flip``."""

    a: int
    p_keep: float
    q_flip: float
    variant: str = "custom"

    def __post_init__(self):
        if int(self.a) != self.a or self.a < 2:
            raise InvariantError(f"UE needs a >= 2, got {self.a}")
        if not (0.0 < self.q_flip < self.p_keep < 1.0):
            raise InvariantError(
                f"UE needs 0 < q_flip < p_keep < 1, got q={self.q_flip}, p={self.p_keep}"
            )

    @classmethod
    def symmetric(cls, a: int, epsilon: float) -> "UESpec":
        """RAPPOR-style symmetric UE: p = e^(eps/2)/(e^(eps/2)+1), q = 1 - p."""
        if epsilon <= 0:
            raise InvariantError("epsilon must be > 0")
        h = math.exp(epsilon / 2)
        return cls(a, h / (h + 1.0), 1.0 / (h + 1.0), variant="sue")

    @classmethod
    def optimized(cls, a: int, epsilon: float) -> "UESpec":
        """OUE: p = 1/2, q = 1/(e^eps + 1)."""
        if epsilon <= 0:
            raise InvariantError("epsilon must be > 0")
        return cls(a, 0.5, 1.0 / (math.exp(epsilon) + 1.0), variant="oue")

    @property
    def epsilon(self) -> float:
        p, q = self.p_keep, self.q_flip
        return math.log(p * (1 - q) / (q * (1 - p)))

    @property
    def output_size(self) -> int:
        return 2 ** self.a

    def row_probs(self, bitmasks) -> np.ndarray:
        """Rows ``Q[y, :]`` for the given output bitmasks, shape ``(len(y), a)``."""
        bits = unpack_bits(bitmasks, self.a).astype(bool)
        log_p, log_1p = math.log(self.p_keep), math.log1p(-self.p_keep)
        log_q, log_1q = math.log(self.q_flip), math.log1p(-self.q_flip)
        # log-prob of all bits under "every bit is a zero-bit", then swap in bit x
        base = np.where(bits, log_q, log_1q).sum(axis=1)
        own = np.where(bits, log_p, log_1p)
        other = np.where(bits, log_q, log_1q)
        return np.exp(base[:, None] - other + own)


def unpack_bits(bitmasks, a: int) -> np.ndarray:
    bitmasks = np.asarray(bitmasks, dtype=np.int64)
    return ((bitmasks[:, None] >> np.arange(a, dtype=np.int64)) & 1).astype(np.int8)


def rr_matrix(spec: RRSpec) -> Mechanism:
    """The ``a x a`` Randomised Response matrix with privacy level ``spec.epsilon``."""
    a = spec.a
    e = math.exp(spec.epsilon)
    q = np.full((a, a), 1.0 / (e + a - 1))
    np.fill_diagonal(q, e / (e + a - 1))
    return Mechanism(q, name="rr", params={"kind": "rr", "a": a, "epsilon": spec.epsilon})


def ue_matrix(spec: UESpec) -> Mechanism:
    """Explicit ``2**a x a`` Unary Encoding matrix; refused for ``a > 20``."""
    if spec.a > MAX_UE_EXPANSION:
        raise InvariantError(
            f"UE matrix expansion refused for a={spec.a} > {MAX_UE_EXPANSION}"
        )
    q = spec.row_probs(np.arange(spec.output_size))
    return Mechanism(
        q,
        name=f"ue-{spec.variant}",
        params={"kind": "ue", "a": spec.a, "p_keep": spec.p_keep, "q_flip": spec.q_flip,
                "variant": spec.variant},
    )


def ue_spec_of(mechanism: Mechanism) -> UESpec | None:
    p = mechanism.params
    if p.get("kind") != "ue":
        return None
    return UESpec(p["a"], p["p_keep"], p["q_flip"], p.get("variant", "custom"))


def rr_spec_of(mechanism: Mechanism) -> RRSpec | None:
    p = mechanism.params
    if p.get("kind") != "rr":
        return None
    return RRSpec(p["a"], p["epsilon"])


def _check_inputs(x_data, a: int) -> np.ndarray:
    x = np.asarray(x_data, dtype=np.int64).reshape(-1)
    if x.size and (x.min() < 0 or x.max() >= a):
        raise InvariantError(f"inputs out of range [0, {a})")
    return x


def _sample_rr(spec: RRSpec, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    keep = rng.random(x.shape[0]) < spec.keep_prob
    offset = rng.integers(1, spec.a, size=x.shape[0])
    return np.where(keep, x, (x + offset) % spec.a)


def sample_ue_reports(spec: UESpec, x_data, rng_seed=None) -> np.ndarray:
    """Perturb inputs with Unary Encoding, returning report bitmasks."""
    if spec.a > MAX_UE_BITS:
        raise InvariantError(f"UE bitmask reports need a <= {MAX_UE_BITS}")
    rng = as_generator(rng_seed)
    x = _check_inputs(x_data, spec.a)
    n = x.shape[0]
    bits = rng.random((n, spec.a)) < spec.q_flip
    bits[np.arange(n), x] = rng.random(n) < spec.p_keep
    return bits.astype(np.int64) @ (np.int64(1) << np.arange(spec.a, dtype=np.int64))


def sample_reports(mechanism, x_data, rng_seed=None):
    """Draw ``Y_i ~ Q(. | x_i)`` independently for each input.

    ``mechanism`` may be a :class:`Mechanism` or a :class:`UESpec` (for UE
    with large ``a``). Returns ``(outputs, S)``; ``S`` is ``None`` when the
    output alphabet is too large to tally densely.
    """
    rng = as_generator(rng_seed)
    if isinstance(mechanism, UESpec):
        y = sample_ue_reports(mechanism, x_data, rng)
        S = TallyVector.from_samples(y, mechanism.output_size) if mechanism.a <= MAX_UE_EXPANSION else None
        return y, S
    x = _check_inputs(x_data, mechanism.input_size)
    rr = rr_spec_of(mechanism)
    ue = ue_spec_of(mechanism)
    if rr is not None:
        y = _sample_rr(rr, x, rng)
    elif ue is not None:
        y = sample_ue_reports(ue, x, rng)
    else:
        y = np.empty(x.shape[0], dtype=np.int64)
        b = mechanism.output_size
        for col in np.unique(x):
            idx = np.flatnonzero(x == col)
            y[idx] = rng.choice(b, size=idx.shape[0], p=mechanism.matrix[:, col])
    return y, TallyVector.from_samples(y, mechanism.output_size)


def sample_private_data(p, n: int, rng_seed=None):
    """Draw ``n`` i.i.d. inputs from ``p``. Returns ``(inputs, T)``."""
    probs = p.probs if isinstance(p, Distribution) else Distribution(p).probs
    rng = as_generator(rng_seed)
    x = rng.choice(probs.shape[0], size=int(n), p=probs)
    return x.astype(np.int64), TallyVector.from_samples(x, probs.shape[0])


def sample_prior(prior: DirichletPrior, rng_seed=None) -> Distribution:
    """Draw one distribution from a Dirichlet prior via normalised Gamma draws."""
    rng = as_generator(rng_seed)
    while True:
        g = rng.standard_gamma(prior.gamma)
        total = g.sum()
        if total > 0:
            return Distribution(g / total)


def sample_prior_many(prior: DirichletPrior, size: int, rng_seed=None) -> np.ndarray:
    """``size`` Dirichlet draws as rows of an array (same Gamma construction)."""
    rng = as_generator(rng_seed)
    g = rng.standard_gamma(prior.gamma, size=(int(size), prior.alphabet_size))
    return g / g.sum(axis=1, keepdims=True)


class RandomizedResponse(TransformerMixin, BaseEstimator):
    """k-ary Randomised Response as a scikit-learn transformer.

    ``transform`` perturbs a vector of category indices; ``fit`` only records
    the alphabet size (taken from ``n_categories`` or inferred from the data).

    Parameters
    ----------
    epsilon : float
        Privacy level.
    n_categories : int or None
        Alphabet size. Inferred as ``max(X) + 1`` when None.
    random_state : int, Generator or None
    """

    def __init__(self, epsilon=1.0, n_categories=None, random_state=None):
        self.epsilon = epsilon
        self.n_categories = n_categories
        self.random_state = random_state

    def fit(self, X, y=None):
        x = column_or_1d(X).astype(np.int64)
        a = self.n_categories if self.n_categories is not None else int(x.max()) + 1
        self.spec_ = RRSpec(int(a), float(self.epsilon))
        self.mechanism_ = rr_matrix(self.spec_)
        self.rng_ = as_generator(self.random_state)
        return self

    def transform(self, X):
        check_is_fitted(self, "mechanism_")
        y, _ = sample_reports(self.mechanism_, column_or_1d(X), self.rng_)
        return y


class UnaryEncoding(TransformerMixin, BaseEstimator):
    """Unary Encoding transformer; reports are returned as bitmasks.

    ``variant`` is ``"symmetric"`` (RAPPOR-style) or ``"optimized"`` (OUE).
    """

    def __init__(self, epsilon=1.0, n_categories=None, variant="symmetric", random_state=None):
        self.epsilon = epsilon
        self.n_categories = n_categories
        self.variant = variant
        self.random_state = random_state

    def fit(self, X, y=None):
        x = column_or_1d(X).astype(np.int64)
        a = self.n_categories if self.n_categories is not None else int(x.max()) + 1
        if self.variant == "symmetric":
            self.spec_ = UESpec.symmetric(int(a), float(self.epsilon))
        elif self.variant == "optimized":
            self.spec_ = UESpec.optimized(int(a), float(self.epsilon))
        else:
            raise ValueError(f"unknown UE variant {self.variant!r}")
        self.rng_ = as_generator(self.random_state)
        return self

    def transform(self, X):
        check_is_fitted(self, "spec_")
        return sample_ue_reports(self.spec_, column_or_1d(X), self.rng_)
