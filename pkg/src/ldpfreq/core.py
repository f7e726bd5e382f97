"""Domain types shared across the package.

Alphabets are 0-based: inputs are ``0..a-1`` and outputs ``0..b-1``. A mechanism
is stored as a column-stochastic ``b x a`` matrix whose column ``x`` is the
output distribution for input ``x``.

All types are immutable: array fields are copied on construction and marked
read-only.
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields

import numpy as np

SUM_TOL = 1e-9
COLUMN_SUM_TOL = 1e-12
RANK_TOL = 1e-10


class InvariantError(ValueError):
    """Raised when a value violates the invariants of its domain type."""


def _frozen(arr, dtype=float) -> np.ndarray:
    out = np.array(arr, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


class _ArrayValue:
    """Value equality and hashing for single-array dataclasses."""

    def _array(self) -> np.ndarray:
        return getattr(self, fields(self)[0].name)

    def __eq__(self, other):
        if type(other) is not type(self):
            return NotImplemented
        return np.array_equal(self._array(), other._array())

    def __hash__(self):
        arr = self._array()
        return hash((type(self).__name__, arr.shape, arr.tobytes()))


@dataclass(frozen=True, eq=False)
class SignedVector(_ArrayValue):
    """An estimate in R^a; not necessarily on the simplex."""

    values: np.ndarray

    def __post_init__(self):
        values = _frozen(self.values)
        if values.ndim != 1:
            raise InvariantError("SignedVector must be one-dimensional")
        if not np.all(np.isfinite(values)):
            raise InvariantError("SignedVector entries must be finite")
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return self.values.shape[0]

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)


@dataclass(frozen=True, eq=False)
class Distribution(_ArrayValue):
    """A point on the probability simplex over ``a`` categories."""

    probs: np.ndarray

    def __post_init__(self):
        probs = _frozen(self.probs)
        if probs.ndim != 1 or probs.shape[0] < 1:
            raise InvariantError("Distribution must be a non-empty vector")
        if not np.all(np.isfinite(probs)):
            raise InvariantError("Distribution entries must be finite")
        if np.any(probs < 0):
            idx = np.flatnonzero(probs < 0).tolist()
            raise InvariantError(f"Distribution has negative entries at {idx}")
        total = float(probs.sum())
        if abs(total - 1.0) > SUM_TOL:
            raise InvariantError(f"Distribution sums to {total!r}, expected 1")
        object.__setattr__(self, "probs", probs)

    @property
    def alphabet_size(self) -> int:
        return self.probs.shape[0]

    def __len__(self) -> int:
        return self.alphabet_size

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.probs, dtype=dtype)

    @classmethod
    def uniform(cls, a: int) -> "Distribution":
        return cls(np.full(a, 1.0 / a))


@dataclass(frozen=True, eq=False)
class TallyVector(_ArrayValue):
    """Integer counts over an alphabet. ``total`` is the number of users n."""

    counts: np.ndarray

    def __post_init__(self):
        raw = np.asarray(self.counts)
        if raw.ndim != 1:
            raise InvariantError("TallyVector must be one-dimensional")
        if raw.size and not np.all(np.equal(np.mod(raw, 1), 0)):
            raise InvariantError("TallyVector counts must be integers")
        counts = _frozen(raw, dtype=np.int64)
        if np.any(counts < 0):
            raise InvariantError("TallyVector counts must be non-negative")
        object.__setattr__(self, "counts", counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __len__(self) -> int:
        return self.counts.shape[0]

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.counts, dtype=dtype)

    @classmethod
    def from_samples(cls, samples, size: int) -> "TallyVector":
        samples = np.asarray(samples, dtype=np.int64)
        if samples.size and (samples.min() < 0 or samples.max() >= size):
            raise InvariantError(f"samples out of range [0, {size})")
        return cls(np.bincount(samples, minlength=size))


def joint_tally(inputs, outputs, a: int, b: int) -> np.ndarray:
    """The ``b x a`` matrix of counts ``#{i : Y_i = y, X_i = x}``.

    Row sums give the output tally S, column sums the input tally T.
    """
    inputs = np.asarray(inputs, dtype=np.int64)
    outputs = np.asarray(outputs, dtype=np.int64)
    if inputs.shape != outputs.shape:
        raise InvariantError("inputs and outputs must have the same length")
    flat = np.bincount(outputs * a + inputs, minlength=a * b)
    return flat.reshape(b, a)


@dataclass(frozen=True, eq=False)
class DirichletPrior(_ArrayValue):
    """Dirichlet prior with strictly positive parameter vector ``gamma``."""

    gamma: np.ndarray

    def __post_init__(self):
        gamma = _frozen(self.gamma)
        if gamma.ndim != 1 or gamma.shape[0] < 1:
            raise InvariantError("Dirichlet parameter must be a non-empty vector")
        if not np.all(np.isfinite(gamma)) or np.any(gamma <= 0):
            raise InvariantError("Dirichlet parameters must be finite and > 0")
        object.__setattr__(self, "gamma", gamma)

    @property
    def alphabet_size(self) -> int:
        return self.gamma.shape[0]

    @property
    def concentration(self) -> float:
        return float(self.gamma.sum())

    def mean(self) -> np.ndarray:
        return self.gamma / self.concentration

    def variance(self) -> np.ndarray:
        m = self.mean()
        return m * (1.0 - m) / (1.0 + self.concentration)

    def cross_moment(self, i: int = 0, j: int = 1) -> float:
        """E[P_i P_j] for i != j."""
        g0 = self.concentration
        return float(self.gamma[i] * self.gamma[j] / (g0 * g0 * (g0 + 1.0)))

    @classmethod
    def jeffreys(cls, a: int) -> "DirichletPrior":
        return cls(np.full(a, 0.5))

    @classmethod
    def uniform(cls, a: int) -> "DirichletPrior":
        return cls(np.ones(a))


@dataclass(frozen=True)
class Violation:
    invariant: str
    indices: tuple
    detail: str = ""


@dataclass(frozen=True)
class ValidationResult:
    violations: tuple = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok

    def names(self) -> set:
        return {v.invariant for v in self.violations}


def _check_matrix(matrix: np.ndarray) -> ValidationResult:
    violations = []
    if matrix.ndim != 2 or 0 in matrix.shape:
        return ValidationResult((Violation("shape", (), f"got shape {matrix.shape}"),))
    if not np.all(np.isfinite(matrix)):
        bad = tuple(map(tuple, np.argwhere(~np.isfinite(matrix)).tolist()))
        return ValidationResult((Violation("finite", bad),))
    nonpos = np.argwhere(matrix <= 0)
    if nonpos.size:
        violations.append(
            Violation("strict positivity", tuple(map(tuple, nonpos.tolist())))
        )
    col_err = np.abs(matrix.sum(axis=0) - 1.0)
    bad_cols = np.flatnonzero(col_err > COLUMN_SUM_TOL)
    if bad_cols.size:
        violations.append(
            Violation("column sums", tuple(bad_cols.tolist()), f"max error {col_err.max():.3e}")
        )
    b, a = matrix.shape
    if b < a:
        violations.append(Violation("rank", (), f"b={b} < a={a}"))
    else:
        norms = np.linalg.norm(matrix, axis=0)
        norms[norms == 0] = 1.0
        sv = np.linalg.svd(matrix / norms, compute_uv=False)
        if sv.min() <= RANK_TOL:
            violations.append(Violation("rank", (), f"smallest singular value {sv.min():.3e}"))
    return ValidationResult(tuple(violations))


@dataclass(frozen=True, eq=False)
class Mechanism:
    """A privacy protocol as a column-stochastic ``b x a`` matrix.

    Construction enforces strict positivity, unit column sums and full column
    rank. Use :func:`validate_mechanism` to inspect an arbitrary matrix
    without raising.
    """

    matrix: np.ndarray
    name: str = "custom"
    params: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        matrix = _frozen(self.matrix)
        result = _check_matrix(matrix)
        if not result.ok:
            msg = "; ".join(f"{v.invariant} {v.indices or ''} {v.detail}".strip() for v in result.violations)
            raise InvariantError(f"invalid mechanism: {msg}")
        object.__setattr__(self, "matrix", matrix)
        object.__setattr__(self, "params", dict(self.params))

    def __eq__(self, other):
        if not isinstance(other, Mechanism):
            return NotImplemented
        return self.name == other.name and np.array_equal(self.matrix, other.matrix)

    def __hash__(self):
        return hash((self.name, self.matrix.shape, self.matrix.tobytes()))

    @property
    def input_size(self) -> int:
        return self.matrix.shape[1]

    @property
    def output_size(self) -> int:
        return self.matrix.shape[0]

    def truncated_column(self, x: int) -> np.ndarray:
        """Column ``x`` with its last entry dropped (length ``b - 1``)."""
        return self.matrix[:-1, x].copy()

    def output_distribution(self, p) -> np.ndarray:
        return self.matrix @ np.asarray(p, dtype=float)

    @property
    def epsilon(self) -> float:
        return ldp_epsilon(self)


def validate_mechanism(matrix) -> ValidationResult:
    """Check the three mechanism invariants, returning every violation found."""
    if isinstance(matrix, Mechanism):
        matrix = matrix.matrix
    return _check_matrix(np.asarray(matrix, dtype=float))


def ldp_epsilon(mechanism) -> float:
    """Smallest epsilon for which the mechanism is epsilon-LDP."""
    matrix = mechanism.matrix if isinstance(mechanism, Mechanism) else np.asarray(mechanism, float)
    if np.any(matrix <= 0):
        raise InvariantError("epsilon is undefined for matrices with zero entries")
    log_q = np.log(matrix)
    return float(np.max(log_q.max(axis=1) - log_q.min(axis=1)))


def simplex_project(v) -> Distribution:
    """Euclidean projection onto the probability simplex (sort-based)."""
    return Distribution(_project(np.asarray(v, dtype=float)))


def _project(v: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(v)):
        raise InvariantError("cannot project non-finite vector")
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    ind = np.arange(1, v.shape[0] + 1)
    rho = np.count_nonzero(u - css / ind > 0)
    theta = css[rho - 1] / rho
    out = np.maximum(v - theta, 0.0)
    # absorb rounding so the sum check holds at large a
    out /= out.sum()
    return out


@dataclass(frozen=True)
class EstimateReport:
    """An estimate together with its simplex projection and solver provenance."""

    estimate: SignedVector
    projected: Distribution
    estimator_name: str
    objective: float = float("nan")
    iterations: int = 0
    converged: bool = True

    def to_dict(self) -> dict:
        return {
            "estimator": self.estimator_name,
            "objective": None if np.isnan(self.objective) else float(self.objective),
            "iterations": int(self.iterations),
            "converged": bool(self.converged),
            "estimate": self.estimate.values.tolist(),
            "projected": self.projected.probs.tolist(),
        }
