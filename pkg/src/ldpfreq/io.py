"""CSV formats: tallies (``index,count``), distributions (``index,prob``) and
mechanism matrices (b rows by a columns, no header)."""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .core import Distribution, InvariantError, Mechanism, TallyVector


def _read_indexed(path, value_name: str, cast):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["index", value_name]:
            raise InvariantError(f"{path}: expected header 'index,{value_name}'")
        pairs = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 2:
                raise InvariantError(f"{path}:{lineno}: expected two columns")
            try:
                pairs.append((int(row[0]), cast(row[1])))
            except ValueError as exc:
                raise InvariantError(f"{path}:{lineno}: {exc}") from exc
    if not pairs:
        raise InvariantError(f"{path}: no rows")
    idx = [i for i, _ in pairs]
    if sorted(idx) != list(range(len(idx))):
        raise InvariantError(f"{path}: indices must be 0..{len(idx) - 1} without gaps")
    out = [None] * len(idx)
    for i, v in pairs:
        out[i] = v
    return out


def _parse_count(text: str) -> int:
    value = float(text)
    if value != int(value):
        raise ValueError(f"count {text!r} is not an integer")
    return int(value)


def read_tally(path) -> TallyVector:
    return TallyVector(np.array(_read_indexed(path, "count", _parse_count), dtype=np.int64))


def write_tally(path, tally) -> None:
    counts = np.asarray(getattr(tally, "counts", tally), dtype=np.int64)
    lines = ["index,count"] + [f"{i},{int(c)}" for i, c in enumerate(counts)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_distribution(path) -> Distribution:
    return Distribution(np.array(_read_indexed(path, "prob", float)))


def write_vector(path, values, value_name: str = "prob") -> None:
    values = np.asarray(getattr(values, "probs", getattr(values, "values", values)), dtype=float)
    lines = [f"index,{value_name}"] + [f"{i},{v!r}" for i, v in enumerate(values.tolist())]
    Path(path).write_text("\n".join(lines) + "\n")


def format_vector(values, value_name: str = "prob") -> str:
    values = np.asarray(values, dtype=float)
    lines = [f"index,{value_name}"] + [f"{i},{v!r}" for i, v in enumerate(values.tolist())]
    return "\n".join(lines) + "\n"


def read_matrix(path, name: str = "custom") -> Mechanism:
    try:
        matrix = np.loadtxt(path, delimiter=",", ndmin=2)
    except ValueError as exc:
        raise InvariantError(f"{path}: {exc}") from exc
    return Mechanism(matrix, name=name)


def format_matrix(matrix) -> str:
    return "\n".join(",".join(repr(float(v)) for v in row) for row in np.asarray(matrix)) + "\n"


def write_matrix(path, mechanism) -> None:
    Path(path).write_text(format_matrix(getattr(mechanism, "matrix", mechanism)))


def read_gamma(path) -> np.ndarray:
    """Dirichlet parameters: either ``index,gamma`` CSV or one value per line / comma separated."""
    text = Path(path).read_text().strip()
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if lines and lines[0].replace(" ", "") == "index,gamma":
        return np.array(_read_indexed(path, "gamma", float))
    return np.array([float(v) for ln in lines for v in ln.split(",") if v.strip()])
