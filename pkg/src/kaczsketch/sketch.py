"""Randomized row sketches that shrink an m-row system to d rows.

Three sketches are provided, none of which ever forms the d x m matrix:

* :class:`CountSketchG` -- ``G = C @ Phi``: every source row is hashed into one
  of ``d`` buckets and each bucket carries one random sign (the sign is applied
  to the bucket sum, i.e. one sign per *output* row).
* :class:`CountSketchCS` -- classic count sketch ``Phi @ D`` with one random
  sign per *source* row. Only used as the benchmark baseline.
* :class:`RowSampleQ` -- ``d`` distinct rows drawn uniformly without
  replacement, in draw order (like MATLAB's ``randperm(m, d)``).

Sketches are regenerated from ``(type, m, d, seed)`` and serialize to exactly
that record.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _backend
from .linalg import as_matrix, as_vector, row_norms_squared

SKETCH_TYPES = ("G", "CS", "Q")


def _check_dims(m: int, d: int) -> None:
    if int(m) != m or int(d) != d:
        raise ValueError("m and d must be integers")
    if d < 1:
        raise ValueError(f"sketch size d must be >= 1, got {d}")
    if d >= m:
        raise ValueError(f"sketch must reduce dimension: need d < m, got d={d}, m={m}")


def _frozen(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class CountSketchG:
    m: int
    d: int
    seed: int
    bucket: np.ndarray = field(repr=False)
    sign: np.ndarray = field(repr=False)

    kind = "G"

    def to_record(self) -> dict:
        return {"type": self.kind, "m": self.m, "d": self.d, "seed": self.seed}

    def dense(self) -> np.ndarray:
        """Explicit d x m matrix; for tests on small sizes only."""
        Phi = np.zeros((self.d, self.m))
        Phi[self.bucket, np.arange(self.m)] = 1.0
        return np.diag(self.sign) @ Phi


@dataclass(frozen=True, eq=False)
class CountSketchCS:
    m: int
    d: int
    seed: int
    bucket: np.ndarray = field(repr=False)
    sign: np.ndarray = field(repr=False)

    kind = "CS"

    def to_record(self) -> dict:
        return {"type": self.kind, "m": self.m, "d": self.d, "seed": self.seed}

    def dense(self) -> np.ndarray:
        Phi = np.zeros((self.d, self.m))
        Phi[self.bucket, np.arange(self.m)] = 1.0
        return Phi @ np.diag(self.sign)


@dataclass(frozen=True, eq=False)
class RowSampleQ:
    m: int
    d: int
    seed: int
    selected: np.ndarray = field(repr=False)

    kind = "Q"

    def to_record(self) -> dict:
        return {"type": self.kind, "m": self.m, "d": self.d, "seed": self.seed}

    def dense(self) -> np.ndarray:
        Q = np.zeros((self.d, self.m))
        Q[np.arange(self.d), self.selected] = 1.0
        return Q


@dataclass(frozen=True, eq=False)
class SketchedSystem:
    """The d-row system ``(S A, S b)`` plus where it came from.

    ``zero_rows`` lists rows of ``A`` that are identically zero (empty count
    sketch buckets); solvers never select them.
    """

    A: np.ndarray = field(repr=False)
    b: np.ndarray = field(repr=False)
    provenance: dict
    zero_rows: np.ndarray = field(repr=False)

    @property
    def shape(self) -> tuple[int, int]:
        return self.A.shape


def build_count_sketch(m: int, d: int, seed: int) -> CountSketchG:
    """Draw the bucket map ``h`` and the per-bucket signs from `seed`."""
    _check_dims(m, d)
    rng = np.random.default_rng(seed)
    bucket = rng.integers(0, d, size=m, dtype=np.intp)
    sign = rng.integers(0, 2, size=d).astype(np.float64) * 2.0 - 1.0
    return CountSketchG(int(m), int(d), int(seed), _frozen(bucket), _frozen(sign))


def build_classic_count_sketch(m: int, d: int, seed: int) -> CountSketchCS:
    _check_dims(m, d)
    rng = np.random.default_rng(seed)
    bucket = rng.integers(0, d, size=m, dtype=np.intp)
    sign = rng.integers(0, 2, size=m).astype(np.float64) * 2.0 - 1.0
    return CountSketchCS(int(m), int(d), int(seed), _frozen(bucket), _frozen(sign))


def build_row_sample(m: int, d: int, seed: int) -> RowSampleQ:
    """Pick `d` distinct rows out of `m` uniformly at random (order kept)."""
    _check_dims(m, d)
    rng = np.random.default_rng(seed)
    selected = rng.choice(m, size=d, replace=False).astype(np.intp)
    return RowSampleQ(int(m), int(d), int(seed), _frozen(selected))


_BUILDERS = {
    "G": build_count_sketch,
    "CS": build_classic_count_sketch,
    "Q": build_row_sample,
}


def build_sketch(kind: str, m: int, d: int, seed: int):
    try:
        builder = _BUILDERS[kind]
    except KeyError:
        raise ValueError(f"unknown sketch type {kind!r}; expected one of {SKETCH_TYPES}") from None
    return builder(m, d, seed)


def sketch_from_record(record: dict):
    """Rebuild a sketch from its ``{"type", "m", "d", "seed"}`` record."""
    return build_sketch(record["type"], record["m"], record["d"], record["seed"])


def _inputs(S, A, b) -> tuple[np.ndarray, np.ndarray]:
    A = as_matrix(A)
    if A.shape[0] != S.m:
        raise ValueError(f"sketch expects {S.m} rows, A has {A.shape[0]}")
    b = as_vector(b, "b", S.m)
    return A, b


def _finish(S, At, bt) -> SketchedSystem:
    zero_rows = np.flatnonzero(row_norms_squared(At) == 0.0)
    return SketchedSystem(At, bt, S.to_record(), zero_rows)


def apply_count_sketch(G, A, b, backend=None) -> SketchedSystem:
    """Form ``(G A, G b)`` in one pass over the rows of `A`.

    Works for both :class:`CountSketchG` (sign per bucket) and
    :class:`CountSketchCS` (sign per source row).
    """
    A, b = _inputs(G, A, b)
    kernels = _backend.get(backend)
    if isinstance(G, CountSketchCS):
        At, bt = kernels.bucket_sum(A, b, G.bucket, G.sign, G.d)
    else:
        At, bt = kernels.bucket_sum(A, b, G.bucket, None, G.d)
        At *= G.sign[:, None]
        bt *= G.sign
    return _finish(G, At, bt)


def apply_row_sample(Q: RowSampleQ, A, b) -> SketchedSystem:
    """Copy the selected rows; the other ``m - d`` rows are never read."""
    A, b = _inputs(Q, A, b)
    return _finish(Q, A[Q.selected], b[Q.selected])


def apply_sketch(S, A, b, backend=None) -> SketchedSystem:
    if isinstance(S, RowSampleQ):
        return apply_row_sample(S, A, b)
    return apply_count_sketch(S, A, b, backend=backend)


def embedding_distortion(Atil, A, probes: int = 1000, seed: int = 0) -> tuple[float, float]:
    """Empirical range of ``||Atil x|| / ||A x||`` over random unit probes.

    This only samples the distortion; it is a necessary-condition check,
    not a certificate. Probes with ``||A x|| == 0`` are skipped.
    """
    A = as_matrix(A)
    Atil = as_matrix(Atil, "Atil")
    if Atil.shape[1] != A.shape[1]:
        raise ValueError("Atil and A must have the same number of columns")
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((A.shape[1], probes))
    X /= np.linalg.norm(X, axis=0)
    num = np.linalg.norm(Atil @ X, axis=0)
    den = np.linalg.norm(A @ X, axis=0)
    keep = den > 0
    if not keep.any():
        raise ValueError("every probe lies in the kernel of A")
    ratio = num[keep] / den[keep]
    return float(ratio.min()), float(ratio.max())


def exact_distortion(Atil, A) -> tuple[float, float]:
    """Exact extremes of ``||Atil x|| / ||A x||`` over the row space of `A`.

    Assumes the rows of `Atil` are combinations of rows of `A` (true for
    every sketch here), so directions in the kernel of `A` are irrelevant.
    """
    A = as_matrix(A)
    Atil = as_matrix(Atil, "Atil")
    _, s, Vt = np.linalg.svd(A, full_matrices=False)
    r = int(np.sum(s > max(A.shape) * s[0] * 1e-12))
    M = Atil @ (Vt[:r].T / s[:r])
    sm = np.linalg.svd(M, compute_uv=False)
    lo = sm[-1] if M.shape[0] >= r else 0.0
    return float(lo), float(sm[0])
