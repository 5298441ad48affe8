"""Spectral quantities and convergence envelopes for the Kaczmarz solvers.

Everything here is meant for desk-scale matrices: full SVDs and per-block
eigenvalue solves are used freely.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .linalg import RANK_RTOL, as_matrix, row_norms_squared, smallest_nonzero_singular_value
from .solvers import draw_fresh_blocks, partition_blocks

DEFAULT_BLOCK_DRAWS = 1000


def lambda_max_block(A, tau: int, mode: str = "fresh", seed: int = 0,
                     draws: int = DEFAULT_BLOCK_DRAWS, blocks=None) -> tuple[float, dict]:
    """Largest ``lambda_max(A_J^T diag(1/||A[i]||^2) A_J)`` over blocks ``J``.

    In ``"partition"`` mode the maximum is exact over the partition (taken
    from `blocks` or rebuilt from `seed`). In ``"fresh"`` mode it is a
    Monte-Carlo maximum over `draws` random blocks, hence a lower estimate.

    Returns ``(value, info)`` with ``info = {"exact", "draws"}``.
    """
    A = as_matrix(A)
    if tau < 1:
        raise ValueError("tau must be >= 1")
    norms = row_norms_squared(A)
    eligible = np.flatnonzero(norms > 0)
    if eligible.size == 0:
        raise ValueError("matrix is identically zero")
    if tau > eligible.size:
        raise ValueError(f"tau={tau} exceeds the {eligible.size} nonzero rows")
    N = A / np.sqrt(np.where(norms > 0, norms, 1.0))[:, None]
    rng = np.random.default_rng(seed)
    if mode == "partition":
        if blocks is None:
            blocks = partition_blocks(rng, eligible, tau)
        exact = True
    elif mode == "fresh":
        blocks = draw_fresh_blocks(rng, eligible, tau, draws)
        exact = False
    else:
        raise ValueError(f"unknown block mode {mode!r}")
    blocks = np.asarray(blocks)
    best = 0.0
    for start in range(0, blocks.shape[0], 128):
        NJ = N[blocks[start:start + 128]]
        G = NJ @ NJ.transpose(0, 2, 1) if tau <= A.shape[1] else NJ.transpose(0, 2, 1) @ NJ
        best = max(best, float(np.linalg.eigvalsh(G)[:, -1].max()))
    return best, {"exact": exact, "draws": int(blocks.shape[0])}


@dataclass(frozen=True)
class SpectralSummary:
    sigma_r: float
    frob_sq: float
    max_row_sum_sq: float
    lambda_min_nz: float
    rows: int
    unit_rows: bool
    tau: int | None = None
    lambda_max_block: float | None = None
    block_mode: str | None = None
    block_exact: bool | None = None
    block_draws: int | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def spectral_summary(A, tau: int | None = None, block_mode: str = "fresh", seed: int = 0,
                     draws: int = DEFAULT_BLOCK_DRAWS, blocks=None) -> SpectralSummary:
    """Collect ``sigma_r``, ``||A||_F^2``, the largest leave-one-out row sum and,
    when `tau` is given, ``lambda_max_block``.
    """
    A = as_matrix(A)
    norms = row_norms_squared(A)
    frob = float(np.sum(norms))
    if frob == 0.0:
        raise ValueError("matrix is identically zero")
    sigma = smallest_nonzero_singular_value(A)
    lam, info = (None, {})
    if tau is not None:
        lam, info = lambda_max_block(A, tau, block_mode, seed, draws, blocks)
    return SpectralSummary(
        sigma_r=sigma,
        frob_sq=frob,
        # max_j sum_{i != j} ||A[i]||^2
        max_row_sum_sq=frob - float(norms.min()),
        lambda_min_nz=sigma**2,
        rows=A.shape[0],
        unit_rows=bool(np.allclose(norms, 1.0, rtol=0, atol=1e-10)),
        tau=tau,
        lambda_max_block=lam,
        block_mode=block_mode if tau is not None else None,
        block_exact=info.get("exact"),
        block_draws=info.get("draws"),
    )


@dataclass
class BoundReport:
    """A contraction factor and the error envelope it implies.

    For the MWRK family the envelope is ``first_factor * factor**(k-1)``
    times the initial error (``k >= 1``); otherwise ``factor**k``.
    """

    method: str
    factor: float
    first_factor: float | None = None
    epsilon: float | None = None
    hypotheses_ok: bool = True
    notes: list[str] = field(default_factory=list)

    def __post_init__(self):
        for f in (self.factor, self.first_factor):
            # written so that NaN also counts as a violation
            if f is not None and not 0.0 <= f < 1.0:
                self.hypotheses_ok = False
        if not self.hypotheses_ok:
            self.notes.append("hypotheses violated: a contraction factor lies outside [0, 1)")

    def envelope(self, k, initial: float = 1.0):
        k = np.asarray(k)
        if self.first_factor is None:
            return initial * np.power(self.factor, k, dtype=float)
        out = initial * self.first_factor * np.power(self.factor, np.maximum(k - 1, 0), dtype=float)
        return np.where(k == 0, initial, out)

    def to_dict(self) -> dict:
        return asdict(self)


def _check_eps(eps: float) -> float:
    if not 0.0 <= eps < 1.0:
        raise ValueError(f"epsilon must lie in [0, 1), got {eps}")
    return float(eps)


def _attenuation(eps: float) -> float:
    return (1.0 - eps) ** 2 / (1.0 + eps) ** 2


def _need_block(s: SpectralSummary) -> float:
    if s.lambda_max_block is None:
        raise ValueError("summary has no lambda_max_block; pass tau to spectral_summary")
    return s.lambda_max_block


def _over_row_sum(value: float, s: SpectralSummary) -> float:
    # a single nonzero row leaves an empty leave-one-out sum
    return value / s.max_row_sum_sq if s.max_row_sum_sq > 0 else math.nan


def _row_sum_notes(*summaries: SpectralSummary) -> list[str]:
    if any(s.max_row_sum_sq <= 0 for s in summaries):
        return ["leave-one-out row sum is zero; the subsequent factor is undefined"]
    return []


def mwrk_bound(s: SpectralSummary) -> BoundReport:
    ratio = s.sigma_r**2
    return BoundReport(
        method="MWRK",
        first_factor=1.0 - ratio / s.frob_sq,
        factor=1.0 - _over_row_sum(ratio, s),
        notes=_row_sum_notes(s),
    )


def rs_mwrk_bound(s_original: SpectralSummary, s_sketched: SpectralSummary, epsilon: float) -> BoundReport:
    """Sketched MWRK factors.

    The first step uses ``||A||_F`` of the original matrix and later steps the
    leave-one-out row sums of the sketched one; ``sigma_r`` is always the
    original matrix's.
    """
    eps = _check_eps(epsilon)
    sig2 = s_original.sigma_r**2
    return BoundReport(
        method="RS-MWRK",
        first_factor=1.0 - _attenuation(eps) * sig2 / s_original.frob_sq,
        factor=1.0 - _over_row_sum((1.0 - eps) ** 2 * sig2, s_sketched),
        epsilon=eps,
        notes=_row_sum_notes(s_sketched),
    )


def rabk_bound(s: SpectralSummary, tau: int, rows: int | None = None) -> BoundReport:
    """Expected-error factor ``1 - tau / lambda_max_block * lambda_min_nz / rows``.

    The underlying result assumes unit-norm rows; a note is attached when the
    summary's rows are not normalized.
    """
    if tau < 1:
        raise ValueError("tau must be >= 1")
    lam = _need_block(s)
    rows = s.rows if rows is None else rows
    report = BoundReport(method="RaBK", factor=1.0 - tau / lam * s.lambda_min_nz / rows)
    if not s.unit_rows:
        report.notes.append("rows are not unit-norm; the bound is stated for normalized rows")
    return report


def ls_rabk_bound(s_original: SpectralSummary, tau: int, d: int, epsilon: float) -> BoundReport:
    if tau < 1:
        raise ValueError("tau must be >= 1")
    eps = _check_eps(epsilon)
    lam = _need_block(s_original)
    report = BoundReport(
        method="LS-RaBK",
        factor=1.0 - _attenuation(eps) * tau / lam * s_original.lambda_min_nz / d,
        epsilon=eps,
    )
    if not s_original.unit_rows:
        report.notes.append("rows are not unit-norm; the bound is stated for normalized rows")
    return report


def deviation_t(s_original: SpectralSummary, s_sketched: SpectralSummary) -> float:
    return max(s_original.max_row_sum_sq, s_sketched.max_row_sum_sq)


def mwrk_deviation_bound(s_original: SpectralSummary, s_sketched: SpectralSummary,
                         epsilon: float, p_prev: float) -> float:
    """Bound on ``||x'_k - x_k||^2`` between sketched and plain MWRK iterates.

    `p_prev` is the larger of the two squared errors at step ``k - 1``.
    """
    eps = _check_eps(epsilon)
    t = deviation_t(s_original, s_sketched)
    return (4.0 - (4.0 - 6.0 * eps + 3.0 * eps**2) * s_original.sigma_r**2 / t) * p_prev


def rabk_deviation_bound(s_original: SpectralSummary, tau: int, m: int, epsilon: float,
                         initial_err_sq: float, k: int) -> float:
    """Expected ``||x'_k - x_k||^2`` envelope between LS-RaBK and RaBK."""
    if tau < 1:
        raise ValueError("tau must be >= 1")
    eps = _check_eps(epsilon)
    lam = _need_block(s_original)
    base = tau / lam * s_original.lambda_min_nz / m
    f_plain = 1.0 - base
    f_sketch = 1.0 - _attenuation(eps) * base
    return (f_plain**k + 3.0 * f_sketch**k) * initial_err_sq


@dataclass(frozen=True)
class RangeCheck:
    sine: float
    containment: float
    contained: bool
    equal: bool
    rank_original: int
    rank_sketched: int


def _row_space(M: np.ndarray) -> np.ndarray:
    _, s, Vt = np.linalg.svd(M, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        return np.zeros((M.shape[1], 0))
    r = int(np.sum(s > max(M.shape) * s[0] * RANK_RTOL))
    return Vt[:r].T


def range_preservation_check(A, Atil, tol: float = 1e-8) -> RangeCheck:
    """Compare the row spaces of `A` and `Atil`.

    ``containment`` is the sine of the largest angle between ``R(Atil^T)`` and
    ``R(A^T)`` (zero when every sketched row is a combination of original
    rows); ``sine`` is the gap between the two subspaces, zero exactly when
    they coincide.
    """
    A = as_matrix(A)
    Atil = np.ascontiguousarray(Atil, dtype=np.float64)
    VA = _row_space(A)
    VT = _row_space(Atil)

    def sticking_out(U, V):
        if U.shape[1] == 0:
            return 0.0
        if V.shape[1] == 0:
            return 1.0
        return float(np.linalg.norm(U - V @ (V.T @ U), 2))

    containment = sticking_out(VT, VA)
    sine = max(containment, sticking_out(VA, VT))
    return RangeCheck(
        sine=sine,
        containment=containment,
        contained=containment <= tol,
        equal=sine <= tol,
        rank_original=VA.shape[1],
        rank_sketched=VT.shape[1],
    )


def empirical_epsilon(lo: float, hi: float) -> float:
    """Smallest ``eps`` with ``1 - eps <= lo`` and ``hi <= 1 + eps``."""
    return max(1.0 - lo, hi - 1.0, 0.0)


def theoretical_sketch_size(n: int, epsilon: float, delta: float, constant: float = 1.0) -> float:
    """``constant * n**2 / (delta * epsilon**2)``; the constant is not known."""
    if not (0 < epsilon < 1 and 0 < delta < 1):
        raise ValueError("epsilon and delta must lie in (0, 1)")
    return constant * n**2 / (delta * epsilon**2)
