"""Pure numpy versions of the hot kernels in ``_kernels.pyx``.

Both modules expose the same three functions with the same signatures and
status codes; ``_backend`` picks one at import time.
"""

from time import perf_counter

import numpy as np
import scipy.sparse as sp

RUNNING, CONVERGED, DIVERGED, STALLED = 0, 1, 2, 3
DIVERGENCE_RES = 1e12

LK_CONSTANT, LK_NORMALIZED, LK_RAW = 0, 1, 2


def bucket_sum(A, b, bucket, row_sign, d):
    """Sum (optionally signed) source rows into `d` buckets."""
    m = A.shape[0]
    data = np.ones(m) if row_sign is None else np.asarray(row_sign, dtype=np.float64)
    S = sp.csr_matrix((data, (bucket, np.arange(m))), shape=(d, m))
    return np.ascontiguousarray(S @ A), S @ b


def otherwise_lk(AJ, v):
    """``1 / lambda_max(A_J^T diag(v) A_J)``, the fallback value of ``L_k``."""
    sv = np.sqrt(v)[:, None] * AJ
    return 1.0 / float(np.linalg.eigvalsh(sv @ sv.T)[-1])


def _rel_error(x, xstar, xstar_sq):
    e = x - xstar
    return float(e @ e) / xstar_sq


def mwrk_steps(A, b, norms, x, xstar, xstar_sq, tol, max_steps, res_out, time_out, sel_out):
    """Run up to `max_steps` maximal-weighted-residual Kaczmarz steps on `x`.

    Returns ``(steps_taken, status)``. Rows with zero norm are never chosen;
    ties go to the lowest index.
    """
    track = xstar_sq > 0.0
    eligible = norms > 0.0
    safe = np.where(eligible, norms, 1.0)
    for k in range(max_steps):
        r = b - A @ x
        weighted = np.where(eligible, r * r / safe, -1.0)
        i = int(np.argmax(weighted))
        if weighted[i] <= 0.0:
            return k, STALLED
        x += (r[i] / norms[i]) * A[i]
        sel_out[k] = i
        time_out[k] = perf_counter()
        if track:
            res = _rel_error(x, xstar, xstar_sq)
            res_out[k] = res
            if res < tol:
                return k + 1, CONVERGED
            if res > DIVERGENCE_RES:
                return k + 1, DIVERGED
        else:
            res_out[k] = np.nan
    return max_steps, RUNNING


def rabk_steps(A, b, norms, x, blocks, weights, lk_mode, alpha, xstar, xstar_sq, tol,
               res_out, time_out):
    """Run one averaged block Kaczmarz step per row of `blocks`.

    ``lk_mode`` selects the stepsize: constant `alpha`, or ``alpha * L_k``
    with the norm-scaled or raw weights. Steps whose direction vanishes
    leave `x` unchanged; when only the raw ``L_k`` denominator cancels,
    ``L_k`` falls back to :func:`otherwise_lk`. Both events are counted.

    Returns ``(steps_taken, status, degenerate_steps)``.
    """
    track = xstar_sq > 0.0
    degenerate = 0
    for k in range(blocks.shape[0]):
        J = blocks[k]
        AJ = A[J]
        r = AJ @ x - b[J]
        c = weights * r / norms[J]
        g = c @ AJ
        gg = float(g @ g)
        if gg == 0.0:
            degenerate += 1
        else:
            if lk_mode == LK_CONSTANT:
                step = alpha
            elif lk_mode == LK_NORMALIZED:
                step = alpha * float(c @ r) / gg
            else:
                wr = weights * r
                graw = wr @ AJ
                den = float(graw @ graw)
                if den > 0.0:
                    step = alpha * float(wr @ r) / den
                else:
                    degenerate += 1
                    step = alpha * otherwise_lk(AJ, weights)
            x -= step * g
        time_out[k] = perf_counter()
        if track:
            res = _rel_error(x, xstar, xstar_sq)
            res_out[k] = res
            if res < tol:
                return k + 1, CONVERGED, degenerate
            if res > DIVERGENCE_RES:
                return k + 1, DIVERGED, degenerate
        else:
            res_out[k] = np.nan
    return blocks.shape[0], RUNNING, degenerate
