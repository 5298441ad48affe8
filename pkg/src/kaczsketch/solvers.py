"""Kaczmarz-type solvers for consistent overdetermined systems.

Methods
-------
MWRK
    Maximal weighted residual Kaczmarz on the full system.
RS-MWRK
    MWRK run on a sketched system ``(S A, S b)`` with ``S`` one of G, Q or
    the classic count sketch CS (the CS pairing is the benchmark baseline
    "CS-MWRK").
RaBK-const / RaBK-adaptive
    Randomized average block Kaczmarz with a constant or adaptive stepsize.
LS-RaBK-const / LS-RaBK-adaptive
    RaBK run on a row-sampled system (Q only).

All methods start from ``x0 = 0`` unless told otherwise and stop on the
relative solution error ``||x_k - x*||^2 / ||x*||^2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from time import perf_counter

import numpy as np

from . import _backend
from ._fallback import CONVERGED, DIVERGED, LK_CONSTANT, LK_NORMALIZED, LK_RAW, STALLED
from .linalg import as_matrix, as_vector, row_norms_squared
from .sketch import apply_sketch, build_sketch

METHODS = ("MWRK", "RS-MWRK", "RaBK-const", "RaBK-adaptive", "LS-RaBK-const", "LS-RaBK-adaptive")
SKETCHES = ("none", "G", "Q", "CS")
STATUSES = ("converged", "maxIters", "sketch-insufficient", "diverged", "stalled")

_ALLOWED_SKETCHES = {
    "MWRK": ("none",),
    "RS-MWRK": ("G", "Q", "CS"),
    "RaBK-const": ("none",),
    "RaBK-adaptive": ("none",),
    "LS-RaBK-const": ("Q",),
    "LS-RaBK-adaptive": ("Q",),
}

# Iterations handed to a kernel per call; fixed so that random draws do not
# depend on the backend.
CHUNK = 256
# Below this relative squared residual the iterated system counts as solved.
SOLVED_RESIDUAL = 1e-20


@dataclass(frozen=True)
class StepsizePolicy:
    """How ``alpha_k`` is chosen for the block methods.

    ``kind="constant"`` uses `constant_value` when set (1.95 by default),
    otherwise ``(2 - eta) * w_min / (w_max**2 * lambda_max_block)``.
    ``kind="adaptive"`` uses ``(2 - eta) * L_k``; `lk_weights` chooses whether
    ``L_k`` is built from the norm-scaled weights ``w_i / ||a_i||^2``
    ("normalized") or from the raw ``w_i`` ("raw").
    """

    kind: str = "constant"
    eta: float = 0.05
    constant_value: float | None = 1.95
    lk_weights: str = "normalized"

    def __post_init__(self):
        if self.kind not in ("constant", "adaptive"):
            raise ValueError(f"stepsize kind must be 'constant' or 'adaptive', got {self.kind!r}")
        if not 0.0 < self.eta <= 1.0:
            raise ValueError(f"eta must lie in (0, 1], got {self.eta}")
        if self.constant_value is not None and not self.constant_value > 0.0:
            raise ValueError("constant_value must be positive")
        if self.lk_weights not in ("normalized", "raw"):
            raise ValueError(f"lk_weights must be 'normalized' or 'raw', got {self.lk_weights!r}")


@dataclass(frozen=True)
class BlockSampler:
    """Block size and sampling scheme for the averaged block methods.

    ``mode="fresh"`` draws `tau` distinct rows uniformly at every iteration.
    ``mode="partition"`` shuffles the rows once into ``ceil(rows / tau)``
    blocks of exactly `tau` rows (the last block wraps around to the start)
    and picks one block uniformly per iteration.
    """

    tau: int
    mode: str = "fresh"

    def __post_init__(self):
        if int(self.tau) != self.tau or self.tau < 1:
            raise ValueError(f"block size tau must be an integer >= 1, got {self.tau}")
        if self.mode not in ("fresh", "partition"):
            raise ValueError(f"block mode must be 'fresh' or 'partition', got {self.mode!r}")


@dataclass(frozen=True)
class StoppingRule:
    tol: float = 1e-6
    max_iters: int = 100_000
    res_kind: str = "true-error"

    def __post_init__(self):
        if not self.tol > 0.0:
            raise ValueError("tol must be positive")
        if self.max_iters < 0:
            raise ValueError("max_iters must be >= 0")
        if self.res_kind not in ("true-error", "residual"):
            raise ValueError(f"res_kind must be 'true-error' or 'residual', got {self.res_kind!r}")


@dataclass(frozen=True)
class SolverConfig:
    method: str
    sketch: str = "none"
    d: int | None = None
    stepsize: StepsizePolicy = field(default_factory=StepsizePolicy)
    block: BlockSampler | None = None
    stop: StoppingRule = field(default_factory=StoppingRule)
    seed: int = 0
    weights: tuple[float, ...] | None = None
    trace_stride: int = 1
    record_rows: bool = False

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.sketch not in _ALLOWED_SKETCHES[self.method]:
            raise ValueError(
                f"{self.method} cannot be paired with sketch {self.sketch!r}; "
                f"allowed: {_ALLOWED_SKETCHES[self.method]}"
            )
        if self.sketch != "none" and (self.d is None or self.d < 1):
            raise ValueError("sketched methods need a sketch size d >= 1")
        if self.is_block:
            if self.block is None:
                raise ValueError(f"{self.method} needs a BlockSampler")
            kind = "adaptive" if self.method.endswith("adaptive") else "constant"
            if self.stepsize.kind != kind:
                raise ValueError(f"{self.method} requires a {kind} stepsize policy")
            if self.weights is not None:
                _check_weights(self.weights, self.block.tau)
        if self.trace_stride < 1:
            raise ValueError("trace_stride must be >= 1")

    @property
    def is_block(self) -> bool:
        return "RaBK" in self.method

    @property
    def tag(self) -> str:
        """Short label: MWRK, CS-MWRK, RS-MWRK(G), RaBK-c, LS-RaBK(Q)-a, ..."""
        if self.method == "MWRK":
            return "MWRK"
        if self.method == "RS-MWRK":
            return "CS-MWRK" if self.sketch == "CS" else f"RS-MWRK({self.sketch})"
        suffix = "-a" if self.method.endswith("adaptive") else "-c"
        if self.method.startswith("LS-"):
            return f"LS-RaBK({self.sketch}){suffix}"
        return f"RaBK{suffix}"

    @classmethod
    def from_tag(cls, tag: str, *, d: int | None = None, tau: int | None = None, **kwargs):
        """Build a config from a benchmark label such as ``"LS-RaBK(Q)-c"``.

        Keyword arguments are passed through to the constructor. For the
        adaptive tags the stepsize defaults to ``1.95 * L_k``.
        """
        table = {
            "MWRK": ("MWRK", "none"),
            "CS-MWRK": ("RS-MWRK", "CS"),
            "RS-MWRK(G)": ("RS-MWRK", "G"),
            "RS-MWRK(Q)": ("RS-MWRK", "Q"),
            "RaBK-c": ("RaBK-const", "none"),
            "RaBK-a": ("RaBK-adaptive", "none"),
            "LS-RaBK(Q)-c": ("LS-RaBK-const", "Q"),
            "LS-RaBK(Q)-a": ("LS-RaBK-adaptive", "Q"),
        }
        try:
            method, sketch = table[tag]
        except KeyError:
            raise ValueError(f"unknown method tag {tag!r}; expected one of {sorted(table)}") from None
        if "RaBK" in method:
            if tau is None:
                raise ValueError(f"{tag} needs a block size tau")
            kwargs.setdefault("block", BlockSampler(tau))
            if method.endswith("adaptive"):
                kwargs.setdefault("stepsize", StepsizePolicy("adaptive", eta=0.05, constant_value=None))
            else:
                kwargs.setdefault("stepsize", StepsizePolicy("constant"))
        return cls(method=method, sketch=sketch, d=d if sketch != "none" else None, **kwargs)


TAGS = ("CS-MWRK", "RS-MWRK(Q)", "RS-MWRK(G)", "LS-RaBK(Q)-c", "RaBK-c", "LS-RaBK(Q)-a", "RaBK-a")


@dataclass
class RunTrace:
    """Outcome of one :func:`solve` call.

    ``res_iters``/``res_values``/``res_seconds`` hold the error history at
    iteration 0, every ``stride``-th iteration, and the last iteration.
    Seconds are measured from the start of the run, so they include the
    sketch construction (``setup_seconds``).
    """

    tag: str
    status: str
    iterations: int
    wall_seconds: float
    setup_seconds: float
    final_res: float
    final_x: np.ndarray = field(repr=False)
    res_iters: np.ndarray = field(repr=False)
    res_values: np.ndarray = field(repr=False)
    res_seconds: np.ndarray = field(repr=False)
    stride: int = 1
    res_kind: str = "true-error"
    selected_rows: np.ndarray | None = field(default=None, repr=False)
    sketch: dict | None = None
    alpha: float | None = None
    degenerate_steps: int = 0

    @property
    def converged(self) -> bool:
        return self.status == "converged"


def _check_weights(weights, tau) -> np.ndarray:
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 1 or w.size != tau:
        raise ValueError(f"need one weight per block row ({tau}), got {w.size}")
    if (w < 0).any() or (w > 1).any():
        raise ValueError("weights must lie in [0, 1]")
    if abs(w.sum() - 1.0) > 1e-12:
        raise ValueError(f"weights must sum to 1, got {w.sum()!r}")
    return w


def uniform_weights(tau: int) -> np.ndarray:
    return np.full(tau, 1.0 / tau)


# ---------------------------------------------------------------------------
# single-step operations


def mwrk_select_row(r, norms) -> int:
    """Index maximizing ``r_i**2 / norms_i`` over rows with positive norm.

    Ties resolve to the lowest index.
    """
    r = np.asarray(r, dtype=np.float64)
    norms = np.asarray(norms, dtype=np.float64)
    if r.shape != norms.shape:
        raise ValueError("residual and norm vectors differ in length")
    eligible = norms > 0
    if not eligible.any():
        raise ValueError("every row has zero norm")
    weighted = np.full(r.shape, -np.inf)
    weighted[eligible] = r[eligible] ** 2 / norms[eligible]
    return int(np.argmax(weighted))


def kaczmarz_update(A, b, x, i: int, norms=None) -> np.ndarray:
    """Project `x` onto the hyperplane ``A[i] @ z == b[i]``."""
    A = as_matrix(A)
    a = A[i]
    nrm = float(a @ a) if norms is None else float(norms[i])
    if nrm <= 0.0:
        raise ValueError(f"row {i} has zero norm")
    x = np.asarray(x, dtype=np.float64)
    return x + (b[i] - a @ x) / nrm * a


def _block_parts(A, b, x, J, weights, norms):
    J = np.asarray(J, dtype=np.intp)
    if J.size == 0:
        raise ValueError("empty block")
    A = as_matrix(A)
    norms = row_norms_squared(A) if norms is None else np.asarray(norms, dtype=np.float64)
    if (norms[J] <= 0).any():
        raise ValueError("block contains a zero-norm row")
    w = uniform_weights(J.size) if weights is None else np.asarray(weights, dtype=np.float64)
    AJ = A[J]
    r = AJ @ np.asarray(x, dtype=np.float64) - np.asarray(b, dtype=np.float64)[J]
    return AJ, r, w, norms[J]


def rabk_direction(A, b, x, J, weights=None, norms=None) -> np.ndarray:
    """Weighted average of per-row projection corrections, before the stepsize.

    ``g = sum_i w_i (A[i] @ x - b[i]) / ||A[i]||^2 * A[i]`` over ``i in J``;
    the update is ``x - alpha * g``.
    """
    AJ, r, w, nJ = _block_parts(A, b, x, J, weights, norms)
    return (w * r / nJ) @ AJ


def adaptive_Lk(A, b, x, J, weights=None, norms=None, *, lk_weights="normalized",
                return_branch=False):
    """The adaptive stepsize factor ``L_k`` for block `J`.

    With ``v_i = w_i / ||A[i]||^2`` (or ``v_i = w_i`` when
    ``lk_weights="raw"``)::

        L_k = sum v_i r_i**2 / || sum v_i r_i A[i] ||^2

    When every residual in the block is zero, or the denominator cancels to
    zero, the fallback ``1 / lambda_max(A_J^T diag(v) A_J)`` is returned. With
    ``return_branch=True`` the result is ``(L_k, branch)`` where branch is
    ``"ratio"``, ``"otherwise"`` or ``"degenerate"``.
    """
    AJ, r, w, nJ = _block_parts(A, b, x, J, weights, norms)
    v = w / nJ if lk_weights == "normalized" else w
    direction = (v * r) @ AJ
    den = float(direction @ direction)
    if (r != 0).any() and den > 0.0:
        value, branch = float(v @ (r * r)) / den, "ratio"
    else:
        # eigenvalues of A_J^T diag(v) A_J equal those of diag(sqrt v) A_J A_J^T diag(sqrt v)
        sv = np.sqrt(v)
        M = (sv[:, None] * AJ) @ (sv[:, None] * AJ).T
        value = 1.0 / float(np.linalg.eigvalsh(M)[-1])
        branch = "otherwise" if not (r != 0).any() else "degenerate"
    return (value, branch) if return_branch else value


def constant_alpha(policy: StepsizePolicy, context: dict | None = None) -> float:
    """Constant stepsize: `policy.constant_value` if set, else the formula.

    `context` must then provide ``omega_min``, ``omega_max`` and
    ``lambda_max_block``.
    """
    if policy.constant_value is not None:
        return float(policy.constant_value)
    if context is None:
        raise ValueError("no constant_value and no spectral context to evaluate the formula")
    lam = float(context["lambda_max_block"])
    if not lam > 0.0:
        raise ValueError("lambda_max_block must be positive")
    w_min, w_max = float(context["omega_min"]), float(context["omega_max"])
    return (2.0 - policy.eta) * w_min / (w_max**2 * lam)


# ---------------------------------------------------------------------------
# block sampling


def draw_fresh_blocks(rng: np.random.Generator, eligible: np.ndarray, tau: int, count: int):
    """`count` blocks of `tau` distinct rows, each uniform over `eligible`."""
    E = eligible.size
    if tau * tau <= E:
        # rejection: redraw any block that repeats a row
        out = rng.integers(0, E, size=(count, tau))
        while tau > 1:
            s = np.sort(out, axis=1)
            bad = (s[:, 1:] == s[:, :-1]).any(axis=1)
            nbad = int(bad.sum())
            if not nbad:
                break
            out[bad] = rng.integers(0, E, size=(nbad, tau))
    else:
        rows = max(1, 2_000_000 // E)
        parts = []
        for start in range(0, count, rows):
            keys = rng.random((min(rows, count - start), E))
            parts.append(np.argpartition(keys, tau - 1, axis=1)[:, :tau])
        out = np.concatenate(parts)
    return np.ascontiguousarray(eligible[out], dtype=np.intp)


def partition_blocks(rng: np.random.Generator, eligible: np.ndarray, tau: int) -> np.ndarray:
    E = eligible.size
    perm = eligible[rng.permutation(E)]
    nblocks = math.ceil(E / tau)
    return np.ascontiguousarray(perm[np.arange(nblocks * tau) % E].reshape(nblocks, tau))


# ---------------------------------------------------------------------------
# driver


def split_seed(seed: int) -> tuple[int, int]:
    """Independent (sketch, sampling) seeds derived from one run seed."""
    a, b = np.random.SeedSequence(seed).generate_state(2, dtype=np.uint64)
    return int(a), int(b)


class _History:
    def __init__(self, stride, t0):
        self.stride = stride
        self.t0 = t0
        self.iters, self.values, self.seconds = [], [], []

    def add(self, k, value, t):
        self.iters.append(k)
        self.values.append(value)
        self.seconds.append(t - self.t0)

    def add_chunk(self, k0, steps, res, times):
        ks = np.arange(k0 + 1, k0 + steps + 1)
        keep = ks % self.stride == 0
        keep[-1] = True
        self.iters.extend(ks[keep].tolist())
        self.values.extend(res[:steps][keep].tolist())
        self.seconds.extend((times[:steps][keep] - self.t0).tolist())

    def arrays(self):
        # the last chunk may duplicate an entry already recorded
        it = np.asarray(self.iters, dtype=np.int64)
        _, idx = np.unique(it, return_index=True)
        return (it[idx], np.asarray(self.values)[idx], np.asarray(self.seconds)[idx])


def solve(A, b, config: SolverConfig, xstar=None, x0=None, backend: str | None = None) -> RunTrace:
    """Run the configured method on ``A x = b``.

    Sketched methods build the sketch, form ``(S A, S b)`` once and iterate
    only on it; the error is always measured against the original `xstar`.
    The reported wall time covers sketching, row norms and the iteration.

    Raises
    ------
    ValueError
        On invalid input or configuration, e.g. a sketch size ``d >= m``.
    """
    A = as_matrix(A)
    m, n = A.shape
    b = as_vector(b, "b", m)
    stop = config.stop
    if stop.res_kind == "true-error":
        if xstar is None:
            raise ValueError("true-error stopping needs xstar")
        xstar = as_vector(xstar, "xstar", n)
        xstar_sq = float(xstar @ xstar)
        if xstar_sq == 0.0:
            raise ValueError("xstar is zero; the relative error is undefined")
    else:
        xstar = np.zeros(n)
        xstar_sq = 0.0
        b_sq = float(b @ b)
        if b_sq == 0.0:
            raise ValueError("b is zero; the relative residual is undefined")
    if config.sketch != "none" and config.d >= m:
        raise ValueError(f"sketch must reduce dimension: need d < m, got d={config.d}, m={m}")
    x = np.zeros(n) if x0 is None else as_vector(x0, "x0", n).copy()
    kernels = _backend.get(backend)
    sketch_seed, sample_seed = split_seed(config.seed)

    t0 = perf_counter()
    sketch_record = None
    if config.sketch != "none":
        S = build_sketch(config.sketch, m, config.d, sketch_seed)
        system = apply_sketch(S, A, b, backend=backend)
        At, bt = system.A, system.b
        sketch_record = S.to_record()
    else:
        At, bt = A, b
    norms = row_norms_squared(At)
    eligible = np.flatnonzero(norms > 0)
    if eligible.size == 0:
        raise ValueError("the iterated matrix has no nonzero row")
    setup_seconds = perf_counter() - t0

    def rel_res(z):
        if xstar_sq > 0.0:
            e = z - xstar
            return float(e @ e) / xstar_sq
        r = b - A @ z
        return float(r @ r) / b_sq

    def iterated_solved(z):
        r = bt - At @ z
        return float(r @ r) <= SOLVED_RESIDUAL * max(float(bt @ bt), np.finfo(float).tiny)

    hist = _History(config.trace_stride, t0)
    res = rel_res(x)
    hist.add(0, res, t0 + setup_seconds)
    k = 0
    status = "converged" if res < stop.tol else None
    selected = []
    alpha = None
    degenerate = 0
    # in residual mode the kernels do not track the error; check once per stride
    chunk_len = CHUNK if xstar_sq > 0.0 else config.trace_stride
    res_buf = np.empty(max(chunk_len, 1))
    time_buf = np.empty(max(chunk_len, 1))

    if config.is_block and status is None:
        tau = config.block.tau
        if tau > eligible.size:
            raise ValueError(f"block size tau={tau} exceeds the {eligible.size} usable rows")
        weights = uniform_weights(tau) if config.weights is None else _check_weights(config.weights, tau)
        rng = np.random.default_rng(sample_seed)
        table = partition_blocks(rng, eligible, tau) if config.block.mode == "partition" else None
        policy = config.stepsize
        if policy.kind == "constant":
            context = None
            if policy.constant_value is None:
                from .analysis import lambda_max_block

                lam, _ = lambda_max_block(At, tau, mode=config.block.mode, seed=sample_seed,
                                          blocks=table)
                context = {"omega_min": weights.min(), "omega_max": weights.max(),
                           "lambda_max_block": lam}
            alpha = constant_alpha(policy, context)
            lk_mode = LK_CONSTANT
        else:
            alpha = 2.0 - policy.eta
            lk_mode = LK_NORMALIZED if policy.lk_weights == "normalized" else LK_RAW

    while status is None:
        if k >= stop.max_iters:
            status = "maxIters"
            break
        steps_wanted = min(chunk_len, stop.max_iters - k)
        if config.is_block:
            if table is None:
                blocks = draw_fresh_blocks(rng, eligible, tau, steps_wanted)
            else:
                blocks = table[rng.integers(0, table.shape[0], size=steps_wanted)]
            steps, code, deg = kernels.rabk_steps(
                At, bt, norms, x, blocks, weights, lk_mode, alpha,
                xstar, xstar_sq, stop.tol, res_buf, time_buf)
            degenerate += deg
            if config.record_rows:
                selected.append(blocks[:steps])
        else:
            sel_buf = np.empty(steps_wanted, dtype=np.intp)
            steps, code = kernels.mwrk_steps(
                At, bt, norms, x, xstar, xstar_sq, stop.tol, steps_wanted,
                res_buf, time_buf, sel_buf)
            if config.record_rows:
                selected.append(sel_buf[:steps])
        if steps:
            if xstar_sq == 0.0:
                res_buf[steps - 1] = rel_res(x)
            hist.add_chunk(k, steps, res_buf, time_buf)
            k += steps
        if code == CONVERGED:
            status = "converged"
        elif code == DIVERGED:
            status = "diverged"
        elif xstar_sq == 0.0 and steps and res_buf[steps - 1] < stop.tol:
            status = "converged"
        elif xstar_sq == 0.0 and steps and res_buf[steps - 1] > 1e12:
            status = "diverged"
        elif code == STALLED or iterated_solved(x):
            # the iterated system is solved but the error is still above tol
            res_now = rel_res(x)
            if res_now < stop.tol:
                status = "converged"
            else:
                status = "sketch-insufficient" if config.sketch != "none" else "stalled"

    wall = perf_counter() - t0
    it, vals, secs = hist.arrays()
    rows = None
    if config.record_rows:
        rows = np.concatenate(selected) if selected else np.empty(0, dtype=np.intp)
    return RunTrace(
        tag=config.tag,
        status=status,
        iterations=k,
        wall_seconds=wall,
        setup_seconds=setup_seconds,
        final_res=float(vals[-1]),
        final_x=x,
        res_iters=it,
        res_values=vals,
        res_seconds=secs,
        stride=config.trace_stride,
        res_kind=stop.res_kind,
        selected_rows=rows,
        sketch=sketch_record,
        alpha=alpha,
        degenerate_steps=degenerate,
    )


def with_seed(config: SolverConfig, seed: int) -> SolverConfig:
    return replace(config, seed=seed)
