"""Quotient-of-trace Fisher objective in class space and its FISTA solver."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateDenominator, DimensionError, NonFiniteObjective
from .scatter import LabeledInstanceSet, ScatterPair, init_projection, scatter_pair

__all__ = [
    "SolverConfig",
    "SolverTrace",
    "objective",
    "gradient",
    "fista_optimize",
    "project",
    "fit_projection",
]

log = logging.getLogger(__name__)

_DEN_FLOOR = 1e-300
_H2_KINK = 1e-12
_ARMIJO = 1e-4
_MIN_STEP = 1e-20


@dataclass(frozen=True)
class SolverConfig:
    max_iterations: int = 1000
    relative_tolerance: float = 1e-8
    initial_step: float = 1.0
    backtrack_factor: float = 0.5
    orthogonality_weight: float = 1.0

    def __post_init__(self):
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be non-negative")
        if not self.relative_tolerance > 0:
            raise ValueError("relative_tolerance must be positive")
        if not self.initial_step > 0:
            raise ValueError("initial_step must be positive")
        if not 0 < self.backtrack_factor < 1:
            raise ValueError("backtrack_factor must lie in (0, 1)")
        if self.orthogonality_weight < 0:
            raise ValueError("orthogonality_weight must be non-negative")


@dataclass
class SolverTrace:
    objective_history: list = field(default_factory=list)  # (H, H1, H2) per accepted iterate
    iterations_run: int = 0
    converged: bool = False

    def to_csv(self) -> str:
        lines = ["iter,H,H1,H2"]
        for k, (h, h1, h2) in enumerate(self.objective_history):
            lines.append(f"{k},{h!r},{h1!r},{h2!r}")
        return "\n".join(lines) + "\n"


def _parts(a: np.ndarray, sp: ScatterPair):
    sw, sb = sp.sw_spanned, sp.sb_spanned
    if a.ndim != 2 or a.shape[1] != sw.shape[0]:
        raise DimensionError(f"projection of shape {a.shape} does not match {sw.shape[0]} classes")
    u = float(np.trace(a @ sw @ a.T))
    v = float(np.trace(a @ sb @ a.T))
    if not v >= _DEN_FLOOR:
        raise DegenerateDenominator(f"tr(A Sb A') = {v:g}")
    resid = np.eye(a.shape[0]) - a @ a.T
    return u, v, resid


def objective(a: np.ndarray, sp: ScatterPair, weight: float = 1.0):
    """Return ``(H, H1, H2)``.

    ``H1 = tr(A Sw A') / tr(A Sb A')`` uses the class-spanned scatters and
    ``H2 = ||I - A A'||_F`` penalises non-orthonormal rows.
    """
    a = np.asarray(a, dtype=np.float64)
    u, v, resid = _parts(a, sp)
    h1 = u / v
    h2 = float(np.linalg.norm(resid))
    return h1 + weight * h2, h1, h2


def gradient(a: np.ndarray, sp: ScatterPair, weight: float = 1.0) -> np.ndarray:
    """Gradient of ``H`` with respect to the d x c matrix ``A``.

    At ``A A' = I`` the orthogonality term is not differentiable and its
    contribution is taken as zero.
    """
    a = np.asarray(a, dtype=np.float64)
    u, v, resid = _parts(a, sp)
    sw, sb = sp.sw_spanned, sp.sb_spanned
    g = (a @ (sw + sw.T) * v - a @ (sb + sb.T) * u) / (v * v)
    norm = np.linalg.norm(resid)
    if weight and norm >= _H2_KINK:
        g = g - weight * 2.0 * (resid @ a) / norm
    return g


def fista_optimize(a0: np.ndarray, sp: ScatterPair, cfg: SolverConfig = SolverConfig()):
    """Minimise ``H`` with monotone FISTA and backtracking line search.

    Both terms are treated as smooth, so the proximal step is the identity.
    A step ``t`` from the extrapolated point ``y`` is accepted when
    ``H(y - t g) <= H(y) - 1e-4 t ||g||^2``. If the extrapolated point is
    worse than the current iterate, momentum is reset (``t_k = 1``) and the
    extrapolation discarded, which keeps accepted objectives non-increasing.

    Returns
    -------
    (ndarray, SolverTrace)
        The best iterate and the per-iterate ``(H, H1, H2)`` history.

    Raises
    ------
    NonFiniteObjective
        With ``best`` and ``trace`` attached, if an iterate evaluates to a
        non-finite objective.
    """
    w = cfg.orthogonality_weight

    def evaluate(m):
        return objective(m, sp, w)

    x = np.array(a0, dtype=np.float64, copy=True)
    hx = evaluate(x)
    trace = SolverTrace(objective_history=[hx])
    if not math.isfinite(hx[0]):
        raise NonFiniteObjective("objective is not finite at the initial point", x, trace)

    y, hy = x, hx
    momentum = 1.0
    step = cfg.initial_step
    for it in range(cfg.max_iterations):
        trace.iterations_run = it + 1
        g = gradient(y, sp, w)
        gg = float(np.sum(g * g))
        step = min(cfg.initial_step, step / cfg.backtrack_factor)
        z, hz = y, hy
        while step >= _MIN_STEP:
            cand = y - step * g
            try:
                hc = evaluate(cand)
            except DegenerateDenominator:
                hc = (math.inf, math.inf, math.inf)
            if not math.isfinite(hc[0]) and not math.isinf(hc[0]):
                raise NonFiniteObjective("objective became NaN", x, trace)
            if hc[0] <= hy[0] - _ARMIJO * step * gg:
                z, hz = cand, hc
                break
            step *= cfg.backtrack_factor
        if not math.isfinite(hz[0]):
            raise NonFiniteObjective("objective became non-finite", x, trace)

        # y is never worse than x, so hz <= hx here
        x_prev, h_prev = x, hx
        x, hx = z, hz
        trace.objective_history.append(hx)

        change = abs(h_prev[0] - hx[0])
        if change < cfg.relative_tolerance * max(abs(h_prev[0]), _DEN_FLOOR):
            trace.converged = True
            break

        nxt = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * momentum * momentum))
        y = x + ((momentum - 1.0) / nxt) * (x - x_prev)
        momentum = nxt
        try:
            hy = evaluate(y)
        except DegenerateDenominator:
            hy = (math.inf,) * 3
        if not hy[0] <= hx[0]:
            y, hy, momentum = x, hx, 1.0

    log.debug("fista: %d iterations, H=%g, converged=%s", trace.iterations_run, hx[0], trace.converged)
    return x, trace


def project(r: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Map N x d instances into class space: ``V = R A``."""
    r = np.asarray(r, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    if r.ndim == 1:
        r = r[:, None]
    if a.ndim != 2 or r.shape[1] != a.shape[0]:
        raise DimensionError(f"cannot multiply {r.shape} by {a.shape}")
    return r @ a


def fit_projection(x: LabeledInstanceSet, cfg: SolverConfig = SolverConfig(),
                   init: str = "eigen", seed: int | None = None):
    """Learn a d x c projection for a labelled set.

    Computes the scatters, takes the eigen (or seeded random) initial
    projection and refines it with :func:`fista_optimize`. A non-finite
    objective mid-run falls back to the best iterate reached.

    Returns ``(A_star, A0, scatter_pair, trace)``.
    """
    sp = scatter_pair(x)
    a0 = init_projection(sp, x.d, method=init, seed=seed)
    try:
        a, trace = fista_optimize(a0, sp, cfg)
    except NonFiniteObjective as exc:
        log.warning("projection solver aborted: %s", exc)
        a, trace = exc.best, exc.trace
        trace.converged = False
    return a, a0, sp, trace
