"""Filter-parameter tuning against the class-spanned Fisher ratio.

The ratio ``tr(Sw*) / tr(Sb*)`` of the projected, selected responses is
recast as a three-term least-squares problem with log smoothing and solved
by a box-projected Levenberg-Marquardt loop.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import EmptyClass, NonFiniteTrace
from .filterbank import FilterSpec, filter_responses, make_kernel
from .projector import SolverConfig, fit_projection, project
from .ranksel import rank
from .scatter import LabeledInstanceSet, scatter_pair

__all__ = [
    "NlsConfig",
    "FilterLossContext",
    "residuals_from_traces",
    "residuals",
    "fisher_filter_loss",
    "optimize_filter",
    "history_csv",
]

log = logging.getLogger(__name__)

TRACE_FLOOR = 1e-12
LOG_FLOOR = 1e-6
ORIENTATION_MAX = math.nextafter(math.pi, 0.0)


def _default_bounds():
    return {"scale": (0.5, 16.0), "orientation": (0.0, ORIENTATION_MAX), "tau": (1.0, 4.0)}


@dataclass(frozen=True)
class NlsConfig:
    max_iterations: int = 100
    step_tolerance: float = 1e-8
    jacobian_step: float = 1e-4
    bounds: dict = field(default_factory=_default_bounds)
    fix_orientation: bool = False

    def __post_init__(self):
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be non-negative")
        if not (self.step_tolerance > 0 and self.jacobian_step > 0):
            raise ValueError("tolerances must be positive")
        merged = _default_bounds()
        merged.update(self.bounds)
        for name, (lo, hi) in merged.items():
            if not lo <= hi:
                raise ValueError(f"empty bound for {name}: [{lo}, {hi}]")
        object.__setattr__(self, "bounds", merged)


def residuals_from_traces(tr_w: float, tr_b: float) -> np.ndarray:
    """Log-smoothed residual vector ``(r1, r2, r3)``.

    ``r1 = log tr_w``, ``r2 = 1 / log tr_b`` and ``r3 = 1 - log(tr_w / tr_b)``.
    Traces are floored at 1e-12 and ``|log tr_b|`` at 1e-6 (sign kept).
    """
    if not (math.isfinite(tr_w) and math.isfinite(tr_b)):
        raise NonFiniteTrace(f"traces ({tr_w}, {tr_b})")
    lw = math.log(max(tr_w, TRACE_FLOOR))
    lb = math.log(max(tr_b, TRACE_FLOOR))
    den = lb if abs(lb) >= LOG_FLOOR else math.copysign(LOG_FLOOR, lb)
    return np.array([lw, 1.0 / den, 1.0 - (lw - lb)])


class FilterLossContext:
    """Frozen training data plus the projection/ranking settings used to score a filter.

    For a candidate filter the training images are convolved, a projection
    is learned on the responses, the projected set is ranked with a pooled
    Otsu threshold, and the class-spanned scatter traces of the selected
    instances are returned. If selection removes a class entirely the
    traces fall back to the full projected set.
    """

    def __init__(self, images, labels, num_classes: int, solver: SolverConfig = SolverConfig(),
                 bins: int = 256, init: str = "eigen", seed: int | None = None, use_selection: bool = True):
        self.images = tuple(images)
        self.labels = tuple(int(y) for y in labels)
        self.num_classes = int(num_classes)
        self.solver = solver
        self.bins = bins
        self.init = init
        self.seed = seed
        self.use_selection = use_selection
        self._cache = {}

    def traces(self, spec: FilterSpec):
        key = (spec.kind, float(spec.scale), float(spec.orientation), float(spec.tau), int(spec.resolution))
        if key not in self._cache:
            self._cache[key] = self._compute(spec)
        return self._cache[key]

    def _compute(self, spec):
        kernel = make_kernel(spec)
        x = filter_responses(self.images, self.labels, kernel, self.num_classes)
        a, _, _, _ = fit_projection(x, self.solver, self.init, self.seed)
        v = project(x.data, a)
        labels = x.labels
        if self.use_selection:
            rep = rank(v, self.bins)
            keep = rep.mask
            if np.bincount(labels[keep], minlength=self.num_classes).min() > 0:
                v, labels = v[keep], labels[keep]
        try:
            sp = scatter_pair(LabeledInstanceSet(v, labels, self.num_classes))
        except (EmptyClass, ValueError) as exc:
            raise NonFiniteTrace(str(exc)) from exc
        tr_w = float(np.trace(sp.sw_spanned))
        tr_b = float(np.trace(sp.sb_spanned))
        if not (math.isfinite(tr_w) and math.isfinite(tr_b)):
            raise NonFiniteTrace(f"traces ({tr_w}, {tr_b}) for {spec}")
        return tr_w, tr_b

    def residuals(self, spec: FilterSpec) -> np.ndarray:
        return residuals_from_traces(*self.traces(spec))

    def fisher_loss(self, spec: FilterSpec) -> float:
        tr_w, tr_b = self.traces(spec)
        return tr_w / max(tr_b, TRACE_FLOOR)


def residuals(spec: FilterSpec, ctx) -> np.ndarray:
    return np.asarray(ctx.residuals(spec), dtype=np.float64)


def fisher_filter_loss(spec: FilterSpec, ctx) -> float:
    """Raw ratio ``tr(Sw*) / tr(Sb*)``; diagnostic companion of the least-squares loss."""
    return float(ctx.fisher_loss(spec))


def _free_names(spec: FilterSpec, cfg: NlsConfig):
    names = ["scale"]
    if spec.kind in ("dog1", "dog2") and not cfg.fix_orientation:
        names.append("orientation")
    if spec.kind == "schmid":
        names.append("tau")
    return names


def _with(spec, names, p):
    return replace(spec, **{n: float(v) for n, v in zip(names, p)})


def _round_tau(spec, ctx, lo, hi):
    best = None
    for t in sorted({min(max(math.floor(spec.tau), lo), hi), min(max(math.ceil(spec.tau), lo), hi)}):
        cand = replace(spec, tau=int(t))
        r = residuals(cand, ctx)
        loss = float(r @ r)
        if best is None or loss < best[1]:
            best = (cand, loss, r)
    return best


def optimize_filter(spec: FilterSpec, ctx, cfg: NlsConfig = NlsConfig()):
    """Tune the continuous parameters of one filter.

    Scale is always free; orientation is free for oriented kinds unless
    fixed; Schmid's tau is relaxed to a real number and rounded at the end.
    Resolution is held fixed. The Jacobian is a forward difference with
    step ``jacobian_step * max(1, |p|)`` (taken backwards at the upper
    bound), and steps are damped Gauss-Newton steps projected onto the box.

    Returns ``(best_spec, history)`` where history rows are
    ``(iter, scale, orientation, tau, loss, r1, r2, r3)`` for the initial
    point and every accepted step. The returned spec never has a higher
    loss than the input.
    """
    names = _free_names(spec, cfg)
    lo = np.array([cfg.bounds[n][0] for n in names])
    hi = np.array([cfg.bounds[n][1] for n in names])

    def evaluate(p):
        s = _with(spec, names, p)
        r = residuals(s, ctx)
        return s, r, float(r @ r)

    p = np.clip(np.array([float(getattr(spec, n)) for n in names]), lo, hi)
    cur_spec, r, f = evaluate(p)
    init_r = residuals(spec, ctx)
    init_f = float(init_r @ init_r)
    history = [(0, cur_spec.scale, cur_spec.orientation, cur_spec.tau, f, *r)]
    lam = 1e-3
    for it in range(1, cfg.max_iterations + 1):
        jac = np.empty((r.shape[0], p.shape[0]))
        for k in range(p.shape[0]):
            h = cfg.jacobian_step * max(1.0, abs(p[k]))
            q = p.copy()
            if q[k] + h > hi[k]:
                h = -h
            q[k] += h
            jac[:, k] = (evaluate(q)[1] - r) / h
        grad = jac.T @ r
        if not np.any(grad):
            break
        jtj = jac.T @ jac
        scale = np.maximum(np.diag(jtj), 1e-12 * max(1.0, float(np.max(np.diag(jtj)))))
        accepted = stalled = False
        while lam <= 1e12:
            try:
                step = np.linalg.solve(jtj + lam * np.diag(scale), -grad)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            q = np.clip(p + step, lo, hi)
            if np.linalg.norm(q - p) <= cfg.step_tolerance * (np.linalg.norm(p) + cfg.step_tolerance):
                stalled = True
                break
            s_new, r_new, f_new = evaluate(q)
            if f_new < f and f - f_new >= cfg.step_tolerance * abs(f):
                p, cur_spec, r, f = q, s_new, r_new, f_new
                lam = max(lam / 10.0, 1e-12)
                accepted = True
                break
            lam *= 10.0
        if not accepted or stalled:
            break
        history.append((it, cur_spec.scale, cur_spec.orientation, cur_spec.tau, f, *r))
        log.debug("filter %s iter %d loss %.6g", spec.kind, it, f)

    if len(history) == 1:
        return spec, history
    best_spec, best_f = cur_spec, f
    if spec.kind == "schmid" and "tau" in names:
        t_lo, t_hi = cfg.bounds["tau"]
        best_spec, best_f, _ = _round_tau(cur_spec, ctx, int(math.ceil(t_lo)), int(math.floor(t_hi)))
    if best_f > init_f:
        return spec, history
    return best_spec, history


def history_csv(history) -> str:
    lines = ["iter,scale,orientation,tau,loss,r1,r2,r3"]
    for row in history:
        it, rest = row[0], row[1:]
        lines.append(",".join([str(it)] + [f"{float(v):.17g}" for v in rest]))
    return "\n".join(lines) + "\n"
