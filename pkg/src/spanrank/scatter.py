"""Class statistics and the two scatter formulations.

The classical scatters live in the instance space (d x d). The class-spanned
scatters are c x c diagonal matrices whose traces equal the classical ones,
which lets a d x c projection be scored with a Fisher-type ratio even when
c > d.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, EmptyClass, SingularDenominator

__all__ = [
    "LabeledInstanceSet",
    "ClassStatistics",
    "ScatterPair",
    "SimilarityMap",
    "class_stats",
    "classical_scatter",
    "spanned_scatter",
    "scatter_pair",
    "classical_fisher",
    "sylvester_similarity",
    "init_projection",
    "trace_ratio_diagnostic",
]

# rows per block for compensated accumulation
_BLOCK = 1 << 16
RIDGE_EPS = 1e-8


@dataclass(frozen=True)
class LabeledInstanceSet:
    """N instances of dimension d with integer labels in ``[0, num_classes)``."""

    data: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim == 1:
            data = data[:, None]
        labels = np.asarray(self.labels)
        if data.ndim != 2 or data.shape[1] < 1:
            raise DimensionError(f"data must be N x d with d >= 1, got {data.shape}")
        if labels.ndim != 1 or labels.shape[0] != data.shape[0]:
            raise DimensionError("labels must be a vector with one entry per instance")
        if labels.size and not np.issubdtype(labels.dtype, np.integer):
            if not np.all(np.equal(np.mod(labels, 1), 0)):
                raise ValueError("labels must be integers")
        labels = labels.astype(np.int64)
        c = int(self.num_classes)
        if c < 1:
            raise ValueError("num_classes must be positive")
        if labels.size and (labels.min() < 0 or labels.max() >= c):
            raise ValueError(f"labels must lie in [0, {c})")
        if not np.all(np.isfinite(data)):
            raise ValueError("data contains non-finite values")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "num_classes", c)

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def d(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class ClassStatistics:
    class_means: np.ndarray  # c x d
    global_mean: np.ndarray  # d
    class_counts: np.ndarray  # c


@dataclass(frozen=True)
class ScatterPair:
    sw_classic: np.ndarray
    sb_classic: np.ndarray
    sw_spanned: np.ndarray
    sb_spanned: np.ndarray


@dataclass(frozen=True)
class SimilarityMap:
    gamma: np.ndarray
    residual: float


def _compensated_sum(rows: np.ndarray, fn=None) -> np.ndarray:
    """Sum ``fn(block)`` over row blocks with Neumaier compensation.

    Each block is reduced by numpy's pairwise summation; the block partials
    are combined with a running compensation term so that error does not
    grow with N.
    """
    total = None
    comp = None
    for start in range(0, max(rows.shape[0], 1), _BLOCK):
        block = rows[start:start + _BLOCK]
        part = fn(block) if fn is not None else block.sum(axis=0)
        if total is None:
            total = np.array(part, dtype=np.float64, copy=True)
            comp = np.zeros_like(total)
            continue
        t = total + part
        big = np.abs(total) >= np.abs(part)
        comp += np.where(big, (total - t) + part, (part - t) + total)
        total = t
    return total + comp


def _class_rows(x: LabeledInstanceSet):
    order = np.argsort(x.labels, kind="stable")
    bounds = np.searchsorted(x.labels[order], np.arange(x.num_classes + 1))
    for j in range(x.num_classes):
        yield j, x.data[order[bounds[j]:bounds[j + 1]]]


def class_stats(x: LabeledInstanceSet) -> ClassStatistics:
    """Per-class means, the global mean and class counts.

    Raises
    ------
    EmptyClass
        If some class index in ``[0, c)`` has no instances.
    """
    counts = np.bincount(x.labels, minlength=x.num_classes)
    missing = np.flatnonzero(counts == 0)
    if missing.size:
        raise EmptyClass(f"classes without instances: {missing.tolist()}")
    means = np.empty((x.num_classes, x.d))
    for j, rows in _class_rows(x):
        means[j] = _compensated_sum(rows) / rows.shape[0]
    global_mean = _compensated_sum(x.data) / x.n
    return ClassStatistics(means, global_mean, counts.astype(np.int64))


def _within_blocks(x: LabeledInstanceSet, stats: ClassStatistics):
    for j, rows in _class_rows(x):
        centered = rows - stats.class_means[j]
        yield j, _compensated_sum(centered, lambda b: b.T @ b)


def classical_scatter(stats: ClassStatistics, x: LabeledInstanceSet):
    """Return the d x d within-class and between-class scatters."""
    sw = np.zeros((x.d, x.d))
    for _, block in _within_blocks(x, stats):
        sw += block
    diff = stats.class_means - stats.global_mean
    sb = diff.T @ diff
    # exact symmetry
    sw = 0.5 * (sw + sw.T)
    sb = 0.5 * (sb + sb.T)
    return sw, sb


def spanned_scatter(stats: ClassStatistics, x: LabeledInstanceSet) -> ScatterPair:
    """Both scatter formulations.

    The class-spanned within scatter holds, on its diagonal, the trace of
    each class's own scatter; the between counterpart holds the squared
    distance of each class mean to the global mean.
    """
    c = x.num_classes
    sw = np.zeros((x.d, x.d))
    w_diag = np.empty(c)
    for j, block in _within_blocks(x, stats):
        sw += block
        w_diag[j] = np.trace(block)
    diff = stats.class_means - stats.global_mean
    sb = diff.T @ diff
    b_diag = np.einsum("ij,ij->i", diff, diff)
    return ScatterPair(
        sw_classic=0.5 * (sw + sw.T),
        sb_classic=0.5 * (sb + sb.T),
        sw_spanned=np.diag(np.maximum(w_diag, 0.0)),
        sb_spanned=np.diag(b_diag),
    )


def scatter_pair(x: LabeledInstanceSet) -> ScatterPair:
    return spanned_scatter(class_stats(x), x)


def classical_fisher(a: np.ndarray, sw: np.ndarray, sb: np.ndarray) -> float:
    """Trace-of-quotient Fisher criterion ``tr((A'SwA)(A'SbA)^-1)``."""
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    if a.shape[0] != sw.shape[0] or sw.shape != sb.shape:
        raise DimensionError("mapping and scatter shapes are not conformable")
    num = a.T @ sw @ a
    den = a.T @ sb @ a
    if not np.all(np.isfinite(den)) or np.linalg.cond(den) > 1e12:
        raise SingularDenominator("A'SbA is numerically singular")
    return float(np.trace(np.linalg.solve(den.T, num.T).T))


def sylvester_similarity(s_classic: np.ndarray, s_spanned: np.ndarray) -> SimilarityMap:
    """Unit-norm ``Gamma`` (c x d) minimising ``||Gamma S_classic - S_spanned Gamma||_F``.

    The homogeneous Sylvester equation is vectorised (column-major) as
    ``(S_classic' kron I_c - I_d kron S_spanned) vec(Gamma) = 0`` and solved
    in the least-squares sense by the last right singular vector. When the
    null space has more than one dimension, the projection of the c x d
    identity onto it is preferred, which makes the result deterministic.
    """
    s_classic = np.atleast_2d(np.asarray(s_classic, dtype=np.float64))
    s_spanned = np.atleast_2d(np.asarray(s_spanned, dtype=np.float64))
    d = s_classic.shape[0]
    c = s_spanned.shape[0]
    op = np.kron(s_classic.T, np.eye(c)) - np.kron(np.eye(d), s_spanned)
    _, sv, vt = np.linalg.svd(op)
    scale = max(sv[0], 1.0)
    null = vt[sv <= 1e-12 * scale]
    vec = vt[-1]
    if null.shape[0] > 1:
        target = np.eye(c, d).reshape(-1, order="F")
        proj = null.T @ (null @ target)
        if np.linalg.norm(proj) > 1e-12:
            vec = proj
    vec = vec / np.linalg.norm(vec)
    # sign convention: largest-magnitude entry positive
    k = int(np.argmax(np.abs(vec)))
    if vec[k] < 0:
        vec = -vec
    gamma = vec.reshape((c, d), order="F")
    residual = float(np.linalg.norm(gamma @ s_classic - s_spanned @ gamma))
    return SimilarityMap(gamma, residual)


def init_projection(sp: ScatterPair, d: int, method: str = "eigen", seed: int | None = None) -> np.ndarray:
    """Initial d x c projection from the class-spanned scatters.

    With ``method="eigen"`` the rows are the eigenvectors of
    ``inv(Sw) Sb`` for the d largest eigenvalues. Both matrices are
    diagonal, so these are standard basis vectors of the classes with the
    best between/within ratio; ties go to the lower class index. A ridge of
    ``1e-8 * tr(Sw) / c`` is added before inversion.

    ``method="random"`` returns seeded random orthonormal rows instead.
    """
    w = np.diag(sp.sw_spanned).astype(np.float64)
    b = np.diag(sp.sb_spanned).astype(np.float64)
    c = w.shape[0]
    if d < 1 or d > c:
        raise DimensionError(f"cannot form {d} orthonormal rows in dimension {c}")
    if method == "random":
        rng = np.random.default_rng(seed)
        q, r = np.linalg.qr(rng.standard_normal((c, d)))
        q = q * np.sign(np.diag(r))
        return np.ascontiguousarray(q.T)
    if method != "eigen":
        raise ValueError(f"unknown init method {method!r}")
    ridge = RIDGE_EPS * w.sum() / c
    den = w + ridge
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(den > 0, b / np.where(den > 0, den, 1.0), np.where(b > 0, np.inf, 0.0))
    order = np.argsort(-ratio, kind="stable")[:d]
    a0 = np.zeros((d, c))
    a0[np.arange(d), order] = 1.0
    return a0


def trace_ratio_diagnostic(sp: ScatterPair) -> tuple[float, float]:
    """Both sides of the trace-ratio similarity claim, for reporting only.

    Returns ``(tr(Sw_classic inv(Sb_classic)), tr(Sw_spanned inv(Sb_spanned)))``
    using pseudo-inverses; the two are not equal in general.
    """
    left = float(np.trace(sp.sw_classic @ np.linalg.pinv(sp.sb_classic)))
    right = float(np.trace(sp.sw_spanned @ np.linalg.pinv(sp.sb_spanned)))
    return left, right
