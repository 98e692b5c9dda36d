"""Desk-scale texture recognition with per-filter projection and instance selection.

For every filter of a bank: convolve the Lab images, learn a class-space
projection on the training pixels, then encode each image by ranking its
projected pixels, keeping those above the image's Otsu threshold and
mean-pooling them. Descriptors from all filters are concatenated and
classified with a nearest-centroid rule. The same flow without selection
(pool every pixel) is reported as the baseline.
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import EmptyClass, EmptySplit
from .filterbank import FilterBank, FilterSpec, LabImage, image_responses, make_bank, make_kernel, \
    rgb_to_lab_normalized, truncate_bank
from .filtopt import FilterLossContext, NlsConfig, history_csv, optimize_filter
from .formats import read_manifest, read_pnm, write_matrix_csv
from .projector import SolverConfig, fit_projection, project
from .ranksel import rank
from .scatter import LabeledInstanceSet

__all__ = [
    "PipelineConfig",
    "FilterStage",
    "EvaluationReport",
    "load_images",
    "train_filter_stage",
    "encode_image",
    "evaluate",
    "evaluate_dataset",
    "write_run_directory",
]

log = logging.getLogger(__name__)

THRESHOLD_MODES = ("per_image", "train", "none")


@dataclass(frozen=True)
class PipelineConfig:
    bank: str = "combined"
    max_filters: int | None = None
    resolution: int = 49
    enable_filter_optimization: bool = False
    solver: SolverConfig = SolverConfig()
    nls: NlsConfig = NlsConfig()
    nls_images_per_class: int | None = None
    bins: int = 256
    seed: int = 42
    init: str = "eigen"
    threshold_mode: str = "per_image"
    fallback_k: int = 16
    threads: int = 1

    def __post_init__(self):
        if self.threshold_mode not in THRESHOLD_MODES:
            raise ValueError(f"threshold_mode must be one of {THRESHOLD_MODES}")
        if self.fallback_k < 1:
            raise ValueError("fallback_k must be positive")
        if self.bins < 1:
            raise ValueError("bins must be positive")

    def filter_bank(self) -> FilterBank:
        bank = make_bank(self.bank, self.resolution)
        if self.max_filters:
            bank = truncate_bank(bank, self.max_filters)
        return bank


@dataclass
class FilterStage:
    """Everything learned for one filter on one training split."""

    spec: FilterSpec
    kernel: np.ndarray
    projection: np.ndarray
    initial_projection: np.ndarray
    initial_objective: float
    final_objective: float
    train_threshold: float
    train_selected_fraction: float
    initial_loss: float | None = None
    final_loss: float | None = None
    history: list = field(default_factory=list)
    train_ranking: object = None


@dataclass
class EvaluationReport:
    seed: int
    bank: str
    num_filters: int
    accuracy: list  # per split, with selection
    baseline: list  # per split, all pixels pooled
    selection_fraction: np.ndarray  # per filter, mean over splits and images
    initial_loss: np.ndarray | None = None  # per filter, mean over splits
    final_loss: np.ndarray | None = None
    stages: list = field(default_factory=list)  # [split][filter] -> FilterStage

    @staticmethod
    def _summary(values):
        values = np.asarray(values, dtype=np.float64)
        sd = float(values.std(ddof=1)) if values.size > 1 else 0.0
        return float(values.mean()), sd

    @property
    def mean_accuracy(self):
        return self._summary(self.accuracy)

    @property
    def mean_baseline(self):
        return self._summary(self.baseline)

    @property
    def mean_initial_loss(self):
        return None if self.initial_loss is None else float(np.mean(self.initial_loss))

    @property
    def mean_final_loss(self):
        return None if self.final_loss is None else float(np.mean(self.final_loss))

    def to_csv(self) -> str:
        lines = [f"# seed = {self.seed}", f"# bank = {self.bank}", f"# filters = {self.num_filters}",
                 "split,accuracy_selected,accuracy_baseline"]
        for s, (a, b) in enumerate(zip(self.accuracy, self.baseline)):
            lines.append(f"{s},{a:.6f},{b:.6f}")
        ma, sa = self.mean_accuracy
        mb, sb = self.mean_baseline
        lines.append(f"mean,{ma:.6f},{mb:.6f}")
        lines.append(f"std,{sa:.6f},{sb:.6f}")
        lines.append("")
        head = "filter,selection_fraction"
        if self.initial_loss is not None:
            head += ",initial_loss,final_loss"
        lines.append(head)
        for k, frac in enumerate(self.selection_fraction):
            row = f"{k},{frac:.6f}"
            if self.initial_loss is not None:
                row += f",{self.initial_loss[k]:.6f},{self.final_loss[k]:.6f}"
            lines.append(row)
        return "\n".join(lines) + "\n"

    def to_table(self, dataset: str = "synthetic") -> str:
        ma, sa = self.mean_accuracy
        mb, sb = self.mean_baseline
        gain = "n/a" if mb == 0 else f"{100.0 * (ma - mb) / mb:+.1f}"
        out = [f"# seed = {self.seed}",
               f"{'Dataset':<12}{'Baseline':>16}{'Ours':>16}{'%Gain':>9}",
               f"{dataset:<12}{100 * mb:>9.1f} ± {100 * sb:<4.1f}{100 * ma:>9.1f} ± {100 * sa:<4.1f}{gain:>9}"]
        if self.initial_loss is not None:
            out.append(f"mean P*_F over filters: initial {self.mean_initial_loss:.6f}, "
                       f"optimized {self.mean_final_loss:.6f}")
        return "\n".join(out) + "\n"


def load_images(entries):
    """Read manifest entries into ``(LabImage list, label list)``."""
    images = [rgb_to_lab_normalized(read_pnm(e.path)) for e in entries]
    return images, [int(e.label) for e in entries]


def _check_classes(labels, num_classes, what):
    counts = np.bincount(np.asarray(labels, dtype=np.int64), minlength=num_classes)
    if counts.min() == 0:
        raise EmptyClass(f"{what} split lacks classes {np.flatnonzero(counts == 0).tolist()}")


def _subsample(train_idx, labels, per_class, seed):
    if not per_class:
        return list(train_idx)
    rng = np.random.default_rng(seed)
    keep = []
    labels = np.asarray(labels)
    for y in np.unique(labels[train_idx]):
        members = [i for i in train_idx if labels[i] == y]
        if len(members) > per_class:
            members = sorted(rng.choice(members, size=per_class, replace=False).tolist())
        keep.extend(members)
    return sorted(keep)


def train_filter_stage(responses, labels, spec: FilterSpec, kernel, cfg: PipelineConfig, num_classes: int,
                       keep_ranking: bool = False) -> FilterStage:
    """Learn the projection for one filter from per-image training responses.

    ``responses`` is a list of (H*W) x 3 arrays, one per training image.
    The training set is also ranked once (pooled Otsu) to record the
    selection fraction and the pooled threshold.
    """
    _check_classes(labels, num_classes, "training")
    data = np.concatenate(responses, axis=0)
    lab = np.concatenate([np.full(r.shape[0], y, dtype=np.int64) for r, y in zip(responses, labels)])
    x = LabeledInstanceSet(data, lab, num_classes)
    a, a0, _, trace = fit_projection(x, cfg.solver, cfg.init, cfg.seed)
    rep = rank(project(x.data, a), cfg.bins)
    return FilterStage(
        spec=spec, kernel=kernel, projection=a, initial_projection=a0,
        initial_objective=float(trace.objective_history[0][0]),
        final_objective=float(trace.objective_history[-1][0]),
        train_threshold=rep.threshold, train_selected_fraction=rep.selected_fraction,
        train_ranking=rep if keep_ranking else None,
    )


def _pool(v, stage: FilterStage, cfg: PipelineConfig):
    if cfg.threshold_mode == "none":
        return v.mean(axis=0), 1.0
    threshold = stage.train_threshold if cfg.threshold_mode == "train" else None
    rep = rank(v, cfg.bins, threshold)
    mask = rep.mask
    if not mask.any():
        k = min(cfg.fallback_k, v.shape[0])
        mask = np.zeros(v.shape[0], dtype=bool)
        mask[np.argsort(-rep.score, kind="stable")[:k]] = True
    return v[mask].mean(axis=0), float(mask.mean())


def _encode_responses(r, stage, cfg):
    v = project(r, stage.projection)
    sel, frac = _pool(v, stage, cfg)
    return sel, v.mean(axis=0), frac


def encode_image(image: LabImage, stages, cfg: PipelineConfig, baseline: bool = False) -> np.ndarray:
    """Descriptor of length ``len(stages) * c`` for one image.

    Per filter the projected pixels are ranked and the pixels at or above
    the Otsu threshold are mean-pooled; when nothing survives the
    ``fallback_k`` best-scored pixels are used. With ``baseline=True`` all
    pixels are pooled instead.
    """
    parts = []
    for stage in stages:
        sel, base, _ = _encode_responses(image_responses(image, stage.kernel), stage, cfg)
        parts.append(base if baseline else sel)
    return np.concatenate(parts)


def nearest_centroid_accuracy(train_x, train_y, test_x, test_y, num_classes) -> float:
    train_y = np.asarray(train_y)
    cents = np.stack([train_x[train_y == j].mean(axis=0) for j in range(num_classes)])
    d2 = ((test_x[:, None, :] - cents[None, :, :]) ** 2).sum(axis=2)
    pred = np.argmin(d2, axis=1)
    return float(np.mean(pred == np.asarray(test_y)))


def _run_filter(k, spec, images, labels, splits, cfg, num_classes, keep_ranking):
    """All splits for one filter. Pure apart from logging."""
    fixed_kernel = None
    responses = None
    out = []
    for s, (train_idx, test_idx) in enumerate(splits):
        cur = spec
        init_loss = final_loss = None
        history = []
        if cfg.enable_filter_optimization:
            sub = _subsample(train_idx, labels, cfg.nls_images_per_class, cfg.seed + s)
            ctx = FilterLossContext([images[i] for i in sub], [labels[i] for i in sub], num_classes,
                                    cfg.solver, cfg.bins, cfg.init, cfg.seed)
            cur, history = optimize_filter(spec, ctx, cfg.nls)
            init_loss = float(history[0][4])
            r_fin = ctx.residuals(cur)
            final_loss = float(r_fin @ r_fin)
            kernel = make_kernel(cur)
            resp = [image_responses(im, kernel) for im in images]
        else:
            if fixed_kernel is None:
                fixed_kernel = make_kernel(spec)
                responses = [image_responses(im, fixed_kernel) for im in images]
            kernel, resp = fixed_kernel, responses
        stage = train_filter_stage([resp[i] for i in train_idx], [labels[i] for i in train_idx],
                                   cur, kernel, cfg, num_classes, keep_ranking)
        stage.initial_loss, stage.final_loss, stage.history = init_loss, final_loss, history
        enc = [_encode_responses(r, stage, cfg) for r in resp]
        sel = np.stack([e[0] for e in enc])
        base = np.stack([e[1] for e in enc])
        frac = np.array([e[2] for e in enc])
        out.append((stage, sel, base, frac))
        log.info("filter %d split %d: H %.6g -> %.6g, selected %.3f", k, s,
                 stage.initial_objective, stage.final_objective, frac.mean())
    return out


def _thread_count(threads):
    if threads == 0:
        return os.cpu_count() or 1
    return max(1, threads)


def evaluate_dataset(images, labels, splits, cfg: PipelineConfig, num_classes: int | None = None,
                     keep_ranking: bool = False, bank: FilterBank | None = None) -> EvaluationReport:
    """Evaluate on in-memory images over one or more ``(train_idx, test_idx)`` splits.

    ``bank`` overrides the bank named in ``cfg``.
    """
    labels = [int(y) for y in labels]
    c = num_classes if num_classes is not None else max(labels) + 1
    splits = [(list(tr), list(te)) for tr, te in splits]
    if not splits:
        raise EmptySplit("no splits given")
    for tr, te in splits:
        if not tr:
            raise EmptySplit("empty training split")
        if not te:
            raise EmptySplit("empty test split")
        _check_classes([labels[i] for i in tr], c, "training")
    bank = bank if bank is not None else cfg.filter_bank()
    filters = list(bank.filters)

    def job(k):
        return _run_filter(k, filters[k], images, labels, splits, cfg, c, keep_ranking)

    workers = min(_thread_count(cfg.threads), len(filters))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            per_filter = list(pool.map(job, range(len(filters))))
    else:
        per_filter = [job(k) for k in range(len(filters))]

    acc, base_acc = [], []
    for s, (tr, te) in enumerate(splits):
        sel = np.concatenate([per_filter[k][s][1] for k in range(len(filters))], axis=1)
        base = np.concatenate([per_filter[k][s][2] for k in range(len(filters))], axis=1)
        ytr = [labels[i] for i in tr]
        yte = [labels[i] for i in te]
        acc.append(nearest_centroid_accuracy(sel[tr], ytr, sel[te], yte, c))
        base_acc.append(nearest_centroid_accuracy(base[tr], ytr, base[te], yte, c))

    fractions = np.array([np.mean([per_filter[k][s][3].mean() for s in range(len(splits))])
                          for k in range(len(filters))])
    init_loss = final_loss = None
    if cfg.enable_filter_optimization:
        init_loss = np.array([np.mean([per_filter[k][s][0].initial_loss for s in range(len(splits))])
                              for k in range(len(filters))])
        final_loss = np.array([np.mean([per_filter[k][s][0].final_loss for s in range(len(splits))])
                               for k in range(len(filters))])
    stages = [[per_filter[k][s][0] for k in range(len(filters))] for s in range(len(splits))]
    return EvaluationReport(cfg.seed, bank.name, len(filters), acc, base_acc, fractions,
                            init_loss, final_loss, stages)


def evaluate(manifests, cfg: PipelineConfig, keep_ranking: bool = False) -> EvaluationReport:
    """Evaluate from one or more ``path,label,split`` manifests (one split each).

    Images are identified by path across manifests, so each file is loaded
    and converted once.
    """
    if isinstance(manifests, (str, Path)):
        manifests = [manifests]
    parsed = [read_manifest(m) if isinstance(m, (str, Path)) else list(m) for m in manifests]
    index, entries = {}, []
    splits = []
    for items in parsed:
        tr, te = [], []
        for e in items:
            if e.path not in index:
                index[e.path] = len(entries)
                entries.append(e)
            elif entries[index[e.path]].label != e.label:
                raise ValueError(f"{e.path} carries conflicting labels")
            (tr if e.split == "train" else te).append(index[e.path])
        if not te:
            raise EmptySplit("manifest has no test images")
        if not tr:
            raise EmptySplit("manifest has no training images")
        splits.append((tr, te))
    images, labels = load_images(entries)
    return evaluate_dataset(images, labels, splits, cfg, keep_ranking=keep_ranking)


def write_run_directory(report: EvaluationReport, outdir, dataset: str = "synthetic"):
    """Write the report (CSV and table) and per-filter artifacts.

    Layout: ``report.csv``, ``report.txt`` and, per split ``s``,
    ``split_{s}/filter_{k:03}_proj.csv`` plus ``filter_{k:03}_rank.csv``
    when training rankings were kept and ``filter_{k:03}_history.csv``
    when filters were optimised.
    """
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.csv").write_text(report.to_csv())
    (out / "report.txt").write_text(report.to_table(dataset))
    for s, stages in enumerate(report.stages):
        sd = out / f"split_{s}"
        sd.mkdir(exist_ok=True)
        for k, st in enumerate(stages):
            write_matrix_csv(sd / f"filter_{k:03}_proj.csv", st.projection)
            if st.train_ranking is not None:
                (sd / f"filter_{k:03}_rank.csv").write_text(st.train_ranking.to_csv())
            if st.history:
                (sd / f"filter_{k:03}_history.csv").write_text(history_csv(st.history))
