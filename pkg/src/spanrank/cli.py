"""Command-line entry point.

Subcommands::

    bank gen      write the kernels of a filter bank as CSV matrices
    project train learn a class-space projection from an instance file
    project apply project an instance file with a learned matrix
    rank          score projected instances and threshold them
    select        keep the rows marked by a ranking
    optfilter     tune the filters of a bank on a manifest's training split
    eval          full train/encode/classify evaluation over manifests
    synth         write the seeded synthetic texture dataset

Exit status is 0 on success, 1 on a usage error and 2 on a data error.
Every subcommand takes ``--config FILE`` with ``key = value`` lines; keys
are long option names and explicit command-line options win.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .errors import SpanRankError
from .filterbank import FilterSpec, make_bank, make_kernel, truncate_bank
from .filtopt import FilterLossContext, NlsConfig, history_csv, optimize_filter
from .formats import (dump_config, format_float, parse_config, read_instances, read_manifest,
                      read_matrix_csv, write_matrix_csv)
from .pipeline import PipelineConfig, _subsample, evaluate, load_images, write_run_directory
from .projector import SolverConfig, fit_projection, project
from .ranksel import RankingReport, aggregate_scores, criterion_matrix, rank, top_m_threshold

log = logging.getLogger("spanrank")

PROG = "spanrank"
EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


@dataclass
class RunConfig:
    """A parsed invocation: the subcommand path plus its option values."""

    command: str
    options: dict = field(default_factory=dict)

    def to_text(self) -> str:
        flat = {"command": self.command}
        for key, val in self.options.items():
            if val is None:
                continue
            flat[key] = _render(val)
        return dump_config(flat)

    @classmethod
    def from_text(cls, text: str, parser: argparse.ArgumentParser | None = None) -> "RunConfig":
        raw = parse_config(text)
        command = raw.pop("command", "")
        if parser is None:
            return cls(command, raw)
        sub = _find_subparser(parser, command.split())
        opts = {k: v for k, v in vars(sub.parse_args([])).items() if k not in ("cmd", "action", "config")}
        opts.update(_convert(sub, raw))
        return cls(command, opts)


def _render(val):
    if isinstance(val, bool):
        return "true" if val else "false"
    if isinstance(val, float):
        return format_float(val)
    if isinstance(val, (list, tuple)):
        return ",".join(str(v) for v in val)
    return str(val)


def _to_bool(text):
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"not a boolean: {text!r}")


# ----------------------------------------------------------------- parser

_REQUIRED = {}


def _common(p):
    p.add_argument("--config", metavar="FILE", help="key = value defaults; command-line options win")
    p.add_argument("--version", action="version", version=f"{PROG} {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to standard error")


def _solver_opts(p):
    p.add_argument("--max-iters", type=int, default=1000, help="solver iteration cap (default 1000)")
    p.add_argument("--tol", type=float, default=1e-8, help="relative objective tolerance (default 1e-8)")
    p.add_argument("--step", type=float, default=1.0, help="initial step size")
    p.add_argument("--backtrack", type=float, default=0.5, help="step shrink factor in (0, 1)")
    p.add_argument("--ortho-weight", type=float, default=1.0, help="weight of the orthogonality penalty")
    p.add_argument("--init", choices=("eigen", "random"), default="eigen", help="initial projection")
    p.add_argument("--seed", type=int, default=42, help="random seed (default 42)")


def _nls_opts(p, prefix=""):
    p.add_argument(f"--{prefix}max-iters", dest=f"{prefix.replace('-', '_')}max_iters", type=int, default=100,
                   help="Levenberg-Marquardt iteration cap (default 100)")
    p.add_argument("--step-tol", type=float, default=1e-8, help="minimum relative loss decrease")
    p.add_argument("--jacobian-step", type=float, default=1e-4, help="relative finite-difference step")
    p.add_argument("--bounds", action="append", default=None, metavar="NAME=LO:HI",
                   help="parameter box, e.g. scale=0.5:16 (repeatable)")
    p.add_argument("--fix-orientation", action="store_true", help="keep oriented filters' angle fixed")
    p.add_argument("--images-per-class", type=int, default=None,
                   help="training images per class used while tuning (default all)")


def _bank_opts(p):
    p.add_argument("--bank", default=None, type=str.lower, choices=("lm", "mr", "s", "combined"),
                   help="filter bank")
    p.add_argument("--max-filters", type=int, default=None, help="keep this many evenly spaced filters")
    p.add_argument("--resolution", type=int, default=49, help="kernel size (odd, default 49)")


def build_parser() -> argparse.ArgumentParser:
    top = _Parser(prog=PROG, description="Class-spanned projection, instance ranking and filter-bank texture "
                                          "recognition.")
    top.add_argument("--version", action="version", version=f"{PROG} {__version__}")
    sub = top.add_subparsers(dest="cmd", metavar="COMMAND", parser_class=_Parser)

    bank = sub.add_parser("bank", help="filter bank utilities")
    _common(bank)
    bsub = bank.add_subparsers(dest="action", metavar="ACTION", parser_class=_Parser)
    gen = bsub.add_parser("gen", help="write kernels as CSV")
    _common(gen)
    gen.add_argument("--name", type=str.lower, choices=("lm", "mr", "s", "combined"))
    gen.add_argument("--out", metavar="DIR")
    gen.add_argument("--resolution", type=int, default=49)
    _REQUIRED["bank gen"] = ("name", "out")

    proj = sub.add_parser("project", help="projection training and application")
    _common(proj)
    psub = proj.add_subparsers(dest="action", metavar="ACTION", parser_class=_Parser)
    train = psub.add_parser("train", help="learn a d x c projection")
    _common(train)
    train.add_argument("--instances", metavar="FILE", help="instance CSV or FLIM binary")
    train.add_argument("--out", metavar="FILE", help="projection CSV")
    train.add_argument("--trace", metavar="FILE", help="also write the solver trace CSV")
    train.add_argument("--classes", type=int, default=None, help="class count (default max label + 1)")
    _solver_opts(train)
    _REQUIRED["project train"] = ("instances", "out")
    apply = psub.add_parser("apply", help="multiply instances by a projection")
    _common(apply)
    apply.add_argument("--instances", metavar="FILE")
    apply.add_argument("--proj", metavar="FILE")
    apply.add_argument("--out", metavar="FILE")
    _REQUIRED["project apply"] = ("instances", "proj", "out")

    rk = sub.add_parser("rank", help="one-vs-all scores and threshold")
    _common(rk)
    rk.add_argument("--projected", metavar="FILE", help="projected matrix CSV (no header)")
    rk.add_argument("--out", metavar="FILE")
    rk.add_argument("--bins", type=int, default=256, help="Otsu histogram bins (default 256)")
    rk.add_argument("--strategy", choices=("otsu", "top-m"), default="otsu")
    rk.add_argument("--m", type=int, default=None, help="rows kept by --strategy top-m")
    rk.add_argument("--criterion-columns", action="store_true", help="add crit_0.. columns")
    _REQUIRED["rank"] = ("projected", "out")

    sel = sub.add_parser("select", help="keep rows marked selected by a ranking")
    _common(sel)
    sel.add_argument("--projected", metavar="FILE")
    sel.add_argument("--rank", metavar="FILE")
    sel.add_argument("--out", metavar="FILE")
    _REQUIRED["select"] = ("projected", "rank", "out")

    opt = sub.add_parser("optfilter", help="tune filter parameters on a training split")
    _common(opt)
    opt.add_argument("--manifest", metavar="FILE")
    opt.add_argument("--out", metavar="FILE", help="tuned specs CSV")
    opt.add_argument("--history", metavar="DIR", help="write per-filter history CSVs here")
    _bank_opts(opt)
    _nls_opts(opt)
    opt.add_argument("--solver-max-iters", type=int, default=1000)
    opt.add_argument("--init", choices=("eigen", "random"), default="eigen")
    opt.add_argument("--bins", type=int, default=256)
    opt.add_argument("--seed", type=int, default=42)
    _REQUIRED["optfilter"] = ("manifest", "bank", "out")

    ev = sub.add_parser("eval", help="train, encode and classify")
    _common(ev)
    ev.add_argument("--manifest", metavar="FILE", nargs="+", help="one manifest per split")
    ev.add_argument("--report", metavar="DIR")
    _bank_opts(ev)
    ev.add_argument("--optimize-filters", action="store_true", help="tune each filter before training")
    ev.add_argument("--threshold-mode", choices=("per_image", "train", "none"), default="per_image")
    ev.add_argument("--fallback-k", type=int, default=16)
    ev.add_argument("--bins", type=int, default=256)
    ev.add_argument("--threads", type=int, default=1, help="worker cap; 0 uses every core")
    ev.add_argument("--keep-rankings", action="store_true", help="write training rankings per filter")
    _solver_opts(ev)
    _nls_opts(ev, prefix="nls-")
    _REQUIRED["eval"] = ("manifest", "bank", "report")

    syn = sub.add_parser("synth", help="write the synthetic texture dataset")
    _common(syn)
    syn.add_argument("--out", metavar="DIR")
    syn.add_argument("--classes", type=int, default=10)
    syn.add_argument("--per-class", type=int, default=40)
    syn.add_argument("--size", type=int, default=32)
    syn.add_argument("--noise", type=float, default=0.3)
    syn.add_argument("--splits", type=int, default=4)
    syn.add_argument("--seed", type=int, default=42)
    _REQUIRED["synth"] = ("out",)
    return top


def _find_subparser(parser, path):
    cur = parser
    for name in path:
        acts = [a for a in cur._actions if isinstance(a, argparse._SubParsersAction)]
        if not acts or name not in acts[0].choices:
            raise UsageError(f"unknown command {' '.join(path)!r}")
        cur = acts[0].choices[name]
    return cur


def _convert(sub, raw: dict) -> dict:
    """Turn config strings into typed values using the subparser's actions."""
    actions = {a.dest: a for a in sub._actions}
    out = {}
    for key, text in raw.items():
        dest = key.replace("-", "_")
        act = actions.get(dest)
        if act is None or dest in ("help", "version", "config"):
            raise UsageError(f"config key {key!r} is not an option of this command")
        if isinstance(act, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
            val = _to_bool(text)
        elif isinstance(act, argparse._AppendAction):
            val = [t.strip() for t in text.split(",") if t.strip()]
        elif act.nargs in ("+", "*"):
            val = [t.strip() for t in text.split(",") if t.strip()]
        else:
            try:
                val = act.type(text) if act.type else text
            except (TypeError, ValueError) as exc:
                raise UsageError(f"config key {key!r}: {exc}") from exc
            if act.choices is not None and val not in act.choices:
                raise UsageError(f"config key {key!r}: {val!r} not in {sorted(act.choices)}")
        out[dest] = val
    return out


def _command_path(ns):
    path = [ns.cmd] if getattr(ns, "cmd", None) else []
    if getattr(ns, "action", None):
        path.append(ns.action)
    return path


def parse(argv, parser=None):
    """Parse ``argv`` into ``(RunConfig, subparser)``; config-file values fill in omitted options."""
    parser = parser or build_parser()
    ns = parser.parse_args(argv)
    path = _command_path(ns)
    command = " ".join(path)
    if command not in _REQUIRED:
        raise UsageError(parser.format_usage() if not path else _find_subparser(parser, path).format_usage())
    sub = _find_subparser(parser, path)
    if ns.config:
        try:
            text = Path(ns.config).read_text()
        except OSError as exc:
            raise UsageError(f"cannot read config {ns.config}: {exc}") from exc
        raw = parse_config(text)
        raw.pop("command", None)
        sub.set_defaults(**_convert(sub, raw))
        ns = parser.parse_args(argv)
    missing = [f"--{d.replace('_', '-')}" for d in _REQUIRED[command] if getattr(ns, d, None) in (None, [])]
    if missing:
        raise UsageError(f"{sub.format_usage()}{sub.prog}: error: missing required {', '.join(missing)}")
    opts = {k: v for k, v in vars(ns).items() if k not in ("cmd", "action", "config")}
    return RunConfig(command, opts), sub


# --------------------------------------------------------------- commands

def _bounds(items):
    out = {}
    for item in items or ():
        try:
            name, rng = item.split("=", 1)
            lo, hi = rng.split(":", 1)
            lo, hi = float(lo), float(hi)
        except ValueError as exc:
            raise UsageError(f"bad --bounds {item!r}; expected NAME=LO:HI") from exc
        name = name.strip()
        if name not in ("scale", "orientation", "tau"):
            raise UsageError(f"unknown bound {name!r}")
        if name == "orientation":
            hi = min(hi, math.nextafter(math.pi, 0.0))
        out[name] = (lo, hi)
    return out


def _solver(o):
    return SolverConfig(max_iterations=o["max_iters"], relative_tolerance=o["tol"], initial_step=o["step"],
                        backtrack_factor=o["backtrack"], orthogonality_weight=o["ortho_weight"])


def _nls(o, key="max_iters"):
    return NlsConfig(max_iterations=o[key], step_tolerance=o["step_tol"], jacobian_step=o["jacobian_step"],
                     bounds=_bounds(o["bounds"]), fix_orientation=o["fix_orientation"])


def cmd_bank_gen(o):
    bank = make_bank(o["name"], o["resolution"])
    out = Path(o["out"])
    out.mkdir(parents=True, exist_ok=True)
    for k, spec in enumerate(bank.filters):
        write_matrix_csv(out / f"kernel_{k:03}.csv", make_kernel(spec))
        print(f"{k:03} {spec.kind} scale={spec.scale:.6g} orientation={spec.orientation:.6g} tau={spec.tau}")


def cmd_project_train(o):
    x = read_instances(o["instances"], o["classes"])
    a, _, _, trace = fit_projection(x, _solver(o), o["init"], o["seed"])
    write_matrix_csv(o["out"], a)
    if o["trace"]:
        Path(o["trace"]).write_text(trace.to_csv())
    h0, h1 = trace.objective_history[0][0], trace.objective_history[-1][0]
    print(f"H {h0:.10g} -> {h1:.10g} after {trace.iterations_run} iterations (converged={trace.converged})")


def cmd_project_apply(o):
    x = read_instances(o["instances"])
    a = read_matrix_csv(o["proj"])
    write_matrix_csv(o["out"], project(x.data, a))


def cmd_rank(o):
    v = read_matrix_csv(o["projected"])
    if o["strategy"] == "top-m":
        if not o["m"]:
            raise UsageError("--strategy top-m needs --m")
        crit = criterion_matrix(v)
        score = aggregate_scores(crit)
        thr = top_m_threshold(score, o["m"])
        rep = RankingReport(crit, score, thr, score >= thr)
    else:
        rep = rank(v, o["bins"])
    Path(o["out"]).write_text(rep.to_csv(o["criterion_columns"]))
    print(f"threshold {rep.threshold!r}, selected {int(rep.mask.sum())} of {rep.mask.size}")


def cmd_select(o):
    v = read_matrix_csv(o["projected"])
    table = read_matrix_csv(o["rank"], header=True)
    if table.shape[0] != v.shape[0] or table.shape[1] < 3:
        raise SpanRankError("ranking does not match the projected set")
    idx = np.flatnonzero(table[:, 2] != 0)
    if idx.size == 0:
        raise SpanRankError("ranking selects no rows")
    with open(o["out"], "w") as fh:
        fh.write(",".join(["index"] + [f"v{j}" for j in range(v.shape[1])]) + "\n")
        for i in idx:
            fh.write(",".join([str(int(table[i, 0]))] + [format_float(x) for x in v[i]]) + "\n")


def cmd_optfilter(o):
    entries = [e for e in read_manifest(o["manifest"]) if e.split == "train"]
    if not entries:
        raise SpanRankError("manifest has no training images")
    images, labels = load_images(entries)
    c = max(labels) + 1
    bank = make_bank(o["bank"], o["resolution"])
    if o["max_filters"]:
        bank = truncate_bank(bank, o["max_filters"])
    sub = _subsample(list(range(len(images))), labels, o["images_per_class"], o["seed"])
    solver = SolverConfig(max_iterations=o["solver_max_iters"])
    ctx = FilterLossContext([images[i] for i in sub], [labels[i] for i in sub], c, solver, o["bins"],
                            o["init"], o["seed"])
    nls = _nls(o)
    hist_dir = Path(o["history"]) if o["history"] else None
    if hist_dir:
        hist_dir.mkdir(parents=True, exist_ok=True)
    lines = ["filter,kind,scale,orientation,tau,resolution,initial_loss,final_loss"]
    for k, spec in enumerate(bank.filters):
        best, history = optimize_filter(spec, ctx, nls)
        r = ctx.residuals(best)
        lines.append(",".join([str(k), best.kind, format_float(best.scale), format_float(best.orientation),
                               str(best.tau), str(best.resolution), format_float(history[0][4]),
                               format_float(float(r @ r))]))
        if hist_dir:
            (hist_dir / f"filter_{k:03}_history.csv").write_text(history_csv(history))
        log.info("filter %d %s: %.6g -> %.6g", k, spec.kind, history[0][4], float(r @ r))
    Path(o["out"]).write_text("\n".join(lines) + "\n")


def cmd_eval(o, run_cfg):
    cfg = PipelineConfig(
        bank=o["bank"], max_filters=o["max_filters"], resolution=o["resolution"],
        enable_filter_optimization=o["optimize_filters"], solver=_solver(o), nls=_nls(o, "nls_max_iters"),
        nls_images_per_class=o["images_per_class"], bins=o["bins"], seed=o["seed"], init=o["init"],
        threshold_mode=o["threshold_mode"], fallback_k=o["fallback_k"], threads=o["threads"],
    )
    report = evaluate(o["manifest"], cfg, keep_ranking=o["keep_rankings"])
    out = Path(o["report"])
    write_run_directory(report, out)
    (out / "run.cfg").write_text(run_cfg.to_text())
    sys.stdout.write(report.to_table())


def cmd_synth(o):
    from .synthetic import write_dataset
    paths = write_dataset(o["out"], o["classes"], o["per_class"], o["size"], o["noise"], o["splits"], o["seed"])
    for p in paths:
        print(p)


def run(argv=None) -> int:
    """Run one invocation and return its exit status."""
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        run_cfg, _ = parse(argv)
    except UsageError as exc:
        msg = str(exc)
        sys.stderr.write(msg if msg.endswith("\n") else msg + "\n")
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    o = run_cfg.options
    if o.get("verbose"):
        logging.basicConfig(level=logging.INFO, format="%(name)s: %(message)s")
    try:
        cmd = run_cfg.command
        if cmd == "bank gen":
            cmd_bank_gen(o)
        elif cmd == "project train":
            cmd_project_train(o)
        elif cmd == "project apply":
            cmd_project_apply(o)
        elif cmd == "rank":
            cmd_rank(o)
        elif cmd == "select":
            cmd_select(o)
        elif cmd == "optfilter":
            cmd_optfilter(o)
        elif cmd == "eval":
            cmd_eval(o, run_cfg)
        elif cmd == "synth":
            cmd_synth(o)
    except UsageError as exc:
        sys.stderr.write(f"{PROG}: {exc}\n")
        return EXIT_USAGE
    except (SpanRankError, ValueError, OSError) as exc:
        sys.stderr.write(f"{PROG}: error: {exc}\n")
        return EXIT_DATA
    return EXIT_OK


def main():
    sys.exit(run())
