"""Adaptive solve-recover-metric-adapt loop and convergence studies over N."""

from __future__ import annotations

import csv
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import diagnostics as dg
from .adapt import AdaptParams, adapt_mesh, scale_metric_to_target
from .fem import Problem, h1_seminorm_error, interp_error_h1, l2_error, solve_poisson
from .geometry import Mesh, structured_mesh, write_mesh
from .metric import H1, L2, build_metric, solve_alpha_exact, solve_alpha_h
from .problems import PROBLEMS, get_problem
from .recovery import METHODS, element_average, exact_nodal_hessian, recover

logger = logging.getLogger(__name__)

EXACT = "exact"
RECOVERIES = METHODS + (EXACT,)

STUDY_COLUMNS = (
    "n_target",
    "n_actual",
    "h1_error",
    "l2_error",
    "interp_h1_error",
    "recovery_error_max",
    "c_eq",
    "c_ali",
    "eps",
    "cr_plus",
    "cr_minus",
    "cr_ratio",
    "alpha_h",
    "alpha_exact",
    "bound_factor",
    "flagged",
)
PHASES = ("solve", "recover", "metric", "adapt", "diagnostics")


@dataclass
class StudyConfig:
    problem: str
    recovery: str
    metric_kind: str = H1
    n_targets: list = field(default_factory=lambda: [256, 1024, 4096])
    fixed_point_iters: int = 5
    seed: int = 42
    output_dir: str | None = None
    flower_fix_typo: bool = False
    debug_meshes: bool = False

    def __post_init__(self):
        self.problem = self.problem.lower()
        self.recovery = self.recovery.lower()
        self.metric_kind = self.metric_kind.lower()
        self.n_targets = [int(n) for n in self.n_targets]
        if self.problem not in PROBLEMS:
            raise ValueError(f"unknown problem {self.problem!r}")
        if self.recovery not in RECOVERIES:
            raise ValueError(f"unknown recovery {self.recovery!r}")
        if self.metric_kind not in (H1, L2):
            raise ValueError(f"unknown metric kind {self.metric_kind!r}")
        if not self.n_targets:
            raise ValueError("n_targets is empty")
        if any(n < 8 for n in self.n_targets):
            raise ValueError("every target must be at least 8")
        if any(b <= a for a, b in zip(self.n_targets, self.n_targets[1:])):
            raise ValueError("n_targets must be strictly ascending")
        if self.fixed_point_iters < 1:
            raise ValueError("fixed_point_iters must be >= 1")

    def get_problem(self) -> Problem:
        return get_problem(self.problem, self.flower_fix_typo)


@dataclass
class StudyRecord:
    n_target: int
    n_actual: int
    h1_error: float
    l2_error: float
    interp_h1_error: float
    recovery_error_max: float
    c_eq: float
    c_ali: float
    eps: float
    cr_plus: float
    cr_minus: float
    cr_ratio: float
    alpha_h: float
    alpha_exact: float
    bound_factor: float
    flagged: bool
    runtime_ms: dict = field(default_factory=dict)
    error: str | None = None
    mesh: Mesh | None = field(default=None, repr=False)
    per_element: dict = field(default_factory=dict, repr=False)

    def row(self) -> list[str]:
        out = []
        for name in STUDY_COLUMNS:
            v = getattr(self, name)
            if isinstance(v, (bool, np.bool_)):
                out.append(str(int(v)))
            elif isinstance(v, (int, np.integer)):
                out.append(str(int(v)))
            else:
                out.append("%.17g" % float(v))
        return out


def initial_mesh(problem: Problem, n_target: int, seed: int) -> Mesh:
    """Structured mesh with about ``max(64, n/4)`` elements and jittered interior vertices."""
    k = max(4, int(round(math.sqrt(max(64, n_target / 4) / 2))))
    mesh = structured_mesh(k, bounds=problem.domain)
    rng = np.random.default_rng([seed, n_target])
    x0, x1, y0, y1 = problem.domain
    h = min(x1 - x0, y1 - y0) / k
    pts = np.array(mesh.vertices)
    inner = ~mesh.is_boundary_vertex
    pts[inner] += rng.uniform(-0.15 * h, 0.15 * h, size=(int(inner.sum()), 2))
    return Mesh(pts, mesh.triangles, markers=mesh.markers)


def _element_hessians(mesh, uh, problem, recovery):
    field_ = exact_nodal_hessian(mesh, problem) if recovery == EXACT else recover(mesh, uh, recovery)
    return element_average(mesh, field_)


class _Timer:
    def __init__(self):
        self.ms = {p: 0.0 for p in PHASES}

    def __call__(self, phase):
        timer = self

        class _Ctx:
            def __enter__(self):
                self.t0 = time.perf_counter()

            def __exit__(self, *exc):
                timer.ms[phase] += 1e3 * (time.perf_counter() - self.t0)

        return _Ctx()


def _nan_record(n, error):
    nan = float("nan")
    vals = {c: nan for c in STUDY_COLUMNS}
    vals.update(n_target=n, n_actual=0, flagged=True)
    return StudyRecord(**vals, error=error)


def run_single(config: StudyConfig, n_target: int) -> StudyRecord:
    problem = config.get_problem()
    timer = _Timer()
    mesh = initial_mesh(problem, n_target, config.seed)
    result = None
    for it in range(config.fixed_point_iters):
        with timer("solve"):
            uh = solve_poisson(mesh, problem)
        with timer("recover"):
            rk = _element_hessians(mesh, uh, problem, config.recovery)
        with timer("metric"):
            alpha_h = solve_alpha_h(mesh, rk)
            metric = build_metric(rk, alpha_h, config.metric_kind)
            metric = scale_metric_to_target(mesh, metric, n_target)
        with timer("adapt"):
            debug_dir = None
            if config.debug_meshes and config.output_dir:
                debug_dir = os.path.join(config.output_dir, "debug", f"n{n_target}_iter{it}")
            result = adapt_mesh(mesh, metric, AdaptParams(target_n=n_target, debug_dir=debug_dir))
        mesh = result.mesh
        logger.info("n=%d iter %d: %d elements, flagged=%s", n_target, it, mesh.n_elements, result.flagged)

    with timer("solve"):
        uh = solve_poisson(mesh, problem)
    with timer("recover"):
        rk = _element_hessians(mesh, uh, problem, config.recovery)
    with timer("diagnostics"):
        alpha_h = solve_alpha_h(mesh, rk)
        alpha_exact = solve_alpha_exact(mesh, problem)
        hk = element_average(mesh, exact_nodal_hessian(mesh, problem))
        quality = dg.mesh_quality(mesh, result.metric)
        eps = dg.epsilon_closeness(mesh, rk, hk, alpha_h, alpha_exact)
        cr = dg.cr_constants(mesh, rk, problem, alpha_h)
        record = StudyRecord(
            n_target=n_target,
            n_actual=mesh.n_elements,
            h1_error=h1_seminorm_error(mesh, uh, problem),
            l2_error=l2_error(mesh, uh, problem),
            interp_h1_error=interp_error_h1(mesh, problem),
            recovery_error_max=dg.recovery_error_max(mesh, rk, problem),
            c_eq=quality.c_eq,
            c_ali=quality.c_ali,
            eps=eps.eps,
            cr_plus=cr.cr_plus,
            cr_minus=cr.cr_minus,
            cr_ratio=cr.ratio,
            alpha_h=alpha_h,
            alpha_exact=alpha_exact,
            bound_factor=dg.bound_factor(problem, mesh, alpha_h, config.metric_kind),
            flagged=bool(result.flagged),
            mesh=mesh,
            per_element=dict(
                c_eq=quality.c_eq_per_element,
                c_ali=quality.c_ali_per_element,
                eps=eps.eps_per_element,
                cr_plus=cr.cr_plus_per_element,
                cr_minus=cr.cr_minus_per_element,
            ),
        )
    record.runtime_ms = dict(timer.ms)
    return record


def _threads() -> int:
    raw = os.environ.get("HESSADAPT_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ValueError(f"HESSADAPT_THREADS must be an integer, got {raw!r}") from None


def run_study(config: StudyConfig) -> list[StudyRecord]:
    """One record per target; a failing target yields a flagged record of NaNs."""

    def one(n):
        try:
            return run_single(config, n)
        except (ValueError, RuntimeError, ArithmeticError) as exc:
            logger.error("n=%d failed: %s", n, exc)
            return _nan_record(n, f"{type(exc).__name__}: {exc}")

    threads = min(_threads(), len(config.n_targets))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            records = list(pool.map(one, config.n_targets))
    else:
        records = [one(n) for n in config.n_targets]
    if config.output_dir:
        emit_outputs(records, config.output_dir)
    return records


PLOT_SCRIPT = '''"""Render the study panels from study.csv (run: python plot_study.py)."""
import csv
import os
import sys

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

here = os.path.dirname(os.path.abspath(__file__))
path = sys.argv[1] if len(sys.argv) > 1 else os.path.join(here, "study.csv")
with open(path) as fh:
    rows = list(csv.DictReader(fh))
col = lambda k: [float(r[k]) for r in rows]
n = col("n_actual")

panels = [
    ("H1 error", ["h1_error", "interp_h1_error"], True),
    ("L2 error", ["l2_error"], True),
    ("recovery error", ["recovery_error_max"], True),
    ("mesh quality", ["c_eq", "c_ali"], False),
    ("closeness", ["eps", "cr_ratio"], True),
    ("regularization", ["alpha_h", "alpha_exact"], True),
]
fig, axes = plt.subplots(2, 3, figsize=(13, 7))
for ax, (title, keys, logy) in zip(axes.ravel(), panels):
    for k in keys:
        ax.plot(n, col(k), "o-", label=k)
    ax.set_xscale("log")
    if logy:
        ax.set_yscale("log")
    ax.set_xlabel("N")
    ax.set_title(title)
    ax.legend()
fig.tight_layout()
fig.savefig(os.path.join(os.path.dirname(path), "study.png"), dpi=120)
'''


def emit_outputs(records: list[StudyRecord], out_dir: str) -> list[str]:
    """Write study.csv, timings.csv, per-element CSVs, final meshes and a plot script."""
    if not records:
        raise ValueError("nothing to emit")
    os.makedirs(out_dir, exist_ok=True)
    written = []

    path = os.path.join(out_dir, "study.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(STUDY_COLUMNS)
        for r in records:
            w.writerow(r.row())
    written.append(path)

    path = os.path.join(out_dir, "timings.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("n_target",) + tuple(f"{p}_ms" for p in PHASES))
        for r in records:
            w.writerow([r.n_target] + ["%.3f" % r.runtime_ms.get(p, float("nan")) for p in PHASES])
    written.append(path)

    for r in records:
        if r.mesh is None:
            continue
        path = os.path.join(out_dir, f"elements_n{r.n_target}.csv")
        keys = list(r.per_element)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["element", "area"] + keys)
            cols = [r.per_element[k] for k in keys]
            for k in range(r.mesh.n_elements):
                w.writerow([k, "%.17g" % r.mesh.areas[k]] + ["%.17g" % c[k] for c in cols])
        written.append(path)
        path = os.path.join(out_dir, f"mesh_n{r.n_target}.mesh")
        write_mesh(r.mesh, path)
        written.append(path)

    path = os.path.join(out_dir, "plot_study.py")
    with open(path, "w") as fh:
        fh.write(PLOT_SCRIPT)
    written.append(path)
    return written


def loglog_slope(n, y) -> float:
    """Least-squares slope of ``log y`` against ``log n``."""
    x = np.log(np.asarray(n, dtype=float))
    v = np.log(np.asarray(y, dtype=float))
    return float(np.polyfit(x, v, 1)[0])
