"""End-to-end adaptation: classifier, source fiction, transport, evaluation.

Every target point (labeled or not) takes part in the transport problem.
For EMD and the Sinkhorn family the labeled side (fiction or source
latents) indexes the rows and the targets index the columns, so the class
groups of the regularized solvers live on the rows; targets are mapped
through the transposed coupling. OTLin puts the targets on the rows so its
affine map sends targets toward the labeled side. Accuracy is scored on the
target rows that were not in the labeled subset.
"""

import csv
import io
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import classifier as clf
from .attack import AttackConfig, build_source_fiction, epsilon_bound
from .dataset import UNLABELED, LabeledDataset, labeled_subset_indices, uniform_mass
from .errors import ParameterError, PreconditionError, SourceFictionError, StageError
from .ot import (SOLVERS, barycentric_map, build_cost, solve_emd, solve_otlin, solve_sinkhorn,
                 solve_sinkhorn_l1l2, solve_sinkhorn_lpl1)
from .seeding import derive_seed

log = logging.getLogger(__name__)

DEFAULT_LABELED_PER_CLASS = 10
THREADS_ENV = "SF_OT_THREADS"

# hyperparameters each solver accepts
SOLVER_PARAMS = {
    "emd": {"max_iter"},
    "sinkhorn": {"reg", "max_iter", "tol"},
    "sinkhorn_l1l2": {"reg", "eta", "outer_iter", "max_iter", "tol"},
    "sinkhorn_lpl1": {"reg", "eta", "p", "outer_iter", "max_iter", "tol"},
    "otlin": {"reg", "mu", "outer_iter", "max_iter", "tol"},
}


@dataclass(frozen=True)
class AdaptationConfig:
    """Inputs of one adaptation run.

    ``epsilon_multiplier`` (if set) replaces ``attack.epsilon`` by
    multiplier × bound and lifts the bound check; otherwise the attack
    radius is clamped to the bound unless ``clamp_epsilon`` is False.
    """

    solver: str = "emd"
    solver_params: dict = field(default_factory=dict)
    attack: AttackConfig = field(default_factory=AttackConfig)
    labeled_per_class: int = DEFAULT_LABELED_PER_CLASS
    seed: int = 0
    train: clf.TrainConfig = field(default_factory=clf.TrainConfig)
    arch: tuple = None
    clamp_epsilon: bool = True
    epsilon_multiplier: float = None
    penalize_plain: bool = True
    penalty: float = None

    def __post_init__(self):
        if self.solver not in SOLVERS:
            raise ParameterError(f"unknown solver {self.solver!r}; expected one of {SOLVERS}")
        unknown = set(self.solver_params) - SOLVER_PARAMS[self.solver]
        if unknown:
            raise ParameterError(f"solver {self.solver} does not take {sorted(unknown)}")
        if self.labeled_per_class < 1:
            raise ParameterError("labeled_per_class must be >= 1")
        if self.epsilon_multiplier is not None and not self.epsilon_multiplier > 0:
            raise ParameterError("epsilon_multiplier must be positive")


@dataclass
class AdaptationReport:
    solver: str
    seed: int
    source_only_accuracy: float
    plain_accuracy: float
    fiction_accuracy: float
    confusion: list
    fiction_classification_rate: float
    epsilon: float
    bound: float
    evaluated: int
    converged: dict
    timings: dict

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class Prepared:
    """Trained classifier plus the latent embeddings of both domains."""

    params: clf.ClassifierParams
    source_latent: np.ndarray
    target_latent: np.ndarray
    source: LabeledDataset
    target: LabeledDataset
    train_seconds: float


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except StageError:
        raise
    except SourceFictionError as exc:
        raise StageError(name, exc) from exc


def prepare(source, target, cfg):
    """Train on the source and embed both domains (the part shared across runs)."""
    if not source.fully_labeled:
        raise PreconditionError("source must be fully labeled")
    if not target.fully_labeled:
        raise PreconditionError("target must be fully labeled (labels are used for scoring)")
    if source.dim != target.dim or source.num_classes != target.num_classes:
        raise ParameterError("source and target disagree on dimension or class count")
    arch = list(cfg.arch) if cfg.arch else clf.default_arch(source.dim, source.num_classes)
    train_cfg = replace(cfg.train, seed=derive_seed(cfg.seed, "pipeline.train"))
    t0 = time.perf_counter()
    params = _stage("train", clf.train, source, arch, train_cfg)
    seconds = time.perf_counter() - t0
    return Prepared(params, clf.latent(params, source.features), clf.latent(params, target.features),
                    source, target, seconds)


def _solve(solver, M, a, b, row_classes, hp):
    if solver == "emd":
        return solve_emd(M, a, b, **hp)
    if solver == "sinkhorn":
        return solve_sinkhorn(M, a, b, **hp)
    if solver == "sinkhorn_l1l2":
        return solve_sinkhorn_l1l2(M, a, b, x_class_of_row=row_classes, **hp)
    if solver == "sinkhorn_lpl1":
        return solve_sinkhorn_lpl1(M, a, b, x_class_of_row=row_classes, **hp)
    raise ParameterError(f"solver {solver!r} is not handled here")


def transport_targets(solver, hp, side, side_labels, targets, target_labels, penalty=None,
                      penalize=True):
    """Move every target onto the labeled ``side`` and return (images, result)."""
    a_side = uniform_mass(side.shape[0])
    b_tgt = uniform_mass(targets.shape[0])
    tl = target_labels if penalize else None
    sl = side_labels if penalize else None
    if solver == "otlin":
        result, _ = solve_otlin(targets, side, b_tgt, a_side, x_labels=tl, y_labels=sl,
                                penalty=penalty, **hp)
        return barycentric_map(result.coupling, side), result
    cost = build_cost(side, targets, sl, tl, penalty)
    result = _solve(solver, cost, a_side, b_tgt, side_labels, hp)
    return barycentric_map(result.coupling.T, side), result


def _accuracy(pred, truth):
    return float(np.mean(pred == truth)) if len(truth) else float("nan")


def adapt(source, target, cfg, prepared=None):
    """Run one adaptation and its two baselines.

    Parameters
    ----------
    source, target : LabeledDataset
        Both fully labeled; target labels are used only for the labeled
        subset and for scoring.
    cfg : AdaptationConfig
    prepared : Prepared, optional
        Reuse a trained classifier (see :func:`prepare`).

    Returns
    -------
    AdaptationReport
        Accuracies on the target rows outside the labeled subset.
    """
    timings = {}
    if prepared is None:
        prepared = prepare(source, target, cfg)
    timings["train"] = prepared.train_seconds
    params = prepared.params
    zs, zt = prepared.source_latent, prepared.target_latent
    C = target.num_classes

    labeled, rest = _stage("select", labeled_subset_indices, target.labels, cfg.labeled_per_class,
                           derive_seed(cfg.seed, "pipeline.subset"), C)
    lab_y = target.labels[labeled]
    x_l = LabeledDataset(zt[labeled], lab_y, uniform_mass(len(labeled)), C)

    t0 = time.perf_counter()
    bound = _stage("fiction", epsilon_bound, x_l.features)
    if cfg.epsilon_multiplier is not None:
        eps, allow = cfg.epsilon_multiplier * bound, True
    elif cfg.clamp_epsilon:
        eps, allow = min(cfg.attack.epsilon, bound), False
    else:
        eps, allow = cfg.attack.epsilon, True
    fiction = _stage("fiction", build_source_fiction, params, x_l, cfg.attack.with_epsilon(eps),
                     allow_exceed_bound=allow)
    timings["fiction"] = time.perf_counter() - t0

    target_labels = np.full(target.n, UNLABELED)
    target_labels[labeled] = lab_y
    truth = target.labels[rest]
    hp = dict(cfg.solver_params)

    t0 = time.perf_counter()
    mapped, res_f = _stage("transport", transport_targets, cfg.solver, hp, fiction.data.features,
                           lab_y, zt, target_labels, cfg.penalty)
    pred_f = clf.head_predict(params, mapped[rest])
    timings["fiction_ot"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    mapped_p, res_p = _stage("transport", transport_targets, cfg.solver, hp, zs, source.labels, zt,
                             target_labels, cfg.penalty, cfg.penalize_plain)
    pred_p = clf.head_predict(params, mapped_p[rest])
    timings["plain_ot"] = time.perf_counter() - t0

    confusion = np.zeros((C, C), dtype=np.int64)
    np.add.at(confusion, (truth, pred_f), 1)
    return AdaptationReport(
        solver=cfg.solver,
        seed=cfg.seed,
        source_only_accuracy=_accuracy(clf.head_predict(params, zt[rest]), truth),
        plain_accuracy=_accuracy(pred_p, truth),
        fiction_accuracy=_accuracy(pred_f, truth),
        confusion=confusion.tolist(),
        fiction_classification_rate=fiction.classification_rate,
        epsilon=float(eps),
        bound=float(bound),
        evaluated=int(len(rest)),
        converged={"fiction": bool(res_f.converged), "plain": bool(res_p.converged)},
        timings=timings,
    )


@dataclass(frozen=True)
class AblationRow:
    multiplier: float
    epsilon: float
    fiction_classification_rate: float
    adapted_accuracy: float


def ablate_epsilon(source, target, base_cfg, epsilon_multipliers, prepared=None):
    """Adapt once per multiplier ``m`` with attack radius ``m × bound``."""
    mults = [float(m) for m in epsilon_multipliers]
    if not mults or any(not m > 0 for m in mults):
        raise ParameterError("multipliers must be positive")
    if mults != sorted(mults):
        raise ParameterError("multipliers must be sorted ascending")
    if prepared is None:
        prepared = prepare(source, target, base_cfg)
    rows = []
    for m in mults:
        rep = adapt(source, target, replace(base_cfg, epsilon_multiplier=m), prepared)
        rows.append(AblationRow(m, rep.epsilon, rep.fiction_classification_rate, rep.fiction_accuracy))
    return rows


@dataclass(frozen=True)
class BenchmarkRow:
    task: str
    solver: str
    variant: str
    mean_acc: float
    std_acc: float
    eps: float
    bound: float


def worker_count():
    raw = os.environ.get(THREADS_ENV)
    if not raw:
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise ParameterError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    if n < 1:
        raise ParameterError(f"{THREADS_ENV} must be >= 1")
    return n


def benchmark(tasks, solvers, repetitions, seed, base_cfg=None):
    """Mean and standard deviation of every accuracy over re-drawn labeled subsets.

    ``tasks`` is a list of ``(name, source, target)``. The classifier is
    trained once per task; repetition ``r`` draws its labeled subset from
    the stream ``(seed, "benchmark", task, r)``.

    Returns ``(rows, reports)`` where ``reports`` maps
    ``(task, solver, repetition)`` to its AdaptationReport.
    """
    if repetitions < 1:
        raise ParameterError("repetitions must be >= 1")
    base_cfg = base_cfg or AdaptationConfig()
    cells = []
    prepared = {}
    for name, source, target in tasks:
        prepared[name] = prepare(source, target, replace(base_cfg, seed=seed))
        for solver in solvers:
            params = base_cfg.solver_params if solver == base_cfg.solver else {}
            for r in range(repetitions):
                cfg = replace(base_cfg, solver=solver, solver_params=params,
                              seed=derive_seed(seed, "benchmark", name, r))
                cells.append(((name, solver, r), source, target, cfg))

    def run(cell):
        key, source, target, cfg = cell
        return key, adapt(source, target, cfg, prepared[key[0]])

    workers = worker_count()
    if workers == 1:
        reports = dict(run(c) for c in cells)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            reports = dict(pool.map(run, cells))

    rows = []
    for name, _, _ in tasks:
        for solver in solvers:
            reps = [reports[(name, solver, r)] for r in range(repetitions)]
            eps = float(np.mean([rep.epsilon for rep in reps]))
            bound = float(np.mean([rep.bound for rep in reps]))
            for variant, attr in (("source_only", "source_only_accuracy"),
                                  ("plain", "plain_accuracy"), ("fiction", "fiction_accuracy")):
                vals = np.array([getattr(rep, attr) for rep in reps])
                rows.append(BenchmarkRow(name, solver, variant, float(vals.mean()),
                                         float(vals.std()), eps, bound))
    return rows, reports


REPORT_COLUMNS = ("task", "solver", "variant", "mean_acc", "std_acc", "eps", "bound")


def write_report_csv(rows, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(REPORT_COLUMNS)
        for row in rows:
            writer.writerow([row.task, row.solver, row.variant] +
                            [repr(getattr(row, c)) for c in REPORT_COLUMNS[3:]])


def format_report(rows):
    """Plain-text table: one line per (task, solver), accuracies in percent."""
    table = {}
    for row in rows:
        table.setdefault((row.task, row.solver), {})[row.variant] = row
    out = io.StringIO()
    header = f"{'task':<16}{'solver':<15}{'source-only':>14}{'plain OT':>14}{'fiction OT':>14}"
    out.write(header + "\n" + "-" * len(header) + "\n")
    for (task, solver), cell in table.items():
        parts = []
        for variant in ("source_only", "plain", "fiction"):
            r = cell.get(variant)
            parts.append(f"{100 * r.mean_acc:6.1f} ± {100 * r.std_acc:4.1f}" if r else " " * 14)
        out.write(f"{task:<16}{solver:<15}" + "".join(f"{p:>14}" for p in parts) + "\n")
    return out.getvalue()


ABLATION_COLUMNS = ("multiplier", "epsilon", "fiction_classification_rate", "adapted_accuracy")


def write_ablation_csv(rows, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(ABLATION_COLUMNS)
        for row in rows:
            writer.writerow([repr(float(getattr(row, c))) for c in ABLATION_COLUMNS])
