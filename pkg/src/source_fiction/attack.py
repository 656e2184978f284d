"""Inverse (label-seeking) iterative sign-gradient attack in latent space."""

import json
import logging
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.spatial.distance import pdist

from . import classifier as clf
from .dataset import save_csv
from .errors import BoundViolationError, DegenerateInputError, ParameterError, PreconditionError

log = logging.getLogger(__name__)

DEFAULT_EPSILON = 0.45
DEFAULT_ITERATIONS = 50


@dataclass(frozen=True)
class AttackConfig:
    """``alpha=None`` picks 2.5 * epsilon / iterations."""

    epsilon: float = DEFAULT_EPSILON
    alpha: float = None
    iterations: int = DEFAULT_ITERATIONS
    ball_norm: str = "l2"

    def __post_init__(self):
        if self.epsilon < 0 or not math.isfinite(self.epsilon):
            raise ParameterError("epsilon must be finite and >= 0")
        if self.iterations < 0:
            raise ParameterError("iterations must be >= 0")
        if self.ball_norm not in ("l2", "linf"):
            raise ParameterError(f"ball_norm must be 'l2' or 'linf', got {self.ball_norm!r}")
        if self.alpha is not None:
            if not self.alpha > 0:
                raise ParameterError("alpha must be positive")
            if self.iterations >= 1 and self.alpha > self.epsilon:
                raise ParameterError(f"alpha={self.alpha} exceeds epsilon={self.epsilon}")

    @property
    def step(self):
        if self.alpha is not None:
            return self.alpha
        return 2.5 * self.epsilon / max(self.iterations, 1)

    def with_epsilon(self, epsilon):
        alpha = self.alpha
        if alpha is not None and alpha > epsilon:
            alpha = None
        return AttackConfig(epsilon, alpha, self.iterations, self.ball_norm)


def epsilon_bound(points):
    """Half the smallest Euclidean distance between two rows."""
    x = np.asarray(points, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ParameterError("epsilon_bound needs at least two rows")
    dmin = float(pdist(x).min())
    if dmin == 0.0:
        raise DegenerateInputError("duplicate rows make the monotonicity bound zero")
    return 0.5 * dmin


def _project(x, center, eps, ball_norm):
    delta = x - center
    if ball_norm == "linf":
        r = eps / math.sqrt(x.shape[-1])
        return center + np.clip(delta, -r, r)
    norms = np.linalg.norm(delta, axis=-1, keepdims=True)
    scale = np.where(norms > eps, eps / np.where(norms > 0, norms, 1.0), 1.0)
    return center + delta * scale


def _inverse_fsgd_batch(params, points, labels, cfg):
    x0 = np.array(points, dtype=float)
    if cfg.iterations == 0 or cfg.epsilon == 0:
        return x0
    alpha = cfg.step
    x = x0.copy()
    loss0 = clf.head_loss(params, x0, labels)
    best, best_loss = x0.copy(), loss0.copy()
    for _ in range(cfg.iterations):
        g = clf.head_loss_gradient(params, x, labels)
        x = _project(x - alpha * np.sign(g), x0, cfg.epsilon, cfg.ball_norm)
        loss = clf.head_loss(params, x, labels)
        better = loss < best_loss
        best[better] = x[better]
        best_loss[better] = loss[better]
    final_loss = clf.head_loss(params, x, labels)
    worse = final_loss > loss0
    x[worse] = best[worse]
    return x


def inverse_fsgd(params, point, true_label, cfg):
    """Descend the head loss toward ``true_label`` with sign steps inside the ε-ball.

    Returns the last iterate, unless its loss is above the loss at ``point``,
    in which case the lowest-loss iterate is returned instead.
    """
    z = np.asarray(point, dtype=float)
    if z.ndim != 1:
        raise ParameterError("point must be a vector")
    if not 0 <= true_label < params.num_classes:
        raise ParameterError("true_label out of range")
    if z.shape[0] != params.latent_dim:
        raise ParameterError(f"expected latent dimension {params.latent_dim}, got {z.shape[0]}")
    return _inverse_fsgd_batch(params, z[None, :], np.array([true_label]), cfg)[0]


@dataclass
class FictionResult:
    data: object
    bound: float
    epsilon: float
    displacement: np.ndarray
    correct: np.ndarray
    warnings: list

    @property
    def classification_rate(self):
        return float(np.mean(self.correct)) if len(self.correct) else float("nan")


def build_source_fiction(params, labeled_targets, cfg, allow_exceed_bound=False):
    """Attack every labeled latent point toward its own label.

    Rows are processed independently, so row ``i`` of the result always
    corresponds to row ``i`` of the input.
    """
    if not labeled_targets.fully_labeled:
        raise PreconditionError("fiction requires fully labeled targets")
    x = labeled_targets.features
    bound = epsilon_bound(x) if x.shape[0] >= 2 else math.inf
    if cfg.epsilon > bound and not allow_exceed_bound:
        raise BoundViolationError(cfg.epsilon, bound)
    if x.shape[1] != params.latent_dim:
        raise ParameterError(f"expected latent dimension {params.latent_dim}, got {x.shape[1]}")
    fiction = _inverse_fsgd_batch(params, x, labeled_targets.labels, cfg)
    displacement = np.linalg.norm(fiction - x, axis=1)
    correct = clf.head_predict(params, fiction) == labeled_targets.labels
    warnings = [
        {"row": int(i), "label": int(labeled_targets.labels[i]), "message": "fiction point still misclassified"}
        for i in np.flatnonzero(~correct)
    ]
    if warnings:
        rows = [w["row"] for w in warnings]
        shown = ", ".join(map(str, rows[:10])) + (", ..." if len(rows) > 10 else "")
        log.warning("%d of %d fiction points are still misclassified (rows %s)", len(rows),
                    len(correct), shown)
    return FictionResult(labeled_targets.with_features(fiction), bound, cfg.epsilon,
                         displacement, correct, warnings)


def save_fiction(result, cfg, csv_path, sidecar_path, extra=None):
    save_csv(result.data, csv_path)
    doc = {
        "attack": asdict(cfg),
        "step": cfg.step,
        "bound": result.bound,
        "epsilon": result.epsilon,
        "classification_rate": result.classification_rate,
        "displacement": [float(v) for v in result.displacement],
        "warnings": result.warnings,
    }
    if extra:
        doc.update(extra)
    with open(sidecar_path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
