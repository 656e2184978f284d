"""Labeled point clouds: generation, synthetic domain shift, subsetting and CSV I/O."""

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, ParameterError
from .seeding import derive_seed, rng_for

UNLABELED = -1


def _frozen(arr):
    arr = np.array(arr, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    """Samples with optional integer labels and a probability mass per row.

    ``labels`` uses ``-1`` for unlabeled rows. Arrays are copied and made
    read-only on construction. An empty dataset (``n == 0``) is allowed only
    so that subsetting can return an empty remainder.
    """

    features: np.ndarray
    labels: np.ndarray
    mass: np.ndarray
    num_classes: int

    def __post_init__(self):
        x = np.asarray(self.features, dtype=float)
        if x.ndim != 2:
            raise ParameterError(f"features must be 2-D, got shape {x.shape}")
        n, d = x.shape
        if d < 1:
            raise ParameterError("features need at least one column")
        y = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        w = np.asarray(self.mass, dtype=float).reshape(-1)
        if y.shape[0] != n or w.shape[0] != n:
            raise ParameterError(
                f"labels ({y.shape[0]}) and mass ({w.shape[0]}) must have {n} rows"
            )
        if not np.all(np.isfinite(x)):
            raise ParameterError("features contain non-finite values")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ParameterError("mass must be finite and nonnegative")
        if n and abs(w.sum() - 1.0) > 1e-9:
            raise ParameterError(f"mass sums to {w.sum()!r}, expected 1")
        C = int(self.num_classes)
        if np.any(y < UNLABELED):
            raise ParameterError("labels must be >= 0, or -1 for unlabeled")
        if np.any(y >= C):
            raise ParameterError(f"label {int(y.max())} is not below num_classes={C}")
        object.__setattr__(self, "features", _frozen(x))
        object.__setattr__(self, "labels", _frozen(y))
        object.__setattr__(self, "mass", _frozen(w))
        object.__setattr__(self, "num_classes", C)

    @property
    def n(self):
        return self.features.shape[0]

    @property
    def dim(self):
        return self.features.shape[1]

    @property
    def labeled_mask(self):
        return self.labels != UNLABELED

    @property
    def fully_labeled(self):
        return bool(np.all(self.labeled_mask))

    def subset(self, index, hide_labels=False):
        """Rows ``index`` with mass renormalized to sum to one."""
        index = np.asarray(index, dtype=np.int64)
        w = self.mass[index]
        total = w.sum()
        if len(index):
            w = w / total if total > 0 else np.full(len(index), 1.0 / len(index))
        labels = self.labels[index]
        if hide_labels:
            labels = np.full(len(index), UNLABELED)
        return LabeledDataset(self.features[index], labels, w, self.num_classes)

    def with_features(self, features):
        return LabeledDataset(features, self.labels, self.mass, self.num_classes)

    def allclose(self, other, atol=1e-12):
        return (
            self.features.shape == other.features.shape
            and np.array_equal(self.labels, other.labels)
            and np.allclose(self.features, other.features, rtol=0, atol=atol)
            and np.allclose(self.mass, other.mass, rtol=0, atol=atol)
        )


def uniform_mass(n):
    return np.full(n, 1.0 / n) if n else np.zeros(0)


def class_means(num_classes, dim, class_separation):
    """Class centres at circumradius ``class_separation``.

    d == 2: equally spaced on a circle starting at angle 0. Otherwise the
    vertices of a regular simplex, which needs ``num_classes <= dim + 1``.
    """
    if dim == 2:
        angles = 2 * np.pi * np.arange(num_classes) / num_classes
        means = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    else:
        if num_classes > dim + 1:
            raise ParameterError(
                f"{num_classes} simplex vertices do not fit in {dim} dimensions"
            )
        verts = np.eye(num_classes) - 1.0 / num_classes
        # orthonormal basis of the (C-1)-dim hyperplane the vertices span
        q, _ = np.linalg.qr(verts.T)
        coords = verts @ q[:, : num_classes - 1]
        means = np.zeros((num_classes, dim))
        means[:, : num_classes - 1] = coords
        means /= np.linalg.norm(means, axis=1, keepdims=True)
    return class_separation * means


def generate_gaussian_mixture(num_classes, samples_per_class, dim, class_separation,
                              noise_sigma, seed):
    """Isotropic Gaussian blobs, one per class, uniform mass, fully labeled.

    Rows are grouped by class (all of class 0 first).
    """
    if num_classes < 2:
        raise ParameterError("num_classes must be >= 2")
    if samples_per_class < 1:
        raise ParameterError("samples_per_class must be >= 1")
    if dim < 1:
        raise ParameterError("dim must be >= 1")
    if not class_separation > 0 or not noise_sigma > 0:
        raise ParameterError("class_separation and noise_sigma must be positive")
    means = class_means(num_classes, dim, class_separation)
    rng = rng_for(seed, "dataset.mixture")
    labels = np.repeat(np.arange(num_classes), samples_per_class)
    noise = rng.normal(scale=noise_sigma, size=(len(labels), dim))
    features = means[labels] + noise
    return LabeledDataset(features, labels, uniform_mass(len(labels)), num_classes)


@dataclass(frozen=True)
class ShiftSpec:
    """Synthetic domain shift: rotate, then scale per axis, then translate.

    The rotation acts in the plane of the first two axes. With
    ``permute_labels`` every label ``c`` becomes ``(c + 1) % C``.
    """

    dim: int
    rotation: float = 0.0
    translation: tuple = None
    scale: tuple = None
    permute_labels: bool = False

    def __post_init__(self):
        t = np.zeros(self.dim) if self.translation is None else np.asarray(self.translation, float)
        s = np.ones(self.dim) if self.scale is None else np.asarray(self.scale, float)
        if t.shape != (self.dim,):
            raise ParameterError(f"translation must have length {self.dim}")
        if s.shape != (self.dim,):
            raise ParameterError(f"scale must have length {self.dim}")
        if np.any(s <= 0):
            raise ParameterError("scale factors must be strictly positive")
        object.__setattr__(self, "translation", tuple(float(v) for v in t))
        object.__setattr__(self, "scale", tuple(float(v) for v in s))

    @classmethod
    def identity(cls, dim):
        return cls(dim)

    def rotation_matrix(self):
        R = np.eye(self.dim)
        if self.dim >= 2 and self.rotation != 0.0:
            c, s = math.cos(self.rotation), math.sin(self.rotation)
            R[:2, :2] = [[c, -s], [s, c]]
        return R

    @property
    def is_isometry(self):
        return all(v == 1.0 for v in self.scale)


def apply_shift(data, spec):
    if spec.dim != data.dim:
        raise ParameterError(f"shift is {spec.dim}-dimensional, data is {data.dim}-dimensional")
    x = data.features
    if spec.rotation != 0.0:
        x = x @ spec.rotation_matrix().T
    if not spec.is_isometry:
        x = x * np.asarray(spec.scale)
    if any(spec.translation):
        x = x + np.asarray(spec.translation)
    labels = data.labels
    if spec.permute_labels:
        labels = np.where(labels == UNLABELED, UNLABELED, (labels + 1) % data.num_classes)
    return LabeledDataset(x, labels, data.mass, data.num_classes)


def make_task(seed, num_classes, samples_per_class, dim, class_separation, noise_sigma, spec):
    """Source mixture plus an independently sampled, shifted target mixture.

    Both domains come from the same class means; they use separate seed
    streams derived from ``seed``.
    """
    source = generate_gaussian_mixture(num_classes, samples_per_class, dim, class_separation,
                                       noise_sigma, derive_seed(seed, "task.source"))
    target = generate_gaussian_mixture(num_classes, samples_per_class, dim, class_separation,
                                       noise_sigma, derive_seed(seed, "task.target"))
    return source, apply_shift(target, spec)


# Three well separated 2-D classes (separation = 10 sigma) whose target is
# rotated by 80 degrees and translated. Between the class means, the
# cheapest balanced matching under the squared distance is a 3-cycle, so
# plain OT sends every target class to a wrong source class, while the
# labeled subset pins the right pairs.
CROSSING_FAMILY = {"num_classes": 3, "dim": 2, "class_separation": 5.0, "noise_sigma": 0.5,
                   "rotation": math.radians(80.0), "translation": (4.5, 2.5)}


def crossing_task(seed, samples_per_class=50):
    """One draw of the crossing-shift family described by ``CROSSING_FAMILY``."""
    f = CROSSING_FAMILY
    spec = ShiftSpec(f["dim"], f["rotation"], f["translation"])
    return make_task(seed, f["num_classes"], samples_per_class, f["dim"], f["class_separation"],
                     f["noise_sigma"], spec)


def labeled_subset_indices(labels, per_class, seed, num_classes=None):
    """Indices of ``per_class`` rows drawn uniformly without replacement per class.

    Returns ``(chosen, rest)``, both sorted ascending.
    """
    labels = np.asarray(labels)
    if per_class < 1:
        raise ParameterError("per_class must be >= 1")
    classes = np.unique(labels[labels != UNLABELED])
    if num_classes is not None:
        classes = np.arange(num_classes)
    rng = rng_for(seed, "dataset.labeled_subset")
    chosen = []
    for c in classes:
        idx = np.flatnonzero(labels == c)
        if len(idx) < per_class:
            raise ParameterError(f"class {c} has {len(idx)} samples, fewer than {per_class}")
        chosen.append(rng.choice(idx, size=per_class, replace=False))
    chosen = np.sort(np.concatenate(chosen)) if chosen else np.zeros(0, np.int64)
    rest = np.setdiff1d(np.arange(len(labels)), chosen)
    return chosen, rest


def select_labeled_subset(data, per_class, seed):
    """Split into a labeled subset (``per_class`` rows per class) and the rest.

    The remainder has its labels hidden. Both parts get renormalized mass.
    """
    chosen, rest = labeled_subset_indices(data.labels, per_class, seed, data.num_classes)
    return data.subset(chosen), data.subset(rest, hide_labels=True)


def save_csv(data, path):
    """Write ``f0..f{d-1},label,mass``; unlabeled rows leave ``label`` empty."""
    header = [f"f{k}" for k in range(data.dim)] + ["label", "mass"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row, lab, w in zip(data.features, data.labels, data.mass):
            writer.writerow(
                [repr(float(v)) for v in row]
                + ["" if lab == UNLABELED else str(int(lab)), repr(float(w))]
            )


def load_csv(path, num_classes=None):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError("file is empty", row=1) from None
        header = [h.strip() for h in header]
        feat_cols = [i for i, h in enumerate(header) if h.startswith("f")]
        expected = [f"f{k}" for k in range(len(feat_cols))]
        if [header[i] for i in feat_cols] != expected or not feat_cols:
            raise FormatError(f"feature columns must be named f0..f{{d-1}}, got {header}", row=1)
        unknown = set(header) - set(expected) - {"label", "mass"}
        if unknown:
            raise FormatError(f"unknown columns {sorted(unknown)}", row=1)
        label_col = header.index("label") if "label" in header else None
        mass_col = header.index("mass") if "mass" in header else None

        feats, labels, masses = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise FormatError(f"expected {len(header)} fields, got {len(row)}", row=lineno)
            try:
                feats.append([float(row[i]) for i in feat_cols])
            except ValueError as exc:
                raise FormatError(f"bad feature value ({exc})", row=lineno) from None
            lab = UNLABELED
            if label_col is not None and row[label_col].strip():
                text = row[label_col].strip()
                if not text.isdigit():
                    raise FormatError(f"label must be a nonnegative integer, got {text!r}", row=lineno)
                lab = int(text)
            labels.append(lab)
            if mass_col is not None:
                try:
                    w = float(row[mass_col])
                except ValueError:
                    raise FormatError(f"bad mass value {row[mass_col]!r}", row=lineno) from None
                if w < 0 or not math.isfinite(w):
                    raise FormatError(f"mass must be nonnegative, got {w}", row=lineno)
                masses.append(w)

    n = len(feats)
    if n == 0:
        raise FormatError("no data rows", row=2)
    labels = np.asarray(labels, dtype=np.int64)
    mass = np.asarray(masses) if mass_col is not None else uniform_mass(n)
    if num_classes is None:
        num_classes = int(labels.max()) + 1 if np.any(labels >= 0) else 0
    try:
        return LabeledDataset(np.asarray(feats), labels, mass, num_classes)
    except ParameterError as exc:
        raise FormatError(str(exc)) from None
