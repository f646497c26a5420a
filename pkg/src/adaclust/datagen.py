"""Synthetic multi-domain data.

A domain universe is parameterized by a :class:`MotherDistribution`: every
domain is a rotation (in the first coordinate plane) plus a mean shift of a
shared set of Gaussian class blobs. Training data is aggregated across
domains with the domain ids held in an evaluation-only channel that the
learner cannot read.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .rng import Stream, derive

TEST_DRAW_BASE = 1 << 32
PRETRAIN_DRAW_BASE = 1 << 33


class _TrainingGuard:
    """Tracks whether a training section is currently executing."""

    def __init__(self):
        self.depth = 0

    @property
    def active(self) -> bool:
        return self.depth > 0

    def __enter__(self):
        self.depth += 1
        return self

    def __exit__(self, *exc):
        self.depth -= 1
        return False


training_guard = _TrainingGuard()


def _unit_rows(matrix: np.ndarray) -> np.ndarray:
    norms = np.sqrt((matrix**2).sum(axis=1, keepdims=True))
    return matrix / norms


@dataclass(frozen=True)
class MotherDistribution:
    """Distribution over domains: shared class blobs, per-domain pose.

    ``class_prototypes`` is derived from ``seed`` when not given: unit
    directions scaled by ``prototype_scale``.
    """

    num_classes: int = 4
    d_raw: int = 16
    theta_range: tuple[float, float] = (0.0, 2.0 * math.pi)
    shift_scale: float = 0.5
    noise_scale: float = 0.15
    prototype_scale: float = 2.0
    seed: int = 0
    class_prototypes: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.num_classes < 1:
            raise ValueError("num_classes must be positive")
        if self.d_raw < 2:
            raise ValueError("d_raw must be at least 2 (rotation plane)")
        if self.noise_scale <= 0:
            raise ValueError("noise_scale must be positive")
        if self.shift_scale < 0:
            raise ValueError("shift_scale must be non-negative")
        lo, hi = self.theta_range
        if not (0.0 <= lo <= hi <= 2.0 * math.pi):
            raise ValueError("theta_range must satisfy 0 <= lo <= hi <= 2*pi")
        if self.class_prototypes is None:
            stream = Stream(derive(self.seed, "prototypes"))
            directions = _unit_rows(stream.normal_matrix(self.num_classes, self.d_raw))
            object.__setattr__(
                self, "class_prototypes", self.prototype_scale * directions
            )
        protos = np.asarray(self.class_prototypes, dtype=np.float64)
        if protos.shape != (self.num_classes, self.d_raw):
            raise ValueError("class_prototypes shape mismatch")
        diffs = protos[:, None, :] - protos[None, :, :]
        dist = np.sqrt((diffs**2).sum(axis=2))
        np.fill_diagonal(dist, np.inf)
        if dist.min() <= 0:
            raise ValueError("class prototypes must be pairwise distinct")
        object.__setattr__(self, "class_prototypes", protos)

    def with_seed(self, seed: int) -> "MotherDistribution":
        return replace(self, seed=seed, class_prototypes=None)


@dataclass(frozen=True)
class DomainSpec:
    domain_id: int
    theta: float
    shift: np.ndarray
    noise_scale: float


def sample_domain(mother: MotherDistribution, draw_index: int) -> DomainSpec:
    """Domain at position ``draw_index`` of the universe: pure in (seed, index)."""
    stream = Stream(derive(mother.seed, "domain", draw_index))
    lo, hi = mother.theta_range
    theta = lo + (hi - lo) * stream.uniform()
    shift = mother.shift_scale * stream.normals(mother.d_raw)
    return DomainSpec(
        domain_id=draw_index,
        theta=theta,
        shift=shift,
        noise_scale=mother.noise_scale,
    )


def rotate_plane(points: np.ndarray, theta: float) -> np.ndarray:
    """Rotate rows by ``theta`` in the (0, 1) coordinate plane."""
    out = np.array(points, dtype=np.float64, copy=True)
    c, s = math.cos(theta), math.sin(theta)
    x0 = out[..., 0].copy()
    x1 = out[..., 1].copy()
    out[..., 0] = c * x0 - s * x1
    out[..., 1] = s * x0 + c * x1
    return out


def domain_points(mother: MotherDistribution, spec: DomainSpec, n: int):
    """``n`` labeled points from one domain, balanced over classes.

    Row ``i`` has label ``i mod num_classes``; the point is the rotated
    (prototype + isotropic noise) plus the domain shift.
    """
    if n < 1:
        raise ValueError("points per domain must be >= 1")
    labels = np.arange(n, dtype=np.int64) % mother.num_classes
    stream = Stream(derive(mother.seed, "points", spec.domain_id))
    noise = spec.noise_scale * stream.normal_matrix(n, mother.d_raw)
    raw = mother.class_prototypes[labels] + noise
    X = rotate_plane(raw, spec.theta) + spec.shift
    return X, labels


def nearest_prototype_labels(
    mother: MotherDistribution, spec: DomainSpec, X: np.ndarray
) -> np.ndarray:
    """Classify rows by nearest rotated-and-shifted prototype (sanity oracle)."""
    anchors = rotate_plane(mother.class_prototypes, spec.theta) + spec.shift
    d2 = ((X[:, None, :] - anchors[None, :, :]) ** 2).sum(axis=2)
    return np.argmin(d2, axis=1).astype(np.int64)


@dataclass(frozen=True)
class LearnerView:
    """What training code is allowed to see: features and (train only) labels."""

    X: np.ndarray
    y: np.ndarray | None

    @property
    def M(self) -> int:
        return self.X.shape[0]


class AggregatedDataset:
    """Pooled multi-domain sample with an evaluation-only domain channel.

    ``learner_view()`` exposes features and labels only. Domain ids (and
    test-set labels) are reachable solely through the ``eval_*`` accessors,
    which count any access made while a training section is active.
    """

    def __init__(self, X, labels, domains, n: int, N: int, kind: str = "train"):
        self.X = np.asarray(X, dtype=np.float64)
        self._labels = np.asarray(labels, dtype=np.int64)
        self._domains = np.asarray(domains, dtype=np.int64)
        self.n = int(n)
        self.N = int(N)
        if kind not in ("train", "test"):
            raise ValueError("kind must be 'train' or 'test'")
        self.kind = kind
        self.training_reads = 0
        if self.X.shape[0] != self._labels.shape[0] != self._domains.shape[0]:
            raise ValueError("row count mismatch")

    @property
    def M(self) -> int:
        return self.X.shape[0]

    def learner_view(self) -> LearnerView:
        if self.kind == "test":
            return LearnerView(X=self.X, y=None)
        return LearnerView(X=self.X, y=self._labels)

    def _audit(self):
        if training_guard.active:
            self.training_reads += 1

    def eval_domains(self) -> np.ndarray:
        self._audit()
        return self._domains.copy()

    def eval_labels(self) -> np.ndarray:
        self._audit()
        return self._labels.copy()

    def subset(self, mask: np.ndarray, kind: str | None = None) -> "AggregatedDataset":
        dom = self._domains[mask]
        n_dom = len(np.unique(dom)) if dom.size else 0
        return AggregatedDataset(
            self.X[mask],
            self._labels[mask],
            dom,
            n=int(mask.sum()) // max(n_dom, 1),
            N=n_dom,
            kind=kind or self.kind,
        )


def sample_training_set(mother: MotherDistribution, N: int, n: int) -> AggregatedDataset:
    """Aggregate of ``N`` fresh domains with ``n`` points each."""
    if N < 1 or n < 1:
        raise ValueError("N and n must be >= 1")
    xs, ys, ds = [], [], []
    for i in range(N):
        spec = sample_domain(mother, i)
        X, y = domain_points(mother, spec, n)
        xs.append(X)
        ys.append(y)
        ds.append(np.full(n, spec.domain_id, dtype=np.int64))
    return AggregatedDataset(
        np.vstack(xs), np.concatenate(ys), np.concatenate(ds), n=n, N=N, kind="train"
    )


def sample_test_domain(
    mother: MotherDistribution, n_T: int, test_index: int = 0
) -> AggregatedDataset:
    """A fresh held-out domain; labels live in the evaluation channel."""
    if n_T < 1:
        raise ValueError("n_T must be >= 1")
    spec = sample_domain(mother, TEST_DRAW_BASE + test_index)
    X, y = domain_points(mother, spec, n_T)
    return AggregatedDataset(
        X, y, np.full(n_T, spec.domain_id, dtype=np.int64), n=n_T, N=1, kind="test"
    )


def mother_to_dict(mother: MotherDistribution) -> dict:
    return {
        "num_classes": mother.num_classes,
        "d_raw": mother.d_raw,
        "theta_range": [mother.theta_range[0], mother.theta_range[1]],
        "shift_scale": mother.shift_scale,
        "noise_scale": mother.noise_scale,
        "prototype_scale": mother.prototype_scale,
        "seed": mother.seed,
    }


def mother_from_dict(payload: dict) -> MotherDistribution:
    return MotherDistribution(
        num_classes=int(payload["num_classes"]),
        d_raw=int(payload["d_raw"]),
        theta_range=(float(payload["theta_range"][0]), float(payload["theta_range"][1])),
        shift_scale=float(payload["shift_scale"]),
        noise_scale=float(payload["noise_scale"]),
        prototype_scale=float(payload["prototype_scale"]),
        seed=int(payload["seed"]),
    )


def write_csv(dataset: AggregatedDataset, path, with_domains: bool = False) -> None:
    """Write rows in generation order: x0..x{d-1},label[,domain]."""
    d = dataset.X.shape[1]
    header = [f"x{j}" for j in range(d)] + ["label"]
    if with_domains:
        header.append("domain")
    labels = dataset._labels
    domains = dataset._domains
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(dataset.M):
            row = [repr(float(v)) for v in dataset.X[i]]
            row.append(str(int(labels[i])))
            if with_domains:
                row.append(str(int(domains[i])))
            writer.writerow(row)


def read_csv(path) -> AggregatedDataset:
    """Read a dataset written by :func:`write_csv`."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = list(reader)
    if not rows:
        raise ValueError("empty dataset file")
    has_domains = header[-1] == "domain"
    d = len(header) - (2 if has_domains else 1)
    if header[:d] != [f"x{j}" for j in range(d)] or header[d] != "label":
        raise ValueError("unrecognized dataset header")
    X = np.array([[float(v) for v in row[:d]] for row in rows])
    y = np.array([int(row[d]) for row in rows], dtype=np.int64)
    if has_domains:
        domains = np.array([int(row[d + 1]) for row in rows], dtype=np.int64)
    else:
        domains = np.zeros(len(rows), dtype=np.int64)
    uniq = np.unique(domains)
    N = len(uniq)
    return AggregatedDataset(X, y, domains, n=len(rows) // N, N=N, kind="train")
