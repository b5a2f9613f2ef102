"""One-class anomaly workers.

Training pipeline: drop zero-variance features, z-score the rest, project
onto the principal components retained by the Kaiser rule (eigenvalues of
the correlation matrix above 1), cluster with the Manhattan-metric bisecting
search, and set each cluster's boundary at the 97.5th percentile of training
distances to its head. An optional first-order transition machine flags
in-boundary observations whose cluster transition was never seen in the
time-ordered training sequence.

Prediction is pure: ``predict(vector, prev_state)`` returns a verdict and
the next stream state, advancing state only on in-boundary observations.
Dispersion workers reuse the same machinery on raw 4-epoch entropy windows,
skipping PCA and keeping constant features (centered, unit scale) so an
always-quiet header trains to a zero-radius cluster at the origin.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from enum import Enum
from math import comb
from typing import Sequence

import numpy as np
from scipy.spatial.distance import cdist

from .errors import (
    DegenerateDataError,
    EmptyError,
    InsufficientDataError,
    LayoutMismatchError,
)
from .xmeans import xmeans

MODEL_FORMAT_VERSION = 1


def percentile_boundary(distances: Sequence[float], p: float = 97.5) -> float:
    """Linear-interpolation percentile of the given distances.

    Sorted-order interpolation on fractional rank h = (n-1) * p / 100, the
    common default definition, continuous in the data.
    """
    if len(distances) == 0:
        raise EmptyError("percentile of an empty sample")
    if not 0.0 < p < 100.0:
        raise ValueError("percentile must be inside (0, 100)")
    xs = np.sort(np.asarray(distances, dtype=float))
    h = (len(xs) - 1) * p / 100.0
    lo = int(np.floor(h))
    hi = min(lo + 1, len(xs) - 1)
    return float(xs[lo] + (h - lo) * (xs[hi] - xs[lo]))


@dataclass(frozen=True)
class NormalizationStats:
    mean: np.ndarray
    std: np.ndarray
    kept: np.ndarray  # indices of retained input features
    n_features_in: int

    def transform(self, x: np.ndarray) -> np.ndarray:
        return (x[..., self.kept] - self.mean) / self.std


@dataclass(frozen=True)
class PcaBasis:
    components: np.ndarray  # (k, d) orthonormal rows
    eigenvalues: np.ndarray  # all d, descending
    retained: int

    @property
    def coverage(self) -> float:
        total = float(self.eigenvalues.sum())
        if total <= 0:
            return 1.0
        return float(self.eigenvalues[: self.retained].sum()) / total

    def project(self, z: np.ndarray) -> np.ndarray:
        return z @ self.components.T


@dataclass(frozen=True)
class ClusterModel:
    heads: np.ndarray  # (k, m)
    radii: np.ndarray  # (k,)

    def assign(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        d = cdist(np.atleast_2d(points), self.heads, metric="cityblock")
        labels = np.argmin(d, axis=1)
        return labels, d[np.arange(len(labels)), labels]


@dataclass(frozen=True)
class TransitionMachine:
    allowed: frozenset[tuple[int, int]]

    def permits(self, prev: int | None, cur: int) -> bool:
        if prev is None:
            return True
        return (prev, cur) in self.allowed


class DetectorMode(str, Enum):
    BOUNDARY_ONLY = "boundary_only"
    BOUNDARY_PLUS_STATE_MACHINE = "boundary_plus_state_machine"


class Reason(str, Enum):
    NONE = "none"
    OUTSIDE_BOUNDARY = "outside_boundary"
    ILLEGAL_TRANSITION = "illegal_transition"


@dataclass(frozen=True)
class Verdict:
    anomalous: bool
    reason: Reason
    cluster_id: int
    distance: float
    ready: bool = True


@dataclass
class TrainConfig:
    min_train_rows: int = 1000
    boundary_percentile: float = 97.5
    detector_mode: DetectorMode = DetectorMode.BOUNDARY_ONLY
    k_min: int = 1
    k_max: int = 64
    use_pca: bool = True

    @staticmethod
    def small(**overrides) -> "TrainConfig":
        """Config for compact training sets (tests, calibration phases)."""
        cfg = TrainConfig(min_train_rows=8)
        for k, v in overrides.items():
            setattr(cfg, k, v)
        return cfg


_BOUNDARY_SLACK = 1e-9  # keeps the centroid itself inside a zero radius


@dataclass
class WorkerModel:
    norm: NormalizationStats
    pca: PcaBasis | None
    clusters: ClusterModel
    machine: TransitionMachine | None
    detector_mode: DetectorMode
    n_features_in: int
    trained_rows: int
    train_seconds: float = 0.0

    # -- scoring ----------------------------------------------------------

    def _embed(self, vector: np.ndarray) -> np.ndarray:
        z = self.norm.transform(vector)
        return self.pca.project(z) if self.pca is not None else z

    def predict(self, vector: Sequence[float], prev_state: int | None = None
                ) -> tuple[Verdict, int | None]:
        """Score one observation; returns (verdict, next stream state)."""
        x = np.asarray(vector, dtype=float)
        if x.shape != (self.n_features_in,):
            raise LayoutMismatchError(
                f"expected {self.n_features_in} features, got {x.shape}")
        point = self._embed(x)
        labels, dists = self.clusters.assign(point)
        cluster = int(labels[0])
        distance = float(dists[0])
        if distance > float(self.clusters.radii[cluster]) + _BOUNDARY_SLACK:
            return Verdict(True, Reason.OUTSIDE_BOUNDARY, cluster, distance), prev_state
        if (self.detector_mode is DetectorMode.BOUNDARY_PLUS_STATE_MACHINE
                and self.machine is not None
                and not self.machine.permits(prev_state, cluster)):
            return Verdict(True, Reason.ILLEGAL_TRANSITION, cluster, distance), cluster
        return Verdict(False, Reason.NONE, cluster, distance), cluster

    def predict_batch(self, matrix: np.ndarray) -> np.ndarray:
        """Boundary-only anomaly mask for a matrix of observations."""
        x = np.asarray(matrix, dtype=float)
        if x.shape[1] != self.n_features_in:
            raise LayoutMismatchError(
                f"expected {self.n_features_in} features, got {x.shape[1]}")
        points = self._embed(x)
        labels, dists = self.clusters.assign(points)
        return dists > self.clusters.radii[labels] + _BOUNDARY_SLACK

    def summary(self) -> dict:
        return {
            "features": self.n_features_in,
            "pca_components": self.pca.retained if self.pca else None,
            "coverage_pct": round(self.pca.coverage * 100.0, 2) if self.pca else None,
            "clusters": int(self.clusters.heads.shape[0]),
            "trained_rows": self.trained_rows,
            "train_seconds": round(self.train_seconds, 4),
            "size_bytes": len(self.to_json().encode()),
        }

    # -- serialization -----------------------------------------------------

    def to_json(self) -> str:
        # Wall time is reported in summaries but kept out of the blob so
        # model files are bit-identical across runs of the same seed.
        doc = {
            "version": MODEL_FORMAT_VERSION,
            "detector_mode": self.detector_mode.value,
            "n_features_in": self.n_features_in,
            "trained_rows": self.trained_rows,
            "norm": {
                "mean": self.norm.mean.tolist(),
                "std": self.norm.std.tolist(),
                "kept": self.norm.kept.tolist(),
                "n_features_in": self.norm.n_features_in,
            },
            "pca": None if self.pca is None else {
                "components": self.pca.components.tolist(),
                "eigenvalues": self.pca.eigenvalues.tolist(),
                "retained": self.pca.retained,
            },
            "clusters": {
                "heads": self.clusters.heads.tolist(),
                "radii": self.clusters.radii.tolist(),
            },
            "transitions": (sorted(self.machine.allowed)
                            if self.machine is not None else None),
        }
        return json.dumps(doc)

    @staticmethod
    def from_json(text: str) -> "WorkerModel":
        doc = json.loads(text)
        if doc.get("version") != MODEL_FORMAT_VERSION:
            raise ValueError(f"unsupported model version {doc.get('version')}")
        norm = NormalizationStats(
            mean=np.array(doc["norm"]["mean"], dtype=float),
            std=np.array(doc["norm"]["std"], dtype=float),
            kept=np.array(doc["norm"]["kept"], dtype=int),
            n_features_in=doc["norm"]["n_features_in"])
        pca = None
        if doc["pca"] is not None:
            pca = PcaBasis(
                components=np.array(doc["pca"]["components"], dtype=float),
                eigenvalues=np.array(doc["pca"]["eigenvalues"], dtype=float),
                retained=doc["pca"]["retained"])
        clusters = ClusterModel(
            heads=np.array(doc["clusters"]["heads"], dtype=float),
            radii=np.array(doc["clusters"]["radii"], dtype=float))
        machine = None
        if doc["transitions"] is not None:
            machine = TransitionMachine(
                frozenset((int(a), int(b)) for a, b in doc["transitions"]))
        return WorkerModel(
            norm=norm, pca=pca, clusters=clusters, machine=machine,
            detector_mode=DetectorMode(doc["detector_mode"]),
            n_features_in=doc["n_features_in"],
            trained_rows=doc["trained_rows"])


def _fit_norm(matrix: np.ndarray, drop_constant: bool) -> NormalizationStats:
    mean = matrix.mean(axis=0)
    std = matrix.std(axis=0)
    if drop_constant:
        kept = np.flatnonzero(std > 0.0)
        if len(kept) == 0:
            raise DegenerateDataError("every feature is constant")
        return NormalizationStats(mean[kept], std[kept], kept, matrix.shape[1])
    kept = np.arange(matrix.shape[1])
    safe_std = np.where(std > 0.0, std, 1.0)
    return NormalizationStats(mean, safe_std, kept, matrix.shape[1])


def _fit_pca(z: np.ndarray) -> PcaBasis:
    corr = np.cov(z, rowvar=False, bias=True)
    corr = np.atleast_2d(corr)
    eigvals, eigvecs = np.linalg.eigh(corr)
    order = np.argsort(eigvals)[::-1]
    eigvals = eigvals[order]
    eigvecs = eigvecs[:, order]
    retained = int(np.sum(eigvals > 1.0))
    # A training set with no dominant direction still needs one usable axis.
    retained = max(retained, 1)
    return PcaBasis(components=eigvecs[:, :retained].T.copy(),
                    eigenvalues=eigvals.copy(), retained=retained)


def _fit_boundaries(points: np.ndarray, labels: np.ndarray, heads: np.ndarray,
                    percentile: float) -> np.ndarray:
    dists = cdist(points, heads, metric="cityblock")
    own = dists[np.arange(len(points)), labels]
    radii = np.zeros(heads.shape[0])
    for j in range(heads.shape[0]):
        member = own[labels == j]
        radii[j] = percentile_boundary(member, percentile) if len(member) else 0.0
    return radii


def _fit_machine(points: np.ndarray, labels: np.ndarray,
                 clusters: ClusterModel) -> TransitionMachine:
    """First-order transitions from the time-ordered training sequence.

    Stream state only advances on in-boundary points, matching how state is
    advanced at prediction time.
    """
    _, dists = clusters.assign(points)
    allowed: set[tuple[int, int]] = set()
    prev: int | None = None
    for lab, dist in zip(labels, dists):
        if dist > float(clusters.radii[lab]) + _BOUNDARY_SLACK:
            continue
        if prev is not None:
            allowed.add((prev, int(lab)))
        prev = int(lab)
    return TransitionMachine(frozenset(allowed))


def train(matrix: np.ndarray, cfg: TrainConfig | None = None, seed: int = 0
          ) -> WorkerModel:
    """Fit a volumetric worker on a time-ordered matrix of benign rows."""
    cfg = cfg or TrainConfig()
    x = np.asarray(matrix, dtype=float)
    if x.ndim != 2:
        raise ValueError("training matrix must be 2-D")
    if len(x) < cfg.min_train_rows:
        raise InsufficientDataError(
            f"{len(x)} rows < required {cfg.min_train_rows}")
    if np.all(x == x[0]):
        raise DegenerateDataError("all training rows are identical")

    started = time.perf_counter()
    norm = _fit_norm(x, drop_constant=True)
    z = norm.transform(x)
    pca = _fit_pca(z) if cfg.use_pca else None
    points = pca.project(z) if pca is not None else z
    result = xmeans(points, seed=seed, k_min=cfg.k_min, k_max=cfg.k_max)
    radii = _fit_boundaries(points, result.labels, result.heads,
                            cfg.boundary_percentile)
    clusters = ClusterModel(result.heads, radii)
    machine = None
    if cfg.detector_mode is DetectorMode.BOUNDARY_PLUS_STATE_MACHINE:
        machine = _fit_machine(points, result.labels, clusters)
    return WorkerModel(
        norm=norm, pca=pca, clusters=clusters, machine=machine,
        detector_mode=cfg.detector_mode, n_features_in=x.shape[1],
        trained_rows=len(x), train_seconds=time.perf_counter() - started)


def train_dispersion(matrix: np.ndarray, cfg: TrainConfig | None = None,
                     seed: int = 0) -> WorkerModel:
    """Fit a dispersion worker on 4-epoch entropy windows (no PCA stage).

    Constant features are kept at unit scale instead of dropped: a header
    whose benign entropy is always zero must train to a zero-radius cluster
    so any positive entropy window is flagged.
    """
    cfg = cfg or TrainConfig.small()
    x = np.asarray(matrix, dtype=float)
    if x.ndim != 2 or x.shape[1] != 4:
        raise ValueError("dispersion training expects 4-epoch windows")
    if len(x) < cfg.min_train_rows:
        raise InsufficientDataError(
            f"{len(x)} rows < required {cfg.min_train_rows}")

    started = time.perf_counter()
    norm = _fit_norm(x, drop_constant=False)
    z = norm.transform(x)
    result = xmeans(z, seed=seed, k_min=cfg.k_min, k_max=cfg.k_max)
    radii = _fit_boundaries(z, result.labels, result.heads,
                            cfg.boundary_percentile)
    clusters = ClusterModel(result.heads, radii)
    machine = None
    if cfg.detector_mode is DetectorMode.BOUNDARY_PLUS_STATE_MACHINE:
        machine = _fit_machine(z, result.labels, clusters)
    return WorkerModel(
        norm=norm, pca=None, clusters=clusters, machine=machine,
        detector_mode=cfg.detector_mode, n_features_in=4,
        trained_rows=len(x), train_seconds=time.perf_counter() - started)


def rand_index(assignment_a: Sequence, assignment_b: Sequence) -> float:
    """Pairwise-agreement similarity of two labelings over the same points."""
    if len(assignment_a) != len(assignment_b):
        raise ValueError("labelings must cover the same points")
    n = len(assignment_a)
    if n < 2:
        raise ValueError("need at least two points")
    from collections import Counter

    pairs = comb(n, 2)
    joint = Counter(zip(assignment_a, assignment_b))
    a_sizes = Counter(assignment_a)
    b_sizes = Counter(assignment_b)
    both_same = sum(comb(c, 2) for c in joint.values())
    a_same = sum(comb(c, 2) for c in a_sizes.values())
    b_same = sum(comb(c, 2) for c in b_sizes.values())
    return (pairs + 2 * both_same - a_same - b_same) / pairs
