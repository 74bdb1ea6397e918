"""Trajectory labeling: endpoint features, angular cosine distance, a
single-pass QuickBundles clustering, and elbow-based threshold selection.

The distance between two endpoint vectors is the angle between them, taken
through arccos of the clamped cosine similarity and scaled by 1/pi so it
lands in [0, 1]. A literal variant that wraps the similarity ratio in an
extra cosine is kept for comparison runs.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import (DegenerateCurve, DimensionMismatch, EmptyInput,
                     LengthMismatch, NonFiniteInput, OutOfRange, ZeroVector)
from .gaf import FeatureMatrix


def endpoint_feature(matrix: FeatureMatrix) -> np.ndarray:
    """Feature vector at the final timestep."""
    return matrix.values[-1].copy()


def cosine_distance(a, b, literal_form=False) -> float:
    """Angle between vectors scaled to [0, 1]; 0 parallel, 1 opposite."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise DimensionMismatch(f"need matching 1-D vectors, got {a.shape} and {b.shape}")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise NonFiniteInput("endpoint vectors must be finite")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ZeroVector("cosine distance undefined for zero-norm vectors")
    sim = np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0)
    if literal_form:
        sim = np.cos(sim)
    return float(np.arccos(sim) / np.pi)


@dataclass
class ClusterModel:
    threshold: float
    centroids: list
    counts: list
    assignments: np.ndarray
    decision_log: list = field(default_factory=list)

    @property
    def n_clusters(self):
        return len(self.centroids)


def quick_bundles(features, threshold, literal_form=False) -> ClusterModel:
    """One sequential pass: join the nearest centroid within the threshold,
    otherwise start a new cluster. Centroids are running means. Exact
    distance ties go to the lowest cluster id.
    """
    features = [np.asarray(f, dtype=np.float64) for f in features]
    if not features:
        raise EmptyInput("no feature vectors to cluster")
    if threshold < 0.0:
        raise OutOfRange(f"threshold must be non-negative, got {threshold}")
    centroids = []
    counts = []
    assignments = np.empty(len(features), dtype=np.int64)
    log = []
    for i, f in enumerate(features):
        best_id = -1
        best_d = np.inf
        for cid, centroid in enumerate(centroids):
            d = cosine_distance(f, centroid, literal_form=literal_form)
            if d < best_d:
                best_d = d
                best_id = cid
        if best_id >= 0 and best_d <= threshold:
            counts[best_id] += 1
            centroids[best_id] += (f - centroids[best_id]) / counts[best_id]
            assignments[i] = best_id
            log.append(("join", i, best_id, best_d))
        else:
            centroids.append(f.copy())
            counts.append(1)
            assignments[i] = len(centroids) - 1
            log.append(("new", i, len(centroids) - 1, best_d))
    return ClusterModel(threshold=float(threshold), centroids=centroids,
                        counts=counts, assignments=assignments, decision_log=log)


DEFAULT_THETA_GRID = np.round(np.arange(0.02, 0.50001, 0.02), 10)


def cluster_counts(features, thetas=None, literal_form=False) -> np.ndarray:
    thetas = DEFAULT_THETA_GRID if thetas is None else np.asarray(thetas, dtype=np.float64)
    return np.array([quick_bundles(features, t, literal_form=literal_form).n_clusters
                     for t in thetas], dtype=np.int64)


def elbow_threshold(thetas, counts):
    """Pick the interior grid point with the largest discrete curvature of
    the cluster-count curve; ties go to the smallest threshold. A curve with
    no strictly positive curvature anywhere carries no elbow information:
    warn and fall back to the smallest threshold.
    """
    thetas = np.asarray(thetas, dtype=np.float64)
    counts = np.asarray(counts, dtype=np.float64)
    if thetas.shape != counts.shape:
        raise LengthMismatch(f"{thetas.size} thresholds but {counts.size} counts")
    if thetas.size < 3:
        raise LengthMismatch(f"need at least 3 grid points, got {thetas.size}")
    curvature = counts[2:] - 2.0 * counts[1:-1] + counts[:-2]
    best = float(np.max(curvature))
    if best <= 0.0:
        warnings.warn("cluster-count curve has no elbow; falling back to the "
                      "smallest threshold", DegenerateCurve, stacklevel=2)
        return float(thetas[0])
    return float(thetas[1 + int(np.argmax(curvature))])


def renumber_by_size(assignments) -> np.ndarray:
    """Relabel clusters so that class 0 is the largest, breaking count ties
    by the original cluster id."""
    assignments = np.asarray(assignments, dtype=np.int64)
    ids, counts = np.unique(assignments, return_counts=True)
    order = sorted(range(len(ids)), key=lambda i: (-counts[i], ids[i]))
    mapping = {int(ids[i]): rank for rank, i in enumerate(order)}
    return np.array([mapping[int(a)] for a in assignments], dtype=np.int64)


@dataclass
class LabelingResult:
    threshold: float
    thetas: np.ndarray
    counts: np.ndarray
    model: ClusterModel
    labels: np.ndarray

    def summary(self):
        ids, sizes = np.unique(self.labels, return_counts=True)
        return {int(i): int(s) for i, s in zip(ids, sizes)}


def label_dataset(matrices, thetas=None, threshold=None, literal_form=False) -> LabelingResult:
    """Endpoint clustering across a dataset; picks the threshold by elbow
    unless one is given, then renumbers labels largest-cluster-first."""
    features = [endpoint_feature(m) for m in matrices]
    thetas = DEFAULT_THETA_GRID if thetas is None else np.asarray(thetas, dtype=np.float64)
    counts = cluster_counts(features, thetas, literal_form=literal_form)
    if threshold is None:
        threshold = elbow_threshold(thetas, counts)
    model = quick_bundles(features, threshold, literal_form=literal_form)
    labels = renumber_by_size(model.assignments)
    return LabelingResult(threshold=float(threshold), thetas=np.asarray(thetas, dtype=np.float64),
                          counts=counts, model=model, labels=labels)


def best_label_agreement(labels_a, labels_b) -> float:
    """Largest fraction of samples on which two labelings agree under the
    best one-to-one relabeling (Hungarian matching on the contingency table)."""
    from scipy.optimize import linear_sum_assignment

    labels_a = np.asarray(labels_a, dtype=np.int64)
    labels_b = np.asarray(labels_b, dtype=np.int64)
    if labels_a.shape != labels_b.shape:
        raise LengthMismatch(f"{labels_a.size} labels vs {labels_b.size}")
    k = int(max(labels_a.max(), labels_b.max())) + 1
    table = np.zeros((k, k), dtype=np.int64)
    np.add.at(table, (labels_a, labels_b), 1)
    rows, cols = linear_sum_assignment(-table)
    return float(table[rows, cols].sum()) / labels_a.size
