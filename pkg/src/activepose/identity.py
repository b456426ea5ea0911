"""Appearance models and stable detection-to-person matching."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels

DEFAULT_COST_THRESHOLD = 0.5
DEFAULT_L = 10


@dataclass(frozen=True, eq=False)
class AppearanceModel:
    person_id: int
    model_vector: np.ndarray


@dataclass
class Assignment:
    pairs: list[tuple[int, int, float]] = field(default_factory=list)  # (detection, person_id, cost)
    unmatched_detections: list[int] = field(default_factory=list)
    absent_persons: list[int] = field(default_factory=list)

    def detection_for(self, person_id: int) -> int | None:
        for j, pid, _ in self.pairs:
            if pid == person_id:
                return j
        return None

    @property
    def total_cost(self) -> float:
        return float(sum(c for _, _, c in self.pairs))

    def __str__(self) -> str:
        lines = [f"pair det={j} person={pid} cost={c:.6f}" for j, pid, c in self.pairs]
        lines += [f"unmatched det={j}" for j in self.unmatched_detections]
        lines += [f"absent person={pid}" for pid in self.absent_persons]
        return "\n".join(lines)


def build_appearance_model(samples, person_id: int) -> AppearanceModel:
    """Coordinate-wise median of L >= 1 instance features."""
    if len(samples) == 0:
        raise ValueError("appearance model needs at least one sample")
    dims = {np.shape(s) for s in samples}
    if len(dims) != 1:
        raise ValueError(f"mixed feature dimensions: {sorted(dims)}")
    return AppearanceModel(person_id, np.median(np.asarray(samples, dtype=np.float64), axis=0))


def matching_cost(feature, model) -> float:
    """Squared Euclidean distance between an instance feature and a model."""
    vec = model.model_vector if isinstance(model, AppearanceModel) else model
    d = np.asarray(feature, dtype=np.float64) - vec
    return float(d @ d)


def hungarian_assign(cost_matrix) -> tuple[np.ndarray, np.ndarray, float]:
    """Minimum-cost one-to-one assignment of a rectangular J x P cost matrix.

    Returns matched row indices, their columns, and the total cost. The
    smaller side is fully matched; the matrix is zero-padded to square.
    """
    cost = np.asarray(cost_matrix, dtype=np.float64)
    if cost.ndim != 2:
        raise ValueError("cost matrix must be 2-d")
    n_rows, n_cols = cost.shape
    if n_rows == 0 or n_cols == 0:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64), 0.0
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost matrix must be finite")
    n = max(n_rows, n_cols)
    square = np.zeros((n, n))
    square[:n_rows, :n_cols] = cost
    cols = kernels.hungarian(square)
    rows = np.arange(n)
    keep = (rows < n_rows) & (cols < n_cols)
    rows, cols = rows[keep], cols[keep]
    return rows, cols, float(cost[rows, cols].sum())


def match_detections(detections, models, cost_threshold: float = DEFAULT_COST_THRESHOLD) -> Assignment:
    """Hungarian matching of detections to appearance models with absence threshold."""
    if cost_threshold <= 0:
        raise ValueError("cost threshold must be positive")
    out = Assignment()
    if not detections or not models:
        out.unmatched_detections = list(range(len(detections)))
        out.absent_persons = [m.person_id for m in models]
        return out
    feats = np.stack([d.instance_feature for d in detections])
    vecs = np.stack([m.model_vector for m in models])
    diff = feats[:, None, :] - vecs[None, :, :]
    cost = np.einsum("jlk,jlk->jl", diff, diff)
    rows, cols, _ = hungarian_assign(cost)
    matched_dets, present = set(), set()
    for j, l in zip(rows.tolist(), cols.tolist()):
        c = float(cost[j, l])
        if c > cost_threshold:
            continue
        out.pairs.append((j, models[l].person_id, c))
        matched_dets.add(j)
        present.add(l)
    out.pairs.sort()
    out.unmatched_detections = [j for j in range(len(detections)) if j not in matched_dets]
    out.absent_persons = [m.person_id for l, m in enumerate(models) if l not in present]
    return out
