"""Per-joint median pose fusion and reconstruction error."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEFAULT_E_MISS = 500.0  # mm/joint charged for a person never estimated


@dataclass(frozen=True, eq=False)
class FusedEstimate:
    pose: np.ndarray  # (15, 3)
    contributing_views: tuple[int, ...] = field(default=())
    used_temporal_prior: bool = False


def fuse(prior, estimates) -> np.ndarray:
    """Coordinate-wise median over the prior (one vote, if given) and estimates."""
    inputs = list(estimates)
    if prior is not None:
        inputs.append(prior)
    if not inputs:
        raise ValueError("nothing to fuse")
    if len(inputs) == 1:
        return np.array(inputs[0], dtype=np.float64)
    return np.median(np.asarray(inputs, dtype=np.float64), axis=0)


def reconstruction_error(estimate, ground_truth) -> float:
    """Mean per-joint position error (MPJPE), mm."""
    d = np.asarray(estimate, dtype=np.float64) - np.asarray(ground_truth, dtype=np.float64)
    return float(np.sqrt(np.sum(d * d, axis=-1)).mean())


def multi_target_error(estimates, scene, t: int, e_miss: float = DEFAULT_E_MISS) -> float:
    """Person-averaged MPJPE; persons without an estimate cost ``e_miss``.

    ``estimates`` maps person index to a FusedEstimate, pose array or None.
    """
    errs, seen = [], 0
    for k in range(len(scene.persons)):
        est = estimates.get(k)
        if est is None:
            errs.append(e_miss)
            continue
        seen += 1
        pose = est.pose if isinstance(est, FusedEstimate) else est
        errs.append(reconstruction_error(pose, scene.pose(k, t)))
    if seen == 0:
        raise ValueError("no person has an estimate")
    return float(np.mean(errs))
