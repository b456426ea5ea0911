"""Hot numeric kernels with a numba path and a pure-numpy fallback.

Every kernel exists twice: ``*_numba`` (explicit loops compiled with
``@njit``) and ``*_numpy`` (vectorized numpy). The public name points at the
numba version unless ``ACTIVEPOSE_NO_NUMBA`` is set to a truthy value, or numba
is not importable. Both paths return identical results on the same inputs.
"""

from __future__ import annotations

import os

import numpy as np

_FLAG = os.environ.get("ACTIVEPOSE_NO_NUMBA", "").strip().lower()

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and _FLAG in ("", "0", "false", "no")

_EPS = 1e-12


def _jit(fn):
    if not HAVE_NUMBA:
        return fn
    return njit(cache=True, nogil=True)(fn)


# ---------------------------------------------------------------------------
# occlusion: joint-to-camera segments against spheres and other bodies
# ---------------------------------------------------------------------------


def _blocked_loops(joints, cam, cap_a, cap_b, cap_r, spheres):
    n_persons, n_joints, _ = joints.shape
    out = np.zeros((n_persons, n_joints), dtype=np.bool_)
    for p in range(n_persons):
        for j in range(n_joints):
            px = joints[p, j, 0]
            py = joints[p, j, 1]
            pz = joints[p, j, 2]
            dx = cam[0] - px
            dy = cam[1] - py
            dz = cam[2] - pz
            a = dx * dx + dy * dy + dz * dz
            hit = False
            for s in range(spheres.shape[0]):
                cx = spheres[s, 0] - px
                cy = spheres[s, 1] - py
                cz = spheres[s, 2] - pz
                t = (cx * dx + cy * dy + cz * dz) / a if a > _EPS else 0.0
                t = min(max(t, 0.0), 1.0)
                ex = px + t * dx - spheres[s, 0]
                ey = py + t * dy - spheres[s, 1]
                ez = pz + t * dz - spheres[s, 2]
                if ex * ex + ey * ey + ez * ez < spheres[s, 3] * spheres[s, 3]:
                    hit = True
                    break
            if not hit:
                for q in range(cap_a.shape[0]):
                    if q == p:
                        continue
                    ux = cap_b[q, 0] - cap_a[q, 0]
                    uy = cap_b[q, 1] - cap_a[q, 1]
                    uz = cap_b[q, 2] - cap_a[q, 2]
                    rx = px - cap_a[q, 0]
                    ry = py - cap_a[q, 1]
                    rz = pz - cap_a[q, 2]
                    e = ux * ux + uy * uy + uz * uz
                    f = ux * rx + uy * ry + uz * rz
                    c = dx * rx + dy * ry + dz * rz
                    if a <= _EPS and e <= _EPS:
                        s_ = 0.0
                        t_ = 0.0
                    elif a <= _EPS:
                        s_ = 0.0
                        t_ = min(max(f / e, 0.0), 1.0)
                    elif e <= _EPS:
                        t_ = 0.0
                        s_ = min(max(-c / a, 0.0), 1.0)
                    else:
                        b = dx * ux + dy * uy + dz * uz
                        denom = a * e - b * b
                        s_ = 0.0
                        if denom > _EPS:
                            s_ = min(max((b * f - c * e) / denom, 0.0), 1.0)
                        t_ = (b * s_ + f) / e
                        if t_ < 0.0:
                            t_ = 0.0
                            s_ = min(max(-c / a, 0.0), 1.0)
                        elif t_ > 1.0:
                            t_ = 1.0
                            s_ = min(max((b - c) / a, 0.0), 1.0)
                    wx = px + dx * s_ - (cap_a[q, 0] + ux * t_)
                    wy = py + dy * s_ - (cap_a[q, 1] + uy * t_)
                    wz = pz + dz * s_ - (cap_a[q, 2] + uz * t_)
                    if wx * wx + wy * wy + wz * wz < cap_r[q] * cap_r[q]:
                        hit = True
                        break
            out[p, j] = hit
    return out


def _seg_seg_dist2(p1, d1, p2, d2):
    """Squared distance between segments p1+s*d1 and p2+t*d2, broadcast."""
    r = p1 - p2
    a = np.sum(d1 * d1, axis=-1)
    e = np.sum(d2 * d2, axis=-1)
    f = np.sum(d2 * r, axis=-1)
    c = np.sum(d1 * r, axis=-1)
    b = np.sum(d1 * d2, axis=-1)
    a, e, f, c, b = np.broadcast_arrays(a, e, f, c, b)
    a_ok = a > _EPS
    e_ok = e > _EPS
    safe_a = np.where(a_ok, a, 1.0)
    safe_e = np.where(e_ok, e, 1.0)
    denom = a * e - b * b
    s = np.where(denom > _EPS, np.clip((b * f - c * e) / np.where(denom > _EPS, denom, 1.0), 0.0, 1.0), 0.0)
    t = (b * s + f) / safe_e
    s = np.where(t < 0.0, np.clip(-c / safe_a, 0.0, 1.0), s)
    s = np.where(t > 1.0, np.clip((b - c) / safe_a, 0.0, 1.0), s)
    t = np.clip(t, 0.0, 1.0)
    # degenerate segments
    s = np.where(~a_ok, 0.0, np.where(~e_ok, np.clip(-c / safe_a, 0.0, 1.0), s))
    t = np.where(~e_ok, 0.0, np.where(~a_ok, np.clip(f / safe_e, 0.0, 1.0), t))
    w = r + d1 * s[..., None] - d2 * t[..., None]
    return np.sum(w * w, axis=-1)


def blocked_joints_numpy(joints, cam, cap_a, cap_b, cap_r, spheres):
    """Boolean (P, J) mask of joints whose segment to ``cam`` is obstructed."""
    joints = np.asarray(joints, dtype=np.float64)
    n_persons, n_joints, _ = joints.shape
    d = cam[None, None, :] - joints  # (P, J, 3)
    hit = np.zeros((n_persons, n_joints), dtype=bool)
    if len(spheres):
        centers = spheres[:, :3]
        a = np.sum(d * d, axis=-1)[..., None]  # (P, J, 1)
        rel = centers[None, None, :, :] - joints[:, :, None, :]  # (P, J, S, 3)
        t = np.einsum("pjsk,pjk->pjs", rel, d) / np.where(a > _EPS, a, 1.0)
        t = np.clip(np.where(a > _EPS, t, 0.0), 0.0, 1.0)
        closest = joints[:, :, None, :] + t[..., None] * d[:, :, None, :]
        dist2 = np.sum((closest - centers[None, None]) ** 2, axis=-1)
        hit |= np.any(dist2 < spheres[None, None, :, 3] ** 2, axis=-1)
    if len(cap_a) > 1:
        u = cap_b - cap_a  # (Q, 3)
        dist2 = _seg_seg_dist2(
            joints[:, :, None, :], d[:, :, None, :], cap_a[None, None], u[None, None]
        )  # (P, J, Q)
        blocked = dist2 < cap_r[None, None, :] ** 2
        own = np.eye(n_persons, len(cap_a), dtype=bool)[:, None, :]
        hit |= np.any(blocked & ~own, axis=-1)
    return hit


# ---------------------------------------------------------------------------
# nearest direction on the unit sphere
# ---------------------------------------------------------------------------


def _nearest_loops(dirs, target):
    best = 0
    best_dot = -np.inf
    for i in range(dirs.shape[0]):
        d = dirs[i, 0] * target[0] + dirs[i, 1] * target[1] + dirs[i, 2] * target[2]
        if d > best_dot:
            best_dot = d
            best = i
    return best


def nearest_direction_numpy(dirs, target):
    """Index of the unit vector in ``dirs`` closest in angle to ``target``.

    Maximizing the dot product minimizes great-circle distance; ``argmax``
    returns the first maximum, so ties go to the lowest index.
    """
    return int(np.argmax(dirs @ target))


# ---------------------------------------------------------------------------
# Hungarian algorithm (square, minimization), O(n^3) potentials form
# ---------------------------------------------------------------------------


def _hungarian_loops(cost):
    n = cost.shape[0]
    inf = np.inf
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=np.int64)
    way = np.zeros(n + 1, dtype=np.int64)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(n + 1, inf)
        used = np.zeros(n + 1, dtype=np.bool_)
        while True:
            used[j0] = True
            i0 = p[j0]
            delta = inf
            j1 = 0
            for j in range(1, n + 1):
                if not used[j]:
                    cur = cost[i0 - 1, j - 1] - u[i0] - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while True:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
            if j0 == 0:
                break
    rows_to_cols = np.empty(n, dtype=np.int64)
    for j in range(1, n + 1):
        rows_to_cols[p[j] - 1] = j - 1
    return rows_to_cols


def hungarian_numpy(cost):
    """Same algorithm as the loop kernel with the column scan vectorized."""
    cost = np.asarray(cost, dtype=np.float64)
    n = cost.shape[0]
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=np.int64)
    way = np.zeros(n + 1, dtype=np.int64)
    padded = np.zeros((n + 1, n + 1))
    padded[1:, 1:] = cost
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            free = ~used
            free[0] = False
            cur = padded[i0] - u[i0] - v
            better = free & (cur < minv)
            minv[better] = cur[better]
            way[better] = j0
            cand = np.where(free, minv, np.inf)
            j1 = int(np.argmin(cand))
            delta = cand[j1]
            u[p[used]] += delta
            v[used] -= delta
            minv[~used] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while True:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
            if j0 == 0:
                break
    rows_to_cols = np.empty(n, dtype=np.int64)
    rows_to_cols[p[1:] - 1] = np.arange(n)
    return rows_to_cols


if HAVE_NUMBA:
    blocked_joints_numba = _jit(_blocked_loops)
    nearest_direction_numba = _jit(_nearest_loops)
    hungarian_numba = _jit(_hungarian_loops)
else:  # pragma: no cover
    blocked_joints_numba = _blocked_loops
    nearest_direction_numba = _nearest_loops
    hungarian_numba = _hungarian_loops


def _as_f64(x):
    return np.ascontiguousarray(x, dtype=np.float64)


def blocked_joints(joints, cam, cap_a, cap_b, cap_r, spheres):
    args = (_as_f64(joints), _as_f64(cam), _as_f64(cap_a).reshape(-1, 3),
            _as_f64(cap_b).reshape(-1, 3), _as_f64(cap_r).reshape(-1),
            _as_f64(spheres).reshape(-1, 4))
    if USE_NUMBA:
        return blocked_joints_numba(*args)
    return blocked_joints_numpy(*args)


def nearest_direction(dirs, target):
    if USE_NUMBA:
        return int(nearest_direction_numba(_as_f64(dirs), _as_f64(target)))
    return nearest_direction_numpy(_as_f64(dirs), _as_f64(target))


def hungarian(cost):
    cost = _as_f64(cost)
    if cost.shape[0] == 0:
        return np.empty(0, dtype=np.int64)
    if USE_NUMBA:
        return hungarian_numba(cost)
    return hungarian_numpy(cost)
