"""Synthetic multi-person scenes and a parametric monocular estimator.

Units: poses and ray tests in millimeters, rig and occluders in meters (as
stored). The scene origin is the dome center, roughly at pelvis height; the
floor sits at ``FLOOR_Z``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels
from .dome import CameraSpec, DomeRig, build_dome, wrap_angle

N_JOINTS = 15
FEATURE_DIM = 16
FLOOR_Z = -900.0
MAP_SHAPE = (8, 8, 16)

JOINT_NAMES = (
    "neck", "head", "pelvis",
    "l_shoulder", "l_elbow", "l_wrist", "l_hip", "l_knee", "l_ankle",
    "r_shoulder", "r_elbow", "r_wrist", "r_hip", "r_knee", "r_ankle",
)
# limbs that a gross estimator failure may replace: (anchor, joints moved)
LIMBS = ((3, (4, 5)), (9, (10, 11)), (6, (7, 8)), (12, (13, 14)))
BONES = (
    (0, 1), (0, 2), (0, 3), (3, 4), (4, 5), (2, 6), (6, 7), (7, 8),
    (0, 9), (9, 10), (10, 11), (2, 12), (12, 13), (13, 14),
)

# canonical lengths, mm
_NECK_Z = 500.0
_HEAD = 220.0
_SHOULDER_Y = 190.0
_SHOULDER_DROP = 30.0
_UPPER_ARM = 290.0
_FOREARM = 260.0
_HIP_Y = 100.0
_THIGH = 430.0
_SHIN = 420.0


@dataclass(frozen=True)
class SceneConfig:
    persons: tuple[int, int] = (1, 1)  # inclusive range
    length: int = 40
    n_occluders: int = 0
    n_cameras: int = 30
    kappa: float = 1.0
    radius: float = 3.0  # m
    ring_radius: float = 1100.0  # mm, multi-person placement
    signature_scale: float = 1.0
    signature_margin: float = 1.0
    capsule_radius: float = 170.0  # mm
    max_joint_step: float = 300.0  # mm per timestep
    root_step: float = 40.0  # mm cap on root speed
    turn_step: float = 0.15  # rad cap on facing change

    def __post_init__(self):
        lo, hi = self.persons
        if not (1 <= lo <= hi <= 7):
            raise ValueError("person count must lie in 1..7")
        if self.length < 10:
            raise ValueError("scenes need at least 10 timesteps")


@dataclass(frozen=True)
class EstimatorConfig:
    sigma0: float = 40.0  # mm, mean per-joint error at an ideal view
    a_occ: float = 4.0
    a_view: float = 1.5
    a_dist: float = 0.5
    p_fail: float = 0.05
    p_fail_occ: float = 0.4  # extra failure probability at zero visibility
    fail_length: tuple[float, float] = (250.0, 650.0)
    shared_fraction: float = 0.5  # variance share of the per-view rigid offset
    sigma_feat: float = 0.1
    detect_threshold: float = 0.3
    noise_scale: float = 1.0


@dataclass(frozen=True, eq=False)
class ScenePerson:
    person_id: int
    trajectory: np.ndarray  # (T, 15, 3) mm
    facing: np.ndarray  # (T,) rad
    signature: np.ndarray  # (16,)


@dataclass(frozen=True, eq=False)
class Scene:
    persons: tuple[ScenePerson, ...]
    length: int
    rig: DomeRig
    occluders: np.ndarray  # (S, 4): cx, cy, cz, r in meters
    capsule_radius: float = 170.0
    camera_noise: np.ndarray | None = None  # per-camera noise multiplier

    def __eq__(self, other):
        if not isinstance(other, Scene):
            return NotImplemented
        return self.to_text() == other.to_text()

    def pose(self, person: int, t: int) -> np.ndarray:
        return self.persons[person].trajectory[t]

    def poses(self, t: int) -> np.ndarray:
        return np.stack([p.trajectory[t] for p in self.persons])

    def noise_multiplier(self, camera: CameraSpec) -> float:
        if self.camera_noise is None:
            return 1.0
        return float(self.camera_noise[camera.id])

    def to_text(self) -> str:
        body = {
            "length": self.length,
            "capsule_radius": self.capsule_radius,
            "rig": self.rig.to_text(),
            "occluders": self.occluders.tolist(),
            "camera_noise": None if self.camera_noise is None else self.camera_noise.tolist(),
            "persons": [
                {
                    "person_id": p.person_id,
                    "signature": p.signature.tolist(),
                    "facing": p.facing.tolist(),
                    "trajectory": p.trajectory.tolist(),
                }
                for p in self.persons
            ],
        }
        return "scenesim-v1\n" + json.dumps(body) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "Scene":
        header, _, payload = text.partition("\n")
        if header.strip() != "scenesim-v1":
            raise ValueError(f"unsupported scene format {header!r}")
        d = json.loads(payload)
        persons = tuple(
            ScenePerson(
                p["person_id"],
                np.asarray(p["trajectory"], dtype=np.float64),
                np.asarray(p["facing"], dtype=np.float64),
                np.asarray(p["signature"], dtype=np.float64),
            )
            for p in d["persons"]
        )
        noise = d["camera_noise"]
        return cls(
            persons,
            d["length"],
            DomeRig.from_text(d["rig"]),
            np.asarray(d["occluders"], dtype=np.float64).reshape(-1, 4),
            d["capsule_radius"],
            None if noise is None else np.asarray(noise, dtype=np.float64),
        )


@dataclass(frozen=True, eq=False)
class Detection:
    person_index_hint: int = field(repr=False)  # simulator-internal
    instance_feature: np.ndarray
    pose_estimate: np.ndarray
    visibility_fraction: float


@dataclass(frozen=True, eq=False)
class BaseFeatureMap:
    grid: np.ndarray  # (8, 8, 16)


# ---------------------------------------------------------------------------
# skeleton
# ---------------------------------------------------------------------------


def _limb_dir(pitch, abduct, side):
    return np.stack(
        [np.sin(pitch) * np.cos(abduct), side * np.sin(abduct), -np.cos(pitch) * np.cos(abduct)],
        axis=-1,
    )


def skeleton(angles: dict, scale: float = 1.0) -> np.ndarray:
    """Local-frame joints (..., 15, 3): facing +x, left +y, up +z, pelvis at 0.

    ``angles`` holds arrays (broadcastable) for arm pitch/abduction/elbow per
    side and hip pitch/knee flex per side.
    """
    shape = np.broadcast(*angles.values()).shape
    J = np.zeros(shape + (N_JOINTS, 3))
    J[..., 0, :] = (0.0, 0.0, _NECK_Z * scale)
    J[..., 1, :] = (0.0, 0.0, (_NECK_Z + _HEAD) * scale)
    for side, (sh, el, wr, hip, kn, an) in ((1, (3, 4, 5, 6, 7, 8)), (-1, (9, 10, 11, 12, 13, 14))):
        key = "l" if side > 0 else "r"
        J[..., sh, :] = (0.0, side * _SHOULDER_Y * scale, (_NECK_Z - _SHOULDER_DROP) * scale)
        pitch, abd, elbow = angles[key + "_arm"], angles[key + "_abd"], angles[key + "_elbow"]
        J[..., el, :] = J[..., sh, :] + _UPPER_ARM * scale * _limb_dir(pitch, abd, side)
        J[..., wr, :] = J[..., el, :] + _FOREARM * scale * _limb_dir(pitch + elbow, abd, side)
        J[..., hip, :] = (0.0, side * _HIP_Y * scale, 0.0)
        hp, knee = angles[key + "_hip"], angles[key + "_knee"]
        zero = np.zeros_like(np.asarray(hp, dtype=float))
        J[..., kn, :] = J[..., hip, :] + _THIGH * scale * _limb_dir(hp, zero, side)
        J[..., an, :] = J[..., kn, :] + _SHIN * scale * _limb_dir(hp - knee, zero, side)
    return J


def bone_lengths(pose: np.ndarray) -> np.ndarray:
    a = np.array([b[0] for b in BONES])
    b = np.array([b[1] for b in BONES])
    return np.linalg.norm(pose[..., a, :] - pose[..., b, :], axis=-1)


CANONICAL_BONES = bone_lengths(
    skeleton({k: 0.0 for k in ("l_arm", "l_abd", "l_elbow", "l_hip", "l_knee",
                               "r_arm", "r_abd", "r_elbow", "r_hip", "r_knee")})
)


def _oscillation(rng, T, lo, hi, freq=(0.01, 0.05)):
    f = rng.uniform(*freq)
    phase = rng.uniform(0, 2 * np.pi)
    t = np.arange(T)
    return lo + (hi - lo) * 0.5 * (1.0 + np.sin(2 * np.pi * f * t + phase))


def _person_motion(rng, T, home_xy, home_facing, cfg: SceneConfig):
    scale = rng.uniform(0.9, 1.1)
    angles = {}
    for key in ("l", "r"):
        amp = rng.uniform(0.1, 0.7)
        angles[key + "_arm"] = _oscillation(rng, T, -amp, amp)
        angles[key + "_abd"] = _oscillation(rng, T, 0.1, 0.45)
        angles[key + "_elbow"] = _oscillation(rng, T, 0.2, 0.9)
        angles[key + "_hip"] = _oscillation(rng, T, -0.25, 0.25)
        angles[key + "_knee"] = _oscillation(rng, T, 0.0, 0.3)
    local = skeleton(angles, scale)  # (T, 15, 3)

    pos = np.empty((T, 2))
    facing = np.empty(T)
    p = np.array(home_xy, dtype=float)
    v = np.zeros(2)
    f, w = float(home_facing), 0.0
    for t in range(T):
        pos[t], facing[t] = p, f
        v = 0.8 * v + rng.normal(0.0, 12.0, 2) + 0.05 * (np.asarray(home_xy) - p)
        speed = np.linalg.norm(v)
        if speed > cfg.root_step:
            v *= cfg.root_step / speed
        p = p + v
        w = 0.8 * w + rng.normal(0.0, 0.05) + 0.05 * float(wrap_angle(home_facing - f))
        w = float(np.clip(w, -cfg.turn_step, cfg.turn_step))
        f = float(wrap_angle(f + w))

    c, s = np.cos(facing), np.sin(facing)
    world = np.empty_like(local)
    world[..., 0] = c[:, None] * local[..., 0] - s[:, None] * local[..., 1] + pos[:, None, 0]
    world[..., 1] = s[:, None] * local[..., 0] + c[:, None] * local[..., 1] + pos[:, None, 1]
    world[..., 2] = local[..., 2] + FLOOR_Z + (_THIGH + _SHIN) * scale
    return world, facing


def _signatures(rng, n, cfg: SceneConfig):
    sigs = []
    for _ in range(10_000):
        if len(sigs) == n:
            break
        s = rng.normal(0.0, cfg.signature_scale / math.sqrt(FEATURE_DIM), FEATURE_DIM)
        if all(np.linalg.norm(s - o) >= cfg.signature_margin for o in sigs):
            sigs.append(s)
    else:  # pragma: no cover
        raise RuntimeError("could not place signatures with the requested margin")
    return sigs


def generate_scene(config: SceneConfig, seed: int) -> Scene:
    """Seeded synthetic scene: persons walking and gesturing inside a dome."""
    rng = np.random.default_rng(seed)
    lo, hi = config.persons
    n = int(rng.integers(lo, hi + 1))
    rig = build_dome(config.n_cameras, config.kappa, seed=int(rng.integers(2**31)), radius=config.radius)
    T = config.length

    if n == 1:
        homes = [rng.uniform(-300.0, 300.0, 2)]
        facings = [rng.uniform(-np.pi, np.pi)]
    else:
        base = rng.uniform(-np.pi, np.pi)
        slots = base + 2 * np.pi * np.arange(n) / n + rng.normal(0.0, 0.15, n)
        radii = config.ring_radius + rng.uniform(-100.0, 100.0, n)
        homes = [r * np.array([np.cos(a), np.sin(a)]) for r, a in zip(radii, slots)]
        # face roughly toward the circle's center
        facings = [float(wrap_angle(a + np.pi + rng.normal(0.0, 0.6))) for a in slots]

    sigs = _signatures(rng, n, config)
    persons = []
    for k in range(n):
        traj, facing = _person_motion(rng, T, homes[k], facings[k], config)
        persons.append(ScenePerson(k, traj, facing, sigs[k]))

    occ = np.zeros((config.n_occluders, 4))
    for s in range(config.n_occluders):
        a = rng.uniform(-np.pi, np.pi)
        d = rng.uniform(1.7, 2.2)
        occ[s] = (d * np.cos(a), d * np.sin(a), rng.uniform(-0.4, 0.9), rng.uniform(0.25, 0.45))

    scene = Scene(tuple(persons), T, rig, occ, config.capsule_radius)
    step = max_joint_step(scene)
    if step > config.max_joint_step:  # pragma: no cover - guarded by motion caps
        raise RuntimeError(f"motion step {step:.1f} mm exceeds bound {config.max_joint_step}")
    return scene


def max_joint_step(scene: Scene) -> float:
    steps = [np.linalg.norm(np.diff(p.trajectory, axis=0), axis=-1).max() for p in scene.persons]
    return float(max(steps)) if steps else 0.0


# ---------------------------------------------------------------------------
# perception
# ---------------------------------------------------------------------------


def _capsules(scene: Scene, t: int):
    poses = scene.poses(t)
    a = poses[:, 2, :].copy()
    a[:, 2] = poses[:, (8, 14), 2].min(axis=1)
    b = poses[:, 1, :]
    r = np.full(len(poses), scene.capsule_radius)
    return a, b, r


def visibilities(scene: Scene, camera: CameraSpec, t: int) -> np.ndarray:
    """Visible-joint fraction for every person from ``camera`` at ``t``."""
    a, b, r = _capsules(scene, t)
    spheres = scene.occluders * 1000.0
    blocked = kernels.blocked_joints(scene.poses(t), camera.position_mm, a, b, r, spheres)
    return 1.0 - blocked.mean(axis=1)


def visibility(scene: Scene, person: int, camera: CameraSpec, t: int) -> float:
    return float(visibilities(scene, camera, t)[person])


def view_geometry(scene: Scene, person: int, camera: CameraSpec, t: int):
    """(relative azimuth of the camera w.r.t. facing, elevation seen from the pelvis, range ratio)."""
    pelvis = scene.pose(person, t)[2]
    v = camera.position_mm - pelvis
    rel = float(wrap_angle(math.atan2(v[1], v[0]) - scene.persons[person].facing[t]))
    horiz = math.hypot(v[0], v[1])
    elev = math.atan2(v[2], horiz)
    rng_ratio = float(np.linalg.norm(v)) / (1000.0 * camera.radius)
    return rel, elev, rng_ratio


def view_penalty(rel_azimuth: float, elevation: float) -> float:
    """In [0, 1]: 0 for a level frontal view, 1 for a rear top-down view."""
    return 0.75 * 0.5 * (1.0 - math.cos(rel_azimuth)) + 0.25 * max(0.0, math.sin(elevation))


def noise_sigma(scene: Scene, person: int, camera: CameraSpec, t: int, vis: float,
                est: EstimatorConfig) -> float:
    """Mean per-joint error (mm) of the estimator for this view, before failures."""
    rel, elev, rng_ratio = view_geometry(scene, person, camera, t)
    factor = 1.0 + est.a_occ * (1.0 - vis) + est.a_view * view_penalty(rel, elev) + est.a_dist * (rng_ratio - 1.0)
    return est.sigma0 * max(factor, 0.1)


# E||n|| for n ~ N(0, s^2 I_3) is s * 2 * sqrt(2/pi)
_MEAN_NORM = 2.0 * math.sqrt(2.0 / math.pi)


def _noisy_pose(rng, gt, sigma, p_fail, scale, est: EstimatorConfig):
    s = sigma / _MEAN_NORM
    shared = rng.normal(0.0, s * math.sqrt(est.shared_fraction), 3)
    own = rng.normal(0.0, s * math.sqrt(1.0 - est.shared_fraction), (N_JOINTS, 3))
    fail = rng.random() < p_fail
    limb = int(rng.integers(len(LIMBS)))
    dirs = rng.normal(size=(2, 3))
    lengths = rng.uniform(*est.fail_length, 2)
    if scale == 0.0:
        return gt.copy()
    est_pose = gt + scale * (shared + own)
    if fail:
        anchor, moved = LIMBS[limb]
        base = gt[anchor]
        for k, j in enumerate(moved):
            d = dirs[k] / np.linalg.norm(dirs[k])
            bad = base + lengths[k] * d
            est_pose[j] = gt[j] + scale * (bad - gt[j]) + scale * own[j]
            base = bad
    return est_pose


_PROJECTION = None
SUMMARY_DIM = 12


def _projection() -> np.ndarray:
    global _PROJECTION
    if _PROJECTION is None:
        rng = np.random.default_rng(7919)
        p = rng.normal(0.0, 1.0 / math.sqrt(SUMMARY_DIM), (int(np.prod(MAP_SHAPE)), SUMMARY_DIM))
        p.setflags(write=False)
        _PROJECTION = p
    return _PROJECTION


def base_feature_map(scene: Scene, camera: CameraSpec, t: int, detections) -> BaseFeatureMap:
    """Image-level summary projected onto an 8x8x16 grid.

    Symmetric in the detections (counts, visibility stats, mean apparent
    orientation of detected people), plus the camera's own angles.
    """
    s = np.zeros(SUMMARY_DIM)
    s[0] = 1.0
    n = len(detections)
    s[1] = n / 7.0
    if n:
        vis = np.array([d.visibility_fraction for d in detections])
        geo = np.array([view_geometry(scene, d.person_index_hint, camera, t) for d in detections])
        s[2], s[3], s[4] = vis.mean(), vis.max(), vis.min()
        s[5] = np.cos(geo[:, 0]).mean()
        s[6] = np.sin(geo[:, 0]).mean()
        s[10] = geo[:, 2].mean() - 1.0
    else:
        s[11] = 1.0
    s[7], s[8], s[9] = math.cos(camera.azimuth), math.sin(camera.azimuth), math.sin(camera.elevation)
    return BaseFeatureMap((_projection() @ s).reshape(MAP_SHAPE))


def instance_feature(rng, signature: np.ndarray, est: EstimatorConfig) -> np.ndarray:
    return signature + rng.normal(0.0, est.sigma_feat, signature.shape)


def observe(scene: Scene, camera: CameraSpec, t: int, seed: int = 0,
            est: EstimatorConfig = EstimatorConfig()):
    """Detections and base feature map for one view; deterministic in (scene, camera, t, seed)."""
    rng = np.random.default_rng([seed, camera.id, t])
    vis = visibilities(scene, camera, t)
    scale = est.noise_scale * scene.noise_multiplier(camera)
    dets = []
    for k, person in enumerate(scene.persons):
        if vis[k] < est.detect_threshold:
            continue
        sigma = noise_sigma(scene, k, camera, t, vis[k], est)
        p_fail = min(1.0, est.p_fail + est.p_fail_occ * (1.0 - vis[k]))
        pose = _noisy_pose(rng, person.trajectory[t], sigma, p_fail, scale, est)
        feat = instance_feature(rng, person.signature, est)
        dets.append(Detection(k, feat, pose, float(vis[k])))
    order = rng.permutation(len(dets))
    dets = [dets[i] for i in order]
    return dets, base_feature_map(scene, camera, t, dets)


def with_camera_noise(scene: Scene, multipliers) -> Scene:
    return replace(scene, camera_noise=np.asarray(multipliers, dtype=np.float64))
