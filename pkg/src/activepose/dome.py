"""Camera dome geometry: placement, relative-angle camera lookup, angle canvas."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels

GOLDEN_ANGLE = math.pi * (3.0 - math.sqrt(5.0))
JITTER = math.radians(3.0)


def wrap_angle(a):
    """Map angles onto [-pi, pi)."""
    return (np.asarray(a, dtype=np.float64) + np.pi) % (2 * np.pi) - np.pi


def direction(azimuth, elevation):
    """Unit vector(s) for azimuth/elevation in radians, z up."""
    az = np.asarray(azimuth, dtype=np.float64)
    el = np.asarray(elevation, dtype=np.float64)
    ce = np.cos(el)
    return np.stack([ce * np.cos(az), ce * np.sin(az), np.sin(el)], axis=-1)


@dataclass(frozen=True)
class CameraSpec:
    id: int
    azimuth: float
    elevation: float
    radius: float  # meters

    @property
    def position_mm(self) -> np.ndarray:
        return 1000.0 * self.radius * direction(self.azimuth, self.elevation)


@dataclass(frozen=True, eq=False)
class DomeRig:
    cameras: tuple[CameraSpec, ...]
    kappa: float
    _dirs: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if len(self.cameras) < 2:
            raise ValueError("a rig needs at least 2 cameras")
        for i, cam in enumerate(self.cameras):
            if cam.id != i:
                raise ValueError("camera ids must be dense 0..N-1 in order")
            if abs(cam.elevation) > self.kappa + 1e-12:
                raise ValueError(f"camera {i} elevation outside [-kappa, kappa]")
        dirs = direction([c.azimuth for c in self.cameras], [c.elevation for c in self.cameras])
        dirs.setflags(write=False)
        object.__setattr__(self, "_dirs", dirs)

    def __len__(self) -> int:
        return len(self.cameras)

    def __getitem__(self, i: int) -> CameraSpec:
        return self.cameras[i]

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, DomeRig)
            and self.kappa == other.kappa
            and self.cameras == other.cameras
        )

    @property
    def directions(self) -> np.ndarray:
        return self._dirs

    @property
    def radius(self) -> float:
        return self.cameras[0].radius

    @property
    def positions_mm(self) -> np.ndarray:
        return 1000.0 * self.radius * self._dirs

    def to_text(self) -> str:
        lines = [f"kappa={self.kappa!r} n={len(self.cameras)}"]
        lines += [f"{c.id} {c.azimuth!r} {c.elevation!r} {c.radius!r}" for c in self.cameras]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "DomeRig":
        rows = [ln for ln in text.splitlines() if ln.strip()]
        header = dict(tok.split("=", 1) for tok in rows[0].split())
        kappa, n = float(header["kappa"]), int(header["n"])
        cams = []
        for ln in rows[1:]:
            i, az, el, r = ln.split()
            cams.append(CameraSpec(int(i), float(az), float(el), float(r)))
        if len(cams) != n:
            raise ValueError(f"header says n={n} but found {len(cams)} cameras")
        return cls(tuple(cams), kappa)


def build_dome(n_cameras: int = 30, kappa: float = 1.0, seed: int = 0, radius: float = 3.0) -> DomeRig:
    """Quasi-uniform spiral of cameras over the band |elevation| <= kappa.

    Points are uniform in sin(elevation) with golden-angle azimuth steps, then
    each angle is jittered by up to 3 degrees so rigs differ between seeds.
    """
    if n_cameras < 2:
        raise ValueError("n_cameras must be >= 2")
    if not 0.0 < kappa < math.pi / 2:
        raise ValueError("kappa must lie in (0, pi/2)")
    rng = np.random.default_rng(seed)
    i = np.arange(n_cameras) + 0.5
    el = np.arcsin(math.sin(kappa) * (2.0 * i / n_cameras - 1.0))
    az = wrap_angle(np.arange(n_cameras) * GOLDEN_ANGLE)
    az = wrap_angle(az + rng.uniform(-JITTER, JITTER, n_cameras))
    el = np.clip(el + rng.uniform(-JITTER, JITTER, n_cameras), -kappa, kappa)
    cams = tuple(
        CameraSpec(k, float(az[k]), float(el[k]), float(radius)) for k in range(n_cameras)
    )
    return DomeRig(cams, float(kappa))


def rig_from_angles(azimuths, elevations, kappa: float = 1.0, radius: float = 3.0) -> DomeRig:
    """Hand-placed rig, mostly for toy problems and tests."""
    cams = tuple(
        CameraSpec(k, float(wrap_angle(a)), float(e), float(radius))
        for k, (a, e) in enumerate(zip(azimuths, elevations))
    )
    return DomeRig(cams, float(kappa))


def target_angles(rig: DomeRig, current: CameraSpec, delta_azimuth: float, delta_elevation: float):
    az = float(wrap_angle(current.azimuth + delta_azimuth))
    el = float(np.clip(current.elevation + delta_elevation, -rig.kappa, rig.kappa))
    return az, el


def nearest_camera(rig: DomeRig, current: CameraSpec, delta_azimuth: float, delta_elevation: float) -> CameraSpec:
    """Camera closest (great-circle) to the current angles displaced by the deltas."""
    az, el = target_angles(rig, current, delta_azimuth, delta_elevation)
    return rig.cameras[kernels.nearest_direction(rig.directions, direction(az, el))]


def nearest_camera_to(rig: DomeRig, azimuth: float, elevation: float, exclude=()) -> CameraSpec:
    """Closest camera to absolute angles, skipping ids in ``exclude``."""
    dots = rig.directions @ direction(azimuth, elevation)
    if exclude:
        dots = dots.copy()
        dots[list(exclude)] = -np.inf
    return rig.cameras[int(np.argmax(dots))]


# ---------------------------------------------------------------------------
# angle canvas
# ---------------------------------------------------------------------------


def azimuth_bin(azimuth: float, w: int) -> int:
    frac = (float(wrap_angle(azimuth)) + math.pi) / (2 * math.pi)
    return int(math.floor(frac * w)) % w


def elevation_bin(elevation: float, kappa: float, h: int) -> int:
    b = int(math.floor((elevation + kappa) / (2 * kappa) * h))
    return min(max(b, 0), h - 1)


@dataclass(frozen=True, eq=False)
class AngleCanvas:
    """Visit counts (channel 0) and camera density (channel 1) on a w x h grid."""

    grid: np.ndarray
    kappa: float

    @property
    def w(self) -> int:
        return self.grid.shape[0]

    @property
    def h(self) -> int:
        return self.grid.shape[1]

    def cell(self, cam: CameraSpec) -> tuple[int, int]:
        return azimuth_bin(cam.azimuth, self.w), elevation_bin(cam.elevation, self.kappa, self.h)


def empty_canvas(rig: DomeRig, w: int = 9, h: int = 5) -> AngleCanvas:
    grid = np.zeros((w, h, 2), dtype=np.int64)
    for cam in rig.cameras:
        grid[azimuth_bin(cam.azimuth, w), elevation_bin(cam.elevation, rig.kappa, h), 1] += 1
    return AngleCanvas(grid, rig.kappa)


def update_canvas(canvas: AngleCanvas, visited: CameraSpec) -> AngleCanvas:
    grid = canvas.grid.copy()
    a, e = canvas.cell(visited)
    grid[a, e, 0] += 1
    return AngleCanvas(grid, canvas.kappa)
