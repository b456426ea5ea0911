"""Active-view and active-sequence rollouts, rewards, and baseline policies."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dome import DomeRig, empty_canvas, nearest_camera, nearest_camera_to, update_canvas, wrap_angle
from .fusion import DEFAULT_E_MISS, FusedEstimate, fuse, reconstruction_error
from .identity import build_appearance_model, match_detections
from .policy import AgentState, PolicyAction, PolicyConfig, featurize, sample_action
from .scenesim import EstimatorConfig, Scene, instance_feature, observe

SINGLE, MULTI = "S", "M"


@dataclass(frozen=True)
class RolloutConfig:
    mode: str = SINGLE
    max_views: int | None = None  # 8 single-target, 10 multi-target
    sequence_length: int = 10
    tau: float = 0.07
    revisit_penalty: float = 2.5
    cost_threshold: float = 0.5
    e_miss: float = DEFAULT_E_MISS
    n_appearance_samples: int = 10
    reset: bool = False
    fixed_k: int | None = None
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)

    def __post_init__(self):
        if self.mode not in (SINGLE, MULTI):
            raise ValueError(f"mode must be S or M, got {self.mode!r}")

    @property
    def view_cap(self) -> int:
        if self.max_views is not None:
            return self.max_views
        return 8 if self.mode == SINGLE else 10


# ---------------------------------------------------------------------------
# rewards
# ---------------------------------------------------------------------------


def viewpoint_reward(step: int, revisit: bool, err_first: float, err_final: float, continue_flag: bool,
                     penalty: float = 2.5) -> float:
    """Terminal improvement ratio on continue, else 0 or the revisit penalty."""
    if err_first <= 0:
        raise ValueError("initial error must be positive")
    if continue_flag:
        return 1.0 - err_final / err_first
    return -penalty if revisit else 0.0


def continue_reward(step: int, future_errors, err_now: float, err_first: float, err_final: float,
                    continue_flag: bool, tau: float = 0.07) -> float:
    """Best-future-error ratio minus tau while exploring; terminal ratio on continue.

    ``step`` is 1-based within the active-view and ``future_errors`` holds the
    realized errors of the later steps of the same view.
    """
    if continue_flag:
        if err_first <= 0:
            raise ValueError("initial error must be positive")
        return 1.0 - err_final / err_first
    if err_now <= 0:
        raise ValueError("current error must be positive")
    future = list(future_errors)
    if not future:
        raise ValueError("a non-terminal step needs realized future errors")
    return 1.0 - min(future) / err_now - tau


# ---------------------------------------------------------------------------
# records
# ---------------------------------------------------------------------------


@dataclass
class StepRecord:
    t: int
    camera: int
    error: float
    state: AgentState | None = None
    action: PolicyAction | None = None
    log_density: float = 0.0
    continue_flag: bool = False
    revisit: bool = False
    forced: bool = False
    next_camera: int | None = None
    reward: float = 0.0


@dataclass
class ViewRecord:
    t: int
    steps: list[StepRecord]
    fused: dict  # person index -> FusedEstimate
    error: float

    @property
    def n_views(self) -> int:
        return len(self.steps)

    @property
    def cameras(self) -> list[int]:
        return [s.camera for s in self.steps]


@dataclass
class Trajectory:
    views: list[ViewRecord]
    mode: str
    policy: str = ""
    n_cameras: int = 0

    @property
    def steps(self) -> list[StepRecord]:
        return [s for v in self.views for s in v.steps]

    @property
    def rewards(self) -> np.ndarray:
        return np.array([s.reward for s in self.steps])

    @property
    def mean_error(self) -> float:
        return float(np.mean([v.error for v in self.views]))

    @property
    def mean_views(self) -> float:
        return float(np.mean([v.n_views for v in self.views]))

    def dump(self) -> str:
        """One line per step: t camera d_az d_el continue reward error."""
        lines = []
        for s in self.steps:
            daz = s.action.delta_azimuth if s.action else float("nan")
            delv = s.action.delta_elevation if s.action else float("nan")
            lines.append(f"{s.t} {s.camera} {daz!r} {delv!r} {int(s.continue_flag)} {s.reward!r} {s.error!r}")
        return "\n".join(lines) + "\n"


def assign_rewards(view: ViewRecord, cfg: RolloutConfig) -> None:
    """Fill ``reward = r_v + r_c`` for every step of a finished active-view."""
    errs = [s.error for s in view.steps]
    first, final = errs[0], errs[-1]
    for i, s in enumerate(view.steps):
        if s.continue_flag:
            # degenerate zero-error start (noise-free tests) earns nothing
            s.reward = 0.0 if first <= 0 else 2.0 * (1.0 - final / first)
            continue
        r_v = -cfg.revisit_penalty if s.revisit else 0.0
        r_c = 0.0 if errs[i] <= 0 else continue_reward(i + 1, errs[i + 1:], errs[i], first, final, False, cfg.tau)
        s.reward = r_v + r_c


# ---------------------------------------------------------------------------
# episodes
# ---------------------------------------------------------------------------


class Episode:
    """One active-sequence problem: scene, time window, target, appearance models.

    Observations are cached per (camera, t) and seeded by the episode seed so
    every method evaluated on the same episode sees identical estimates.
    """

    def __init__(self, scene: Scene, t0: int, cfg: RolloutConfig, seed: int, target: int | None = None,
                 start_camera: int | None = None):
        self.scene, self.t0, self.cfg, self.seed = scene, t0, cfg, seed
        rng = np.random.default_rng([seed, 17])
        n_persons = len(scene.persons)
        self.target = int(rng.integers(n_persons)) if target is None else target
        self.start_camera = int(rng.integers(len(scene.rig))) if start_camera is None else start_camera
        self.times = list(range(t0, t0 + cfg.sequence_length))
        if self.times[-1] >= scene.length:
            raise ValueError("active-sequence runs past the end of the scene")
        outside = [t for t in range(scene.length) if t not in self.times] or list(range(scene.length))
        # signatures are time-invariant, so sample timesteps are bookkeeping only
        self.model_times = rng.choice(outside, cfg.n_appearance_samples)
        self.models = []
        for k, person in enumerate(scene.persons):
            feats = [instance_feature(rng, person.signature, cfg.estimator)
                     for _ in range(cfg.n_appearance_samples)]
            self.models.append(build_appearance_model(feats, k))
        self._cache = {}

    @property
    def rig(self) -> DomeRig:
        return self.scene.rig

    def look(self, camera: int, t: int):
        """(detections, base map, {person: estimate}) for a view, cached."""
        key = (camera, t)
        hit = self._cache.get(key)
        if hit is None:
            dets, bmap = observe(self.scene, self.rig[camera], t, self.seed, self.cfg.estimator)
            assignment = match_detections(dets, self.models, self.cfg.cost_threshold)
            matched = {pid: dets[j].pose_estimate for j, pid, _ in assignment.pairs}
            hit = (dets, bmap, matched)
            self._cache[key] = hit
        return hit

    def persons_of_interest(self) -> list[int]:
        return [self.target] if self.cfg.mode == SINGLE else list(range(len(self.scene.persons)))


class _ViewState:
    """Per-active-view bookkeeping shared by agent and baselines."""

    def __init__(self, ep: Episode, t: int, priors: dict, history: list):
        self.ep, self.t = ep, t
        self.priors = priors  # person -> pose or absent
        self.history = history
        self.estimates = {k: [] for k in ep.persons_of_interest()}
        self.visited: list[int] = []
        self.canvas = empty_canvas(ep.rig)
        self.n_detected = 0

    def add_view(self, camera: int):
        dets, bmap, matched = self.ep.look(camera, self.t)
        for k in self.estimates:
            if k in matched:
                self.estimates[k].append(matched[k])
        self.visited.append(camera)
        self.canvas = update_canvas(self.canvas, self.ep.rig[camera])
        self.n_detected = len(dets)
        return dets, bmap, matched

    def fused(self, extra: dict | None = None) -> dict:
        out = {}
        for k, ests in self.estimates.items():
            ests = ests + ([extra[k]] if extra and k in extra else [])
            prior = self.priors.get(k)
            if not ests and prior is None:
                out[k] = None
            else:
                out[k] = fuse(prior, ests)
        return out

    def error(self, fused: dict) -> float:
        """Person-averaged MPJPE; unestimated persons cost e_miss."""
        errs = []
        for k, pose in fused.items():
            if pose is None:
                errs.append(self.ep.cfg.e_miss)
            else:
                errs.append(reconstruction_error(pose, self.ep.scene.pose(k, self.t)))
        return float(np.mean(errs))

    def candidate_error(self, camera: int) -> float:
        _, _, matched = self.ep.look(camera, self.t)
        return self.error(self.fused({k: matched[k] for k in self.estimates if k in matched}))

    def pose_summary(self, poses: dict):
        """Single target: its pose. Multi target: mean over persons with a pose."""
        vals = [p for p in poses.values() if p is not None]
        if not vals:
            return None
        return vals[0] if len(vals) == 1 else np.mean(vals, axis=0)


# ---------------------------------------------------------------------------
# policies
# ---------------------------------------------------------------------------


@dataclass
class Decision:
    continue_flag: bool
    camera: int | None = None  # explicit next camera (baselines)
    action: PolicyAction | None = None
    log_density: float = 0.0
    state: AgentState | None = None


class AgentPolicy:
    """Stochastic learned policy driving relative viewpoint moves."""

    name = "Pose-DRL"

    def __init__(self, params, cfg: PolicyConfig, precisions, rng: np.random.Generator):
        self.params, self.cfg, self.precisions, self.rng = params, cfg, precisions, rng

    def begin_view(self, vs: _ViewState):
        pass

    def decide(self, vs: _ViewState, camera: int, dets, bmap, matched) -> Decision:
        current = vs.pose_summary({k: matched.get(k) for k in vs.estimates})
        partial = vs.pose_summary(vs.fused())
        aux = (len(vs.visited) - 1, vs.n_detected)
        state = featurize(bmap, current, partial, vs.history, vs.canvas, aux, vs.ep.rig[camera],
                          base_only=self.cfg.base_only)
        action, logp = sample_action(self.params, state, self.precisions, self.rng, self.cfg.kappa)
        return Decision(action.continue_flag, None, action, logp, state)


class RandomPolicy:
    name = "Random"

    def __init__(self, k: int, rng: np.random.Generator):
        self.k, self.rng = k, rng

    def begin_view(self, vs: _ViewState):
        n = len(vs.ep.rig)
        if self.k > n:
            raise ValueError("k exceeds the number of cameras")
        self._order = None

    def decide(self, vs, camera, dets, bmap, matched) -> Decision:
        if self._order is None:
            rest = [c for c in range(len(vs.ep.rig)) if c != camera]
            self._order = [int(c) for c in self.rng.permutation(rest)]
        if len(vs.visited) >= self.k:
            return Decision(True)
        nxt = next(c for c in self._order if c not in vs.visited)
        return Decision(False, nxt)


def max_azim_targets(start_azimuth: float, k: int) -> np.ndarray:
    """Azimuths spaced 2*pi/k apart starting from the initial camera."""
    return wrap_angle(start_azimuth + 2 * np.pi * np.arange(k) / k)


class MaxAzimPolicy:
    name = "Max-Azim"

    def __init__(self, k: int, rng: np.random.Generator):
        self.k, self.rng = k, rng

    def begin_view(self, vs: _ViewState):
        if self.k > len(vs.ep.rig):
            raise ValueError("k exceeds the number of cameras")
        self._targets = None

    def decide(self, vs, camera, dets, bmap, matched) -> Decision:
        rig = vs.ep.rig
        if self._targets is None:
            self._targets = max_azim_targets(rig[camera].azimuth, self.k)
        i = len(vs.visited)
        if i >= self.k:
            return Decision(True)
        el = self.rng.uniform(-rig.kappa, rig.kappa)
        return Decision(False, nearest_camera_to(rig, self._targets[i], el, exclude=vs.visited).id)


class OraclePolicy:
    """Greedy ground-truth selector: next view minimizes the fused error."""

    name = "Oracle"

    def __init__(self, k: int):
        self.k = k

    def begin_view(self, vs: _ViewState):
        if self.k > len(vs.ep.rig):
            raise ValueError("k exceeds the number of cameras")

    def decide(self, vs, camera, dets, bmap, matched) -> Decision:
        if len(vs.visited) >= self.k:
            return Decision(True)
        best, best_err = None, math.inf
        for c in range(len(vs.ep.rig)):
            if c in vs.visited:
                continue
            err = vs.candidate_error(c)
            if err < best_err:
                best, best_err = c, err
        return Decision(False, best)


# ---------------------------------------------------------------------------
# rollouts
# ---------------------------------------------------------------------------


def run_active_view(ep: Episode, t: int, start_camera: int, policy, priors: dict, history: list):
    """Visit views at time ``t`` until the policy continues or the cap is hit."""
    cfg = ep.cfg
    vs = _ViewState(ep, t, priors, history)
    policy.begin_view(vs)
    cap = cfg.view_cap if cfg.fixed_k is None else min(cfg.view_cap, cfg.fixed_k)
    steps = []
    camera = start_camera
    while True:
        dets, bmap, matched = vs.add_view(camera)
        err = vs.error(vs.fused())
        d = policy.decide(vs, camera, dets, bmap, matched)
        forced = False
        cont = d.continue_flag
        if cfg.fixed_k is not None:
            cont = len(vs.visited) >= cap
            forced = True
        elif len(vs.visited) >= cap and not cont:
            cont, forced = True, True
        step = StepRecord(t, camera, err, d.state, d.action, d.log_density, cont, forced=forced)
        if d.action is not None and d.action.continue_flag != cont:
            step.action = PolicyAction(d.action.delta_azimuth, d.action.delta_elevation, cont)
        steps.append(step)
        if cont:
            break
        if d.camera is not None:
            nxt = d.camera
        else:
            nxt = nearest_camera(ep.rig, ep.rig[camera], d.action.delta_azimuth, d.action.delta_elevation).id
        step.next_camera = nxt
        step.revisit = nxt in vs.visited
        camera = nxt
    fused = vs.fused()
    view = ViewRecord(t, steps, {
        k: None if p is None else FusedEstimate(p, tuple(vs.visited), priors.get(k) is not None)
        for k, p in fused.items()
    }, steps[-1].error)
    assign_rewards(view, cfg)
    return view


def run_active_sequence(ep: Episode, policy, times=None) -> Trajectory:
    """Chain active-views; the fused result feeds the next view as prior and history."""
    times = ep.times if times is None else times
    camera = ep.start_camera
    priors: dict = {}
    history: list = []
    views = []
    for t in times:
        view = run_active_view(ep, t, camera, policy, {} if ep.cfg.reset else priors, history)
        views.append(view)
        fused = {k: (None if f is None else f.pose) for k, f in view.fused.items()}
        priors = {k: p for k, p in fused.items() if p is not None}
        summary = _summary(fused)
        if summary is not None:
            history = [summary] + history[:3]
        camera = view.steps[-1].camera
    return Trajectory(views, ep.cfg.mode, getattr(policy, "name", ""), len(ep.rig))


def _summary(poses: dict):
    vals = [p for p in poses.values() if p is not None]
    if not vals:
        return None
    return vals[0] if len(vals) == 1 else np.mean(vals, axis=0)
