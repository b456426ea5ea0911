"""Experiment configuration, orchestration, result tables and runtime accounting."""

from __future__ import annotations

import csv
import dataclasses
import io
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import policy as pol
from .rollout import (
    AgentPolicy,
    Episode,
    MaxAzimPolicy,
    OraclePolicy,
    RandomPolicy,
    RolloutConfig,
    Trajectory,
    run_active_sequence,
)
from .scenesim import EstimatorConfig, SceneConfig, generate_scene
from .trainer import TrainConfig, TrainResult, train

log = logging.getLogger(__name__)

CONFIG_HEADER = "activepose-config v1"
AGENT = "Pose-DRL"
BASELINES = ("Random", "Max-Azim", "Oracle")
RESULT_FIELDS = ("model", "views_mode", "seed", "episode", "error_mm", "views", "runtime_s")

# per-view cost of the pose estimator and detector, per-action policy overhead
ESTIMATOR_SECONDS = 0.50
DETECTOR_SECONDS = 0.11
ACTION_SECONDS = 0.01


class ConfigError(ValueError):
    """Malformed or inconsistent configuration (exit status 1)."""


class MissingArtifact(FileNotFoundError):
    """A checkpoint or log the command depends on does not exist (exit status 2)."""


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentConfig:
    # scenes
    n_cameras: int = 30
    kappa: float = 1.0
    persons_min: int = 3
    persons_max: int = 7
    scene_length: int = 40
    n_occluders: int = 0
    train_scenes: int = 10
    val_scenes: int = 4
    test_scenes: int = 6
    train_seed_start: int = 1000
    val_seed_start: int = 2000
    test_seed_start: int = 3000
    # estimator
    sigma0: float = 40.0
    a_occ: float = 4.0
    a_view: float = 1.5
    a_dist: float = 0.5
    p_fail: float = 0.05
    detect_threshold: float = 0.3
    sigma_feat: float = 0.1
    # task and rewards
    mode: str = "S"
    sequence_length: int = 10
    max_views_S: int = 8
    max_views_M: int = 10
    tau: float = 0.07
    epsilon_penalty: float = 2.5
    cost_threshold: float = 0.5
    L: int = 10
    e_miss: float = 500.0
    reset: bool = False
    # policy
    w: int = 9
    h: int = 5
    conv1_channels: int = 16
    conv2_channels: int = 8
    hidden1: int = 64
    hidden2: int = 32
    init_scale: float = 0.05
    base_only: bool = False
    # training
    episodes: int = 2000
    batch: int = 5
    lr: float = 1e-3
    lr_halving_1: int = 18_000
    lr_halving_2: int = 36_000
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    m_a_start: float = 1.0
    m_e_start: float = 10.0
    m_a_end: float = 25.0
    m_e_end: float = 50.0
    anneal_fraction: float = 1.0
    normalize_returns: bool = True
    return_horizon: str = "view"
    eval_every: int = 250
    val_episodes: int = 12
    # evaluation
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    test_episodes: int = 30
    eval_seed: int = 12345
    curve_max_k: int = 8
    estimator_seconds: float = ESTIMATOR_SECONDS
    detector_seconds: float = DETECTOR_SECONDS
    action_seconds: float = ACTION_SECONDS

    def __post_init__(self):
        if self.mode not in ("S", "M"):
            raise ConfigError(f"mode must be S or M, got {self.mode!r}")
        if not 1 <= self.persons_min <= self.persons_max <= 7:
            raise ConfigError("person counts must satisfy 1 <= persons_min <= persons_max <= 7")
        if min(self.train_scenes, self.val_scenes, self.test_scenes) < 1:
            raise ConfigError("every scene split needs at least one scene")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if self.return_horizon not in ("sequence", "view"):
            raise ConfigError("return_horizon must be sequence or view")
        for name in ("lr", "tau", "cost_threshold", "e_miss", "sigma0", "m_a_end", "m_e_end"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        try:
            self.scene_config()
        except ValueError as e:
            raise ConfigError(str(e)) from None
        splits = self.split_seeds()
        names = list(splits)
        for i, a in enumerate(names):
            for b in names[i + 1:]:
                if set(splits[a]) & set(splits[b]):
                    raise ConfigError(f"scene seeds of {a} and {b} splits overlap")

    # -- derived objects ----------------------------------------------------

    def split_seeds(self) -> dict[str, list[int]]:
        return {
            "train": list(range(self.train_seed_start, self.train_seed_start + self.train_scenes)),
            "val": list(range(self.val_seed_start, self.val_seed_start + self.val_scenes)),
            "test": list(range(self.test_seed_start, self.test_seed_start + self.test_scenes)),
        }

    def scene_config(self) -> SceneConfig:
        return SceneConfig(persons=(self.persons_min, self.persons_max), length=self.scene_length,
                           n_occluders=self.n_occluders, n_cameras=self.n_cameras, kappa=self.kappa)

    def estimator(self) -> EstimatorConfig:
        return EstimatorConfig(sigma0=self.sigma0, a_occ=self.a_occ, a_view=self.a_view, a_dist=self.a_dist,
                               p_fail=self.p_fail, detect_threshold=self.detect_threshold,
                               sigma_feat=self.sigma_feat)

    def rollout_config(self, fixed_k: int | None = None, reset: bool | None = None) -> RolloutConfig:
        return RolloutConfig(
            mode=self.mode, max_views=self.max_views_S if self.mode == "S" else self.max_views_M,
            sequence_length=self.sequence_length, tau=self.tau, revisit_penalty=self.epsilon_penalty,
            cost_threshold=self.cost_threshold, e_miss=self.e_miss, n_appearance_samples=self.L,
            reset=self.reset if reset is None else reset, fixed_k=fixed_k, estimator=self.estimator(),
        )

    def policy_config(self, base_only: bool | None = None) -> pol.PolicyConfig:
        return pol.PolicyConfig(kappa=self.kappa, conv_channels=(self.conv1_channels, self.conv2_channels),
                                hidden=(self.hidden1, self.hidden2), canvas_shape=(self.w, self.h),
                                init_scale=self.init_scale,
                                base_only=self.base_only if base_only is None else base_only)

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(
            episodes=self.episodes, batch=self.batch, lr=self.lr, lr_halvings=(self.lr_halving_1, self.lr_halving_2),
            beta1=self.beta1, beta2=self.beta2, adam_eps=self.adam_eps,
            precision_start=(self.m_a_start, self.m_e_start), precision_end=(self.m_a_end, self.m_e_end),
            anneal_fraction=self.anneal_fraction, normalize=self.normalize_returns,
            return_horizon=self.return_horizon, eval_every=self.eval_every, val_episodes=self.val_episodes,
            seed=seed,
        )

    @property
    def test_precisions(self) -> tuple[float, float]:
        return (self.m_a_end, self.m_e_end)

    @property
    def view_seconds(self) -> float:
        return self.estimator_seconds + self.detector_seconds

    # -- text format ---------------------------------------------------------

    def to_text(self) -> str:
        lines = [CONFIG_HEADER]
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, bool):
                v = "true" if v else "false"
            elif isinstance(v, tuple):
                v = ",".join(map(str, v))
            else:
                v = repr(v) if isinstance(v, float) else str(v)
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ExperimentConfig":
        lines = [ln.split("#", 1)[0].strip() for ln in text.splitlines()]
        lines = [ln for ln in lines if ln]
        if not lines or lines[0] != CONFIG_HEADER:
            raise ConfigError(f"config must start with the line {CONFIG_HEADER!r}")
        return cls.from_pairs(_parse_pairs(lines[1:]))

    @classmethod
    def from_pairs(cls, pairs: dict[str, str]) -> "ExperimentConfig":
        types = {f.name: f for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, raw in pairs.items():
            if key not in types:
                raise ConfigError(f"unknown config key {key!r}")
            default = types[key].default
            kwargs[key] = _coerce(key, raw, default)
        return cls(**kwargs)

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


def _parse_pairs(lines) -> dict[str, str]:
    pairs = {}
    for ln in lines:
        if "=" not in ln:
            raise ConfigError(f"expected 'key = value', got {ln!r}")
        key, val = (s.strip() for s in ln.split("=", 1))
        if not key or not val:
            raise ConfigError(f"expected 'key = value', got {ln!r}")
        if key in pairs:
            raise ConfigError(f"duplicate config key {key!r}")
        pairs[key] = val
    return pairs


def _coerce(key: str, raw: str, default):
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(int(x) for x in raw.split(",") if x.strip())
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


def load_config(path) -> ExperimentConfig:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    return ExperimentConfig.from_text(p.read_text())


# ---------------------------------------------------------------------------
# scenes and episodes
# ---------------------------------------------------------------------------


def build_scenes(cfg: ExperimentConfig) -> dict[str, list]:
    sc = cfg.scene_config()
    return {name: [generate_scene(sc, s) for s in seeds] for name, seeds in cfg.split_seeds().items()}


def test_episodes(cfg: ExperimentConfig, scenes, rcfg: RolloutConfig) -> list[Episode]:
    """Fixed test episodes; a given index has the same scene, window, target and
    initial camera under every rollout config and method."""
    rng = np.random.default_rng([cfg.eval_seed, 99])
    out = []
    for i in range(cfg.test_episodes):
        scene = scenes[i % len(scenes)]
        t0 = int(rng.integers(0, scene.length - rcfg.sequence_length + 1))
        out.append(Episode(scene, t0, rcfg, seed=int(rng.integers(2**31))))
    return out


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


def matched_view_budget(mean_views: float) -> int:
    """Fixed view count matching an auto-mode average: round up."""
    # tolerance keeps an exact integer mean from being bumped by float noise
    return max(1, math.ceil(mean_views - 1e-9))


def runtime_accounting(trajectory: Trajectory, view_seconds: float = ESTIMATOR_SECONDS + DETECTOR_SECONDS,
                       action_seconds: float = ACTION_SECONDS, oracle: bool | None = None) -> float:
    """Simulated seconds spent on a trajectory.

    Every visited view pays the estimator and detector; every policy action
    (including the final continue) pays the per-action overhead. The greedy
    oracle must process all N cameras of each time-freeze to rank them, and
    pays that on top.
    """
    if oracle is None:
        oracle = trajectory.policy == OraclePolicy.name
    views = sum(v.n_views for v in trajectory.views)
    actions = views
    total = views * view_seconds + actions * action_seconds
    if oracle:
        total += len(trajectory.views) * trajectory.n_cameras * view_seconds
    return total


def confidence_halfwidth(values) -> float:
    """95% normal-approximation half-width, 1.96 standard errors."""
    x = np.asarray(values, dtype=np.float64)
    if x.size < 2:
        return 0.0
    return float(1.96 * x.std(ddof=1) / math.sqrt(x.size))


@dataclass
class ResultRow:
    model: str
    views_mode: str
    error_mm: float
    views: float
    seeds: int
    ci_mm: float
    runtime_s: float = 0.0


@dataclass
class ResultTable:
    rows: list[ResultRow] = field(default_factory=list)

    def get(self, model: str, views_mode: str | None = None) -> ResultRow:
        for r in self.rows:
            if r.model == model and (views_mode is None or r.views_mode == views_mode):
                return r
        raise KeyError((model, views_mode))

    def to_text(self) -> str:
        out = [f"{'model':<22}{'views':>8}{'error mm/joint':>16}{'mean views':>12}{'95% CI':>10}{'seeds':>7}"
               f"{'runtime s':>11}"]
        for r in self.rows:
            out.append(f"{r.model:<22}{r.views_mode:>8}{r.error_mm:>16.2f}{r.views:>12.2f}{r.ci_mm:>10.2f}"
                       f"{r.seeds:>7d}{r.runtime_s:>11.3f}")
        return "\n".join(out) + "\n"


def table_from_records(records) -> ResultTable:
    """Aggregate per-episode records: per-seed means, then mean and CI over seeds."""
    groups: dict[tuple[str, str], dict[int, list]] = {}
    for r in records:
        groups.setdefault((r["model"], r["views_mode"]), {}).setdefault(int(r["seed"]), []).append(r)
    table = ResultTable()
    for (model, mode), by_seed in groups.items():
        seeds = sorted(by_seed)
        err = [np.mean([float(x["error_mm"]) for x in by_seed[s]]) for s in seeds]
        views = [np.mean([float(x["views"]) for x in by_seed[s]]) for s in seeds]
        rt = [np.mean([float(x["runtime_s"]) for x in by_seed[s]]) for s in seeds]
        table.rows.append(ResultRow(model, mode, float(np.mean(err)), float(np.mean(views)), len(seeds),
                                    confidence_halfwidth(err), float(np.mean(rt))))
    return table


def write_records(path, records) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=RESULT_FIELDS)
        w.writeheader()
        for r in records:
            w.writerow({k: (repr(r[k]) if isinstance(r[k], float) else r[k]) for k in RESULT_FIELDS})


def read_records(path) -> list[dict]:
    p = Path(path)
    if not p.exists():
        raise MissingArtifact(f"missing per-episode log: {p}")
    with open(p, newline="") as fh:
        return list(csv.DictReader(fh))


def audit(results_csv, table_txt) -> list[str]:
    """Re-derive a table from per-episode logs; returns mismatching lines (empty if clean)."""
    tp = Path(table_txt)
    if not tp.exists():
        raise MissingArtifact(f"missing table: {tp}")
    rebuilt = table_from_records(read_records(results_csv)).to_text().splitlines()
    stored = tp.read_text().splitlines()
    bad = [f"stored:  {a}\nrebuilt: {b}" for a, b in zip(stored, rebuilt) if a != b]
    if len(stored) != len(rebuilt):
        bad.append(f"row count differs: stored {len(stored)} rebuilt {len(rebuilt)}")
    return bad


# ---------------------------------------------------------------------------
# orchestration
# ---------------------------------------------------------------------------


def checkpoint_path(out_dir, seed: int, base_only: bool = False) -> Path:
    tag = "pose-drl-base-only" if base_only else "pose-drl"
    return Path(out_dir) / "checkpoints" / f"{tag}_seed{seed}"


def train_agent(cfg: ExperimentConfig, seed: int, scenes=None, base_only: bool = False) -> TrainResult:
    scenes = scenes or build_scenes(cfg)
    return train(cfg.train_config(seed), cfg.policy_config(base_only), cfg.rollout_config(),
                 scenes["train"], scenes["val"])


def save_agent(path, result: TrainResult, cfg: ExperimentConfig, seed: int) -> None:
    pol.save_checkpoint(path, result.params, {
        "seed": seed, "episodes": cfg.episodes, "best_step": result.best_step,
        "best_val_error": repr(result.best_val_error), "schedule_step": cfg.episodes,
        "m_a": cfg.m_a_end, "m_e": cfg.m_e_end,
    })


def load_agent(path, pcfg: pol.PolicyConfig) -> dict:
    p = Path(path)
    if not p.with_suffix(".bin").exists():
        raise MissingArtifact(f"missing checkpoint: {p.with_suffix('.bin')}")
    params, _ = pol.load_checkpoint(p)
    want = pol.param_shapes(pcfg)
    for name, shape in want.items():
        if name not in params or params[name].shape != tuple(shape):
            raise ConfigError(f"checkpoint {p} does not match the configured network ({name})")
    return params


def make_policy(name: str, k: int | None, cfg: ExperimentConfig, seed: int, episode: int, params=None,
                pcfg=None):
    rng = np.random.default_rng([seed, episode, 5])
    if name == AGENT or name.startswith(AGENT):
        return AgentPolicy(params, pcfg, cfg.test_precisions, rng)
    if name == "Random":
        return RandomPolicy(k, rng)
    if name == "Max-Azim":
        return MaxAzimPolicy(k, rng)
    if name == "Oracle":
        return OraclePolicy(k)
    raise ConfigError(f"unknown method {name!r}")


def evaluate(cfg: ExperimentConfig, scenes, method: str, seed: int, k: int | None = None, params=None,
             pcfg=None, label: str | None = None, reset: bool | None = None) -> list[dict]:
    """Per-episode records for one method and seed (``k=None`` is auto mode)."""
    rcfg = cfg.rollout_config(fixed_k=k if method.startswith(AGENT) else None, reset=reset)
    records = []
    for i, ep in enumerate(test_episodes(cfg, scenes["test"], rcfg)):
        traj = run_active_sequence(ep, make_policy(method, k, cfg, seed, i, params, pcfg))
        records.append({
            "model": label or method,
            "views_mode": "auto" if k is None else str(k),
            "seed": seed,
            "episode": i,
            "error_mm": traj.mean_error,
            "views": traj.mean_views,
            "runtime_s": runtime_accounting(traj, cfg.view_seconds, cfg.action_seconds) / len(traj.views),
        })
    return records


def mean_views(records) -> float:
    return float(np.mean([float(r["views"]) for r in records]))


def compare(cfg: ExperimentConfig, agents: dict[int, dict], scenes=None) -> tuple[list[dict], int]:
    """Agent (auto and fixed) and baselines at the matched view budget."""
    scenes = scenes or build_scenes(cfg)
    pcfg = cfg.policy_config()
    records = []
    for seed, params in agents.items():
        records += evaluate(cfg, scenes, AGENT, seed, None, params, pcfg)
    k = matched_view_budget(mean_views(records))
    for seed, params in agents.items():
        records += evaluate(cfg, scenes, AGENT, seed, k, params, pcfg)
    for name in BASELINES:
        for seed in agents:
            records += evaluate(cfg, scenes, name, seed, k)
    return records, k


def curve(cfg: ExperimentConfig, agents: dict[int, dict], scenes=None, ks=None) -> list[dict]:
    """Error and accounted runtime against a fixed number of views for each method."""
    scenes = scenes or build_scenes(cfg)
    pcfg = cfg.policy_config()
    ks = list(ks or range(1, cfg.curve_max_k + 1))
    rows = []
    for name in (AGENT,) + BASELINES:
        for k in ks:
            recs = []
            for seed, params in agents.items():
                recs += evaluate(cfg, scenes, name, seed, k, params, pcfg)
            t = table_from_records(recs).rows[0]
            rows.append({"model": name, "k": k, "error_mm": t.error_mm, "ci_mm": t.ci_mm, "views": t.views,
                         "runtime_s": t.runtime_s})
    return rows


def ablate(cfg: ExperimentConfig, agents: dict[int, dict], base_agents: dict[int, dict], k: int,
           scenes=None) -> list[dict]:
    """Full model against the base-map-only and reset variants, all at ``k`` views."""
    scenes = scenes or build_scenes(cfg)
    records = []
    full, base = cfg.policy_config(base_only=False), cfg.policy_config(base_only=True)
    for seed, params in agents.items():
        records += evaluate(cfg, scenes, AGENT, seed, k, params, full, label="full", reset=False)
        records += evaluate(cfg, scenes, AGENT, seed, k, params, full, label="reset", reset=True)
    for seed, params in base_agents.items():
        records += evaluate(cfg, scenes, AGENT, seed, k, params, base, label="B^t only", reset=False)
    return records


def write_rows(path, rows, fields) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(r[k]) if isinstance(r[k], float) else r[k]) for k in fields})


def table_text(records) -> str:
    return table_from_records(records).to_text()


def records_csv_text(records) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=RESULT_FIELDS)
    w.writeheader()
    for r in records:
        w.writerow({k: (repr(r[k]) if isinstance(r[k], float) else r[k]) for k in RESULT_FIELDS})
    return buf.getvalue()
