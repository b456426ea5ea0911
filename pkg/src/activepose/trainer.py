"""REINFORCE training with batch-normalized returns and Adam."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import policy as pol
from .rollout import AgentPolicy, Episode, RolloutConfig, Trajectory, run_active_sequence

log = logging.getLogger(__name__)

LOG_FIELDS = ("step", "return_mean", "error_mm", "views_mean", "grad_norm", "seconds")


@dataclass(frozen=True)
class TrainConfig:
    episodes: int = 2000
    batch: int = 5
    lr: float = 1e-3
    lr_halvings: tuple[int, ...] = (18_000, 36_000)  # agent steps
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    precision_start: tuple[float, float] = (1.0, 10.0)
    precision_end: tuple[float, float] = (25.0, 50.0)
    anneal_fraction: float = 1.0
    normalize: bool = True
    return_horizon: str = "sequence"  # reward-to-go over the whole sequence or each active-view
    eval_every: int = 250  # episodes; 0 disables validation
    val_episodes: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.batch < 1:
            raise ValueError("batch must be >= 1")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if self.return_horizon not in ("sequence", "view"):
            raise ValueError(f"unknown return horizon {self.return_horizon!r}")

    def schedule(self) -> pol.PrecisionSchedule:
        return pol.PrecisionSchedule(
            self.precision_start, self.precision_end,
            max(1, int(round(self.episodes * self.anneal_fraction))),
        )

    def lr_at(self, agent_steps: int) -> float:
        return self.lr * 0.5 ** sum(agent_steps >= s for s in self.lr_halvings)


@dataclass
class TrainLog:
    rows: list[dict] = field(default_factory=list)

    def append(self, **row):
        for k in LOG_FIELDS:
            if not np.isfinite(row[k]):
                raise ValueError(f"non-finite {k} in training log")
        self.rows.append({k: row[k] for k in LOG_FIELDS})

    def column(self, key: str) -> np.ndarray:
        return np.array([r[key] for r in self.rows])

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=LOG_FIELDS)
            w.writeheader()
            w.writerows(self.rows)


class Adam:
    def __init__(self, params: dict, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: dict, lr: float) -> dict:
        """One descent step on ``grads``; returns new parameter arrays."""
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        out = {}
        for k, p in params.items():
            g = grads[k]
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            m_hat = self.m[k] / (1 - b1 ** self.t)
            v_hat = self.v[k] / (1 - b2 ** self.t)
            out[k] = p - lr * m_hat / (np.sqrt(v_hat) + self.eps)
        return out


def compute_returns(trajectory, horizon: str = "sequence") -> np.ndarray:
    """Undiscounted reward-to-go for every step.

    With ``horizon="view"`` the sum stops at the end of each active-view.
    """
    if not isinstance(trajectory, Trajectory):
        r = np.asarray(trajectory, dtype=np.float64)
        return np.cumsum(r[::-1])[::-1].copy()
    if horizon == "view":
        return np.concatenate([compute_returns([s.reward for s in v.steps]) for v in trajectory.views])
    return compute_returns(trajectory.rewards)


def normalize_returns(batch) -> list[np.ndarray]:
    """Zero-mean, unit-variance returns pooled over every step in the batch.

    A batch with no spread carries no learning signal and maps to zeros.
    """
    arrays = [np.atleast_1d(np.asarray(g, dtype=np.float64)) for g in batch]
    pooled = np.concatenate(arrays) if arrays else np.zeros(0)
    std = pooled.std() if pooled.size else 0.0
    if pooled.size < 2 or std < 1e-12:
        log.info("return batch has zero variance; skipping gradient signal")
        return [np.zeros_like(a) for a in arrays]
    mean = pooled.mean()
    return [(a - mean) / std for a in arrays]


def policy_gradient(params, trajectories, advantages, precisions, kappa: float) -> dict:
    """Ascent direction: mean over episodes of sum_t A_t grad log pi(a_t|s_t)."""
    states, actions, weights = [], [], []
    for traj, adv in zip(trajectories, advantages):
        for s, a in zip(traj.steps, adv):
            if s.state is None or s.forced:
                continue
            states.append(s.state)
            actions.append(s.action)
            weights.append(a)
    if not states:
        return {k: np.zeros_like(v) for k, v in params.items()}
    g = pol.weighted_grad_log_density(params, states, actions, weights, precisions, kappa)
    n = len(trajectories)
    return {k: v / n for k, v in g.items()}


def train_step(params, trajectories, config: TrainConfig, step: int, adam: Adam, precisions, kappa: float,
               agent_steps: int = 0):
    """One REINFORCE update; returns (new params, gradient norm)."""
    returns = [compute_returns(t, config.return_horizon) for t in trajectories]
    adv = normalize_returns(returns) if config.normalize else returns
    g = policy_gradient(params, trajectories, adv, precisions, kappa)
    norm = float(np.sqrt(sum(float(np.sum(v * v)) for v in g.values())))
    if not np.isfinite(norm):
        bad = [k for k, v in g.items() if not np.all(np.isfinite(v))]
        raise FloatingPointError(f"non-finite policy gradient in {bad} at step {step}")
    new = adam.step(params, {k: -v for k, v in g.items()}, config.lr_at(agent_steps))
    return new, norm


def _sample_episode(rng, scenes, rcfg: RolloutConfig) -> Episode:
    scene = scenes[int(rng.integers(len(scenes)))]
    t0 = int(rng.integers(0, scene.length - rcfg.sequence_length + 1))
    return Episode(scene, t0, rcfg, seed=int(rng.integers(2**31)))


def evaluation_episodes(scenes, rcfg: RolloutConfig, n: int, seed: int) -> list[Episode]:
    """Deterministic episode list spread round-robin over ``scenes``."""
    rng = np.random.default_rng([seed, 99])
    out = []
    for i in range(n):
        scene = scenes[i % len(scenes)]
        t0 = int(rng.integers(0, scene.length - rcfg.sequence_length + 1))
        out.append(Episode(scene, t0, rcfg, seed=int(rng.integers(2**31))))
    return out


def evaluate_agent(params, pcfg: pol.PolicyConfig, episodes, precisions, seed: int):
    trajs = []
    for i, ep in enumerate(episodes):
        agent = AgentPolicy(params, pcfg, precisions, np.random.default_rng([seed, i, 5]))
        trajs.append(run_active_sequence(ep, agent))
    return trajs


@dataclass
class TrainResult:
    params: dict  # best on validation (or final when validation is off)
    final_params: dict
    log: TrainLog
    best_val_error: float
    best_step: int


def train(config: TrainConfig, pcfg: pol.PolicyConfig, rcfg: RolloutConfig, train_scenes, val_scenes=(),
          init=None) -> TrainResult:
    """Train from scratch (or ``init``); deterministic given ``config.seed``."""
    rng = np.random.default_rng([config.seed, 1])
    params = init if init is not None else pol.init_params(pcfg, config.seed)
    params = {k: v.copy() for k, v in params.items()}
    adam = Adam(params, config.beta1, config.beta2, config.adam_eps)
    sched = config.schedule()
    tlog = TrainLog()
    val_eps = evaluation_episodes(val_scenes, rcfg, config.val_episodes, config.seed) if val_scenes else []
    best = (np.inf, 0, params)
    agent_steps = 0
    done = 0
    t_start = time.perf_counter()
    it = 0
    next_eval = config.eval_every

    def validate():
        nonlocal best
        trajs = evaluate_agent(params, pcfg, val_eps, config.precision_end, config.seed)
        err = float(np.mean([t.mean_error for t in trajs]))
        if err < best[0]:
            best = (err, done, {k: v.copy() for k, v in params.items()})
        log.debug("validation at %d episodes: %.2f mm", done, err)

    while done < config.episodes:
        n = min(config.batch, config.episodes - done)
        precisions = sched.at(done)
        trajs = []
        for _ in range(n):
            ep = _sample_episode(rng, train_scenes, rcfg)
            agent = AgentPolicy(params, pcfg, precisions, np.random.default_rng(int(rng.integers(2**31))))
            trajs.append(run_active_sequence(ep, agent))
        params, gnorm = train_step(params, trajs, config, it, adam, precisions, pcfg.kappa, agent_steps)
        agent_steps += sum(len(t.steps) for t in trajs)
        done += n
        it += 1
        tlog.append(
            step=done,
            return_mean=float(np.mean([t.rewards.sum() for t in trajs])),
            error_mm=float(np.mean([t.mean_error for t in trajs])),
            views_mean=float(np.mean([t.mean_views for t in trajs])),
            grad_norm=gnorm,
            seconds=time.perf_counter() - t_start,
        )
        if val_eps and config.eval_every and done >= next_eval:
            validate()
            next_eval += config.eval_every
    if val_eps and best[1] != done:
        validate()
    chosen = best[2] if val_eps else params
    return TrainResult(chosen, params, tlog, best[0], best[1])
