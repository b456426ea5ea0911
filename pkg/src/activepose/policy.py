"""Viewpoint policy: state packing, a small numpy network, von Mises heads.

The network is a shared convolutional trunk over the base feature map
followed by two tanh MLP branches: one producing azimuth/elevation means for
von Mises distributions, one producing the continue probability. Gradients of
log pi(action | state) are computed analytically by reverse-mode
accumulation over a batch of steps.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .dome import AngleCanvas, CameraSpec
from .scenesim import MAP_SHAPE, N_JOINTS

POSE_DIM = 3 * N_JOINTS
HISTORY = 4
POSE_SLOTS = 2 + HISTORY  # current, partial fusion, history
LOG_2PI = math.log(2.0 * math.pi)


# ---------------------------------------------------------------------------
# Bessel I0 and von Mises densities
# ---------------------------------------------------------------------------

_SERIES_LIMIT = 30.0


def _i0_series(x: float) -> float:
    q = 0.25 * x * x
    term = total = 1.0
    k = 0
    while term > 1e-17 * total:
        k += 1
        term *= q / (k * k)
        total += term
    return total


def _i0_asym_sum(x: float) -> float:
    # sum_k ((2k-1)!!)^2 / (k! 8^k x^k)
    term = total = 1.0
    for k in range(1, 30):
        term *= (2 * k - 1) ** 2 / (8.0 * k * x)
        total += term
        if term < 1e-17 * total:
            break
    return total


def bessel_i0(x: float) -> float:
    """Modified Bessel function of the first kind, order zero."""
    x = abs(float(x))
    if x <= _SERIES_LIMIT:
        return _i0_series(x)
    return math.exp(x) / math.sqrt(2 * math.pi * x) * _i0_asym_sum(x)


def log_bessel_i0(x: float) -> float:
    x = abs(float(x))
    if x <= _SERIES_LIMIT:
        return math.log(_i0_series(x))
    return x - 0.5 * math.log(2 * math.pi * x) + math.log(_i0_asym_sum(x))


def von_mises_logpdf(theta, mean, m: float):
    return m * np.cos(np.asarray(theta) - mean) - LOG_2PI - log_bessel_i0(m)


def von_mises_density(theta, mean, m: float):
    """exp(m cos(theta - mean)) / (2 pi I0(m)) on the circle."""
    if m < 0:
        raise ValueError("precision must be non-negative")
    return np.exp(von_mises_logpdf(theta, mean, m))


_GL_X, _GL_W = np.polynomial.legendre.leggauss(128)


def truncated_log_normalizer(mean, m: float, kappa: float):
    """log of the integral of exp(m cos(theta - mean)) over [-kappa, kappa]."""
    mean = np.asarray(mean, dtype=np.float64)
    theta = kappa * _GL_X
    vals = np.exp(m * (np.cos(theta - mean[..., None]) - 1.0))
    return m + np.log(kappa * vals @ _GL_W)


def truncated_log_normalizer_grad(mean, m: float, kappa: float):
    """d/d(mean) of :func:`truncated_log_normalizer` (closed form at the bounds)."""
    mean = np.asarray(mean, dtype=np.float64)
    log_z = truncated_log_normalizer(mean, m, kappa)
    upper = np.exp(m * np.cos(kappa + mean) - log_z)
    lower = np.exp(m * np.cos(kappa - mean) - log_z)
    return upper - lower


def truncated_von_mises_logpdf(theta, mean, m: float, kappa: float):
    return m * np.cos(np.asarray(theta) - mean) - truncated_log_normalizer(mean, m, kappa)


def sample_von_mises(rng: np.random.Generator, mean: float, m: float, max_draws: int = 1_000_000):
    """Best-Fisher envelope rejection sampler; returns (angle in [-pi, pi), draws)."""
    if m < 1e-8:
        return float(rng.uniform(-math.pi, math.pi)), 1
    tau = 1.0 + math.sqrt(1.0 + 4.0 * m * m)
    rho = (tau - math.sqrt(2.0 * tau)) / (2.0 * m)
    r = (1.0 + rho * rho) / (2.0 * rho)
    for draw in range(1, max_draws + 1):
        u1, u2, u3 = rng.random(3)
        z = math.cos(math.pi * u1)
        f = (1.0 + r * z) / (r + z)
        c = m * (r - f)
        if c * (2.0 - c) - u2 > 0.0 or math.log(c / u2) + 1.0 - c >= 0.0:
            theta = math.copysign(math.acos(min(1.0, max(-1.0, f))), u3 - 0.5)
            return float((mean + theta + math.pi) % (2 * math.pi) - math.pi), draw
    return None, max_draws


# ---------------------------------------------------------------------------
# schedules, config, parameters
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PrecisionSchedule:
    start: tuple[float, float] = (1.0, 10.0)
    end: tuple[float, float] = (25.0, 50.0)
    anneal_steps: int = 1

    def at(self, step: int) -> tuple[float, float]:
        frac = step / self.anneal_steps if self.anneal_steps > 0 else 1.0
        if frac >= 1.0:
            return self.end
        frac = max(frac, 0.0)
        return tuple(s + (e - s) * frac for s, e in zip(self.start, self.end))


@dataclass(frozen=True)
class PolicyConfig:
    kappa: float = 1.0
    conv_channels: tuple[int, int] = (16, 8)
    hidden: tuple[int, int] = (64, 32)
    canvas_shape: tuple[int, int] = (9, 5)
    init_scale: float = 0.05
    base_only: bool = False

    @property
    def trunk_dim(self) -> int:
        h, w, _ = MAP_SHAPE
        return (h // 4) * (w // 4) * self.conv_channels[1]

    @property
    def extra_dim(self) -> int:
        w, h = self.canvas_shape
        return POSE_SLOTS * POSE_DIM + w * h * 2 + 2

    @property
    def input_dim(self) -> int:
        return self.trunk_dim + self.extra_dim


PARAM_NAMES = (
    "conv1_w", "conv1_b", "conv2_w", "conv2_b",
    "v1_w", "v1_b", "v2_w", "v2_b", "az_w", "az_b", "el_w", "el_b",
    "c1_w", "c1_b", "c2_w", "c2_b", "cont_w", "cont_b",
)


def param_shapes(cfg: PolicyConfig) -> dict[str, tuple[int, ...]]:
    c_in = MAP_SHAPE[2]
    c1, c2 = cfg.conv_channels
    h1, h2 = cfg.hidden
    d = cfg.input_dim
    return {
        "conv1_w": (c_in, 3, 3, c1), "conv1_b": (c1,),
        "conv2_w": (c1, 3, 3, c2), "conv2_b": (c2,),
        "v1_w": (d, h1), "v1_b": (h1,), "v2_w": (h1, h2), "v2_b": (h2,),
        "az_w": (h2,), "az_b": (1,), "el_w": (h2,), "el_b": (1,),
        "c1_w": (d, h1), "c1_b": (h1,), "c2_w": (h1, h2), "c2_b": (h2,),
        "cont_w": (h2,), "cont_b": (1,),
    }


def init_params(cfg: PolicyConfig, seed: int) -> dict[str, np.ndarray]:
    """Weights uniform in [-init_scale, init_scale], biases zero."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(cfg).items():
        if name.endswith("_b"):
            params[name] = np.zeros(shape)
        else:
            params[name] = rng.uniform(-cfg.init_scale, cfg.init_scale, shape)
    return params


def flatten(params: dict) -> np.ndarray:
    return np.concatenate([params[k].ravel() for k in PARAM_NAMES])


def unflatten(vec: np.ndarray, like: dict) -> dict:
    out, i = {}, 0
    for k in PARAM_NAMES:
        n = like[k].size
        out[k] = vec[i:i + n].reshape(like[k].shape).copy()
        i += n
    return out


# ---------------------------------------------------------------------------
# state
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class AgentState:
    base_map: np.ndarray  # (8, 8, 16)
    pose_feats: np.ndarray  # (6, 45): current, partial fusion, 4 history slots
    canvas: np.ndarray  # (w, h, 2)
    aux: np.ndarray  # (actions taken this active-view, persons detected)

    def vector(self) -> np.ndarray:
        return np.concatenate(
            [self.pose_feats.ravel(), self.canvas.ravel().astype(np.float64), self.aux.astype(np.float64)]
        )


@dataclass(frozen=True)
class PolicyAction:
    delta_azimuth: float
    delta_elevation: float
    continue_flag: bool


def camera_frame(pose, camera: CameraSpec) -> np.ndarray:
    """Rotate a scene-frame pose about the vertical axis into the camera's azimuth
    frame and scale by the dome radius (mm)."""
    c, s = math.cos(camera.azimuth), math.sin(camera.azimuth)
    p = np.asarray(pose, dtype=np.float64)
    out = np.empty_like(p)
    out[:, 0] = c * p[:, 0] + s * p[:, 1]
    out[:, 1] = -s * p[:, 0] + c * p[:, 1]
    out[:, 2] = p[:, 2]
    return out / (1000.0 * camera.radius)


def featurize(base_map, current, partial, history, canvas: AngleCanvas, aux, camera: CameraSpec,
              base_only: bool = False) -> AgentState:
    """Pack one step's observation into an AgentState.

    ``current`` and ``partial`` may be None (target not seen); ``history`` is a
    newest-first list of previous fused poses, zero-padded to 4 slots.
    """
    grid = base_map.grid if hasattr(base_map, "grid") else np.asarray(base_map)
    pose_feats = np.zeros((POSE_SLOTS, POSE_DIM))
    cnv = np.zeros(canvas.grid.shape, dtype=np.int64)
    aux_vec = np.zeros(2)
    if not base_only:
        slots = [current, partial] + list(history[:HISTORY])
        for i, pose in enumerate(slots):
            if pose is not None:
                pose_feats[i] = camera_frame(pose, camera).ravel()
        cnv = canvas.grid.copy()
        aux_vec = np.asarray(aux, dtype=np.float64)
    return AgentState(np.array(grid, dtype=np.float64), pose_feats, cnv, aux_vec)


def stack_states(states) -> tuple[np.ndarray, np.ndarray]:
    maps = np.stack([s.base_map for s in states])
    feats = np.stack([s.vector() for s in states])
    return maps, feats


# ---------------------------------------------------------------------------
# network
# ---------------------------------------------------------------------------


def _conv(x, w, b):
    n, hh, ww, c = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    cols = sliding_window_view(xp, (3, 3), axis=(1, 2)).reshape(n * hh * ww, c * 9)
    out = cols @ w.reshape(c * 9, -1) + b
    return out.reshape(n, hh, ww, -1), cols


def _conv_back(dout, cols, w, x_shape, need_dx=True):
    n, hh, ww, c = x_shape
    cout = w.shape[-1]
    d2 = dout.reshape(-1, cout)
    dw = (cols.T @ d2).reshape(w.shape)
    db = d2.sum(axis=0)
    dx = None
    if need_dx:
        dcols = (d2 @ w.reshape(c * 9, cout).T).reshape(n, hh, ww, c, 3, 3)
        dxp = np.zeros((n, hh + 2, ww + 2, c))
        for i in range(3):
            for j in range(3):
                dxp[:, i:i + hh, j:j + ww, :] += dcols[..., i, j]
        dx = dxp[:, 1:-1, 1:-1, :]
    return dw, db, dx


def _pool(x):
    n, hh, ww, c = x.shape
    return x.reshape(n, hh // 2, 2, ww // 2, 2, c).mean(axis=(2, 4))


def _unpool(d):
    return 0.25 * np.repeat(np.repeat(d, 2, axis=1), 2, axis=2)


def forward_batch(params, maps, feats, kappa: float):
    """Batched forward pass; returns (mean_az, mean_el, p_continue, cache)."""
    a1_pre, cols1 = _conv(maps, params["conv1_w"], params["conv1_b"])
    a1 = np.tanh(a1_pre)
    p1 = _pool(a1)
    a2_pre, cols2 = _conv(p1, params["conv2_w"], params["conv2_b"])
    a2 = np.tanh(a2_pre)
    p2 = _pool(a2)
    x = np.concatenate([p2.reshape(len(maps), -1), feats], axis=1)

    hv1 = np.tanh(x @ params["v1_w"] + params["v1_b"])
    zv = np.tanh(hv1 @ params["v2_w"] + params["v2_b"])
    za = zv @ params["az_w"] + params["az_b"][0]
    ze = zv @ params["el_w"] + params["el_b"][0]

    hc1 = np.tanh(x @ params["c1_w"] + params["c1_b"])
    zc = np.tanh(hc1 @ params["c2_w"] + params["c2_b"])
    zcont = zc @ params["cont_w"] + params["cont_b"][0]

    ta, te = np.tanh(za), np.tanh(ze)
    mean_az = math.pi * ta
    mean_el = kappa * te
    p_cont = 0.5 * (1.0 + np.tanh(0.5 * zcont))
    cache = dict(maps_shape=maps.shape, cols1=cols1, a1=a1, p1=p1, cols2=cols2, a2=a2, x=x,
                 hv1=hv1, zv=zv, hc1=hc1, zc=zc, ta=ta, te=te, zcont=zcont)
    return mean_az, mean_el, p_cont, cache


def backward_batch(params, cache, d_za, d_ze, d_zcont):
    """Accumulate parameter gradients given upstream grads on the three head
    pre-activations (shape (n,) each)."""
    g = {}
    zv, hv1, x = cache["zv"], cache["hv1"], cache["x"]
    g["az_w"] = zv.T @ d_za
    g["az_b"] = np.array([d_za.sum()])
    g["el_w"] = zv.T @ d_ze
    g["el_b"] = np.array([d_ze.sum()])
    d_zv = np.outer(d_za, params["az_w"]) + np.outer(d_ze, params["el_w"])
    d = d_zv * (1.0 - zv * zv)
    g["v2_w"] = hv1.T @ d
    g["v2_b"] = d.sum(axis=0)
    d = (d @ params["v2_w"].T) * (1.0 - hv1 * hv1)
    g["v1_w"] = x.T @ d
    g["v1_b"] = d.sum(axis=0)
    dx = d @ params["v1_w"].T

    zc, hc1 = cache["zc"], cache["hc1"]
    g["cont_w"] = zc.T @ d_zcont
    g["cont_b"] = np.array([d_zcont.sum()])
    d = np.outer(d_zcont, params["cont_w"]) * (1.0 - zc * zc)
    g["c2_w"] = hc1.T @ d
    g["c2_b"] = d.sum(axis=0)
    d = (d @ params["c2_w"].T) * (1.0 - hc1 * hc1)
    g["c1_w"] = x.T @ d
    g["c1_b"] = d.sum(axis=0)
    dx += d @ params["c1_w"].T

    a2, a1, p1 = cache["a2"], cache["a1"], cache["p1"]
    n = x.shape[0]
    pooled_shape = (n, a2.shape[1] // 2, a2.shape[2] // 2, a2.shape[3])
    d_p2 = dx[:, : int(np.prod(pooled_shape[1:]))].reshape(pooled_shape)
    d_a2 = _unpool(d_p2) * (1.0 - a2 * a2)
    g["conv2_w"], g["conv2_b"], d_p1 = _conv_back(d_a2, cache["cols2"], params["conv2_w"], p1.shape)
    d_a1 = _unpool(d_p1) * (1.0 - a1 * a1)
    g["conv1_w"], g["conv1_b"], _ = _conv_back(
        d_a1, cache["cols1"], params["conv1_w"], cache["maps_shape"], need_dx=False
    )
    return g


def forward(params, state: AgentState, kappa: float = 1.0):
    """(mean_azimuth, mean_elevation, p_continue) for a single state."""
    ma, me, pc, _ = forward_batch(params, state.base_map[None], state.vector()[None], kappa)
    return float(ma[0]), float(me[0]), float(pc[0])


# ---------------------------------------------------------------------------
# actions, densities, gradients
# ---------------------------------------------------------------------------


def _bernoulli_log(c, zcont):
    # log sigmoid(z) = -softplus(-z)
    return np.where(c, -np.logaddexp(0.0, -zcont), -np.logaddexp(0.0, zcont))


def action_log_density(mean_az, mean_el, zcont, action: PolicyAction, precisions, kappa: float) -> float:
    m_a, m_e = precisions
    lp = von_mises_logpdf(action.delta_azimuth, mean_az, m_a)
    lp += truncated_von_mises_logpdf(action.delta_elevation, mean_el, m_e, kappa)
    lp += _bernoulli_log(action.continue_flag, zcont)
    return float(lp)


def sample_action(params, state: AgentState, precisions, rng: np.random.Generator, kappa: float = 1.0,
                  max_draws: int = 1_000_000):
    """Draw (azimuth delta, elevation delta, continue) and its log-density."""
    m_a, m_e = precisions
    if m_a <= 0 or m_e <= 0:
        raise ValueError("precisions must be positive")
    mean_az, mean_el, _, cache = forward_batch(params, state.base_map[None], state.vector()[None], kappa)
    mean_az, mean_el, zcont = float(mean_az[0]), float(mean_el[0]), float(cache["zcont"][0])
    p_cont = 0.5 * (1.0 + math.tanh(0.5 * zcont))
    az, _ = sample_von_mises(rng, mean_az, m_a, max_draws)
    el = None
    draws = 0
    while draws < max_draws:
        cand, used = sample_von_mises(rng, mean_el, m_e, max_draws - draws)
        draws += used
        if cand is not None and -kappa <= cand <= kappa:
            el = cand
            break
    cont = bool(rng.random() < p_cont)
    if az is None or el is None:
        # fail safe: stop here, angles unused
        az, el, cont = 0.0, float(np.clip(mean_el, -kappa, kappa)), True
    action = PolicyAction(az, el, cont)
    return action, action_log_density(mean_az, mean_el, zcont, action, precisions, kappa)


def log_density(params, state: AgentState, action: PolicyAction, precisions, kappa: float = 1.0) -> float:
    mean_az, mean_el, _, cache = forward_batch(params, state.base_map[None], state.vector()[None], kappa)
    return action_log_density(float(mean_az[0]), float(mean_el[0]), float(cache["zcont"][0]),
                              action, precisions, kappa)


def head_scores(mean_az, mean_el, p_cont, cache, actions, precisions, kappa):
    """d log pi / d(head pre-activations) for a batch of actions."""
    m_a, m_e = precisions
    th_a = np.array([a.delta_azimuth for a in actions])
    th_e = np.array([a.delta_elevation for a in actions])
    c = np.array([a.continue_flag for a in actions], dtype=np.float64)
    d_mean_a = m_a * np.sin(th_a - mean_az)
    d_mean_e = m_e * np.sin(th_e - mean_el) - truncated_log_normalizer_grad(mean_el, m_e, kappa)
    d_za = d_mean_a * math.pi * (1.0 - cache["ta"] ** 2)
    d_ze = d_mean_e * kappa * (1.0 - cache["te"] ** 2)
    d_zc = c - p_cont
    return d_za, d_ze, d_zc


def weighted_grad_log_density(params, states, actions, weights, precisions, kappa: float = 1.0):
    """sum_i weights[i] * grad log pi(actions[i] | states[i]) over all parameters."""
    maps, feats = stack_states(states)
    mean_az, mean_el, p_cont, cache = forward_batch(params, maps, feats, kappa)
    d_za, d_ze, d_zc = head_scores(mean_az, mean_el, p_cont, cache, actions, precisions, kappa)
    w = np.asarray(weights, dtype=np.float64)
    return backward_batch(params, cache, w * d_za, w * d_ze, w * d_zc)


def grad_log_density(params, state: AgentState, action: PolicyAction, precisions, kappa: float = 1.0):
    """Exact gradient of log pi(action | state) w.r.t. every parameter array."""
    return weighted_grad_log_density(params, [state], [action], [1.0], precisions, kappa)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

_MAGIC = b"APCKPT\x00\x01"


def save_checkpoint(path, params: dict, manifest: dict | None = None) -> None:
    """Write ``<path>.bin`` (shape-tagged float64 arrays) and ``<path>.manifest``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    chunks = [_MAGIC, struct.pack("<I", len(PARAM_NAMES))]
    for name in PARAM_NAMES:
        arr = np.ascontiguousarray(params[name], dtype="<f8")
        raw = name.encode()
        chunks.append(struct.pack("<H", len(raw)) + raw)
        chunks.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes())
    path.with_suffix(".bin").write_bytes(b"".join(chunks))
    lines = ["activepose-checkpoint-v1"]
    for k, v in sorted((manifest or {}).items()):
        lines.append(f"{k}={v}")
    for name in PARAM_NAMES:
        lines.append(f"array {name} {'x'.join(map(str, params[name].shape)) or 'scalar'}")
    path.with_suffix(".manifest").write_text("\n".join(lines) + "\n")


def load_checkpoint(path) -> tuple[dict, dict]:
    path = Path(path)
    data = path.with_suffix(".bin").read_bytes()
    if not data.startswith(_MAGIC):
        raise ValueError(f"{path}: not a checkpoint")
    off = len(_MAGIC)
    (count,) = struct.unpack_from("<I", data, off)
    off += 4
    params = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", data, off)
        off += 2
        name = data[off:off + nlen].decode()
        off += nlen
        (ndim,) = struct.unpack_from("<B", data, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}I", data, off)
        off += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        params[name] = np.frombuffer(data, dtype="<f8", count=size, offset=off).reshape(shape).copy()
        off += 8 * size
    manifest = {}
    mpath = path.with_suffix(".manifest")
    if mpath.exists():
        for ln in mpath.read_text().splitlines()[1:]:
            if "=" in ln and not ln.startswith("array "):
                k, v = ln.split("=", 1)
                manifest[k] = v
    return params, manifest
