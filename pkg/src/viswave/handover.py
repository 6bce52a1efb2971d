"""Predictive handover: episodic two-BS/one-STA environment, throughput model,
DQN learner, and policy evaluation with anticipation metrics.

Actions are binary (STAY / HANDOVER); a handover zeroes the reward for
t_ho ticks. Q-nets observe one modality (pooled depth frame or the rss pair)
plus a serving-BS flag, since the binary action set is meaningful only
relative to the current association.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import nncore as nn
from .channel import ShadowingProcess, free_space_power
from .config import Scenario, ScenarioConfig, derive_seed
from .dataset import initial_scene, link_attenuation
from .depthcam import render_depth
from .errors import NumericError
from .scene import Pedestrian, Scene, step_scene

STAY, HANDOVER = 0, 1


@dataclass(frozen=True)
class ThroughputParams:
    noise_floor_dbm: float = -75.0
    b_eff_mbps: float = 20.0
    r_max_mbps: float = 150.0


def throughput_of(rss_dbm: float, params: ThroughputParams) -> float:
    """Capped Shannon-style rate in Mbit/s, floored at 0."""
    snr = 10.0 ** ((rss_dbm - params.noise_floor_dbm) / 10.0)
    rate = params.b_eff_mbps * math.log2(1.0 + snr)
    return max(0.0, min(params.r_max_mbps, rate))


@dataclass
class HandoverState:
    frame: np.ndarray  # (dh, dw) float32 meters, pooled
    rss_dbm: np.ndarray  # (n_links,) float64
    associated_bs: int
    interruption_remaining: int


@dataclass
class Transition:
    state: HandoverState
    action: int
    reward_mbit: float
    next_state: HandoverState
    done: bool


@dataclass(frozen=True)
class HandoverConfig:
    t_ho_ticks: int = 6
    gamma: float = 0.95
    throughput: ThroughputParams = ThroughputParams()
    frame_downsample: int = 2
    replay_capacity: int = 10_000
    batch_size: int = 32
    learning_rate: float = 1e-3
    target_sync_every: int = 500
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    train_env_steps: int = 45_000
    train_every: int = 2
    warmup_steps: int = 500
    eval_episodes: int = 30
    rss_threshold_margin_db: float = 8.0
    dtype: str = "float64"

    @classmethod
    def from_config(cls, raw: dict) -> "HandoverConfig":
        h = raw["handover"]
        return cls(
            t_ho_ticks=int(h["t_ho_ticks"]),
            gamma=float(h["gamma"]),
            throughput=ThroughputParams(
                noise_floor_dbm=float(h["noise_floor_dbm"]),
                b_eff_mbps=float(h["b_eff_mbps"]),
                r_max_mbps=float(h["r_max_mbps"]),
            ),
            frame_downsample=int(h["frame_downsample"]),
            replay_capacity=int(h["replay_capacity"]),
            batch_size=int(h["batch_size"]),
            learning_rate=float(h["learning_rate"]),
            target_sync_every=int(h["target_sync_every"]),
            epsilon_start=float(h["epsilon_start"]),
            epsilon_end=float(h["epsilon_end"]),
            train_env_steps=int(h["train_env_steps"]),
            train_every=int(h["train_every"]),
            warmup_steps=int(h["warmup_steps"]),
            eval_episodes=int(h["eval_episodes"]),
            rss_threshold_margin_db=float(h["rss_threshold_margin_db"]),
            dtype=h["dtype"],
        )


def pool_frame(depth: np.ndarray, factor: int) -> np.ndarray:
    h, w = depth.shape
    return depth.reshape(h // factor, factor, w // factor, factor).mean(axis=(1, 3))


class HandoverEnv:
    """Scene-driven episodic environment. reset() reseeds pedestrians and
    shadowing; ground-truth per-link attenuation is recorded per tick so
    evaluation can place blockage onsets exactly."""

    def __init__(self, scenario: Scenario, cfg: HandoverConfig):
        self.scenario = scenario
        self.cfg = cfg
        self.fsp = [free_space_power(link.distance, link.params) for link in scenario.links]
        self._scene: Scene | None = None
        self._shadowing: list[ShadowingProcess] = []
        self._tick = 0
        self.att_log: list[np.ndarray] = []
        self.handovers: list[tuple[int, int]] = []  # (tick, from_bs)

    def _observe(self, serving: int, interruption: int) -> HandoverState:
        scene = self._scene
        depth = render_depth(scene, self.scenario.camera).depth
        frame = pool_frame(depth, self.cfg.frame_downsample).astype(np.float32)
        att = np.array(
            [link_attenuation(scene, link, self.scenario.blockage_height_gate)
             for link in self.scenario.links]
        )
        noise = np.array([p.sample() for p in self._shadowing])
        rss = np.array(self.fsp) - att + noise
        self.att_log.append(att)
        return HandoverState(frame, rss, serving, interruption)

    def reset(self, episode_seed: int, scene: Scene | None = None) -> HandoverState:
        rng = np.random.Generator(np.random.PCG64(episode_seed))
        self._scene = scene if scene is not None else initial_scene(self.scenario, rng)
        self._shadowing = [
            ShadowingProcess(l.params.shadowing_sigma_db, l.params.shadowing_rho, rng)
            for l in self.scenario.links
        ]
        self._tick = 0
        self.att_log = []
        self.handovers = []
        return self._observe(serving=0, interruption=0)

    def step(self, state: HandoverState, action: int) -> Transition:
        serving = state.associated_bs
        interruption = state.interruption_remaining
        if action == HANDOVER and interruption == 0:
            self.handovers.append((self._tick, serving))
            serving = 1 - serving
            interruption = self.cfg.t_ho_ticks
        if interruption > 0:
            reward = 0.0
            interruption -= 1
        else:
            reward = throughput_of(float(state.rss_dbm[serving]), self.cfg.throughput) * self.scenario.dt
        self._scene = step_scene(self._scene)
        self._tick += 1
        done = self._tick >= self.scenario.n_ticks
        next_state = self._observe(serving, interruption)
        return Transition(state, action, reward, next_state, done)


# ------------------------------------------------------------------ Q-network


@dataclass(frozen=True)
class QNetDims:
    frame_w: int = 32
    frame_h: int = 24
    conv_channels: tuple[int, int] = (8, 16)
    hidden: int = 64
    n_links: int = 2


def build_qnet(observation: str, dims: QNetDims) -> nn.NetworkSpec:
    if observation == "img":
        layers = (
            nn.Conv2D(1, dims.conv_channels[0], 4, 2),
            nn.Relu(),
            nn.Conv2D(dims.conv_channels[0], dims.conv_channels[1], 4, 2),
            nn.Relu(),
            nn.Flatten(),
        )
        shape = (1, 1, dims.frame_h, dims.frame_w)
        for layer in layers:
            shape = layer.out_shape(shape)
        main = nn.Branch("obs", "frame", (*layers, nn.Dense(shape[1], dims.hidden), nn.Relu()))
    elif observation == "rf":
        main = nn.Branch(
            "obs",
            "rss",
            (nn.Dense(dims.n_links, dims.hidden), nn.Relu(), nn.Dense(dims.hidden, dims.hidden), nn.Relu()),
        )
    else:
        raise ValueError(f"observation must be 'img' or 'rf', got {observation!r}")
    return nn.NetworkSpec(
        branches=(main, nn.Branch("flag", "flag", ())),
        cell=None,
        head=(nn.Dense(dims.hidden + 1, 2),),
    )


@dataclass
class QModel:
    spec: nn.NetworkSpec
    params: list[np.ndarray]
    observation: str
    far_clip: float
    rss_ref: tuple[float, ...]  # blocker-free rss per link, for obs scaling
    seed: int
    step: int = 0

    def save(self, directory) -> None:
        hyper = {
            "kind": "qmodel",
            "observation": self.observation,
            "far_clip": self.far_clip,
            "rss_ref": list(self.rss_ref),
        }
        nn.save_checkpoint(directory, self.spec, self.params, hyper, self.seed, self.step)

    @classmethod
    def load(cls, directory) -> "QModel":
        spec, params, manifest = nn.load_checkpoint(directory)
        h = manifest["hyperparameters"]
        return cls(spec, params, h["observation"], h["far_clip"], tuple(h["rss_ref"]),
                   manifest["seed"], manifest["step"])


def _obs_arrays(model_obs: str, state: HandoverState, far_clip: float, rss_ref, dtype):
    flag = np.array([[1.0 if state.associated_bs == 0 else -1.0]], dtype=dtype)
    if model_obs == "img":
        frame = (state.frame / far_clip).astype(dtype)[None, None]
        return {"frame": frame, "flag": flag}
    rss = ((state.rss_dbm - np.asarray(rss_ref)) / 20.0).astype(dtype)[None, :]
    return {"rss": rss, "flag": flag}


def q_values(model: QModel, state: HandoverState) -> np.ndarray:
    dtype = model.params[0].dtype.type
    inputs = _obs_arrays(model.observation, state, model.far_clip, model.rss_ref, dtype)
    y, _ = nn.forward(model.spec, model.params, inputs)
    return y[0]


# ------------------------------------------------------------------- replay


class ReplayBuffer:
    """FIFO ring over preallocated arrays; inserting at capacity evicts the oldest."""

    def __init__(self, capacity: int, obs_kind: str, frame_shape=(24, 32), n_links=2):
        self.capacity = capacity
        self.obs_kind = obs_kind
        if obs_kind == "img":
            self.obs = np.zeros((capacity, *frame_shape), dtype=np.float32)
            self.next_obs = np.zeros((capacity, *frame_shape), dtype=np.float32)
        else:
            self.obs = np.zeros((capacity, n_links), dtype=np.float64)
            self.next_obs = np.zeros((capacity, n_links), dtype=np.float64)
        self.flags = np.zeros(capacity, dtype=np.float64)
        self.next_flags = np.zeros(capacity, dtype=np.float64)
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity, dtype=np.float64)
        self.dones = np.zeros(capacity, dtype=bool)
        self.count = 0

    def __len__(self) -> int:
        return min(self.count, self.capacity)

    def push(self, obs, flag, action, reward, next_obs, next_flag, done) -> None:
        i = self.count % self.capacity
        self.obs[i] = obs
        self.next_obs[i] = next_obs
        self.flags[i] = flag
        self.next_flags[i] = next_flag
        self.actions[i] = action
        self.rewards[i] = reward
        self.dones[i] = done
        self.count += 1

    def sample(self, batch_size: int, rng: np.random.Generator) -> np.ndarray:
        return rng.integers(0, len(self), size=batch_size)


def epsilon_at(step: int, total_steps: int, start: float, end: float) -> float:
    """Linear anneal over the first half of training, flat afterwards."""
    half = max(1, total_steps // 2)
    if step >= half:
        return end
    return start + (end - start) * (step / half)


def _raw_obs(observation: str, state: HandoverState, rss_ref) -> tuple[np.ndarray, float]:
    flag = 1.0 if state.associated_bs == 0 else -1.0
    if observation == "img":
        return state.frame, flag
    return (state.rss_dbm - np.asarray(rss_ref)), flag


def dqn_train(config: ScenarioConfig, observation: str, seed: int,
              progress: bool = False) -> QModel:
    """Experience-replay DQN with a periodically synced target network."""
    scenario = config.scenario()
    cfg = HandoverConfig.from_config(config.raw)
    dtype = np.float32 if cfg.dtype == "float32" else np.float64
    dh = scenario.camera.height // cfg.frame_downsample
    dw = scenario.camera.width // cfg.frame_downsample
    dims = QNetDims(frame_w=dw, frame_h=dh, n_links=len(scenario.links))
    rng = np.random.default_rng(seed)
    spec = build_qnet(observation, dims)
    params = nn.init_params(spec, rng, dtype)
    target_params = [p.copy() for p in params]
    state_opt = nn.AdamState.for_params(params, lr=cfg.learning_rate)
    rss_ref = tuple(free_space_power(l.distance, l.params) for l in scenario.links)
    model = QModel(spec, params, observation, scenario.camera.far_clip, rss_ref, seed)

    replay = ReplayBuffer(cfg.replay_capacity, observation, (dh, dw), len(scenario.links))
    env = HandoverEnv(scenario, cfg)
    gamma = cfg.gamma
    step = 0
    train_steps = 0
    episode = 0
    while step < cfg.train_env_steps:
        state = env.reset(derive_seed(seed, episode))
        episode += 1
        for _ in range(scenario.n_ticks):
            if rng.random() < epsilon_at(step, cfg.train_env_steps, cfg.epsilon_start, cfg.epsilon_end):
                action = int(rng.integers(2))
            else:
                action = int(np.argmax(q_values(model, state)))
            tr = env.step(state, action)
            obs, flag = _raw_obs(observation, state, rss_ref)
            nobs, nflag = _raw_obs(observation, tr.next_state, rss_ref)
            replay.push(obs, flag, action, tr.reward_mbit, nobs, nflag, tr.done)
            step += 1
            state = tr.next_state

            if len(replay) >= cfg.warmup_steps and step % cfg.train_every == 0:
                idx = replay.sample(cfg.batch_size, rng)
                batch_in = _replay_inputs(replay, idx, next_step=False, far_clip=model.far_clip, dtype=dtype)
                next_in = _replay_inputs(replay, idx, next_step=True, far_clip=model.far_clip, dtype=dtype)
                q_next, _ = nn.forward(spec, target_params, next_in)
                targets = replay.rewards[idx] + gamma * (~replay.dones[idx]) * q_next.max(axis=1)
                q, cache = nn.forward(spec, model.params, batch_in)
                taken = replay.actions[idx]
                rows = np.arange(len(idx))
                diff = q[rows, taken] - targets.astype(q.dtype)
                loss = float(np.mean(diff * diff))
                if not np.isfinite(loss):
                    raise NumericError(f"non-finite DQN loss at train step {train_steps}")
                gy = np.zeros_like(q)
                gy[rows, taken] = (2.0 / len(idx)) * diff
                grads, _ = nn.backward(spec, model.params, cache, gy)
                model.params, state_opt = nn.adam_step(model.params, grads, state_opt)
                train_steps += 1
                if train_steps % cfg.target_sync_every == 0:
                    target_params = [p.copy() for p in model.params]
            if step >= cfg.train_env_steps:
                break
        if progress and episode % 20 == 0:
            print(f"  [dqn-{observation}] env steps {step}/{cfg.train_env_steps}")
    model.step = train_steps
    return model


def _replay_inputs(replay: ReplayBuffer, idx, next_step: bool, far_clip: float, dtype):
    obs = replay.next_obs if next_step else replay.obs
    flags = replay.next_flags if next_step else replay.flags
    if replay.obs_kind == "img":
        return {
            "frame": (obs[idx] / far_clip).astype(dtype)[:, None],
            "flag": flags[idx].astype(dtype)[:, None],
        }
    return {
        "rss": (obs[idx] / 20.0).astype(dtype),
        "flag": flags[idx].astype(dtype)[:, None],
    }


# ------------------------------------------------------------------ policies


class QPolicy:
    def __init__(self, model: QModel, name: str):
        self.model = model
        self.name = name

    def act(self, state: HandoverState) -> int:
        return int(np.argmax(q_values(self.model, state)))


class AlwaysStay:
    name = "always-stay"

    def act(self, state: HandoverState) -> int:
        return STAY


class RssThreshold:
    """Reactive baseline: switch when the other BS looks margin_db better."""

    def __init__(self, margin_db: float):
        self.name = "rss-threshold"
        self.margin_db = margin_db

    def act(self, state: HandoverState) -> int:
        serving = state.associated_bs
        other = 1 - serving
        if state.rss_dbm[other] - state.rss_dbm[serving] > self.margin_db:
            return HANDOVER
        return STAY


@dataclass
class PolicyReport:
    policy: str
    avg_throughput_mbps: float
    handover_count: float  # mean per episode
    mean_lead_ticks: float  # nan if no qualifying events

    def csv_row(self) -> str:
        return (
            f"{self.policy},{self.avg_throughput_mbps!r},"
            f"{self.handover_count!r},{self.mean_lead_ticks!r}"
        )


def write_policy_csv(path, reports: list[PolicyReport]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("policy,avg_throughput_mbps,handover_count,mean_lead_ticks\n")
        for report in reports:
            f.write(report.csv_row() + "\n")


def blockage_events(att: np.ndarray) -> list[tuple[int, int]]:
    """Contiguous att>0 runs as (onset_tick, end_tick_inclusive)."""
    blocked = att > 0.0
    events = []
    start = None
    for t, b in enumerate(blocked):
        if b and start is None:
            start = t
        elif not b and start is not None:
            events.append((start, t - 1))
            start = None
    if start is not None:
        events.append((start, len(blocked) - 1))
    return events


LEAD_WINDOW_TICKS = 30  # how far before an onset a handover still counts as "for" it


def lead_ticks(att_log: np.ndarray, handovers: list[tuple[int, int]]) -> list[int]:
    """Per blockage event on each link, onset - (latest qualifying handover away
    from that link); negative means reactive. Events nobody handed over for are
    skipped."""
    leads = []
    for link in range(att_log.shape[1]):
        ho_away = [t for t, from_bs in handovers if from_bs == link]
        for onset, end in blockage_events(att_log[:, link]):
            candidates = [t for t in ho_away if onset - LEAD_WINDOW_TICKS <= t <= end]
            if candidates:
                leads.append(onset - max(candidates))
    return leads


def evaluate_policy(
    config: ScenarioConfig, policy, n_episodes: int, seed: int
) -> PolicyReport:
    scenario = config.scenario()
    cfg = HandoverConfig.from_config(config.raw)
    env = HandoverEnv(scenario, cfg)
    total_mbit = 0.0
    total_seconds = 0.0
    total_handovers = 0
    leads: list[int] = []
    for i in range(n_episodes):
        state = env.reset(derive_seed(seed, 100_000 + i))
        for _ in range(scenario.n_ticks):
            tr = env.step(state, policy.act(state))
            total_mbit += tr.reward_mbit
            state = tr.next_state
        total_seconds += scenario.n_ticks * scenario.dt
        total_handovers += len(env.handovers)
        att = np.array(env.att_log[: scenario.n_ticks])
        leads.extend(lead_ticks(att, env.handovers))
    return PolicyReport(
        policy=getattr(policy, "name", "policy"),
        avg_throughput_mbps=total_mbit / total_seconds,
        handover_count=total_handovers / n_episodes,
        mean_lead_ticks=float(np.mean(leads)) if leads else float("nan"),
    )


# ------------------------------------------------- scripted anticipation trace


def scripted_approach(config: ScenarioConfig, ticks_before: int = 33, total_ticks: int = 70):
    """Scene sequence where one pedestrian walks straight at the first link's
    midpoint, crossing `ticks_before` ticks in; the other pedestrian is parked
    out of the way. Returns (initial_scene, expected ticks)."""
    scenario = config.scenario()
    link = scenario.links[0]
    mx = 0.5 * (link.tx.x + link.rx.x)
    my = 0.5 * (link.tx.y + link.rx.y)
    spawn = scenario.spawn
    speed = spawn.speed_mps
    start_y = my + spawn.radius_m + speed * scenario.dt * ticks_before
    walker = Pedestrian(0, mx, start_y, 0.0, -speed, spawn.radius_m, spawn.height_m)
    parked = Pedestrian(1, 0.5, 0.3, 0.0, 0.0, spawn.radius_m, spawn.height_m)
    scene = Scene(
        bounds=scenario.bounds,
        base_stations=tuple(l.tx for l in scenario.links),
        station=scenario.station,
        pedestrians=(walker, parked),
        tick=0,
        dt=scenario.dt,
    )
    return scene, total_ticks


def q_trace(config: ScenarioConfig, model: QModel, seed: int,
            ticks_before: int = 33, total_ticks: int = 70):
    """Q values along the scripted approach while serving BS 1 with no
    interruptions. Returns (rows, crossing_tick); rows are (tick, q_stay, q_ho)."""
    scenario = config.scenario()
    cfg = HandoverConfig.from_config(config.raw)
    env = HandoverEnv(scenario, cfg)
    scene, total = scripted_approach(config, ticks_before, total_ticks)
    state = env.reset(derive_seed(seed, 777), scene=scene)
    rows = []
    crossing = None
    for t in range(total):
        if env.att_log[t][0] > 0.0 and crossing is None:
            crossing = t
        q = q_values(model, state)
        rows.append((t, float(q[STAY]), float(q[HANDOVER])))
        tr = env.step(state, STAY)
        state = tr.next_state
        state.associated_bs = 0
        state.interruption_remaining = 0
    return rows, crossing


def write_qtrace_csv(path, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("tick,q_stay,q_handover\n")
        for t, qs, qh in rows:
            f.write(f"{t},{qs!r},{qh!r}\n")
