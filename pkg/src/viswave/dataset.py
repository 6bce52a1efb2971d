"""Seeded episode generation, training windows, and bit-exact serialization.

Episode layout on disk: <dir>/{manifest.json, frames.bin, power.csv, labels.csv}.
frames.bin is little-endian float32, frame-major then row-major, no header;
CSVs use LF line endings, a header row, '.' decimals and no quoting. Floats in
power.csv are written with repr so read inverts write bit-exactly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path

import numpy as np

from .channel import PowerTrace, ShadowingProcess, blockage_attenuation, free_space_power
from .config import Scenario, ScenarioConfig, derive_seed
from .depthcam import DepthFrame, render_depth
from .errors import MalformedCsvError, TruncatedFileError, UnsupportedVersionError
from .scene import Pedestrian, Scene, los_crossings, step_scene

EPISODE_FORMAT_VERSION = "1"


class Condition(IntEnum):
    LOS = 0
    NLOS = 1
    TRANSITION = 2


@dataclass
class Episode:
    manifest: dict
    frames: np.ndarray  # (n_ticks, height, width) float32
    traces: list[PowerTrace]
    condition_labels: np.ndarray  # (n_ticks,) uint8 Condition codes

    @property
    def n_ticks(self) -> int:
        return int(self.manifest["n_ticks"])

    @property
    def dt(self) -> float:
        return float(self.manifest["dt"])

    def trace(self, link_id: str) -> PowerTrace:
        for trace in self.traces:
            if trace.link_id == link_id:
                return trace
        raise KeyError(f"no trace for link '{link_id}'")

    def depth_frame(self, tick: int) -> DepthFrame:
        return DepthFrame(tick=tick, depth=self.frames[tick])

    def equals(self, other: "Episode") -> bool:
        return (
            self.manifest == other.manifest
            and self.frames.shape == other.frames.shape
            and bool(np.all(self.frames.view(np.uint32) == other.frames.view(np.uint32)))
            and np.array_equal(self.condition_labels, other.condition_labels)
            and all(
                a.link_id == b.link_id and np.array_equal(a.rss_dbm, b.rss_dbm)
                for a, b in zip(self.traces, other.traces)
            )
        )


@dataclass
class SampleWindow:
    past_frames: np.ndarray  # (t_past, height, width) float32, view into the episode
    past_rss: np.ndarray  # (t_past,) float64
    label_rss: float
    label_condition: Condition
    anchor_tick: int


def spawn_pedestrians(scenario: Scenario, rng: np.random.Generator) -> tuple[Pedestrian, ...]:
    """Seeded initial pedestrian states: uniform position inside the margin,
    heading drawn in a cone around +y or -y, fixed speed."""
    s = scenario.spawn
    b = scenario.bounds
    m = s.spawn_margin_m
    peds = []
    for i in range(s.count):
        x = float(rng.uniform(b.x_min + m, b.x_max - m))
        y = float(rng.uniform(b.y_min + m, b.y_max - m))
        base = math.pi / 2.0 if rng.random() < 0.5 else -math.pi / 2.0
        heading = base + math.radians(float(rng.uniform(-s.heading_cone_deg, s.heading_cone_deg)))
        peds.append(
            Pedestrian(
                ped_id=i,
                x=x,
                y=y,
                vx=s.speed_mps * math.cos(heading),
                vy=s.speed_mps * math.sin(heading),
                radius=s.radius_m,
                height=s.height_m,
            )
        )
    return tuple(peds)


def initial_scene(scenario: Scenario, rng: np.random.Generator) -> Scene:
    return Scene(
        bounds=scenario.bounds,
        base_stations=tuple(link.tx for link in scenario.links),
        station=scenario.station,
        pedestrians=spawn_pedestrians(scenario, rng),
        tick=0,
        dt=scenario.dt,
    )


def link_attenuation(scene: Scene, link, height_gate: bool = False) -> float:
    crossings = los_crossings(scene, link.tx, link.rx)
    if height_gate:
        link_height = min(link.tx.antenna_height, link.rx.antenna_height)
        peds = {p.ped_id: p for p in scene.pedestrians}
        crossings = [c for c in crossings if peds[c.pedestrian_id].height >= link_height]
    return blockage_attenuation(crossings, scene.pedestrians, link.params)


def condition_labels_from_attenuation(att: np.ndarray, horizon: int) -> np.ndarray:
    """Per-tick labels: NLOS while attenuated; TRANSITION when a tick is clear
    but the link will be attenuated in `horizon` ticks; LOS otherwise."""
    n = len(att)
    blocked = att > 0.0
    labels = np.full(n, Condition.LOS, dtype=np.uint8)
    labels[blocked] = Condition.NLOS
    upcoming = np.zeros(n, dtype=bool)
    if horizon < n:
        upcoming[: n - horizon] = blocked[horizon:]
    labels[~blocked & upcoming] = Condition.TRANSITION
    return labels


def generate_episode(config: ScenarioConfig, seed: int) -> Episode:
    """Fully deterministic in (config, seed): scene rollout, frames, rss traces,
    per-tick condition labels for the predictor's link."""
    scenario = config.scenario()
    rng = np.random.Generator(np.random.PCG64(seed))
    scene = initial_scene(scenario, rng)
    n = scenario.n_ticks
    horizon = int(config.raw["predictor"]["horizon_ticks"])
    condition_link = config.raw["predictor"]["link"]

    shadowing = [
        ShadowingProcess(link.params.shadowing_sigma_db, link.params.shadowing_rho, rng)
        for link in scenario.links
    ]
    fsp = [free_space_power(link.distance, link.params) for link in scenario.links]

    cam = scenario.camera
    frames = np.empty((n, cam.height, cam.width), dtype=np.float32)
    rss = np.empty((len(scenario.links), n), dtype=np.float64)
    att_condition = np.empty(n, dtype=np.float64)

    for t in range(n):
        frames[t] = render_depth(scene, cam).depth
        for i, link in enumerate(scenario.links):
            att = link_attenuation(scene, link, scenario.blockage_height_gate)
            rss[i, t] = fsp[i] - att + shadowing[i].sample()
            if link.link_id == condition_link:
                att_condition[t] = att
        scene = step_scene(scene)

    labels = condition_labels_from_attenuation(att_condition, horizon)
    traces = [
        PowerTrace(link.link_id, 0, rss[i], scenario.dt)
        for i, link in enumerate(scenario.links)
    ]
    manifest = {
        "format_version": EPISODE_FORMAT_VERSION,
        "seed": int(seed),
        "dt": scenario.dt,
        "n_ticks": n,
        "frame_width": cam.width,
        "frame_height": cam.height,
        "links": [link.link_id for link in scenario.links],
        "condition_link": condition_link,
        "horizon_ticks": horizon,
        "camera": dict(config.raw["camera"]),
        "far_clip": cam.far_clip,
        "near_clip": cam.near_clip,
    }
    return Episode(manifest=manifest, frames=frames, traces=traces, condition_labels=labels)


def generate_episodes(config: ScenarioConfig, n_episodes: int | None = None) -> list[Episode]:
    """Per-episode seeds derived from the master seed, order-independent."""
    n = int(config.raw["world"]["n_episodes"]) if n_episodes is None else n_episodes
    master = config.master_seed
    return [generate_episode(config, derive_seed(master, i)) for i in range(n)]


def make_windows(
    episode: Episode, t_past: int, horizon: int, rss_stride: int = 1, link_id: str | None = None
) -> list[SampleWindow]:
    """One window per anchor tick t with full frame and rss lookback and a
    label horizon ticks ahead. With rss_stride 1 the count is
    n_ticks - t_past - horizon + 1; larger strides need a longer lookback and
    yield correspondingly fewer windows."""
    if t_past < 1 or horizon < 1 or rss_stride < 1:
        raise ValueError("t_past, horizon and rss_stride must all be >= 1")
    n = episode.n_ticks
    trace = episode.trace(link_id or episode.manifest["condition_link"])
    start = max(t_past - 1, (t_past - 1) * rss_stride)
    windows = []
    for t in range(start, n - horizon):
        rss_ticks = np.arange(t - (t_past - 1) * rss_stride, t + 1, rss_stride)
        windows.append(
            SampleWindow(
                past_frames=episode.frames[t - t_past + 1 : t + 1],
                past_rss=trace.rss_dbm[rss_ticks],
                label_rss=float(trace.rss_dbm[t + horizon]),
                label_condition=Condition(episode.condition_labels[t]),
                anchor_tick=t,
            )
        )
    return windows


def split_episodes(episodes: list, train_fraction: float = 0.8) -> tuple[list, list]:
    """Deterministic episode-level split: leading fraction trains, rest tests."""
    k = int(round(train_fraction * len(episodes)))
    return episodes[:k], episodes[k:]


# ---------------------------------------------------------------- serialization


def write_episode(episode: Episode, directory: str | Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "manifest.json").write_text(
        json.dumps(episode.manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    with open(directory / "frames.bin", "wb") as f:
        f.write(episode.frames.astype("<f4", copy=False).tobytes())
    with open(directory / "power.csv", "w", encoding="utf-8", newline="\n") as f:
        f.write("tick," + ",".join(f"rss_dbm_{t.link_id}" for t in episode.traces) + "\n")
        for t in range(episode.n_ticks):
            row = ",".join(repr(float(trace.rss_dbm[t])) for trace in episode.traces)
            f.write(f"{t},{row}\n")
    with open(directory / "labels.csv", "w", encoding="utf-8", newline="\n") as f:
        f.write("tick,condition\n")
        for t in range(episode.n_ticks):
            f.write(f"{t},{Condition(episode.condition_labels[t]).name}\n")


def read_episode(directory: str | Path) -> Episode:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text(encoding="utf-8"))
    version = manifest.get("format_version")
    if version != EPISODE_FORMAT_VERSION:
        raise UnsupportedVersionError(
            f"episode format_version {version!r}, supported: {EPISODE_FORMAT_VERSION!r}"
        )
    n = int(manifest["n_ticks"])
    w, h = int(manifest["frame_width"]), int(manifest["frame_height"])
    raw = (directory / "frames.bin").read_bytes()
    expected = n * w * h * 4
    if len(raw) != expected:
        raise TruncatedFileError(f"frames.bin is {len(raw)} bytes, expected {expected}")
    frames = np.frombuffer(raw, dtype="<f4").reshape(n, h, w).copy()

    link_ids = manifest["links"]
    with open(directory / "power.csv", encoding="utf-8") as f:
        header = f.readline().rstrip("\n").split(",")
        if header != ["tick"] + [f"rss_dbm_{lid}" for lid in link_ids]:
            raise MalformedCsvError(f"power.csv header mismatch: {header}")
        rss = np.empty((len(link_ids), n), dtype=np.float64)
        for t in range(n):
            line = f.readline()
            if not line:
                raise MalformedCsvError(f"power.csv ends early at row {t}")
            parts = line.rstrip("\n").split(",")
            if len(parts) != len(link_ids) + 1 or int(parts[0]) != t:
                raise MalformedCsvError(f"power.csv row {t} malformed: {line!r}")
            for i, p in enumerate(parts[1:]):
                rss[i, t] = float(p)

    with open(directory / "labels.csv", encoding="utf-8") as f:
        if f.readline().rstrip("\n") != "tick,condition":
            raise MalformedCsvError("labels.csv header mismatch")
        labels = np.empty(n, dtype=np.uint8)
        for t in range(n):
            parts = f.readline().rstrip("\n").split(",")
            if len(parts) != 2 or int(parts[0]) != t:
                raise MalformedCsvError(f"labels.csv row {t} malformed")
            labels[t] = Condition[parts[1]].value

    traces = [
        PowerTrace(lid, 0, rss[i], float(manifest["dt"])) for i, lid in enumerate(link_ids)
    ]
    return Episode(manifest=manifest, frames=frames, traces=traces, condition_labels=labels)
