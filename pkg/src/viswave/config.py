"""Scenario configuration: TOML schema, defaults, validation, seed derivation.

The schema is the DEFAULTS tree below; unknown keys are hard errors so typos
in experiment files fail loudly. Every run echoes the fully-resolved config
(defaults materialized) as resolved-config.json next to its outputs.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from .channel import Link, LinkParams
from .depthcam import CameraModel
from .errors import ConfigError
from .scene import Bounds, Node

FORMAT_VERSION = "1"

# Master-seed mixing: per-task seeds are splitmix64(splitmix64(master) + index),
# so parallel generation is order-independent.
_MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    z = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def derive_seed(master: int, index: int) -> int:
    return splitmix64((splitmix64(master) + index) & _MASK64)


# Generic per-link defaults; user link entries merge against these, while the
# reference scenario below carries two fully-specified links.
LINK_ITEM_DEFAULTS: dict = {
    "bs_id": "bs1",
    "position": [1.0, 1.0, 1.4],
    "carrier_frequency_hz": 60e9,
    "tx_power_dbm": 10.0,
    "tx_gain_dbi": 0.0,
    "rx_gain_dbi": 0.0,
    "shadowing_sigma_db": 0.0,
    "shadowing_rho": 0.0,
    "attenuation_per_blocker_db": 20.0,
    "attenuation_cap_db": 40.0,
}

DEFAULTS: dict = {
    "format_version": FORMAT_VERSION,
    "world": {
        "bounds": [0.0, 0.0, 6.0, 3.5],
        "dt": 1.0 / 30.0,
        "duration_s": 10.0,
        "n_episodes": 200,
        "seed": 1,
        "blockage_height_gate": False,
    },
    "camera": {
        "position": [0.3, 3.2, 1.6],
        "yaw_deg": -12.0,
        "pitch_deg": 0.0,
        "hfov_deg": 110.0,
        "resolution": [64, 48],
        "near_clip": 0.1,
        "far_clip": 12.0,
        "frame_rate_hz": 30.0,
    },
    "station": {"position": [5.6, 0.75, 1.3]},
    "links": [
        {
            **LINK_ITEM_DEFAULTS,
            "bs_id": "bs1",
            "position": [2.0, 0.85, 1.4],
            "tx_gain_dbi": 13.0,
            "rx_gain_dbi": 13.0,
            "shadowing_sigma_db": 1.0,
            "shadowing_rho": 0.9,
            "attenuation_per_blocker_db": 30.0,
            "attenuation_cap_db": 45.0,
        },
        {
            **LINK_ITEM_DEFAULTS,
            "bs_id": "bs2",
            "position": [1.0, 2.9, 1.4],
            "tx_gain_dbi": 11.0,
            "rx_gain_dbi": 11.0,
            "shadowing_sigma_db": 1.0,
            "shadowing_rho": 0.9,
            "attenuation_per_blocker_db": 30.0,
            "attenuation_cap_db": 45.0,
        },
    ],
    "pedestrians": {
        "count": 2,
        "speed_mps": 1.0,
        "v_max_mps": 2.0,
        "radius_m": 0.3,
        "height_m": 1.7,
        "heading_cone_deg": 15.0,
        "spawn_margin_m": 0.4,
    },
    "predictor": {
        "link": "bs1",
        "t_past": 8,
        "horizon_ticks": 4,
        "rss_stride": 1,
        "conv_channels": [8, 16],
        "conv_kernel": 4,
        "conv_stride": 2,
        "feature_dim": 32,
        "hidden_dim": 64,
        "epochs": 30,
        "batch_size": 32,
        "learning_rate": 1e-3,
        "max_train_windows": 0,  # 0 = use all
        "train_fraction": 0.8,
        "dtype": "float64",
    },
    "handover": {
        "t_ho_ticks": 6,
        "gamma": 0.95,
        "noise_floor_dbm": -75.0,
        "b_eff_mbps": 20.0,
        "r_max_mbps": 150.0,
        "frame_downsample": 2,
        "replay_capacity": 10_000,
        "batch_size": 32,
        "learning_rate": 1e-3,
        "target_sync_every": 500,
        "epsilon_start": 1.0,
        "epsilon_end": 0.05,
        "train_env_steps": 45_000,
        "train_every": 2,
        "warmup_steps": 500,
        "eval_episodes": 30,
        "rss_threshold_margin_db": 8.0,
        "dtype": "float64",
    },
    "inpaint": {
        "link": "bs1",
        "rss_points": 32,
        "rss_stride": 2,
        "mask": "right_third",  # or [x0, y0, w, h]
        "lambda_masked": 0.8,
        "detect_threshold_m": 1.0,
        "conv_channels": [8, 16],
        "image_latent": 64,
        "rss_latent": 64,
        "decoder_channels": 8,
        "epochs": 20,
        "batch_size": 32,
        "learning_rate": 1e-3,
        "max_train_samples": 0,
        "train_fraction": 0.8,
        "dtype": "float64",
    },
    "output": {"root": "runs"},
}


def _validate_tree(user: dict, schema: dict, prefix: str = "") -> None:
    for key, value in user.items():
        path = f"{prefix}{key}"
        if key not in schema:
            raise ConfigError(path, "unknown key")
        ref = schema[key]
        if isinstance(ref, dict):
            if not isinstance(value, dict):
                raise ConfigError(path, f"expected a table, got {type(value).__name__}")
            _validate_tree(value, ref, path + ".")
        elif isinstance(ref, list) and ref and isinstance(ref[0], dict):
            if not isinstance(value, list):
                raise ConfigError(path, f"expected an array of tables, got {type(value).__name__}")
            for i, item in enumerate(value):
                _validate_tree(item, ref[0], f"{path}[{i}].")


def _merge(user: dict, defaults: dict) -> dict:
    out = copy.deepcopy(defaults)
    for key, value in user.items():
        ref = defaults.get(key)
        if isinstance(ref, dict) and isinstance(value, dict):
            out[key] = _merge(value, ref)
        elif isinstance(ref, list) and ref and isinstance(ref[0], dict) and isinstance(value, list):
            # A user-supplied array of tables replaces the default list; each
            # item inherits the generic item defaults.
            item_defaults = LINK_ITEM_DEFAULTS if key == "links" else ref[0]
            out[key] = [_merge(item, item_defaults) for item in value]
        else:
            out[key] = copy.deepcopy(value)
    return out


@dataclass(frozen=True)
class PedestrianSpawn:
    count: int
    speed_mps: float
    radius_m: float
    height_m: float
    heading_cone_deg: float
    spawn_margin_m: float


@dataclass(frozen=True)
class Scenario:
    """Typed view of the world/camera/links sections, shared by all pipelines."""

    bounds: Bounds
    dt: float
    n_ticks: int
    camera: CameraModel
    station: Node
    links: tuple[Link, ...]
    spawn: PedestrianSpawn
    blockage_height_gate: bool

    def link(self, link_id: str) -> Link:
        for link in self.links:
            if link.link_id == link_id:
                return link
        raise ConfigError("links", f"no link with bs_id '{link_id}'")


class ScenarioConfig:
    """Resolved configuration document plus typed accessors."""

    def __init__(self, resolved: dict):
        self.raw = resolved
        self._check_semantics()

    @property
    def master_seed(self) -> int:
        return int(self.raw["world"]["seed"])

    def _check_semantics(self) -> None:
        r = self.raw
        if r["format_version"] != FORMAT_VERSION:
            raise ConfigError("format_version", f"unsupported version {r['format_version']!r}")
        if r["world"]["dt"] <= 0:
            raise ConfigError("world.dt", "must be > 0")
        if r["world"]["duration_s"] <= 0:
            raise ConfigError("world.duration_s", "must be > 0")
        peds = r["pedestrians"]
        if peds["speed_mps"] > peds["v_max_mps"]:
            raise ConfigError("pedestrians.speed_mps", f"exceeds v_max {peds['v_max_mps']}")
        ids = [link["bs_id"] for link in r["links"]]
        if len(set(ids)) != len(ids):
            raise ConfigError("links", "duplicate bs_id")
        for section in ("predictor", "inpaint"):
            if r[section]["link"] not in ids:
                raise ConfigError(f"{section}.link", f"unknown link '{r[section]['link']}'")
        for section in ("predictor", "handover", "inpaint"):
            if r[section]["dtype"] not in ("float32", "float64"):
                raise ConfigError(f"{section}.dtype", "must be float32 or float64")
        b = r["world"]["bounds"]
        cx, cy = r["camera"]["position"][0], r["camera"]["position"][1]
        if not (b[0] <= cx <= b[2] and b[1] <= cy <= b[3]):
            raise ConfigError("camera.position", "camera outside world bounds")

    def scenario(self) -> Scenario:
        r = self.raw
        b = r["world"]["bounds"]
        bounds = Bounds(*[float(v) for v in b])
        cam = r["camera"]
        camera = CameraModel(
            x=cam["position"][0],
            y=cam["position"][1],
            z=cam["position"][2],
            yaw_rad=math.radians(cam["yaw_deg"]),
            pitch_rad=math.radians(cam["pitch_deg"]),
            hfov_rad=math.radians(cam["hfov_deg"]),
            width=int(cam["resolution"][0]),
            height=int(cam["resolution"][1]),
            near_clip=cam["near_clip"],
            far_clip=cam["far_clip"],
            frame_rate_hz=cam["frame_rate_hz"],
        )
        sx, sy, sz = r["station"]["position"]
        station = Node("sta", sx, sy, sz)
        links = []
        for entry in r["links"]:
            bx, by, bz = entry["position"]
            params = LinkParams(
                carrier_frequency_hz=entry["carrier_frequency_hz"],
                tx_power_dbm=entry["tx_power_dbm"],
                tx_gain_dbi=entry["tx_gain_dbi"],
                rx_gain_dbi=entry["rx_gain_dbi"],
                shadowing_sigma_db=entry["shadowing_sigma_db"],
                shadowing_rho=entry["shadowing_rho"],
                attenuation_per_blocker_db=entry["attenuation_per_blocker_db"],
                attenuation_cap_db=entry["attenuation_cap_db"],
            )
            tx = Node(entry["bs_id"], bx, by, bz)
            links.append(Link(entry["bs_id"], tx, station, params))
        peds = r["pedestrians"]
        spawn = PedestrianSpawn(
            count=int(peds["count"]),
            speed_mps=peds["speed_mps"],
            radius_m=peds["radius_m"],
            height_m=peds["height_m"],
            heading_cone_deg=peds["heading_cone_deg"],
            spawn_margin_m=peds["spawn_margin_m"],
        )
        world = r["world"]
        n_ticks = int(round(world["duration_s"] / world["dt"]))
        return Scenario(
            bounds=bounds,
            dt=world["dt"],
            n_ticks=n_ticks,
            camera=camera,
            station=station,
            links=tuple(links),
            spawn=spawn,
            blockage_height_gate=bool(world["blockage_height_gate"]),
        )

    def to_json(self) -> str:
        return json.dumps(self.raw, sort_keys=True, indent=2) + "\n"

    def write_resolved(self, out_dir: Path) -> None:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "resolved-config.json").write_text(self.to_json(), encoding="utf-8")


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> ScenarioConfig:
    """Load a TOML scenario file (or pure defaults), validate, materialize defaults."""
    user: dict = {}
    if path is not None:
        with open(path, "rb") as f:
            try:
                user = tomllib.load(f)
            except tomllib.TOMLDecodeError as exc:
                raise ConfigError(str(path), f"TOML parse error: {exc}") from exc
    _validate_tree(user, DEFAULTS)
    resolved = _merge(user, DEFAULTS)
    if overrides:
        _validate_tree(overrides, DEFAULTS)
        resolved = _merge(overrides, resolved)
    return ScenarioConfig(resolved)


def reference_config(overrides: dict | None = None) -> ScenarioConfig:
    """The built-in reference scenario (pure defaults plus optional overrides)."""
    return load_config(None, overrides)
