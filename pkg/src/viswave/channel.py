"""Scene geometry to received signal strength: Friis loss, blocker attenuation,
log-normal shadowing (i.i.d. or AR(1))."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError
from .scene import Crossing, Node, Pedestrian, Scene, los_crossings

SPEED_OF_LIGHT = 299_792_458.0


@dataclass(frozen=True)
class LinkParams:
    carrier_frequency_hz: float = 60e9
    tx_power_dbm: float = 10.0
    tx_gain_dbi: float = 0.0
    rx_gain_dbi: float = 0.0
    shadowing_sigma_db: float = 0.0
    # AR(1) coefficient for temporally correlated shadowing; 0 = i.i.d.
    shadowing_rho: float = 0.0
    attenuation_per_blocker_db: float = 20.0
    attenuation_cap_db: float = 40.0

    def __post_init__(self):
        if self.carrier_frequency_hz <= 0:
            raise ValueError("carrier_frequency_hz must be > 0")
        if self.shadowing_sigma_db < 0:
            raise ValueError("shadowing_sigma_db must be >= 0")
        if not 0.0 <= self.attenuation_per_blocker_db <= self.attenuation_cap_db:
            raise ValueError("need 0 <= attenuation_per_blocker_db <= attenuation_cap_db")
        if not 0.0 <= self.shadowing_rho < 1.0:
            raise ValueError("shadowing_rho must be in [0, 1)")


@dataclass(frozen=True)
class Link:
    link_id: str
    tx: Node
    rx: Node
    params: LinkParams

    @property
    def distance(self) -> float:
        return math.hypot(self.tx.x - self.rx.x, self.tx.y - self.rx.y)


@dataclass
class PowerTrace:
    """Received signal strength per tick for one link."""

    link_id: str
    start_tick: int
    rss_dbm: np.ndarray  # float64, one sample per tick
    dt: float

    def __post_init__(self):
        self.rss_dbm = np.asarray(self.rss_dbm, dtype=np.float64)

    def ticks(self) -> np.ndarray:
        return np.arange(self.start_tick, self.start_tick + len(self.rss_dbm), dtype=np.int64)

    def at(self, tick: int) -> float:
        i = tick - self.start_tick
        if not 0 <= i < len(self.rss_dbm):
            raise IndexError(f"tick {tick} outside trace span of link {self.link_id}")
        return float(self.rss_dbm[i])


def free_space_power(distance_m: float, params: LinkParams) -> float:
    """Friis received power in dBm at the given distance."""
    if distance_m <= 0:
        raise DomainError(f"distance must be > 0, got {distance_m}")
    fspl_db = 20.0 * math.log10(
        4.0 * math.pi * distance_m * params.carrier_frequency_hz / SPEED_OF_LIGHT
    )
    return params.tx_power_dbm + params.tx_gain_dbi + params.rx_gain_dbi - fspl_db


def blockage_attenuation(
    crossings: list[Crossing],
    pedestrians: dict[int, Pedestrian] | tuple[Pedestrian, ...],
    params: LinkParams,
) -> float:
    """Capped sum of per-blocker attenuations, each ramped by chord fraction.

    A blocker centered on the link (full-diameter chord) contributes the full
    attenuation_per_blocker_db; a grazing one contributes proportionally less.
    """
    if not crossings:
        return 0.0
    if not isinstance(pedestrians, dict):
        pedestrians = {p.ped_id: p for p in pedestrians}
    total = 0.0
    for crossing in crossings:
        ped = pedestrians[crossing.pedestrian_id]
        total += params.attenuation_per_blocker_db * min(1.0, crossing.chord / (2.0 * ped.radius))
    return min(params.attenuation_cap_db, total)


def mean_rss(scene: Scene, link: Link) -> float:
    """Noise-free rss: free-space power minus current blockage attenuation."""
    fsp = free_space_power(link.distance, link.params)
    att = blockage_attenuation(los_crossings(scene, link.tx, link.rx), scene.pedestrians, link.params)
    return fsp - att


def sample_rss(scene: Scene, link: Link, rng: np.random.Generator) -> float:
    """mean_rss plus one i.i.d. shadowing draw from the supplied generator."""
    return mean_rss(scene, link) + float(rng.normal(0.0, link.params.shadowing_sigma_db))


@dataclass
class ShadowingProcess:
    """Per-link shadowing noise in dB; AR(1) with stationary marginal N(0, sigma^2).

    rho = 0 degenerates to the i.i.d. draw used by sample_rss.
    """

    sigma_db: float
    rho: float
    rng: np.random.Generator
    _state: float | None = field(default=None, repr=False)

    def sample(self) -> float:
        innovation = float(self.rng.normal(0.0, self.sigma_db))
        if self._state is None or self.rho == 0.0:
            self._state = innovation
        else:
            self._state = self.rho * self._state + math.sqrt(1.0 - self.rho**2) * innovation
        return self._state
