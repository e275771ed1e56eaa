"""Aerial topology search: escalating-fleet Bayesian placement plus the
baseline strategies (random 3D, surrogate-model BO, capacity-only BO, and the
direct-to-satellite reference).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import channel, metrics, raytrace, tpe
from .channel import RadioConfig, dbm_to_watts
from .metrics import Kpis, ObjectiveWeights
from .raytrace import TraceConfig
from .scene import Scene
from .seeding import derive_seed

METHODS = ("raytraced", "random", "uma", "sumcap")


@dataclass
class Topology:
    uav_positions: np.ndarray          # (B, 3) m
    active_gnbs: tuple = ()

    def __post_init__(self):
        self.uav_positions = np.asarray(self.uav_positions, dtype=np.float64).reshape(-1, 3)
        self.active_gnbs = tuple(sorted(self.active_gnbs))

    @property
    def n_uavs(self) -> int:
        return len(self.uav_positions)

    def validate(self, scene: Scene, altitude) -> None:
        z_min, z_max = altitude
        if self.n_uavs:
            z = self.uav_positions[:, 2]
            if z.min() < z_min - 1e-9 or z.max() > z_max + 1e-9:
                raise ValueError("UAV altitude outside limits")
            xy = self.uav_positions[:, :2]
            lo, hi = scene.bounds[0, :2], scene.bounds[1, :2]
            if (xy < lo - 1e-9).any() or (xy > hi + 1e-9).any():
                raise ValueError("UAV horizontal position outside scene bounds")


@dataclass
class PlacementConfig:
    rho_target: float = 0.8
    n_iter: int = 150
    max_uavs: int = 3
    weights: ObjectiveWeights = field(default_factory=ObjectiveWeights)
    method: str = "raytraced"
    seed: int = 0
    altitude: tuple = (50.0, 1000.0)
    fixed_count: int | None = None      # bypass escalation, search exactly this fleet size
    tpe: tpe.TpeConfig = field(default_factory=tpe.TpeConfig)
    gnb_cochannel: bool = True

    def __post_init__(self):
        if not (0.0 < self.rho_target <= 1.0):
            raise ValueError("rho_target must be in (0, 1]")
        if self.n_iter < 1 or self.max_uavs < 1:
            raise ValueError("n_iter and max_uavs must be >= 1")
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")


@dataclass
class PlacementResult:
    topology: Topology
    kpis: Kpis
    trials: list
    target_met: bool
    method: str
    wall_time_s: float = 0.0


def _search_space(scene: Scene, n_uavs: int, altitude) -> tpe.SearchSpace:
    lo, hi = scene.bounds[0], scene.bounds[1]
    dims = []
    for b in range(n_uavs):
        dims.append(tpe.Dim(f"x{b}", float(lo[0]), float(hi[0])))
        dims.append(tpe.Dim(f"y{b}", float(lo[1]), float(hi[1])))
        dims.append(tpe.Dim(f"z{b}", float(altitude[0]), float(altitude[1])))
    return tpe.SearchSpace(dims)


def optimize_topology(scene: Scene, ues, gnbs, radio: RadioConfig,
                      config: PlacementConfig,
                      trace_cfg: TraceConfig | None = None,
                      backend: str = "raytraced",
                      weights: ObjectiveWeights | None = None,
                      active_gnbs: tuple | None = None) -> PlacementResult:
    """Fleet-escalating Bayesian topology search.

    Starts at one UAV (or exactly config.fixed_count), runs n_iter TPE trials
    over the 3B-dimensional box, and keeps a single incumbent by objective
    across all fleet sizes. The fleet grows only while the incumbent's
    coverage misses rho_target; the optimizer state resets at each new
    dimension. Deterministic for a fixed config.
    """
    weights = config.weights if weights is None else weights
    active = tuple(range(len(gnbs))) if active_gnbs is None else tuple(active_gnbs)
    ues = np.atleast_2d(np.asarray(ues, dtype=np.float64))
    t_start = time.perf_counter()
    if config.fixed_count is not None:
        counts = [config.fixed_count]
    else:
        counts = list(range(1, config.max_uavs + 1))
    best_topo, best_kpis, f_best = None, Kpis.zero(), -np.inf
    trials = []
    trial_no = 0
    for n_uavs in counts:
        space = _search_space(scene, n_uavs, config.altitude)
        tpe_cfg = replace(config.tpe, seed=derive_seed(config.seed, "tpe", n_uavs))
        rng = np.random.default_rng(tpe_cfg.seed)
        history = []
        for _ in range(config.n_iter):
            params = tpe.suggest(history, space, tpe_cfg, rng)
            topo = Topology(params.reshape(n_uavs, 3), active)
            kpis = metrics.evaluate_topology(
                scene, topo, ues, radio, trace_cfg=trace_cfg, backend=backend,
                weights=weights, gnb_positions=gnbs, gnb_cochannel=config.gnb_cochannel)
            value = kpis.objective
            history.append(tpe.TrialRecord(params, value, len(history)))
            trials.append({
                "trial": trial_no,
                "uav_count": n_uavs,
                "params": [float(v) for v in params],
                "objective": value,
                "weights": list(weights.as_tuple()),
                "kpis": kpis.to_dict(),
            })
            trial_no += 1
            if value > f_best:
                f_best, best_topo, best_kpis = value, topo, kpis
        if best_kpis.coverage >= config.rho_target:
            break
    if best_topo is None:
        best_topo = Topology(np.zeros((0, 3)), active)
    elapsed = time.perf_counter() - t_start
    return PlacementResult(best_topo, best_kpis, trials,
                           best_kpis.coverage >= config.rho_target,
                           config.method, elapsed)


def random_placement(scene: Scene, n_uavs: int, altitude, seed: int,
                     active_gnbs: tuple = ()) -> Topology:
    """Uniform random fleet over horizontal scene bounds x altitude band."""
    if n_uavs < 1:
        raise ValueError("n_uavs must be >= 1")
    rng = np.random.default_rng(seed)
    lo, hi = scene.bounds[0], scene.bounds[1]
    pos = np.column_stack([
        rng.uniform(lo[0], hi[0], n_uavs),
        rng.uniform(lo[1], hi[1], n_uavs),
        rng.uniform(altitude[0], altitude[1], n_uavs),
    ])
    return Topology(pos, active_gnbs)


def plan_topology(scene: Scene, ues, gnbs, radio: RadioConfig,
                  config: PlacementConfig,
                  trace_cfg: TraceConfig | None = None,
                  active_gnbs: tuple | None = None) -> PlacementResult:
    """Dispatch a placement method and return its selected topology.

    * raytraced: composite objective on the traced channel (the flagship).
    * uma: same engine/objective, expected-power surrogate channel.
    * sumcap: traced channel, capacity-only objective (weights 1, 0, 0).
    * random: a single uniform draw of fixed_count UAVs (no search).
    """
    method = config.method
    active = tuple(range(len(gnbs))) if active_gnbs is None else tuple(active_gnbs)
    if method == "random":
        n = config.fixed_count or config.max_uavs
        t0 = time.perf_counter()
        topo = random_placement(scene, n, config.altitude, config.seed, active)
        kpis = metrics.evaluate_topology(scene, topo, ues, radio, trace_cfg=trace_cfg,
                                         weights=config.weights, gnb_positions=gnbs,
                                         gnb_cochannel=config.gnb_cochannel)
        return PlacementResult(topo, kpis, [], kpis.coverage >= config.rho_target,
                               method, time.perf_counter() - t0)
    if method == "uma":
        return optimize_topology(scene, ues, gnbs, radio, config, trace_cfg,
                                 backend="uma", active_gnbs=active)
    if method == "sumcap":
        return optimize_topology(scene, ues, gnbs, radio, config, trace_cfg,
                                 backend="raytraced",
                                 weights=ObjectiveWeights(1.0, 0.0, 0.0),
                                 active_gnbs=active)
    return optimize_topology(scene, ues, gnbs, radio, config, trace_cfg,
                             backend="raytraced", active_gnbs=active)


# -- direct-to-satellite reference ---------------------------------------------

@dataclass(frozen=True)
class SatelliteLink:
    direction: np.ndarray   # unit vector from ground toward the satellite
    range_m: float

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=np.float64)
        n = float(np.linalg.norm(d))
        if abs(n - 1.0) > 1e-9:
            raise ValueError("satellite direction must be unit length")
        object.__setattr__(self, "direction", d)


def default_satellites(count: int = 6, elevation_deg: float = 60.0,
                       range_m: float = 600e3) -> list:
    """Evenly spread azimuths at a fixed elevation (used when no TLE data)."""
    sats = []
    el = np.radians(elevation_deg)
    for k in range(count):
        az = 2 * np.pi * k / count
        d = np.array([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)])
        sats.append(SatelliteLink(d / np.linalg.norm(d), range_m))
    return sats


def d2c_baseline(scene: Scene, ues, satellites, radio: RadioConfig,
                 d2c_bandwidth: float = 5e6) -> Kpis:
    """Direct satellite service: LoS-only links with a free-space budget.

    A user is covered iff an unobstructed path exists toward at least one
    satellite; its rate uses the EIRP / slant-range free-space SNR over the
    direct-to-cell band. No aerial relays take part, so the UAV-load fairness
    term (and hence the composite objective) is zero by construction.
    """
    ues = np.atleast_2d(np.asarray(ues, dtype=np.float64))
    lam = 299792458.0 / radio.carrier_freq
    n_sc = max(1, int(round(d2c_bandwidth / radio.subcarrier_spacing)))
    noise_sc = channel.noise_power(radio, radio.subcarrier_spacing)
    eirp_w = dbm_to_watts(radio.eirp_d2c_dbm)
    rates = np.zeros(len(ues))
    covered = []
    for u, ue in enumerate(ues):
        best_snr = 0.0
        for sat in satellites:
            target = ue + sat.direction * sat.range_m
            if not raytrace.los_clear(scene, ue, target):
                continue
            fspl = (lam / (4 * np.pi * sat.range_m)) ** 2
            snr_sc = eirp_w * fspl / noise_sc
            best_snr = max(best_snr, snr_sc)
        if best_snr > 0.0:
            wideband_snr = best_snr * radio.subcarrier_spacing / d2c_bandwidth
            if wideband_snr >= radio.sinr_threshold:
                covered.append(u)
                rates[u] = n_sc * radio.subcarrier_spacing * np.log2(1.0 + best_snr)
    c_sum = float(rates[covered].sum()) if covered else 0.0
    f_rates = metrics.jain_rates([rates[u] for u in covered])
    return Kpis(c_sum, len(covered) / len(ues) if len(ues) else 0.0,
                0.0, f_rates, 0.0, tuple(covered), ())
