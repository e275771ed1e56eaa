"""Network KPI stack: coverage set, Shannon capacities, Jain fairness and the
composite capacity * coverage * fairness objective driving placement search.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import channel, raytrace
from .channel import NO_SERVING, RadioConfig, SinrReport
from .raytrace import TraceConfig
from .scene import Scene

GNB_ID_BASE = 1000  # gNB tx ids start here; UAVs use 0..B-1


@dataclass(frozen=True)
class ObjectiveWeights:
    """Exponents of the composite utility (capacity, coverage, fairness)."""

    w_capacity: float = 1.0
    w_coverage: float = 1.0
    w_fairness: float = 1.0

    def __post_init__(self):
        if min(self.w_capacity, self.w_coverage, self.w_fairness) < 0:
            raise ValueError("weights must be >= 0")

    def as_tuple(self):
        return (self.w_capacity, self.w_coverage, self.w_fairness)


@dataclass
class Kpis:
    sum_rate: float            # bit/s over covered users
    coverage: float            # fraction of users above threshold
    fairness_counts: float     # Jain over per-UAV served-user counts
    fairness_rates: float      # Jain over covered users' rates
    objective: float
    covered: tuple = ()        # covered UE indices
    per_uav_load: tuple = ()   # served-user count per UAV

    def to_dict(self) -> dict:
        return {
            "sum_rate": self.sum_rate,
            "coverage": self.coverage,
            "fairness_counts": self.fairness_counts,
            "fairness_rates": self.fairness_rates,
            "objective": self.objective,
            "covered": list(self.covered),
            "per_uav_load": list(self.per_uav_load),
        }

    @staticmethod
    def zero() -> "Kpis":
        return Kpis(0.0, 0.0, 0.0, 0.0, 0.0, (), ())


def coverage_set(report: SinrReport, gamma_th: float) -> set:
    """UE indices whose wideband SINR meets the linear threshold (inclusive)."""
    return {int(u) for u in np.nonzero(report.sinr_wideband >= gamma_th)[0]}


def shannon_capacity(gamma: float, b_sc: float) -> float:
    """Single-subcarrier Shannon rate B * log2(1 + gamma), bit/s."""
    if gamma < 0:
        raise ValueError("gamma must be >= 0")
    return b_sc * np.log2(1.0 + gamma)


def per_ue_rates(report: SinrReport, config: RadioConfig) -> np.ndarray:
    """Full-band Shannon rate per UE from its per-subcarrier SINRs."""
    return (config.subcarrier_spacing * np.log2(1.0 + report.sinr_subcarrier)).sum(axis=1)


def sum_rate(report: SinrReport, covered, config: RadioConfig) -> float:
    rates = per_ue_rates(report, config)
    return float(sum(rates[u] for u in covered))


def jain_index(values) -> float:
    """(sum x)^2 / (n sum x^2); all-zero input is defined as 0."""
    v = np.asarray(list(values), dtype=np.float64)
    if len(v) == 0:
        return 0.0
    s2 = float((v ** 2).sum())
    if s2 == 0.0:
        return 0.0
    return float(v.sum() ** 2 / (len(v) * s2))


def jain_counts(n_b, n_servers: int) -> float:
    """Jain fairness over per-server load counts, normalized by n_servers."""
    v = np.asarray(list(n_b), dtype=np.float64)
    if n_servers < 1:
        return 0.0
    s2 = float((v ** 2).sum())
    if s2 == 0.0:
        return 0.0
    return float(v.sum() ** 2 / (n_servers * s2))


def jain_rates(rates) -> float:
    return jain_index(rates)


def objective(kpis: Kpis, weights: ObjectiveWeights) -> float:
    """Composite utility; capacity enters in Mbit/s to keep values tame."""
    factors = (kpis.sum_rate / 1e6, kpis.coverage, kpis.fairness_counts)
    out = 1.0
    for x, w in zip(factors, weights.as_tuple()):
        if x == 0.0 and w > 0.0:
            return 0.0
        out *= x ** w
    return float(out)


def evaluate_topology(scene: Scene, topology, ues, radio: RadioConfig,
                      trace_cfg: TraceConfig | None = None,
                      backend: str = "raytraced",
                      weights: ObjectiveWeights = ObjectiveWeights(),
                      gnb_positions=(),
                      gnb_cochannel: bool = True,
                      fairness_includes_gnbs: bool = False) -> Kpis:
    """Full KPI evaluation of one aerial topology over fixed users.

    ``backend`` picks the channel model: "raytraced" runs the SBR tracer per
    transmitter; "uma" uses the deterministic expected-power surrogate.
    Active transmitters are the topology's UAVs plus its active gNBs; gNBs are
    co-channel interferers unless gnb_cochannel is off.
    """
    ues = np.atleast_2d(np.asarray(ues, dtype=np.float64))
    uav_pos = np.atleast_2d(np.asarray(topology.uav_positions, dtype=np.float64)) \
        if len(topology.uav_positions) else np.zeros((0, 3))
    n_uav = len(uav_pos)
    tx_positions = [uav_pos[i] for i in range(n_uav)]
    tx_ids = list(range(n_uav))
    for g in sorted(topology.active_gnbs):
        tx_positions.append(np.asarray(gnb_positions[g], dtype=np.float64))
        tx_ids.append(GNB_ID_BASE + g)
    if not tx_ids or len(ues) == 0:
        return Kpis.zero()
    groups = None
    if not gnb_cochannel:
        groups = {t: ("gnb" if t >= GNB_ID_BASE else "uav") for t in tx_ids}
    if backend == "raytraced":
        cfg = trace_cfg or TraceConfig()
        links = []
        for i, tx in enumerate(tx_positions):
            per_rx = raytrace.trace_sbr(scene, tx, ues, cfg)
            links += [channel.LinkState(taps, tx_ids[i], u, radio.tx_power_dbm)
                      for u, taps in enumerate(per_rx)]
        report = channel.compute_sinr(links, tx_ids, radio, n_ues=len(ues),
                                      interference_groups=groups)
    elif backend == "uma":
        report = channel.expected_sinr_uma(tx_positions, tx_ids, ues, radio,
                                           interference_groups=groups)
    else:
        raise ValueError(f"unknown channel backend {backend!r}")
    covered = coverage_set(report, radio.sinr_threshold)
    rates = per_ue_rates(report, radio)
    c_sum = float(sum(rates[u] for u in covered))
    server_ids = tx_ids if fairness_includes_gnbs else list(range(n_uav))
    loads = [sum(1 for u in covered if report.serving[u] == b) for b in server_ids]
    f_counts = jain_counts(loads, len(server_ids))
    f_rates = jain_rates([rates[u] for u in sorted(covered)])
    kpis = Kpis(c_sum, len(covered) / len(ues), f_counts, f_rates, 0.0,
                tuple(sorted(covered)), tuple(loads))
    kpis.objective = objective(kpis, weights)
    return kpis
