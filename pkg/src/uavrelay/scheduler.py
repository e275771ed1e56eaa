"""Slot-level proportional-fair downlink over resource blocks.

Delivered rate per granted block is the Shannon rate at that block's SINR
(link abstraction; no HARQ/AMC chain). Slot duration is fixed at 0.5 ms,
the 14-symbol slot of 30 kHz numerology.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .channel import NO_SERVING, RadioConfig, SinrReport
from .metrics import jain_rates

SLOT_DURATION_S = 0.5e-3


@dataclass
class SchedulerConfig:
    n_slots: int = 100
    rb_subcarriers: int = 12
    pf_time_constant: float = 100.0       # slots; inf degenerates to max-rate
    max_ues_per_tx_per_slot: int = 16     # stands in for the antenna bound
    epsilon_rate: float = 1.0             # bit/s, PF denominator guard

    def __post_init__(self):
        if self.n_slots < 1 or self.rb_subcarriers < 1:
            raise ValueError("n_slots and rb_subcarriers must be >= 1")


@dataclass
class ScheduleResult:
    delivered_bits: np.ndarray      # (U,)
    throughput: np.ndarray          # (U,) bit/s averaged over the run
    grid: np.ndarray                # (n_slots, n_tx, n_rb) granted UE or -1
    tx_ids: tuple
    jain_rates: float
    slot_duration_s: float = SLOT_DURATION_S

    def summary(self) -> dict:
        return {
            "sum_rate": float(self.throughput.sum()),
            "jain_rates": self.jain_rates,
            "total_bits": float(self.delivered_bits.sum()),
        }


def run_pf(report: SinrReport, config: SchedulerConfig, radio: RadioConfig) -> ScheduleResult:
    """Proportional-fair grant loop over slots, transmitters and blocks.

    Per block the scheduler grants the associated UE maximizing instantaneous
    block rate over its throughput average (EWMA with the configured time
    constant), holding each transmitter to at most max_ues_per_tx_per_slot
    distinct users per slot. Unassociated users receive nothing.
    """
    n_ues, k = report.sinr_subcarrier.shape
    n_rb = k // config.rb_subcarriers
    tx_ids = [t for t in report.tx_ids if (report.serving == t).any()]
    b_sc = radio.subcarrier_spacing
    # static per-block Shannon rates (channel is frozen over the run)
    used = n_rb * config.rb_subcarriers
    per_sc = b_sc * np.log2(1.0 + report.sinr_subcarrier[:, :used])
    rb_rate = per_sc.reshape(n_ues, n_rb, config.rb_subcarriers).sum(axis=2)

    t_avg = np.zeros(n_ues)
    bits = np.zeros(n_ues)
    grid = np.full((config.n_slots, len(tx_ids), n_rb), -1, dtype=np.int64)
    w = 0.0 if np.isinf(config.pf_time_constant) else 1.0 / config.pf_time_constant
    members = {t: np.nonzero(report.serving == t)[0] for t in tx_ids}
    for slot in range(config.n_slots):
        granted_rate = np.zeros(n_ues)
        for ti, tx in enumerate(tx_ids):
            ues = members[tx]
            if len(ues) == 0:
                continue
            chosen = []
            for rb in range(n_rb):
                pool = ues if len(chosen) < config.max_ues_per_tx_per_slot \
                    else np.array(chosen, dtype=np.int64)
                rates = rb_rate[pool, rb]
                if rates.max() <= 0.0:
                    continue
                metric = rates / (t_avg[pool] + config.epsilon_rate)
                u = int(pool[int(np.argmax(metric))])
                grid[slot, ti, rb] = u
                granted_rate[u] += rb_rate[u, rb]
                if u not in chosen:
                    chosen.append(u)
        bits += granted_rate * SLOT_DURATION_S
        t_avg = (1.0 - w) * t_avg + w * granted_rate
    duration = config.n_slots * SLOT_DURATION_S
    throughput = bits / duration
    served = report.serving != NO_SERVING
    jr = jain_rates(throughput[served]) if served.any() else 0.0
    return ScheduleResult(bits, throughput, grid, tuple(tx_ids), jr)
