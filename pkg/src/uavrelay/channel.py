"""Link-level quantities from path taps: coherent power, frequency response,
SINR assembly, and the stochastic urban-macro surrogate used by the
model-based optimization baseline.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.constants import c as C_LIGHT, k as K_BOLTZMANN

from .raytrace import PathTap

NO_SERVING = -1


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


def watts_to_dbm(watts: float) -> float:
    return 10.0 * np.log10(watts) + 30.0


def db_to_linear(db: float) -> float:
    return 10.0 ** (db / 10.0)


@dataclass
class RadioConfig:
    carrier_freq: float = 2e9
    subcarrier_spacing: float = 30e3
    num_subcarriers: int = 660
    bandwidth: float = 20e6
    tx_power_dbm: float = 23.0          # per BS / UAV transmitter
    eirp_d2c_dbm: float = 85.0
    noise_temperature: float = 290.0
    sinr_threshold_db: float = 5.0

    def __post_init__(self):
        # occupied band must match the grid to within one resource block
        if abs(self.bandwidth - self.subcarrier_spacing * self.num_subcarriers) > 12 * self.subcarrier_spacing:
            raise ValueError("bandwidth inconsistent with subcarrier grid")

    @property
    def sinr_threshold(self) -> float:
        return db_to_linear(self.sinr_threshold_db)

    def subcarrier_offsets(self) -> np.ndarray:
        """Baseband subcarrier center frequencies, centered on the carrier."""
        k = np.arange(self.num_subcarriers, dtype=np.float64)
        return (k - (self.num_subcarriers - 1) / 2.0) * self.subcarrier_spacing


@dataclass
class LinkState:
    """All taps of one tx -> rx link, sorted by delay."""

    taps: list
    tx_id: int
    rx_id: int
    tx_power_dbm: float = 23.0

    def __post_init__(self):
        self.taps = sorted(self.taps, key=lambda t: (t.delay, t.signature))


@dataclass
class SinrReport:
    serving: np.ndarray          # (U,) tx id or NO_SERVING
    sinr_wideband: np.ndarray    # (U,) linear
    sinr_subcarrier: np.ndarray  # (U, K) linear, serving-tx based
    noise_wideband: float        # W
    noise_subcarrier: float      # W
    tx_ids: tuple = ()


def coherent_power(link: LinkState, tx_power_dbm: float | None = None) -> float:
    """Received power in watts: P_tx * |sum of tap amplitudes|^2."""
    if not link.taps:
        return 0.0
    p = dbm_to_watts(link.tx_power_dbm if tx_power_dbm is None else tx_power_dbm)
    s = sum(t.amplitude for t in link.taps)
    return p * abs(s) ** 2


def frequency_response(link: LinkState, subcarrier_freqs) -> np.ndarray:
    """Channel transfer function H(f) = sum_l alpha_l exp(-j 2 pi f tau_l).

    Frequencies are baseband offsets; at zero offset |H|^2 equals the
    coherent-power gain exactly.
    """
    freqs = np.asarray(subcarrier_freqs, dtype=np.float64)
    if not link.taps:
        return np.zeros(len(freqs), dtype=np.complex128)
    amps = np.array([t.amplitude for t in link.taps])
    delays = np.array([t.delay for t in link.taps])
    return (amps[None, :] * np.exp(-2j * np.pi * freqs[:, None] * delays[None, :])).sum(axis=1)


def noise_power(config: RadioConfig, bandwidth: float) -> float:
    """Thermal noise floor k_B * T * B in watts."""
    if bandwidth <= 0:
        raise ValueError("bandwidth must be > 0")
    return K_BOLTZMANN * config.noise_temperature * bandwidth


def compute_sinr(links, active_tx, config: RadioConfig, n_ues: int | None = None,
                 interference_groups: dict | None = None) -> SinrReport:
    """Wideband and per-subcarrier SINR per UE over the active transmitters.

    Serving transmitter is the coherent-power argmax (ties to the lowest tx
    id). Wideband SINR uses full-band noise; per-subcarrier SINR uses the
    DFT-of-taps response of each link and single-subcarrier noise. When
    ``interference_groups`` maps tx ids to group keys, only co-group
    transmitters interfere (default: all co-channel).
    """
    active = sorted(set(active_tx))
    if not active:
        raise ValueError("active_tx must be nonempty")
    by_pair = {(l.tx_id, l.rx_id): l for l in links if l.tx_id in active}
    if n_ues is None:
        n_ues = max((l.rx_id for l in links), default=-1) + 1
    k = config.num_subcarriers
    offsets = config.subcarrier_offsets()
    n_wb = noise_power(config, config.bandwidth)
    n_sc = noise_power(config, config.subcarrier_spacing)
    powers = np.zeros((n_ues, len(active)))
    h2 = np.zeros((n_ues, len(active), k))       # per-subcarrier received power
    for bi, tx in enumerate(active):
        for u in range(n_ues):
            link = by_pair.get((tx, u))
            if link is None or not link.taps:
                continue
            ptx = dbm_to_watts(link.tx_power_dbm)
            powers[u, bi] = coherent_power(link)
            h2[u, bi] = ptx * np.abs(frequency_response(link, offsets)) ** 2
    group = {tx: (interference_groups or {}).get(tx, 0) for tx in active}
    same_group = np.array([[group[a] == group[b] for b in active] for a in active])
    serving = np.full(n_ues, NO_SERVING, dtype=np.int64)
    gamma_wb = np.zeros(n_ues)
    gamma_sc = np.zeros((n_ues, k))
    for u in range(n_ues):
        if powers[u].max() <= 0.0:
            continue
        bi = int(np.argmax(powers[u]))
        serving[u] = active[bi]
        mask = same_group[bi].copy()
        mask[bi] = False
        interf = powers[u, mask].sum()
        gamma_wb[u] = powers[u, bi] / (interf + n_wb)
        interf_sc = h2[u, mask].sum(axis=0)
        gamma_sc[u] = h2[u, bi] / (interf_sc + n_sc)
    return SinrReport(serving, gamma_wb, gamma_sc, n_wb, n_sc, tuple(active))


# -- TR 38.901-style urban-macro surrogate -------------------------------------

def uma_los_probability(d2d: float) -> float:
    """LoS probability for outdoor urban-macro users below 13 m height."""
    if d2d <= 18.0:
        return 1.0
    return 18.0 / d2d + np.exp(-d2d / 63.0) * (1.0 - 18.0 / d2d)


def uma_pathloss_los_db(d3d: float, freq: float) -> float:
    if d3d <= 0:
        raise ValueError("d3d must be > 0")
    return 28.0 + 22.0 * np.log10(d3d) + 20.0 * np.log10(freq / 1e9)


def uma_pathloss_nlos_db(d3d: float, freq: float, h_ut: float = 1.5) -> float:
    pl = 13.54 + 39.08 * np.log10(d3d) + 20.0 * np.log10(freq / 1e9) - 0.6 * (h_ut - 1.5)
    return max(uma_pathloss_los_db(d3d, freq), pl)


def uma_stochastic_link(tx_pos, ue_pos, config: RadioConfig, rng) -> dict:
    """One sampled urban-macro link: LoS probability, pathlosses, LoS draw."""
    tx_pos = np.asarray(tx_pos, dtype=np.float64)
    ue_pos = np.asarray(ue_pos, dtype=np.float64)
    d2d = float(np.linalg.norm(tx_pos[:2] - ue_pos[:2]))
    d3d = float(np.linalg.norm(tx_pos - ue_pos))
    if d3d == 0.0:
        raise ValueError("tx and ue positions coincide")
    p_los = float(uma_los_probability(d2d))
    pl_los = float(uma_pathloss_los_db(d3d, config.carrier_freq))
    pl_nlos = float(uma_pathloss_nlos_db(d3d, config.carrier_freq, h_ut=float(ue_pos[2])))
    is_los = bool(rng.random() < p_los)
    return {
        "p_los": p_los,
        "pathloss_los_db": pl_los,
        "pathloss_nlos_db": pl_nlos,
        "pathloss_db": pl_los if is_los else pl_nlos,
        "is_los": is_los,
    }


def uma_expected_link(tx_pos, ue_pos, config: RadioConfig, tx_id: int, rx_id: int,
                      tx_power_dbm: float | None = None, force_los: bool = False) -> LinkState:
    """Deterministic surrogate link carrying the LoS/NLoS expected power.

    Represented as a single real tap so the downstream SINR/scheduling code
    treats surrogate links exactly like traced ones (flat in frequency).
    """
    tx_pos = np.asarray(tx_pos, dtype=np.float64)
    ue_pos = np.asarray(ue_pos, dtype=np.float64)
    d3d = float(np.linalg.norm(tx_pos - ue_pos))
    if d3d == 0.0:
        raise ValueError("tx and ue positions coincide")
    d2d = float(np.linalg.norm(tx_pos[:2] - ue_pos[:2]))
    p_los = 1.0 if force_los else float(uma_los_probability(d2d))
    g_los = db_to_linear(-uma_pathloss_los_db(d3d, config.carrier_freq))
    g_nlos = db_to_linear(-uma_pathloss_nlos_db(d3d, config.carrier_freq, h_ut=float(ue_pos[2])))
    gain = p_los * g_los + (1.0 - p_los) * g_nlos
    power_dbm = config.tx_power_dbm if tx_power_dbm is None else tx_power_dbm
    tap = PathTap(complex(np.sqrt(gain)), d3d / C_LIGHT, (), "los")
    return LinkState([tap], tx_id, rx_id, power_dbm)


def expected_sinr_uma(tx_positions, tx_ids, ues, config: RadioConfig,
                      force_los: bool = False,
                      interference_groups: dict | None = None) -> SinrReport:
    """SINR report under the expected-power urban-macro surrogate."""
    if len(tx_positions) == 0:
        raise ValueError("need at least one transmitter")
    ues = np.atleast_2d(np.asarray(ues, dtype=np.float64))
    links = [
        uma_expected_link(tx_positions[i], ues[u], config, tx_ids[i], u, force_los=force_los)
        for i in range(len(tx_positions)) for u in range(len(ues))
    ]
    return compute_sinr(links, tx_ids, config, n_ues=len(ues),
                        interference_groups=interference_groups)
