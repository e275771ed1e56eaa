"""Two-line-element parsing, desk-scale Kepler propagation and ground-station
elevation statistics.

Propagation is two-body from the TLE mean elements (no J2/drag): adequate for
coarse 24-hour visibility counts, and the record layout stays compatible with
standard TLE tooling so a full propagator can be swapped in.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone

import numpy as np

MU_EARTH = 398600.4418        # km^3 / s^2
R_EARTH = 6378.137            # km, WGS84 equatorial
WGS84_F = 1.0 / 298.257223563
SECONDS_PER_DAY = 86400.0
_J2000 = datetime(2000, 1, 1, 12, 0, 0, tzinfo=timezone.utc)


@dataclass
class TleRecord:
    name: str
    epoch: datetime
    inclination_deg: float
    raan_deg: float
    eccentricity: float
    arg_perigee_deg: float
    mean_anomaly_deg: float
    mean_motion_rev_day: float
    catalog_number: int = 0

    def __post_init__(self):
        if not (0.0 <= self.eccentricity < 1.0):
            raise ValueError("eccentricity must be in [0, 1)")

    @property
    def semi_major_axis_km(self) -> float:
        n = self.mean_motion_rev_day * 2 * np.pi / SECONDS_PER_DAY  # rad/s
        return (MU_EARTH / n ** 2) ** (1.0 / 3.0)

    @property
    def period_s(self) -> float:
        return SECONDS_PER_DAY / self.mean_motion_rev_day


@dataclass
class Observer:
    latitude_deg: float
    longitude_deg: float
    altitude_m: float = 0.0

    def __post_init__(self):
        if abs(self.latitude_deg) > 90 or abs(self.longitude_deg) > 180:
            raise ValueError("observer coordinates out of range")


def line_checksum(line: str) -> int:
    """TLE checksum: digit sum with '-' counting 1, modulo 10."""
    s = 0
    for ch in line[:68]:
        if ch.isdigit():
            s += int(ch)
        elif ch == "-":
            s += 1
    return s % 10


def _epoch_from_fields(yy: int, day_frac: float) -> datetime:
    year = 2000 + yy if yy < 57 else 1900 + yy
    return datetime(year, 1, 1, tzinfo=timezone.utc) + timedelta(days=day_frac - 1.0)


def parse_tle(line1: str, line2: str, name: str = "") -> TleRecord:
    """Decode a standard two-line element set (fixed columns, checksummed)."""
    for lineno, line in ((1, line1), (2, line2)):
        if len(line) != 69:
            raise ValueError(f"line {lineno} must be 69 characters, got {len(line)}")
        if line[0] != str(lineno):
            raise ValueError(f"line {lineno} must start with '{lineno}'")
        if line_checksum(line) != int(line[68]):
            raise ValueError(f"line {lineno} checksum mismatch")
    catalog = int(line1[2:7])
    yy = int(line1[18:20])
    day_frac = float(line1[20:32])
    incl = float(line2[8:16])
    raan = float(line2[17:25])
    ecc = float("0." + line2[26:33].strip())   # implied leading decimal point
    argp = float(line2[34:42])
    ma = float(line2[43:51])
    mm = float(line2[52:63])
    return TleRecord(name.strip(), _epoch_from_fields(yy, day_frac),
                     incl, raan, ecc, argp, ma, mm, catalog)


def render_tle(rec: TleRecord) -> tuple:
    """Two formatted TLE lines for a record (unused fields rendered zero)."""
    yy = rec.epoch.year % 100
    jan1 = datetime(rec.epoch.year, 1, 1, tzinfo=timezone.utc)
    day = (rec.epoch - jan1).total_seconds() / SECONDS_PER_DAY + 1.0
    l1 = (f"1 {rec.catalog_number:05d}U 00000A   {yy:02d}{day:012.8f}  "
          f".00000000  00000-0  00000-0 0  0000")
    ecc_field = f"{rec.eccentricity:.7f}"[2:9]
    l2 = (f"2 {rec.catalog_number:05d} {rec.inclination_deg:8.4f} {rec.raan_deg:8.4f} "
          f"{ecc_field} {rec.arg_perigee_deg:8.4f} {rec.mean_anomaly_deg:8.4f} "
          f"{rec.mean_motion_rev_day:11.8f}00000")
    l1 = l1[:68] + str(line_checksum(l1))
    l2 = l2[:68] + str(line_checksum(l2))
    return l1, l2


def load_tle_file(path) -> list:
    """Read 2-line or 3-line (named) element sets from a text file."""
    lines = [ln.rstrip("\n") for ln in open(path) if ln.strip()]
    records = []
    i = 0
    while i < len(lines):
        if lines[i].startswith("1 ") and i + 1 < len(lines):
            records.append(parse_tle(lines[i], lines[i + 1]))
            i += 2
        elif i + 2 < len(lines) and lines[i + 1].startswith("1 "):
            records.append(parse_tle(lines[i + 1], lines[i + 2], name=lines[i]))
            i += 3
        else:
            raise ValueError(f"unrecognized TLE structure at line {i + 1}")
    return records


def solve_kepler(mean_anomaly: float, ecc: float, tol: float = 1e-10) -> float:
    """Eccentric anomaly from Kepler's equation by Newton iteration."""
    m = np.mod(mean_anomaly, 2 * np.pi)
    e_anom = m if ecc < 0.8 else np.pi
    for _ in range(60):
        delta = (e_anom - ecc * np.sin(e_anom) - m) / (1.0 - ecc * np.cos(e_anom))
        e_anom -= delta
        if abs(delta) < tol:
            return float(e_anom)
    raise RuntimeError("Kepler iteration did not converge")


def propagate(rec: TleRecord, t: datetime) -> np.ndarray:
    """ECI position (km) at time t by two-body propagation of mean elements."""
    dt = (t - rec.epoch).total_seconds()
    if abs(dt) > 7 * SECONDS_PER_DAY:
        raise ValueError("propagation limited to 7 days from epoch")
    n = rec.mean_motion_rev_day * 2 * np.pi / SECONDS_PER_DAY
    m = np.radians(rec.mean_anomaly_deg) + n * dt
    e_anom = solve_kepler(m, rec.eccentricity)
    a = rec.semi_major_axis_km
    ecc = rec.eccentricity
    nu = 2.0 * np.arctan2(np.sqrt(1 + ecc) * np.sin(e_anom / 2),
                          np.sqrt(1 - ecc) * np.cos(e_anom / 2))
    r = a * (1 - ecc * np.cos(e_anom))
    r_pf = np.array([r * np.cos(nu), r * np.sin(nu), 0.0])
    cw, sw = np.cos(np.radians(rec.arg_perigee_deg)), np.sin(np.radians(rec.arg_perigee_deg))
    ci, si = np.cos(np.radians(rec.inclination_deg)), np.sin(np.radians(rec.inclination_deg))
    co, so = np.cos(np.radians(rec.raan_deg)), np.sin(np.radians(rec.raan_deg))
    rz_w = np.array([[cw, -sw, 0], [sw, cw, 0], [0, 0, 1]])
    rx_i = np.array([[1, 0, 0], [0, ci, -si], [0, si, ci]])
    rz_o = np.array([[co, -so, 0], [so, co, 0], [0, 0, 1]])
    return rz_o @ rx_i @ rz_w @ r_pf


def gmst_rad(t: datetime) -> float:
    """Greenwich mean sidereal time from the standard linear polynomial."""
    d = (t - _J2000).total_seconds() / SECONDS_PER_DAY
    gmst_deg = 280.46061837 + 360.98564736629 * d
    return np.radians(gmst_deg % 360.0)


def observer_ecef_km(obs: Observer) -> np.ndarray:
    """WGS84 geodetic coordinates to ECEF (km)."""
    lat = np.radians(obs.latitude_deg)
    lon = np.radians(obs.longitude_deg)
    e2 = WGS84_F * (2 - WGS84_F)
    n = R_EARTH / np.sqrt(1 - e2 * np.sin(lat) ** 2)
    h = obs.altitude_m / 1000.0
    return np.array([
        (n + h) * np.cos(lat) * np.cos(lon),
        (n + h) * np.cos(lat) * np.sin(lon),
        (n * (1 - e2) + h) * np.sin(lat),
    ])


def elevation(obs: Observer, sat_eci_km, t: datetime) -> float:
    """Elevation angle (deg) of an ECI satellite position above the observer."""
    theta = gmst_rad(t)
    c, s = np.cos(-theta), np.sin(-theta)
    rz = np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])
    sat_ecef = rz @ np.asarray(sat_eci_km, dtype=np.float64)
    obs_ecef = observer_ecef_km(obs)
    rel = sat_ecef - obs_ecef
    lat = np.radians(obs.latitude_deg)
    lon = np.radians(obs.longitude_deg)
    up = np.array([np.cos(lat) * np.cos(lon), np.cos(lat) * np.sin(lon), np.sin(lat)])
    rng = np.linalg.norm(rel)
    return float(np.degrees(np.arcsin(np.clip(np.dot(rel, up) / rng, -1.0, 1.0))))


@dataclass
class VisibilityResult:
    times: list                      # datetimes
    counts: np.ndarray               # (T, len(thresholds))
    thresholds: tuple
    elevations: np.ndarray           # all positive-elevation samples, deg
    summary: dict = field(default_factory=dict)


def visibility_series(tles, observer: Observer, start: datetime,
                      window_s: float = SECONDS_PER_DAY, step_s: float = 60.0,
                      thresholds=(60.0, 70.0, 80.0)) -> VisibilityResult:
    """Count satellites above each elevation threshold over a time window."""
    if step_s <= 0:
        raise ValueError("step must be > 0")
    n_steps = int(window_s // step_s) + 1
    times = [start + timedelta(seconds=step_s * k) for k in range(n_steps)]
    counts = np.zeros((n_steps, len(thresholds)), dtype=np.int64)
    pos_elevations = []
    for k, t in enumerate(times):
        for rec in tles:
            el = elevation(observer, propagate(rec, t), t)
            if el > 0:
                pos_elevations.append(el)
            for j, th in enumerate(thresholds):
                if el >= th:
                    counts[k, j] += 1
    summary = {}
    for j, th in enumerate(thresholds):
        summary[f"mean_{int(th)}"] = float(counts[:, j].mean()) if n_steps else 0.0
        summary[f"min_{int(th)}"] = int(counts[:, j].min()) if n_steps else 0
        summary[f"max_{int(th)}"] = int(counts[:, j].max()) if n_steps else 0
    return VisibilityResult(times, counts, tuple(thresholds),
                            np.array(pos_elevations), summary)
