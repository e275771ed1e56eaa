"""Multipath enumeration between transmitters and receivers.

Two tracers share one exact specular-path solver:

* ``trace_image`` exhaustively enumerates reflection sequences by the image
  method (exact, depth-capped at 3 for combinatorial safety).
* ``trace_sbr`` discovers candidate reflection sequences with
  shooting-and-bouncing rays, then replaces each discovered signature by its
  exact image-method tap (standard SBR geometric correction), so discovered
  paths carry no Monte-Carlo amplitude noise.

Path amplitudes follow the Friis-with-Fresnel convention under unit transmit
power: alpha = (lambda / 4 pi d) * prod(Gamma_i) * exp(-j 2 pi d / lambda).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.constants import c as C_LIGHT, epsilon_0 as EPS0

from .scene import (EPS_HIT, GROUND_ID, NO_HIT, Material, Scene, intersect_batch,
                    segments_clear_batch)

_SEG_SHRINK = 1e-4   # m trimmed from both segment ends in occlusion tests
_FAR = 1e9           # stand-in extent for unobstructed ray segments


@dataclass(frozen=True)
class PathTap:
    """One resolved propagation path: complex voltage gain + delay."""

    amplitude: complex
    delay: float                       # s
    interactions: tuple                # ((reflector id, (x, y, z)), ...)
    kind: str                          # "los" or "reflected"

    @property
    def depth(self) -> int:
        return len(self.interactions)

    @property
    def signature(self) -> tuple:
        return tuple(i for i, _ in self.interactions)


@dataclass
class TraceConfig:
    max_depth: int = 3
    ray_count: int = 200_000
    capture_radius_scale: float = 1.0
    carrier_freq: float = 2e9
    fidelity: float = 1.0              # fraction of ray_count actually launched

    def __post_init__(self):
        if self.max_depth < 0:
            raise ValueError("max_depth must be >= 0")
        if self.ray_count < 1:
            raise ValueError("ray_count must be >= 1")
        if not (0.0 < self.fidelity <= 1.0):
            raise ValueError("fidelity must be in (0, 1]")

    @property
    def effective_rays(self) -> int:
        return max(1, int(round(self.ray_count * self.fidelity)))


# -- reflection physics ------------------------------------------------------

def fresnel_reflection(material: Material, incidence_angle: float,
                       polarization: str, freq: float) -> complex:
    """Plane-wave reflection coefficient at a smooth interface.

    ``incidence_angle`` is measured from the surface normal in [0, pi/2).
    Perfect conductors return the ideal-limit values (-1 TE, +1 TM).
    """
    if not (0.0 <= incidence_angle < np.pi / 2):
        raise ValueError("incidence angle must be in [0, pi/2)")
    if material.perfect_conductor:
        return -1.0 + 0.0j if polarization == "TE" else 1.0 + 0.0j
    w = 2 * np.pi * freq
    eps_c = material.rel_permittivity - 1j * material.conductivity / (w * EPS0)
    cos_i = np.cos(incidence_angle)
    root = np.sqrt(eps_c - np.sin(incidence_angle) ** 2)
    if polarization == "TE":
        g = (cos_i - root) / (cos_i + root)
    elif polarization == "TM":
        g = (eps_c * cos_i - root) / (eps_c * cos_i + root)
    else:
        raise ValueError(f"polarization must be 'TE' or 'TM', got {polarization!r}")
    return complex(g)


def path_amplitude(total_length: float, reflections, freq: float) -> complex:
    """Complex voltage gain of a path of given unfolded length (unit TX power)."""
    if total_length <= 0:
        raise ValueError("total_length must be > 0")
    lam = C_LIGHT / freq
    amp = lam / (4 * np.pi * total_length)
    phase = np.exp(-2j * np.pi * total_length / lam)
    g = 1.0 + 0.0j
    for r in reflections:
        g *= r
    return complex(amp * g * phase)


def _polarization_for(normal) -> str:
    # scalar-polarization convention: TM on near-horizontal facets, TE on walls
    return "TM" if abs(float(normal[2])) >= 0.5 else "TE"


# -- geometry helpers ---------------------------------------------------------

def _reflector_plane(scene: Scene, rid: int):
    if rid == GROUND_ID:
        return np.array([0.0, 0.0, scene.ground_z]), np.array([0.0, 0.0, 1.0])
    return scene.triangles[rid, 0], scene.triangle_normal(rid)


def _mirror(point, plane_pt, plane_n):
    return point - 2.0 * float(np.dot(point - plane_pt, plane_n)) * plane_n


def _on_facet(scene: Scene, rid: int, p) -> bool:
    if rid == GROUND_ID:
        return True
    v0, v1, v2 = scene.triangles[rid]
    e1, e2 = v1 - v0, v2 - v0
    w = p - v0
    d11, d12, d22 = np.dot(e1, e1), np.dot(e1, e2), np.dot(e2, e2)
    dw1, dw2 = np.dot(w, e1), np.dot(w, e2)
    det = d11 * d22 - d12 * d12
    if abs(det) < 1e-18:
        return False
    u = (d22 * dw1 - d12 * dw2) / det
    v = (d11 * dw2 - d12 * dw1) / det
    tol = 1e-9
    return u >= -tol and v >= -tol and u + v <= 1 + tol


def segment_clear(scene: Scene, a, b) -> bool:
    """True iff the open segment (a, b), shrunk by a small margin, is unoccluded."""
    d = np.asarray(b, dtype=np.float64) - np.asarray(a, dtype=np.float64)
    length = float(np.linalg.norm(d))
    if length <= 2 * _SEG_SHRINK:
        return True
    u = d / length
    origin = np.asarray(a, dtype=np.float64) + u * _SEG_SHRINK
    t, tid = intersect_batch(scene, origin[None, :], u[None, :],
                             t_max=length - 2 * _SEG_SHRINK)
    return int(tid[0]) == NO_HIT


def los_clear(scene: Scene, a, b) -> bool:
    """True iff no geometry intersects the open segment between a and b."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if np.array_equal(a, b):
        raise ValueError("endpoints must differ")
    return segment_clear(scene, a, b)


def _fresnel_array(eps_r, sigma, pec, cos_i, is_tm, freq: float):
    """Vectorized Fresnel coefficients for mixed material/polarization arrays."""
    w = 2 * np.pi * freq
    eps_c = eps_r - 1j * sigma / (w * EPS0)
    sin2 = 1.0 - cos_i ** 2
    root = np.sqrt(eps_c - sin2)
    te = (cos_i - root) / (cos_i + root)
    tm = (eps_c * cos_i - root) / (eps_c * cos_i + root)
    out = np.where(is_tm, tm, te)
    return np.where(pec, np.where(is_tm, 1.0 + 0.0j, -1.0 + 0.0j), out)


def solve_specular_batch(scene: Scene, tx, rx, sequences, freq: float):
    """Exact specular paths for many same-depth reflector sequences at once.

    Returns a list aligned with ``sequences``: a PathTap where the sequence
    admits a valid (facet-contained, unoccluded) specular path, else None.
    """
    if not sequences:
        return []
    tx = np.asarray(tx, dtype=np.float64)
    rx = np.asarray(rx, dtype=np.float64)
    seq = np.asarray(sequences, dtype=np.int64)
    c, d = seq.shape
    ground = seq == GROUND_ID
    pts = np.where(ground[..., None], np.array([0.0, 0.0, scene.ground_z]),
                   scene.triangles[np.where(ground, 0, seq), 0])
    nrm = np.where(ground[..., None], np.array([0.0, 0.0, 1.0]),
                   scene._normals[np.where(ground, 0, seq)])
    # forward image chain
    images = np.empty((c, d + 1, 3))
    images[:, 0] = tx
    for k in range(d):
        v = images[:, k] - pts[:, k]
        dist = np.einsum("ck,ck->c", v, nrm[:, k])
        images[:, k + 1] = images[:, k] - 2.0 * dist[:, None] * nrm[:, k]
    # backward reflection-point solve
    valid = np.ones(c, dtype=bool)
    points = np.empty((c, d, 3))
    target = np.tile(rx, (c, 1))
    for k in range(d - 1, -1, -1):
        img = images[:, k + 1]
        segv = target - img
        denom = np.einsum("ck,ck->c", segv, nrm[:, k])
        safe = np.where(np.abs(denom) < 1e-15, 1.0, denom)
        t = np.einsum("ck,ck->c", pts[:, k] - img, nrm[:, k]) / safe
        valid &= (np.abs(denom) >= 1e-15) & (t > 1e-9) & (t < 1 - 1e-9)
        p = img + t[:, None] * segv
        # facet containment (ground plane passes trivially)
        tri = np.where(ground[:, k], 0, seq[:, k])
        v0 = scene.triangles[tri, 0]
        e1 = scene._edges1[tri]
        e2 = scene._edges2[tri]
        w = p - v0
        d11 = np.einsum("ck,ck->c", e1, e1)
        d12 = np.einsum("ck,ck->c", e1, e2)
        d22 = np.einsum("ck,ck->c", e2, e2)
        dw1 = np.einsum("ck,ck->c", w, e1)
        dw2 = np.einsum("ck,ck->c", w, e2)
        det = d11 * d22 - d12 * d12
        safe_det = np.where(np.abs(det) < 1e-18, 1.0, det)
        bu = (d22 * dw1 - d12 * dw2) / safe_det
        bv = (d11 * dw2 - d12 * dw1) / safe_det
        on_tri = (np.abs(det) >= 1e-18) & (bu >= -1e-9) & (bv >= -1e-9) & (bu + bv <= 1 + 1e-9)
        valid &= np.where(ground[:, k], True, on_tri)
        points[:, k] = p
        target = p
    if not valid.any():
        return [None] * c
    # occlusion along every physical segment of the surviving chains
    idx = np.nonzero(valid)[0]
    chains = np.concatenate([np.tile(tx, (len(idx), 1, 1)), points[idx],
                             np.tile(rx, (len(idx), 1, 1))], axis=1)   # (V, d+2, 3)
    starts = chains[:, :-1].reshape(-1, 3)
    ends = chains[:, 1:].reshape(-1, 3)
    clear = segments_clear_batch(scene, starts, ends, shrink=_SEG_SHRINK)
    clear = clear.reshape(len(idx), d + 1).all(axis=1)
    valid[idx] = clear
    if not valid.any():
        return [None] * c
    # reflection coefficients and amplitudes, vectorized over survivors
    idx = np.nonzero(valid)[0]
    chains = np.concatenate([np.tile(tx, (len(idx), 1, 1)), points[idx],
                             np.tile(rx, (len(idx), 1, 1))], axis=1)
    segs = chains[:, 1:] - chains[:, :-1]                       # (V, d+1, 3)
    seg_len = np.linalg.norm(segs, axis=2)
    total = seg_len.sum(axis=1)
    d_in = segs[:, :-1] / np.maximum(seg_len[:, :-1, None], 1e-300)
    cos_i = np.abs(np.einsum("vdk,vdk->vd", d_in, nrm[idx]))
    cos_i = np.clip(cos_i, 1e-12, 1.0)
    is_tm = np.abs(nrm[idx, :, 2]) >= 0.5
    eps_r = np.empty((len(idx), d))
    sigma = np.empty((len(idx), d))
    pec = np.zeros((len(idx), d), dtype=bool)
    for vi, ci in enumerate(idx):
        for k in range(d):
            m = scene.material_of(int(seq[ci, k]))
            eps_r[vi, k], sigma[vi, k], pec[vi, k] = (m.rel_permittivity,
                                                      m.conductivity, m.perfect_conductor)
    gammas = _fresnel_array(eps_r, sigma, pec, cos_i, is_tm, freq)
    lam = C_LIGHT / freq
    amps = (lam / (4 * np.pi * total)) * np.prod(gammas, axis=1) \
        * np.exp(-2j * np.pi * total / lam)
    out = [None] * c
    for vi, ci in enumerate(idx):
        interactions = tuple((int(seq[ci, k]), tuple(map(float, points[ci, k])))
                             for k in range(d))
        out[ci] = PathTap(complex(amps[vi]), float(total[vi]) / C_LIGHT,
                          interactions, "reflected")
    return out


def solve_specular(scene: Scene, tx, rx, sequence, freq: float):
    """Exact specular path for an ordered reflector sequence, or None.

    Mirrors the transmitter through each reflector plane, back-solves the
    reflection points from the receiver, and validates facet containment and
    per-segment occlusion. Returns a PathTap on success.
    """
    tx = np.asarray(tx, dtype=np.float64)
    rx = np.asarray(rx, dtype=np.float64)
    planes = [_reflector_plane(scene, rid) for rid in sequence]
    images = [tx]
    for pt, n in planes:
        images.append(_mirror(images[-1], pt, n))
    # back-solve reflection points from the receiver
    points = [None] * len(sequence)
    target = rx
    for k in range(len(sequence) - 1, -1, -1):
        pt, n = planes[k]
        img = images[k + 1]
        seg = target - img
        denom = float(np.dot(seg, n))
        if abs(denom) < 1e-15:
            return None
        t = float(np.dot(pt - img, n)) / denom
        if not (1e-9 < t < 1 - 1e-9):
            return None
        p = img + t * seg
        if not _on_facet(scene, sequence[k], p):
            return None
        points[k] = p
        target = p
    # occlusion along every physical segment
    chain = [tx] + points + [rx]
    for a, b in zip(chain[:-1], chain[1:]):
        if not segment_clear(scene, a, b):
            return None
    total = sum(float(np.linalg.norm(b - a)) for a, b in zip(chain[:-1], chain[1:]))
    gammas = []
    for k, rid in enumerate(sequence):
        _, n = planes[k]
        d_in = chain[k + 1] - chain[k]
        d_in = d_in / np.linalg.norm(d_in)
        cos_i = abs(float(np.dot(d_in, n)))
        angle = float(np.arccos(np.clip(cos_i, 0.0, 1.0)))
        angle = min(angle, np.pi / 2 - 1e-12)
        gammas.append(fresnel_reflection(scene.material_of(rid), angle,
                                         _polarization_for(n), freq))
    amp = path_amplitude(total, gammas, freq)
    interactions = tuple((int(rid), tuple(map(float, p))) for rid, p in zip(sequence, points))
    return PathTap(amp, total / C_LIGHT, interactions, "reflected")


def _los_tap(scene: Scene, tx, rx, freq: float):
    tx = np.asarray(tx, dtype=np.float64)
    rx = np.asarray(rx, dtype=np.float64)
    if not segment_clear(scene, tx, rx):
        return None
    d = float(np.linalg.norm(rx - tx))
    if d == 0.0:
        return None
    return PathTap(path_amplitude(d, (), freq), d / C_LIGHT, (), "los")


def _sort_taps(taps):
    return sorted(taps, key=lambda t: (t.delay, t.signature))


def trace_image(scene: Scene, tx, rx, max_depth: int = 2, freq: float = 2e9):
    """Exhaustive image-method path list: LoS + all valid specular sequences.

    Deterministic and exact; max_depth above 3 is rejected because the
    sequence count grows as (reflectors)^depth.
    """
    if max_depth > 3:
        raise ValueError("trace_image supports max_depth <= 3")
    tx = np.asarray(tx, dtype=np.float64)
    rx = np.asarray(rx, dtype=np.float64)
    if np.array_equal(tx, rx):
        raise ValueError("tx and rx must differ")
    taps = []
    los = _los_tap(scene, tx, rx, freq)
    if los is not None:
        taps.append(los)
    reflectors = list(range(scene.n_triangles))
    if scene.has_ground:
        reflectors.append(GROUND_ID)
    for depth in range(1, max_depth + 1):
        batch = []
        for seq in itertools.product(reflectors, repeat=depth):
            if any(seq[i] == seq[i + 1] for i in range(len(seq) - 1)):
                continue
            batch.append(seq)
            if len(batch) == 16384:
                taps += [t for t in solve_specular_batch(scene, tx, rx, batch, freq) if t]
                batch = []
        taps += [t for t in solve_specular_batch(scene, tx, rx, batch, freq) if t]
    return _sort_taps(taps)


# -- shooting and bouncing rays ------------------------------------------------

_R2_A1 = 0.7548776662466927   # 1/g, g the plastic number (2D low-discrepancy)
_R2_A2 = 0.5698402909980532   # 1/g^2


def launch_directions(n: int) -> np.ndarray:
    """First n directions of a fixed low-discrepancy sequence on the sphere.

    Prefix-stable: the first k directions are the same for every n >= k,
    which makes reduced-fidelity traces strict subsets of full traces.
    """
    i = np.arange(n, dtype=np.float64)
    u = np.mod(0.5 + _R2_A1 * i, 1.0)
    v = np.mod(0.5 + _R2_A2 * i, 1.0)
    z = 1.0 - 2.0 * u
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    phi = 2 * np.pi * v
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def trace_sbr(scene: Scene, tx, rx_list, config: TraceConfig):
    """Per-receiver path taps discovered by shooting-and-bouncing rays.

    LoS and the single ground bounce are computed analytically (they dominate
    the link budget and need no Monte-Carlo discovery). Launched rays bounce
    specularly up to max_depth; a candidate signature is registered whenever a
    ray segment passes within the receiver capture sphere of radius
    r = unfolded_length * sqrt(4 pi / ray_count) * capture_radius_scale.
    The capture radius uses the configured (not fidelity-reduced) ray count,
    so lowering fidelity only truncates the launch sequence. Every candidate
    signature is then solved exactly; invalid candidates are dropped and
    duplicates collapse, making results deterministic.
    """
    tx = np.asarray(tx, dtype=np.float64)
    rx_arr = np.atleast_2d(np.asarray(rx_list, dtype=np.float64))
    n_rx = len(rx_arr)
    freq = config.carrier_freq
    k_capture = np.sqrt(4 * np.pi / config.ray_count) * config.capture_radius_scale

    candidates = [set() for _ in range(n_rx)]
    all_dirs = launch_directions(config.effective_rays)

    for chunk_start in range(0, len(all_dirs), 32768):
        dirs = all_dirs[chunk_start:chunk_start + 32768]
        origins = np.tile(tx, (len(dirs), 1))
        plen = np.zeros(len(dirs))
        sig = np.full((len(dirs), max(config.max_depth, 1)), NO_HIT, dtype=np.int64)
        for seg_idx in range(config.max_depth + 1):
            if len(origins) == 0:
                break
            t_hit, hit_id = intersect_batch(scene, origins, dirs)
            seg_len = np.where(np.isfinite(t_hit), t_hit, _FAR)
            if seg_idx >= 1:
                # capture test against every receiver on the current segment
                rel = rx_arr[None, :, :] - origins[:, None, :]          # (N,U,3)
                u = np.einsum("nuk,nk->nu", rel, dirs)
                u = np.clip(u, 0.0, seg_len[:, None])
                closest = origins[:, None, :] + u[..., None] * dirs[:, None, :]
                dist = np.linalg.norm(rx_arr[None, :, :] - closest, axis=2)
                radius = (plen[:, None] + u) * k_capture
                for ray_i, rx_j in np.argwhere(dist <= radius):
                    s = tuple(sig[ray_i, :seg_idx])
                    if s == (GROUND_ID,):
                        continue  # analytic
                    candidates[rx_j].add(s)
            if seg_idx == config.max_depth:
                break
            alive = np.isfinite(t_hit)
            if not alive.any():
                break
            ids = hit_id[alive]
            normals = np.empty((len(ids), 3))
            gmask = ids == GROUND_ID
            normals[gmask] = (0.0, 0.0, 1.0)
            if (~gmask).any():
                normals[~gmask] = scene._normals[ids[~gmask]]
            origins = origins[alive] + t_hit[alive, None] * dirs[alive]
            d = dirs[alive]
            dirs = d - 2.0 * np.einsum("nk,nk->n", d, normals)[:, None] * normals
            plen = plen[alive] + t_hit[alive]
            sig = sig[alive]
            sig[:, seg_idx] = ids

    los_taps = _los_taps_batch(scene, tx, rx_arr, freq)
    ground_taps = _ground_taps_batch(scene, tx, rx_arr, freq)
    results = []
    for j in range(n_rx):
        taps = []
        if los_taps[j] is not None:
            taps.append(los_taps[j])
        if ground_taps[j] is not None:
            taps.append(ground_taps[j])
        by_depth = {}
        for s in sorted(candidates[j]):
            by_depth.setdefault(len(s), []).append(s)
        for _, seqs in sorted(by_depth.items()):
            taps += [t for t in solve_specular_batch(scene, tx, rx_arr[j], seqs, freq) if t]
        results.append(_sort_taps(taps))
    return results


def _los_taps_batch(scene: Scene, tx, rx_arr, freq):
    """LoS tap (or None) per receiver, occlusion-tested in one batch."""
    starts = np.tile(tx, (len(rx_arr), 1))
    clear = segments_clear_batch(scene, starts, rx_arr, shrink=_SEG_SHRINK)
    out = []
    for j in range(len(rx_arr)):
        d = float(np.linalg.norm(rx_arr[j] - tx))
        if not clear[j] or d == 0.0:
            out.append(None)
        else:
            out.append(PathTap(path_amplitude(d, (), freq), d / C_LIGHT, (), "los"))
    return out


def _ground_taps_batch(scene: Scene, tx, rx_arr, freq):
    """Single ground-bounce tap (or None) per receiver via the mirror image."""
    n = len(rx_arr)
    if not scene.has_ground:
        return [None] * n
    gz = scene.ground_z
    img = np.array([tx[0], tx[1], 2 * gz - tx[2]])
    dz = rx_arr[:, 2] - img[2]
    safe = np.where(np.abs(dz) < 1e-15, 1.0, dz)
    t = (gz - img[2]) / safe
    valid = (np.abs(dz) >= 1e-15) & (t > 1e-9) & (t < 1 - 1e-9)
    pts = img[None, :] + t[:, None] * (rx_arr - img[None, :])
    ok_in = segments_clear_batch(scene, np.tile(tx, (n, 1)), pts, shrink=_SEG_SHRINK)
    ok_out = segments_clear_batch(scene, pts, rx_arr, shrink=_SEG_SHRINK)
    valid &= ok_in & ok_out
    mat = scene.material_of(GROUND_ID)
    out = []
    for j in range(n):
        if not valid[j]:
            out.append(None)
            continue
        p = pts[j]
        d_in = p - tx
        d1 = float(np.linalg.norm(d_in))
        d2 = float(np.linalg.norm(rx_arr[j] - p))
        if d1 == 0.0 or d2 == 0.0:
            out.append(None)
            continue
        cos_i = abs(float(d_in[2])) / d1
        angle = min(float(np.arccos(np.clip(cos_i, 0.0, 1.0))), np.pi / 2 - 1e-12)
        gamma = fresnel_reflection(mat, angle, "TM", freq)
        amp = path_amplitude(d1 + d2, (gamma,), freq)
        out.append(PathTap(amp, (d1 + d2) / C_LIGHT,
                           ((GROUND_ID, tuple(map(float, p))),), "reflected"))
    return out
