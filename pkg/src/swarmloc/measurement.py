"""Synthesis of quantized delay-Doppler channel profiles.

For every ordered link (i, j) the channel carries the line-of-sight path
plus one single-reflection path per other node k.  Each reflected path is
summarized by two scalars:

* the echo excess distance  delta_ijk = |p_j-p_k| + |p_k-p_i| - |p_i-p_j|,
  i.e. the extra path length of the two-leg route via k (0 for the LoS);
* the radial velocity  omega_ijk = (v_j-v_k)^T u_jk + (v_k-v_i)^T u_ki,
  the time derivative of the two-leg path length (u_ab is the versor from
  b to a).

A receiver only observes both quantities quantized to the delay-Doppler
grid and sorted by distance, without knowing which reflector produced
which entry.  ``build_measurements`` produces those sorted lists together
with the ground-truth assignment maps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import SPEED_OF_LIGHT, GeometryError, SwarmState

NOISE_MODES = ("quantized", "gaussian", "none")


@dataclass(frozen=True)
class OtfsGridConfig:
    """Delay-Doppler grid resolution.

    bandwidth B and frame duration T_f set the measurement steps:
    distance_step = c/B (m) and velocity_step = c/(f_c*T_f) (m/s).
    """

    bandwidth: float
    frame_duration: float = 20e-3
    carrier: float = 5e9
    c: float = SPEED_OF_LIGHT

    def __post_init__(self):
        if self.bandwidth <= 0 or self.frame_duration <= 0 or self.carrier <= 0:
            raise ValueError("bandwidth, frame_duration and carrier must be > 0")

    @property
    def distance_step(self) -> float:
        return self.c / self.bandwidth

    @property
    def velocity_step(self) -> float:
        return self.c / (self.carrier * self.frame_duration)


@dataclass(frozen=True)
class ChannelLists:
    """Sorted per-link profiles.

    ``distances[i, j]`` holds the N-1 path distances of link (i, j) in
    nondecreasing order and ``velocities[i, j]`` the co-ordered radial
    velocities.  Rows with i == j are NaN.
    """

    distances: np.ndarray
    velocities: np.ndarray

    @property
    def n(self) -> int:
        return len(self.distances)


@dataclass(frozen=True)
class AssignmentMaps:
    """Per-link bijections from reflector identity to list index.

    ``index_of[i, j, k] = m`` states that the path reflected by node k
    (k == j meaning the LoS path) sits at position m of the sorted lists
    of link (i, j).  Entries with i == j or k == i are -1.
    """

    index_of: np.ndarray

    @property
    def n(self) -> int:
        return len(self.index_of)

    def is_bijective(self) -> bool:
        n = self.n
        for i in range(n):
            for j in range(n):
                if i == j:
                    continue
                idx = np.delete(self.index_of[i, j], i)
                if sorted(idx) != list(range(n - 1)):
                    return False
        return True

    def differences(self, other: "AssignmentMaps") -> int:
        """Number of (i, j, k) entries on which the two map sets differ."""
        a, b = self.index_of, other.index_of
        valid = a >= 0
        return int((a[valid] != b[valid]).sum())


@dataclass(frozen=True)
class MeasurementSet:
    """Channel lists plus ground-truth maps and the grid they were taken on."""

    lists: ChannelLists
    truth_maps: AssignmentMaps
    grid: OtfsGridConfig
    noise: str = "quantized"

    @property
    def n(self) -> int:
        return self.lists.n


# ---------------------------------------------------------------------------
# Scalar observables
# ---------------------------------------------------------------------------


def red_distance(p_i, p_j, p_k) -> float:
    """Echo excess distance of the path i <- k <- j relative to the LoS.

    Nonnegative by the triangle inequality; symmetric in (i, j) by channel
    reciprocity.  Raises GeometryError for coincident points.
    """
    p_i, p_j, p_k = (np.asarray(p, dtype=float) for p in (p_i, p_j, p_k))
    d_jk = np.linalg.norm(p_j - p_k)
    d_ki = np.linalg.norm(p_k - p_i)
    d_ij = np.linalg.norm(p_i - p_j)
    if min(d_jk, d_ki, d_ij) < 1e-12:
        raise GeometryError("red_distance needs pairwise distinct points")
    return float(d_jk + d_ki - d_ij)


def radial_velocity(swarm: SwarmState, i: int, j: int, k: int) -> float:
    """Rate of change of the two-leg path length j -> k -> i at t=0.

    For k == j this degenerates to the direct-path radial velocity
    (v_j - v_i)^T u_ji.
    """
    p, v = swarm.positions, swarm.velocities
    if k == j:
        d = np.linalg.norm(p[j] - p[i])
        if d < 1e-12:
            raise GeometryError("radial_velocity needs distinct positions")
        u_ji = (p[j] - p[i]) / d
        return float((v[j] - v[i]) @ u_ji)
    d_jk = np.linalg.norm(p[j] - p[k])
    d_ki = np.linalg.norm(p[k] - p[i])
    if min(d_jk, d_ki) < 1e-12:
        raise GeometryError("radial_velocity needs distinct positions")
    u_jk = (p[j] - p[k]) / d_jk
    u_ki = (p[k] - p[i]) / d_ki
    return float((v[j] - v[k]) @ u_jk + (v[k] - v[i]) @ u_ki)


def quantize(value, step: float):
    """Round to the nearest integer multiple of ``step``; exact halves round
    away from zero, so the error is always within step/2 in magnitude."""
    if step <= 0:
        raise ValueError("quantization step must be > 0")
    value = np.asarray(value, dtype=float)
    out = np.sign(value) * np.floor(np.abs(value) / step + 0.5) * step
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# Vectorized observable tensors
# ---------------------------------------------------------------------------


def pairwise_distances(positions: np.ndarray) -> np.ndarray:
    diff = positions[:, None, :] - positions[None, :, :]
    return np.linalg.norm(diff, axis=-1)


def versors(positions: np.ndarray, guard: float = 1e-9) -> np.ndarray:
    """u[a, b] = (p_a - p_b)/|p_a - p_b|; zero for coincident pairs."""
    diff = positions[:, None, :] - positions[None, :, :]
    dist = np.linalg.norm(diff, axis=-1)
    safe = np.where(dist > guard, dist, 1.0)
    u = diff / safe[:, :, None]
    u[dist <= guard] = 0.0
    return u


def red_distance_tensor(positions: np.ndarray) -> np.ndarray:
    """delta[i, j, k] for all i != j, k != i (k == j rows are exactly 0);
    invalid combinations are NaN."""
    n = len(positions)
    dm = pairwise_distances(positions)
    off = ~np.eye(n, dtype=bool)
    if dm[off].min() < 1e-12:
        raise GeometryError("coincident positions in red_distance_tensor")
    i_idx, j_idx, k_idx = np.ogrid[:n, :n, :n]
    delta = dm[j_idx, k_idx] + dm[k_idx, i_idx] - dm[i_idx, j_idx]
    invalid = (i_idx == j_idx) | (k_idx == i_idx)
    return np.where(invalid, np.nan, delta)


def radial_velocity_tensor(positions: np.ndarray, velocities: np.ndarray) -> np.ndarray:
    """omega[i, j, k] for all i != j, k != i, with the k == j rows holding
    the direct-path radial velocity; invalid combinations are NaN."""
    n = len(positions)
    u = versors(positions)
    # r[a, b] = (v_a - v_b)^T u_ab, symmetric under swapping a and b
    dv = velocities[:, None, :] - velocities[None, :, :]
    r = np.einsum("abx,abx->ab", dv, u)
    i_idx, j_idx, k_idx = np.ogrid[:n, :n, :n]
    omega = r[j_idx, k_idx] + r[k_idx, i_idx]
    omega = np.where(k_idx == j_idx, r[j_idx, i_idx], omega)
    invalid = (i_idx == j_idx) | (k_idx == i_idx)
    return np.where(invalid, np.nan, omega)


# ---------------------------------------------------------------------------
# Measurement construction
# ---------------------------------------------------------------------------


def build_measurements(
    swarm: SwarmState,
    grid: OtfsGridConfig,
    noise: str = "quantized",
    rng: np.random.Generator | None = None,
) -> MeasurementSet:
    """Build the sorted channel lists and ground-truth maps for a swarm.

    ``noise`` selects the measurement error model:

    * ``"quantized"``  - round to the grid steps (the physical model);
    * ``"gaussian"``   - additive N(0, step^2/12) errors, matched in
      variance to quantization, independent per ordered observation
      (requires ``rng``);
    * ``"none"``       - exact values (oracle tests only).

    Per link the lists are sorted by (distance, velocity, reflector id),
    which is a total order, so ties are resolved deterministically; under
    exact ties at zero distance the lowest-id candidate takes index 0.
    """
    if noise not in NOISE_MODES:
        raise ValueError(f"noise must be one of {NOISE_MODES}")
    if noise == "gaussian" and rng is None:
        raise ValueError("gaussian noise requires an rng")

    n = swarm.n
    if n < 3:
        raise ValueError("need at least 3 nodes for a multipath profile")
    delta = red_distance_tensor(swarm.positions)
    omega = radial_velocity_tensor(swarm.positions, swarm.velocities)

    if noise == "quantized":
        obs_d = quantize(np.nan_to_num(delta), grid.distance_step)
        obs_v = quantize(np.nan_to_num(omega), grid.velocity_step)
    elif noise == "gaussian":
        sd = grid.distance_step / np.sqrt(12.0)
        sv = grid.velocity_step / np.sqrt(12.0)
        obs_d = np.nan_to_num(delta) + rng.normal(0.0, sd, size=delta.shape)
        obs_v = np.nan_to_num(omega) + rng.normal(0.0, sv, size=omega.shape)
    else:
        obs_d = np.nan_to_num(delta)
        obs_v = np.nan_to_num(omega)

    distances = np.full((n, n, n - 1), np.nan)
    velocities = np.full((n, n, n - 1), np.nan)
    index_of = np.full((n, n, n), -1, dtype=int)

    reflectors = np.arange(n)
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            ks = reflectors[reflectors != i]
            d_row = obs_d[i, j, ks]
            v_row = obs_v[i, j, ks]
            order = np.lexsort((ks, v_row, d_row))
            distances[i, j] = d_row[order]
            velocities[i, j] = v_row[order]
            index_of[i, j, ks[order]] = np.arange(n - 1)

    lists = ChannelLists(distances, velocities)
    maps = AssignmentMaps(index_of)
    return MeasurementSet(lists, maps, grid, noise)


# ---------------------------------------------------------------------------
# Plain-text serialization (per-link blocks)
# ---------------------------------------------------------------------------


def save_measurements(meas: MeasurementSet, path) -> None:
    """Write a MeasurementSet to a plain-text file.

    Format: header lines ``n``, ``grid`` (c, B, T_f, f_c), ``noise``; then
    one block per ordered link with lines ``pair i j``, ``dist ...``,
    ``vel ...`` and ``map k:m ...`` (0-based ids and list indices).
    """
    n = meas.n
    g = meas.grid
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# delay-Doppler measurement set\n")
        fh.write(f"n {n}\n")
        fh.write(
            f"grid {float(g.c)!r} {float(g.bandwidth)!r} "
            f"{float(g.frame_duration)!r} {float(g.carrier)!r}\n"
        )
        fh.write(f"noise {meas.noise}\n")
        for i in range(n):
            for j in range(n):
                if i == j:
                    continue
                fh.write(f"pair {i} {j}\n")
                fh.write("dist " + " ".join(repr(float(x)) for x in meas.lists.distances[i, j]) + "\n")
                fh.write("vel " + " ".join(repr(float(x)) for x in meas.lists.velocities[i, j]) + "\n")
                pairs = [
                    f"{k}:{meas.truth_maps.index_of[i, j, k]}"
                    for k in range(n)
                    if k != i
                ]
                fh.write("map " + " ".join(pairs) + "\n")


def load_measurements(path) -> MeasurementSet:
    """Read a MeasurementSet written by :func:`save_measurements`."""
    n = None
    grid = None
    noise = "quantized"
    distances = velocities = index_of = None
    cur = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            tag, _, rest = line.partition(" ")
            fields = rest.split()
            if tag == "n":
                n = int(fields[0])
                distances = np.full((n, n, n - 1), np.nan)
                velocities = np.full((n, n, n - 1), np.nan)
                index_of = np.full((n, n, n), -1, dtype=int)
            elif tag == "grid":
                c, bw, tf, fc = (float(x) for x in fields)
                grid = OtfsGridConfig(bandwidth=bw, frame_duration=tf, carrier=fc, c=c)
            elif tag == "noise":
                noise = fields[0]
            elif tag == "pair":
                cur = (int(fields[0]), int(fields[1]))
            elif tag == "dist":
                distances[cur] = [float(x) for x in fields]
            elif tag == "vel":
                velocities[cur] = [float(x) for x in fields]
            elif tag == "map":
                for item in fields:
                    k, _, m = item.partition(":")
                    index_of[cur[0], cur[1], int(k)] = int(m)
            else:
                raise ValueError(f"{path}:{lineno}: unknown line tag {tag!r}")
    if n is None or grid is None:
        raise ValueError(f"{path}: missing header")
    return MeasurementSet(
        ChannelLists(distances, velocities), AssignmentMaps(index_of), grid, noise
    )
