"""Swarm state containers, random scenario generation, and deterministic
Lissajous trajectories with analytic velocities.

Positions are in meters, velocities in m/s, in a common Cartesian frame.
Anchors are nodes whose position is known exactly (velocity fixed to zero);
at least four non-coplanar anchors are needed to pin translation, rotation,
and reflection of the remaining nodes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SPEED_OF_LIGHT = 299792458.0  # m/s

# Anchor layout used throughout the default scenario: origin plus the three
# 1 km axis points (non-coplanar tetrahedron).
DEFAULT_ANCHOR_POSITIONS = np.array(
    [
        [0.0, 0.0, 0.0],
        [1000.0, 0.0, 0.0],
        [0.0, 1000.0, 0.0],
        [0.0, 0.0, 1000.0],
    ]
)


class ConfigurationError(ValueError):
    """Raised for invalid scenario configuration (e.g. coplanar anchors)."""


class TraceParseError(ValueError):
    """Raised when a trajectory trace file cannot be parsed."""


class GeometryError(ValueError):
    """Raised for degenerate geometry (e.g. coincident node positions)."""


@dataclass(frozen=True)
class UavState:
    """State of a single node: integer id, position (m), velocity (m/s)."""

    uav_id: int
    position: np.ndarray
    velocity: np.ndarray
    is_anchor: bool = False


@dataclass(frozen=True)
class SwarmState:
    """Positions, velocities and anchor flags for all N nodes.

    Stored as arrays: ``positions`` and ``velocities`` have shape (N, 3),
    ``anchor_mask`` has shape (N,).  Anchor entries hold the exactly known
    values used verbatim downstream.
    """

    positions: np.ndarray
    velocities: np.ndarray
    anchor_mask: np.ndarray

    def __post_init__(self):
        positions = np.asarray(self.positions, dtype=float)
        velocities = np.asarray(self.velocities, dtype=float)
        anchor_mask = np.asarray(self.anchor_mask, dtype=bool)
        if positions.shape != (len(positions), 3):
            raise ConfigurationError(f"positions must be (N, 3), got {positions.shape}")
        if velocities.shape != positions.shape:
            raise ConfigurationError("velocities must match positions shape")
        if anchor_mask.shape != (len(positions),):
            raise ConfigurationError("anchor_mask must be (N,)")
        if not (np.isfinite(positions).all() and np.isfinite(velocities).all()):
            raise ConfigurationError("positions and velocities must be finite")
        object.__setattr__(self, "positions", positions)
        object.__setattr__(self, "velocities", velocities)
        object.__setattr__(self, "anchor_mask", anchor_mask)

    @property
    def n(self) -> int:
        return len(self.positions)

    @property
    def anchor_count(self) -> int:
        return int(self.anchor_mask.sum())

    @property
    def anchor_ids(self) -> np.ndarray:
        return np.flatnonzero(self.anchor_mask)

    @property
    def non_anchor_ids(self) -> np.ndarray:
        return np.flatnonzero(~self.anchor_mask)

    def uav(self, i: int) -> UavState:
        return UavState(
            uav_id=i,
            position=self.positions[i].copy(),
            velocity=self.velocities[i].copy(),
            is_anchor=bool(self.anchor_mask[i]),
        )


@dataclass(frozen=True)
class ScenarioConfig:
    """Random-swarm scenario: anchor layout plus Gaussian priors for the
    unknown nodes (positions ~ N(pos_mean, pos_std^2) per component,
    velocities ~ N(0, vel_std^2)).

    Defaults place N=8 nodes among 4 anchors in a 1 km cube: pos_std is the
    std of a uniform distribution over the cube side.
    """

    n: int = 8
    anchor_positions: np.ndarray = field(
        default_factory=lambda: DEFAULT_ANCHOR_POSITIONS.copy()
    )
    pos_mean: float = 500.0
    pos_std: float = 1000.0 / np.sqrt(12.0)
    vel_std: float = 10.0

    @property
    def anchor_count(self) -> int:
        return len(self.anchor_positions)


def anchors_non_coplanar(positions: np.ndarray, tol: float = 1e-6) -> bool:
    """True when the anchor set spans 3D space (affine rank 3)."""
    positions = np.asarray(positions, dtype=float)
    if len(positions) < 4:
        return False
    centered = positions - positions.mean(axis=0)
    scale = max(np.abs(centered).max(), 1.0)
    return np.linalg.matrix_rank(centered / scale, tol=tol) == 3


def sample_random_swarm(
    n: int,
    a: int,
    pos_mean: float,
    pos_std: float,
    vel_std: float,
    anchor_positions: np.ndarray,
    seed,
) -> SwarmState:
    """Draw a random swarm: anchors at the given positions with zero
    velocity; the remaining n-a nodes with i.i.d. Gaussian position
    components and zero-mean Gaussian velocities.

    ``seed`` may be an int, a SeedSequence, or an existing Generator; the
    draw is deterministic given the seed.
    """
    anchor_positions = np.asarray(anchor_positions, dtype=float)
    if a != len(anchor_positions):
        raise ConfigurationError(
            f"anchor count {a} does not match {len(anchor_positions)} given positions"
        )
    if a >= 4 and not anchors_non_coplanar(anchor_positions):
        raise ConfigurationError("anchor positions are coplanar")
    if n <= a:
        raise ConfigurationError(f"need at least one non-anchor node (n={n}, a={a})")

    rng = np.random.default_rng(seed)
    n_free = n - a
    positions = np.empty((n, 3))
    velocities = np.zeros((n, 3))
    positions[:a] = anchor_positions
    positions[a:] = rng.normal(pos_mean, pos_std, size=(n_free, 3))
    velocities[a:] = rng.normal(0.0, vel_std, size=(n_free, 3))
    anchor_mask = np.zeros(n, dtype=bool)
    anchor_mask[:a] = True
    return SwarmState(positions, velocities, anchor_mask)


def sample_scenario(scenario: ScenarioConfig, seed) -> SwarmState:
    """Convenience wrapper drawing a swarm from a ScenarioConfig."""
    return sample_random_swarm(
        scenario.n,
        scenario.anchor_count,
        scenario.pos_mean,
        scenario.pos_std,
        scenario.vel_std,
        scenario.anchor_positions,
        seed,
    )


def validate_for_estimation(swarm: SwarmState) -> None:
    """Check the conditions required by the estimation pipeline: at least
    one unknown node, >= 4 non-coplanar anchors, no coincident nodes."""
    if swarm.anchor_count < 4:
        raise ConfigurationError("estimation requires at least 4 anchors")
    if swarm.n < swarm.anchor_count + 1:
        raise ConfigurationError("estimation requires at least one non-anchor node")
    if not anchors_non_coplanar(swarm.positions[swarm.anchor_mask]):
        raise ConfigurationError("anchors are coplanar")
    diff = swarm.positions[:, None, :] - swarm.positions[None, :, :]
    dist = np.linalg.norm(diff, axis=-1)
    np.fill_diagonal(dist, np.inf)
    if dist.min() < 1e-9:
        raise GeometryError("two nodes share an identical position")


# ---------------------------------------------------------------------------
# Lissajous trajectories
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LissajousParams:
    """Per-node, per-axis sinusoid parameters: position component
    s follows center + amplitude*sin(rate*t + phase), so the velocity
    component is amplitude*rate*cos(rate*t + phase).

    All arrays have shape (N, 3); amplitudes and centers in meters, rates
    in rad/s, phases in rad.  Centers default to the origin (pure sine
    law); nonzero centers keep zero-amplitude nodes at distinct points.
    """

    amplitude: np.ndarray
    rate: np.ndarray
    phase: np.ndarray
    center: np.ndarray | None = None

    def __post_init__(self):
        amp = np.asarray(self.amplitude, dtype=float)
        rate = np.asarray(self.rate, dtype=float)
        phase = np.asarray(self.phase, dtype=float)
        center = (
            np.zeros_like(amp)
            if self.center is None
            else np.asarray(self.center, dtype=float)
        )
        shapes_ok = amp.shape == rate.shape == phase.shape == center.shape
        if not shapes_ok or amp.ndim != 2 or amp.shape[1] != 3:
            raise ConfigurationError("Lissajous parameter arrays must share shape (N, 3)")
        if (amp < 0).any():
            raise ConfigurationError("Lissajous amplitudes must be >= 0")
        object.__setattr__(self, "amplitude", amp)
        object.__setattr__(self, "rate", rate)
        object.__setattr__(self, "phase", phase)
        object.__setattr__(self, "center", center)

    @property
    def n(self) -> int:
        return len(self.amplitude)


def sample_lissajous_params(
    n: int,
    rng: np.random.Generator,
    amplitude_max: float = 1000.0,
    rate_max: float = 0.2,
    center_mean: float = 0.0,
    center_std: float = 0.0,
) -> LissajousParams:
    """Draw trajectory parameters: amplitudes ~ U[0, amplitude_max] (m),
    rates ~ U[0, rate_max] (rad/s), phases ~ U[0, 2*pi), and optionally
    Gaussian per-node centers."""
    center = None
    if center_std > 0.0 or center_mean != 0.0:
        center = rng.normal(center_mean, center_std, size=(n, 3))
    return LissajousParams(
        amplitude=rng.uniform(0.0, amplitude_max, size=(n, 3)),
        rate=rng.uniform(0.0, rate_max, size=(n, 3)),
        phase=rng.uniform(0.0, 2.0 * np.pi, size=(n, 3)),
        center=center,
    )


def lissajous_state(params: LissajousParams, i: int, t: float):
    """Position and velocity of node ``i`` at time ``t`` on its curve."""
    pos, vel = lissajous_states(params, t)
    return pos[i], vel[i]


def lissajous_states(params: LissajousParams, t: float):
    """Positions and analytic velocities of all nodes at time ``t``."""
    if not np.isfinite(t):
        raise ValueError("t must be finite")
    arg = params.rate * t + params.phase
    pos = params.center + params.amplitude * np.sin(arg)
    vel = params.amplitude * params.rate * np.cos(arg)
    return pos, vel


# ---------------------------------------------------------------------------
# Trace ingestion
# ---------------------------------------------------------------------------


def _parse_trace_rows(path):
    """Yield (time, uav_id, xyz) tuples from 't,id,x,y,z' rows."""
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            parts = [p for p in stripped.replace(",", " ").split() if p]
            if len(parts) != 5:
                raise TraceParseError(
                    f"{path}:{lineno}: expected 't,id,x,y,z', got {stripped!r}"
                )
            try:
                t = float(parts[0])
                uid = int(parts[1])
                xyz = np.array([float(parts[2]), float(parts[3]), float(parts[4])])
            except ValueError as exc:
                raise TraceParseError(f"{path}:{lineno}: {exc}") from exc
            rows.append((t, uid, xyz))
    if not rows:
        raise TraceParseError(f"{path}: no data rows")
    return rows


def scale_to_cube(points: np.ndarray, cube_side: float, cube_center: np.ndarray):
    """Similarity map (single scale + translation) taking the bounding box
    of ``points`` into the cube of side ``cube_side`` centered at
    ``cube_center``.  Returns (scale, offset) with mapped = scale*p + offset.

    The scale is set by the largest-extent axis so the shape is preserved;
    a fully degenerate cloud (single point) maps to the cube center.
    """
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    cube_center = np.asarray(cube_center, dtype=float)
    lo = points.min(axis=0)
    hi = points.max(axis=0)
    extent = (hi - lo).max()
    scale = 1.0 if extent == 0.0 else cube_side / extent
    offset = cube_center - scale * (lo + hi) / 2.0
    return scale, offset


def load_trace(
    path,
    cube_side: float,
    cube_center,
    expected_count: int | None = None,
):
    """Load a position trace and rescale it into a cube.

    The file holds delimited rows ``t,id,x,y,z`` (seconds, integer id,
    meters).  All points are mapped by one global similarity transform so
    the overall bounding box fits the cube of side ``cube_side`` centered
    at ``cube_center``.  Returns a list of SwarmState snapshots in time
    order (no anchors; velocities from finite differences of the scaled
    positions over the file timestamps).
    """
    rows = _parse_trace_rows(path)
    times = sorted({t for t, _, _ in rows})
    ids = sorted({uid for _, uid, _ in rows})
    if expected_count is not None and len(ids) < expected_count:
        raise ConfigurationError(
            f"trace has {len(ids)} distinct ids, expected at least {expected_count}"
        )
    id_index = {uid: idx for idx, uid in enumerate(ids)}
    time_index = {t: idx for idx, t in enumerate(times)}

    positions = np.full((len(times), len(ids), 3), np.nan)
    for t, uid, xyz in rows:
        positions[time_index[t], id_index[uid]] = xyz
    if np.isnan(positions).any():
        missing = np.argwhere(np.isnan(positions[:, :, 0]))
        t_idx, u_idx = missing[0]
        raise ConfigurationError(
            f"trace is missing id {ids[u_idx]} at time {times[t_idx]}"
        )

    scale, offset = scale_to_cube(positions, cube_side, cube_center)
    positions = scale * positions + offset

    velocities = np.zeros_like(positions)
    t_arr = np.asarray(times)
    if len(times) > 1:
        velocities = np.gradient(positions, t_arr, axis=0)

    mask = np.zeros(len(ids), dtype=bool)
    return [
        SwarmState(positions[k], velocities[k], mask) for k in range(len(times))
    ]
