"""Turbo iterative positioning: alternate gradient-descent position
refinement with re-estimation of the assignment maps.

Cold start obtains initial maps from belief propagation and a random
starting point; each turbo iteration then recomputes the maps implied by
the current position estimate (sort the predicted echo excess distances),
reorders the observation lists, and re-runs gradient descent warm-started
at the current estimate.  Velocities come from the least-squares solver at
every iteration; the last one is reported.

A restart controller wraps the whole loop: if the final residual exceeds
beta * E_b (the quantization noise floor), the loop is rerun from a fresh
random start, keeping the same initial maps.

Tracking mode replaces belief propagation with maps computed from the
forecast position prior; genie-aided mode uses the ground-truth maps and
no turbo iterations, serving as a lower bound.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .assignment_bp import BpConfig, compute_marginals, estimate_maps
from .geometry import SwarmState
from .measurement import (
    AssignmentMaps,
    ChannelLists,
    MeasurementSet,
    red_distance_tensor,
)
from .positioning import GdConfig, NumericalError, gd_minimize, noise_floor
from .velocity import build_design, estimate_velocities, velocity_triples


@dataclass(frozen=True)
class AnchorInfo:
    """Known anchor states: boolean mask over node ids plus the exact
    positions/velocities of the anchor nodes (in mask order)."""

    mask: np.ndarray
    positions: np.ndarray
    velocities: np.ndarray

    @classmethod
    def from_swarm(cls, swarm: SwarmState) -> "AnchorInfo":
        ids = swarm.anchor_ids
        return cls(
            swarm.anchor_mask.copy(),
            swarm.positions[ids].copy(),
            swarm.velocities[ids].copy(),
        )

    @property
    def n(self) -> int:
        return len(self.mask)

    def full_velocities(self) -> np.ndarray:
        out = np.zeros((self.n, 3))
        out[self.mask] = self.velocities
        return out


@dataclass(frozen=True)
class TipConfig:
    """Turbo loop controls: ``turbo_iterations`` map-refinement rounds after
    the initial solve (so L=0 is a single map application plus gradient
    descent), plus the solver configurations and restart/tracking knobs."""

    turbo_iterations: int = 2
    bp: BpConfig = field(default_factory=BpConfig)
    gd: GdConfig = field(default_factory=GdConfig)
    prior_mean: float = 500.0
    prior_std: float = 1000.0 / np.sqrt(12.0)
    dt: float = 1.0
    tracking_restart_std: float = 10.0

    def __post_init__(self):
        if self.turbo_iterations < 0:
            raise ValueError("turbo_iterations must be >= 0")
        if self.dt < 0:
            raise ValueError("dt must be >= 0")


@dataclass
class TurboDiagnostics:
    iteration: int
    residual: float
    gd_iterations: int
    map_changes: int


@dataclass
class EstimationResult:
    """Output of one positioning run.  Anchor rows of ``positions`` and
    ``velocities`` hold the exact known values."""

    positions: np.ndarray
    velocities: np.ndarray
    residual: float
    maps: AssignmentMaps
    success: bool
    attempts: int
    threshold: float
    diagnostics: list
    velocity_degenerate: bool = False
    gd_history: list | None = None


# ---------------------------------------------------------------------------
# Map plumbing
# ---------------------------------------------------------------------------


def apply_maps(lists: ChannelLists, maps: AssignmentMaps):
    """Reorder the sorted lists by reflector identity.

    Returns (delta, omega): (N, N, N) tensors with entry [i, j, k] holding
    the list values at index maps[i, j, k]; invalid entries are NaN.
    Raises ValueError when any per-link map is not a bijection.
    """
    if not maps.is_bijective():
        raise ValueError("assignment maps must be bijective per link")
    n = lists.n
    delta = np.full((n, n, n), np.nan)
    omega = np.full((n, n, n), np.nan)
    i_arr, j_arr, k_arr = np.nonzero(maps.index_of >= 0)
    m_arr = maps.index_of[i_arr, j_arr, k_arr]
    delta[i_arr, j_arr, k_arr] = lists.distances[i_arr, j_arr, m_arr]
    omega[i_arr, j_arr, k_arr] = lists.velocities[i_arr, j_arr, m_arr]
    return delta, omega


def ordered_velocity_vector(omega: np.ndarray) -> np.ndarray:
    """Flatten the ordered velocity tensor into the canonical row order of
    the velocity design matrix."""
    n = len(omega)
    t = velocity_triples(n)
    return omega[t[:, 0], t[:, 1], t[:, 2]]


def compute_maps(positions: np.ndarray) -> AssignmentMaps:
    """Maps implied by a position estimate: per link, sort the predicted
    echo excess distances ascending (ties broken by reflector id) and
    record each reflector's rank."""
    positions = np.asarray(positions, dtype=float).reshape(-1, 3)
    n = len(positions)
    delta = red_distance_tensor(positions)
    index_of = np.full((n, n, n), -1, dtype=int)
    reflectors = np.arange(n)
    for i in range(n):
        ks = reflectors[reflectors != i]
        for j in range(n):
            if i == j:
                continue
            order = np.lexsort((ks, delta[i, j, ks]))
            index_of[i, j, ks[order]] = np.arange(n - 1)
    return AssignmentMaps(index_of)


# ---------------------------------------------------------------------------
# Turbo loop
# ---------------------------------------------------------------------------


def _turbo_loop(
    meas: MeasurementSet,
    initial_maps: AssignmentMaps,
    p_init: np.ndarray,
    anchors: AnchorInfo,
    cfg: TipConfig,
    record_history: bool = False,
):
    """One full TIP pass: L+1 gradient-descent solves with map refreshes in
    between.  Returns (positions, velocity estimate, maps, diagnostics,
    final residual, history of the final solve)."""
    maps = initial_maps
    p = np.asarray(p_init, dtype=float).reshape(-1, 3).copy()
    p[anchors.mask] = anchors.positions
    diagnostics = []
    vel = None
    history = None
    anchor_velocities = anchors.full_velocities()

    for ell in range(cfg.turbo_iterations + 1):
        if ell > 0:
            new_maps = compute_maps(p)
            map_changes = new_maps.differences(maps)
            maps = new_maps
        else:
            map_changes = 0
        delta, omega = apply_maps(meas.lists, maps)
        last = ell == cfg.turbo_iterations
        gd_res = gd_minimize(
            delta,
            p,
            anchors.mask,
            anchors.positions,
            cfg.gd,
            record_history=record_history and last,
        )
        p = gd_res.positions
        design = build_design(p, anchors.mask, anchor_velocities)
        vel = estimate_velocities(design, ordered_velocity_vector(omega))
        diagnostics.append(
            TurboDiagnostics(ell, gd_res.error, gd_res.iterations, map_changes)
        )
        if last:
            history = gd_res.history

    return p, vel, maps, diagnostics, diagnostics[-1].residual, history


def _assemble_result(
    p, vel, maps, diagnostics, residual, anchors, success, attempts, threshold, history
) -> EstimationResult:
    velocities = anchors.full_velocities()
    velocities[vel.free_ids] = vel.velocities
    return EstimationResult(
        positions=p,
        velocities=velocities,
        residual=residual,
        maps=maps,
        success=success,
        attempts=attempts,
        threshold=threshold,
        diagnostics=diagnostics,
        velocity_degenerate=vel.degenerate,
        gd_history=history,
    )


def _run_with_restarts(
    meas: MeasurementSet,
    initial_maps: AssignmentMaps,
    anchors: AnchorInfo,
    cfg: TipConfig,
    rng: np.random.Generator,
    draw_init,
    first_init: np.ndarray | None = None,
    record_history: bool = False,
) -> EstimationResult:
    threshold = cfg.gd.beta * noise_floor(anchors.n, meas.grid)
    best = None
    attempts = 0
    for attempt in range(cfg.gd.max_restarts + 1):
        if attempt == 0 and first_init is not None:
            p0 = first_init
        else:
            p0 = draw_init(rng)
        attempts += 1
        try:
            out = _turbo_loop(meas, initial_maps, p0, anchors, cfg, record_history)
        except NumericalError:
            continue
        p, vel, maps, diagnostics, residual, history = out
        if best is None or residual < best[4]:
            best = out
        if residual <= threshold:
            return _assemble_result(
                p, vel, maps, diagnostics, residual, anchors,
                True, attempts, threshold, history,
            )
    if best is None:
        raise NumericalError("all restart attempts diverged")
    p, vel, maps, diagnostics, residual, history = best
    return _assemble_result(
        p, vel, maps, diagnostics, residual, anchors,
        False, attempts, threshold, history,
    )


# ---------------------------------------------------------------------------
# Operating modes
# ---------------------------------------------------------------------------


def run_cold_start(
    meas: MeasurementSet,
    anchors: AnchorInfo,
    cfg: TipConfig,
    rng: np.random.Generator,
    record_history: bool = False,
    initial_maps: AssignmentMaps | None = None,
) -> EstimationResult:
    """Full pipeline with no prior: belief propagation for the initial
    maps, random Gaussian starting point, then the turbo loop with
    restarts.

    ``initial_maps`` can supply precomputed BP maps (e.g. to share one BP
    solve across several turbo-depth settings on the same measurements).
    """
    if initial_maps is None:
        marginals = compute_marginals(meas.lists, meas.grid, cfg.bp)
        maps0 = estimate_maps(marginals)
    else:
        maps0 = initial_maps
    n = anchors.n

    def draw(r):
        return r.normal(cfg.prior_mean, cfg.prior_std, size=(n, 3))

    return _run_with_restarts(
        meas, maps0, anchors, cfg, rng, draw, record_history=record_history
    )


def run_genie_aided(
    meas: MeasurementSet,
    anchors: AnchorInfo,
    cfg: TipConfig,
    rng: np.random.Generator,
    record_history: bool = False,
) -> EstimationResult:
    """Benchmark mode with perfect maps: a single application of the
    ground-truth maps followed by gradient descent with restarts (no turbo
    iterations)."""
    ga_cfg = TipConfig(
        turbo_iterations=0,
        bp=cfg.bp,
        gd=cfg.gd,
        prior_mean=cfg.prior_mean,
        prior_std=cfg.prior_std,
        dt=cfg.dt,
        tracking_restart_std=cfg.tracking_restart_std,
    )
    n = anchors.n

    def draw(r):
        return r.normal(cfg.prior_mean, cfg.prior_std, size=(n, 3))

    return _run_with_restarts(
        meas, meas.truth_maps, anchors, ga_cfg, rng, draw,
        record_history=record_history,
    )


@dataclass
class TrackingStep:
    result: EstimationResult
    forecast: np.ndarray  # predicted positions for the next epoch


def run_tracking_step(
    meas: MeasurementSet,
    p_init: np.ndarray,
    anchors: AnchorInfo,
    cfg: TipConfig,
    rng: np.random.Generator,
) -> TrackingStep:
    """One tracking epoch: maps from the forecast prior (no belief
    propagation), turbo loop warm-started at the prior, and a linear
    forecast p + dt*v for the next epoch."""
    p_init = np.asarray(p_init, dtype=float).reshape(-1, 3).copy()
    p_init[anchors.mask] = anchors.positions
    maps0 = compute_maps(p_init)

    def draw(r):
        return p_init + r.normal(0.0, cfg.tracking_restart_std, size=p_init.shape)

    result = _run_with_restarts(
        meas, maps0, anchors, cfg, rng, draw, first_init=p_init
    )
    forecast = result.positions + cfg.dt * result.velocities
    return TrackingStep(result, forecast)
