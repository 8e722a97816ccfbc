"""Monte-Carlo experiment harness: RMSE metrics, bandwidth/frame sweeps,
gradient-iteration profiles, tracking demos, and CSV emission.

Aggregation conventions: every run that returns an estimate enters the
RMSE, including runs whose restart budget was exhausted (their best-found
iterate is the estimate; they are counted separately as rejections).  Runs
that raise are excluded and counted as failures, so
``runs == runs_used + failures`` always holds.
"""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .assignment_bp import BpConfig, compute_marginals, estimate_maps
from .crlb import CrlbConfig, fisher_matrix, joint_crlb
from .geometry import (
    ScenarioConfig,
    SwarmState,
    lissajous_states,
    load_trace,
    sample_lissajous_params,
    sample_scenario,
)
from .measurement import OtfsGridConfig, build_measurements
from .positioning import GdConfig, NumericalError
from .tip import (
    AnchorInfo,
    TipConfig,
    run_cold_start,
    run_genie_aided,
    run_tracking_step,
)

logger = logging.getLogger(__name__)

ESTIMATORS = ("tip", "ga", "ga_gaussian")


@dataclass(frozen=True)
class ExperimentConfig:
    """Sweep definition: scenario, measurement grid points, solver settings
    and the run budget.  ``estimators`` selects which pipelines run at each
    grid point; ``turbo_iterations`` applies to the "tip" estimator (one
    record per value)."""

    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    bandwidths: tuple = (3e6, 10e6, 30e6, 100e6, 300e6)
    frame_durations: tuple = (20e-3,)
    carrier: float = 5e9
    c: float = 299792458.0
    turbo_iterations: tuple = (0, 1, 2)
    bp: BpConfig = field(default_factory=lambda: BpConfig(
        iterations=2, use_doppler_checks=True, damping=0.3))
    gd: GdConfig = field(default_factory=GdConfig)
    estimators: tuple = ("tip", "ga")
    runs: int = 100
    seed: int = 0
    include_crlb: bool = True
    crlb_samples: int = 200
    trace_path: str | None = None
    cube_side: float = 1000.0
    cube_center: tuple = (500.0, 500.0, 500.0)

    def __post_init__(self):
        if self.runs < 1:
            raise ValueError("runs must be >= 1")
        if not self.bandwidths or not self.frame_durations:
            raise ValueError("sweep lists must be non-empty")
        for est in self.estimators:
            if est not in ESTIMATORS:
                raise ValueError(f"unknown estimator {est!r}")


@dataclass
class RunRecord:
    """One aggregated row of a sweep (also used for the CRLB rows, where
    the rmse columns hold the root bounds)."""

    kind: str
    bandwidth: float
    frame_duration: float
    turbo_iterations: int
    bp_iterations: int
    runs: int
    runs_used: int
    failures: int
    restart_rejections: int
    rmse_p: float
    rmse_v: float
    mean_gd_iterations: float
    mean_attempts: float
    wall_time: float
    seed: int

    CSV_FIELDS = (
        "kind", "bandwidth", "frame_duration", "turbo_iterations",
        "bp_iterations", "runs", "runs_used", "failures",
        "restart_rejections", "rmse_p", "rmse_v", "mean_gd_iterations",
        "mean_attempts", "wall_time", "seed",
    )


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


def rmse_position(estimates, truths, anchor_mask) -> float:
    """Root mean square position error per non-anchor node and dimension:
    sqrt(sum_{i, r} |p_hat - p|^2 / (3 * N_free * R))."""
    estimates = np.asarray(estimates, dtype=float)
    truths = np.asarray(truths, dtype=float)
    anchor_mask = np.asarray(anchor_mask, dtype=bool)
    if estimates.ndim == 2:
        estimates = estimates[None]
        truths = truths[None]
    if len(estimates) == 0:
        raise ValueError("need at least one run")
    free = ~anchor_mask
    err = estimates[:, free, :] - truths[:, free, :]
    return float(np.sqrt(np.sum(err**2) / (3 * free.sum() * len(estimates))))


def rmse_velocity(estimates, truths, anchor_mask) -> float:
    """Same normalization as :func:`rmse_position`, for velocities."""
    return rmse_position(estimates, truths, anchor_mask)


# ---------------------------------------------------------------------------
# Seed derivation
# ---------------------------------------------------------------------------

_STREAM_SCENARIO = 0
_STREAM_NOISE = 1
_STREAM_TIP = 2
_STREAM_GA = 3
_STREAM_GA_GAUSSIAN = 4


def _rng(seed: int, *key) -> np.random.Generator:
    """Deterministic child generator for a (point, run, stream) key."""
    return np.random.default_rng(np.random.SeedSequence((seed, *key)))


# ---------------------------------------------------------------------------
# Sweep
# ---------------------------------------------------------------------------


def _swarm_for_run(cfg: ExperimentConfig, trace, run_idx: int, rng) -> SwarmState:
    if trace is None:
        return sample_scenario(cfg.scenario, rng)
    snap = trace[run_idx % len(trace)]
    anchors = cfg.scenario.anchor_positions
    a = len(anchors)
    positions = np.vstack([anchors, snap.positions])
    velocities = np.vstack([np.zeros((a, 3)), snap.velocities])
    mask = np.zeros(len(positions), dtype=bool)
    mask[:a] = True
    return SwarmState(positions, velocities, mask)


class _Accumulator:
    """Collects per-run outcomes for one record."""

    def __init__(self):
        self.p_est, self.p_true = [], []
        self.v_est, self.v_true = [], []
        self.failures = 0
        self.rejections = 0
        self.gd_iterations = []
        self.attempts = []

    def add(self, result, swarm):
        self.add_raw(
            result.positions,
            result.velocities,
            result.success,
            float(np.mean([d.gd_iterations for d in result.diagnostics])),
            result.attempts,
            swarm=swarm,
        )

    def add_raw(self, positions, velocities, success, gd_iterations, attempts, swarm):
        self.p_est.append(positions)
        self.p_true.append(swarm.positions)
        self.v_est.append(velocities)
        self.v_true.append(swarm.velocities)
        self.rejections += 0 if success else 1
        self.gd_iterations.append(gd_iterations)
        self.attempts.append(attempts)

    def record(self, kind, grid, L, cfg, elapsed, anchor_mask) -> RunRecord:
        used = len(self.p_est)
        rmse_p = rmse_v = float("nan")
        if used:
            rmse_p = rmse_position(self.p_est, self.p_true, anchor_mask)
            rmse_v = rmse_velocity(self.v_est, self.v_true, anchor_mask)
        return RunRecord(
            kind=kind,
            bandwidth=grid.bandwidth,
            frame_duration=grid.frame_duration,
            turbo_iterations=L,
            bp_iterations=cfg.bp.iterations,
            runs=cfg.runs,
            runs_used=used,
            failures=cfg.runs - used,
            restart_rejections=self.rejections,
            rmse_p=rmse_p,
            rmse_v=rmse_v,
            mean_gd_iterations=float(np.mean(self.gd_iterations)) if used else float("nan"),
            mean_attempts=float(np.mean(self.attempts)) if used else float("nan"),
            wall_time=elapsed,
            seed=cfg.seed,
        )


def _execute_point_run(cfg: ExperimentConfig, grid: OtfsGridConfig, swarm, point: int, r: int):
    """All estimator pipelines for one run; returns picklable outcomes
    keyed by (kind, L) so runs can execute in a worker pool."""
    anchors = AnchorInfo.from_swarm(swarm)
    meas = build_measurements(swarm, grid)
    outcomes = {}

    def store(key, result):
        outcomes[key] = (
            result.positions,
            result.velocities,
            bool(result.success),
            float(np.mean([d.gd_iterations for d in result.diagnostics])),
            int(result.attempts),
        )

    if "tip" in cfg.estimators:
        marginals = compute_marginals(meas.lists, grid, cfg.bp)
        maps0 = estimate_maps(marginals)
        for L in cfg.turbo_iterations:
            tip_cfg = TipConfig(
                turbo_iterations=L, bp=cfg.bp, gd=cfg.gd,
                prior_mean=cfg.scenario.pos_mean,
                prior_std=cfg.scenario.pos_std,
            )
            try:
                store(("tip", L), run_cold_start(
                    meas, anchors, tip_cfg,
                    _rng(cfg.seed, point, r, _STREAM_TIP, L),
                    initial_maps=maps0,
                ))
            except NumericalError:
                outcomes[("tip", L)] = None

    ga_cfg = TipConfig(
        bp=cfg.bp, gd=cfg.gd,
        prior_mean=cfg.scenario.pos_mean, prior_std=cfg.scenario.pos_std,
    )
    if "ga" in cfg.estimators:
        try:
            store(("ga", 0), run_genie_aided(
                meas, anchors, ga_cfg, _rng(cfg.seed, point, r, _STREAM_GA)
            ))
        except NumericalError:
            outcomes[("ga", 0)] = None

    if "ga_gaussian" in cfg.estimators:
        meas_g = build_measurements(
            swarm, grid, noise="gaussian",
            rng=_rng(cfg.seed, point, r, _STREAM_NOISE),
        )
        try:
            store(("ga_gaussian", 0), run_genie_aided(
                meas_g, anchors, ga_cfg,
                _rng(cfg.seed, point, r, _STREAM_GA_GAUSSIAN),
            ))
        except NumericalError:
            outcomes[("ga_gaussian", 0)] = None
    return outcomes


def _point_worker(args):
    return _execute_point_run(*args)


def run_sweep(cfg: ExperimentConfig, workers: int = 1) -> list[RunRecord]:
    """Run the full grid: for every (bandwidth, frame duration) point, R
    seeded runs of each requested estimator (sharing the swarm and the
    measurements within a run), plus one CRLB row per point.

    ``workers > 1`` distributes runs over a process pool; results are
    aggregated in run order, so the output is identical to a serial run.
    """
    trace = None
    if cfg.trace_path is not None:
        trace = load_trace(cfg.trace_path, cfg.cube_side, np.asarray(cfg.cube_center))

    records = []
    point_idx = 0
    for bandwidth in cfg.bandwidths:
        for frame_duration in cfg.frame_durations:
            grid = OtfsGridConfig(
                bandwidth=bandwidth,
                frame_duration=frame_duration,
                carrier=cfg.carrier,
                c=cfg.c,
            )
            records.extend(_run_point(cfg, grid, trace, point_idx, workers))
            point_idx += 1
    return records


def _run_point(cfg: ExperimentConfig, grid: OtfsGridConfig, trace, point: int,
               workers: int = 1):
    t0 = time.time()
    swarms = [
        _swarm_for_run(cfg, trace, r, _rng(cfg.seed, point, r, _STREAM_SCENARIO))
        for r in range(cfg.runs)
    ]
    anchor_mask = swarms[0].anchor_mask

    tasks = [(cfg, grid, swarms[r], point, r) for r in range(cfg.runs)]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool:
            all_outcomes = list(pool.map(_point_worker, tasks, chunksize=1))
    else:
        all_outcomes = [_point_worker(task) for task in tasks]

    keys = []
    if "tip" in cfg.estimators:
        keys.extend(("tip", L) for L in cfg.turbo_iterations)
    if "ga" in cfg.estimators:
        keys.append(("ga", 0))
    if "ga_gaussian" in cfg.estimators:
        keys.append(("ga_gaussian", 0))

    accs = {key: _Accumulator() for key in keys}
    for r, outcomes in enumerate(all_outcomes):
        for key in keys:
            out = outcomes.get(key)
            if out is None:
                logger.warning("%s run failed (point %d run %d)", key, point, r)
                continue
            accs[key].add_raw(*out, swarm=swarms[r])
            logger.info(
                "point=%d run=%d kind=%s L=%d accepted=%s gd_iters=%.1f attempts=%d",
                point, r, key[0], key[1], out[2], out[3], out[4],
            )

    elapsed = time.time() - t0
    records = [
        accs[key].record(key[0], grid, key[1], cfg, elapsed, anchor_mask)
        for key in keys
    ]

    if cfg.include_crlb:
        t1 = time.time()
        crlb_cfg = CrlbConfig.from_grid(
            grid,
            samples=cfg.crlb_samples,
            prior_pos_std=cfg.scenario.pos_std,
            prior_vel_std=cfg.scenario.vel_std,
            prior_pos_mean=cfg.scenario.pos_mean,
        )
        bound = joint_crlb(
            fisher_matrix(crlb_cfg, cfg.scenario, grid, np.random.SeedSequence((cfg.seed, point, 10**6)))
        )
        records.append(
            RunRecord(
                kind="crlb",
                bandwidth=grid.bandwidth,
                frame_duration=grid.frame_duration,
                turbo_iterations=0,
                bp_iterations=0,
                runs=cfg.crlb_samples,
                runs_used=cfg.crlb_samples,
                failures=0,
                restart_rejections=0,
                rmse_p=bound.position_rmse,
                rmse_v=bound.velocity_rmse,
                mean_gd_iterations=float("nan"),
                mean_attempts=float("nan"),
                wall_time=time.time() - t1,
                seed=cfg.seed,
            )
        )
    return records


# ---------------------------------------------------------------------------
# Gradient-iteration profile (cold start at one grid point)
# ---------------------------------------------------------------------------


@dataclass
class IterationProfile:
    """RMSE of the final gradient-descent pass as a function of iteration
    index, one curve per estimator."""

    iterations: np.ndarray  # (I+1,)
    curves: dict  # label -> (I+1,) RMSE values
    records: list  # final RunRecords, one per curve


def run_iteration_profile(cfg: ExperimentConfig) -> IterationProfile:
    """Cold-start experiment at the first grid point recording the final
    descent trajectory of every run, so RMSE can be plotted against the
    iteration count."""
    grid = OtfsGridConfig(
        bandwidth=cfg.bandwidths[0],
        frame_duration=cfg.frame_durations[0],
        carrier=cfg.carrier,
        c=cfg.c,
    )
    n_iter = cfg.gd.max_iterations
    labels = [f"tip_L{L}" for L in cfg.turbo_iterations if "tip" in cfg.estimators]
    if "ga" in cfg.estimators:
        labels.append("ga")

    histories = {lab: [] for lab in labels}
    truths = {lab: [] for lab in labels}
    accs = {lab: _Accumulator() for lab in labels}
    anchor_mask = None

    for r in range(cfg.runs):
        swarm = _swarm_for_run(cfg, None, r, _rng(cfg.seed, 0, r, _STREAM_SCENARIO))
        anchor_mask = swarm.anchor_mask
        anchors = AnchorInfo.from_swarm(swarm)
        meas = build_measurements(swarm, grid)
        maps0 = None
        if "tip" in cfg.estimators:
            marginals = compute_marginals(meas.lists, grid, cfg.bp)
            maps0 = estimate_maps(marginals)

        for lab in labels:
            if lab == "ga":
                runner = lambda rng: run_genie_aided(
                    meas, anchors,
                    TipConfig(bp=cfg.bp, gd=cfg.gd,
                              prior_mean=cfg.scenario.pos_mean,
                              prior_std=cfg.scenario.pos_std),
                    rng, record_history=True,
                )
                rng = _rng(cfg.seed, 0, r, _STREAM_GA)
            else:
                L = int(lab.split("_L")[1])
                runner = lambda rng, L=L: run_cold_start(
                    meas, anchors,
                    TipConfig(turbo_iterations=L, bp=cfg.bp, gd=cfg.gd,
                              prior_mean=cfg.scenario.pos_mean,
                              prior_std=cfg.scenario.pos_std),
                    rng, record_history=True, initial_maps=maps0,
                )
                rng = _rng(cfg.seed, 0, r, _STREAM_TIP, L)
            try:
                res = runner(rng)
            except NumericalError:
                continue
            accs[lab].add(res, swarm)
            hist = res.gd_history or [res.positions]
            padded = list(hist) + [hist[-1]] * (n_iter + 1 - len(hist))
            histories[lab].append(np.stack(padded[: n_iter + 1]))
            truths[lab].append(swarm.positions)

    curves = {}
    records = []
    free = ~anchor_mask
    for lab in labels:
        if not histories[lab]:
            continue
        stack = np.stack(histories[lab])  # (R, I+1, N, 3)
        truth = np.stack(truths[lab])[:, None, :, :]
        err = stack[:, :, free, :] - truth[:, :, free, :]
        curves[lab] = np.sqrt(
            np.sum(err**2, axis=(0, 2, 3)) / (3 * free.sum() * len(stack))
        )
        L = 0 if lab == "ga" else int(lab.split("_L")[1])
        records.append(
            accs[lab].record(lab, grid, L, cfg, float("nan"), anchor_mask)
        )
    return IterationProfile(np.arange(n_iter + 1), curves, records)


# ---------------------------------------------------------------------------
# Tracking demo
# ---------------------------------------------------------------------------


@dataclass
class TrackingEpochRecord:
    epoch: int
    t: float
    uav: int
    truth_position: np.ndarray
    truth_velocity: np.ndarray
    est_position: np.ndarray
    est_velocity: np.ndarray
    forecast_position: np.ndarray
    position_error: float
    velocity_angle_error_deg: float


@dataclass
class TrackingDemo:
    records: list
    params: object  # LissajousParams of the moving nodes
    bandwidth: float
    dt: float

    def median_position_error(self) -> float:
        return float(np.median([r.position_error for r in self.records]))

    def median_angle_error(self) -> float:
        vals = [
            r.velocity_angle_error_deg
            for r in self.records
            if np.isfinite(r.velocity_angle_error_deg)
        ]
        return float(np.median(vals)) if vals else float("nan")

    def fraction_angle_above(self, threshold_deg: float) -> float:
        vals = np.array([
            r.velocity_angle_error_deg
            for r in self.records
            if np.isfinite(r.velocity_angle_error_deg)
        ])
        return float((vals > threshold_deg).mean()) if len(vals) else float("nan")


def velocity_angle_deg(v_true: np.ndarray, v_est: np.ndarray) -> float:
    nt = np.linalg.norm(v_true)
    ne = np.linalg.norm(v_est)
    if nt < 1e-9 or ne < 1e-9:
        return float("nan")
    c = float(np.dot(v_true, v_est) / (nt * ne))
    return float(np.degrees(np.arccos(np.clip(c, -1.0, 1.0))))


def run_tracking_demo(
    cfg: ExperimentConfig,
    epochs: int = 50,
    dt: float = 1.0,
    turbo_iterations: int = 5,
    amplitude_max: float = 1000.0,
    rate_max: float = 0.2,
) -> TrackingDemo:
    """Track a swarm on random 3D Lissajous trajectories.

    Epoch 0 is solved cold (belief propagation); every later epoch is a
    tracking step warm-started with the linear forecast from the previous
    one.  Anchors stay at the scenario positions.
    """
    grid = OtfsGridConfig(
        bandwidth=cfg.bandwidths[0],
        frame_duration=cfg.frame_durations[0],
        carrier=cfg.carrier,
        c=cfg.c,
    )
    scenario = cfg.scenario
    a = scenario.anchor_count
    n_free = scenario.n - a
    rng = _rng(cfg.seed, 0, 0, 7)
    params = sample_lissajous_params(
        n_free, rng, amplitude_max, rate_max,
        center_mean=scenario.pos_mean, center_std=scenario.pos_std,
    )
    tip_cfg = TipConfig(
        turbo_iterations=turbo_iterations, bp=cfg.bp, gd=cfg.gd,
        prior_mean=scenario.pos_mean, prior_std=scenario.pos_std, dt=dt,
    )

    def swarm_at(t):
        pos_free, vel_free = lissajous_states(params, t)
        positions = np.vstack([scenario.anchor_positions, pos_free])
        velocities = np.vstack([np.zeros((a, 3)), vel_free])
        mask = np.zeros(scenario.n, dtype=bool)
        mask[:a] = True
        return SwarmState(positions, velocities, mask)

    records = []
    forecast = None
    for epoch in range(epochs):
        t = epoch * dt
        swarm = swarm_at(t)
        anchors = AnchorInfo.from_swarm(swarm)
        meas = build_measurements(swarm, grid)
        if epoch == 0:
            res = run_cold_start(meas, anchors, tip_cfg, _rng(cfg.seed, 1, epoch, 8))
            forecast = res.positions + dt * res.velocities
        else:
            step = run_tracking_step(
                meas, forecast, anchors, tip_cfg, _rng(cfg.seed, 1, epoch, 8)
            )
            res = step.result
            forecast = step.forecast
        for u in range(a, scenario.n):
            records.append(
                TrackingEpochRecord(
                    epoch=epoch,
                    t=t,
                    uav=u,
                    truth_position=swarm.positions[u],
                    truth_velocity=swarm.velocities[u],
                    est_position=res.positions[u],
                    est_velocity=res.velocities[u],
                    forecast_position=forecast[u],
                    position_error=float(
                        np.linalg.norm(res.positions[u] - swarm.positions[u])
                    ),
                    velocity_angle_error_deg=velocity_angle_deg(
                        swarm.velocities[u], res.velocities[u]
                    ),
                )
            )
    return TrackingDemo(records, params, grid.bandwidth, dt)


# ---------------------------------------------------------------------------
# CSV emission
# ---------------------------------------------------------------------------


def write_records_csv(records: list, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=RunRecord.CSV_FIELDS)
        writer.writeheader()
        for rec in records:
            writer.writerow({f: getattr(rec, f) for f in RunRecord.CSV_FIELDS})


def read_records_csv(path) -> list:
    records = []
    with open(path, "r", newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            records.append(
                RunRecord(
                    kind=row["kind"],
                    bandwidth=float(row["bandwidth"]),
                    frame_duration=float(row["frame_duration"]),
                    turbo_iterations=int(row["turbo_iterations"]),
                    bp_iterations=int(row["bp_iterations"]),
                    runs=int(row["runs"]),
                    runs_used=int(row["runs_used"]),
                    failures=int(row["failures"]),
                    restart_rejections=int(row["restart_rejections"]),
                    rmse_p=float(row["rmse_p"]),
                    rmse_v=float(row["rmse_v"]),
                    mean_gd_iterations=float(row["mean_gd_iterations"]),
                    mean_attempts=float(row["mean_attempts"]),
                    wall_time=float(row["wall_time"]),
                    seed=int(row["seed"]),
                )
            )
    return records


def write_tracking_csv(demo: TrackingDemo, path) -> None:
    fields = [
        "epoch", "t", "uav",
        "truth_x", "truth_y", "truth_z",
        "est_x", "est_y", "est_z",
        "forecast_x", "forecast_y", "forecast_z",
        "truth_vx", "truth_vy", "truth_vz",
        "est_vx", "est_vy", "est_vz",
        "position_error", "velocity_angle_error_deg",
    ]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(fields)
        for r in demo.records:
            writer.writerow(
                [r.epoch, r.t, r.uav,
                 *r.truth_position, *r.est_position, *r.forecast_position,
                 *r.truth_velocity, *r.est_velocity,
                 r.position_error, r.velocity_angle_error_deg]
            )


def write_iteration_profile_csv(profile: IterationProfile, path) -> None:
    labels = sorted(profile.curves)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration"] + [f"rmse_p_{lab}" for lab in labels])
        for idx, it in enumerate(profile.iterations):
            writer.writerow([int(it)] + [profile.curves[lab][idx] for lab in labels])
