"""Independent correctness oracles: finite-difference checks for analytic
derivatives, exhaustive assignment comparisons, and the algebraic quadruple
identities.  Used by the ``oracle-check`` CLI command and by the test
suite."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .assignment_bp import (
    BpConfig,
    NoiseKernel,
    brute_force_maps,
    compute_marginals,
    estimate_maps,
    kernel_eval,
)
from .crlb import delta_position_jacobian, omega_jacobians
from .geometry import (
    DEFAULT_ANCHOR_POSITIONS,
    lissajous_states,
    sample_lissajous_params,
    sample_random_swarm,
)
from .measurement import (
    OtfsGridConfig,
    build_measurements,
    red_distance_tensor,
    radial_velocity_tensor,
)
from .positioning import gradient, square_error
from .tip import apply_maps


@dataclass
class OracleOutcome:
    name: str
    passed: bool
    detail: str


def _random_swarm(rng, n=8, a=4, vel_std=10.0):
    return sample_random_swarm(
        n, a, 500.0, 1000.0 / np.sqrt(12.0), vel_std, DEFAULT_ANCHOR_POSITIONS[:a], rng
    )


def check_lissajous_velocity(seed=0, draws=100, h=1e-4, tol=1e-5) -> OracleOutcome:
    """Analytic trajectory velocity against a central finite difference."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(draws):
        params = sample_lissajous_params(4, rng)
        t = float(rng.uniform(0.0, 50.0))
        _, vel = lissajous_states(params, t)
        pos_p, _ = lissajous_states(params, t + h)
        pos_m, _ = lissajous_states(params, t - h)
        fd = (pos_p - pos_m) / (2 * h)
        scale = np.maximum(np.abs(fd), 1e-6)
        worst = max(worst, float(np.max(np.abs(vel - fd) / scale)))
    return OracleOutcome(
        "lissajous velocity vs finite difference",
        worst < tol,
        f"max relative error {worst:.2e} (tol {tol:g})",
    )


def check_radial_velocity(seed=1, draws=100, h=1e-5, tol=1e-4) -> OracleOutcome:
    """Radial velocity against the finite-difference derivative of the
    two-leg path length moved along the velocities."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(draws):
        swarm = _random_swarm(rng)
        omega = radial_velocity_tensor(swarm.positions, swarm.velocities)
        i, j = rng.choice(swarm.n, size=2, replace=False)
        k = int(rng.integers(swarm.n))
        while k == i:
            k = int(rng.integers(swarm.n))
        def path_len(t):
            p = swarm.positions + t * swarm.velocities
            if k == j:
                return np.linalg.norm(p[j] - p[i])
            return np.linalg.norm(p[j] - p[k]) + np.linalg.norm(p[k] - p[i])
        fd = (path_len(h) - path_len(-h)) / (2 * h)
        rel = abs(omega[i, j, k] - fd) / max(abs(fd), 1e-9)
        worst = max(worst, rel)
    return OracleOutcome(
        "radial velocity vs path-length finite difference",
        worst < tol,
        f"max relative error {worst:.2e} (tol {tol:g})",
    )


def check_quadruple_identities(seed=2, draws=1000, tol=1e-9) -> OracleOutcome:
    """Both quadruple check identities on noiseless tensors."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(draws // 50 + 1):
        swarm = _random_swarm(rng)
        d = red_distance_tensor(swarm.positions)
        w = radial_velocity_tensor(swarm.positions, swarm.velocities)
        for _ in range(50):
            i, j, k, h = rng.choice(swarm.n, size=4, replace=False)
            scale_d = max(abs(d[i, j, k]), 1.0)
            scale_w = max(abs(w[i, j, k]), 1.0)
            r1 = abs(d[i, j, k] - d[i, j, h] + d[i, k, h] - d[j, h, k]) / scale_d
            r2 = abs(w[i, j, k] + w[i, j, h] - w[k, h, i] - w[k, h, j]) / scale_w
            worst = max(worst, r1, r2)
    return OracleOutcome(
        "quadruple delay/Doppler identities",
        worst < tol,
        f"max relative residual {worst:.2e} (tol {tol:g})",
    )


def check_gradient(seed=3, instances=50, h=1e-3, tol=1e-4) -> OracleOutcome:
    """Analytic square-error gradient against central finite differences."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(instances):
        swarm = _random_swarm(rng, n=6)
        grid = OtfsGridConfig(bandwidth=30e6, c=3e8)
        meas = build_measurements(swarm, grid)
        delta, _ = apply_maps(meas.lists, meas.truth_maps)
        t = swarm.positions + rng.normal(0, 20.0, size=swarm.positions.shape)
        g = gradient(t, delta)
        fd = np.zeros_like(g)
        for a in range(swarm.n):
            for x in range(3):
                tp = t.copy(); tp[a, x] += h
                tm = t.copy(); tm[a, x] -= h
                fd[a, x] = (square_error(tp, delta) - square_error(tm, delta)) / (2 * h)
        scale = max(float(np.abs(fd).max()), 1e-9)
        worst = max(worst, float(np.abs(g - fd).max() / scale))
    return OracleOutcome(
        "square-error gradient vs finite differences",
        worst < tol,
        f"max relative error {worst:.2e} (tol {tol:g})",
    )


def check_jacobians(seed=4, instances=50, tol_p=1e-4, tol_v=1e-6) -> OracleOutcome:
    """Distance and radial-velocity Jacobians against finite differences."""
    rng = np.random.default_rng(seed)
    worst_d = worst_p = worst_v = 0.0
    for _ in range(instances):
        swarm = _random_swarm(rng, n=6)
        free = np.flatnonzero(~swarm.anchor_mask)
        i, j = rng.choice(swarm.n, size=2, replace=False)
        k = int(rng.integers(swarm.n))
        while k == i:
            k = int(rng.integers(swarm.n))
        p, v = swarm.positions, swarm.velocities

        if k != j:
            jd = delta_position_jacobian(p, i, j, k, free)
            fd = _fd_wrt_positions(
                lambda q: red_distance_tensor(q)[i, j, k], p, free
            )
            worst_d = max(worst_d, _rel_err(jd, fd))

        jp, jv = omega_jacobians(p, v, i, j, k, free)
        fd_p = _fd_wrt_positions(
            lambda q: radial_velocity_tensor(q, v)[i, j, k], p, free
        )
        fd_v = _fd_wrt_positions(
            lambda q: radial_velocity_tensor(p, q)[i, j, k], v, free, h=1e-4
        )
        worst_p = max(worst_p, _rel_err(jp, fd_p))
        worst_v = max(worst_v, _rel_err(jv, fd_v))
    passed = worst_d < tol_p and worst_p < tol_p and worst_v < tol_v
    return OracleOutcome(
        "observation Jacobians vs finite differences",
        passed,
        f"delta {worst_d:.2e}, omega/p {worst_p:.2e}, omega/v {worst_v:.2e}",
    )


def _fd_wrt_positions(fun, base, free_ids, h=1e-3):
    out = np.zeros(3 * len(free_ids))
    for slot, node in enumerate(free_ids):
        for x in range(3):
            qp = base.copy(); qp[node, x] += h
            qm = base.copy(); qm[node, x] -= h
            out[3 * slot + x] = (fun(qp) - fun(qm)) / (2 * h)
    return out


def _rel_err(a, b):
    scale = max(float(np.abs(b).max()), 1e-9)
    return float(np.abs(a - b).max() / scale)


def check_kernel(tol=1e-6) -> OracleOutcome:
    """Quadruple-error kernel: normalization, symmetry, peak value."""
    k = NoiseKernel(7.5)
    z = np.linspace(-4 * k.step, 4 * k.step, 400001)
    integral = float(np.trapezoid(kernel_eval(k, z), z))
    sym = float(np.abs(kernel_eval(k, z) - kernel_eval(k, -z)).max())
    peak = abs(kernel_eval(k, 0.0) - 2.0 / (3.0 * k.step))
    passed = abs(integral - 1.0) < tol and sym < 1e-12 and peak < 1e-12
    return OracleOutcome(
        "Irwin-Hall(4) kernel normalization",
        passed,
        f"integral {integral:.8f}, symmetry {sym:.1e}, peak err {peak:.1e}",
    )


def check_assignment_oracle(
    seed=5, instances=20, noiseless_instances=10, min_agree=0.9
) -> OracleOutcome:
    """BP + greedy decoding against the exhaustive joint-ML assignment on
    5-node swarms: must match exactly on noiseless lists and on at least
    ``min_agree`` of the quantized instances."""
    rng = np.random.default_rng(seed)
    grid = OtfsGridConfig(bandwidth=30e6, c=3e8)
    cfg = BpConfig(iterations=2, use_doppler_checks=False)

    exact = 0
    for _ in range(noiseless_instances):
        swarm = _random_swarm(rng, n=5)
        meas = build_measurements(swarm, grid, noise="none")
        bp = estimate_maps(compute_marginals(meas.lists, grid, cfg))
        bf = brute_force_maps(meas.lists, grid)
        exact += int(bp.differences(bf) == 0)

    agree = 0
    for _ in range(instances):
        swarm = _random_swarm(rng, n=5)
        meas = build_measurements(swarm, grid)
        bp = estimate_maps(compute_marginals(meas.lists, grid, cfg))
        bf = brute_force_maps(meas.lists, grid)
        agree += int(bp.differences(bf) == 0)

    passed = exact == noiseless_instances and agree >= min_agree * instances
    return OracleOutcome(
        "BP+greedy vs exhaustive joint-ML assignment (N=5)",
        passed,
        f"noiseless {exact}/{noiseless_instances}, quantized {agree}/{instances}",
    )


def check_noiseless_end_to_end(seed=6, instances=5, tol=1e-4) -> OracleOutcome:
    """Exact recovery on noiseless measurements through the full pipeline."""
    from .positioning import GdConfig
    from .tip import AnchorInfo, TipConfig, run_cold_start

    rng = np.random.default_rng(seed)
    grid = OtfsGridConfig(bandwidth=30e6, c=3e8)
    worst_p = worst_v = 0.0
    for idx in range(instances):
        swarm = _random_swarm(rng, n=6)
        meas = build_measurements(swarm, grid, noise="none")
        cfg = TipConfig(turbo_iterations=1, bp=BpConfig(iterations=2), gd=GdConfig())
        res = run_cold_start(
            meas, AnchorInfo.from_swarm(swarm), cfg, np.random.default_rng(100 + idx)
        )
        free = ~swarm.anchor_mask
        worst_p = max(worst_p, float(np.abs(res.positions[free] - swarm.positions[free]).max()))
        worst_v = max(worst_v, float(np.abs(res.velocities[free] - swarm.velocities[free]).max()))
    return OracleOutcome(
        "noiseless end-to-end recovery",
        worst_p < tol and worst_v < tol,
        f"max position error {worst_p:.2e} m, velocity {worst_v:.2e} m/s",
    )


ALL_CHECKS = (
    check_kernel,
    check_lissajous_velocity,
    check_radial_velocity,
    check_quadruple_identities,
    check_gradient,
    check_jacobians,
    check_assignment_oracle,
    check_noiseless_end_to_end,
)


def run_all_checks() -> list:
    return [check() for check in ALL_CHECKS]
