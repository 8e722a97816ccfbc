"""Acceptance suite: every published target is exercised at its stated
tolerance, at full scale (R=100 where applicable), and reports one
PASS/FAIL line.

The reference runs use c = 3e8 m/s so the grid steps match the round
figures (10 m at 30 MHz, 3 m/s at 20 ms / 5 GHz).
"""

import time

import numpy as np
import pytest

from swarmloc.assignment_bp import (
    BpConfig,
    brute_force_maps,
    compute_marginals,
    estimate_maps,
)
from swarmloc.crlb import CrlbConfig, fisher_matrix, joint_crlb
from swarmloc.experiments import (
    ExperimentConfig,
    rmse_position,
    rmse_velocity,
    run_iteration_profile,
    run_tracking_demo,
)
from swarmloc.geometry import ScenarioConfig
from swarmloc.measurement import build_measurements, quantize, red_distance_tensor
from swarmloc.oracles import (
    check_gradient,
    check_jacobians,
    check_quadruple_identities,
)
from swarmloc.positioning import GdConfig, noise_floor
from swarmloc.tip import AnchorInfo, TipConfig, run_cold_start, run_genie_aided

from conftest import C_REF, make_swarm, paper_grid

RUNS = 100

# Both check-node families with light damping: the configuration used for
# the reference figures (plain delay-only BP needs more iterations to reach
# the same map quality at narrow bandwidths).
BP_FULL = BpConfig(iterations=2, use_doppler_checks=True, damping=0.3)


def report(num, ok, detail):
    print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {num}: {detail}")
    return ok


def tip_config(L, bp=BP_FULL):
    return TipConfig(turbo_iterations=L, bp=bp, gd=GdConfig())


def free_sq(result, swarm):
    free = ~swarm.anchor_mask
    return (
        np.sum((result.positions[free] - swarm.positions[free]) ** 2),
        np.sum((result.velocities[free] - swarm.velocities[free]) ** 2),
    )


class TestAcceptance:
    def test_criterion_1_noiseless_end_to_end(self):
        # quantization disabled, N in {5, 6}, BP(I_mu=2) + one turbo
        # iteration: exact maps and <= 1e-4 m / 1e-4 m/s in 100/100 runs
        t0 = time.time()
        grid = paper_grid(30e6)
        failures = []
        run = 0
        for n in (5, 6):
            for idx in range(50):
                swarm = make_swarm(1000 * n + idx, n=n)
                meas = build_measurements(swarm, grid, noise="none")
                res = run_cold_start(
                    meas, AnchorInfo.from_swarm(swarm),
                    tip_config(L=1, bp=BpConfig(iterations=2)),
                    np.random.default_rng(run),
                )
                free = ~swarm.anchor_mask
                pos_err = np.abs(res.positions[free] - swarm.positions[free]).max()
                vel_err = np.abs(res.velocities[free] - swarm.velocities[free]).max()
                maps_ok = res.maps.differences(meas.truth_maps) == 0
                if not (maps_ok and pos_err <= 1e-4 and vel_err <= 1e-4):
                    failures.append((n, idx, maps_ok, pos_err, vel_err))
                run += 1
        elapsed = time.time() - t0
        ok = not failures and elapsed < 60.0
        assert report(
            1, ok,
            f"noiseless recovery {100 - len(failures)}/100 runs exact, "
            f"{elapsed:.1f}s (< 60s required)",
        )

    def test_criterion_2_cold_start_30mhz(self):
        # B = 30 MHz (10 m step): about 1 m after 30+ iterations, matching
        # the genie-aided curve at convergence
        cfg = ExperimentConfig(
            scenario=ScenarioConfig(), bandwidths=(30e6,), c=C_REF,
            turbo_iterations=(0,), bp=BP_FULL, gd=GdConfig(),
            estimators=("tip", "ga"), runs=RUNS, seed=2, include_crlb=False,
        )
        profile = run_iteration_profile(cfg)
        tip = profile.curves["tip_L0"]
        ga = profile.curves["ga"]
        tail = tip[30:]
        in_band = bool((tail >= 0.5).all() and (tail <= 2.0).all())
        gap = abs(tip[-1] - ga[-1]) / ga[-1]
        ok = in_band and gap <= 0.10
        assert report(
            2, ok,
            f"RMSE_p[30:] in [{tail.min():.3f}, {tail.max():.3f}] m "
            f"(required [0.5, 2.0]), final gap to genie-aided "
            f"{100 * gap:.1f}% (<= 10%)",
        )

    def test_criterion_3_cold_start_3mhz_turbo(self):
        # B = 3 MHz (100 m step): L=0 around 22 m, L=1 around 7 m, L=2
        # matching genie-aided; shared measurements and BP maps per run
        grid = paper_grid(3e6)
        sq = {0: 0.0, 1: 0.0, 2: 0.0, "ga": 0.0}
        n_free = 4
        for r in range(RUNS):
            swarm = make_swarm(3000 + r)
            meas = build_measurements(swarm, grid)
            anchors = AnchorInfo.from_swarm(swarm)
            maps0 = estimate_maps(compute_marginals(meas.lists, grid, BP_FULL))
            for L in (0, 1, 2):
                res = run_cold_start(
                    meas, anchors, tip_config(L),
                    np.random.default_rng((10 * r, L)), initial_maps=maps0,
                )
                sq[L] += free_sq(res, swarm)[0]
            ga = run_genie_aided(
                meas, anchors, tip_config(0), np.random.default_rng((10 * r, 9))
            )
            sq["ga"] += free_sq(ga, swarm)[0]
        rmse = {k: np.sqrt(v / (3 * n_free * RUNS)) for k, v in sq.items()}
        ga_gap = abs(rmse[2] - rmse["ga"]) / rmse["ga"]
        ok = (
            15.0 <= rmse[0] <= 30.0
            and 4.0 <= rmse[1] <= 12.0
            and ga_gap <= 0.20
        )
        assert report(
            3, ok,
            f"RMSE_p: L=0 {rmse[0]:.1f} m (in [15, 30]), "
            f"L=1 {rmse[1]:.1f} m (in [4, 12]), "
            f"L=2 {rmse[2]:.1f} m vs GA {rmse['ga']:.1f} m "
            f"(gap {100 * ga_gap:.1f}% <= 20%)",
        )

    def test_criterion_4_velocity_accuracy_300mhz(self):
        # B = 300 MHz, T_f = 20 ms, L = 5: velocity RMSE well below the
        # 3 m/s quantization step
        grid = paper_grid(300e6, frame_duration=20e-3, carrier=5e9)
        assert grid.velocity_step == pytest.approx(3.0)
        sq_v = 0.0
        for r in range(RUNS):
            swarm = make_swarm(4000 + r)
            meas = build_measurements(swarm, grid)
            res = run_cold_start(
                meas, AnchorInfo.from_swarm(swarm), tip_config(5),
                np.random.default_rng(400 + r),
            )
            sq_v += free_sq(res, swarm)[1]
        rmse_v = np.sqrt(sq_v / (3 * 4 * RUNS))
        ok = 0.15 <= rmse_v <= 0.45
        assert report(
            4, ok,
            f"RMSE_v = {rmse_v:.3f} m/s (required [0.15, 0.45], "
            f"step 3 m/s)",
        )

    def test_criterion_5_check_node_identities(self):
        outcome = check_quadruple_identities(seed=5, draws=1000, tol=1e-9)
        assert report(5, outcome.passed, outcome.detail)

    def test_criterion_6_gradient_and_jacobians(self):
        g = check_gradient(seed=6, instances=50, tol=1e-4)
        j = check_jacobians(seed=7, instances=50, tol_p=1e-4, tol_v=1e-4)
        ok = g.passed and j.passed
        assert report(6, ok, f"gradient: {g.detail}; jacobians: {j.detail}")

    def test_criterion_7_assignment_oracle_equivalence(self):
        # joint-ML equivalence on 5-node swarms: quantized agreement >= 90%
        # over 50 instances, noiseless agreement 100%
        grid = paper_grid(30e6)
        bp_cfg = BpConfig(iterations=2, use_doppler_checks=False)

        noiseless_ok = 0
        for idx in range(20):
            swarm = make_swarm(7000 + idx, n=5)
            meas = build_measurements(swarm, grid, noise="none")
            bp = estimate_maps(compute_marginals(meas.lists, grid, bp_cfg))
            bf = brute_force_maps(meas.lists, grid)
            noiseless_ok += int(bp.differences(bf) == 0)

        agree = 0
        for idx in range(50):
            swarm = make_swarm(7100 + idx, n=5)
            meas = build_measurements(swarm, grid)
            bp = estimate_maps(compute_marginals(meas.lists, grid, bp_cfg))
            bf = brute_force_maps(meas.lists, grid)
            agree += int(bp.differences(bf) == 0)

        ok = noiseless_ok == 20 and agree >= 45
        assert report(
            7, ok,
            f"BP+greedy vs exhaustive ML: noiseless {noiseless_ok}/20, "
            f"quantized {agree}/50 (>= 45 required)",
        )

    def test_criterion_8_bound_consistency(self):
        # Gaussian noise with matched variance: genie-aided RMSE above the
        # root joint bound everywhere, within 2x of it for B >= 30 MHz
        scen = ScenarioConfig()
        lines = []
        ok = True
        for bw in (3e6, 10e6, 30e6, 100e6, 300e6):
            grid = paper_grid(bw)
            p_est, p_true, v_est, v_true = [], [], [], []
            for r in range(RUNS):
                swarm = make_swarm(8000 + r)
                meas = build_measurements(
                    swarm, grid, noise="gaussian",
                    rng=np.random.default_rng((80, int(bw), r)),
                )
                res = run_genie_aided(
                    meas, AnchorInfo.from_swarm(swarm), tip_config(0),
                    np.random.default_rng((81, int(bw), r)),
                )
                p_est.append(res.positions)
                p_true.append(swarm.positions)
                v_est.append(res.velocities)
                v_true.append(swarm.velocities)
            mask = swarm.anchor_mask
            rp = rmse_position(p_est, p_true, mask)
            rv = rmse_velocity(v_est, v_true, mask)
            bound = joint_crlb(
                fisher_matrix(CrlbConfig.from_grid(grid, samples=200), scen, grid, 88)
            )
            above = rp >= bound.position_rmse and rv >= bound.velocity_rmse
            tight = rp <= 2 * bound.position_rmse and rv <= 2 * bound.velocity_rmse
            ok = ok and above and (bw < 30e6 or tight)
            lines.append(
                f"B={bw/1e6:.0f}MHz p {rp:.3f}/{bound.position_rmse:.3f} "
                f"v {rv:.3f}/{bound.velocity_rmse:.3f}"
            )
        assert report(8, ok, "GA(Gaussian) RMSE / root CRLB: " + "; ".join(lines))

    def test_criterion_9_noise_floor_at_truth(self):
        # literal target: residual square error at the true configuration
        # below E_b in at least 95% of 1000 scenarios.  The mean of the
        # residual equals E_b exactly under the i.i.d. uniform error model
        # (and the fixed anchor tetrahedron biases it slightly above), so
        # this rate is not attainable; measured for the record, and the
        # operational threshold beta*E_b is reported alongside.
        grid = paper_grid(30e6)
        e_b = noise_floor(8, grid)
        below, below_beta = 0, 0
        n = 8
        i_idx, j_idx, k_idx = np.ogrid[:n, :n, :n]
        valid = (i_idx != j_idx) & (k_idx != i_idx) & (k_idx != j_idx)
        for seed in range(1000):
            swarm = make_swarm(9000 + seed)
            delta = np.nan_to_num(red_distance_tensor(swarm.positions))
            eta = quantize(delta, grid.distance_step) - delta
            err = float(np.sum(np.where(valid, eta, 0.0) ** 2))
            below += err <= e_b
            below_beta += err <= 2.0 * e_b
        ok = below >= 950
        assert report(
            9, ok,
            f"square error at truth <= E_b in {below}/1000 scenarios "
            f"(>= 950 required); <= 2*E_b (operational restart threshold) "
            f"in {below_beta}/1000",
        )

    def test_criterion_10_tracking_demo(self):
        # 50 tracking epochs on Lissajous trajectories: sub-meter positions
        # and <5 degree velocity directions at 300 MHz; at 3 MHz positions
        # still track while some velocity directions fail
        results = {}
        for bw in (300e6, 3e6):
            cfg = ExperimentConfig(
                scenario=ScenarioConfig(), bandwidths=(bw,), c=C_REF,
                turbo_iterations=(5,), bp=BP_FULL, gd=GdConfig(),
                estimators=("tip",), runs=1, seed=10, include_crlb=False,
            )
            demo = run_tracking_demo(cfg, epochs=50, dt=1.0, turbo_iterations=5)
            results[bw] = demo
        hi, lo = results[300e6], results[3e6]
        ok = (
            hi.median_position_error() < 1.0
            and hi.median_angle_error() < 5.0
            and lo.median_position_error() < 30.0
            and lo.fraction_angle_above(30.0) > 0.0
        )
        assert report(
            10, ok,
            f"300 MHz: median pos {hi.median_position_error():.3f} m (<1), "
            f"median angle {hi.median_angle_error():.2f} deg (<5); "
            f"3 MHz: median pos {lo.median_position_error():.1f} m (<30), "
            f"angle>30deg on {100 * lo.fraction_angle_above(30.0):.1f}% of estimates (>0)",
        )
