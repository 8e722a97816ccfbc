"""Command-line interface.

Subcommands:

* ``cold-start``   - cold-start Monte-Carlo at one grid point, with the
  RMSE-versus-iteration profile and figure; can also save or replay
  measurement-set files.
* ``tracking``     - Lissajous tracking demo (CSV + trajectory figure).
* ``crlb``         - joint bounds across a bandwidth sweep.
* ``sweep``        - full RMSE sweep over bandwidths/frame durations.
* ``oracle-check`` - run all independent correctness oracles.

Options can be preloaded from a key=value config file given by ``--config``
or the SWARMLOC_CONFIG environment variable; explicit command-line flags
take precedence.  See the README for the schema.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .assignment_bp import BpConfig
from .experiments import (
    ExperimentConfig,
    run_iteration_profile,
    run_sweep,
    run_tracking_demo,
    write_iteration_profile_csv,
    write_records_csv,
    write_tracking_csv,
)
from .geometry import DEFAULT_ANCHOR_POSITIONS, ScenarioConfig
from .measurement import load_measurements, save_measurements, build_measurements, OtfsGridConfig
from .oracles import run_all_checks
from . import plots

logger = logging.getLogger(__name__)

BP_COMPLEXITY_WARN_N = 10


def _float_list(text: str):
    return tuple(float(x) for x in text.split(",") if x.strip())


def _int_list(text: str):
    return tuple(int(x) for x in text.split(",") if x.strip())


def _str_list(text: str):
    return tuple(x.strip() for x in text.split(",") if x.strip())


def _bool(text: str):
    val = text.strip().lower()
    if val in ("1", "true", "yes", "on"):
        return True
    if val in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# Keys accepted in the config file, with their converters.
CONFIG_SCHEMA = {
    "outdir": str,
    "seed": int,
    "runs": int,
    "n": int,
    "pos_mean": float,
    "pos_std": float,
    "vel_std": float,
    "bandwidth": float,
    "bandwidths": _float_list,
    "frame_duration": float,
    "frame_durations": _float_list,
    "carrier": float,
    "c": float,
    "i_mu": int,
    "delay_only": _bool,
    "bp_damping": float,
    "turbo_iterations": int,
    "turbo_iterations_list": _int_list,
    "estimators": _str_list,
    "epsilon": float,
    "gd_iterations": int,
    "beta": float,
    "max_restarts": int,
    "crlb_samples": int,
    "epochs": int,
    "dt": float,
    "amplitude_max": float,
    "rate_max": float,
    "trace": str,
    "fast": _bool,
    "workers": int,
}


def read_config_file(path) -> dict:
    """Parse ``key = value`` lines (# comments allowed) into typed values."""
    values = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if "=" not in stripped:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key, _, raw = stripped.partition("=")
            key = key.strip().replace("-", "_")
            if key not in CONFIG_SCHEMA:
                raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
            try:
                values[key] = CONFIG_SCHEMA[key](raw.strip())
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from exc
    return values


def _add_common(parser: argparse.ArgumentParser):
    parser.add_argument("--config", help="key=value config file (or set SWARMLOC_CONFIG)")
    parser.add_argument("--outdir", default="results", help="output directory")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--runs", type=int, default=100, help="Monte-Carlo runs per point")
    parser.add_argument("--n", type=int, default=8, help="total nodes incl. 4 anchors")
    parser.add_argument("--pos-mean", type=float, default=500.0, dest="pos_mean")
    parser.add_argument("--pos-std", type=float, default=1000.0 / np.sqrt(12.0), dest="pos_std")
    parser.add_argument("--vel-std", type=float, default=10.0, dest="vel_std")
    parser.add_argument("--frame-duration", type=float, default=20e-3, dest="frame_duration")
    parser.add_argument("--carrier", type=float, default=5e9)
    parser.add_argument("--c", type=float, default=299792458.0, help="propagation speed [m/s]")
    parser.add_argument("--i-mu", type=int, default=2, dest="i_mu", help="BP iterations")
    parser.add_argument("--delay-only", action="store_true", dest="delay_only",
                        help="disable the Doppler check nodes in BP")
    parser.add_argument("--bp-damping", type=float, default=0.3, dest="bp_damping")
    parser.add_argument("--epsilon", type=float, default=1e-4, help="GD stop threshold")
    parser.add_argument("--gd-iterations", type=int, default=100, dest="gd_iterations")
    parser.add_argument("--beta", type=float, default=2.0, help="restart threshold factor")
    parser.add_argument("--max-restarts", type=int, default=20, dest="max_restarts")
    parser.add_argument("--fast", action="store_true",
                        help="CI profile: 20 runs, 6 nodes")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="swarmloc",
        description="Swarm localization from quantized delay-Doppler profiles",
        allow_abbrev=False,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("cold-start", help="cold-start Monte-Carlo at one bandwidth")
    _add_common(p)
    p.add_argument("--bandwidth", type=float, default=30e6)
    p.add_argument("--turbo-iterations-list", type=_int_list, default=(0,),
                   dest="turbo_iterations_list")
    p.add_argument("--save-measurements", dest="save_measurements",
                   help="write the first run's measurement set to this file")
    p.add_argument("--from-measurements", dest="from_measurements",
                   help="solve a saved measurement-set file instead of sampling")
    p.add_argument("--turbo-iterations", type=int, default=2, dest="turbo_iterations",
                   help="turbo depth used with --from-measurements")

    p = sub.add_parser("tracking", help="Lissajous tracking demo")
    _add_common(p)
    p.add_argument("--bandwidth", type=float, default=300e6)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--dt", type=float, default=1.0)
    p.add_argument("--turbo-iterations", type=int, default=5, dest="turbo_iterations")
    p.add_argument("--amplitude-max", type=float, default=1000.0, dest="amplitude_max")
    p.add_argument("--rate-max", type=float, default=0.2, dest="rate_max")

    p = sub.add_parser("crlb", help="joint bounds across bandwidths")
    _add_common(p)
    p.add_argument("--bandwidths", type=_float_list,
                   default=(3e6, 10e6, 30e6, 100e6, 300e6))
    p.add_argument("--crlb-samples", type=int, default=200, dest="crlb_samples")

    p = sub.add_parser("sweep", help="full RMSE sweep")
    _add_common(p)
    p.add_argument("--bandwidths", type=_float_list,
                   default=(3e6, 10e6, 30e6, 100e6, 300e6))
    p.add_argument("--frame-durations", type=_float_list, default=(20e-3,),
                   dest="frame_durations")
    p.add_argument("--turbo-iterations-list", type=_int_list, default=(0, 1, 2),
                   dest="turbo_iterations_list")
    p.add_argument("--estimators", type=_str_list, default=("tip", "ga"))
    p.add_argument("--crlb-samples", type=int, default=200, dest="crlb_samples")
    p.add_argument("--trace", help="trajectory trace file (t,id,x,y,z rows)")
    p.add_argument("--workers", type=int, default=1,
                   help="process-pool size for Monte-Carlo runs")

    p = sub.add_parser("oracle-check", help="run all correctness oracles")
    p.add_argument("--config", help=argparse.SUPPRESS)

    return parser


def _apply_config(parser: argparse.ArgumentParser, argv):
    """Two-pass parse: load the config file as new defaults, then let
    explicit flags win."""
    pre = argparse.ArgumentParser(add_help=False, allow_abbrev=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    path = known.config or os.environ.get("SWARMLOC_CONFIG")
    if path:
        values = read_config_file(path)
        for action in parser._subparsers._group_actions[0].choices.values():
            applicable = {
                key: val for key, val in values.items()
                if any(a.dest == key for a in action._actions)
            }
            action.set_defaults(**applicable)
    return parser.parse_args(argv)


def _setup_logging(outdir: Path):
    outdir.mkdir(parents=True, exist_ok=True)
    handler = logging.FileHandler(outdir / "run.log", mode="w")
    handler.setFormatter(logging.Formatter("%(asctime)s %(name)s %(levelname)s %(message)s"))
    root = logging.getLogger("swarmloc")
    root.setLevel(logging.INFO)
    root.addHandler(handler)
    console = logging.StreamHandler()
    console.setLevel(logging.WARNING)
    root.addHandler(console)


def _experiment_config(args, bandwidths, turbo_list) -> ExperimentConfig:
    n = min(6, args.n) if args.fast else args.n
    runs = min(20, args.runs) if args.fast else args.runs
    if n > BP_COMPLEXITY_WARN_N:
        logger.warning(
            "belief propagation scales as N^8; N=%d will be slow "
            "(consider --delay-only or smaller swarms)", n,
        )
    from .positioning import GdConfig

    scenario = ScenarioConfig(
        n=n,
        anchor_positions=DEFAULT_ANCHOR_POSITIONS.copy(),
        pos_mean=args.pos_mean,
        pos_std=args.pos_std,
        vel_std=args.vel_std,
    )
    return ExperimentConfig(
        scenario=scenario,
        bandwidths=tuple(bandwidths),
        frame_durations=tuple(getattr(args, "frame_durations", (args.frame_duration,))),
        carrier=args.carrier,
        c=args.c,
        turbo_iterations=tuple(turbo_list),
        bp=BpConfig(
            iterations=args.i_mu,
            use_doppler_checks=not args.delay_only,
            damping=args.bp_damping,
        ),
        gd=GdConfig(
            epsilon=args.epsilon,
            max_iterations=args.gd_iterations,
            beta=args.beta,
            max_restarts=args.max_restarts,
        ),
        estimators=tuple(getattr(args, "estimators", ("tip", "ga"))),
        runs=runs,
        seed=args.seed,
        crlb_samples=getattr(args, "crlb_samples", 200),
        trace_path=getattr(args, "trace", None),
    )


def _cmd_cold_start(args) -> int:
    outdir = Path(args.outdir)
    _setup_logging(outdir)

    if args.from_measurements:
        return _solve_saved_measurements(args, outdir)

    cfg = _experiment_config(args, [args.bandwidth], args.turbo_iterations_list)
    if args.save_measurements:
        swarm = ScenarioConfig(
            n=cfg.scenario.n, anchor_positions=cfg.scenario.anchor_positions,
            pos_mean=cfg.scenario.pos_mean, pos_std=cfg.scenario.pos_std,
            vel_std=cfg.scenario.vel_std,
        )
        from .geometry import sample_scenario
        from .experiments import _rng, _STREAM_SCENARIO

        grid = OtfsGridConfig(args.bandwidth, args.frame_duration, args.carrier, args.c)
        meas = build_measurements(
            sample_scenario(swarm, _rng(cfg.seed, 0, 0, _STREAM_SCENARIO)), grid
        )
        save_measurements(meas, args.save_measurements)
        print(f"measurements written to {args.save_measurements}")

    profile = run_iteration_profile(cfg)
    write_records_csv(profile.records, outdir / "cold_start.csv")
    write_iteration_profile_csv(profile, outdir / "iteration_profile.csv")
    fig = plots.plot_iteration_profile(profile, outdir / "rmse_vs_iterations.png")
    for rec in profile.records:
        print(
            f"{rec.kind:10s} B={rec.bandwidth/1e6:6.1f} MHz  "
            f"RMSE_p={rec.rmse_p:8.3f} m  RMSE_v={rec.rmse_v:7.3f} m/s  "
            f"used={rec.runs_used}/{rec.runs} rejected={rec.restart_rejections}"
        )
    print(f"outputs: {outdir/'cold_start.csv'}, {outdir/'iteration_profile.csv'}, {fig}")
    return 0


def _solve_saved_measurements(args, outdir: Path) -> int:
    from .positioning import GdConfig
    from .tip import AnchorInfo, TipConfig, run_cold_start

    meas = load_measurements(args.from_measurements)
    n = meas.n
    a = len(DEFAULT_ANCHOR_POSITIONS)
    mask = np.zeros(n, dtype=bool)
    mask[:a] = True
    anchors = AnchorInfo(mask, DEFAULT_ANCHOR_POSITIONS.copy(), np.zeros((a, 3)))
    cfg = TipConfig(
        turbo_iterations=args.turbo_iterations,
        bp=BpConfig(iterations=args.i_mu, use_doppler_checks=not args.delay_only,
                    damping=args.bp_damping),
        gd=GdConfig(epsilon=args.epsilon, max_iterations=args.gd_iterations,
                    beta=args.beta, max_restarts=args.max_restarts),
        prior_mean=args.pos_mean, prior_std=args.pos_std,
    )
    res = run_cold_start(meas, anchors, cfg, np.random.default_rng(args.seed))
    out = outdir / "positions.csv"
    with open(out, "w", encoding="utf-8") as fh:
        fh.write("uav,is_anchor,x,y,z,vx,vy,vz\n")
        for u in range(n):
            fh.write(
                f"{u},{int(mask[u])},"
                + ",".join(f"{x:.6f}" for x in res.positions[u])
                + ","
                + ",".join(f"{x:.6f}" for x in res.velocities[u])
                + "\n"
            )
    status = "accepted" if res.success else "restart budget exhausted"
    print(f"solved {args.from_measurements}: residual {res.residual:.3f} m^2 ({status})")
    print(f"estimates written to {out}")
    return 0


def _cmd_tracking(args) -> int:
    outdir = Path(args.outdir)
    _setup_logging(outdir)
    cfg = _experiment_config(args, [args.bandwidth], (args.turbo_iterations,))
    epochs = 10 if args.fast else args.epochs
    demo = run_tracking_demo(
        cfg, epochs=epochs, dt=args.dt,
        turbo_iterations=args.turbo_iterations,
        amplitude_max=args.amplitude_max, rate_max=args.rate_max,
    )
    write_tracking_csv(demo, outdir / "tracking.csv")
    fig = plots.plot_tracking(demo, outdir / "tracking.png")
    print(
        f"B={demo.bandwidth/1e6:.0f} MHz, {epochs} epochs: "
        f"median position error {demo.median_position_error():.3f} m, "
        f"median velocity angle error {demo.median_angle_error():.2f} deg, "
        f"angle>30deg in {100*demo.fraction_angle_above(30.0):.1f}% of estimates"
    )
    print(f"outputs: {outdir/'tracking.csv'}, {fig}")
    return 0


def _cmd_crlb(args) -> int:
    outdir = Path(args.outdir)
    _setup_logging(outdir)
    cfg = _experiment_config(args, args.bandwidths, (0,))
    cfg = ExperimentConfig(
        scenario=cfg.scenario, bandwidths=cfg.bandwidths,
        frame_durations=cfg.frame_durations, carrier=cfg.carrier, c=cfg.c,
        turbo_iterations=(0,), bp=cfg.bp, gd=cfg.gd, estimators=(),
        runs=1, seed=cfg.seed, include_crlb=True, crlb_samples=cfg.crlb_samples,
    )
    records = run_sweep(cfg)
    write_records_csv(records, outdir / "crlb.csv")
    fig = plots.plot_crlb(records, outdir / "crlb.png")
    for rec in records:
        print(
            f"B={rec.bandwidth/1e6:6.1f} MHz  root CRLB_p={rec.rmse_p:.4f} m  "
            f"root CRLB_v={rec.rmse_v:.4f} m/s"
        )
    print(f"outputs: {outdir/'crlb.csv'}, {fig}")
    return 0


def _cmd_sweep(args) -> int:
    outdir = Path(args.outdir)
    _setup_logging(outdir)
    cfg = _experiment_config(args, args.bandwidths, args.turbo_iterations_list)
    records = run_sweep(cfg, workers=args.workers)
    write_records_csv(records, outdir / "sweep.csv")
    figs = []
    if len(cfg.bandwidths) > 1:
        figs.append(plots.plot_rmse_vs_bandwidth(
            records, outdir / "rmse_p_vs_bandwidth.png", "rmse_p"))
        figs.append(plots.plot_rmse_vs_bandwidth(
            records, outdir / "rmse_v_vs_bandwidth.png", "rmse_v"))
    if len(cfg.frame_durations) > 1:
        figs.append(plots.plot_rmse_vs_frame_duration(
            records, outdir / "rmse_v_vs_frame_duration.png", "rmse_v"))
    for rec in records:
        print(
            f"{rec.kind:12s} B={rec.bandwidth/1e6:6.1f} MHz Tf={rec.frame_duration*1e3:4.0f} ms "
            f"L={rec.turbo_iterations} RMSE_p={rec.rmse_p:8.3f} m RMSE_v={rec.rmse_v:7.3f} m/s "
            f"used={rec.runs_used}/{rec.runs}"
        )
    print(f"outputs: {outdir/'sweep.csv'}" + "".join(f", {f}" for f in figs))
    return 0


def _cmd_oracle_check(_args) -> int:
    outcomes = run_all_checks()
    width = max(len(o.name) for o in outcomes)
    failed = 0
    for o in outcomes:
        status = "PASS" if o.passed else "FAIL"
        print(f"[{status}] {o.name:<{width}}  {o.detail}")
        failed += 0 if o.passed else 1
    print(f"{len(outcomes) - failed}/{len(outcomes)} oracle checks passed")
    return 1 if failed else 0


def main(argv=None) -> int:
    parser = build_parser()
    args = _apply_config(parser, sys.argv[1:] if argv is None else argv)
    commands = {
        "cold-start": _cmd_cold_start,
        "tracking": _cmd_tracking,
        "crlb": _cmd_crlb,
        "sweep": _cmd_sweep,
        "oracle-check": _cmd_oracle_check,
    }
    return commands[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
