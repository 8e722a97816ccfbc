"""Figure rendering for experiment outputs.

Every function writes a PNG next to the CSV it visualizes and returns the
path.  Rendering is headless (Agg backend).
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_KIND_STYLE = {
    "ga": dict(color="black", linestyle="--", marker="s"),
    "ga_gaussian": dict(color="gray", linestyle="-.", marker="^"),
    "crlb": dict(color="tab:red", linestyle=":", marker=None),
}
_L_COLORS = ["tab:blue", "tab:orange", "tab:green", "tab:purple", "tab:brown"]


def _curve_label(kind: str, L: int) -> str:
    if kind == "tip":
        return f"BP+TIP, L={L}"
    if kind == "ga":
        return "genie-aided"
    if kind == "ga_gaussian":
        return "GA (Gaussian noise)"
    if kind == "crlb":
        return "joint CRLB"
    return kind


def _style_for(kind: str, L: int):
    if kind == "tip":
        return dict(color=_L_COLORS[L % len(_L_COLORS)], linestyle="-", marker="o")
    return _KIND_STYLE.get(kind, {})


def _sweep_axis(records, x_field: str):
    groups = {}
    for rec in records:
        key = (rec.kind, rec.turbo_iterations if rec.kind == "tip" else 0)
        groups.setdefault(key, []).append(rec)
    for key, recs in groups.items():
        recs.sort(key=lambda r: getattr(r, x_field))
    return groups


def plot_rmse_vs_bandwidth(records, path, value: str = "rmse_p"):
    """Log-log RMSE against signal bandwidth, one curve per estimator/L."""
    groups = _sweep_axis(records, "bandwidth")
    fig, ax = plt.subplots(figsize=(6, 4.5))
    for (kind, L), recs in sorted(groups.items()):
        x = [r.bandwidth / 1e6 for r in recs]
        y = [getattr(r, value) for r in recs]
        ax.loglog(x, y, label=_curve_label(kind, L), **_style_for(kind, L))
    ax.set_xlabel("bandwidth [MHz]")
    ax.set_ylabel("RMSE$_p$ [m]" if value == "rmse_p" else "RMSE$_v$ [m/s]")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def plot_rmse_vs_frame_duration(records, path, value: str = "rmse_v"):
    """RMSE against the frame duration (fixed bandwidth)."""
    groups = _sweep_axis(records, "frame_duration")
    fig, ax = plt.subplots(figsize=(6, 4.5))
    for (kind, L), recs in sorted(groups.items()):
        x = [r.frame_duration * 1e3 for r in recs]
        y = [getattr(r, value) for r in recs]
        ax.loglog(x, y, label=_curve_label(kind, L), **_style_for(kind, L))
    ax.set_xlabel("frame duration [ms]")
    ax.set_ylabel("RMSE$_v$ [m/s]" if value == "rmse_v" else "RMSE$_p$ [m]")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def plot_iteration_profile(profile, path):
    """RMSE of the final descent pass versus iteration count."""
    fig, ax = plt.subplots(figsize=(6, 4.5))
    for lab in sorted(profile.curves):
        style = {}
        if lab == "ga":
            style = dict(color="black", linestyle="--")
        ax.semilogy(profile.iterations, profile.curves[lab], label=lab, **style)
    ax.set_xlabel("gradient descent iteration")
    ax.set_ylabel("RMSE$_p$ [m]")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def plot_tracking(demo, path, plane=(0, 1)):
    """2D projection of the tracking demo: trajectories, true and estimated
    epoch positions, and estimated velocity arrows."""
    from .geometry import lissajous_states

    ax_x, ax_y = plane
    fig, ax = plt.subplots(figsize=(6, 6))
    uavs = sorted({r.uav for r in demo.records})

    t_max = max(r.t for r in demo.records)
    ts = np.linspace(0.0, t_max, 400)
    traj = np.stack([lissajous_states(demo.params, t)[0] for t in ts])  # (T, n_free, 3)
    base = min(uavs)
    for u in uavs:
        ax.plot(
            traj[:, u - base, ax_x] / 1e3, traj[:, u - base, ax_y] / 1e3,
            color="black", linewidth=0.8, alpha=0.6,
        )
    truth = np.array([r.truth_position for r in demo.records]) / 1e3
    est = np.array([r.est_position for r in demo.records]) / 1e3
    vel = np.array([r.est_velocity for r in demo.records])
    ax.plot(truth[:, ax_x], truth[:, ax_y], "o", mfc="none", color="tab:blue",
            markersize=4, label="true position")
    ax.plot(est[:, ax_x], est[:, ax_y], "o", color="tab:red", markersize=2.5,
            label="estimated position")
    ax.quiver(
        est[:, ax_x], est[:, ax_y], vel[:, ax_x], vel[:, ax_y],
        angles="xy", color="tab:red", width=0.0035, alpha=0.7,
        label="estimated velocity",
    )
    axis_names = "xyz"
    ax.set_xlabel(f"{axis_names[ax_x]} [km]")
    ax.set_ylabel(f"{axis_names[ax_y]} [km]")
    ax.set_title(f"B = {demo.bandwidth/1e6:.0f} MHz, dt = {demo.dt:g} s")
    ax.legend(fontsize=8)
    ax.set_aspect("equal", adjustable="datalim")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def plot_crlb(records, path):
    """Root CRLBs against bandwidth (position and velocity panels)."""
    recs = sorted([r for r in records if r.kind == "crlb"], key=lambda r: r.bandwidth)
    fig, axes = plt.subplots(1, 2, figsize=(9, 4))
    x = [r.bandwidth / 1e6 for r in recs]
    axes[0].loglog(x, [r.rmse_p for r in recs], "o-", color="tab:red")
    axes[0].set_xlabel("bandwidth [MHz]")
    axes[0].set_ylabel("root CRLB$_p$ [m]")
    axes[1].loglog(x, [r.rmse_v for r in recs], "o-", color="tab:red")
    axes[1].set_xlabel("bandwidth [MHz]")
    axes[1].set_ylabel("root CRLB$_v$ [m/s]")
    for ax in axes:
        ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
