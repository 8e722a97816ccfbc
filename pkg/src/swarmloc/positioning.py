"""Position estimation by gradient descent on the echo-excess square error.

Given map-ordered distance observations delta_ijk, the square error of a
tentative configuration t (stacked positions) is

    E(t) = sum_{i, j != i, k not in {i, j}} (delta_ijk - theta_ijk(t))^2,

with theta_ijk(t) = |t_j - t_k| + |t_k - t_i| - |t_j - t_i|.  E is
non-convex; minimization uses Barzilai-Borwein steps with anchors clamped,
and a restart heuristic rejects local minima whose residual exceeds a
multiple of the expected quantization-noise floor E_b.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .measurement import OtfsGridConfig, pairwise_distances, versors


class NumericalError(RuntimeError):
    """Raised when the square error or gradient becomes non-finite."""


@dataclass(frozen=True)
class GdConfig:
    """Gradient-descent controls.

    ``epsilon`` is the relative square-error decrease below which iteration
    stops (once the error is also trending downward); ``step_rule`` is
    either "bb" (Barzilai-Borwein, clamped to [step_min, step_max]) or
    "constant" (always gamma0).  ``beta`` scales the residual acceptance
    threshold beta*E_b used by the restart logic, and ``max_restarts``
    bounds the number of fresh starts.
    """

    epsilon: float = 1e-4
    max_iterations: int = 100
    step_rule: str = "bb"
    gamma0: float = 1e-2
    step_min: float = 1e-8
    step_max: float = 1e3
    beta: float = 2.0
    max_restarts: int = 20

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be > 0")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be >= 0")
        if self.beta <= 1:
            raise ValueError("beta must be > 1")
        if self.step_rule not in ("bb", "constant"):
            raise ValueError("step_rule must be 'bb' or 'constant'")


def _validity_mask(n: int) -> np.ndarray:
    i_idx, j_idx, k_idx = np.ogrid[:n, :n, :n]
    return (i_idx != j_idx) & (k_idx != i_idx) & (k_idx != j_idx)


def _theta(positions: np.ndarray) -> np.ndarray:
    dm = pairwise_distances(positions)
    n = len(positions)
    i_idx, j_idx, k_idx = np.ogrid[:n, :n, :n]
    return dm[j_idx, k_idx] + dm[k_idx, i_idx] - dm[i_idx, j_idx]


def square_error(t: np.ndarray, obs_delta: np.ndarray) -> float:
    """E(t) over all valid (i, j, k) triples; NaN observations are skipped.

    ``t`` is (N, 3) or flat (3N,); ``obs_delta`` is the (N, N, N) ordered
    distance tensor.
    """
    t = np.asarray(t, dtype=float).reshape(-1, 3)
    n = len(t)
    w = np.where(_validity_mask(n), obs_delta - _theta(t), 0.0)
    w = np.nan_to_num(w)
    return float(np.sum(w * w))


def residual_tensor(t: np.ndarray, obs_delta: np.ndarray) -> np.ndarray:
    """w_ijk = delta_ijk - theta_ijk(t), zero at invalid/missing entries."""
    t = np.asarray(t, dtype=float).reshape(-1, 3)
    n = len(t)
    w = np.where(_validity_mask(n), obs_delta - _theta(t), 0.0)
    return np.nan_to_num(w)


def gradient(
    t: np.ndarray, obs_delta: np.ndarray, anchor_mask: np.ndarray | None = None
) -> np.ndarray:
    """Analytic gradient of the square error, (N, 3).

    Per node h:
        g_h = 2 * sum_{i != h, j not in {i, h}} (w_hij + w_ihj)(u_hi - u_hj)
                                              - w_ijh (u_hi + u_hj)
    with w = delta - theta and u the versor field of t.  Anchor rows are
    forced to zero so anchors never move.
    """
    t = np.asarray(t, dtype=float).reshape(-1, 3)
    w = residual_tensor(t, obs_delta)
    u = versors(t)
    a = w + w.transpose(1, 0, 2)  # a[h, i, j] = w[h, i, j] + w[i, h, j]
    g = 2.0 * (
        np.einsum("hij,hix->hx", a, u)
        - np.einsum("hij,hjx->hx", a, u)
        - np.einsum("ijh,hix->hx", w, u)
        - np.einsum("ijh,hjx->hx", w, u)
    )
    if anchor_mask is not None:
        g[np.asarray(anchor_mask, dtype=bool)] = 0.0
    return g


def noise_floor(n: int, grid: OtfsGridConfig) -> float:
    """Expected square error at the true configuration under quantization:
    E_b = N(N-1)(N-2) * step^2 / 12."""
    return n * (n - 1) * (n - 2) * grid.distance_step**2 / 12.0


@dataclass
class GdResult:
    positions: np.ndarray  # (N, 3)
    error: float
    iterations: int
    history: list | None = None  # per-iteration (N, 3) iterates when recorded


def gd_minimize(
    obs_delta: np.ndarray,
    t0: np.ndarray,
    anchor_mask: np.ndarray,
    anchor_positions: np.ndarray,
    cfg: GdConfig,
    record_history: bool = False,
    trace_stream=None,
) -> GdResult:
    """Minimize the square error from ``t0`` with anchors clamped.

    Stops when the relative error change drops below ``cfg.epsilon`` while
    the error has not increased over the last three steps (Barzilai-Borwein
    steps are non-monotone, so a plain relative-change test can trigger on
    an oscillation), or after ``cfg.max_iterations``.  Returns the last
    iterate.  ``trace_stream`` receives one "iteration error step" line per
    step when given.
    """
    anchor_mask = np.asarray(anchor_mask, dtype=bool)
    t = np.asarray(t0, dtype=float).reshape(-1, 3).copy()
    t[anchor_mask] = anchor_positions
    history = [t.copy()] if record_history else None

    err = square_error(t, obs_delta)
    if not np.isfinite(err):
        raise NumericalError("square error is not finite at the initial point")
    errors = [err]
    t_prev = None
    g_prev = None

    for alpha in range(cfg.max_iterations):
        g = gradient(t, obs_delta, anchor_mask)
        if not np.isfinite(g).all():
            raise NumericalError(f"gradient not finite at iteration {alpha}")

        step = cfg.gamma0
        if cfg.step_rule == "bb" and t_prev is not None:
            dt = (t - t_prev).ravel()
            dg = (g - g_prev).ravel()
            denom = float(dt @ dg)
            if denom > 0.0:
                step = float(np.clip(dt @ dt / denom, cfg.step_min, cfg.step_max))

        t_prev, g_prev = t, g
        t = t - step * g
        if record_history:
            history.append(t.copy())

        err = square_error(t, obs_delta)
        if not np.isfinite(err):
            raise NumericalError(f"square error not finite at iteration {alpha + 1}")
        errors.append(err)
        if trace_stream is not None:
            trace_stream.write(f"{alpha + 1} {err:.8e} {step:.8e}\n")

        if err == 0.0:
            break
        prev = errors[-2]
        if prev > 0.0 and abs(err - prev) / prev < cfg.epsilon:
            if len(errors) >= 4 and err <= errors[-4]:
                break

    return GdResult(t, errors[-1], len(errors) - 1, history)


@dataclass
class RestartResult:
    positions: np.ndarray
    error: float
    accepted: bool
    attempts: int
    threshold: float
    iterations: int


def solve_with_restarts(
    obs_delta: np.ndarray,
    anchor_mask: np.ndarray,
    anchor_positions: np.ndarray,
    cfg: GdConfig,
    grid: OtfsGridConfig,
    rng: np.random.Generator,
    init: np.ndarray | None = None,
    prior_mean: float = 500.0,
    prior_std: float = 1000.0 / np.sqrt(12.0),
) -> RestartResult:
    """Run gd_minimize until the residual clears the beta*E_b acceptance
    threshold, redrawing the starting point on every rejection.

    The first attempt starts from ``init`` when given (warm start),
    otherwise from a fresh Gaussian draw with the scenario prior; all
    retries use fresh draws.  On budget exhaustion the best attempt is
    returned with ``accepted=False``.
    """
    anchor_mask = np.asarray(anchor_mask, dtype=bool)
    n = len(anchor_mask)
    threshold = cfg.beta * noise_floor(n, grid)

    best = None
    attempts = 0
    for attempt in range(cfg.max_restarts + 1):
        if attempt == 0 and init is not None:
            t0 = np.asarray(init, dtype=float).reshape(-1, 3).copy()
        else:
            t0 = rng.normal(prior_mean, prior_std, size=(n, 3))
        attempts += 1
        try:
            res = gd_minimize(obs_delta, t0, anchor_mask, anchor_positions, cfg)
        except NumericalError:
            continue
        if best is None or res.error < best.error:
            best = res
        if res.error <= threshold:
            return RestartResult(
                res.positions, res.error, True, attempts, threshold, res.iterations
            )
    if best is None:
        raise NumericalError("all restart attempts diverged")
    return RestartResult(
        best.positions, best.error, False, attempts, threshold, best.iterations
    )
