"""Joint Cramer-Rao lower bounds on position and velocity estimates.

The Fisher information matrix over the 6*N_free unknowns (stacked
non-anchor positions, then velocities) has the block form

    F = [ C_eta D_pp + C_zeta V_pp + C_p I      C_zeta V_pv ]
        [ C_zeta V_pv^T                         C_zeta V_vv + C_v I ]

where the D/V blocks are prior expectations of Jacobian outer-product sums
over all observation triples, and C_x = 1/sigma_x^2 for the Gaussian
surrogates of the quantization errors (matched variance: sigma = step /
sqrt(12)) and for the Gaussian position/velocity priors.  The expectations
are estimated by Monte-Carlo over prior draws; the bound on each parameter
is the corresponding diagonal entry of F^{-1}, averaged per component.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import GeometryError, ScenarioConfig, sample_scenario
from .measurement import OtfsGridConfig, pairwise_distances, versors
from .velocity import build_design, velocity_triples


@dataclass(frozen=True)
class CrlbConfig:
    """Monte-Carlo sample count and the noise/prior standard deviations."""

    samples: int = 200
    sigma_distance: float = 1.0  # m, Gaussian surrogate of delay quantization
    sigma_velocity: float = 1.0  # m/s, surrogate of Doppler quantization
    prior_pos_std: float = 1000.0 / np.sqrt(12.0)
    prior_vel_std: float = 10.0
    prior_pos_mean: float = 500.0

    def __post_init__(self):
        for name in ("sigma_distance", "sigma_velocity", "prior_pos_std", "prior_vel_std"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")
        if self.samples < 1:
            raise ValueError("samples must be >= 1")

    @classmethod
    def from_grid(
        cls,
        grid: OtfsGridConfig,
        samples: int = 200,
        prior_pos_std: float = 1000.0 / np.sqrt(12.0),
        prior_vel_std: float = 10.0,
        prior_pos_mean: float = 500.0,
    ) -> "CrlbConfig":
        return cls(
            samples=samples,
            sigma_distance=grid.distance_step / np.sqrt(12.0),
            sigma_velocity=grid.velocity_step / np.sqrt(12.0),
            prior_pos_std=prior_pos_std,
            prior_vel_std=prior_vel_std,
            prior_pos_mean=prior_pos_mean,
        )


@dataclass
class FisherMatrix:
    """Assembled information matrix with its block structure retained."""

    matrix: np.ndarray  # (6*N_free, 6*N_free)
    n_free: int
    d_pp: np.ndarray
    v_pp: np.ndarray
    v_pv: np.ndarray
    v_vv: np.ndarray


def _position_triples(n: int) -> np.ndarray:
    """(i, j != i, k not in {i, j}): the distance-observation index set."""
    return np.array(
        [
            (i, j, k)
            for i in range(n)
            for j in range(n)
            if j != i
            for k in range(n)
            if k != i and k != j
        ],
        dtype=int,
    )


def delta_position_jacobian(
    positions: np.ndarray, i: int, j: int, k: int, free_ids: np.ndarray
) -> np.ndarray:
    """d(delta_ijk)/d(stacked free positions): nonzero blocks
    u_ik - u_ij at slot i, u_jk - u_ji at slot j, u_ki + u_kj at slot k
    (anchor slots dropped)."""
    positions = np.asarray(positions, dtype=float).reshape(-1, 3)
    n = len(positions)
    dm = pairwise_distances(positions)
    off = ~np.eye(n, dtype=bool)
    if dm[off].min() < 1e-12:
        raise GeometryError("coincident positions")
    u = versors(positions)
    full = np.zeros((n, 3))
    full[i] = u[i, k] - u[i, j]
    full[j] = u[j, k] - u[j, i]
    full[k] = u[k, i] + u[k, j]
    return full[np.asarray(free_ids, dtype=int)].reshape(-1)


def omega_jacobians(
    positions: np.ndarray,
    velocities: np.ndarray,
    i: int,
    j: int,
    k: int,
    free_ids: np.ndarray,
):
    """(d omega_ijk/d p_free, d omega_ijk/d v_free) as flat vectors.

    The velocity Jacobian is the corresponding design-matrix row; the
    position Jacobian follows from the versor derivative
    d(u_ab)/d(p_a) = (I - u u^T)/|p_a - p_b|.
    """
    positions = np.asarray(positions, dtype=float).reshape(-1, 3)
    velocities = np.asarray(velocities, dtype=float).reshape(-1, 3)
    free_ids = np.asarray(free_ids, dtype=int)
    m = _versor_velocity_gradients(positions, velocities)
    n = len(positions)
    jp = np.zeros((n, 3))
    if k == j:
        jp[j] = m[j, i]
        jp[i] = -m[j, i]
    else:
        jp[j] = m[j, k]
        jp[k] = -m[j, k] + m[k, i]
        jp[i] = -m[k, i]

    u = versors(positions)
    jv = np.zeros((n, 3))
    if k == j:
        jv[j] = u[j, i]
        jv[i] = -u[j, i]
    else:
        jv[j] = u[j, k]
        jv[k] = u[k, i] - u[j, k]
        jv[i] = -u[k, i]
    return jp[free_ids].reshape(-1), jv[free_ids].reshape(-1)


def _versor_velocity_gradients(positions: np.ndarray, velocities: np.ndarray):
    """m[a, b] = (I - u_ab u_ab^T)(v_a - v_b)/|p_a - p_b|, the gradient of
    (v_a - v_b)^T u_ab with respect to p_a (and its negative w.r.t. p_b)."""
    u = versors(positions)
    dist = pairwise_distances(positions)
    n = len(positions)
    safe = np.where(dist > 1e-12, dist, 1.0)
    dv = velocities[:, None, :] - velocities[None, :, :]
    proj = np.einsum("abx,abx->ab", dv, u)
    m = (dv - proj[:, :, None] * u) / safe[:, :, None]
    m[dist <= 1e-12] = 0.0
    m[np.eye(n, dtype=bool)] = 0.0
    return m


def _jacobian_matrices(positions, velocities, free_ids):
    """Stacked Jacobian rows for one swarm draw: distance rows over the
    position triples, radial-velocity rows over the velocity triples."""
    n = len(positions)
    u = versors(positions)
    m = _versor_velocity_gradients(positions, velocities)

    pt = _position_triples(n)
    rows = len(pt)
    jd = np.zeros((rows, n, 3))
    r = np.arange(rows)
    i_t, j_t, k_t = pt[:, 0], pt[:, 1], pt[:, 2]
    jd[r, i_t] = u[i_t, k_t] - u[i_t, j_t]
    jd[r, j_t] = u[j_t, k_t] - u[j_t, i_t]
    jd[r, k_t] = u[k_t, i_t] + u[k_t, j_t]
    j_delta = jd[:, free_ids, :].reshape(rows, -1)

    vt = velocity_triples(n)
    rows_v = len(vt)
    jp = np.zeros((rows_v, n, 3))
    rv = np.arange(rows_v)
    i_t, j_t, k_t = vt[:, 0], vt[:, 1], vt[:, 2]
    los = k_t == j_t
    nlos = ~los
    jp[rv[nlos], j_t[nlos]] += m[j_t[nlos], k_t[nlos]]
    jp[rv[nlos], k_t[nlos]] += -m[j_t[nlos], k_t[nlos]] + m[k_t[nlos], i_t[nlos]]
    jp[rv[nlos], i_t[nlos]] += -m[k_t[nlos], i_t[nlos]]
    jp[rv[los], j_t[los]] += m[j_t[los], i_t[los]]
    jp[rv[los], i_t[los]] += -m[j_t[los], i_t[los]]
    j_omega_p = jp[:, free_ids, :].reshape(rows_v, -1)

    anchor_mask = np.ones(n, dtype=bool)
    anchor_mask[free_ids] = False
    j_omega_v = build_design(positions, anchor_mask).matrix
    return j_delta, j_omega_p, j_omega_v


def fisher_matrix(
    cfg: CrlbConfig,
    scenario: ScenarioConfig,
    grid: OtfsGridConfig,
    seed,
) -> FisherMatrix:
    """Monte-Carlo assembly of the Fisher information matrix.

    Draws ``cfg.samples`` swarms from the scenario prior (anchors fixed),
    averages the Jacobian Gramians, and adds the noise and prior precision
    coefficients.
    """
    rng = np.random.default_rng(seed)
    a = scenario.anchor_count
    free_ids = np.arange(a, scenario.n)
    dim = 3 * len(free_ids)
    d_pp = np.zeros((dim, dim))
    v_pp = np.zeros((dim, dim))
    v_pv = np.zeros((dim, dim))
    v_vv = np.zeros((dim, dim))

    for _ in range(cfg.samples):
        swarm = sample_scenario(scenario, rng)
        j_delta, j_omega_p, j_omega_v = _jacobian_matrices(
            swarm.positions, swarm.velocities, free_ids
        )
        d_pp += j_delta.T @ j_delta
        v_pp += j_omega_p.T @ j_omega_p
        v_pv += j_omega_p.T @ j_omega_v
        v_vv += j_omega_v.T @ j_omega_v

    d_pp /= cfg.samples
    v_pp /= cfg.samples
    v_pv /= cfg.samples
    v_vv /= cfg.samples

    c_eta = 1.0 / cfg.sigma_distance**2
    c_zeta = 1.0 / cfg.sigma_velocity**2
    c_p = 1.0 / cfg.prior_pos_std**2
    c_v = 1.0 / cfg.prior_vel_std**2

    eye = np.eye(dim)
    top_left = c_eta * d_pp + c_zeta * v_pp + c_p * eye
    top_right = c_zeta * v_pv
    bottom_right = c_zeta * v_vv + c_v * eye
    matrix = np.block([[top_left, top_right], [top_right.T, bottom_right]])
    matrix = (matrix + matrix.T) / 2.0
    return FisherMatrix(matrix, len(free_ids), d_pp, v_pp, v_pv, v_vv)


@dataclass
class JointCrlb:
    position_var: float  # m^2 per component
    velocity_var: float  # (m/s)^2 per component
    degenerate: bool

    @property
    def position_rmse(self) -> float:
        return float(np.sqrt(self.position_var))

    @property
    def velocity_rmse(self) -> float:
        return float(np.sqrt(self.velocity_var))


def joint_crlb(fim: FisherMatrix) -> JointCrlb:
    """Average per-component bounds: means of the position and velocity
    diagonal blocks of F^{-1} (pseudo-inverse with a degeneracy flag when F
    is singular)."""
    dim = 3 * fim.n_free
    degenerate = False
    try:
        inv = np.linalg.inv(fim.matrix)
    except np.linalg.LinAlgError:
        inv = np.linalg.pinv(fim.matrix)
        degenerate = True
    diag = np.diag(inv)
    return JointCrlb(
        float(diag[:dim].mean()), float(diag[dim:].mean()), degenerate
    )
