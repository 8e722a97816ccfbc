"""Least-squares velocity recovery from map-ordered radial velocities.

Every radial-velocity observation is linear in the stacked velocities:

    omega_ijk = u_jk^T v_j + (u_ki - u_jk)^T v_k - u_ki^T v_i,

with the direct-path row (k == j) degenerating to u_ji^T (v_j - v_i).
Collecting one row per ordered triple (i, j != i, k != i) gives a design
matrix in the non-anchor velocity components; anchor contributions are
known and moved to the observation side.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import GeometryError
from .measurement import versors


def velocity_triples(n: int) -> np.ndarray:
    """Canonical (i, j, k) row order shared by the design matrix and the
    ordered observation vector: i, then j != i, then k != i (k == j kept)."""
    triples = [
        (i, j, k)
        for i in range(n)
        for j in range(n)
        if j != i
        for k in range(n)
        if k != i
    ]
    return np.array(triples, dtype=int)


@dataclass(frozen=True)
class VelocityDesign:
    """Reduced design: ``matrix`` is (N(N-1)^2, 3*N_free) over non-anchor
    velocity components; ``anchor_offset`` holds the known anchor-velocity
    contribution of each row, to be subtracted from the observations."""

    matrix: np.ndarray
    anchor_offset: np.ndarray
    free_ids: np.ndarray  # non-anchor node ids, column-block order

    @property
    def rows(self) -> int:
        return len(self.matrix)


def build_design(
    positions: np.ndarray,
    anchor_mask: np.ndarray,
    anchor_velocities: np.ndarray | None = None,
) -> VelocityDesign:
    """Assemble the velocity design matrix at the given positions.

    ``anchor_velocities`` supplies the known velocities of anchor nodes
    (default zero).  Raises GeometryError on coincident positions.
    """
    positions = np.asarray(positions, dtype=float).reshape(-1, 3)
    anchor_mask = np.asarray(anchor_mask, dtype=bool)
    n = len(positions)
    diff = positions[:, None, :] - positions[None, :, :]
    dist = np.linalg.norm(diff, axis=-1)
    off = ~np.eye(n, dtype=bool)
    if n > 1 and dist[off].min() < 1e-12:
        raise GeometryError("coincident positions in velocity design")
    u = versors(positions)

    triples = velocity_triples(n)
    rows = len(triples)
    coeff = np.zeros((rows, n, 3))
    r = np.arange(rows)
    i_t, j_t, k_t = triples[:, 0], triples[:, 1], triples[:, 2]

    los = k_t == j_t
    nlos = ~los
    # reflected path: v_j gets u_jk, v_k gets u_ki - u_jk, v_i gets -u_ki
    coeff[r[nlos], j_t[nlos]] += u[j_t[nlos], k_t[nlos]]
    coeff[r[nlos], k_t[nlos]] += u[k_t[nlos], i_t[nlos]] - u[j_t[nlos], k_t[nlos]]
    coeff[r[nlos], i_t[nlos]] -= u[k_t[nlos], i_t[nlos]]
    # direct path: (v_j - v_i)^T u_ji
    coeff[r[los], j_t[los]] += u[j_t[los], i_t[los]]
    coeff[r[los], i_t[los]] -= u[j_t[los], i_t[los]]

    free_ids = np.flatnonzero(~anchor_mask)
    matrix = coeff[:, free_ids, :].reshape(rows, 3 * len(free_ids))

    if anchor_velocities is None:
        anchor_offset = np.zeros(rows)
    else:
        anchor_velocities = np.asarray(anchor_velocities, dtype=float).reshape(-1, 3)
        anchor_ids = np.flatnonzero(anchor_mask)
        anchor_offset = np.einsum(
            "rax,ax->r", coeff[:, anchor_ids, :], anchor_velocities[anchor_ids]
        )
    return VelocityDesign(matrix, anchor_offset, free_ids)


@dataclass
class VelocityEstimate:
    velocities: np.ndarray  # (N_free, 3) in free_ids order
    free_ids: np.ndarray
    rank: int
    degenerate: bool
    residual_norm: float


def estimate_velocities(design: VelocityDesign, omega_star: np.ndarray) -> VelocityEstimate:
    """Least-squares solve of the reduced system.

    ``omega_star`` is the map-ordered observation vector aligned with
    :func:`velocity_triples`.  Rank deficiency yields the minimum-norm
    solution, flagged as degenerate.
    """
    omega_star = np.asarray(omega_star, dtype=float).ravel()
    if len(omega_star) != design.rows:
        raise ValueError(
            f"expected {design.rows} observations, got {len(omega_star)}"
        )
    rhs = omega_star - design.anchor_offset
    n_cols = design.matrix.shape[1]
    if n_cols == 0:
        return VelocityEstimate(
            np.zeros((0, 3)), design.free_ids, 0, False, float(np.linalg.norm(rhs))
        )
    sol, _, rank, _ = np.linalg.lstsq(design.matrix, rhs, rcond=None)
    residual = float(np.linalg.norm(design.matrix @ sol - rhs))
    return VelocityEstimate(
        sol.reshape(-1, 3), design.free_ids, int(rank), rank < n_cols, residual
    )
