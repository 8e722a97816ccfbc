"""Network assignment solver: recover the reflector-to-list-index maps from
the sorted channel profiles via loopy belief propagation.

The key redundancy is that echo excess distances of any four distinct nodes
(i, j, k, h) satisfy

    delta_ijk - delta_ijh + delta_ikh - delta_jhk = 0,

and the radial velocities satisfy

    omega_ijk + omega_ijh - omega_khi - omega_khj = 0.

Each such quadruple becomes a check node over four assignment variables
M_ijk (the list index of reflector k on link (i, j)); the check likelihood
is the density of the sum of four independent quantization errors, an
Irwin-Hall(4) kernel.  Flooding-schedule message passing over this graph
yields per-variable marginals; a greedy decoder then extracts one bijective
map per link.  The graph has 4-cycles, so the usual loopy caveats apply.

List index 0 of every link is pinned to the line-of-sight path (the zero
entry of the sorted distance list), so the solved variables range over list
indices 1..N-2 only.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass

import numpy as np

from .measurement import AssignmentMaps, ChannelLists, OtfsGridConfig

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class BpConfig:
    """Message-passing controls.

    ``iterations`` is the number of full check/variable rounds; ``damping``
    mixes a fraction of the previous variable message into the new one
    (0 reproduces plain flooding); ``message_floor`` clips normalized
    messages away from exact zero for numerical robustness.
    """

    iterations: int = 2
    use_doppler_checks: bool = False
    damping: float = 0.0
    message_floor: float = 1e-12

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not 0.0 <= self.damping < 1.0:
            raise ValueError("damping must be in [0, 1)")


@dataclass(frozen=True)
class NoiseKernel:
    """Density of the sum of 4 i.i.d. uniform errors on [-step/2, step/2]:
    an Irwin-Hall(4) density rescaled to support [-2*step, 2*step]."""

    step: float

    def __post_init__(self):
        if self.step <= 0:
            raise ValueError("kernel step must be > 0")


def kernel_eval(kernel: NoiseKernel, z):
    """Evaluate the quadruple-error density at ``z`` (vectorized).

    Piecewise cubic, symmetric, maximal value 2/(3*step) at 0 and zero
    outside [-2*step, 2*step].
    """
    s = kernel.step
    x = np.asarray(z, dtype=float) / s + 2.0
    out = np.zeros_like(x)
    for k, coeff in enumerate((1.0, -4.0, 6.0, -4.0, 1.0)):
        t = x - k
        out += coeff * np.where(t > 0.0, t, 0.0) ** 3
    out /= 6.0 * s
    out = np.where((x < 0.0) | (x > 4.0), 0.0, out)
    return float(out) if out.ndim == 0 else np.maximum(out, 0.0)


@dataclass(frozen=True)
class MarginalTensor:
    """Beliefs pi[i, j, k, m]: probability that the path reflected by node k
    sits at index m of the sorted lists of link (i, j).

    The LoS column is pinned: pi[i, j, j, 0] = 1 and pi[i, j, k, 0] = 0 for
    k not in {i, j}.  Rows with i == j or k == i are zero (undefined).
    """

    probs: np.ndarray
    underflow_resets: int = 0

    @property
    def n(self) -> int:
        return len(self.probs)


# ---------------------------------------------------------------------------
# Factor graph construction
# ---------------------------------------------------------------------------


def variable_index(n: int):
    """Compact index over distinct triples (i, j, k).

    Returns (index array (n,n,n) with -1 at invalid entries, triple list
    (nT, 3)).
    """
    idx = np.full((n, n, n), -1, dtype=int)
    triples = []
    for i, j, k in itertools.permutations(range(n), 3):
        idx[i, j, k] = len(triples)
        triples.append((i, j, k))
    return idx, np.array(triples)


def delay_check_quads(n: int) -> np.ndarray:
    """All distinct quadruples (i, j, k, h); the delay check on a quadruple
    touches the variables (i,j,k), (i,j,h), (i,k,h), (j,h,k)."""
    return np.array(list(itertools.permutations(range(n), 4)), dtype=int)


def delay_check_neighbors(quads: np.ndarray, var_idx: np.ndarray) -> np.ndarray:
    i, j, k, h = quads.T
    return np.stack(
        [var_idx[i, j, k], var_idx[i, j, h], var_idx[i, k, h], var_idx[j, h, k]],
        axis=1,
    )


def doppler_check_neighbors(quads: np.ndarray, var_idx: np.ndarray) -> np.ndarray:
    """Doppler checks touch (i,j,k), (i,j,h), (k,h,i), (k,h,j)."""
    i, j, k, h = quads.T
    return np.stack(
        [var_idx[i, j, k], var_idx[i, j, h], var_idx[k, h, i], var_idx[k, h, j]],
        axis=1,
    )


def _delay_check_tensors(lists: ChannelLists, quads, kernel: NoiseKernel):
    """G[q, m, n, s, t] = kernel(d_ij[m'] - d_ij[n'] + d_ik[s'] - d_jh[t'])
    over the non-LoS domain (primed indices offset by 1), zeroed at m == n
    (the two variables share link (i, j) and cannot collide)."""
    n = lists.n
    d = n - 2  # domain size: list indices 1..n-2
    i, j, k, h = quads.T
    dij = lists.distances[i, j, 1:]  # (nQ, d)
    dik = lists.distances[i, k, 1:]
    djh = lists.distances[j, h, 1:]
    z = (
        dij[:, :, None, None, None]
        - dij[:, None, :, None, None]
        + dik[:, None, None, :, None]
        - djh[:, None, None, None, :]
    )
    g = kernel_eval(kernel, z)
    eye = np.eye(d, dtype=bool)
    g[:, eye] = 0.0
    return g


def _doppler_check_tensors(lists: ChannelLists, quads, kernel: NoiseKernel):
    """G[q, m, n, s, t] = kernel(v_ij[m'] + v_ij[n'] - v_kh[s'] - v_kh[t'])
    zeroed at m == n and s == t (same-link collisions)."""
    n = lists.n
    d = n - 2
    i, j, k, h = quads.T
    vij = lists.velocities[i, j, 1:]
    vkh = lists.velocities[k, h, 1:]
    w = (
        vij[:, :, None, None, None]
        + vij[:, None, :, None, None]
        - vkh[:, None, None, :, None]
        - vkh[:, None, None, None, :]
    )
    g = kernel_eval(kernel, w)
    eye = np.eye(d, dtype=bool)
    g[:, eye] = 0.0
    g[:, :, :, eye] = 0.0
    return g


# ---------------------------------------------------------------------------
# Message passing
# ---------------------------------------------------------------------------


@dataclass
class BpResult:
    """Raw solver state exposed for diagnostics and structural tests."""

    beliefs: np.ndarray  # (nT, d) over non-LoS list indices
    var_triples: np.ndarray  # (nT, 3)
    check_neighbors: np.ndarray  # (nChecks, 4) variable ids, both families
    check_to_var: np.ndarray  # (nEdges, d) final check-to-variable messages
    var_to_check: np.ndarray  # (nEdges, d) final variable-to-check messages
    underflow_resets: int = 0


def _normalize_rows(msgs: np.ndarray, floor: float):
    """Normalize message rows to sum 1; all-zero rows become uniform.
    Returns (normalized, number_of_reset_rows)."""
    d = msgs.shape[1]
    totals = msgs.sum(axis=1)
    dead = totals <= 0.0
    resets = int(dead.sum())
    if resets:
        msgs[dead] = 1.0
        totals[dead] = float(d)
    msgs /= totals[:, None]
    if floor > 0.0:
        np.maximum(msgs, floor, out=msgs)
        msgs /= msgs.sum(axis=1, keepdims=True)
    return msgs, resets


def _check_messages(g: np.ndarray, lam: np.ndarray) -> np.ndarray:
    """Messages from each check to its 4 neighbors: marginalize the kernel
    tensor against the other three incoming variable messages.

    ``lam`` has shape (nQ, 4, d); returns the same shape.
    """
    l0, l1, l2, l3 = lam[:, 0], lam[:, 1], lam[:, 2], lam[:, 3]
    z0 = np.einsum("qmnst,qn,qs,qt->qm", g, l1, l2, l3, optimize=True)
    z1 = np.einsum("qmnst,qm,qs,qt->qn", g, l0, l2, l3, optimize=True)
    z2 = np.einsum("qmnst,qm,qn,qt->qs", g, l0, l1, l3, optimize=True)
    z3 = np.einsum("qmnst,qm,qn,qs->qt", g, l0, l1, l2, optimize=True)
    return np.stack([z0, z1, z2, z3], axis=1)


def run_belief_propagation(
    lists: ChannelLists, grid: OtfsGridConfig, cfg: BpConfig
) -> BpResult:
    """Flooding-schedule BP over the quadruple-check factor graph.

    Each round updates all check-to-variable messages, then all
    variable-to-check messages; products of incoming messages are taken in
    log space, and any all-zero message (kernel support exhausted) is reset
    to uniform and counted.
    """
    n = lists.n
    d = n - 2
    var_idx, triples = variable_index(n)
    n_vars = len(triples)

    families = []
    quads = delay_check_quads(n)
    if len(quads):
        families.append(
            (
                _delay_check_tensors(lists, quads, NoiseKernel(grid.distance_step)),
                delay_check_neighbors(quads, var_idx),
            )
        )
        if cfg.use_doppler_checks:
            families.append(
                (
                    _doppler_check_tensors(
                        lists, quads, NoiseKernel(grid.velocity_step)
                    ),
                    doppler_check_neighbors(quads, var_idx),
                )
            )

    if not families:
        # Fewer than 4 nodes: no checks, beliefs stay uniform.
        beliefs = np.full((n_vars, max(d, 1)), 1.0 / max(d, 1))
        return BpResult(
            beliefs, triples, np.empty((0, 4), dtype=int),
            np.empty((0, max(d, 1))), np.empty((0, max(d, 1))),
        )

    check_neighbors = np.concatenate([nb for _, nb in families], axis=0)
    edge_var = check_neighbors.reshape(-1)  # edge order: check-major, 4 slots
    n_edges = len(edge_var)

    lam = np.full((n_edges, d), 1.0 / d)
    zeta = np.empty((n_edges, d))
    resets = 0

    for _ in range(cfg.iterations):
        # check -> variable
        offset = 0
        for g, nb in families:
            n_q = len(nb)
            block = slice(offset, offset + 4 * n_q)
            lam_q = lam[block].reshape(n_q, 4, d)
            zeta[block] = _check_messages(g, lam_q).reshape(4 * n_q, d)
            offset += 4 * n_q
        zeta, r = _normalize_rows(zeta, cfg.message_floor)
        resets += r

        # variable -> check: leave-one-out product of incoming messages,
        # done in log space with explicit bookkeeping of exact zeros.
        with np.errstate(divide="ignore"):
            log_zeta = np.where(zeta > 0.0, np.log(np.maximum(zeta, 1e-300)), 0.0)
        zero_in = zeta <= 0.0
        log_sum = np.zeros((n_vars, d))
        zero_cnt = np.zeros((n_vars, d), dtype=int)
        np.add.at(log_sum, edge_var, log_zeta)
        np.add.at(zero_cnt, edge_var, zero_in)

        loo_log = log_sum[edge_var] - log_zeta
        loo_zeros = zero_cnt[edge_var] - zero_in
        shift = np.where(loo_zeros == 0, loo_log, -np.inf).max(axis=1, keepdims=True)
        shift = np.where(np.isfinite(shift), shift, 0.0)
        new_lam = np.where(loo_zeros == 0, np.exp(loo_log - shift), 0.0)
        new_lam, r = _normalize_rows(new_lam, cfg.message_floor)
        resets += r
        if cfg.damping > 0.0:
            new_lam = (1.0 - cfg.damping) * new_lam + cfg.damping * lam
        lam = new_lam

    # beliefs: normalized product of all incoming check messages
    with np.errstate(divide="ignore"):
        log_zeta = np.where(zeta > 0.0, np.log(np.maximum(zeta, 1e-300)), 0.0)
    zero_in = zeta <= 0.0
    log_sum = np.zeros((n_vars, d))
    zero_cnt = np.zeros((n_vars, d), dtype=int)
    np.add.at(log_sum, edge_var, log_zeta)
    np.add.at(zero_cnt, edge_var, zero_in)
    shift = np.where(zero_cnt == 0, log_sum, -np.inf).max(axis=1, keepdims=True)
    shift = np.where(np.isfinite(shift), shift, 0.0)
    beliefs = np.where(zero_cnt == 0, np.exp(log_sum - shift), 0.0)
    beliefs, r = _normalize_rows(beliefs, cfg.message_floor)
    resets += r
    if resets:
        logger.warning("belief propagation reset %d underflowed messages", resets)

    return BpResult(beliefs, triples, check_neighbors, zeta, lam, resets)


def compute_marginals(
    lists: ChannelLists, grid: OtfsGridConfig, cfg: BpConfig
) -> MarginalTensor:
    """Run BP and assemble the full marginal tensor with the pinned LoS
    column (index 0 belongs to reflector j with probability 1)."""
    n = lists.n
    probs = np.zeros((n, n, n, n - 1))
    for i in range(n):
        for j in range(n):
            if i != j:
                probs[i, j, j, 0] = 1.0
    if n >= 4:
        result = run_belief_propagation(lists, grid, cfg)
        idx = result.var_triples
        probs[idx[:, 0], idx[:, 1], idx[:, 2], 1:] = result.beliefs
        resets = result.underflow_resets
    else:
        # Single non-LoS reflector per link: its index is forced.
        resets = 0
        for i in range(n):
            for j in range(n):
                for k in range(n):
                    if i != j and k != i and k != j:
                        probs[i, j, k, 1] = 1.0
    return MarginalTensor(probs, resets)


# ---------------------------------------------------------------------------
# Decoding
# ---------------------------------------------------------------------------


def dump_marginals(marginals: MarginalTensor, stream) -> None:
    """Write beliefs as text for debugging: one line per (link, reflector)
    with the probability of every list index."""
    n = marginals.n
    stream.write(f"# marginals for {n} nodes; rows: i j k p(m=0) ... p(m={n - 2})\n")
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            for k in range(n):
                if k == i:
                    continue
                row = " ".join(f"{p:.6e}" for p in marginals.probs[i, j, k])
                stream.write(f"{i} {j} {k} {row}\n")


def estimate_maps(marginals: MarginalTensor) -> AssignmentMaps:
    """Greedy decode of the marginals into one bijection per link.

    Repeatedly take the largest remaining belief entry of the (reflector,
    index) matrix, fix that association, and zero its row and column; ties
    (including all-zero remainders) resolve to the lowest (k, m) in
    lexicographic order, so the result is always a bijection.
    """
    n = marginals.n
    index_of = np.full((n, n, n), -1, dtype=int)
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            pi = marginals.probs[i, j].copy()  # (n, n-1)
            pi[i, :] = -1.0  # row k == i is not a valid reflector
            for _ in range(n - 1):
                flat = int(np.argmax(pi))  # first maximum: lowest (k, m)
                k_sel, m_sel = divmod(flat, n - 1)
                index_of[i, j, k_sel] = m_sel
                pi[k_sel, :] = -1.0
                pi[:, m_sel] = -1.0
    return AssignmentMaps(index_of)


# ---------------------------------------------------------------------------
# Exhaustive oracle
# ---------------------------------------------------------------------------

BRUTE_FORCE_MAX_N = 5


def brute_force_maps(
    lists: ChannelLists, grid: OtfsGridConfig, use_doppler_checks: bool = False
) -> AssignmentMaps:
    """Exact joint maximum-likelihood maps over all per-link permutations,
    scored by the product of check-node kernels.

    The joint space is searched by depth-first branch and bound over links:
    checks are scored as soon as all their links are assigned, and a prefix
    is abandoned when its score plus an optimistic bound on the unscored
    checks cannot beat the incumbent.  Exact, but exponential in the worst
    case; refuses swarms larger than BRUTE_FORCE_MAX_N nodes.
    """
    n = lists.n
    if n > BRUTE_FORCE_MAX_N:
        raise ValueError(f"brute force limited to N <= {BRUTE_FORCE_MAX_N}, got {n}")
    if n < 3:
        raise ValueError("need at least 3 nodes")

    pairs = [(i, j) for i in range(n) for j in range(n) if i != j]
    pair_pos = {p: idx for idx, p in enumerate(pairs)}
    free = {
        (i, j): [k for k in range(n) if k != i and k != j] for (i, j) in pairs
    }
    slot = {
        p: {k: s for s, k in enumerate(free[p])} for p in pairs
    }
    perms = np.array(list(itertools.permutations(range(1, n - 1))), dtype=int)
    n_perm = len(perms)

    # Score tables: each check keyed by the pair-order positions it needs.
    checks = []  # (ready_depth, pair_positions tuple, table)
    with np.errstate(divide="ignore"):
        if n >= 4:
            kd = NoiseKernel(grid.distance_step)
            kv = NoiseKernel(grid.velocity_step)
            for i, j, k, h in itertools.permutations(range(n), 4):
                pa, pb, pc = (i, j), (i, k), (j, h)
                m = perms[:, slot[pa][k]]
                nn = perms[:, slot[pa][h]]
                s = perms[:, slot[pb][h]]
                t = perms[:, slot[pc][k]]
                z = (
                    lists.distances[i, j][m][:, None, None]
                    - lists.distances[i, j][nn][:, None, None]
                    + lists.distances[i, k][s][None, :, None]
                    - lists.distances[j, h][t][None, None, :]
                )
                table = np.log(kernel_eval(kd, z))
                positions = (pair_pos[pa], pair_pos[pb], pair_pos[pc])
                checks.append((max(positions), positions, table))
                if use_doppler_checks:
                    pd = (k, h)
                    s2 = perms[:, slot[pd][i]]
                    t2 = perms[:, slot[pd][j]]
                    w = (
                        lists.velocities[i, j][m][:, None]
                        + lists.velocities[i, j][nn][:, None]
                        - lists.velocities[k, h][s2][None, :]
                        - lists.velocities[k, h][t2][None, :]
                    )
                    wtable = np.log(kernel_eval(kv, w))
                    positions = (pair_pos[pa], pair_pos[pd])
                    checks.append((max(positions), positions, wtable))

    by_depth = [[] for _ in range(len(pairs))]
    for ready, positions, table in checks:
        by_depth[ready].append((positions, table))

    # Optimistic bound: best achievable score of all checks not yet ready.
    depth_max = np.zeros(len(pairs) + 1)
    for depth in range(len(pairs) - 1, -1, -1):
        best_here = sum(
            float(np.max(table)) for _, table in by_depth[depth]
        )
        depth_max[depth] = depth_max[depth + 1] + best_here

    best_score = -np.inf
    best_assign = None
    assign = np.zeros(len(pairs), dtype=int)

    def dfs(depth: int, score: float):
        nonlocal best_score, best_assign
        if depth == len(pairs):
            if score > best_score:
                best_score = score
                best_assign = assign.copy()
            return
        for p in range(n_perm):
            assign[depth] = p
            inc = 0.0
            for positions, table in by_depth[depth]:
                inc += float(table[tuple(assign[pos] for pos in positions)])
                if inc == -np.inf:
                    break
            new_score = score + inc
            if new_score + depth_max[depth + 1] <= best_score:
                continue
            dfs(depth + 1, new_score)

    dfs(0, 0.0)
    if best_assign is None:
        # Every configuration has zero likelihood; fall back to the
        # lexicographically first assignment (still a valid bijection).
        best_assign = np.zeros(len(pairs), dtype=int)

    index_of = np.full((n, n, n), -1, dtype=int)
    for idx, (i, j) in enumerate(pairs):
        index_of[i, j, j] = 0
        perm = perms[best_assign[idx]]
        for s, k in enumerate(free[(i, j)]):
            index_of[i, j, k] = perm[s]
    return AssignmentMaps(index_of)
