"""Solvers for the alpha-fair power allocation problem.

Two oracles over the box [p_min, p_max]^N:

* ``solve_grid`` enumerates a Cartesian product of per-UE log-spaced power
  grids. Exhaustive, deterministic, the ground truth at small N.
* ``solve_gradient`` runs multi-start projected gradient ascent in
  log-power coordinates u = ln p with an analytic gradient and a
  backtracking line search. Near-optimal at medium N, much cheaper.

Both recompute the reported fairness from the returned powers, so the
result is always self-consistent with the network model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .net_model import (
    FairnessSpec,
    PowerVector,
    SystemParams,
    Topology,
    alpha_fairness,
    alpha_fairness_batch,
    compute_rates,
    compute_rates_batch,
)

GRID_BUDGET = 10 ** 7
ARMIJO_C = 1e-4
MAX_ITERS = 200
_LN2 = math.log(2.0)


@dataclass(frozen=True)
class SolveResult:
    powers: PowerVector
    fairness: float
    solver_tag: str
    evaluations: int
    converged: bool = True


def evaluate_powers(topology: Topology, params: SystemParams, spec: FairnessSpec,
                    p: np.ndarray) -> float:
    return alpha_fairness(compute_rates(topology, p, params), spec)


def objective_and_gradient(topology: Topology, params: SystemParams,
                           spec: FairnessSpec, u: np.ndarray):
    """Fairness and its gradient with respect to u = ln p.

    Closed form: with SINR s_i = p_i h_{i,b_i} / D_i and
    t_i = r_i^(-alpha) / (ln 2 * (1 + s_i)),

        dF/dp_k = t_k h_{k,b_k} / D_k - sum_{i != k} t_i s_i h_{k,b_i} / D_i

    and the interference sum groups by serving BS, so it costs O(N*B).
    The log-coordinate gradient is dF/du_k = p_k * dF/dp_k.
    """
    p = np.exp(np.asarray(u, dtype=float))
    h_own = topology.serving_gains
    received = topology.gains.T @ p
    own = p * h_own
    denom = received[topology.assoc] - own + params.sigma2
    s = own / denom
    r = np.log2(1.0 + s)
    a = spec.alpha
    if a == 1.0:
        df_dr = 1.0 / r
        value = float(np.sum(np.log(r)))
    else:
        df_dr = r ** (-a)
        value = float(np.sum(r ** (1.0 - a)) / (1.0 - a))
    t = df_dr / (_LN2 * (1.0 + s))
    g = t * s / denom
    g_by_bs = np.bincount(topology.assoc, weights=g, minlength=topology.n_bs)
    dF_dp = t * h_own / denom - topology.gains @ g_by_bs + g * h_own
    return value, p * dF_dp


def solve_grid(topology: Topology, params: SystemParams, spec: FairnessSpec,
               levels_per_ue: int = 32, chunk: int = 1 << 16) -> SolveResult:
    """Exhaustive search over log-spaced per-UE power grids.

    Ties break toward the lexicographically smallest grid index (UE 0 most
    significant), which the C-order enumeration delivers for free.
    """
    n = topology.n_ue
    if levels_per_ue < 2:
        raise ValueError("need at least 2 levels per UE")
    total = levels_per_ue ** n
    if total > GRID_BUDGET:
        raise ValueError(
            f"{levels_per_ue}^{n} = {total} grid points exceeds the "
            f"{GRID_BUDGET} budget")
    grid = np.geomspace(params.p_min, params.p_max, levels_per_ue)
    shape = (levels_per_ue,) * n
    best_val = -math.inf
    best_flat = 0
    for start in range(0, total, chunk):
        flat = np.arange(start, min(start + chunk, total))
        idx = np.unravel_index(flat, shape)
        powers = grid[np.stack(idx, axis=1)]
        vals = alpha_fairness_batch(
            compute_rates_batch(topology, powers, params), spec)
        k = int(np.argmax(vals))
        if vals[k] > best_val:
            best_val = float(vals[k])
            best_flat = int(flat[k])
    best_idx = np.unravel_index(best_flat, shape)
    p_best = grid[np.array(best_idx)]
    pv = PowerVector(p_best, params.p_min, params.p_max)
    return SolveResult(pv, evaluate_powers(topology, params, spec, pv.p),
                       "exhaustive_grid", total)


def _ascend(topology, params, spec, u0, lo, hi, max_iters):
    """Projected gradient ascent from one start; returns (u, F, evals, converged)."""
    u = np.clip(u0, lo, hi)
    value, grad = objective_and_gradient(topology, params, spec, u)
    evals = 1
    converged = False
    for _ in range(max_iters):
        step = 1.0
        accepted = False
        while step >= 1e-12:
            u_new = np.clip(u + step * grad, lo, hi)
            move = u_new - u
            slope = float(grad @ move)
            if slope <= 0.0:
                break  # fully blocked by the box: stationary
            v_new, g_new = objective_and_gradient(topology, params, spec, u_new)
            evals += 1
            if v_new >= value + ARMIJO_C * slope:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            converged = True
            break
        improvement = v_new - value
        u, value, grad = u_new, v_new, g_new
        if improvement <= 1e-11 * (1.0 + abs(value)):
            converged = True
            break
    return u, value, evals, converged


def solve_gradient(topology: Topology, params: SystemParams, spec: FairnessSpec,
                   starts: int = 8, seed: int = 0, extra_starts=None,
                   max_iters: int = MAX_ITERS) -> SolveResult:
    """Best of several projected gradient ascents in u = ln p.

    Start points: `starts` uniform draws in the log-power box, the two
    corners (all p_min, all p_max), plus any `extra_starts` power vectors
    (used by callers to warm-start from a coarse grid solution). At N <= 4
    the N single-UE corners (one UE at p_max, the rest at p_min) are added
    as well: mid-alpha optima often suppress all but one UE, and ascents
    from the uniform or full corners can settle in the wrong one-hot basin.
    The winner is the highest fairness; ties keep the earliest start.
    """
    if starts < 1:
        raise ValueError("need starts >= 1")
    n = topology.n_ue
    lo = math.log(params.p_min)
    hi = math.log(params.p_max)
    rng = np.random.default_rng(seed)
    u_starts = [rng.uniform(lo, hi, size=n) for _ in range(starts)]
    u_starts.append(np.full(n, lo))
    u_starts.append(np.full(n, hi))
    if n <= 4:
        for k in range(n):
            corner = np.full(n, lo)
            corner[k] = hi
            u_starts.append(corner)
    for p in (extra_starts or []):
        u_starts.append(np.log(np.clip(np.asarray(p, float), params.p_min,
                                       params.p_max)))
    best_u, best_val, total_evals = None, -math.inf, 0
    all_converged = True
    for u0 in u_starts:
        u, value, evals, conv = _ascend(topology, params, spec, u0, lo, hi,
                                        max_iters)
        total_evals += evals
        all_converged &= conv
        if value > best_val:
            best_val, best_u = value, u
    p_best = np.clip(np.exp(best_u), params.p_min, params.p_max)
    pv = PowerVector(p_best, params.p_min, params.p_max)
    return SolveResult(pv, evaluate_powers(topology, params, spec, pv.p),
                       "multistart_gradient", total_evals, all_converged)
