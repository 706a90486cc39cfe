"""Uplink network model: topologies, path gains, Shannon rates, alpha-fairness.

All types are immutable after construction and all operations are pure
functions, so everything here is safe to share across threads.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
from scipy.optimize import linear_sum_assignment

# Sampling and path-gain evaluation reject geometries closer than this,
# since the inverse-power gain law blows up at zero distance.
MIN_SEPARATION_M = 1.0


class DomainError(ValueError):
    """An input is outside the mathematical domain of an operation."""


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class SystemParams:
    """Scenario-level constants: noise power, power box, deployment area."""

    sigma2: float = 1e-9
    p_min: float = 10.0
    p_max: float = 1000.0
    area: tuple[float, float] = (100.0, 100.0)
    path_gain_exponent: float = 2.0

    def __post_init__(self):
        if not (0.0 < self.p_min < self.p_max):
            raise ValueError(f"need 0 < p_min < p_max, got [{self.p_min}, {self.p_max}]")
        if self.sigma2 <= 0.0:
            raise ValueError(f"noise power must be positive, got {self.sigma2}")
        if min(self.area) <= 0.0:
            raise ValueError(f"area sides must be positive, got {self.area}")


@dataclass(frozen=True)
class FairnessSpec:
    """Alpha-fairness utility of the rate vector.

    The rate formula uses base-2 logs; the alpha=1 utility branch uses the
    natural log. Both bases are fixed conventions, recorded here so the
    choice is visible at the call site.
    """

    alpha: float
    log_base_rate: float = 2.0
    log_base_fairness: float = math.e

    def __post_init__(self):
        if self.alpha < 0.0:
            raise ValueError(f"alpha must be >= 0, got {self.alpha}")


@dataclass(frozen=True)
class Topology:
    """A fixed set of BS and UE positions with per-pair gains and association.

    ``gains[i, k]`` is the path gain from UE i to BS k; ``assoc[i]`` is the
    serving BS of UE i. Constructed instances may carry synthetic gains that
    do not follow the geometric law (see :func:`build_instance` users), so
    only the serving-link gains are required to be positive.
    """

    bs_positions: np.ndarray
    ue_positions: np.ndarray
    gains: np.ndarray
    assoc: np.ndarray

    def __post_init__(self):
        bs = _readonly(np.asarray(self.bs_positions, dtype=float).reshape(-1, 2))
        ue = _readonly(np.asarray(self.ue_positions, dtype=float).reshape(-1, 2))
        g = _readonly(np.asarray(self.gains, dtype=float))
        a = _readonly(np.asarray(self.assoc, dtype=np.int64).reshape(-1))
        object.__setattr__(self, "bs_positions", bs)
        object.__setattr__(self, "ue_positions", ue)
        object.__setattr__(self, "gains", g)
        object.__setattr__(self, "assoc", a)
        n, b = len(ue), len(bs)
        if g.shape != (n, b):
            raise ValueError(f"gains shape {g.shape} != ({n}, {b})")
        if a.shape != (n,):
            raise ValueError(f"assoc length {a.shape} != {n}")
        if n and (a.min() < 0 or a.max() >= b):
            raise ValueError("assoc refers to a nonexistent BS")
        if np.any(g < 0):
            raise ValueError("gains must be nonnegative")
        if n and np.any(g[np.arange(n), a] <= 0):
            raise ValueError("serving-link gains must be positive")

    @property
    def n_ue(self) -> int:
        return len(self.ue_positions)

    @property
    def n_bs(self) -> int:
        return len(self.bs_positions)

    @property
    def serving_gains(self) -> np.ndarray:
        """Gain of each UE to its serving BS, shape (n_ue,)."""
        return self.gains[np.arange(self.n_ue), self.assoc]


@dataclass(frozen=True)
class PowerVector:
    """Per-UE transmit powers constrained to the box [p_min, p_max]."""

    p: np.ndarray
    p_min: float
    p_max: float = field(default=math.inf)

    def __post_init__(self):
        p = _readonly(np.asarray(self.p, dtype=float).reshape(-1))
        object.__setattr__(self, "p", p)
        if np.any(p < self.p_min) or np.any(p > self.p_max):
            raise ValueError(
                f"powers outside [{self.p_min}, {self.p_max}]: "
                f"range [{p.min()}, {p.max()}]"
            )

    def __len__(self) -> int:
        return len(self.p)


def path_gain(loc_i, loc_j, params: SystemParams) -> float:
    """Distance-power-law gain between two points, ``d**(-exponent)``."""
    d = float(np.linalg.norm(np.asarray(loc_i, float) - np.asarray(loc_j, float)))
    if d < MIN_SEPARATION_M:
        raise DomainError(f"separation {d:.3g} m below minimum {MIN_SEPARATION_M} m")
    return d ** (-params.path_gain_exponent)


def _balanced_slot_counts(n_ue: int, n_bs: int, extras: tuple[int, ...]) -> list[int]:
    base = n_ue // n_bs
    return [base + (1 if k in extras else 0) for k in range(n_bs)]


def associate(bs_positions, ue_positions) -> np.ndarray:
    """Balanced min-total-distance UE-to-BS assignment.

    Each BS serves floor(N/B) or ceil(N/B) UEs. Solved exactly: BS slots are
    replicated and matched with ``linear_sum_assignment``; when B does not
    divide N, the placement of the leftover slots is found by enumerating the
    candidate BS subsets (fine at the network sizes this package targets).
    """
    bs = np.asarray(bs_positions, float).reshape(-1, 2)
    ue = np.asarray(ue_positions, float).reshape(-1, 2)
    n, b = len(ue), len(bs)
    if n < 1 or b < 1:
        raise ValueError("need at least one UE and one BS")
    dist = np.linalg.norm(ue[:, None, :] - bs[None, :, :], axis=2)
    remainder = n % b
    if remainder == 0:
        extra_choices = [()]
    else:
        if b > 16:
            raise ValueError("exact balanced association supports at most 16 BSs")
        extra_choices = list(combinations(range(b), remainder))

    best_cost, best_assoc = math.inf, None
    for extras in extra_choices:
        counts = _balanced_slot_counts(n, b, extras)
        slot_bs = np.repeat(np.arange(b), counts)
        cost = dist[:, slot_bs]
        rows, cols = linear_sum_assignment(cost)
        total = float(cost[rows, cols].sum())
        if total < best_cost - 1e-12:
            best_cost = total
            assoc = np.empty(n, dtype=np.int64)
            assoc[rows] = slot_bs[cols]
            best_assoc = assoc
    return best_assoc


def topology_from_geometry(bs_positions, ue_positions, params: SystemParams,
                           assoc=None) -> Topology:
    """Build a topology with gains from the geometric law and, if not given,
    a balanced min-distance association."""
    bs = np.asarray(bs_positions, float).reshape(-1, 2)
    ue = np.asarray(ue_positions, float).reshape(-1, 2)
    gains = np.empty((len(ue), len(bs)))
    for i in range(len(ue)):
        for k in range(len(bs)):
            gains[i, k] = path_gain(ue[i], bs[k], params)
    if assoc is None:
        assoc = associate(bs, ue)
    return Topology(bs, ue, gains, assoc)


def random_topology(params: SystemParams, n_ue: int, n_bs: int,
                    rng: np.random.Generator) -> Topology:
    """Sample BS and UE positions uniformly in the area.

    UE positions are redrawn until they keep the minimum separation from
    every BS and every previously placed UE.
    """
    w, h = params.area
    bs = rng.uniform([0.0, 0.0], [w, h], size=(n_bs, 2))
    ue = np.empty((n_ue, 2))
    for i in range(n_ue):
        for _ in range(10000):
            cand = rng.uniform([0.0, 0.0], [w, h], size=2)
            d_bs = np.linalg.norm(bs - cand, axis=1).min()
            d_ue = np.linalg.norm(ue[:i] - cand, axis=1).min() if i else math.inf
            if min(d_bs, d_ue) >= MIN_SEPARATION_M:
                ue[i] = cand
                break
        else:
            raise RuntimeError("could not place a UE honoring the minimum separation")
    return topology_from_geometry(bs, ue, params)


def compute_sinr(topology: Topology, powers: np.ndarray, sigma2: float) -> np.ndarray:
    """Per-UE SINR at the serving BS; interference sums every other UE."""
    p = np.asarray(powers, float).reshape(-1)
    received = topology.gains.T @ p                     # (n_bs,) total rx power per BS
    own = p * topology.serving_gains
    denom = received[topology.assoc] - own + sigma2
    return own / denom


def compute_rates(topology: Topology, powers, params: SystemParams) -> np.ndarray:
    """Shannon spectral efficiency log2(1 + SINR), shape (n_ue,)."""
    p = powers.p if isinstance(powers, PowerVector) else np.asarray(powers, float)
    return np.log2(1.0 + compute_sinr(topology, p, params.sigma2))


def compute_rates_batch(topology: Topology, powers: np.ndarray,
                        params: SystemParams) -> np.ndarray:
    """Rates for a (m, n_ue) batch of power vectors, shape (m, n_ue)."""
    p = np.asarray(powers, float)
    received = p @ topology.gains                       # (m, n_bs)
    own = p * topology.serving_gains[None, :]
    denom = received[:, topology.assoc] - own + params.sigma2
    return np.log2(1.0 + own / denom)


def alpha_fairness(rates, spec: FairnessSpec) -> float:
    """Alpha-fairness utility of a rate vector.

    alpha = 1 sums natural logs of the rates; otherwise the utility is
    ``(1 - alpha)**-1 * sum(r ** (1 - alpha))``, exactly in that form (no
    continuity shift), which makes the family discontinuous at alpha = 1.
    """
    r = np.asarray(rates, dtype=float).reshape(-1)
    a = spec.alpha
    if a >= 1.0 and np.any(r <= 0.0):
        raise DomainError("alpha >= 1 requires strictly positive rates")
    if a == 1.0:
        return float(np.sum(np.log(r)))
    return float(np.sum(r ** (1.0 - a)) / (1.0 - a))


def alpha_fairness_batch(rates: np.ndarray, spec: FairnessSpec) -> np.ndarray:
    """Utility per row for a (m, n_ue) batch of rate vectors."""
    r = np.asarray(rates, dtype=float)
    a = spec.alpha
    if a >= 1.0 and np.any(r <= 0.0):
        raise DomainError("alpha >= 1 requires strictly positive rates")
    if a == 1.0:
        return np.sum(np.log(r), axis=1)
    return np.sum(r ** (1.0 - a), axis=1) / (1.0 - a)


def topology_to_dict(topology: Topology) -> dict:
    return {
        "bs": topology.bs_positions.tolist(),
        "ue": topology.ue_positions.tolist(),
        "gains": topology.gains.tolist(),
        "assoc": topology.assoc.tolist(),
    }


def topology_from_dict(doc: dict, params: SystemParams | None = None) -> Topology:
    """Rebuild a topology from its JSON form.

    ``gains`` and ``assoc`` are optional: missing gains are recomputed from
    geometry (requires ``params``), a missing association is recomputed by
    :func:`associate`. An explicit ``gains`` entry overrides geometry, which
    is how synthetic instances bypass the gain law.
    """
    bs = np.asarray(doc["bs"], float).reshape(-1, 2)
    ue = np.asarray(doc["ue"], float).reshape(-1, 2)
    assoc = doc.get("assoc")
    if "gains" in doc and doc["gains"] is not None:
        if assoc is None:
            assoc = associate(bs, ue)
        return Topology(bs, ue, np.asarray(doc["gains"], float), assoc)
    if params is None:
        raise ValueError("params required when the document has no gains")
    return topology_from_geometry(bs, ue, params, assoc=assoc)


def save_topology(topology: Topology, path) -> None:
    with open(path, "w") as fh:
        json.dump(topology_to_dict(topology), fh, indent=2)
        fh.write("\n")


def load_topology(path, params: SystemParams | None = None) -> Topology:
    with open(path) as fh:
        return topology_from_dict(json.load(fh), params)
