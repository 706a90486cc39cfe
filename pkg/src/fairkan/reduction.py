"""Graph-to-power-allocation reduction and its verification harness.

Maps an undirected graph to a synthetic uplink instance: one UE-BS pair
per vertex, unit serving gains, cross-gain M between the pairs of every
edge, zero elsewhere, noise epsilon. When the power box is wide enough,
maximizing the sum of rates drives exactly one maximum independent set of
UEs to high power and everyone else to the floor, so a power solver doubles
as an independent-set solver.

Two regime knobs matter and both default to values that make the
correspondence exact:

* ``alpha = 0`` (sum-rate). Proportional fairness (alpha = 1) does *not*
  reproduce the correspondence: the log utility rewards raising the
  crushed users more than it costs the independent set, and on a triangle
  the all-max allocation strictly beats every single-vertex allocation.
  ``tests/test_reduction.py`` carries the numeric counterexample.
* an adaptive power floor ``p_min = 0.1 * epsilon / (M * (n - 1))``, which
  keeps the forced transmissions of suppressed UEs below the noise floor.
  With a fixed floor of Table-scale watts, member rates pick up a
  1/degree dependence and maximum *cardinality* is no longer what the
  optimizer rewards.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .net_model import SystemParams, Topology
from .oracle import SolveResult

DEFAULT_EPSILON = 1e-6
DEFAULT_M = 1e6
DEFAULT_THRESHOLD = 0.5


@dataclass(frozen=True)
class Graph:
    vertex_count: int
    edges: frozenset

    def __post_init__(self):
        if self.vertex_count < 1:
            raise ValueError("need at least one vertex")
        norm = set()
        for e in self.edges:
            u, v = e
            if u == v:
                raise ValueError(f"self-loop at vertex {u}")
            if not (0 <= u < self.vertex_count and 0 <= v < self.vertex_count):
                raise ValueError(f"edge {e} outside vertex range")
            norm.add((min(u, v), max(u, v)))
        object.__setattr__(self, "edges", frozenset(norm))

    def adjacency_masks(self) -> list[int]:
        adj = [0] * self.vertex_count
        for u, v in self.edges:
            adj[u] |= 1 << v
            adj[v] |= 1 << u
        return adj


def graph_from_edges(n: int, edges) -> Graph:
    return Graph(n, frozenset(tuple(e) for e in edges))


def parse_graph(text: str) -> Graph:
    """Edge-list format: header line ``n <count>``, then one ``u v`` per line."""
    lines = [ln.strip() for ln in text.splitlines()]
    lines = [ln for ln in lines if ln and not ln.startswith("#")]
    if not lines or not lines[0].startswith("n "):
        raise ValueError("expected header line 'n <count>'")
    n = int(lines[0].split()[1])
    edges = []
    for ln in lines[1:]:
        parts = ln.split()
        if len(parts) != 2:
            raise ValueError(f"malformed edge line: {ln!r}")
        edges.append((int(parts[0]), int(parts[1])))
    return graph_from_edges(n, edges)


def graph_to_text(graph: Graph) -> str:
    lines = [f"n {graph.vertex_count}"]
    lines.extend(f"{u} {v}" for u, v in sorted(graph.edges))
    return "\n".join(lines) + "\n"


def random_graph(n: int, edge_prob: float, rng: np.random.Generator) -> Graph:
    edges = [(u, v) for u in range(n) for v in range(u + 1, n)
             if rng.random() < edge_prob]
    return graph_from_edges(n, edges)


@dataclass(frozen=True)
class ReducedInstance:
    topology: Topology
    params: SystemParams
    alpha: float
    epsilon: float
    m_value: float
    graph: Graph


def build_instance(graph: Graph, epsilon: float = DEFAULT_EPSILON,
                   m_value: float = DEFAULT_M,
                   params: SystemParams | None = None,
                   alpha: float = 0.0) -> ReducedInstance:
    """Reduced instance: B = N = vertex_count, one UE per BS.

    Gains: h[i][b_i] = 1, h[i][b_j] = h[j][b_i] = m_value for every edge
    (i, j), all other pairs 0; noise sigma2 = epsilon. Positions are
    cosmetic (the gains override the geometry). The power ceiling comes
    from `params`; the floor is lowered so that floor-level interference
    stays below epsilon (see module docstring).
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if m_value <= 1:
        raise ValueError("m_value must be much larger than 1")
    params = params or SystemParams()
    n = graph.vertex_count
    gains = np.zeros((n, n))
    np.fill_diagonal(gains, 1.0)
    for u, v in graph.edges:
        gains[u, v] = m_value
        gains[v, u] = m_value
    # one UE-BS pair per vertex, laid out on a line, 10 m apart
    bs = np.column_stack([10.0 * np.arange(n), np.zeros(n)])
    ue = bs + np.array([0.0, 1.0])
    if alpha < 1.0:
        p_floor = min(params.p_min, 0.1 * epsilon / (m_value * max(1, n - 1)))
    else:
        # the log utility needs representable (nonzero) rates for suppressed
        # UEs, which the adaptive floor would underflow in float64
        p_floor = params.p_min
    inst_params = SystemParams(sigma2=epsilon, p_min=p_floor,
                               p_max=params.p_max, area=params.area,
                               path_gain_exponent=params.path_gain_exponent)
    topo = Topology(bs, ue, gains, np.arange(n))
    return ReducedInstance(topo, inst_params, alpha, epsilon, m_value, graph)


def brute_force_mis(graph: Graph):
    """(size, all maximum independent sets) by bitmask subset enumeration."""
    n = graph.vertex_count
    if n > 20:
        raise ValueError(f"{n} vertices exceeds the 20-vertex enumeration cap")
    adj = graph.adjacency_masks()
    best, witnesses = 0, []
    for subset in range(1 << n):
        size = subset.bit_count()
        if size < best:
            continue
        ok = True
        s = subset
        while s:
            v = (s & -s).bit_length() - 1
            if adj[v] & subset:
                ok = False
                break
            s &= s - 1
        if not ok:
            continue
        members = frozenset(i for i in range(n) if subset >> i & 1)
        if size > best:
            best, witnesses = size, [members]
        else:
            witnesses.append(members)
    return best, witnesses


def extract_high_power(instance: ReducedInstance, result: SolveResult,
                       threshold_fraction: float = DEFAULT_THRESHOLD) -> frozenset:
    cut = threshold_fraction * instance.params.p_max
    return frozenset(int(i) for i in np.nonzero(result.powers.p >= cut)[0])


def is_independent(graph: Graph, vertices) -> bool:
    vs = set(vertices)
    return all(not (u in vs and v in vs) for u, v in graph.edges)


def verify_correspondence(instance: ReducedInstance, result: SolveResult,
                          threshold_fraction: float = DEFAULT_THRESHOLD):
    """Check that the high-power UEs form a maximum independent set.

    Returns (verdict, extracted set); verdict is "match" iff the extracted
    set is independent and has maximum cardinality. A mismatch is a valid
    outcome, not an error.
    """
    extracted = extract_high_power(instance, result, threshold_fraction)
    size, _ = brute_force_mis(instance.graph)
    ok = is_independent(instance.graph, extracted) and len(extracted) == size
    return ("match" if ok else "mismatch"), extracted
