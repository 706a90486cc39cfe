import itertools

import numpy as np
import pytest

from fairkan.net_model import FairnessSpec, SystemParams, alpha_fairness, compute_rates
from fairkan.oracle import solve_grid
from fairkan.reduction import (
    Graph,
    brute_force_mis,
    build_instance,
    graph_from_edges,
    graph_to_text,
    is_independent,
    parse_graph,
    random_graph,
    verify_correspondence,
)

K3 = graph_from_edges(3, [(0, 1), (1, 2), (0, 2)])
P3 = graph_from_edges(3, [(0, 1), (1, 2)])
C5 = graph_from_edges(5, [(0, 1), (1, 2), (2, 3), (3, 4), (4, 0)])
EMPTY4 = graph_from_edges(4, [])


def solved_instance(graph, levels=8, **kwargs):
    inst = build_instance(graph, **kwargs)
    res = solve_grid(inst.topology, inst.params, FairnessSpec(inst.alpha), levels)
    return inst, res


# ------------------------------------------------------------------ graphs

def test_graph_normalizes_edge_orientation():
    g = graph_from_edges(3, [(2, 0), (0, 2), (1, 0)])
    assert g.edges == frozenset({(0, 2), (0, 1)})


def test_graph_rejects_self_loop_and_range():
    with pytest.raises(ValueError):
        graph_from_edges(3, [(1, 1)])
    with pytest.raises(ValueError):
        graph_from_edges(3, [(0, 3)])
    with pytest.raises(ValueError):
        Graph(0, frozenset())


def test_parse_and_render_round_trip():
    text = "n 4\n0 1\n2 3\n"
    g = parse_graph(text)
    assert g.vertex_count == 4
    assert g.edges == frozenset({(0, 1), (2, 3)})
    assert parse_graph(graph_to_text(g)) == g


def test_parse_tolerates_comments_and_blanks():
    g = parse_graph("# a graph\nn 3\n\n0 2\n")
    assert g.edges == frozenset({(0, 2)})


def test_parse_rejects_malformed_input():
    with pytest.raises(ValueError):
        parse_graph("3\n0 1\n")
    with pytest.raises(ValueError):
        parse_graph("n 3\n0 1 2\n")


def test_random_graph_is_seeded_and_in_range():
    a = random_graph(6, 0.4, np.random.default_rng(5))
    b = random_graph(6, 0.4, np.random.default_rng(5))
    assert a == b
    assert all(0 <= u < 6 and 0 <= v < 6 for u, v in a.edges)


# ------------------------------------------------------------ construction

def test_build_empty_graph_is_diagonal():
    inst = build_instance(graph_from_edges(3, []))
    np.testing.assert_array_equal(inst.topology.gains, np.eye(3))
    assert inst.params.sigma2 == inst.epsilon == 1e-6
    assert inst.topology.n_bs == inst.topology.n_ue == 3
    assert inst.topology.assoc.tolist() == [0, 1, 2]


def test_build_triangle_sets_all_cross_gains():
    inst = build_instance(K3)
    g = inst.topology.gains
    off = g[~np.eye(3, dtype=bool)]
    assert np.all(off == 1e6)
    assert np.all(np.diag(g) == 1.0)


def test_build_path_leaves_nonedges_zero():
    g = build_instance(P3).topology.gains
    assert g[0, 1] == g[1, 0] == g[1, 2] == g[2, 1] == 1e6
    assert g[0, 2] == g[2, 0] == 0.0


def test_build_cross_gain_symmetry_random():
    rng = np.random.default_rng(13)
    for _ in range(10):
        graph = random_graph(int(rng.integers(2, 8)), 0.5, rng)
        g = build_instance(graph).topology.gains
        np.testing.assert_array_equal(g, g.T)


def test_build_rejects_bad_constants():
    with pytest.raises(ValueError):
        build_instance(K3, epsilon=0.0)
    with pytest.raises(ValueError):
        build_instance(K3, m_value=0.5)


def test_adaptive_floor_keeps_residual_interference_below_noise():
    inst = build_instance(C5)
    worst = inst.m_value * inst.params.p_min * (C5.vertex_count - 1)
    assert worst <= 0.1 * inst.epsilon


# -------------------------------------------------------------------- MIS

def _mis_oracle(graph):
    """Independent enumeration over vertex combinations."""
    n = graph.vertex_count
    for size in range(n, 0, -1):
        hits = [set(c) for c in itertools.combinations(range(n), size)
                if is_independent(graph, c)]
        if hits:
            return size, hits
    return 0, [set()]


def test_mis_named_graphs():
    assert brute_force_mis(K3) == (1, [frozenset({0}), frozenset({1}), frozenset({2})])
    size, wits = brute_force_mis(P3)
    assert size == 2 and wits == [frozenset({0, 2})]
    size, wits = brute_force_mis(EMPTY4)
    assert size == 4 and wits == [frozenset(range(4))]
    size, wits = brute_force_mis(C5)
    assert size == 2 and len(wits) == 5


def test_mis_matches_independent_oracle():
    rng = np.random.default_rng(71)
    for _ in range(20):
        graph = random_graph(int(rng.integers(1, 9)), 0.4, rng)
        size, wits = brute_force_mis(graph)
        o_size, o_wits = _mis_oracle(graph)
        assert size == o_size
        assert {frozenset(w) for w in wits} == {frozenset(w) for w in o_wits}


def test_mis_rejects_large_graphs():
    with pytest.raises(ValueError):
        brute_force_mis(graph_from_edges(21, []))


def test_adding_edge_never_increases_mis():
    rng = np.random.default_rng(37)
    for _ in range(15):
        n = int(rng.integers(2, 8))
        graph = random_graph(n, 0.3, rng)
        size, _ = brute_force_mis(graph)
        free = [(u, v) for u in range(n) for v in range(u + 1, n)
                if (u, v) not in graph.edges]
        if not free:
            continue
        extra = free[int(rng.integers(0, len(free)))]
        bigger = graph_from_edges(n, list(graph.edges) + [extra])
        size2, _ = brute_force_mis(bigger)
        assert size2 <= size


# --------------------------------------------------------- correspondence

def test_correspondence_path():
    inst, res = solved_instance(P3)
    verdict, extracted = verify_correspondence(inst, res)
    assert verdict == "match"
    assert extracted == frozenset({0, 2})


def test_correspondence_empty_graph_all_high():
    inst, res = solved_instance(EMPTY4)
    verdict, extracted = verify_correspondence(inst, res)
    assert verdict == "match"
    assert extracted == frozenset(range(4))
    np.testing.assert_array_equal(res.powers.p, 1000.0)


def test_correspondence_triangle_exactly_one_high():
    inst, res = solved_instance(K3)
    verdict, extracted = verify_correspondence(inst, res)
    assert verdict == "match"
    assert len(extracted) == 1


def test_correspondence_c5():
    inst, res = solved_instance(C5)
    verdict, extracted = verify_correspondence(inst, res)
    assert verdict == "match"
    assert is_independent(C5, extracted) and len(extracted) == 2


def test_verdict_insensitive_to_threshold():
    for graph in (P3, C5):
        inst, res = solved_instance(graph)
        sets = {verify_correspondence(inst, res, f)[1]
                for f in (0.1, 0.3, 0.5, 0.7, 0.9)}
        assert len(sets) == 1  # strongly bimodal powers


def test_correspondence_random_sample_spot_check():
    rng = np.random.default_rng(404)
    for _ in range(10):
        graph = random_graph(int(rng.integers(2, 8)), 0.4, rng)
        inst, res = solved_instance(graph)
        verdict, _ = verify_correspondence(inst, res)
        assert verdict == "match"


def test_log_utility_breaks_the_correspondence_on_k3():
    """The counterexample that forced sum-rate as the reduction objective.

    Under proportional fairness with a watt-scale power floor, the
    interference-dominated SINRs are invariant to scaling all powers, so
    the all-floor allocation ties the all-cap one and strictly beats any
    single-high-UE allocation: suppressing a UE costs a log factor that
    the winner's own log gain cannot repay. The extracted set is then not
    an independent-set indicator at all.
    """
    inst = build_instance(K3, alpha=1.0)
    assert inst.params.p_min == 10.0  # watt-scale floor retained for log utility
    spec = FairnessSpec(1.0)
    res = solve_grid(inst.topology, inst.params, spec, 8)
    verdict, extracted = verify_correspondence(inst, res)
    assert verdict == "mismatch"
    assert extracted == frozenset()
    # direct demonstration: one-high is strictly worse than all-floor
    one_high = np.array([1000.0, 10.0, 10.0])
    all_floor = np.array([10.0, 10.0, 10.0])
    f_high = alpha_fairness(compute_rates(inst.topology, one_high, inst.params), spec)
    f_floor = alpha_fairness(compute_rates(inst.topology, all_floor, inst.params), spec)
    assert f_high < f_floor - 1.0
