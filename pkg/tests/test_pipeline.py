import json

import numpy as np
import pytest

from fairkan.kan import KanNetwork
from fairkan.net_model import FairnessSpec, SystemParams
from fairkan.oracle import solve_grid
from fairkan.pipeline import (
    ALPHA_SWEEP,
    BsSets,
    KanConfig,
    build_bs_sets,
    evaluate,
    generate_dataset,
    load_dataset,
    metrics_to_csv,
    predict_record,
    record_features,
    save_dataset,
    save_metrics,
    solve_instance,
    train_decentralized,
)

PARAMS = SystemParams()
_DS_CACHE = {}


def small_dataset(size=20, n_ue=2, n_bs=1, seed=11):
    key = (size, n_ue, n_bs, seed)
    if key not in _DS_CACHE:
        _DS_CACHE[key] = generate_dataset(PARAMS, n_ue, n_bs, size, seed)
    return _DS_CACHE[key]


class StubNet:
    """Returns canned per-record outputs, keyed by the feature bytes."""

    def __init__(self, mapping):
        self.mapping = mapping

    def forward(self, x):
        return self.mapping[np.asarray(x).tobytes()]


def stub_networks(bs_sets, offset=0.0):
    """Like a trained ensemble, but we control the exact predictions.
    Outputs are clipped to the power box as OutputNorm would."""
    p_min = bs_sets.dataset.params.p_min
    p_max = bs_sets.dataset.params.p_max
    nets = []
    for k in range(bs_sets.n_bs):
        mapping = {bs_sets.X[t].tobytes():
                   np.clip(bs_sets.Y[k][t] + offset, p_min, p_max)
                   for t in range(len(bs_sets.X))}
        nets.append(StubNet(mapping))
    return nets


# --------------------------------------------------------------- generation

def test_alpha_sweep_is_alg_grid():
    assert len(ALPHA_SWEEP) == 10
    assert ALPHA_SWEEP[0] == 0.0
    assert ALPHA_SWEEP[-1] == pytest.approx(0.9)


def test_generate_loop_arithmetic_d20():
    ds = small_dataset(20)
    assert len(ds) == 20
    assert [r.t for r in ds.records] == list(range(20))
    assert [r.alpha for r in ds.records] == list(ALPHA_SWEEP) * 2
    # two distinct topologies, constant within each block of 10
    g0 = ds.records[0].topology.gains
    for r in ds.records[1:10]:
        np.testing.assert_array_equal(r.topology.gains, g0)
    assert not np.array_equal(ds.records[10].topology.gains, g0)


def test_generate_inner_break_d5():
    ds = small_dataset(5, seed=12)
    assert len(ds) == 5
    assert [r.alpha for r in ds.records] == [0.0, 0.1, 0.2, 0.3, 0.4]
    g0 = ds.records[0].topology.gains
    for r in ds.records:
        np.testing.assert_array_equal(r.topology.gains, g0)


def test_generate_rejects_zero_size():
    with pytest.raises(ValueError):
        generate_dataset(PARAMS, 2, 1, 0, 1)


def test_generate_raises_when_solver_always_fails():
    # exhaustive grid at 8 UEs always exceeds the budget
    with pytest.raises(RuntimeError, match="solver"):
        generate_dataset(PARAMS, 8, 1, 4, 1, solver="grid")


def test_generate_deterministic_bytes(tmp_path):
    a = generate_dataset(PARAMS, 2, 1, 8, seed=77)
    b = generate_dataset(PARAMS, 2, 1, 8, seed=77)
    pa, pb = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    save_dataset(a, pa)
    save_dataset(b, pb)
    assert pa.read_bytes() == pb.read_bytes()


def test_dataset_round_trip_and_integrity(tmp_path):
    ds = small_dataset(10, seed=13)
    path = tmp_path / "ds.jsonl"
    save_dataset(ds, path)
    back = load_dataset(path)
    assert len(back) == 10
    assert back.n_ue == 2 and back.n_bs == 1
    for a, b in zip(ds.records, back.records):
        assert a.alpha == b.alpha
        np.testing.assert_array_equal(a.powers.p, b.powers.p)
        assert a.fairness == b.fairness
    # tamper with a stored fairness value: integrity check must trip
    lines = path.read_text().splitlines()
    doc = json.loads(lines[3])
    doc["fairness"] += 1e-3
    lines[3] = json.dumps(doc)
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(ValueError, match="integrity"):
        load_dataset(path)
    assert len(load_dataset(path, verify=False)) == 10


def test_load_rejects_foreign_files(tmp_path):
    path = tmp_path / "x.jsonl"
    path.write_text('{"kind": "something-else"}\n')
    with pytest.raises(ValueError):
        load_dataset(path)
    empty = tmp_path / "empty.jsonl"
    empty.write_text("")
    with pytest.raises(ValueError):
        load_dataset(empty)


def test_solver_choices():
    ds = small_dataset(5, seed=12)
    topo = ds.records[0].topology
    spec = FairnessSpec(0.5)
    auto = solve_instance(topo, PARAMS, spec, "auto", seed=3)
    assert auto.solver_tag in ("multistart_gradient", "exhaustive_grid")
    coarse = solve_grid(topo, PARAMS, spec, 12)
    assert auto.fairness >= coarse.fairness    # never worse than its own stage
    assert solve_instance(topo, PARAMS, spec, "grid").solver_tag == "exhaustive_grid"
    grad = solve_instance(topo, PARAMS, spec, "gradient", seed=3)
    assert grad.solver_tag == "multistart_gradient"
    with pytest.raises(ValueError):
        solve_instance(topo, PARAMS, spec, "annealing")


# ----------------------------------------------------------------- features

def test_record_features_layout():
    ds = small_dataset(5, seed=12)
    rec = ds.records[0]
    x = record_features(rec)
    assert x.shape == (2 * 1 + 1,)
    np.testing.assert_array_equal(x[:-1], rec.topology.gains.reshape(-1))
    assert x[-1] == rec.alpha


def test_bs_sets_shapes_4ue_1bs():
    ds = generate_dataset(PARAMS, 4, 1, 10, seed=21)
    sets = build_bs_sets(ds, beta=0.8, seed=1)
    assert sets.X.shape == (10, 5)          # 4 gains + alpha
    assert sets.Y[0].shape == (10, 4)
    assert len(sets.train_idx) == 8 and len(sets.test_idx) == 2


def test_bs_sets_shapes_3bs_6ue():
    ds = generate_dataset(PARAMS, 6, 3, 4, seed=22)
    sets = build_bs_sets(ds, beta=0.6, seed=1)
    assert sets.X.shape == (4, 19)          # 18 gains + alpha
    for k in range(3):
        assert sets.Y[k].shape == (4, 2)
    for t in range(4):
        all_ues = np.concatenate([sets.ue_lists[t][k] for k in range(3)])
        assert sorted(all_ues.tolist()) == list(range(6))


def test_bs_sets_split_is_partition():
    ds = small_dataset(20)
    sets = build_bs_sets(ds, beta=0.8, seed=5)
    joined = np.concatenate([sets.train_idx, sets.test_idx])
    assert sorted(joined.tolist()) == list(range(20))
    assert len(np.intersect1d(sets.train_idx, sets.test_idx)) == 0


def test_bs_sets_split_deterministic():
    ds = small_dataset(20)
    a = build_bs_sets(ds, beta=0.8, seed=5)
    b = build_bs_sets(ds, beta=0.8, seed=5)
    np.testing.assert_array_equal(a.train_idx, b.train_idx)
    c = build_bs_sets(ds, beta=0.8, seed=6)
    assert not np.array_equal(a.train_idx, c.train_idx)


def test_bs_sets_validation():
    ds = small_dataset(20)
    with pytest.raises(ValueError):
        build_bs_sets(ds, beta=0.0)
    with pytest.raises(ValueError):
        build_bs_sets(ds, beta=1.0)


def test_bs_sets_rejects_bs_without_ue():
    ds = generate_dataset(PARAMS, 1, 2, 3, seed=31)   # one BS must sit idle
    with pytest.raises(ValueError, match="serves no UE"):
        build_bs_sets(ds)


def test_bs_sets_rejects_unstable_association():
    base = generate_dataset(PARAMS, 3, 2, 2, seed=33)
    # forge a record whose association profile is flipped
    from dataclasses import replace
    from fairkan.net_model import Topology
    rec = base.records[1]
    topo = rec.topology
    flipped = Topology(topo.bs_positions, topo.ue_positions, topo.gains,
                       [1, 0, 1] if topo.assoc.tolist().count(0) == 2 else [0, 1, 0])
    base.records[1] = replace(rec, topology=flipped)
    with pytest.raises(ValueError, match="association profile"):
        build_bs_sets(base)


# ----------------------------------------------------------------- training

def test_train_single_bs_smoke():
    ds = small_dataset(20)
    sets = build_bs_sets(ds, beta=0.8, seed=2)
    nets, hists = train_decentralized(sets, KanConfig(epochs=30, seed=4))
    assert len(nets) == 1 and len(hists) == 1
    assert nets[0].in_dim == 3 and nets[0].out_dim == 2
    assert hists[0][-1] <= hists[0][0]


def test_train_identical_data_gives_identical_networks():
    ds = generate_dataset(PARAMS, 4, 2, 12, seed=41)
    sets = build_bs_sets(ds, beta=0.75, seed=3)
    sets.Y[1] = sets.Y[0].copy()     # force identical targets for both BSs
    nets, _ = train_decentralized(sets, KanConfig(epochs=20, seed=9))
    for la, lb in zip(nets[0].layers, nets[1].layers):
        np.testing.assert_array_equal(la.omega, lb.omega)
        np.testing.assert_array_equal(la.coeffs, lb.coeffs)


def test_train_threads_matches_serial():
    ds = generate_dataset(PARAMS, 4, 2, 12, seed=41)
    sets = build_bs_sets(ds, beta=0.75, seed=3)
    serial, _ = train_decentralized(sets, KanConfig(epochs=10, seed=9))
    threaded, _ = train_decentralized(sets, KanConfig(epochs=10, seed=9),
                                      threads=2)
    for la, lb in zip(serial[0].layers, threaded[0].layers):
        np.testing.assert_array_equal(la.coeffs, lb.coeffs)


def test_train_failure_reports_bs():
    ds = small_dataset(20)
    sets = build_bs_sets(ds, beta=0.8, seed=2)
    with pytest.raises(RuntimeError, match=r"BS \[0\]"):
        train_decentralized(sets, KanConfig(epochs=5, method="nope"))


# --------------------------------------------------------------- evaluation

def test_evaluate_perfect_predictions_zero_metrics():
    ds = small_dataset(20)
    sets = build_bs_sets(ds, beta=0.8, seed=2)
    metrics = evaluate(stub_networks(sets), sets)
    assert metrics["power_mape_percent"] == 0.0
    assert metrics["fairness_gap_percent"] == pytest.approx(0.0, abs=1e-12)
    assert metrics["n_records"] == 4


def test_evaluate_pmin_baseline_hand_check():
    ds = generate_dataset(PARAMS, 3, 1, 3, seed=51)
    sets = BsSets(ds, 0.5, 0,
                  X=np.stack([record_features(r) for r in ds.records]),
                  Y=[np.stack([r.powers.p for r in ds.records])],
                  ue_lists=[[np.arange(3)] for _ in range(3)],
                  train_idx=np.array([0]), test_idx=np.array([0, 1, 2]))
    net = KanNetwork.build(4, 3, hidden=None, seed=0)
    for layer in net.layers:
        layer.omega[:] = 0.0
    net.output_norm.p_min = PARAMS.p_min
    net.output_norm.p_max = PARAMS.p_max
    metrics = evaluate([net], sets)
    want = np.mean([np.mean(r.powers.p - PARAMS.p_min) for r in ds.records])
    want = want / (PARAMS.p_max - PARAMS.p_min) * 100.0
    assert metrics["power_mape_percent"] == pytest.approx(want, rel=1e-12)


def test_evaluate_permutation_invariant():
    ds = small_dataset(20)
    sets = build_bs_sets(ds, beta=0.8, seed=2)
    nets = stub_networks(sets, offset=25.0)
    a = evaluate(nets, sets, indices=sets.test_idx)
    b = evaluate(nets, sets, indices=sets.test_idx[::-1])
    # summation order shifts the mean by ulps, nothing more
    assert a["power_mape_percent"] == pytest.approx(b["power_mape_percent"],
                                                    rel=1e-12)
    assert a["fairness_gap_percent"] == pytest.approx(b["fairness_gap_percent"],
                                                      rel=1e-12)


def test_evaluate_breakdown_consistent_with_overall():
    ds = small_dataset(20)
    sets = build_bs_sets(ds, beta=0.8, seed=2)
    nets = stub_networks(sets, offset=40.0)
    metrics = evaluate(nets, sets)
    total = sum(row["n_records"] for row in metrics["per_alpha"])
    assert total == metrics["n_records"]
    weighted = sum(row["power_mape_percent"] * row["n_records"]
                   for row in metrics["per_alpha"]) / total
    assert metrics["power_mape_percent"] == pytest.approx(weighted, rel=1e-12)


def test_evaluate_rejects_empty():
    ds = small_dataset(20)
    sets = build_bs_sets(ds, beta=0.8, seed=2)
    with pytest.raises(ValueError):
        evaluate(stub_networks(sets), sets, indices=[])


def test_predicted_powers_respect_bounds():
    ds = small_dataset(20)
    sets = build_bs_sets(ds, beta=0.8, seed=2)
    nets, _ = train_decentralized(sets, KanConfig(epochs=10, seed=1))
    for t in sets.test_idx:
        pv = predict_record(nets, sets, t)
        assert np.all(pv.p >= PARAMS.p_min) and np.all(pv.p <= PARAMS.p_max)


# ------------------------------------------------------------------ output

def test_metrics_csv_format(tmp_path):
    ds = small_dataset(20)
    sets = build_bs_sets(ds, beta=0.8, seed=2)
    metrics = evaluate(stub_networks(sets), sets)
    csv = metrics_to_csv(metrics)
    lines = csv.strip().splitlines()
    assert lines[0] == "alpha,n_ue,power_mape,fairness_gap"
    assert len(lines) == 1 + len(metrics["per_alpha"])
    first = lines[1].split(",")
    assert first[1] == "2"
    float(first[0]), float(first[2]), float(first[3])
    jp, cp = tmp_path / "m.json", tmp_path / "m.csv"
    save_metrics(metrics, jp, cp)
    assert json.loads(jp.read_text())["n_ue"] == 2
    assert cp.read_text() == csv
