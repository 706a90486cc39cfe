"""Dataset generation and decentralized per-BS training/evaluation.

Generation loops random topologies and sweeps alpha over {0, 0.1, ..., 0.9}
per topology, labeling each (topology, alpha) pair with an oracle solution,
until exactly `size` records exist. Training builds one network per BS:
features are the full flattened gain matrix (UE-major) plus alpha, targets
are the optimal powers of that BS's own UEs; all BSs share the same
record-level train/test split so the per-record assembled power vector is
well-defined on held-out data.

All randomness derives from a single master seed through fixed-purpose
seed sequences, so reruns are byte-identical.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, replace

import numpy as np

from .kan import KanNetwork, TrainConfig
from .net_model import (
    FairnessSpec,
    PowerVector,
    SystemParams,
    Topology,
    alpha_fairness,
    compute_rates,
    random_topology,
    topology_from_dict,
    topology_to_dict,
)
from .oracle import solve_gradient, solve_grid

log = logging.getLogger(__name__)

ALPHA_SWEEP = tuple(k / 10 for k in range(10))

# sub-seed purposes for the master-seed derivation
_SEED_TOPOLOGY = 1
_SEED_SOLVER = 2
_SEED_SPLIT = 3

DATASET_KIND = "fairkan-dataset"


def derive_rng(master_seed: int, purpose: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([master_seed, purpose, index]))


@dataclass(frozen=True)
class DatasetRecord:
    t: int
    topology: Topology
    alpha: float
    powers: PowerVector
    solver_tag: str
    fairness: float


@dataclass
class Dataset:
    params: SystemParams
    n_ue: int
    n_bs: int
    seed: int
    solver: str
    records: list

    def __len__(self):
        return len(self.records)


def solve_instance(topology: Topology, params: SystemParams, spec: FairnessSpec,
                   solver: str = "auto", seed: int = 0, grid_levels: int = 32,
                   starts: int = 8):
    """One oracle call dispatching on the solver choice.

    "auto" = exact coarse grid plus a warm-started gradient polish at small
    N, multi-start gradient otherwise. "grid" and "gradient" force one
    method.
    """
    if solver == "grid":
        return solve_grid(topology, params, spec, grid_levels)
    if solver == "gradient":
        return solve_gradient(topology, params, spec, starts=starts, seed=seed)
    if solver == "auto":
        if topology.n_ue <= 4:
            coarse = solve_grid(topology, params, spec, 12)
            polished = solve_gradient(topology, params, spec, starts=2,
                                      seed=seed,
                                      extra_starts=[coarse.powers.p])
            # keep the coarse answer on ties: re-entering the log box is
            # lossy at the corners (exp(log(p_max)) lands just inside)
            best = polished if polished.fairness > coarse.fairness else coarse
            return replace(best, evaluations=coarse.evaluations
                           + polished.evaluations)
        return solve_gradient(topology, params, spec, starts=starts, seed=seed)
    raise ValueError(f"unknown solver {solver!r}")


def generate_dataset(params: SystemParams, n_ue: int, n_bs: int, size: int,
                     seed: int, solver: str = "auto") -> Dataset:
    """Alg.-style generation: topologies outer, alpha sweep inner, break at
    exactly `size` records. Solver failures skip the record (logged) and
    the loop tops up with fresh topologies."""
    if size < 1:
        raise ValueError("size must be >= 1")
    records = []
    topo_counter = 0
    empty_sweeps = 0
    while len(records) < size:
        rng = derive_rng(seed, _SEED_TOPOLOGY, topo_counter)
        topo = random_topology(params, n_ue, n_bs, rng)
        topo_counter += 1
        before = len(records)
        for alpha in ALPHA_SWEEP:
            t = len(records)
            spec = FairnessSpec(alpha)
            try:
                res = solve_instance(topo, params, spec, solver=solver, seed=seed + t)
            except ValueError as err:
                log.warning("skipping record %d (alpha=%.1f): %s", t, alpha, err)
                continue
            records.append(DatasetRecord(t, topo, alpha, res.powers,
                                         res.solver_tag, res.fairness))
            if len(records) >= size:
                break
        if len(records) == before:
            empty_sweeps += 1
            if empty_sweeps >= 3:
                raise RuntimeError(
                    "solver failed on every (topology, alpha) pair of three "
                    "consecutive topologies; check the solver choice")
        else:
            empty_sweeps = 0
    return Dataset(params, n_ue, n_bs, seed, solver, records)


# ------------------------------------------------------------------- I/O

def _params_to_dict(params: SystemParams) -> dict:
    return {"sigma2": params.sigma2, "p_min": params.p_min,
            "p_max": params.p_max, "area": list(params.area),
            "path_gain_exponent": params.path_gain_exponent}


def _params_from_dict(doc: dict) -> SystemParams:
    return SystemParams(sigma2=doc["sigma2"], p_min=doc["p_min"],
                        p_max=doc["p_max"], area=tuple(doc["area"]),
                        path_gain_exponent=doc["path_gain_exponent"])


def save_dataset(dataset: Dataset, path) -> None:
    header = {"kind": DATASET_KIND, "version": 1,
              "params": _params_to_dict(dataset.params),
              "n_ue": dataset.n_ue, "n_bs": dataset.n_bs,
              "size": len(dataset.records), "seed": dataset.seed,
              "solver": dataset.solver}
    with open(path, "w") as fh:
        fh.write(json.dumps(header) + "\n")
        for rec in dataset.records:
            fh.write(json.dumps({
                "t": rec.t, "alpha": rec.alpha,
                "topology": topology_to_dict(rec.topology),
                "powers": rec.powers.p.tolist(),
                "solver_tag": rec.solver_tag,
                "fairness": rec.fairness,
            }) + "\n")


def load_dataset(path, verify: bool = True) -> Dataset:
    """Read a JSONL dataset; with verify=True, recompute each record's
    fairness from its stored topology/alpha/powers and require agreement
    to 1e-9 (integrity check)."""
    with open(path) as fh:
        lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    if not lines:
        raise ValueError(f"{path}: empty dataset file")
    header = json.loads(lines[0])
    if header.get("kind") != DATASET_KIND:
        raise ValueError(f"{path}: not a {DATASET_KIND} file")
    params = _params_from_dict(header["params"])
    records = []
    for ln in lines[1:]:
        doc = json.loads(ln)
        topo = topology_from_dict(doc["topology"], params)
        pv = PowerVector(np.array(doc["powers"]), params.p_min, params.p_max)
        rec = DatasetRecord(doc["t"], topo, doc["alpha"], pv,
                            doc["solver_tag"], doc["fairness"])
        if verify:
            got = alpha_fairness(compute_rates(topo, pv, params),
                                 FairnessSpec(rec.alpha))
            if abs(got - rec.fairness) > 1e-9:
                raise ValueError(
                    f"{path}: integrity failure at record {rec.t}: stored "
                    f"fairness {rec.fairness}, recomputed {got}")
        records.append(rec)
    return Dataset(params, header["n_ue"], header["n_bs"], header["seed"],
                   header["solver"], records)


# ---------------------------------------------------------------- features

def record_features(record: DatasetRecord) -> np.ndarray:
    """Feature vector: gain matrix flattened UE-major, then alpha; length
    n_ue * n_bs + 1."""
    return np.append(record.topology.gains.reshape(-1), record.alpha)


@dataclass
class BsSets:
    """Per-BS supervised sets sharing one record-level train/test split."""

    dataset: Dataset
    beta: float
    seed: int
    X: np.ndarray            # (D, n_ue*n_bs + 1), shared by all BSs
    Y: list                  # per BS: (D, ues_per_bs[k])
    ue_lists: list           # per record: per BS array of served UE indices
    train_idx: np.ndarray
    test_idx: np.ndarray

    @property
    def n_bs(self):
        return self.dataset.n_bs


def build_bs_sets(dataset: Dataset, beta: float = 0.8, seed: int = 0) -> BsSets:
    """Extract per-BS features/targets and split records into train/test.

    Requires a stable association profile: every BS must serve the same
    number of UEs in every record (and at least one), otherwise per-BS
    target shapes would vary across records.
    """
    if not 0.0 < beta < 1.0:
        raise ValueError("beta must be in (0, 1)")
    d = len(dataset.records)
    if d < 2:
        raise ValueError("need at least 2 records to split")
    n_bs = dataset.n_bs
    counts0 = None
    ue_lists = []
    for rec in dataset.records:
        lists = [np.nonzero(rec.topology.assoc == k)[0] for k in range(n_bs)]
        counts = [len(l) for l in lists]
        if min(counts) == 0:
            raise ValueError(f"record {rec.t}: BS {counts.index(0)} serves no UE")
        if counts0 is None:
            counts0 = counts
        elif counts != counts0:
            raise ValueError(
                f"record {rec.t}: association profile {counts} differs "
                f"from {counts0}; per-BS target shapes must be stable")
        ue_lists.append(lists)
    X = np.stack([record_features(rec) for rec in dataset.records])
    Y = [np.stack([rec.powers.p[ue_lists[t][k]]
                   for t, rec in enumerate(dataset.records)])
         for k in range(n_bs)]
    perm = derive_rng(seed, _SEED_SPLIT, 0).permutation(d)
    n_train = math.ceil(beta * d)
    train_idx = np.sort(perm[:n_train])
    test_idx = np.sort(perm[n_train:])
    return BsSets(dataset, beta, seed, X, Y, ue_lists, train_idx, test_idx)


# ---------------------------------------------------------------- training

@dataclass
class KanConfig:
    """Network and optimizer knobs for the per-BS training stage."""

    epochs: int = 500
    lr: float = 1.0
    method: str = "gd"
    hidden: object = "auto"      # "auto" = one hidden layer of width 2*in+1
    intervals: int = 5
    order: int = 3
    seed: int = 0
    batch_size: int | None = None

    def train_config(self) -> TrainConfig:
        return TrainConfig(epochs=self.epochs, lr=self.lr, seed=self.seed,
                           method=self.method, batch_size=self.batch_size)


def train_decentralized(bs_sets: BsSets, config: KanConfig | None = None,
                        threads: int = 1):
    """Train one network per BS on its own targets; returns (nets, histories).

    Trainings are fully independent (identical data and seed give identical
    networks); a failing BS does not stop the others, the first failure is
    re-raised once every BS has been attempted.
    """
    config = config or KanConfig()
    ds = bs_sets.dataset
    in_dim = ds.n_ue * ds.n_bs + 1
    log_features = [True] * (in_dim - 1) + [False]   # gains yes, alpha no
    X_train = bs_sets.X[bs_sets.train_idx]

    def run_one(k):
        net = KanNetwork.build(in_dim, bs_sets.Y[k].shape[1],
                               hidden=config.hidden, intervals=config.intervals,
                               order=config.order, seed=config.seed,
                               log_features=log_features)
        net.output_norm.p_min = ds.params.p_min
        net.output_norm.p_max = ds.params.p_max
        net.fit_input_norm(X_train)
        history = net.train(X_train, bs_sets.Y[k][bs_sets.train_idx],
                            config.train_config())
        return net, history

    results: list = [None] * ds.n_bs
    failures = []
    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = {k: pool.submit(run_one, k) for k in range(ds.n_bs)}
        for k, fut in futures.items():
            try:
                results[k] = fut.result()
            except Exception as err:   # noqa: BLE001 - re-raised below
                failures.append((k, err))
    else:
        for k in range(ds.n_bs):
            try:
                results[k] = run_one(k)
            except Exception as err:   # noqa: BLE001 - re-raised below
                failures.append((k, err))
    if failures:
        ks = [k for k, _ in failures]
        raise RuntimeError(f"training failed for BS {ks}") from failures[0][1]
    nets = [net for net, _ in results]
    histories = [hist for _, hist in results]
    return nets, histories


# -------------------------------------------------------------- evaluation

def predict_record(networks, bs_sets: BsSets, t: int) -> PowerVector:
    """Assemble the full predicted power vector for record t from every
    BS network's own outputs."""
    ds = bs_sets.dataset
    p = np.empty(ds.n_ue)
    x = bs_sets.X[t]
    for k, net in enumerate(networks):
        p[bs_sets.ue_lists[t][k]] = net.forward(x)
    return PowerVector(p, ds.params.p_min, ds.params.p_max)


def evaluate(networks, bs_sets: BsSets, indices=None) -> dict:
    """Test-set metrics of the assembled predictions.

    power_mape: mean |p_pred - p_opt| / (p_max - p_min) * 100 over records
    and UEs. fairness_gap: mean (F_opt - F_pred) / |F_opt| * 100 with the
    predicted powers pushed through the network model. Both overall and
    per-alpha.
    """
    ds = bs_sets.dataset
    if indices is None:
        indices = bs_sets.test_idx
    indices = np.asarray(indices, int)
    if len(indices) == 0:
        raise ValueError("empty evaluation set")
    p_range = ds.params.p_max - ds.params.p_min
    rows = []
    for t in indices:
        rec = ds.records[t]
        pv = predict_record(networks, bs_sets, t)
        mape = float(np.mean(np.abs(pv.p - rec.powers.p))) / p_range * 100.0
        f_pred = alpha_fairness(compute_rates(rec.topology, pv, ds.params),
                                FairnessSpec(rec.alpha))
        gap = (rec.fairness - f_pred) / abs(rec.fairness) * 100.0
        rows.append((rec.alpha, mape, gap))
    per_alpha = {}
    for alpha, mape, gap in rows:
        per_alpha.setdefault(round(10 * alpha), []).append((mape, gap))
    breakdown = []
    for key in sorted(per_alpha):
        chunk = np.array(per_alpha[key])
        breakdown.append({"alpha": key / 10, "n_records": len(chunk),
                          "power_mape_percent": float(chunk[:, 0].mean()),
                          "fairness_gap_percent": float(chunk[:, 1].mean())})
    all_rows = np.array([(m, g) for _, m, g in rows])
    return {"n_ue": ds.n_ue, "n_bs": ds.n_bs, "n_records": len(rows),
            "power_mape_percent": float(all_rows[:, 0].mean()),
            "fairness_gap_percent": float(all_rows[:, 1].mean()),
            "per_alpha": breakdown}


def metrics_to_csv(metrics: dict) -> str:
    lines = ["alpha,n_ue,power_mape,fairness_gap"]
    for row in metrics["per_alpha"]:
        lines.append(f"{row['alpha']:g},{metrics['n_ue']},"
                     f"{row['power_mape_percent']:.6f},"
                     f"{row['fairness_gap_percent']:.6f}")
    return "\n".join(lines) + "\n"


def save_metrics(metrics: dict, json_path, csv_path) -> None:
    with open(json_path, "w") as fh:
        json.dump(metrics, fh, indent=2)
        fh.write("\n")
    with open(csv_path, "w") as fh:
        fh.write(metrics_to_csv(metrics))
