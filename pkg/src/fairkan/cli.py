"""Command line front end.

Subcommands cover the whole pipeline: ``generate`` builds a labelled
dataset, ``train-eval`` fits per-BS networks and reports test metrics,
``solve`` runs the oracles on one topology (optionally emitting a full
two-user fairness surface), ``reduce`` builds a graph reduction instance
and checks the independent-set correspondence, ``explain`` turns a
trained checkpoint into symbolic formulas plus an operation-count report.

Settings resolve flag > config document > built-in default. The config
document is a flat JSON object keyed by the long option names with
dashes replaced by underscores (``{"ues": 4, "p_min": 0.1}``). All
randomness flows from the single ``--seed``; reruns with the same
settings produce byte-identical data and report files. Nothing is
written outside ``--out-dir``, and report paths render PNG figures next
to the CSV output unless ``--no-figures`` is given.
"""

import argparse
import importlib.resources
import json
import sys
from pathlib import Path

import numpy as np

from .kan import KanNetwork
from .net_model import (
    FairnessSpec,
    SystemParams,
    alpha_fairness_batch,
    compute_rates_batch,
    topology_from_dict,
    topology_to_dict,
)
from .oracle import solve_grid, solve_gradient
from .pipeline import (
    KanConfig,
    build_bs_sets,
    evaluate,
    generate_dataset,
    load_dataset,
    save_dataset,
    save_metrics,
    solve_instance,
    train_decentralized,
)
from .reduction import (
    DEFAULT_EPSILON,
    DEFAULT_M,
    DEFAULT_THRESHOLD,
    brute_force_mis,
    build_instance,
    parse_graph,
    verify_correspondence,
)
from .symbolic import formula_text, op_count, symbolic_export, total_ops

_PARAM_KEYS = ("sigma2", "p_min", "p_max")


class Settings:
    """Flag/config-document/default resolution for one invocation."""

    def __init__(self, args: argparse.Namespace):
        self.args = vars(args)
        path = self.args.get("config")
        if path is None:
            self.doc = {}
        else:
            with open(path) as fh:
                self.doc = json.load(fh)
            if not isinstance(self.doc, dict):
                raise ValueError("config document must be a JSON object")

    def get(self, name, default):
        value = self.args.get(name)
        if value is None:
            value = self.doc.get(name)
        return default if value is None else value

    def out_dir(self) -> Path:
        return Path(self.get("out_dir", "."))

    def seed(self) -> int:
        return int(self.get("seed", 0))

    def figures(self) -> bool:
        if self.args.get("no_figures"):
            return False
        return bool(self.doc.get("figures", True))

    def params(self, base: dict | None = None) -> SystemParams:
        """System parameters with optional per-file base values under the
        flag overrides."""
        merged = {}
        if base:
            merged.update({k: base[k] for k in base
                           if k in _PARAM_KEYS + ("area", "path_gain_exponent")})
        if "area" in merged:
            merged["area"] = tuple(merged["area"])
        for key in _PARAM_KEYS:
            value = self.get(key, None)
            if value is not None:
                merged[key] = float(value)
        return SystemParams(**merged)

    def kan_config(self) -> KanConfig:
        hidden = self.get("hidden", "auto")
        if isinstance(hidden, str) and hidden != "auto":
            hidden = tuple(int(tok) for tok in hidden.split(",") if tok)
        return KanConfig(
            epochs=int(self.get("epochs", 500)),
            lr=float(self.get("lr", 1.0)),
            method=self.get("method", "gd"),
            hidden=hidden,
            intervals=int(self.get("intervals", 5)),
            order=int(self.get("order", 3)),
            seed=self.seed(),
        )


def _write_json(path: Path, doc: dict) -> None:
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def _figure(enabled, render, *args):
    if not enabled:
        return None
    return render(*args)


# ----------------------------------------------------------------- commands

def cmd_generate(args) -> int:
    st = Settings(args)
    n_ue = int(st.get("ues", 4))
    n_bs = int(st.get("bss", 1))
    size = int(st.get("size", 100))
    solver = st.get("solver", "auto")
    params = st.params()
    ds = generate_dataset(params, n_ue, n_bs, size, st.seed(), solver=solver)
    out_dir = st.out_dir()
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / st.get("dataset_name", "dataset.jsonl")
    save_dataset(ds, path)
    print(f"wrote {len(ds)} records ({n_ue} UEs, {n_bs} BSs, "
          f"solver={solver}) to {path}")
    return 0


def cmd_train_eval(args) -> int:
    st = Settings(args)
    dataset_path = st.get("dataset", None)
    if dataset_path is None:
        raise ValueError("a dataset file is required (--dataset)")
    ds = load_dataset(dataset_path)
    beta = float(st.get("beta", 0.8))
    threads = int(st.get("threads", 1))
    config = st.kan_config()
    sets = build_bs_sets(ds, beta=beta, seed=st.seed())
    nets, histories = train_decentralized(sets, config, threads=threads)
    metrics = evaluate(nets, sets)
    out_dir = st.out_dir()
    out_dir.mkdir(parents=True, exist_ok=True)
    for k, net in enumerate(nets):
        net.save(out_dir / f"bs{k}_checkpoint.json")
    save_metrics(metrics, out_dir / "metrics.json", out_dir / "metrics.csv")
    if st.figures():
        from . import plots
        plots.error_curves(metrics, out_dir / "error_curves.png")
        plots.loss_curves(histories, out_dir / "loss_curves.png")
    print(f"trained {len(nets)} network(s) for {config.epochs} epochs")
    print(f"test power error {metrics['power_mape_percent']:.3f}% of range, "
          f"fairness gap {metrics['fairness_gap_percent']:.3f}% "
          f"({metrics['n_records']} records)")
    return 0


def _load_topology_doc(spec_str: str) -> dict:
    if spec_str == "demo":
        res = importlib.resources.files("fairkan").joinpath(
            "data/two_user_demo.json")
        return json.loads(res.read_text())
    with open(spec_str) as fh:
        return json.load(fh)


def cmd_solve(args) -> int:
    st = Settings(args)
    topo_src = st.get("topology", None)
    if topo_src is None:
        raise ValueError("a topology file is required (--topology, or "
                         "--topology demo for the bundled two-user instance)")
    doc = _load_topology_doc(topo_src)
    params = st.params(doc.get("params"))
    topo = topology_from_dict(doc, params)
    alpha = float(st.get("alpha", 0.5))
    spec = FairnessSpec(alpha)
    out_dir = st.out_dir()
    if args.sweep:
        if topo.n_ue != 2:
            raise ValueError("--sweep needs a two-UE topology")
        levels = int(st.get("levels", 64))
        result = solve_grid(topo, params, spec, levels_per_ue=levels)
        grid = np.geomspace(params.p_min, params.p_max, levels)
        combos = np.stack(np.meshgrid(grid, grid, indexing="ij"),
                          axis=-1).reshape(-1, 2)
        values = alpha_fairness_batch(
            compute_rates_batch(topo, combos, params), spec)
        out_dir.mkdir(parents=True, exist_ok=True)
        csv_path = out_dir / "fairness_surface.csv"
        with open(csv_path, "w") as fh:
            fh.write("p1,p2,fairness\n")
            for (pa, pb), val in zip(combos, values):
                fh.write(f"{float(pa)!r},{float(pb)!r},{float(val)!r}\n")
        if st.figures():
            from . import plots
            plots.fairness_surface(grid, grid, values.reshape(levels, levels),
                                   out_dir / "fairness_surface.png", alpha)
        print(f"swept {levels}x{levels} grid -> {csv_path}")
    else:
        solver = st.get("solver", "auto")
        if solver == "grid":
            result = solve_grid(topo, params, spec,
                                levels_per_ue=int(st.get("levels", 32)))
        elif solver == "gradient":
            result = solve_gradient(topo, params, spec,
                                    starts=int(st.get("starts", 8)),
                                    seed=st.seed())
        else:
            result = solve_instance(topo, params, spec, solver,
                                    seed=st.seed())
        out_dir.mkdir(parents=True, exist_ok=True)
    _write_json(out_dir / "solve_result.json", {
        "alpha": alpha,
        "solver": result.solver_tag,
        "powers": result.powers.p.tolist(),
        "fairness": result.fairness,
        "evaluations": result.evaluations,
        "converged": result.converged,
    })
    powers = ", ".join(f"{p:.4g}" for p in result.powers.p)
    print(f"alpha={alpha:g} fairness={result.fairness:.6f} powers=[{powers}] "
          f"({result.solver_tag})")
    return 0


def cmd_reduce(args) -> int:
    st = Settings(args)
    graph_path = st.get("graph", None)
    if graph_path is None:
        raise ValueError("a graph file is required (--graph)")
    with open(graph_path) as fh:
        graph = parse_graph(fh.read())
    epsilon = float(st.get("epsilon", DEFAULT_EPSILON))
    m_value = float(st.get("m_value", DEFAULT_M))
    alpha = float(st.get("alpha", 0.0))
    levels = int(st.get("levels", 8))
    threshold = float(st.get("threshold", DEFAULT_THRESHOLD))
    inst = build_instance(graph, epsilon=epsilon, m_value=m_value, alpha=alpha)
    result = solve_grid(inst.topology, inst.params, FairnessSpec(inst.alpha),
                        levels_per_ue=levels)
    verdict, extracted = verify_correspondence(inst, result, threshold)
    mis_size, witnesses = brute_force_mis(graph)
    out_dir = st.out_dir()
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_json(out_dir / "reduced_instance.json", {
        "topology": topology_to_dict(inst.topology),
        "sigma2": inst.params.sigma2,
        "p_min": inst.params.p_min,
        "p_max": inst.params.p_max,
        "alpha": inst.alpha,
        "epsilon": inst.epsilon,
        "m_value": inst.m_value,
        "graph": {"n": graph.vertex_count,
                  "edges": sorted(list(e) for e in graph.edges)},
    })
    _write_json(out_dir / "reduction_report.json", {
        "verdict": verdict,
        "high_power_ues": sorted(extracted),
        "mis_size": mis_size,
        "mis_witness": sorted(witnesses[0]) if witnesses else [],
        "fairness": result.fairness,
        "powers": result.powers.p.tolist(),
    })
    print(f"{verdict}: high-power UEs {sorted(extracted)} vs maximum "
          f"independent set size {mis_size}")
    return 0


def cmd_explain(args) -> int:
    st = Settings(args)
    ckpt = st.get("checkpoint", None)
    if ckpt is None:
        raise ValueError("a checkpoint file is required (--checkpoint)")
    net = KanNetwork.load(ckpt)
    model = symbolic_export(net, probe_points=int(st.get("probe_points", 64)))
    net_ops = op_count(net)
    sym_ops = op_count(model)
    lines = [formula_text(model).rstrip("\n"), "", "# edge fits"]
    n_layers = len(model.layers)
    for li, edges in enumerate(model.layers):
        in_name = "x" if li == 0 else f"h{li}_"
        out_name = "y" if li == n_layers - 1 else f"h{li + 1}_"
        for e in edges:
            lines.append(f"# {in_name}{e.i + 1} -> {out_name}{e.o + 1}: "
                         f"{e.family}, r2={e.r2:.6f}")
    out_dir = st.out_dir()
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "formulas.txt").write_text("\n".join(lines) + "\n")
    model.save(out_dir / "symbolic_model.json")
    _write_json(out_dir / "op_count.json", {
        "network": net_ops,
        "symbolic": sym_ops,
        "network_total": total_ops(net_ops),
        "symbolic_total": total_ops(sym_ops),
    })
    print(f"exported {sum(len(e) for e in model.layers)} edge formulas; "
          f"ops {total_ops(net_ops)} (network) -> {total_ops(sym_ops)} "
          f"(symbolic)")
    return 0


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config document; flags "
                        "override its keys")
    common.add_argument("--out-dir", help="output directory (default .)")
    common.add_argument("--seed", type=int, help="master seed (default 0)")
    common.add_argument("--no-figures", action="store_true",
                        help="skip PNG rendering next to CSV reports")

    parser = argparse.ArgumentParser(
        prog="fairkan",
        description="Fair uplink power allocation: dataset generation, "
                    "decentralized spline-network training, oracles, "
                    "hardness-reduction checks, symbolic export.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", parents=[common],
                       help="solve random instances into a labelled dataset")
    p.add_argument("--ues", type=int, help="UE count (default 4)")
    p.add_argument("--bss", type=int, help="BS count (default 1)")
    p.add_argument("--size", type=int, help="record count (default 100)")
    p.add_argument("--solver", choices=["auto", "grid", "gradient"])
    p.add_argument("--sigma2", type=float, help="noise power")
    p.add_argument("--p-min", type=float)
    p.add_argument("--p-max", type=float)
    p.add_argument("--dataset-name", help="output file name "
                   "(default dataset.jsonl)")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train-eval", parents=[common],
                       help="train one network per BS and report test metrics")
    p.add_argument("--dataset", help="dataset file from `generate`")
    p.add_argument("--beta", type=float, help="train fraction (default 0.8)")
    p.add_argument("--epochs", type=int, help="default 500; 0 evaluates "
                   "the untrained baseline")
    p.add_argument("--lr", type=float)
    p.add_argument("--method", choices=["gd", "adam"])
    p.add_argument("--hidden", help='"auto", or comma-separated widths')
    p.add_argument("--intervals", type=int)
    p.add_argument("--order", type=int)
    p.add_argument("--threads", type=int, help="parallel BS trainings")
    p.set_defaults(func=cmd_train_eval)

    p = sub.add_parser("solve", parents=[common],
                       help="run an oracle on one topology file")
    p.add_argument("--topology", help="topology JSON, or 'demo' for the "
                   "bundled two-user instance")
    p.add_argument("--alpha", type=float, help="fairness exponent "
                   "(default 0.5)")
    p.add_argument("--solver", choices=["auto", "grid", "gradient"])
    p.add_argument("--levels", type=int, help="grid levels per UE")
    p.add_argument("--starts", type=int, help="gradient restarts")
    p.add_argument("--sweep", action="store_true",
                   help="emit the full two-UE fairness surface as CSV")
    p.add_argument("--sigma2", type=float)
    p.add_argument("--p-min", type=float)
    p.add_argument("--p-max", type=float)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("reduce", parents=[common],
                       help="reduce a graph to a power-allocation instance "
                            "and verify the independent-set correspondence")
    p.add_argument("--graph", help="edge list file: 'n <count>' header, "
                   "one 'u v' pair per line")
    p.add_argument("--epsilon", type=float)
    p.add_argument("--m-value", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--levels", type=int, help="grid levels per UE (default 8)")
    p.add_argument("--threshold", type=float,
                   help="high-power cut as a fraction of the box")
    p.set_defaults(func=cmd_reduce)

    p = sub.add_parser("explain", parents=[common],
                       help="export symbolic formulas and op counts from "
                            "a checkpoint")
    p.add_argument("--checkpoint", help="network file from train-eval")
    p.add_argument("--probe-points", type=int)
    p.set_defaults(func=cmd_explain)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except ValueError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except RuntimeError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
