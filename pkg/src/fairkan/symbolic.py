"""Symbolic read-out of a trained network plus a static op-count model.

Each active edge's learned activation is probed over the input range the
edge actually saw during training and refitted by least squares against a
small family of closed forms:

    affine       a*x + c
    cubic        a*(b - x)^3 + c
    quartic      a*(b - x)^4 + c
    log          a*log(b*x) + c          (natural log, needs x > 0)
    silu_affine  a*silu(b*x) + c
    const        c                       (degenerate input ranges)

Families nonlinear in b are fitted by a deterministic scan over b with a
linear solve for (a, c) at each candidate, plus two local refinement
rounds. The winner is the family with the highest r^2.

The op-count model charges, per active spline edge, order*(order+1) basis
multiplications, (order+1) coefficient multiplications and `order`
additions for the spline part; 2 mults, 1 add and 1 exp for the silu; one
multiplication for omega and one addition to join the two terms. Symbolic
edges are charged from their expression tree with x^n costed as n-1
multiplications. Node sums cost (incoming - 1) additions; input/output
affine norms cost 1 mult + 1 add per feature, plus 1 log per
log10-transformed feature.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .kan import InputNorm, KanNetwork, OutputNorm, activation_eval, silu

FAMILIES = ("affine", "cubic", "quartic", "log", "silu_affine", "const")
DEGENERATE_WIDTH = 1e-9


def _r2(y, yhat):
    y = np.asarray(y, float)
    sse = float(np.sum((y - yhat) ** 2))
    sst = float(np.sum((y - y.mean()) ** 2))
    if sst <= 1e-18:
        return 1.0 if sse <= 1e-18 else -math.inf
    return 1.0 - sse / sst


def family_eval(family: str, params: dict, x):
    x = np.asarray(x, float)
    a = params.get("a", 0.0)
    b = params.get("b", 0.0)
    c = params.get("c", 0.0)
    if family == "affine":
        return a * x + c
    if family == "cubic":
        return a * (b - x) ** 3 + c
    if family == "quartic":
        return a * (b - x) ** 4 + c
    if family == "log":
        return a * np.log(np.maximum(b * x, 1e-300)) + c
    if family == "silu_affine":
        return a * silu(b * x) + c
    if family == "const":
        return np.full_like(x, c)
    raise ValueError(f"unknown family {family!r}")


def _lin_fit(g, y):
    """Least squares y ~ a*g + c; returns (a, c, sse)."""
    A = np.column_stack([g, np.ones_like(g)])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    return float(coef[0]), float(coef[1]), float(resid @ resid)


def _scan_fit(x, y, transform, b_grid, rounds=2):
    """Best (a, b, c) over a deterministic b scan with local refinement."""
    best = (math.inf, 0.0, 0.0, 0.0)   # sse, a, b, c
    grid = np.asarray(b_grid, float)
    for _ in range(rounds + 1):
        for b in grid:
            a, c, sse = _lin_fit(transform(b, x), y)
            if sse < best[0]:
                best = (sse, a, float(b), c)
        span = (grid[-1] - grid[0]) / max(len(grid) - 1, 1)
        grid = np.linspace(best[2] - span, best[2] + span, 21)
    _, a, b, c = best
    return a, b, c


def fit_family(family: str, x, y):
    """Fit one family; returns (params, r2). Inapplicable families get -inf."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    if family == "const":
        c = float(y.mean())
        return {"c": c}, _r2(y, np.full_like(y, c))
    if family == "affine":
        a, c, _ = _lin_fit(x, y)
        params = {"a": a, "c": c}
    elif family in ("cubic", "quartic"):
        p = 3 if family == "cubic" else 4
        lo, hi = float(x.min()), float(x.max())
        span = max(hi - lo, 1e-3)
        grid = np.linspace(lo - span, hi + span, 81)
        a, b, c = _scan_fit(x, y, lambda b, t: (b - t) ** p, grid)
        params = {"a": a, "b": b, "c": c}
    elif family == "log":
        if x.min() <= 0:
            return {}, -math.inf
        # a*log(b*x) + c == a*log(x) + (a*log(b) + c); two free parameters.
        a, c1, _ = _lin_fit(np.log(x), y)
        if abs(a) < 1e-12:
            params = {"a": a, "b": 1.0, "c": c1}
        else:
            b = math.exp(float(np.clip(c1 / a, -80.0, 80.0)))
            c = c1 - a * math.log(b)   # 0 unless the clip bit
            params = {"a": a, "b": b, "c": c}
    elif family == "silu_affine":
        grid = np.linspace(-8.0, 8.0, 161)
        a, b, c = _scan_fit(x, y, lambda b, t: silu(b * t), grid)
        params = {"a": a, "b": b, "c": c}
    else:
        raise ValueError(f"unknown family {family!r}")
    return params, _r2(y, family_eval(family, params, x))


def fit_all_families(x, y):
    """Every family's (params, r2) for one probed edge."""
    return {fam: fit_family(fam, x, y) for fam in FAMILIES if fam != "const"}


@dataclass(frozen=True)
class EdgeFit:
    i: int
    o: int
    family: str
    params: dict
    r2: float


@dataclass
class SymbolicModel:
    """Closed-form mirror of a pruned network: edge formulas, same sums,
    same input/output normalization."""

    dims: list
    layers: list              # one list of EdgeFit per network layer
    input_norm: InputNorm
    output_norm: OutputNorm

    def predict(self, X):
        X = np.asarray(X, float)
        single = X.ndim == 1
        H = self.input_norm.apply(np.atleast_2d(X))
        for dim_out, edges in zip(self.dims[1:], self.layers):
            out = np.zeros((len(H), dim_out))
            for e in edges:
                out[:, e.o] += family_eval(e.family, e.params, H[:, e.i])
            H = out
        Y = self.output_norm.to_watts(H)
        return Y[0] if single else Y

    def edge_r2s(self):
        return np.array([e.r2 for edges in self.layers for e in edges])

    def to_dict(self):
        return {
            "dims": list(self.dims),
            "layers": [[{"i": e.i, "o": e.o, "family": e.family,
                         "params": e.params, "r2": e.r2} for e in edges]
                       for edges in self.layers],
            "input_norm": {"log": self.input_norm.log.astype(int).tolist(),
                           "lo": self.input_norm.lo.tolist(),
                           "hi": self.input_norm.hi.tolist()},
            "output_norm": {"p_min": self.output_norm.p_min,
                            "p_max": self.output_norm.p_max},
        }

    @staticmethod
    def from_dict(doc):
        layers = [[EdgeFit(e["i"], e["o"], e["family"], e["params"], e["r2"])
                   for e in edges] for edges in doc["layers"]]
        norm = InputNorm(np.array(doc["input_norm"]["log"], bool),
                         np.array(doc["input_norm"]["lo"], float),
                         np.array(doc["input_norm"]["hi"], float))
        onorm = OutputNorm(doc["output_norm"]["p_min"],
                           doc["output_norm"]["p_max"])
        return SymbolicModel(list(doc["dims"]), layers, norm, onorm)

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)
            fh.write("\n")

    @staticmethod
    def load(path):
        with open(path) as fh:
            return SymbolicModel.from_dict(json.load(fh))


def symbolic_export(net: KanNetwork, probe_points: int = 64) -> SymbolicModel:
    """Fit a closed form to every active edge of a trained network.

    Edges are probed over the input ranges recorded by ``net.prune`` /
    ``edge_importances``; without recorded ranges the spline domain is
    used. Degenerate ranges (width < 1e-9) get the constant family.
    """
    if probe_points < 8:
        raise ValueError("need at least 8 probe points")
    ranges = net.observed_ranges
    if ranges is None:
        ranges = [(np.full(l.in_dim, l.domain[0]), np.full(l.in_dim, l.domain[1]))
                  for l in net.layers]
    dims = [net.in_dim] + [l.out_dim for l in net.layers]
    layers = []
    for layer, (lo, hi) in zip(net.layers, ranges):
        edges = []
        for i, o in np.argwhere(layer.mask != 0):
            act = layer.activation(int(i), int(o))
            a, b = float(lo[i]), float(hi[i])
            if b - a < DEGENERATE_WIDTH:
                c = activation_eval(act, 0.5 * (a + b))
                edges.append(EdgeFit(int(i), int(o), "const", {"c": c}, 1.0))
                continue
            x = np.linspace(a, b, probe_points)
            y = activation_eval(act, x)
            fits = fit_all_families(x, y)
            fam = max(fits, key=lambda f: fits[f][1])
            params, r2 = fits[fam]
            edges.append(EdgeFit(int(i), int(o), fam, params, r2))
        layers.append(edges)
    return SymbolicModel(dims, layers, net.input_norm, net.output_norm)


# ------------------------------------------------------------ presentation

_TEMPLATES = {
    "affine": "{a:.6g}*{x} + {c:.6g}",
    "cubic": "{a:.6g}*({b:.6g} - {x})^3 + {c:.6g}",
    "quartic": "{a:.6g}*({b:.6g} - {x})^4 + {c:.6g}",
    "log": "{a:.6g}*log({b:.6g}*{x}) + {c:.6g}",
    "silu_affine": "{a:.6g}*silu({b:.6g}*{x}) + {c:.6g}",
    "const": "{c:.6g}",
}


def _edge_text(e: EdgeFit, var: str) -> str:
    return _TEMPLATES[e.family].format(x=var, **e.params)


def formula_text(model: SymbolicModel) -> str:
    """Human-readable formulas, one line per node, hidden nodes named h*."""
    lines = ["# symbolic model: inputs x1..x{}, outputs y1..y{}".format(
        model.dims[0], model.dims[-1])]
    lines.append("# inputs are normalized features; outputs are in [0, 1] "
                 "before the affine map to watts")
    n_layers = len(model.layers)
    for li, edges in enumerate(model.layers):
        in_name = "x" if li == 0 else f"h{li}_"
        out_name = "y" if li == n_layers - 1 else f"h{li + 1}_"
        by_node: dict[int, list] = {}
        for e in edges:
            by_node.setdefault(e.o, []).append(e)
        for o in range(model.dims[li + 1]):
            terms = [f"({_edge_text(e, f'{in_name}{e.i + 1}')})"
                     for e in by_node.get(o, [])]
            rhs = " + ".join(terms) if terms else "0"
            lines.append(f"{out_name}{o + 1} = {rhs}")
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------- op counts

_EDGE_COST = {
    "affine": {"adds": 1, "mults": 1, "exps": 0, "logs": 0},
    "cubic": {"adds": 2, "mults": 3, "exps": 0, "logs": 0},
    "quartic": {"adds": 2, "mults": 4, "exps": 0, "logs": 0},
    "log": {"adds": 1, "mults": 2, "exps": 0, "logs": 1},
    "silu_affine": {"adds": 2, "mults": 4, "exps": 1, "logs": 0},
    "const": {"adds": 0, "mults": 0, "exps": 0, "logs": 0},
}


def _zero():
    return {"adds": 0, "mults": 0, "exps": 0, "logs": 0}


def _add(acc, extra, times=1):
    for k in acc:
        acc[k] += times * extra.get(k, 0)


def _norm_costs(acc, in_dim, out_dim, n_log_features):
    _add(acc, {"adds": 1, "mults": 1}, times=in_dim)
    _add(acc, {"logs": 1}, times=n_log_features)
    _add(acc, {"adds": 1, "mults": 1}, times=out_dim)


def op_count(model) -> dict:
    """Scalar-arithmetic counts {adds, mults, exps, logs} for one forward
    pass; accepts a KanNetwork or a SymbolicModel. See the module docstring
    for the cost model."""
    acc = _zero()
    if isinstance(model, KanNetwork):
        for layer in model.layers:
            k = layer.order
            per_edge = {"adds": k + 2, "mults": k * (k + 1) + (k + 1) + 3,
                        "exps": 1, "logs": 0}
            active_per_node = (layer.mask != 0).sum(axis=0)
            _add(acc, per_edge, times=int(active_per_node.sum()))
            _add(acc, {"adds": 1},
                 times=int(np.maximum(active_per_node - 1, 0).sum()))
        _norm_costs(acc, model.in_dim, model.out_dim,
                    int(model.input_norm.log.sum()))
        return acc
    if isinstance(model, SymbolicModel):
        for dim_out, edges in zip(model.dims[1:], model.layers):
            per_node = [0] * dim_out
            for e in edges:
                _add(acc, _EDGE_COST[e.family])
                per_node[e.o] += 1
            _add(acc, {"adds": sum(max(n - 1, 0) for n in per_node)})
        _norm_costs(acc, model.dims[0], model.dims[-1],
                    int(model.input_norm.log.sum()))
        return acc
    raise TypeError(f"op_count supports KanNetwork and SymbolicModel, "
                    f"got {type(model).__name__}")


def total_ops(counts: dict) -> int:
    return sum(counts.values())
