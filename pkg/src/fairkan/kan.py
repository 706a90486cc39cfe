"""From-scratch Kolmogorov-Arnold network on B-spline activations.

Every edge carries phi(x) = omega * (silu(x) + sum_i c_i B_i(x)) with the
spline input clamped to the grid domain [-1, 1]; the silu residual sees the
raw input, so the activation stays total and keeps a gradient everywhere.
Node values are the plain sums of their incoming edge activations.

Training is full-batch gradient descent on MSE with a backtracking line
search (an Adam variant is available through TrainConfig.method), all
analytic gradients, fully deterministic given the seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .bspline import bspline_basis, bspline_basis_deriv, n_bases, uniform_knots

DIVERGENCE_LIMIT = 1e6


def silu(x):
    # x / (1 + exp(-x)), evaluated stably on both tails
    return x * sigmoid(x)


def sigmoid(x):
    out = np.empty_like(x, dtype=float)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def dsilu(x):
    s = sigmoid(x)
    return s * (1.0 + x * (1.0 - s))


@dataclass(frozen=True)
class SplineActivation:
    """A single edge's activation, a read-only view used for probing."""

    omega: float
    coeffs: np.ndarray
    knots: np.ndarray
    order: int

    def __post_init__(self):
        if np.any(np.diff(self.knots) < 0):
            raise ValueError("knot vector must be non-decreasing")
        want = len(self.knots) - 1 - self.order
        if len(self.coeffs) != want:
            raise ValueError(f"need {want} coefficients, got {len(self.coeffs)}")

    @property
    def in_domain(self):
        return float(self.knots[self.order]), float(self.knots[-self.order - 1])


def activation_eval(act: SplineActivation, x):
    """omega * (silu(x) + spline(x)); accepts scalars or arrays."""
    xs = np.asarray(x, dtype=float)
    spline = bspline_basis(xs, act.knots, act.order) @ act.coeffs
    out = act.omega * (silu(xs) + spline)
    return float(out) if np.isscalar(x) else out


class KanLayer:
    """Dense grid of spline activations from in_dim inputs to out_dim sums."""

    def __init__(self, in_dim, out_dim, intervals=5, order=3, rng=None,
                 omega=None, coeffs=None, mask=None):
        self.in_dim = int(in_dim)
        self.out_dim = int(out_dim)
        self.intervals = int(intervals)
        self.order = int(order)
        self.knots = uniform_knots(intervals, order)
        nb = n_bases(intervals, order)
        if coeffs is None:
            rng = rng or np.random.default_rng(0)
            h = (self.knots[-self.order - 1] - self.knots[self.order]) / intervals
            coeffs = rng.uniform(-0.1, 0.1, size=(in_dim, out_dim, nb)) * h
        if omega is None:
            omega = np.full((in_dim, out_dim), 1.0 / in_dim)
        if mask is None:
            mask = np.ones((in_dim, out_dim))
        self.omega = np.asarray(omega, float).reshape(in_dim, out_dim)
        self.coeffs = np.asarray(coeffs, float).reshape(in_dim, out_dim, nb)
        self.mask = np.asarray(mask, float).reshape(in_dim, out_dim)

    @property
    def domain(self):
        return float(self.knots[self.order]), float(self.knots[-self.order - 1])

    def activation(self, i: int, o: int) -> SplineActivation:
        return SplineActivation(float(self.omega[i, o]) * float(self.mask[i, o]),
                                self.coeffs[i, o].copy(), self.knots, self.order)

    def forward(self, X, want_cache=False):
        X = np.asarray(X, float)
        lo, hi = self.domain
        Xc = np.clip(X, lo, hi)
        if want_cache:
            B, dB = bspline_basis_deriv(Xc, self.knots, self.order)
        else:
            B, dB = bspline_basis(Xc, self.knots, self.order), None
        spl = np.einsum("bin,ion->bio", B, self.coeffs)
        pre = silu(X)[:, :, None] + spl
        W = self.omega * self.mask
        out = np.einsum("bio,io->bo", pre, W)
        if not want_cache:
            return out
        cache = (X, Xc, B, dB, pre)
        return out, cache

    def backward(self, G, cache):
        """Given dL/dout (batch, out), returns (dL/dX, grads dict)."""
        X, Xc, B, dB, pre = cache
        W = self.omega * self.mask
        d_omega = np.einsum("bo,bio->io", G, pre) * self.mask
        d_coeffs = self.mask[:, :, None] * self.omega[:, :, None] \
            * np.einsum("bo,bin->ion", G, B)
        inside = ((X >= self.domain[0]) & (X <= self.domain[1])).astype(float)
        gw = G @ W.T                                    # (batch, in)
        m1 = np.einsum("bo,ion->bin", G, W[:, :, None] * self.coeffs)
        dX = dsilu(X) * gw + inside * np.einsum("bin,bin->bi", dB, m1)
        return dX, {"omega": d_omega, "coeffs": d_coeffs}


@dataclass
class InputNorm:
    """Per-feature map to the spline domain: optional log10, then affine.

    Features flagged in `log` are log10-transformed first (path gains span
    several orders of magnitude); the affine part maps [lo, hi] of the
    transformed value onto [-1, 1].
    """

    log: np.ndarray
    lo: np.ndarray
    hi: np.ndarray

    def apply(self, X):
        X = np.asarray(X, float)
        Z = np.where(self.log, np.log10(np.maximum(X, 1e-30)), X)
        return 2.0 * (Z - self.lo) / (self.hi - self.lo) - 1.0

    @staticmethod
    def identity(dim):
        return InputNorm(np.zeros(dim, bool), np.full(dim, -1.0), np.ones(dim))

    @staticmethod
    def fit(X, log_features):
        """Training-set min/max per feature; constants map to 0."""
        X = np.asarray(X, float)
        log = np.asarray(log_features, bool)
        Z = np.where(log, np.log10(np.maximum(X, 1e-30)), X)
        lo, hi = Z.min(axis=0), Z.max(axis=0)
        flat = hi - lo < 1e-12
        lo = np.where(flat, lo - 0.5, lo)
        hi = np.where(flat, hi + 0.5, hi)
        return InputNorm(log, lo, hi)


@dataclass
class OutputNorm:
    """Affine map between model outputs in [0, 1] and watts in [p_min, p_max]."""

    p_min: float = 0.0
    p_max: float = 1.0

    def to_unit(self, p):
        return (np.asarray(p, float) - self.p_min) / (self.p_max - self.p_min)

    def to_watts(self, y):
        y = np.clip(np.asarray(y, float), 0.0, 1.0)
        return self.p_min + (self.p_max - self.p_min) * y


@dataclass
class TrainConfig:
    epochs: int = 500
    lr: float = 1.0
    seed: int = 0
    method: str = "gd"          # "gd" (line-searched descent) or "adam"
    batch_size: int | None = None   # adam only; None = full batch
    divergence_limit: float = DIVERGENCE_LIMIT


class KanNetwork:
    """Composition of KanLayers with input/output normalization."""

    def __init__(self, layers, input_norm: InputNorm, output_norm: OutputNorm,
                 seed: int = 0, train_config: dict | None = None):
        for a, b in zip(layers, layers[1:]):
            if a.out_dim != b.in_dim:
                raise ValueError(f"layer dims mismatch: {a.out_dim} -> {b.in_dim}")
        self.layers = list(layers)
        self.input_norm = input_norm
        self.output_norm = output_norm
        self.seed = seed
        self.train_config = train_config or {}
        self.observed_ranges = None   # filled by prune(), used by symbolic export

    @staticmethod
    def build(in_dim, out_dim, hidden="auto", intervals=5, order=3, seed=0,
              log_features=None):
        """hidden: "auto" = one hidden layer of width 2*in_dim+1; or an
        explicit list of widths; or None for a direct in->out layer."""
        if hidden == "auto":
            widths = [2 * in_dim + 1]
        elif hidden is None:
            widths = []
        else:
            widths = list(hidden)
        dims = [in_dim] + widths + [out_dim]
        rng = np.random.default_rng(seed)
        layers = [KanLayer(a, b, intervals, order, rng)
                  for a, b in zip(dims, dims[1:])]
        if log_features is None:
            norm = InputNorm.identity(in_dim)
        else:
            norm = InputNorm(np.asarray(log_features, bool),
                             np.full(in_dim, -1.0), np.ones(in_dim))
        return KanNetwork(layers, norm, OutputNorm(), seed=seed)

    @property
    def in_dim(self):
        return self.layers[0].in_dim

    @property
    def out_dim(self):
        return self.layers[-1].out_dim

    # ------------------------------------------------------------ forward

    def forward_normalized(self, Z):
        """Raw network output from already-normalized inputs (no output clamp)."""
        H = np.asarray(Z, float)
        for layer in self.layers:
            H = layer.forward(H)
        return H

    def forward(self, X):
        """Watts from raw features; accepts (in,) or (batch, in)."""
        X = np.asarray(X, float)
        single = X.ndim == 1
        Z = self.input_norm.apply(np.atleast_2d(X))
        if Z.shape[1] != self.in_dim:
            raise ValueError(f"expected {self.in_dim} features, got {Z.shape[1]}")
        Y = self.output_norm.to_watts(self.forward_normalized(Z))
        return Y[0] if single else Y

    # ----------------------------------------------------------- training

    def _params(self):
        out = []
        for layer in self.layers:
            out.extend([layer.omega, layer.coeffs])
        return out

    def _set_params(self, params):
        for k, layer in enumerate(self.layers):
            layer.omega = params[2 * k]
            layer.coeffs = params[2 * k + 1]

    def _loss(self, Z, T):
        R = self.forward_normalized(Z) - T
        return float(np.mean(R * R))

    def _loss_and_grads(self, Z, T):
        H = Z
        caches = []
        for layer in self.layers:
            H, cache = layer.forward(H, want_cache=True)
            caches.append(cache)
        R = H - T
        loss = float(np.mean(R * R))
        G = (2.0 / R.size) * R
        grads = []
        for layer, cache in zip(reversed(self.layers), reversed(caches)):
            G, g = layer.backward(G, cache)
            grads.append(g)
        grads.reverse()
        flat = []
        for g in grads:
            flat.extend([g["omega"], g["coeffs"]])
        return loss, flat

    def fit_input_norm(self, X):
        self.input_norm = InputNorm.fit(X, self.input_norm.log)

    def train(self, X, Y, config: TrainConfig | None = None):
        """Fit raw features X to watt targets Y; returns the loss history.

        The input norm must already be fitted (or fit here if virgin
        identity); targets are normalized to [0, 1] internally and the
        history reports MSE in that normalized space.
        """
        config = config or TrainConfig()
        X = np.atleast_2d(np.asarray(X, float))
        Y = np.atleast_2d(np.asarray(Y, float))
        if len(X) == 0:
            raise ValueError("empty training set")
        Z = self.input_norm.apply(X)
        T = self.output_norm.to_unit(Y)
        if np.any(T < -1e-9) or np.any(T > 1 + 1e-9):
            raise ValueError("targets outside the output range")
        if config.method == "gd":
            history = self._train_gd(Z, T, config)
        elif config.method == "adam":
            history = self._train_adam(Z, T, config)
        else:
            raise ValueError(f"unknown training method {config.method!r}")
        self.train_config = {"epochs": config.epochs, "lr": config.lr,
                             "seed": config.seed, "method": config.method,
                             "batch_size": config.batch_size}
        return history

    def _train_gd(self, Z, T, config):
        loss, grads = self._loss_and_grads(Z, T)
        self._check_divergence(loss, config)
        history = [loss]
        params = [p.copy() for p in self._params()]
        step = config.lr
        for _ in range(config.epochs):
            gnorm2 = sum(float(np.sum(g * g)) for g in grads)
            if gnorm2 == 0.0:
                history.append(loss)
                continue
            trial, accepted = step, False
            while trial >= 1e-16:
                cand = [p - trial * g for p, g in zip(params, grads)]
                self._set_params(cand)
                closs = self._loss(Z, T)
                if closs <= loss - 1e-4 * trial * gnorm2:
                    accepted = True
                    break
                trial *= 0.5
            if not accepted:
                self._set_params(params)
                history.append(loss)
                continue
            params, loss = cand, closs
            self._check_divergence(loss, config)
            step = min(trial * 2.0, 1e3)
            loss, grads = self._loss_and_grads(Z, T)
            history.append(loss)
        self._set_params(params)
        return history

    def _train_adam(self, Z, T, config):
        rng = np.random.default_rng(config.seed)
        params = [p.copy() for p in self._params()]
        self._set_params(params)
        m = [np.zeros_like(p) for p in params]
        v = [np.zeros_like(p) for p in params]
        b1, b2, eps = 0.9, 0.999, 1e-8
        lr = config.lr if config.lr < 1.0 else 1e-2
        n = len(Z)
        bs = config.batch_size or n
        history = []
        best_loss, best_params = np.inf, params
        t = 0
        for _ in range(config.epochs):
            order = rng.permutation(n) if bs < n else np.arange(n)
            for s in range(0, n, bs):
                idx = order[s:s + bs]
                _, grads = self._loss_and_grads(Z[idx], T[idx])
                t += 1
                for k, g in enumerate(grads):
                    m[k] = b1 * m[k] + (1 - b1) * g
                    v[k] = b2 * v[k] + (1 - b2) * g * g
                    mh = m[k] / (1 - b1 ** t)
                    vh = v[k] / (1 - b2 ** t)
                    params[k] = params[k] - lr * mh / (np.sqrt(vh) + eps)
                self._set_params(params)
            loss = self._loss(Z, T)
            self._check_divergence(loss, config)
            history.append(loss)
            if loss < best_loss:
                best_loss = loss
                best_params = [p.copy() for p in params]
        self._set_params(best_params)
        return history

    @staticmethod
    def _check_divergence(loss, config):
        if not np.isfinite(loss) or loss > config.divergence_limit:
            raise RuntimeError(
                f"training diverged: loss {loss} exceeds "
                f"{config.divergence_limit}; lower the learning rate")

    # ------------------------------------------------------------ pruning

    def edge_importances(self, X):
        """Per-layer mean |edge activation| over raw inputs X; also records
        the per-layer observed input ranges for later symbolic probing."""
        Z = self.input_norm.apply(np.atleast_2d(np.asarray(X, float)))
        H = Z
        importances, ranges = [], []
        for layer in self.layers:
            ranges.append((H.min(axis=0), H.max(axis=0)))
            lo, hi = layer.domain
            Hc = np.clip(H, lo, hi)
            B = bspline_basis(Hc, layer.knots, layer.order)
            spl = np.einsum("bin,ion->bio", B, layer.coeffs)
            act = (silu(H)[:, :, None] + spl) * (layer.omega * layer.mask)
            importances.append(np.mean(np.abs(act), axis=0))
            H = act.sum(axis=1)
        self.observed_ranges = ranges
        return importances

    def prune(self, X, threshold):
        """Mask edges whose mean |activation| over X falls below threshold.

        If that would disconnect every incoming edge of some node, the
        highest-importance incoming edge is restored and the node reported
        in the rollback list.
        """
        importances = self.edge_importances(X)
        report = {"masked": 0, "rollbacks": []}
        for li, (layer, imp) in enumerate(zip(self.layers, importances)):
            new_mask = layer.mask * (imp >= threshold)
            for o in range(layer.out_dim):
                if new_mask[:, o].sum() == 0 and layer.mask[:, o].sum() > 0:
                    keep = int(np.argmax(imp[:, o]))
                    new_mask[keep, o] = 1.0
                    report["rollbacks"].append((li, o))
            report["masked"] += int(np.sum((layer.mask != 0) & (new_mask == 0)))
            layer.mask = new_mask
        return report

    def active_edges(self):
        return [np.argwhere(layer.mask != 0) for layer in self.layers]

    # --------------------------------------------------------- checkpoint

    def to_dict(self):
        doc = {
            "seed": self.seed,
            "train_config": self.train_config,
            "input_norm": {"log": self.input_norm.log.astype(int).tolist(),
                           "lo": self.input_norm.lo.tolist(),
                           "hi": self.input_norm.hi.tolist()},
            "output_norm": {"p_min": self.output_norm.p_min,
                            "p_max": self.output_norm.p_max},
            "layers": [],
        }
        for layer in self.layers:
            doc["layers"].append({
                "in_dim": layer.in_dim, "out_dim": layer.out_dim,
                "intervals": layer.intervals, "order": layer.order,
                "omega": layer.omega.tolist(),
                "coeffs": layer.coeffs.tolist(),
                "mask": layer.mask.tolist(),
            })
        if self.observed_ranges is not None:
            doc["observed_ranges"] = [[lo.tolist(), hi.tolist()]
                                      for lo, hi in self.observed_ranges]
        return doc

    @staticmethod
    def from_dict(doc):
        layers = []
        for ld in doc["layers"]:
            layers.append(KanLayer(ld["in_dim"], ld["out_dim"], ld["intervals"],
                                   ld["order"], omega=np.array(ld["omega"]),
                                   coeffs=np.array(ld["coeffs"]),
                                   mask=np.array(ld["mask"])))
        norm = InputNorm(np.array(doc["input_norm"]["log"], bool),
                         np.array(doc["input_norm"]["lo"], float),
                         np.array(doc["input_norm"]["hi"], float))
        onorm = OutputNorm(doc["output_norm"]["p_min"], doc["output_norm"]["p_max"])
        net = KanNetwork(layers, norm, onorm, seed=doc.get("seed", 0),
                         train_config=doc.get("train_config"))
        if "observed_ranges" in doc:
            net.observed_ranges = [(np.array(lo), np.array(hi))
                                   for lo, hi in doc["observed_ranges"]]
        return net

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)
            fh.write("\n")

    @staticmethod
    def load(path):
        with open(path) as fh:
            return KanNetwork.from_dict(json.load(fh))
