"""From-scratch multilayer perceptron.

Sigmoid hidden layers, linear output layer.  Training via online
backpropagation or Levenberg-Marquardt on the damped normal equations.
Output-layer deltas use the linear activation's unit derivative; hidden
deltas carry the logistic derivative o(1-o).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .raster import Grid, assert_aligned

LM_LAMBDA_MAX = 1e10


class MlpError(ValueError):
    pass


class MlpTrainingError(RuntimeError):
    """LM damping escalated past its ceiling without an acceptable step."""


@dataclass(frozen=True)
class MlpTopology:
    """Layer sizes, input first and output last; >=1 hidden layer."""

    layer_sizes: tuple
    hidden_activation: str = "sigmoid"  # "linear" only for test fixtures

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if len(sizes) < 3:
            raise MlpError(f"need input, >=1 hidden, output layers, got {sizes}")
        if any(s < 1 for s in sizes):
            raise MlpError(f"layer sizes must be positive, got {sizes}")
        if self.hidden_activation not in ("sigmoid", "linear"):
            raise MlpError(f"unknown hidden activation {self.hidden_activation!r}")

    @property
    def n_inputs(self):
        return self.layer_sizes[0]

    @property
    def n_outputs(self):
        return self.layer_sizes[-1]


@dataclass
class MlpWeights:
    """Per layer: weight matrix (units x inputs) and bias vector."""

    topology: MlpTopology
    W: list
    b: list

    def copy(self) -> "MlpWeights":
        return MlpWeights(self.topology, [w.copy() for w in self.W], [bb.copy() for bb in self.b])

    def n_params(self) -> int:
        return sum(w.size + bb.size for w, bb in zip(self.W, self.b))


@dataclass(frozen=True)
class Pattern:
    """One training example: input vector and target vector."""

    input: tuple
    target: tuple


@dataclass(frozen=True)
class TrainConfig:
    algorithm: str = "levenberg_marquardt"
    learning_rate: float = 0.5
    lm_lambda0: float = 1e-3
    lm_lambda_factor: float = 10.0
    max_epochs: int = 100
    error_goal: float = 0.005
    rng_seed: int = 0

    def __post_init__(self):
        if self.algorithm not in ("backprop", "levenberg_marquardt"):
            raise MlpError(f"unknown algorithm {self.algorithm!r}")
        if not 0 < self.learning_rate <= 1:
            raise MlpError(f"learning_rate must be in (0, 1], got {self.learning_rate}")
        if not self.lm_lambda0 > 0 or not self.lm_lambda_factor > 1:
            raise MlpError("lm_lambda0 must be > 0 and lm_lambda_factor > 1")
        if self.max_epochs < 1 or not self.error_goal > 0:
            raise MlpError("max_epochs must be >= 1 and error_goal > 0")


def init_weights(topology: MlpTopology, seed: int) -> MlpWeights:
    """Small random initial weights, uniform in [-0.5, 0.5]."""
    rng = np.random.default_rng(seed)
    W, b = [], []
    sizes = topology.layer_sizes
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        W.append(rng.uniform(-0.5, 0.5, size=(n_out, n_in)))
        b.append(rng.uniform(-0.5, 0.5, size=n_out))
    return MlpWeights(topology, W, b)


def _sigmoid(u):
    return 1.0 / (1.0 + np.exp(-u))


def patterns_to_arrays(patterns):
    """Stack a list of Pattern (or (x, t) pairs) into X (N,n) and T (N,m)."""
    xs, ts = [], []
    for p in patterns:
        if isinstance(p, Pattern):
            xs.append(p.input)
            ts.append(p.target)
        else:
            xs.append(p[0])
            ts.append(p[1])
    X = np.asarray(xs, float)
    T = np.asarray(ts, float)
    if X.ndim == 1:
        X = X[:, None]
    if T.ndim == 1:
        T = T[:, None]
    return X, T


def forward(weights: MlpWeights, x):
    """One forward pass; returns (activations per layer, output vector).

    activations[0] is the input; the last entry is the linear output.
    """
    x = np.asarray(x, dtype=float)
    acts = forward_batch(weights, x.reshape(1, -1))
    return [a[0] for a in acts], acts[-1][0]


def forward_batch(weights: MlpWeights, X):
    """Forward pass over an (N, n) batch; returns activations per layer."""
    X = np.asarray(X, dtype=float)
    if X.shape[1] != weights.topology.n_inputs:
        raise MlpError(f"feature count {X.shape[1]} != {weights.topology.n_inputs}")
    acts = [X]
    a = X
    last = len(weights.W) - 1
    hidden_linear = weights.topology.hidden_activation == "linear"
    for l, (W, b) in enumerate(zip(weights.W, weights.b)):
        z = a @ W.T + b
        a = z if (l == last or hidden_linear) else _sigmoid(z)
        acts.append(a)
    return acts


def mse(weights: MlpWeights, X, T) -> float:
    """Mean squared error over all patterns and outputs."""
    out = forward_batch(weights, X)[-1]
    return float(np.mean((out - np.asarray(T, float)) ** 2))


def _deltas(weights: MlpWeights, acts, err):
    """Per-layer deltas for one pattern (or batch) given output error t - o."""
    hidden_linear = weights.topology.hidden_activation == "linear"
    nlayers = len(weights.W)
    deltas = [None] * nlayers
    deltas[-1] = err  # linear output: derivative 1
    for l in range(nlayers - 2, -1, -1):
        a = acts[l + 1]
        back = deltas[l + 1] @ weights.W[l + 1]
        deltas[l] = back if hidden_linear else a * (1.0 - a) * back
    return deltas


def backprop_epoch(weights: MlpWeights, patterns, eta: float):
    """One online backprop epoch: sequential per-pattern weight updates.

    Returns (updated weights, epoch MSE); the MSE is measured at each
    pattern's presentation time.  eta = 0 leaves the weights unchanged.
    """
    if not 0 <= eta <= 1:
        raise MlpError(f"learning rate must be in [0, 1], got {eta}")
    X, T = patterns_to_arrays(patterns)
    w = weights.copy()
    sq_sum = 0.0
    count = 0
    for x, t in zip(X, T):
        acts = forward_batch(w, x.reshape(1, -1))
        out = acts[-1][0]
        err = t - out
        sq_sum += float(np.sum(err**2))
        count += err.size
        deltas = _deltas(w, [a[0] for a in acts], err)
        for l in range(len(w.W)):
            w.W[l] += eta * np.outer(deltas[l], acts[l][0])
            w.b[l] += eta * deltas[l]
    return w, sq_sum / count


def loss_gradient(weights: MlpWeights, patterns):
    """Flat gradient of 0.5 * sum((t - o)^2) over the whole pattern set."""
    X, T = patterns_to_arrays(patterns)
    acts = forward_batch(weights, X)
    err = acts[-1] - T  # d loss / d output
    deltas = _deltas(weights, acts, err)
    parts = []
    for l in range(len(weights.W)):
        parts.append(np.einsum("nj,ni->ji", deltas[l], acts[l]).ravel())
        parts.append(deltas[l].sum(axis=0))
    return np.concatenate(parts)


def flatten_weights(weights: MlpWeights):
    parts = []
    for W, b in zip(weights.W, weights.b):
        parts.append(W.ravel())
        parts.append(b)
    return np.concatenate(parts)


def unflatten_weights(topology: MlpTopology, flat) -> MlpWeights:
    flat = np.asarray(flat, float)
    W, b = [], []
    pos = 0
    sizes = topology.layer_sizes
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        W.append(flat[pos : pos + n_out * n_in].reshape(n_out, n_in).copy())
        pos += n_out * n_in
        b.append(flat[pos : pos + n_out].copy())
        pos += n_out
    if pos != flat.size:
        raise MlpError(f"flat vector length {flat.size} != {pos} expected")
    return MlpWeights(topology, W, b)


def residual_jacobian(weights: MlpWeights, X, T):
    """Residuals e = o - t and their Jacobian w.r.t. all weights.

    Rows are ordered pattern-major, output-minor; columns follow the
    flatten_weights layout.
    """
    X, T = np.asarray(X, float), np.asarray(T, float)
    n = X.shape[0]
    m = weights.topology.n_outputs
    acts = forward_batch(weights, X)
    e = (acts[-1] - T).reshape(n * m)

    nlayers = len(weights.W)
    hidden_linear = weights.topology.hidden_activation == "linear"
    cols = []
    for k in range(m):
        # sensitivity of output k w.r.t. each layer's pre-activation
        sens = [None] * nlayers
        s = np.zeros((n, m))
        s[:, k] = 1.0
        sens[-1] = s
        for l in range(nlayers - 2, -1, -1):
            a = acts[l + 1]
            back = sens[l + 1] @ weights.W[l + 1]
            sens[l] = back if hidden_linear else a * (1.0 - a) * back
        parts = []
        for l in range(nlayers):
            parts.append(np.einsum("nj,ni->nji", sens[l], acts[l]).reshape(n, -1))
            parts.append(sens[l])
        cols.append(np.concatenate(parts, axis=1))
    # interleave outputs: row p*m + k
    J = np.empty((n * m, cols[0].shape[1]))
    for k in range(m):
        J[k::m] = cols[k]
    return J, e


def train_lm(weights: MlpWeights, train, test, cfg: TrainConfig):
    """Levenberg-Marquardt training.

    Each epoch solves (J'J + lambda*I) dw = -J'e; lambda is multiplied by
    lm_lambda_factor on a rejected step and divided by it on acceptance.
    Stops at the train-MSE error goal, max_epochs, or lambda overflow.
    Returns (weights at minimum TEST error, history of
    (epoch, train_mse, test_mse)).
    """
    if cfg.algorithm != "levenberg_marquardt":
        raise MlpError("train_lm requires algorithm == levenberg_marquardt")
    Xtr, Ttr = patterns_to_arrays(train)
    Xte, Tte = patterns_to_arrays(test) if len(test) else (None, None)

    w = weights.copy()
    lam = cfg.lm_lambda0
    train_mse = mse(w, Xtr, Ttr)
    test_mse = mse(w, Xte, Tte) if Xte is not None else train_mse
    best_test = test_mse
    best_w = w.copy()
    history = [(0, train_mse, test_mse)]

    n_params = w.n_params()
    for epoch in range(1, cfg.max_epochs + 1):
        J, e = residual_jacobian(w, Xtr, Ttr)
        A = J.T @ J
        g = J.T @ e
        accepted = False
        while lam <= LM_LAMBDA_MAX:
            try:
                dw = np.linalg.solve(A + lam * np.eye(n_params), -g)
            except np.linalg.LinAlgError:
                lam *= cfg.lm_lambda_factor
                continue
            cand = unflatten_weights(w.topology, flatten_weights(w) + dw)
            cand_mse = mse(cand, Xtr, Ttr)
            if cand_mse < train_mse:
                w = cand
                train_mse = cand_mse
                lam /= cfg.lm_lambda_factor
                accepted = True
                break
            lam *= cfg.lm_lambda_factor
        if not accepted:
            break
        test_mse = mse(w, Xte, Tte) if Xte is not None else train_mse
        history.append((epoch, train_mse, test_mse))
        if test_mse < best_test:
            best_test = test_mse
            best_w = w.copy()
        if train_mse <= cfg.error_goal:
            break
    if len(history) == 1 and lam > LM_LAMBDA_MAX:
        raise MlpTrainingError(
            f"no acceptable LM step found before lambda exceeded {LM_LAMBDA_MAX:g}"
        )
    return best_w, history


def train_backprop(weights: MlpWeights, train, test, cfg: TrainConfig):
    """Online backprop training with the same stopping and selection rules."""
    if cfg.algorithm != "backprop":
        raise MlpError("train_backprop requires algorithm == backprop")
    Xte, Tte = patterns_to_arrays(test) if len(test) else (None, None)
    w = weights.copy()
    history = []
    best_test = np.inf
    best_w = w.copy()
    for epoch in range(1, cfg.max_epochs + 1):
        w, train_mse = backprop_epoch(w, train, cfg.learning_rate)
        test_mse = mse(w, Xte, Tte) if Xte is not None else train_mse
        history.append((epoch, train_mse, test_mse))
        if test_mse < best_test:
            best_test = test_mse
            best_w = w.copy()
        if train_mse <= cfg.error_goal:
            break
    return best_w, history


def predict_grid(weights: MlpWeights, stack) -> Grid:
    """Predict a single-output map from a stack of aligned factor grids.

    Cells where any factor is nodata stay nodata.
    """
    stack = list(stack)
    assert_aligned(stack)
    if len(stack) != weights.topology.n_inputs:
        raise MlpError(f"stack has {len(stack)} factors, model expects {weights.topology.n_inputs}")
    if weights.topology.n_outputs != 1:
        raise MlpError("predict_grid requires a single-output model")
    ref = stack[0]
    valid = np.ones((ref.nrows, ref.ncols), dtype=bool)
    for g in stack:
        valid &= g.values != g.nodata_value
    X = np.stack([g.values[valid] for g in stack], axis=1)
    out = np.full((ref.nrows, ref.ncols), ref.nodata_value)
    if X.shape[0]:
        out[valid] = forward_batch(weights, X)[-1][:, 0]
    return Grid(ref.header, out)


# ---------------------------------------------------------------------------
# serialization


def save_mlp(weights: MlpWeights, path) -> None:
    """Self-describing text format with full round-trip precision."""
    t = weights.topology
    with open(path, "w") as fh:
        fh.write("petromap-mlp 1\n")
        fh.write("layers " + " ".join(str(s) for s in t.layer_sizes) + "\n")
        fh.write(f"hidden_activation {t.hidden_activation}\n")
        for l, (W, b) in enumerate(zip(weights.W, weights.b)):
            fh.write(f"W{l} {W.shape[0]} {W.shape[1]}\n")
            for row in W:
                fh.write(" ".join(repr(float(v)) for v in row) + "\n")
            fh.write(f"b{l} {b.size}\n")
            fh.write(" ".join(repr(float(v)) for v in b) + "\n")


def load_mlp(path) -> MlpWeights:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != "petromap-mlp 1":
        raise MlpError(f"{path}: not a petromap MLP model file")
    sizes = tuple(int(s) for s in lines[1].split()[1:])
    hidden_activation = lines[2].split()[1]
    topology = MlpTopology(sizes, hidden_activation)
    W, b = [], []
    i = 3
    for l in range(len(sizes) - 1):
        rows, cols = (int(v) for v in lines[i].split()[1:])
        i += 1
        mat = np.array([[float(v) for v in lines[i + r].split()] for r in range(rows)])
        if mat.shape != (rows, cols):
            raise MlpError(f"{path}: weight matrix W{l} shape mismatch")
        i += rows
        nb = int(lines[i].split()[1])
        i += 1
        vec = np.array([float(v) for v in lines[i].split()])
        if vec.size != nb:
            raise MlpError(f"{path}: bias vector b{l} length mismatch")
        i += 1
        W.append(mat)
        b.append(vec)
    return MlpWeights(topology, W, b)
