"""First-order Sugeno adaptive neuro-fuzzy inference system.

Five-layer forward pass: Gaussian memberships, product firing strengths,
normalization, linear rule consequents, weighted-sum output.  Rules are
seeded by subtractive clustering; training alternates a least-squares pass
on the consequents with a gradient-descent step on the premise parameters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .raster import Grid, assert_aligned

SIGMA_FLOOR = 1e-6
LSE_RIDGE = 1e-8


class AnfisError(ValueError):
    pass


class AnfisTrainingError(RuntimeError):
    """Training diverged to a non-finite loss."""


@dataclass(frozen=True)
class ClusterConfig:
    """Subtractive-clustering knobs; radius is in normalized input space."""

    radius: float = 0.5
    squash_factor: float = 1.25
    accept_ratio: float = 0.5
    reject_ratio: float = 0.15

    def __post_init__(self):
        if not 0 < self.radius <= 1:
            raise AnfisError(f"radius must be in (0, 1], got {self.radius}")
        if not self.squash_factor > 1:
            raise AnfisError(f"squash_factor must be > 1, got {self.squash_factor}")
        if not 0 < self.reject_ratio < self.accept_ratio <= 1:
            raise AnfisError(
                f"need 0 < reject_ratio < accept_ratio <= 1, got "
                f"{self.reject_ratio}, {self.accept_ratio}"
            )


@dataclass
class AnfisModel:
    """Premise Gaussians (centers, sigmas: rules x inputs) and consequent
    linear coefficients (rules x (inputs + 1), intercept last)."""

    centers: np.ndarray
    sigmas: np.ndarray
    consequents: np.ndarray

    def __post_init__(self):
        self.centers = np.asarray(self.centers, float)
        self.sigmas = np.asarray(self.sigmas, float)
        self.consequents = np.asarray(self.consequents, float)
        r, n = self.centers.shape
        if self.sigmas.shape != (r, n):
            raise AnfisError(f"sigmas shape {self.sigmas.shape} != centers shape {(r, n)}")
        if self.consequents.shape != (r, n + 1):
            raise AnfisError(
                f"consequents shape {self.consequents.shape}, expected {(r, n + 1)}"
            )
        if (self.sigmas <= 0).any():
            raise AnfisError("all sigmas must be positive")
        for name, arr in (("centers", self.centers), ("sigmas", self.sigmas),
                          ("consequents", self.consequents)):
            if not np.isfinite(arr).all():
                raise AnfisError(f"non-finite values in {name}")

    @property
    def n_rules(self):
        return self.centers.shape[0]

    @property
    def n_inputs(self):
        return self.centers.shape[1]

    def copy(self) -> "AnfisModel":
        return AnfisModel(self.centers.copy(), self.sigmas.copy(), self.consequents.copy())


def _log_firing(model: AnfisModel, X):
    """log of the product-of-Gaussians firing strength, (N, rules)."""
    d = (X[:, None, :] - model.centers[None, :, :]) / model.sigmas[None, :, :]
    return -0.5 * np.sum(d * d, axis=2)


def normalized_weights(model: AnfisModel, X):
    """Normalized rule weights w-bar, (N, rules); rows sum to 1.

    Computed in log space so far-away inputs cannot underflow the
    normalization (Gaussians are strictly positive in exact arithmetic).
    """
    logw = _log_firing(model, X)
    logw -= logw.max(axis=1, keepdims=True)
    w = np.exp(logw)
    return w / w.sum(axis=1, keepdims=True)


def rule_outputs(model: AnfisModel, X):
    """Per-rule linear consequent values f_r(x), (N, rules)."""
    return X @ model.consequents[:, :-1].T + model.consequents[:, -1]


def forward(model: AnfisModel, x):
    """Full five-layer pass for one input vector.

    Returns a dict with memberships, firing strengths, normalized weights,
    rule outputs, and the scalar output.
    """
    x = np.asarray(x, float).reshape(1, -1)
    if x.shape[1] != model.n_inputs:
        raise AnfisError(f"input length {x.shape[1]} != {model.n_inputs}")
    d = (x[0][None, :] - model.centers) / model.sigmas
    memberships = np.exp(-0.5 * d * d)
    w = memberships.prod(axis=1)
    wbar = normalized_weights(model, x)[0]
    f = rule_outputs(model, x)[0]
    return {
        "memberships": memberships,
        "firing_strengths": w,
        "normalized_weights": wbar,
        "rule_outputs": f,
        "output": float(wbar @ f),
    }


def predict(model: AnfisModel, X):
    """Batch output F(x) for an (N, n) input matrix."""
    X = np.asarray(X, float)
    if X.ndim != 2 or X.shape[1] != model.n_inputs:
        raise AnfisError(f"expected (N, {model.n_inputs}) inputs, got {X.shape}")
    wbar = normalized_weights(model, X)
    return np.sum(wbar * rule_outputs(model, X), axis=1)


# ---------------------------------------------------------------------------
# subtractive clustering


def subtractive_cluster(data, cfg: ClusterConfig):
    """Chiu-style subtractive clustering on rows normalized to [0, 1]^n.

    Potentials P_i = sum_j exp(-4 |x_i - x_j|^2 / r^2); the winner is
    subtracted with the squashed radius, then accepted or rejected against
    the first winner's potential.  Always returns at least one center.
    """
    data = np.asarray(data, float)
    if data.ndim != 2 or data.shape[0] < 1:
        raise AnfisError("subtractive_cluster needs a non-empty 2-D data matrix")
    n = data.shape[0]
    alpha = 4.0 / cfg.radius**2
    beta = 4.0 / (cfg.squash_factor * cfg.radius) ** 2

    # chunked pairwise potentials to bound memory on large sample sets
    potentials = np.zeros(n)
    sq = np.sum(data * data, axis=1)
    chunk = max(1, int(2e7) // max(n, 1))
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        d2 = sq[start:stop, None] + sq[None, :] - 2.0 * (data[start:stop] @ data.T)
        np.maximum(d2, 0.0, out=d2)
        potentials[start:stop] = np.exp(-alpha * d2).sum(axis=1)

    centers = []
    first_potential = None
    while True:
        i = int(np.argmax(potentials))
        p = potentials[i]
        if first_potential is None:
            first_potential = p
            accept = True
        elif p > cfg.accept_ratio * first_potential:
            accept = True
        elif p < cfg.reject_ratio * first_potential:
            break
        else:
            # gray zone: accept if the point trades distance for potential
            dmin = np.sqrt(
                np.min(np.sum((np.asarray(centers) - data[i]) ** 2, axis=1))
            )
            if dmin / cfg.radius + p / first_potential >= 1.0:
                accept = True
            else:
                potentials[i] = 0.0
                continue
        if not accept:
            break
        centers.append(data[i].copy())
        d2 = np.sum((data - data[i]) ** 2, axis=1)
        potentials = potentials - p * np.exp(-beta * d2)
        np.maximum(potentials, 0.0, out=potentials)
        if np.all(potentials <= 0.0):
            break
    return [np.asarray(c) for c in centers]


def init_from_clusters(centers, data, cfg: ClusterConfig) -> AnfisModel:
    """One rule per cluster center; Gaussian widths from the data range.

    sigma_d = radius * (max_d - min_d) / sqrt(8), floored at 1e-6 when a
    dimension is degenerate.  Consequents start at zero.
    """
    if not len(centers):
        raise AnfisError("need at least one cluster center")
    data = np.asarray(data, float)
    c = np.asarray(centers, float)
    span = data.max(axis=0) - data.min(axis=0)
    sigma = cfg.radius * span / np.sqrt(8.0)
    sigma = np.maximum(sigma, SIGMA_FLOOR)
    sigmas = np.broadcast_to(sigma, c.shape).copy()
    consequents = np.zeros((c.shape[0], c.shape[1] + 1))
    return AnfisModel(c.copy(), sigmas, consequents)


# ---------------------------------------------------------------------------
# hybrid learning


def _design_matrix(model: AnfisModel, X):
    """LSE design matrix: per rule the block [wbar*x_1 .. wbar*x_n, wbar]."""
    wbar = normalized_weights(model, X)
    n = X.shape[0]
    blocks = np.concatenate(
        [wbar[:, :, None] * X[:, None, :], wbar[:, :, None]], axis=2
    )
    return blocks.reshape(n, -1), wbar


def lse_consequents(model: AnfisModel, X, targets) -> AnfisModel:
    """Least-squares fit of all consequent coefficients at fixed premises.

    Solved as a ridge-augmented SVD least-squares problem (ridge 1e-8) so
    rank-deficient designs still yield the minimum-norm solution.
    """
    X = np.asarray(X, float)
    t = np.asarray(targets, float).ravel()
    A, _ = _design_matrix(model, X)
    p = A.shape[1]
    aug = np.vstack([A, np.sqrt(LSE_RIDGE) * np.eye(p)])
    rhs = np.concatenate([t, np.zeros(p)])
    theta, _, rank, _ = np.linalg.lstsq(aug, rhs, rcond=None)
    out = model.copy()
    out.consequents = theta.reshape(model.n_rules, model.n_inputs + 1)
    return out


def train_mse(model: AnfisModel, X, targets) -> float:
    t = np.asarray(targets, float).ravel()
    return float(np.mean((predict(model, X) - t) ** 2))


def _premise_gradients(model: AnfisModel, X, targets):
    """Analytic gradient of the MSE w.r.t. every Gaussian center and sigma."""
    X = np.asarray(X, float)
    t = np.asarray(targets, float).ravel()
    wbar = normalized_weights(model, X)  # (N, R)
    f = rule_outputs(model, X)  # (N, R)
    F = np.sum(wbar * f, axis=1)
    resid = F - t  # (N,)
    # dF/d(log w_r) = wbar_r * (f_r - F)
    dF_dlogw = wbar * (f - F[:, None])  # (N, R)
    coef = (2.0 / len(t)) * resid  # dMSE/dF per sample
    diff = X[:, None, :] - model.centers[None, :, :]  # (N, R, n)
    inv_s2 = 1.0 / model.sigmas**2  # (R, n)
    # d(log w_r)/dc = (x - c)/sigma^2 ; d(log w_r)/dsigma = (x - c)^2/sigma^3
    g = coef[:, None] * dF_dlogw  # (N, R)
    grad_c = np.einsum("nr,nrd->rd", g, diff) * inv_s2
    grad_s = np.einsum("nr,nrd->rd", g, diff**2) * inv_s2 / model.sigmas
    return grad_c, grad_s


def train_hybrid(model: AnfisModel, train, test, epochs: int, eta: float = 0.01,
                 error_goal: float = 0.005):
    """Alternating LSE (consequents) and gradient descent (premises).

    ``train`` and ``test`` are (X, targets) pairs.  Each epoch fits the
    consequents by least squares at the current premises, then takes one
    gradient step on every Gaussian center and width.  The learning rate
    decays by 0.9 whenever the epoch error rises.  Returns the model with
    minimum test MSE and the (epoch, train_mse, test_mse) history.
    """
    if not eta > 0:
        raise AnfisError(f"learning rate must be positive, got {eta}")
    Xtr, ttr = np.asarray(train[0], float), np.asarray(train[1], float).ravel()
    has_test = test is not None and len(test[1]) > 0
    if has_test:
        Xte, tte = np.asarray(test[0], float), np.asarray(test[1], float).ravel()

    m = lse_consequents(model, Xtr, ttr)
    tr = train_mse(m, Xtr, ttr)
    te = train_mse(m, Xte, tte) if has_test else tr
    history = [(0, tr, te)]
    best = m.copy()
    best_test = te
    if epochs == 0 or tr <= error_goal:
        return best, history

    prev_tr = tr
    for epoch in range(1, epochs + 1):
        grad_c, grad_s = _premise_gradients(m, Xtr, ttr)
        m.centers = m.centers - eta * grad_c
        m.sigmas = np.maximum(m.sigmas - eta * grad_s, SIGMA_FLOOR)
        m = lse_consequents(m, Xtr, ttr)
        tr = train_mse(m, Xtr, ttr)
        te = train_mse(m, Xte, tte) if has_test else tr
        if not np.isfinite(tr):
            raise AnfisTrainingError(f"training diverged at epoch {epoch}")
        history.append((epoch, tr, te))
        if te < best_test:
            best_test = te
            best = m.copy()
        if tr > prev_tr:
            eta *= 0.9
        prev_tr = tr
        if tr <= error_goal:
            break
    return best, history


def predict_grid(model: AnfisModel, stack) -> Grid:
    """Predict a map from a stack of aligned factor grids; nodata propagates."""
    stack = list(stack)
    assert_aligned(stack)
    if len(stack) != model.n_inputs:
        raise AnfisError(f"stack has {len(stack)} factors, model expects {model.n_inputs}")
    ref = stack[0]
    valid = np.ones((ref.nrows, ref.ncols), dtype=bool)
    for g in stack:
        valid &= g.values != g.nodata_value
    X = np.stack([g.values[valid] for g in stack], axis=1)
    out = np.full((ref.nrows, ref.ncols), ref.nodata_value)
    if X.shape[0]:
        out[valid] = predict(model, X)
    return Grid(ref.header, out)


# ---------------------------------------------------------------------------
# serialization


def save_anfis(model: AnfisModel, path) -> None:
    """Self-describing text format with full round-trip precision."""
    with open(path, "w") as fh:
        fh.write("petromap-anfis 1\n")
        fh.write(f"inputs {model.n_inputs}\n")
        fh.write(f"rules {model.n_rules}\n")
        for name, arr in (("centers", model.centers), ("sigmas", model.sigmas),
                          ("consequents", model.consequents)):
            fh.write(f"{name}\n")
            for row in arr:
                fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def load_anfis(path) -> AnfisModel:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != "petromap-anfis 1":
        raise AnfisError(f"{path}: not a petromap ANFIS model file")
    n_inputs = int(lines[1].split()[1])
    n_rules = int(lines[2].split()[1])
    i = 3
    arrays = {}
    for name, cols in (("centers", n_inputs), ("sigmas", n_inputs),
                       ("consequents", n_inputs + 1)):
        if lines[i] != name:
            raise AnfisError(f"{path}: expected section {name!r}, got {lines[i]!r}")
        i += 1
        rows = [[float(v) for v in lines[i + r].split()] for r in range(n_rules)]
        arr = np.array(rows)
        if arr.shape != (n_rules, cols):
            raise AnfisError(f"{path}: section {name} has shape {arr.shape}")
        arrays[name] = arr
        i += n_rules
    return AnfisModel(arrays["centers"], arrays["sigmas"], arrays["consequents"])
