"""Dataset assembly, reproducible splitting, and validation metrics:
Pearson R, RMSE, and Cohen's kappa from a confusion matrix.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .raster import Grid, assert_aligned

DEFAULT_FRACTIONS = (0.70, 0.15, 0.15)


class MetricError(ValueError):
    """Metric undefined for the given inputs."""


class DatasetError(ValueError):
    pass


@dataclass
class SampleMatrix:
    """Aligned factor stack flattened to rows, one per all-valid cell."""

    feature_names: list
    rows: np.ndarray  # (M, N)
    targets: np.ndarray  # (M,), binary
    cell_index: np.ndarray  # (M, 2) (row, col)

    @property
    def n_samples(self):
        return self.rows.shape[0]


@dataclass(frozen=True)
class Split:
    train_idx: np.ndarray
    test_idx: np.ndarray
    val_idx: np.ndarray
    fractions: tuple
    rng_seed: int


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    fn: int
    tn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise MetricError("confusion counts must be nonnegative")

    @property
    def total(self):
        return self.tp + self.fp + self.fn + self.tn


def build_samples(stack, target: Grid, feature_names=None) -> SampleMatrix:
    """Flatten aligned factor grids + target into a sample matrix.

    Keeps exactly the cells where every factor and the target are valid,
    in row-major cell order.
    """
    stack = list(stack)
    assert_aligned(stack + [target])
    valid = target.values != target.nodata_value
    for g in stack:
        valid &= g.values != g.nodata_value
    rows = np.stack([g.values[valid] for g in stack], axis=1) if valid.any() else \
        np.empty((0, len(stack)))
    targets = target.values[valid]
    cell_index = np.argwhere(valid)
    if feature_names is None:
        feature_names = [f"factor_{i}" for i in range(len(stack))]
    return SampleMatrix(list(feature_names), rows, targets, cell_index)


def split(m: SampleMatrix, fractions=DEFAULT_FRACTIONS, seed: int = 0) -> Split:
    """Seeded shuffle then contiguous slicing into train/test/validation."""
    n = m.n_samples
    if n < 3:
        raise DatasetError(f"need at least 3 samples to split, got {n}")
    if abs(sum(fractions) - 1.0) > 1e-9 or len(fractions) != 3:
        raise DatasetError(f"fractions must be 3 values summing to 1, got {fractions}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    n_train = round(fractions[0] * n)
    n_test = round(fractions[1] * n)
    return Split(
        train_idx=order[:n_train],
        test_idx=order[n_train : n_train + n_test],
        val_idx=order[n_train + n_test :],
        fractions=tuple(fractions),
        rng_seed=seed,
    )


def pearson_r(pred, obs) -> float:
    """Sample Pearson correlation; errors on constant vectors."""
    p = np.asarray(pred, float).ravel()
    o = np.asarray(obs, float).ravel()
    if p.size != o.size:
        raise MetricError(f"length mismatch: {p.size} vs {o.size}")
    if p.size < 2:
        raise MetricError("pearson_r needs at least 2 values")
    pc, oc = p - p.mean(), o - o.mean()
    denom = np.sqrt(np.sum(pc**2) * np.sum(oc**2))
    if denom == 0.0:
        raise MetricError("pearson_r undefined for a constant vector")
    return float(np.clip(np.sum(pc * oc) / denom, -1.0, 1.0))


def rmse(pred, obs) -> float:
    p = np.asarray(pred, float).ravel()
    o = np.asarray(obs, float).ravel()
    if p.size != o.size:
        raise MetricError(f"length mismatch: {p.size} vs {o.size}")
    if p.size < 1:
        raise MetricError("rmse needs at least 1 value")
    return float(np.sqrt(np.mean((p - o) ** 2)))


def confusion(pred_map: Grid, truth_map: Grid) -> ConfusionMatrix:
    """Cross a binary predicted map with a binary truth map.

    Counts only cells valid in both grids; non-binary values are rejected.
    """
    assert_aligned([pred_map, truth_map])
    p, t = pred_map.values, truth_map.values
    valid = (p != pred_map.nodata_value) & (t != truth_map.nodata_value)
    for name, grid, arr in (("pred", pred_map, p), ("truth", truth_map, t)):
        bad = valid & (arr != 0.0) & (arr != 1.0)
        if bad.any():
            r, c = np.argwhere(bad)[0]
            raise MetricError(f"{name} map has non-binary value {arr[r, c]} at cell ({r}, {c})")
    return confusion_from_vectors(p[valid], t[valid])


def confusion_from_vectors(pred, truth) -> ConfusionMatrix:
    """Confusion counts from already-flattened binary vectors."""
    p = np.asarray(pred).astype(bool)
    t = np.asarray(truth).astype(bool)
    return ConfusionMatrix(
        tp=int(np.sum(p & t)),
        fp=int(np.sum(p & ~t)),
        fn=int(np.sum(~p & t)),
        tn=int(np.sum(~p & ~t)),
    )


def kappa(cm: ConfusionMatrix) -> float:
    """Cohen's kappa, chance-corrected agreement of the two binary maps."""
    total = cm.total
    if total == 0:
        raise MetricError("kappa undefined for an empty confusion matrix")
    po = (cm.tp + cm.tn) / total
    pe = ((cm.tp + cm.fp) * (cm.tp + cm.fn) + (cm.fn + cm.tn) * (cm.fp + cm.tn)) / total**2
    if pe == 1.0:
        raise MetricError("kappa undefined: expected agreement is 1 (single-class data)")
    return (po - pe) / (1.0 - pe)


def binarize(potential: Grid, threshold: float = 0.5) -> Grid:
    """1 where value >= threshold else 0; nodata passes through."""
    z = potential.values
    valid = z != potential.nodata_value
    out = np.where(z >= threshold, 1.0, 0.0)
    return potential.with_values(np.where(valid, out, potential.nodata_value))


def write_metrics_report(path, r, rmse_value, kappa_value, cm: ConfusionMatrix,
                         seed, threshold) -> None:
    """Flat key=value metrics file."""
    with open(path, "w") as fh:
        fh.write(f"r={r!r}\n")
        fh.write(f"rmse={rmse_value!r}\n")
        fh.write(f"kappa={kappa_value!r}\n")
        fh.write(f"tp={cm.tp}\n")
        fh.write(f"fp={cm.fp}\n")
        fh.write(f"fn={cm.fn}\n")
        fh.write(f"tn={cm.tn}\n")
        fh.write(f"seed={seed}\n")
        fh.write(f"threshold={threshold!r}\n")
