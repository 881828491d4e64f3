"""Factor-map construction: interpolation, distance rasterization, terrain
derivatives, and fuzzy membership normalization.

All operations are pure functions of immutable inputs; cell loops are
vectorized over the whole raster and results do not depend on evaluation
order.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .raster import Grid, GridDimensionError, GridHeader, grid_header_centers

FEATURE_KINDS = ("fault_lines", "anticline_axes", "closure_centers", "anomaly_centers")
FUZZY_SHAPES = ("linear_increasing", "linear_decreasing", "small", "large")

# coincidence tolerance: a cell center closer than this to a sample takes
# the sample value exactly
COINCIDENT_DIST = 1e-12


class InputDataError(ValueError):
    """Empty or inconsistent input data."""


class InterpolationError(ValueError):
    """Numerical failure while interpolating (e.g. duplicate sample sites)."""


@dataclass(frozen=True)
class PointSample:
    """One measured value at a map location."""

    x: float
    y: float
    value: float

    def __post_init__(self):
        if not np.isfinite(self.value):
            raise InputDataError(f"sample at ({self.x}, {self.y}) has non-finite value")


@dataclass(frozen=True)
class FeatureSet:
    """Vector geometries: polylines (>=2 vertices) or single points."""

    kind: str
    geometries: tuple

    def __post_init__(self):
        if self.kind not in FEATURE_KINDS:
            raise InputDataError(f"unknown feature kind {self.kind!r}")
        if not self.geometries:
            raise InputDataError("feature set has no geometries")
        for geom in self.geometries:
            arr = np.asarray(geom, dtype=float)
            if arr.ndim != 2 or arr.shape[1] != 2 or arr.shape[0] < 1:
                raise InputDataError(f"bad geometry shape {arr.shape}")
            if not np.isfinite(arr).all():
                raise InputDataError("geometry has non-finite vertices")


@dataclass(frozen=True)
class FuzzyParams:
    """Membership function parameters.

    For the linear shapes ``a`` is the zero/one endpoint minimum and ``b``
    the maximum (a < b).  For small/large, ``a`` is the midpoint (membership
    0.5) and ``b`` the spread exponent, both > 0.
    """

    shape: str
    a: float
    b: float

    def __post_init__(self):
        if self.shape not in FUZZY_SHAPES:
            raise InputDataError(f"unknown fuzzy shape {self.shape!r}")
        if self.shape.startswith("linear"):
            if not self.a < self.b:
                raise InputDataError(f"linear fuzzy params require a < b, got {self.a}, {self.b}")
        else:
            if not (self.a > 0 and self.b > 0):
                raise InputDataError(
                    f"small/large fuzzy params require a > 0 and b > 0, got {self.a}, {self.b}"
                )


DEFAULT_FUZZY_SPREAD = 5.0


# ---------------------------------------------------------------------------
# file ingestion


def read_point_samples(path) -> list[PointSample]:
    """Read point samples from a CSV file with header ``x,y,value``."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        expected = ["x", "y", "value"]
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != expected:
            raise InputDataError(f"{path}: expected CSV header 'x,y,value', got {reader.fieldnames}")
        samples = [PointSample(float(r["x"]), float(r["y"]), float(r["value"])) for r in reader]
    if not samples:
        raise InputDataError(f"{path}: no samples")
    return samples


def read_features(path, kind: str) -> FeatureSet:
    """Read a plain-text geometry file.

    One geometry per line: ``LINE x1 y1 x2 y2 ...`` or ``POINT x y``.
    """
    geometries = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            tag = parts[0].upper()
            coords = [float(p) for p in parts[1:]]
            if len(coords) % 2 != 0:
                raise InputDataError(f"{path}:{lineno}: odd coordinate count")
            pts = np.array(coords, dtype=float).reshape(-1, 2)
            if tag == "POINT":
                if len(pts) != 1:
                    raise InputDataError(f"{path}:{lineno}: POINT takes exactly one coordinate pair")
            elif tag == "LINE":
                if len(pts) < 2:
                    raise InputDataError(f"{path}:{lineno}: LINE needs at least two vertices")
            else:
                raise InputDataError(f"{path}:{lineno}: unknown geometry tag {tag!r}")
            geometries.append(pts)
    return FeatureSet(kind=kind, geometries=tuple(geometries))


# ---------------------------------------------------------------------------
# interpolation


def _sample_arrays(samples):
    xs = np.array([s.x for s in samples])
    ys = np.array([s.y for s in samples])
    vs = np.array([s.value for s in samples])
    return xs, ys, vs


def idw_interpolate(samples, header: GridHeader, power: float = 2.0, max_neighbors=None) -> Grid:
    """Inverse-distance-weighted interpolation onto a grid.

    Each cell gets sum(w_i v_i) / sum(w_i) with w_i = d_i^-power over the
    ``max_neighbors`` nearest samples (all samples when None).  A cell whose
    center coincides with a sample takes that sample's value exactly.
    """
    if not samples:
        raise InputDataError("idw_interpolate: empty sample list")
    if not power > 0:
        raise InputDataError(f"idw power must be positive, got {power}")
    xs, ys, vs = _sample_arrays(samples)
    cx, cy = grid_header_centers(header)
    # (cells, samples) distance matrix
    d = np.hypot(cx.ravel()[:, None] - xs[None, :], cy.ravel()[:, None] - ys[None, :])

    if max_neighbors is not None and max_neighbors < len(samples):
        k = int(max_neighbors)
        if k < 1:
            raise InputDataError(f"max_neighbors must be positive, got {max_neighbors}")
        idx = np.argpartition(d, k - 1, axis=1)[:, :k]
        d = np.take_along_axis(d, idx, axis=1)
        v = vs[idx]
    else:
        v = np.broadcast_to(vs, d.shape)

    hit = d < COINCIDENT_DIST
    d_safe = np.where(hit, 1.0, d)
    w = d_safe ** (-power)
    out = (w * v).sum(axis=1) / w.sum(axis=1)
    any_hit = hit.any(axis=1)
    if any_hit.any():
        first = hit.argmax(axis=1)
        out = np.where(any_hit, v[np.arange(len(out)), first], out)
    return Grid(header, out)


def _variogram(model: str, h, nugget: float, sill: float, vrange: float):
    """Semivariance gamma(h); gamma(0) = 0."""
    h = np.asarray(h, dtype=float)
    psill = sill - nugget
    if model == "spherical":
        hr = np.minimum(h / vrange, 1.0)
        g = nugget + psill * (1.5 * hr - 0.5 * hr**3)
    elif model == "exponential":
        g = nugget + psill * (1.0 - np.exp(-3.0 * h / vrange))
    else:
        raise InputDataError(f"unknown variogram model {model!r}")
    return np.where(h == 0.0, 0.0, g)


def kriging_interpolate(samples, header: GridHeader, model: str = "spherical",
                        nugget: float = 0.0, sill: float = None, vrange: float = None) -> Grid:
    """Ordinary kriging onto a grid.

    Solves the (n+1)x(n+1) system with a Lagrange multiplier enforcing
    sum(lambda) = 1 for every cell.  Defaults when not given: sill = sample
    variance, range = half the extent diagonal.
    """
    if len(samples) < 2:
        raise InputDataError("kriging needs at least 2 samples")
    xs, ys, vs = _sample_arrays(samples)
    n = len(samples)

    # duplicate sites make the kriging matrix singular
    coords = np.stack([xs, ys], axis=1)
    dd = np.hypot(xs[:, None] - xs[None, :], ys[:, None] - ys[None, :])
    dup = np.argwhere(np.triu(dd < COINCIDENT_DIST, k=1))
    if len(dup):
        i, j = dup[0]
        raise InterpolationError(
            f"duplicate sample locations at ({coords[i][0]}, {coords[i][1]}) (samples {i} and {j})"
        )

    if sill is None:
        sill = float(np.var(vs))
        if sill <= 0:
            sill = 1.0
    if vrange is None:
        ext = np.hypot(header.ncols * header.cellsize, header.nrows * header.cellsize)
        vrange = ext / 2
    if not (sill > nugget >= 0):
        raise InputDataError(f"kriging requires sill > nugget >= 0, got sill={sill}, nugget={nugget}")

    k = np.empty((n + 1, n + 1))
    k[:n, :n] = _variogram(model, dd, nugget, sill, vrange)
    k[n, :n] = 1.0
    k[:n, n] = 1.0
    k[n, n] = 0.0

    cx, cy = grid_header_centers(header)
    d0 = np.hypot(xs[:, None] - cx.ravel()[None, :], ys[:, None] - cy.ravel()[None, :])
    rhs = np.empty((n + 1, d0.shape[1]))
    rhs[:n] = _variogram(model, d0, nugget, sill, vrange)
    rhs[n] = 1.0
    try:
        lam = np.linalg.solve(k, rhs)
    except np.linalg.LinAlgError as exc:
        raise InterpolationError(f"singular kriging system: {exc}") from None
    out = vs @ lam[:n]

    # exact at data points when nugget is zero
    if nugget == 0.0:
        hit = d0.T < COINCIDENT_DIST
        any_hit = hit.any(axis=1)
        if any_hit.any():
            first = hit.argmax(axis=1)
            out = np.where(any_hit, vs[first], out)
    return Grid(header, out)


# ---------------------------------------------------------------------------
# distance transform


def _point_segment_dist(px, py, ax, ay, bx, by):
    """Distance from points (px, py) to segment (a, b), vectorized over points."""
    dx, dy = bx - ax, by - ay
    seg2 = dx * dx + dy * dy
    if seg2 == 0.0:
        return np.hypot(px - ax, py - ay)
    t = np.clip(((px - ax) * dx + (py - ay) * dy) / seg2, 0.0, 1.0)
    return np.hypot(px - (ax + t * dx), py - (ay + t * dy))


def distance_transform(features: FeatureSet, header: GridHeader) -> Grid:
    """Euclidean distance from every cell center to the nearest geometry.

    Exact brute force over all segments; intended for desk-scale grids.
    """
    cx, cy = grid_header_centers(header)
    px, py = cx.ravel(), cy.ravel()
    best = np.full(px.shape, np.inf)
    for geom in features.geometries:
        pts = np.asarray(geom, dtype=float)
        if len(pts) == 1:
            np.minimum(best, np.hypot(px - pts[0, 0], py - pts[0, 1]), out=best)
        else:
            for (ax, ay), (bx, by) in zip(pts[:-1], pts[1:]):
                np.minimum(best, _point_segment_dist(px, py, ax, ay, bx, by), out=best)
    return Grid(header, best)


# ---------------------------------------------------------------------------
# focal terrain derivatives


def tri(grid: Grid) -> Grid:
    """Terrain ruggedness index: sqrt of the summed squared differences
    between each cell and its up-to-8 valid neighbors.

    Nodata centers stay nodata; nodata neighbors are skipped.
    """
    z = grid.values
    nodata = grid.nodata_value
    valid = z != nodata
    acc = np.zeros_like(z)
    nr, nc = z.shape
    padded = np.full((nr + 2, nc + 2), nodata)
    padded[1:-1, 1:-1] = z
    pvalid = padded != nodata
    for dr in (-1, 0, 1):
        for dc in (-1, 0, 1):
            if dr == 0 and dc == 0:
                continue
            nb = padded[1 + dr : 1 + dr + nr, 1 + dc : 1 + dc + nc]
            nbv = pvalid[1 + dr : 1 + dr + nr, 1 + dc : 1 + dc + nc]
            diff = np.where(nbv & valid, nb - z, 0.0)
            acc += diff * diff
    out = np.sqrt(acc)
    out[~valid] = nodata
    return grid.with_values(out)


def curvature(grid: Grid) -> Grid:
    """Negative Laplacian of the surface: -(z_xx + z_yy), h = cellsize.

    Positive on convex-up surfaces (hilltops, anticlines in elevation).
    Border cells and cells with nodata in the 4-neighborhood become nodata.
    Subsurface depth grids should be negated before calling this so that
    anticlines come out positive.
    """
    if grid.nrows < 3 or grid.ncols < 3:
        raise GridDimensionError(f"curvature needs at least 3x3, got {grid.nrows}x{grid.ncols}")
    z = grid.values
    nodata = grid.nodata_value
    h2 = grid.cellsize**2
    out = np.full_like(z, nodata)
    c = z[1:-1, 1:-1]
    n, s = z[:-2, 1:-1], z[2:, 1:-1]
    w, e = z[1:-1, :-2], z[1:-1, 2:]
    ok = (c != nodata) & (n != nodata) & (s != nodata) & (w != nodata) & (e != nodata)
    lap = (e - 2 * c + w) / h2 + (n - 2 * c + s) / h2
    out[1:-1, 1:-1] = np.where(ok, -lap, nodata)
    return grid.with_values(out)


# ---------------------------------------------------------------------------
# normalization and classification


def fuzzy_normalize(grid: Grid, params: FuzzyParams) -> Grid:
    """Map cell values into [0, 1] memberships; nodata passes through."""
    z = grid.values
    nodata = grid.nodata_value
    valid = z != nodata
    x = np.where(valid, z, 0.0)
    a, b = params.a, params.b
    if params.shape == "linear_increasing":
        m = np.clip((x - a) / (b - a), 0.0, 1.0)
    elif params.shape == "linear_decreasing":
        m = np.clip((b - x) / (b - a), 0.0, 1.0)
    else:
        # rational GIS small/large forms; clamp nonpositive inputs away from 0
        xs = np.maximum(x, 1e-12 * a)
        if params.shape == "small":
            m = 1.0 / (1.0 + (xs / a) ** b)
        else:
            m = 1.0 / (1.0 + (xs / a) ** (-b))
    return grid.with_values(np.where(valid, m, nodata))


def classify_threshold(grid: Grid, threshold: float) -> Grid:
    """1 where value >= threshold else 0; nodata passes through."""
    z = grid.values
    valid = z != grid.nodata_value
    out = np.where(z >= threshold, 1.0, 0.0)
    return grid.with_values(np.where(valid, out, grid.nodata_value))


def bin_equal_interval(grid: Grid, nbins: int = 10) -> Grid:
    """Quantize valid values into ``nbins`` equal-interval classes 1..nbins.

    Used for the 10-class proximity binning of distance layers.
    """
    z = grid.values
    valid = z != grid.nodata_value
    if not valid.any():
        return grid
    lo, hi = z[valid].min(), z[valid].max()
    if hi == lo:
        classes = np.ones_like(z)
    else:
        classes = np.floor((z - lo) / (hi - lo) * nbins) + 1
        classes = np.clip(classes, 1, nbins)
    return grid.with_values(np.where(valid, classes, grid.nodata_value))


def negate(grid: Grid) -> Grid:
    """Flip the sign of valid cells (depth grid -> structural elevation)."""
    z = grid.values
    valid = z != grid.nodata_value
    return grid.with_values(np.where(valid, -z, grid.nodata_value))
