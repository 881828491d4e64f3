"""Synthetic basin generator for end-to-end testing.

Plants elliptical oil fields in a grid and derives every raw input the
pipeline ingests from them: anticline axes, faults, Rock-Eval well data,
a structure-contour (depth) grid, and Bouguer gravity points.  The whole
file set is a deterministic function of the seed.
"""

from __future__ import annotations

import os

import numpy as np

from .geoprocess import InputDataError
from .raster import Grid, GridHeader, grid_header_centers, write_ascii_grid

MIN_COVERAGE = 0.02
MAX_COVERAGE = 0.20


def _ellipse_mask(cx, cy, a, b, angle, px, py):
    """Boolean mask of points inside a rotated ellipse."""
    dx, dy = px - cx, py - cy
    cos, sin = np.cos(angle), np.sin(angle)
    u = dx * cos + dy * sin
    v = -dx * sin + dy * cos
    return (u / a) ** 2 + (v / b) ** 2 <= 1.0


def _smooth_bumps(rng, px, py, width, height, n, amplitude, spread):
    """Sum of broad random Gaussian bumps, used as smooth background noise."""
    out = np.zeros_like(px)
    for _ in range(n):
        bx = rng.uniform(0, width)
        by = rng.uniform(0, height)
        amp = rng.uniform(-amplitude, amplitude)
        s = rng.uniform(0.5, 1.5) * spread
        out += amp * np.exp(-((px - bx) ** 2 + (py - by) ** 2) / (2 * s**2))
    return out


def generate_synthetic_basin(seed: int, header: GridHeader, out_dir):
    """Write a full synthetic input set plus a ready-made pipeline config.

    Returns a dict of the written file paths.  The truth grid covers
    between 2% and 20% of the cells; every well drilled inside a field has
    a hydrogen index above the global median by construction.
    """
    if header.nrows < 100 or header.ncols < 100:
        raise InputDataError(
            f"synthetic basin needs at least a 100x100 grid, got {header.nrows}x{header.ncols}"
        )
    os.makedirs(out_dir, exist_ok=True)
    rng = np.random.default_rng(seed)

    width = header.ncols * header.cellsize
    height = header.nrows * header.cellsize
    cx_grid, cy_grid = grid_header_centers(header)
    px, py = cx_grid.ravel(), cy_grid.ravel()

    # -- oil fields: 3-6 rotated ellipses, redrawn until coverage is sane --
    while True:
        n_fields = int(rng.integers(3, 7))
        fields = []
        for _ in range(n_fields):
            fields.append({
                "cx": rng.uniform(0.15 * width, 0.85 * width),
                "cy": rng.uniform(0.15 * height, 0.85 * height),
                "a": rng.uniform(0.07, 0.13) * width,
                "b": rng.uniform(0.035, 0.065) * height,
                "angle": rng.uniform(0, np.pi),
            })
        truth = np.zeros(px.shape)
        for f in fields:
            truth[_ellipse_mask(f["cx"], f["cy"], f["a"], f["b"], f["angle"], px, py)] = 1.0
        coverage = truth.mean()
        if MIN_COVERAGE <= coverage <= MAX_COVERAGE:
            break
    truth_grid = Grid(header, truth)

    # -- anticline axes: along each field's major axis, plus barren decoys --
    axes = []
    for f in fields:
        cos, sin = np.cos(f["angle"]), np.sin(f["angle"])
        ext = 2.0 * f["a"]
        axes.append([
            (f["cx"] - ext * cos, f["cy"] - ext * sin),
            (f["cx"] + ext * cos, f["cy"] + ext * sin),
        ])
    for _ in range(2):  # decoy anticlines without charge
        x0, y0 = rng.uniform(0.1 * width, 0.9 * width), rng.uniform(0.1 * height, 0.9 * height)
        ang = rng.uniform(0, np.pi)
        ext = rng.uniform(0.1, 0.2) * width
        axes.append([
            (x0 - ext * np.cos(ang), y0 - ext * np.sin(ang)),
            (x0 + ext * np.cos(ang), y0 + ext * np.sin(ang)),
        ])

    # -- faults: random 3-vertex polylines crossing the area --
    faults = []
    for _ in range(int(rng.integers(4, 8))):
        x0, y0 = rng.uniform(0, width), rng.uniform(0, height)
        ang = rng.uniform(0, np.pi)
        length = rng.uniform(0.3, 0.8) * width
        mid_off = rng.uniform(-0.05, 0.05) * width
        x1 = x0 + length * np.cos(ang)
        y1 = y0 + length * np.sin(ang)
        xm = (x0 + x1) / 2 - mid_off * np.sin(ang)
        ym = (y0 + y1) / 2 + mid_off * np.cos(ang)
        faults.append([(x0, y0), (xm, ym), (x1, y1)])

    # -- structure-contour grid: depth with anticline highs (shallow) at fields
    depth = np.full(px.shape, 2500.0)
    for f in fields:
        cos, sin = np.cos(f["angle"]), np.sin(f["angle"])
        u = (px - f["cx"]) * cos + (py - f["cy"]) * sin
        v = -(px - f["cx"]) * sin + (py - f["cy"]) * cos
        depth -= 400.0 * np.exp(-((u / f["a"]) ** 2 + (v / f["b"]) ** 2))
    depth += _smooth_bumps(rng, px, py, width, height, n=12, amplitude=25.0,
                           spread=0.15 * width)
    structure_grid = Grid(header, depth)

    # -- Bouguer gravity: residual highs over the dense uplifted fields --
    n_grav = 250
    gx = rng.uniform(0, width, n_grav)
    gy = rng.uniform(0, height, n_grav)
    gv = np.full(n_grav, -30.0) + 0.00002 * gx + 0.00001 * gy
    for f in fields:
        cos, sin = np.cos(f["angle"]), np.sin(f["angle"])
        u = (gx - f["cx"]) * cos + (gy - f["cy"]) * sin
        v = -(gx - f["cx"]) * sin + (gy - f["cy"]) * cos
        gv += 12.0 * np.exp(-((u / (1.3 * f["a"])) ** 2 + (v / (1.3 * f["b"])) ** 2))
    gv += rng.normal(0, 0.4, n_grav)

    # -- wells: charged geochemistry inside fields, lean outside ------------
    n_inside = 25
    n_outside = 40
    rows = []
    well_no = 0
    inside_cells = np.flatnonzero(truth == 1.0)
    for _ in range(n_inside):
        cell = inside_cells[rng.integers(len(inside_cells))]
        wx, wy = px[cell], py[cell]
        well_no += 1
        toc = rng.uniform(2.5, 4.0)
        hi = rng.uniform(450.0, 600.0)
        pi = rng.uniform(0.08, 0.12)
        oi = rng.uniform(10.0, 30.0)
        tmax = rng.uniform(440.0, 452.0)
        rows.extend(_well_records(rng, f"W{well_no:03d}", wx, wy, toc, hi, pi, oi, tmax))
    for _ in range(n_outside):
        while True:
            cell = int(rng.integers(len(px)))
            if truth[cell] == 0.0:
                break
        wx, wy = px[cell], py[cell]
        well_no += 1
        toc = rng.uniform(0.4, 1.6)
        hi = rng.uniform(60.0, 250.0)
        pi = rng.uniform(0.02, 0.30)
        oi = rng.uniform(60.0, 160.0)
        tmax = rng.uniform(415.0, 435.0)
        rows.extend(_well_records(rng, f"W{well_no:03d}", wx, wy, toc, hi, pi, oi, tmax))

    # -- write everything ---------------------------------------------------
    paths = {
        "truth": os.path.join(out_dir, "oilfields.asc"),
        "structure": os.path.join(out_dir, "structure.asc"),
        "anticlines": os.path.join(out_dir, "anticlines.txt"),
        "faults": os.path.join(out_dir, "faults.txt"),
        "gravity": os.path.join(out_dir, "gravity.csv"),
        "wells": os.path.join(out_dir, "wells.csv"),
        "config": os.path.join(out_dir, "synth.cfg"),
    }
    write_ascii_grid(truth_grid, paths["truth"])
    write_ascii_grid(structure_grid, paths["structure"])
    _write_features(paths["anticlines"], axes)
    _write_features(paths["faults"], faults)
    with open(paths["gravity"], "w") as fh:
        fh.write("x,y,value\n")
        for x, y, v in zip(gx, gy, gv):
            fh.write(f"{float(x)!r},{float(y)!r},{float(v)!r}\n")
    with open(paths["wells"], "w") as fh:
        fh.write("well_id,x,y,S1,S2,S3,TOC,Tmax\n")
        for r in rows:
            fh.write(",".join(str(v) for v in r) + "\n")
    _write_config(paths, out_dir)
    return paths


def _well_records(rng, well_id, wx, wy, toc, hi, pi, oi, tmax):
    """2-4 Rock-Eval records per well with small multiplicative jitter."""
    records = []
    for _ in range(int(rng.integers(2, 5))):
        j = rng.uniform(0.97, 1.03, size=5)
        toc_s = toc * j[0]
        s2 = hi * toc_s / 100.0 * j[1]
        s1 = pi / (1.0 - pi) * s2 * j[2]
        s3 = oi * toc_s / 100.0 * j[3]
        tmax_s = tmax * (1 + (j[4] - 1) * 0.1)
        records.append((well_id, repr(float(wx)), repr(float(wy)), repr(float(s1)),
                        repr(float(s2)), repr(float(s3)), repr(float(toc_s)),
                        repr(float(tmax_s))))
    return records


def _write_features(path, polylines):
    with open(path, "w") as fh:
        for line in polylines:
            coords = " ".join(f"{float(x)!r} {float(y)!r}" for x, y in line)
            fh.write(f"LINE {coords}\n")


_GEOCHEM_DIRECTIONS = {
    "TOC": "linear_increasing",
    "PP": "linear_increasing",
    "HI": "linear_increasing",
    "Tmax": "linear_increasing",
    "PI": "linear_increasing",
    "OI": "linear_decreasing",
}


def _write_config(paths, out_dir):
    """Emit the default 17-factor config exercising both model families."""
    lines = [
        "[pipeline]",
        f"target = {paths['truth']}",
        f"out_dir = {os.path.join(out_dir, 'run')}",
        "seed = 42",
        "fractions = 0.70,0.15,0.15",
        "threshold = 0.5",
        "",
    ]
    for index in ("TOC", "PP", "Tmax", "PI", "OI", "HI"):
        for stat in ("mean", "max"):
            lines += [
                f"[factor:{index.lower()}_{stat}]",
                f"source = {paths['wells']}",
                "kind = wells",
                f"index = {index}",
                f"stat = {stat}",
                f"chain = idw(power=2) | fuzzy({_GEOCHEM_DIRECTIONS[index]}, auto)",
                "",
            ]
    lines += [
        "[factor:gravity]",
        f"source = {paths['gravity']}",
        "kind = points",
        "chain = idw(power=2) | fuzzy(linear_increasing, auto)",
        "",
        "[factor:anticline_proximity]",
        f"source = {paths['anticlines']}",
        "kind = features",
        "feature_kind = anticline_axes",
        "chain = distance | bin10 | fuzzy(small, auto)",
        "",
        "[factor:fault_proximity]",
        f"source = {paths['faults']}",
        "kind = features",
        "feature_kind = fault_lines",
        "chain = distance | fuzzy(linear_decreasing, auto)",
        "",
        "[factor:roughness]",
        f"source = {paths['structure']}",
        "kind = grid",
        "chain = tri | fuzzy(small, auto)",
        "",
        "[factor:curvature]",
        f"source = {paths['structure']}",
        "kind = grid",
        "chain = negate | curvature | fuzzy(large, auto)",
        "",
        "[mlp:deep]",
        "hidden = 10,5",
        "algorithm = levenberg_marquardt",
        "max_epochs = 40",
        "error_goal = 0.005",
        "seed = 7",
        "",
        "[anfis:subclust]",
        "radius = 0.5",
        "epochs = 300",
        "learning_rate = 0.01",
        "error_goal = 0.005",
        "",
    ]
    with open(paths["config"], "w") as fh:
        fh.write("\n".join(lines))
