"""Core raster grid type and ESRI ASCII grid I/O.

Grids are stored row-major with row 0 at the TOP of the map, matching the
text order of the ASCII grid format.  Cell (0, 0) is the top-left map cell.
Grids are immutable after construction and safe to share across workers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_NODATA = -9999.0


class GridFormatError(ValueError):
    """Malformed ASCII grid header or body."""


class GridDimensionError(ValueError):
    """Value count or shape inconsistent with the declared header."""


class AlignmentError(ValueError):
    """Two grids do not share the same geometry."""


@dataclass(frozen=True)
class GridHeader:
    """The six ESRI ASCII header fields."""

    ncols: int
    nrows: int
    xll: float
    yll: float
    cellsize: float
    nodata_value: float = DEFAULT_NODATA

    def __post_init__(self):
        if self.ncols < 1 or self.nrows < 1:
            raise GridDimensionError(
                f"grid dimensions must be positive, got {self.nrows}x{self.ncols}"
            )
        if not self.cellsize > 0:
            raise GridDimensionError(f"cellsize must be positive, got {self.cellsize}")


class Grid:
    """A georeferenced raster of one factor with a nodata mask.

    ``values`` is an (nrows, ncols) float64 array; cells equal (bitwise) to
    ``nodata_value`` are missing.  The array is frozen read-only.
    """

    __slots__ = ("header", "values")

    def __init__(self, header: GridHeader, values):
        values = np.asarray(values, dtype=np.float64)
        if values.size != header.nrows * header.ncols:
            raise GridDimensionError(
                f"expected {header.nrows * header.ncols} values, got {values.size}"
            )
        values = values.reshape(header.nrows, header.ncols).copy()
        values.setflags(write=False)
        self.header = header
        self.values = values

    def __setattr__(self, name, value):
        if name in self.__slots__ and hasattr(self, "values"):
            raise AttributeError("Grid is immutable")
        object.__setattr__(self, name, value)

    # -- convenience accessors -------------------------------------------

    @property
    def ncols(self):
        return self.header.ncols

    @property
    def nrows(self):
        return self.header.nrows

    @property
    def cellsize(self):
        return self.header.cellsize

    @property
    def nodata_value(self):
        return self.header.nodata_value

    def nodata_mask(self):
        """Boolean array, True where the cell is nodata."""
        return self.values == self.header.nodata_value

    def valid_values(self):
        """1-D array of the non-nodata cell values."""
        return self.values[~self.nodata_mask()]

    def cell_centers(self):
        """Map coordinates (x, y) of every cell center, each (nrows, ncols).

        Row 0 is the top of the map, so its y is the largest.
        """
        h = self.header
        cols = np.arange(h.ncols)
        rows = np.arange(h.nrows)
        x = h.xll + (cols + 0.5) * h.cellsize
        y = h.yll + (h.nrows - rows - 0.5) * h.cellsize
        return np.meshgrid(x, y)

    def with_values(self, values) -> "Grid":
        """New grid with the same header and different values."""
        return Grid(self.header, values)

    def __eq__(self, other):
        if not isinstance(other, Grid):
            return NotImplemented
        return self.header == other.header and np.array_equal(self.values, other.values)

    def __repr__(self):
        h = self.header
        return f"Grid({h.nrows}x{h.ncols}, cellsize={h.cellsize}, xll={h.xll}, yll={h.yll})"


def grid_header_centers(header: GridHeader):
    """Cell-center coordinate arrays for a bare header (no values needed)."""
    cols = np.arange(header.ncols)
    rows = np.arange(header.nrows)
    x = header.xll + (cols + 0.5) * header.cellsize
    y = header.yll + (header.nrows - rows - 0.5) * header.cellsize
    return np.meshgrid(x, y)


_HEADER_KEYS = ("ncols", "nrows", "xllcorner", "yllcorner", "cellsize", "nodata_value")


def read_ascii_grid(path) -> Grid:
    """Parse an ESRI ASCII grid file.

    Header keywords are case-insensitive; ``xllcenter``/``yllcenter`` are
    converted to the corner convention by subtracting half a cell.
    """
    with open(path) as fh:
        text = fh.read()
    lines = text.splitlines()
    if len(lines) < 6:
        raise GridFormatError(f"{path}: expected 6 header lines, file has {len(lines)}")

    fields = {}
    center_x = center_y = False
    for i, line in enumerate(lines[:6]):
        parts = line.split()
        if len(parts) != 2:
            raise GridFormatError(f"{path}: malformed header line {i + 1}: {line!r}")
        key = parts[0].lower()
        if key == "xllcenter":
            key, center_x = "xllcorner", True
        elif key == "yllcenter":
            key, center_y = "yllcorner", True
        if key not in _HEADER_KEYS:
            raise GridFormatError(f"{path}: unknown header keyword on line {i + 1}: {parts[0]!r}")
        try:
            fields[key] = int(parts[1]) if key in ("ncols", "nrows") else float(parts[1])
        except ValueError:
            raise GridFormatError(
                f"{path}: unparseable value on header line {i + 1}: {parts[1]!r}"
            ) from None
    missing = [k for k in _HEADER_KEYS if k not in fields]
    if missing:
        raise GridFormatError(f"{path}: missing header fields: {', '.join(missing)}")

    cellsize = fields["cellsize"]
    if center_x:
        fields["xllcorner"] -= cellsize / 2
    if center_y:
        fields["yllcorner"] -= cellsize / 2

    header = GridHeader(
        ncols=fields["ncols"],
        nrows=fields["nrows"],
        xll=fields["xllcorner"],
        yll=fields["yllcorner"],
        cellsize=cellsize,
        nodata_value=fields["nodata_value"],
    )

    body = "\n".join(lines[6:])
    try:
        values = np.array(body.split(), dtype=np.float64)
    except ValueError as exc:
        raise GridFormatError(f"{path}: unparseable cell value: {exc}") from None
    if values.size != header.nrows * header.ncols:
        raise GridDimensionError(
            f"{path}: header declares {header.nrows}x{header.ncols}="
            f"{header.nrows * header.ncols} cells but body has {values.size} values"
        )
    return Grid(header, values)


def _fmt(v: float) -> str:
    # repr() of a Python float is the shortest round-trip decimal form
    return repr(float(v))


def write_ascii_grid(grid: Grid, path) -> None:
    """Write a grid as an ESRI ASCII file that re-parses to an equal Grid."""
    h = grid.header
    with open(path, "w") as fh:
        fh.write(f"ncols {h.ncols}\n")
        fh.write(f"nrows {h.nrows}\n")
        fh.write(f"xllcorner {_fmt(h.xll)}\n")
        fh.write(f"yllcorner {_fmt(h.yll)}\n")
        fh.write(f"cellsize {_fmt(h.cellsize)}\n")
        fh.write(f"NODATA_value {_fmt(h.nodata_value)}\n")
        for row in grid.values:
            fh.write(" ".join(_fmt(v) for v in row))
            fh.write("\n")


def assert_aligned(grids) -> None:
    """Check that all grids share one geometry.

    Integer fields must match exactly; real fields within 1e-9 map units.
    Raises AlignmentError naming the first mismatching field and grid index.
    """
    grids = list(grids)
    if not grids:
        raise ValueError("assert_aligned requires at least one grid")
    ref = grids[0].header
    for i, g in enumerate(grids[1:], start=1):
        h = g.header
        if h.ncols != ref.ncols:
            raise AlignmentError(f"grid {i}: ncols {h.ncols} != {ref.ncols}")
        if h.nrows != ref.nrows:
            raise AlignmentError(f"grid {i}: nrows {h.nrows} != {ref.nrows}")
        for field in ("xll", "yll", "cellsize"):
            a, b = getattr(h, field), getattr(ref, field)
            if abs(a - b) > 1e-9:
                raise AlignmentError(f"grid {i}: {field} {a} != {b}")


def focal_window(grid: Grid, row: int, col: int):
    """The 3x3 neighborhood centered at (row, col), top-left map orientation.

    Off-grid positions are reported as the grid's nodata value.
    """
    h = grid.header
    if not (0 <= row < h.nrows and 0 <= col < h.ncols):
        raise IndexError(f"cell ({row}, {col}) outside {h.nrows}x{h.ncols} grid")
    out = np.full((3, 3), h.nodata_value)
    r0, r1 = max(row - 1, 0), min(row + 2, h.nrows)
    c0, c1 = max(col - 1, 0), min(col + 2, h.ncols)
    out[r0 - row + 1 : r1 - row + 1, c0 - col + 1 : c1 - col + 1] = grid.values[r0:r1, c0:c1]
    return out
