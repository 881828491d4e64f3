"""Rock-Eval source-rock indices and per-well aggregation.

Indices are computed per record first, then aggregated to mean and maximum
per well (mean-of-index, not index-of-means).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

INDEX_NAMES = ("OI", "PI", "PP", "HI", "Tmax", "TOC")


class GeochemError(ValueError):
    """Physically impossible or inconsistent Rock-Eval data."""


@dataclass(frozen=True)
class RockEvalRecord:
    """One pyrolysis sample from one well."""

    well_id: str
    x: float
    y: float
    S1: float  # free hydrocarbons, mg HC / g rock
    S2: float  # kerogen-crackable hydrocarbons, mg HC / g rock
    S3: float  # CO2 released, mg CO2 / g rock
    TOC: float  # total organic carbon, weight %
    Tmax: float  # temperature of maximum S2 release, deg C

    def __post_init__(self):
        if self.S1 < 0 or self.S2 < 0 or self.S3 < 0:
            raise GeochemError(f"well {self.well_id}: negative S peak")
        if not self.TOC > 0:
            raise GeochemError(f"well {self.well_id}: TOC must be positive, got {self.TOC}")


@dataclass(frozen=True)
class WellIndexSummary:
    """Per-well mean and maximum of each index."""

    well_id: str
    x: float
    y: float
    mean: dict
    max: dict


def oxygen_index(r: RockEvalRecord) -> float:
    """OI = S3 / TOC, in mg CO2 per g TOC."""
    if not r.TOC > 0:
        raise GeochemError(f"well {r.well_id}: TOC must be positive for OI")
    return r.S3 / r.TOC


def production_index(r: RockEvalRecord) -> float:
    """PI = S1 / (S1 + S2), a thermal-maturity proxy in [0, 1].

    Early-production samples typically fall around 0.05-0.1; late ones
    around 0.3-0.4 (interpretation guidance, not enforced).
    """
    total = r.S1 + r.S2
    if not total > 0:
        raise GeochemError(f"well {r.well_id}: S1 + S2 must be positive for PI")
    return r.S1 / total


def production_potential(r: RockEvalRecord) -> float:
    """PP = S1 + S2, in mg HC per g rock."""
    return r.S1 + r.S2


def hydrogen_index(r: RockEvalRecord) -> float:
    """HI = 100 * S2 / TOC, in mg HC per g TOC.

    S2 is reported in mg HC per g rock and TOC in weight percent, so the
    factor of 100 converts to the conventional per-gram-of-carbon basis.
    """
    if not r.TOC > 0:
        raise GeochemError(f"well {r.well_id}: TOC must be positive for HI")
    return 100.0 * r.S2 / r.TOC


def _record_indices(r: RockEvalRecord) -> dict:
    return {
        "OI": oxygen_index(r),
        "PI": production_index(r),
        "PP": production_potential(r),
        "HI": hydrogen_index(r),
        "Tmax": r.Tmax,
        "TOC": r.TOC,
    }


def summarize_wells(records) -> list[WellIndexSummary]:
    """Aggregate records into per-well mean and max of each index.

    All records of one well must share coordinates.  Output order follows
    first appearance of each well_id; values are permutation-invariant.
    """
    records = list(records)
    if not records:
        raise GeochemError("no records to summarize")
    by_well: dict[str, list[RockEvalRecord]] = {}
    for r in records:
        by_well.setdefault(r.well_id, []).append(r)

    summaries = []
    for well_id, recs in by_well.items():
        x, y = recs[0].x, recs[0].y
        for r in recs[1:]:
            if r.x != x or r.y != y:
                raise GeochemError(
                    f"well {well_id}: inconsistent coordinates ({r.x}, {r.y}) vs ({x}, {y})"
                )
        per_record = [_record_indices(r) for r in recs]
        means = {k: sum(d[k] for d in per_record) / len(per_record) for k in INDEX_NAMES}
        maxes = {k: max(d[k] for d in per_record) for k in INDEX_NAMES}
        summaries.append(WellIndexSummary(well_id=well_id, x=x, y=y, mean=means, max=maxes))
    return summaries


def read_rockeval_csv(path) -> list[RockEvalRecord]:
    """Read records from CSV with header ``well_id,x,y,S1,S2,S3,TOC,Tmax``."""
    expected = ["well_id", "x", "y", "S1", "S2", "S3", "TOC", "Tmax"]
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != expected:
            raise GeochemError(
                f"{path}: expected CSV header {','.join(expected)}, got {reader.fieldnames}"
            )
        records = [
            RockEvalRecord(
                well_id=row["well_id"],
                x=float(row["x"]),
                y=float(row["y"]),
                S1=float(row["S1"]),
                S2=float(row["S2"]),
                S3=float(row["S3"]),
                TOC=float(row["TOC"]),
                Tmax=float(row["Tmax"]),
            )
            for row in reader
        ]
    if not records:
        raise GeochemError(f"{path}: no records")
    return records
