"""Initial densities from age-binned counts.

Surveillance exports come in heterogeneous age bins (5-year, 10-year,
open-ended). Each bin's count is spread uniformly over its age range and
convolved with a Gaussian kernel, which makes the density smooth in the
discrete sense while keeping a closed form (difference of normal CDFs).
The result is renormalized per compartment so the mesh-integrated total
matches the raw bin total exactly, which also absorbs the kernel mass
lost beyond the mesh ends.
"""

from __future__ import annotations

import csv

import numpy as np
from scipy.special import ndtr

from ..errors import InputError
from .model import AgeMesh, AsmState, COMPARTMENTS

DEFAULT_BANDWIDTH_YEARS = 3.0


def smooth_bins(bins, bandwidth: float, mesh: AgeMesh) -> np.ndarray:
    """Smooth ``(age_lo, age_hi, count)`` bins into a mesh density."""
    if bandwidth <= 0:
        raise InputError("bandwidth must be positive")
    ages = mesh.nodes
    density = np.zeros(mesh.n_nodes)
    total = 0.0
    for lo, hi, count in bins:
        if hi <= lo:
            raise InputError(f"bin [{lo}, {hi}) is empty or reversed")
        if count < 0:
            raise InputError(f"negative count in bin [{lo}, {hi})")
        if count == 0:
            continue
        total += count
        # uniform bin density convolved with a Gaussian of width `bandwidth`
        density += (count / (hi - lo)) * (ndtr((ages - lo) / bandwidth)
                                          - ndtr((ages - hi) / bandwidth))
    if total == 0.0:
        return density
    integral = mesh.integrate(density)
    if integral <= 0.0:
        raise InputError("smoothed density carries no mass on the mesh; "
                         "are the bins inside the age range?")
    return density * (total / integral)


def asm_initialize(raw: dict, bandwidth: float, mesh: AgeMesh) -> AsmState:
    """Build a state from per-compartment bin lists (keys S, Sv, I, Iv, R).

    Missing compartments are empty; at least one bin with a positive
    count is required overall.
    """
    unknown = set(raw) - set(COMPARTMENTS)
    if unknown:
        raise InputError(f"unknown compartments {sorted(unknown)}; expected {COMPARTMENTS}")
    densities = {}
    any_mass = False
    for name in COMPARTMENTS:
        bins = raw.get(name, ())
        densities[name] = smooth_bins(bins, bandwidth, mesh)
        any_mass = any_mass or densities[name].sum() > 0
    if not any_mass:
        raise InputError("no population mass in any compartment")
    return AsmState(**densities)


def read_compartments_csv(path) -> dict:
    """Read `age_lo,age_hi,S,Sv,I,Iv,R` rows into per-compartment bins."""
    raw = {name: [] for name in COMPARTMENTS}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        expected = ["age_lo", "age_hi", *[c.lower() for c in COMPARTMENTS]]
        if header is None or [h.strip().lower() for h in header] != expected:
            raise InputError(f"{path}: expected header 'age_lo,age_hi,S,Sv,I,Iv,R'")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                lo, hi = float(row[0]), float(row[1])
                counts = [float(v) for v in row[2:7]]
            except (ValueError, IndexError) as exc:
                raise InputError(f"{path}:{lineno}: {exc}") from exc
            for name, count in zip(COMPARTMENTS, counts):
                raw[name].append((lo, hi, count))
    if not any(raw[name] for name in COMPARTMENTS):
        raise InputError(f"{path}: no data rows")
    return raw


def read_contact_matrix_csv(path, mesh: AgeMesh) -> np.ndarray:
    """Read a square, age-bin labeled contact matrix onto the mesh.

    Row/column labels are `lo-hi` year ranges; values are daily contact
    densities. Bins are mapped to mesh nodes piecewise constantly; ages
    beyond the last bin reuse its values.
    """
    with open(path, newline="") as fh:
        rows = [row for row in csv.reader(fh) if row]
    if len(rows) < 2:
        raise InputError(f"{path}: expected a labeled square matrix")
    labels = [label.strip() for label in rows[0][1:]]
    try:
        edges = [tuple(float(part) for part in label.split("-")) for label in labels]
    except ValueError as exc:
        raise InputError(f"{path}: bad bin label; expected 'lo-hi' years ({exc})") from exc
    if len(rows) - 1 != len(labels):
        raise InputError(f"{path}: matrix is not square "
                         f"({len(rows) - 1} rows, {len(labels)} columns)")
    values = np.zeros((len(labels), len(labels)))
    for i, row in enumerate(rows[1:], start=0):
        if row[0].strip() != labels[i]:
            raise InputError(f"{path}: row label {row[0]!r} does not match "
                             f"column label {labels[i]!r}")
        try:
            values[i] = [float(v) for v in row[1:]]
        except ValueError as exc:
            raise InputError(f"{path}: {exc}") from exc
    if np.any(values < 0):
        raise InputError(f"{path}: contact densities must be >= 0")

    def bin_of(age: float) -> int:
        for k, (lo, hi) in enumerate(edges):
            if lo <= age < hi:
                return k
        return len(edges) - 1

    index = np.array([bin_of(a) for a in mesh.nodes])
    return values[np.ix_(index, index)]
