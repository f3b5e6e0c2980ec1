"""CSV and JSON interfaces of the immunity waning model."""

from __future__ import annotations

import csv
import datetime as dt

import numpy as np

from ..errors import AlignmentError, InputError
from ..series import DailySeries, DelayDistribution, ONE_DAY, discretize_delay
from .config import IwmConfig
from .engine import ImmunityTimelines

_COV_STATES = ("inactive", "active")
_DETECTION_STATES = ("none", "undetected", "detected")


def _collate_daily(path, rows):
    """Turn {(date, key): value} rows into per-key contiguous series."""
    if not rows:
        raise InputError(f"{path}: no data rows")
    days = sorted({day for day, _ in rows})
    first, last = days[0], days[-1]
    length = (last - first).days + 1
    if len(days) != length:
        missing = next(first + i * ONE_DAY for i in range(length)
                       if first + i * ONE_DAY not in set(days))
        raise AlignmentError(f"{path}: missing day {missing.isoformat()}; "
                             "series must be contiguous daily")
    keys = sorted({key for _, key in rows})
    out = {key: np.zeros(length) for key in keys}
    for (day, key), value in rows.items():
        out[key][(day - first).days] = value
    return first, {key: DailySeries(first, values) for key, values in out.items()}


def read_cases_csv(path):
    """Read `date,variant,count` rows into a total-cases series plus shares.

    Returns ``(total_cases, variant_shares)``; on days without any case
    the shares are 0 for every variant.
    """
    rows = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip().lower() for h in header] != ["date", "variant", "count"]:
            raise InputError(f"{path}: expected header 'date,variant,count'")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                day = dt.date.fromisoformat(row[0].strip())
                count = float(row[2])
            except (ValueError, IndexError) as exc:
                raise InputError(f"{path}:{lineno}: {exc}") from exc
            if count < 0:
                raise InputError(f"{path}:{lineno}: negative case count")
            key = (day, row[1].strip())
            rows[key] = rows.get(key, 0.0) + count
    start, per_variant = _collate_daily(path, rows)
    total = np.sum([series.values for series in per_variant.values()], axis=0)
    shares = {}
    with np.errstate(invalid="ignore", divide="ignore"):
        for variant, series in per_variant.items():
            share = np.where(total > 0, series.values / np.where(total > 0, total, 1.0), 0.0)
            shares[variant] = DailySeries(start, share)
    return DailySeries(start, total), shares


def read_vaccinations_csv(path, start_date=None, horizon=None):
    """Read `date,dose,count` rows into three aligned daily series.

    When ``start_date``/``horizon`` are given the series are re-padded to
    that window (counts outside it are rejected).
    """
    rows = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip().lower() for h in header] != ["date", "dose", "count"]:
            raise InputError(f"{path}: expected header 'date,dose,count'")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                day = dt.date.fromisoformat(row[0].strip())
                dose = int(row[1])
                count = float(row[2])
            except (ValueError, IndexError) as exc:
                raise InputError(f"{path}:{lineno}: {exc}") from exc
            if dose not in (1, 2, 3):
                raise InputError(f"{path}:{lineno}: dose must be 1, 2 or 3")
            if count < 0:
                raise InputError(f"{path}:{lineno}: negative vaccination count")
            key = (day, dose)
            rows[key] = rows.get(key, 0.0) + count
    if not rows:
        raise InputError(f"{path}: no data rows")
    first_day = min(day for day, _ in rows)
    for dose in (1, 2, 3):           # make sure all three series exist
        rows.setdefault((first_day, dose), 0.0)
    start, per_dose = _collate_daily(path, rows)
    series = [per_dose[dose] for dose in (1, 2, 3)]
    if start_date is not None and horizon is not None:
        series = [_repad(s, start_date, horizon, path) for s in series]
    return tuple(series)


def _repad(series: DailySeries, start_date, horizon, path) -> DailySeries:
    out = np.zeros(horizon)
    for i, value in enumerate(series.values):
        day = series.start_date + i * ONE_DAY
        offset = (day - start_date).days
        if 0 <= offset < horizon:
            out[offset] = value
        elif value != 0:
            raise InputError(f"{path}: nonzero count on {day.isoformat()} outside "
                             f"the simulation window")
    return DailySeries(start_date, out)


def _delay_from_json(spec, name) -> DelayDistribution:
    if not isinstance(spec, dict):
        raise InputError(f"{name}: expected an object with 'mass' or 'family'")
    if "mass" in spec:
        return DelayDistribution(np.asarray(spec["mass"], dtype=float))
    try:
        return discretize_delay(spec["family"], float(spec["scale"]), int(spec["support"]))
    except KeyError as exc:
        raise InputError(f"{name}: missing key {exc}") from exc


def iwm_config_from_json(doc: dict, base_dir) -> IwmConfig:
    """Build a config from a JSON document; series come from CSV paths."""
    from pathlib import Path

    base = Path(base_dir)
    try:
        cases, shares = read_cases_csv(base / doc["cases_csv"])
        variants = tuple(doc.get("variants") or sorted(shares))
        horizon = int(doc.get("horizon") or len(cases))
        start_date = (dt.date.fromisoformat(doc["start_date"])
                      if "start_date" in doc else cases.start_date)
        vaccinations = (None, None, None)
        if doc.get("vaccinations_csv"):
            vaccinations = read_vaccinations_csv(base / doc["vaccinations_csv"],
                                                 start_date, horizon)
        effect_delays = tuple(int(d) for d in doc.get("effect_delays", (0, 0, 0)))
        return IwmConfig(
            n_entities=int(doc["n_entities"]),
            start_date=start_date,
            horizon=horizon,
            variants=variants,
            observables=tuple(doc["observables"]),
            infection_targets=dict(doc["infection_targets"]),
            cases=cases,
            variant_shares={v: shares[v] for v in variants},
            detection_rate=float(doc["detection_rate"]),
            undetected_factor=(None if doc.get("undetected_factor") is None
                               else float(doc["undetected_factor"])),
            base_probs=doc["base_probs"],
            waning_means=doc["waning_means"],
            waning_families=doc["waning_families"],
            delay_detect=_delay_from_json(doc["delay_detect"], "delay_detect"),
            delay_recover_detected=_delay_from_json(
                doc["delay_recover_detected"], "delay_recover_detected"),
            delay_recover_undetected=_delay_from_json(
                doc["delay_recover_undetected"], "delay_recover_undetected"),
            vaccinations=vaccinations,
            min_gap_12=int(doc.get("min_gap_12", 0)),
            min_gap_23=int(doc.get("min_gap_23", 0)),
            effect_delays=effect_delays,
        )
    except KeyError as exc:
        raise InputError(f"iwm config: missing key {exc}") from exc


def write_immunity_csv(timelines: ImmunityTimelines, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["date", "observable", "immune_count", "immune_fraction"])
        for i in range(len(timelines.census)):
            day = (timelines.start_date + i * ONE_DAY).isoformat()
            for obs in timelines.observables:
                count = int(timelines.immune_counts[obs][i])
                writer.writerow([day, obs, count, repr(count / timelines.n_entities)])


def write_census_csv(timelines: ImmunityTimelines, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["date", "cov_state", "detection_state", "shots", "count"])
        for i in range(len(timelines.census)):
            day = (timelines.start_date + i * ONE_DAY).isoformat()
            for x1, cov in enumerate(_COV_STATES):
                for x2, det in enumerate(_DETECTION_STATES):
                    for x3 in range(4):
                        count = int(timelines.census[i, x1, x2, x3])
                        if count:
                            writer.writerow([day, cov, det, x3, count])
