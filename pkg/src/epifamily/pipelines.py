"""Model compositions.

Four ready-made pipelines couple the models through their input/output
series, the way the family is meant to be used:

* scenario case curves -> occupancy under virulence assumptions,
* a case forecast -> age split of the coming wave,
* case history + forecast -> immunity forecast with a seed band,
* immunity levels -> occupancy with an immunity-adjusted rate.

Pipelines add no hidden transformations: every output is exactly what
chaining the module operations with the same seeds produces, except for
the documented rate-factor normalization in the immunity-adjusted
occupancy run. Each report carries provenance (which model produced
which series) and enough metadata (seeds, config fingerprints) to
reproduce the run.
"""

from __future__ import annotations

import dataclasses
import datetime as dt
import hashlib
import json
import logging
from dataclasses import dataclass, is_dataclass
from pathlib import Path

import numpy as np

from .asm.calibrate import asm_calibrate_beta
from .asm.model import (AgeMesh, AsmParams, AsmState, asm_age_distribution,
                        asm_integrate)
from .errors import InputError, NumericalError, UndefinedDistributionError
from .hm import HmParams, hm_forward
from .iwm.config import IwmConfig
from .iwm.engine import protection_curves, run_iwm
from .series import DailySeries, ONE_DAY, align_and_concat, write_series_csv

log = logging.getLogger(__name__)


def fingerprint(obj) -> str:
    """Stable short hash of nested configs/series for run manifests."""
    digest = hashlib.sha256()

    def feed(value):
        if is_dataclass(value) and not isinstance(value, type):
            feed(type(value).__name__)
            for field in dataclasses.fields(value):
                feed(field.name)
                feed(getattr(value, field.name))
        elif isinstance(value, dict):
            feed("dict")
            for key in sorted(value, key=repr):
                feed(repr(key))
                feed(value[key])
        elif isinstance(value, (list, tuple)):
            feed("seq")
            for item in value:
                feed(item)
        elif isinstance(value, np.ndarray):
            digest.update(str(value.dtype).encode())
            digest.update(str(value.shape).encode())
            digest.update(value.tobytes())
        elif isinstance(value, dt.date):
            digest.update(value.isoformat().encode())
        else:
            digest.update(repr(value).encode())

    feed(obj)
    return digest.hexdigest()[:16]


@dataclass
class PipelineReport:
    """Named output series with provenance and reproducibility metadata."""

    pipeline: str
    series: dict                 # name -> DailySeries
    provenance: dict             # name -> producing model
    metadata: dict

    def write(self, out_dir, fmt: str = "csv") -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        doc = {"pipeline": self.pipeline, "provenance": dict(self.provenance),
               "metadata": self.metadata, "series": {}}
        for name, series in self.series.items():
            if fmt == "csv":
                write_series_csv(series, out / f"{name}.csv")
                doc["series"][name] = f"{name}.csv"
            else:
                doc["series"][name] = {
                    "start_date": series.start_date.isoformat(),
                    "values": [float(v) for v in series.values],
                }
        with open(out / "report.json", "w") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")


# --- scenario occupancy matrix ----------------------------------------------

def pipeline_ss1(case_scenarios, virulence_factors, hm_params: HmParams,
                 forecast_start: dt.date) -> PipelineReport:
    """Occupancy for every (case scenario, virulence factor) pair.

    Each factor scales the hospitalisation-rate factor series from the
    forecast start date onward, leaving history untouched; every pair is
    one independent forward run.
    """
    for factor in virulence_factors:
        if factor <= 0:
            raise InputError(f"virulence factor must be positive, got {factor!r}")
    series = {}
    provenance = {}
    for s_idx, cases in enumerate(case_scenarios):
        offset = (forecast_start - cases.start_date).days
        if not 0 <= offset <= len(cases):
            raise InputError(f"forecast start {forecast_start.isoformat()} outside "
                             f"scenario {s_idx} window")
        base = (hm_params.factors.values if hm_params.factors is not None
                else np.ones(len(cases)))
        if hm_params.factors is not None and (
                hm_params.factors.start_date != cases.start_date
                or len(hm_params.factors) != len(cases)):
            raise InputError("hm factor series must align with the scenario series")
        for factor in virulence_factors:
            scaled = base.copy()
            scaled[offset:] *= factor
            params = dataclasses.replace(
                hm_params, factors=DailySeries(cases.start_date, scaled))
            output = hm_forward(cases, params)
            name = f"occupancy_s{s_idx}_f{factor:g}"
            series[name] = output.occupancy
            provenance[name] = "hm"
    return PipelineReport(
        pipeline="ss1", series=series, provenance=provenance,
        metadata={"virulence_factors": [float(f) for f in virulence_factors],
                  "n_scenarios": len(case_scenarios),
                  "forecast_start": forecast_start.isoformat(),
                  "hm_params": fingerprint(hm_params)})


# --- age split of a forecast wave -------------------------------------------

def pipeline_ss2(case_forecast: DailySeries, state0: AsmState, params: AsmParams,
                 mesh: AgeMesh, weeks: int | None = None) -> PipelineReport:
    """Calibrate the age model to a case forecast and report the age split.

    Returns mean-age trajectories for all, vaccinated-only and
    unvaccinated-only active cases. A split without any mass over the
    whole horizon is omitted and noted instead of failing the pipeline.
    """
    calibration = asm_calibrate_beta(params, state0, mesh, case_forecast, weeks=weeks)
    fitted = params.with_beta_steps(calibration.beta_steps)
    horizon = len(calibration.beta_steps) * params.week_length
    trajectory = asm_integrate(state0, fitted, mesh, horizon)

    series = {}
    provenance = {}
    notes = {}
    daily_cases = np.diff(trajectory.cumulative_cases)
    series["model_cases"] = DailySeries(case_forecast.start_date, daily_cases)
    provenance["model_cases"] = "asm"
    for split in ("all", "vaccinated", "unvaccinated"):
        values = []
        first_defined = None
        for day in range(horizon + 1):
            try:
                dist = asm_age_distribution(trajectory, day, split)
            except UndefinedDistributionError:
                if first_defined is not None:
                    break       # keep the contiguous defined run only
                continue
            if first_defined is None:
                first_defined = day
            values.append(dist.mean_age)
        if first_defined is None:
            notes[split] = "no mass in this split over the whole horizon"
            continue
        if len(values) < horizon + 1 - first_defined:
            notes[split] = (f"mass vanished after day {first_defined + len(values) - 1}; "
                            "trajectory truncated")
        name = f"mean_age_{split}"
        series[name] = DailySeries(case_forecast.start_date + first_defined * ONE_DAY,
                                   np.array(values))
        provenance[name] = "asm"
    return PipelineReport(
        pipeline="ss2", series=series, provenance=provenance,
        metadata={"beta_steps": [float(b) for b in calibration.beta_steps],
                  "weekly_targets": [float(t) for t in calibration.weekly_targets],
                  "weekly_model": [float(m) for m in calibration.weekly_model],
                  "bisection_steps": list(calibration.bisection_steps),
                  "converged": list(calibration.converged),
                  "split_notes": notes,
                  "asm_params": fingerprint(params)})


# --- immunity forecast with uncertainty band ---------------------------------

def pipeline_ss3(history_cases: dict, forecast_cases: dict, config: IwmConfig,
                 infection_target: str, severe_target: str,
                 seeds) -> PipelineReport:
    """Immunity level over history plus forecast, banded over seeds.

    ``history_cases`` and ``forecast_cases`` map variant ids to daily
    series; they are concatenated (seam checked) and run through the
    immunity model once per seed. The report carries the per-day mean
    and min-max band over seeds for both protection curves.
    """
    if set(history_cases) != set(forecast_cases):
        raise InputError("history and forecast must cover the same variants")
    if isinstance(seeds, int):
        seeds = list(range(seeds))
    else:
        seeds = list(seeds)
    if not seeds:
        raise InputError("need at least one seed")

    joined = {variant: align_and_concat(history_cases[variant], forecast_cases[variant])
              for variant in history_cases}
    horizon = len(next(iter(joined.values())))
    total = np.sum([joined[v].values for v in joined], axis=0)
    start = next(iter(joined.values())).start_date
    with np.errstate(invalid="ignore", divide="ignore"):
        shares = {v: DailySeries(start, np.where(total > 0, s.values
                                                 / np.where(total > 0, total, 1.0), 0.0))
                  for v, s in joined.items()}
    vaccinations = tuple(
        None if s is None else DailySeries(start, np.concatenate(
            [s.values, np.zeros(horizon - len(s))]))
        for s in config.vaccinations)
    run_config = dataclasses.replace(
        config, cases=DailySeries(start, total), variant_shares=shares,
        horizon=horizon, start_date=start, vaccinations=vaccinations)

    infection_runs = []
    severe_runs = []
    for seed in seeds:
        timelines = run_iwm(run_config, seed)
        p_inf, p_sev = protection_curves(timelines, infection_target, severe_target)
        infection_runs.append(p_inf.values)
        severe_runs.append(p_sev.values)

    series = {}
    provenance = {}
    for label, runs in (("infection", np.array(infection_runs)),
                        ("severe", np.array(severe_runs))):
        for stat, values in (("mean", runs.mean(axis=0)), ("min", runs.min(axis=0)),
                             ("max", runs.max(axis=0))):
            name = f"protection_{label}_{stat}"
            series[name] = DailySeries(start, values)
            provenance[name] = "iwm"
    return PipelineReport(
        pipeline="ss3", series=series, provenance=provenance,
        metadata={"seeds": [int(s) for s in seeds],
                  "infection_target": infection_target,
                  "severe_target": severe_target,
                  "iwm_config": fingerprint(run_config)})


# --- immunity-adjusted occupancy ---------------------------------------------

def immunity_rate_factors(protection_infection: DailySeries,
                          protection_severe: DailySeries,
                          anchor_day: dt.date) -> DailySeries:
    """Hospitalisation-rate factors from the two protection levels.

    The rate is proportional to the share of the still-susceptible that
    is unprotected against severe disease, ``(1-Ps) / (1-Pi)``; the
    proportionality constant is fixed by normalizing the factor to 1 on
    the anchor day (the last calibration day), so a calibrated base rate
    keeps its meaning.
    """
    if (protection_infection.start_date != protection_severe.start_date
            or len(protection_infection) != len(protection_severe)):
        raise InputError("protection curves must share their calendar window")
    p_inf = protection_infection.values
    p_sev = protection_severe.values
    for i in range(len(p_inf)):
        day = protection_infection.start_date + i * ONE_DAY
        if p_inf[i] >= 1.0:
            raise NumericalError(f"protection against infection is 1 on "
                                 f"{day.isoformat()}; rate ratio is singular")
        if p_sev[i] < p_inf[i] - 1e-12:
            raise InputError(
                f"protection against severe disease ({p_sev[i]:.6g}) below protection "
                f"against infection ({p_inf[i]:.6g}) on {day.isoformat()}")
    ratio = (1.0 - p_sev) / (1.0 - p_inf)
    anchor = ratio[protection_infection.index_of(anchor_day)]
    if anchor <= 0:
        raise NumericalError(f"rate ratio vanishes on the anchor day "
                             f"{anchor_day.isoformat()}")
    return DailySeries(protection_infection.start_date, ratio / anchor)


def pipeline_ss4(protection_infection: DailySeries, protection_severe: DailySeries,
                 cases: DailySeries, hm_params: HmParams,
                 anchor_day: dt.date) -> PipelineReport:
    """Occupancy with and without the immunity-adjusted rate.

    The adjusted run multiplies the parameterized rate factors with the
    normalized protection ratio; the unadjusted run uses the parameters
    as passed, for comparison.
    """
    factors = immunity_rate_factors(protection_infection, protection_severe, anchor_day)
    if factors.start_date != cases.start_date or len(factors) != len(cases):
        raise InputError("protection curves must cover exactly the case window")
    combined = factors.values
    if hm_params.factors is not None:
        if (hm_params.factors.start_date != cases.start_date
                or len(hm_params.factors) != len(cases)):
            raise InputError("hm factor series must align with the case series")
        combined = combined * hm_params.factors.values
    adjusted_params = dataclasses.replace(
        hm_params, factors=DailySeries(cases.start_date, combined))
    adjusted = hm_forward(cases, adjusted_params)
    unadjusted = hm_forward(cases, hm_params)
    series = {
        "occupancy_adjusted": adjusted.occupancy,
        "occupancy_unadjusted": unadjusted.occupancy,
        "rate_factors": factors,
    }
    provenance = {"occupancy_adjusted": "hm", "occupancy_unadjusted": "hm",
                  "rate_factors": "iwm+hm"}
    return PipelineReport(
        pipeline="ss4", series=series, provenance=provenance,
        metadata={"anchor_day": anchor_day.isoformat(),
                  "hm_params": fingerprint(hm_params)})
