"""Synthetic case-scenario generator.

Desk-scale stand-in for an external epidemic forecasting model: the
pipelines need shaped per-variant daily case curves, not epidemiological
fidelity. Total cases follow a deterministic SIRS difference system with
multiplicative seasonal forcing; variant shares follow logistic takeover
curves whose transmissibility factors feed back into the transmission
rate. Scenario 0 runs the nominal rates; further scenarios perturb the
transmission rate with a seed-derived multiplier.
"""

from __future__ import annotations

import datetime as dt
import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .series import DailySeries

log = logging.getLogger(__name__)

_SEASON_LENGTH_DAYS = 365.0
#: log-normal sigma of the per-scenario transmission multiplier
_SCENARIO_JITTER = 0.1


@dataclass(frozen=True)
class VariantTakeover:
    """One emerging variant with a logistic takeover curve."""

    variant: str
    start_day: int            # day the variant reaches a 50% share against the baseline
    growth_rate: float        # logistic growth per day
    transmissibility: float   # transmission multiplier relative to the baseline

    def __post_init__(self):
        if not math.isfinite(self.growth_rate):
            raise InputError("takeover growth rate must be finite")
        if self.transmissibility <= 0:
            raise InputError("takeover transmissibility factor must be positive")


@dataclass(frozen=True)
class ScenarioSpec:
    start_date: dt.date
    horizon: int
    population: float
    transmission: float       # per day
    recovery: float           # per day
    waning: float             # per day, immunity loss back to susceptible
    seasonal_amplitude: float = 0.0
    initial: tuple[float, float, float] = (0.0, 0.0, 0.0)   # S, I, R totals
    baseline_variant: str = "baseline"
    takeovers: tuple[VariantTakeover, ...] = ()
    seed: int = 0

    def __post_init__(self):
        if self.horizon < 1:
            raise InputError("scenario horizon must cover at least one day")
        if self.transmission <= 0 or self.recovery <= 0 or self.waning < 0:
            raise InputError("transmission and recovery rates must be positive, waning >= 0")
        if not 0.0 <= self.seasonal_amplitude <= 1.0:
            raise InputError("seasonal amplitude must lie in [0, 1]")
        if self.population <= 0:
            raise InputError("population must be positive")
        if any(v < 0 for v in self.initial):
            raise InputError("initial compartment totals must be >= 0")
        if sum(self.initial) > self.population * (1 + 1e-9):
            raise InputError("initial compartments exceed the population")
        names = [self.baseline_variant] + [t.variant for t in self.takeovers]
        if len(set(names)) != len(names):
            raise InputError("duplicate variant ids in scenario spec")

    @property
    def variants(self) -> tuple[str, ...]:
        return (self.baseline_variant,) + tuple(t.variant for t in self.takeovers)


def variant_shares(spec: ScenarioSpec, day: int) -> np.ndarray:
    """Normalized shares of all variants (baseline first) on one day."""
    weights = [1.0]
    for takeover in spec.takeovers:
        weights.append(math.exp(min(takeover.growth_rate * (day - takeover.start_day), 700.0)))
    weights = np.asarray(weights)
    return weights / weights.sum()


def _simulate(spec: ScenarioSpec, transmission_multiplier: float) -> dict[str, DailySeries]:
    factors = np.array([1.0] + [t.transmissibility for t in spec.takeovers])
    s, i, r = (float(v) for v in spec.initial)
    n = spec.population
    cases = np.zeros((len(spec.variants), spec.horizon))
    clipped = False
    for day in range(spec.horizon):
        shares = variant_shares(spec, day)
        seasonal = 1.0 + spec.seasonal_amplitude * math.cos(
            2.0 * math.pi * day / _SEASON_LENGTH_DAYS)
        beta = spec.transmission * transmission_multiplier * seasonal * float(shares @ factors)
        new_infections = beta * s * i / n
        if new_infections > s:
            new_infections = s
            clipped = True
        recoveries = min(spec.recovery * i, i)
        waned = min(spec.waning * r, r)
        cases[:, day] = new_infections * shares
        s += waned - new_infections
        i += new_infections - recoveries
        r += recoveries - waned
    if clipped:
        log.warning("scenario clipped infections to the susceptible pool; "
                    "parameterization is explosive")
    return {variant: DailySeries(spec.start_date, cases[k])
            for k, variant in enumerate(spec.variants)}


def generate_scenarios(spec: ScenarioSpec, count: int) -> list[dict[str, DailySeries]]:
    """Per-variant daily case curves for ``count`` scenarios.

    Deterministic in ``spec.seed``: scenario 0 uses the nominal
    transmission rate, scenario k > 0 multiplies it by a log-normal
    factor drawn from the (seed, k) stream.
    """
    if count < 1:
        raise InputError("need at least one scenario")
    out = []
    for k in range(count):
        if k == 0:
            multiplier = 1.0
        else:
            rng = np.random.default_rng([spec.seed, k])
            multiplier = float(rng.lognormal(0.0, _SCENARIO_JITTER))
        out.append(_simulate(spec, multiplier))
    return out
