"""Parameter container and validation for the immunity waning model.

Immunisation sources are the virus variants (recovery-based immunity)
plus the pseudo-sources ``"v1"``, ``"v2"``, ``"v3"`` for the three
vaccination shots. Per (source, observable) pair the model needs a base
probability that the immunisation protects against the observable and a
mean number of days until that protection is lost again. The waning time
is ``mean * y`` with ``y`` drawn from a unit-mean family per source.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from ..errors import InputError
from ..series import DailySeries, DelayDistribution

#: Unit-mean waning-time factor families. Only the mean is constrained
#: (it must be exactly 1); the shapes offer a degenerate, a memoryless
#: and a peaked option.
WANING_FAMILIES = ("point", "exponential", "gamma")

_WANING_GAMMA_SHAPE = 2.0

VACCINATION_SOURCES = ("v1", "v2", "v3")


def sample_waning_factor(family: str, rng: np.random.Generator) -> float:
    """Draw one unit-mean waning factor ``y``."""
    if family == "point":
        return 1.0
    if family == "exponential":
        return float(rng.exponential(1.0))
    if family == "gamma":
        return float(rng.gamma(_WANING_GAMMA_SHAPE, 1.0 / _WANING_GAMMA_SHAPE))
    raise InputError(f"unknown waning family {family!r}; expected one of {WANING_FAMILIES}")


@dataclass(frozen=True)
class IwmConfig:
    """Full parameterization of one immunity-waning run."""

    n_entities: int
    start_date: dt.date
    horizon: int                               # simulated days
    variants: tuple[str, ...]
    observables: tuple[str, ...]
    #: per variant, the observable that represents immunity against
    #: infection with that variant (gates who can be infected)
    infection_targets: Mapping[str, str]
    cases: DailySeries                         # total reported positive tests per day
    variant_shares: Mapping[str, DailySeries]  # share of each variant among the cases
    detection_rate: float                      # fraction of infections that get detected
    base_probs: Mapping[str, Mapping[str, float]]    # source -> observable -> probability
    waning_means: Mapping[str, Mapping[str, float]]  # source -> observable -> days
    waning_families: Mapping[str, str]               # source -> family id
    delay_detect: DelayDistribution            # infection -> reported positive test
    delay_recover_detected: DelayDistribution  # infection -> recovery, detected path
    delay_recover_undetected: DelayDistribution
    vaccinations: tuple[DailySeries | None, DailySeries | None, DailySeries | None] = (None, None, None)
    min_gap_12: int = 0                        # days between 1st and 2nd shot
    min_gap_23: int = 0                        # days between 2nd and 3rd shot
    effect_delays: tuple[int, int, int] = (0, 0, 0)  # shot -> immunisation decision
    #: explicit override for the undetected-per-detected factor; default
    #: derives it from the detection rate as rate/(1+rate)
    undetected_factor: float | None = None

    def __post_init__(self):
        if self.n_entities < 1:
            raise InputError("need at least one entity")
        if self.horizon < 1:
            raise InputError("horizon must cover at least one day")
        if not 0.0 < self.detection_rate < 1.0:
            raise InputError(f"detection rate must lie in (0,1), got {self.detection_rate!r}")
        if self.undetected_factor is not None and self.undetected_factor < 0:
            raise InputError("undetected factor must be >= 0")
        if len(set(self.observables)) != len(self.observables):
            raise InputError("duplicate observable ids")
        if len(set(self.variants)) != len(self.variants):
            raise InputError("duplicate variant ids")
        self._check_series("cases", self.cases)
        for variant in self.variant_shares:
            if variant not in self.variants:
                raise InputError(f"share series for unknown variant {variant!r}")
        for variant in self.variants:
            share = self.variant_shares.get(variant)
            if share is None:
                raise InputError(f"variant {variant!r} has no share series")
            self._check_series(f"shares[{variant}]", share)
            if np.any(share.values < 0) or np.any(share.values > 1):
                raise InputError(f"shares[{variant}] must lie in [0,1]")
            target = self.infection_targets.get(variant)
            if target is None:
                raise InputError(f"variant {variant!r} has no infection-immunity observable")
            if target not in self.observables:
                raise InputError(f"infection target {target!r} of variant {variant!r} "
                                 "is not an observable")
        if self.variants:
            share_sum = np.sum([self.variant_shares[v].values for v in self.variants], axis=0)
            if np.any(share_sum > 1.0 + 1e-9):
                day = int(np.argmax(share_sum > 1.0 + 1e-9))
                raise InputError(f"variant shares sum to {share_sum[day]:.4g} > 1 on day {day}")
        for k, series in enumerate(self.vaccinations):
            if series is not None:
                self._check_series(f"vaccinations[{k}]", series)
                if np.any(series.values < 0):
                    raise InputError(f"vaccinations[{k}] must be nonnegative")
                if np.any(np.abs(series.values - np.round(series.values)) > 1e-6):
                    raise InputError(f"vaccinations[{k}] must hold integer counts")
        if self.min_gap_12 < 0 or self.min_gap_23 < 0:
            raise InputError("shot gaps must be >= 0")
        if any(d < 0 for d in self.effect_delays):
            raise InputError("vaccination effect delays must be >= 0")
        for source in self.sources:
            grants = False
            for obs in self.observables:
                prob = self.base_prob(source, obs)
                if not 0.0 <= prob <= 1.0:
                    raise InputError(f"base probability for ({source!r}, {obs!r}) "
                                     f"must lie in [0,1], got {prob!r}")
                if prob > 0.0:
                    grants = True
                    mean = self.waning_means.get(source, {}).get(obs)
                    if mean is None or mean <= 0:
                        raise InputError(f"({source!r}, {obs!r}) grants immunity but has "
                                         f"no positive waning mean")
            if grants:
                family = self.waning_families.get(source)
                if family not in WANING_FAMILIES:
                    raise InputError(f"source {source!r}: unknown waning family {family!r}")
        # recovery of a detected case must come after its reported test,
        # for every combination of realizable lags
        if self.delay_recover_detected.min_lag <= self.delay_detect.max_lag:
            raise InputError(
                f"detected-case recovery lag (min {self.delay_recover_detected.min_lag}) must "
                f"exceed the largest infection-to-test lag ({self.delay_detect.max_lag})")

    def _check_series(self, name: str, series: DailySeries) -> None:
        if series.start_date != self.start_date or len(series) != self.horizon:
            raise InputError(
                f"{name} must cover exactly the simulation window "
                f"({self.start_date.isoformat()}, {self.horizon} days); got "
                f"({series.start_date.isoformat()}, {len(series)} days)")

    @property
    def sources(self) -> tuple[str, ...]:
        return tuple(self.variants) + VACCINATION_SOURCES

    def base_prob(self, source: str, observable: str) -> float:
        return float(self.base_probs.get(source, {}).get(observable, 0.0))

    def waning_mean(self, source: str, observable: str) -> float:
        return float(self.waning_means[source][observable])

    def undetected_per_expected(self) -> float:
        """Scaling from expected detected infections to undetected ones."""
        if self.undetected_factor is not None:
            return self.undetected_factor
        return self.detection_rate / (1.0 + self.detection_rate)

    def variant_cases(self, variant: str) -> np.ndarray:
        """Reported positive tests attributed to one variant, per day."""
        return self.cases.values * self.variant_shares[variant].values
