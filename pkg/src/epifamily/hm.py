"""Hospital occupancy model.

Maps a daily curve of confirmed cases onto hospital (or ICU) bed
occupancy through two discrete convolutions: one day-lag kernel for the
duration between positive test and admission, one for the length of
stay. A scalar base rate, optionally modulated by an a-priori factor
series, fixes how many cases are admitted at all.

With 0-based day indices and 0-based lags the forward equations are::

    admissions[i] = sum_k rate * factor[k] * cases[k] * kernel_adm[i-k]
    releases[i]   = sum_k admissions[k] * kernel_stay[i-k]
    occupancy[i+1] = occupancy[i] + admissions[i] - releases[i]

with ``occupancy[0] = 0``: as long as the calibration window starts more
than two kernel supports after the series start, every bed counted there
is explained by in-window cases and the unknown initial occupancy does
not matter.

Calibration fits (rate, admission scale, stay scale) against a reference
occupancy series with a Nelder-Mead simplex in log-space; the kernel
shapes stay fixed.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .errors import InputError, NumericalError
from .series import (DailySeries, DelayDistribution, discretize_delay,
                     GAMMA_KERNEL_SHAPE, ONE_DAY)

log = logging.getLogger(__name__)

#: Penalty added to the calibration objective once rate * factor reaches 1,
#: i.e. once more than every confirmed case would be admitted.
_RATE_PENALTY = 1e12


@dataclass(frozen=True)
class HmParams:
    """Rate and duration parameters of one bed category.

    ICU and normal beds are two independent instances run on the same
    case curve; there is no coupling between bed categories.
    """

    rate: float                      # base hospitalisation rate
    mu_adm: float                    # scale (mean lag) of the admission kernel
    mu_stay: float                   # scale (mean lag) of the stay kernel
    shape_adm: str = "gamma"
    shape_stay: str = "gamma"
    support: int = 60                # kernel support in days
    factors: DailySeries | None = None   # a-priori rate factors, default constant 1
    gamma_shape: float = GAMMA_KERNEL_SHAPE

    def __post_init__(self):
        if self.rate <= 0:
            raise InputError(f"hospitalisation rate must be positive, got {self.rate!r}")
        if self.mu_adm <= 0 or self.mu_stay <= 0:
            raise InputError("kernel scales must be positive")
        if self.support < 1:
            raise InputError("kernel support must cover at least one day")
        factor_max = 1.0
        if self.factors is not None:
            if float(np.min(self.factors.values)) <= 0:
                raise InputError("rate factors must be positive")
            factor_max = float(np.max(self.factors.values))
        if self.rate * factor_max >= 1.0:
            raise InputError(
                f"rate * max(factor) = {self.rate * factor_max:.4g} >= 1; more admissions "
                "than cases is not a valid parameterization")

    def admission_kernel(self) -> DelayDistribution:
        return discretize_delay(self.shape_adm, self.mu_adm, self.support, self.gamma_shape)

    def stay_kernel(self) -> DelayDistribution:
        return discretize_delay(self.shape_stay, self.mu_stay, self.support, self.gamma_shape)


@dataclass(frozen=True)
class HmOutput:
    """Daily admissions/releases plus the running occupancy.

    ``occupancy`` has one more day than the flows: entry 0 is the (zero)
    occupancy before any in-series case acts, entry ``i+1`` is the
    occupancy after the flows of day ``i``.
    """

    admissions: DailySeries
    releases: DailySeries
    occupancy: DailySeries


def _factor_values(cases: DailySeries, factors: DailySeries | None) -> np.ndarray:
    if factors is None:
        return np.ones(len(cases))
    if factors.start_date != cases.start_date or len(factors) != len(cases):
        raise InputError(
            f"rate factor series ({factors.start_date.isoformat()}, {len(factors)} days) "
            f"must align with the case series ({cases.start_date.isoformat()}, "
            f"{len(cases)} days)")
    return factors.values


def _forward_arrays(weighted_cases: np.ndarray, kernel_adm: np.ndarray,
                    kernel_stay: np.ndarray):
    T = len(weighted_cases)
    admissions = np.convolve(weighted_cases, kernel_adm)[:T]
    releases = np.convolve(admissions, kernel_stay)[:T]
    delta = admissions - releases
    occupancy = np.empty(T + 1)
    occupancy[0] = 0.0
    for i in range(T):          # sequential sum keeps the stock-flow identity exact
        occupancy[i + 1] = occupancy[i] + delta[i]
    return admissions, releases, occupancy


def hm_forward(cases: DailySeries, params: HmParams) -> HmOutput:
    """Run the forward model on a case curve."""
    if np.any(cases.values < 0):
        raise InputError("case values must be nonnegative")
    factors = _factor_values(cases, params.factors)
    weighted = params.rate * factors * cases.values
    admissions, releases, occupancy = _forward_arrays(
        weighted, params.admission_kernel().mass, params.stay_kernel().mass)
    return HmOutput(
        admissions=DailySeries(cases.start_date, admissions),
        releases=DailySeries(cases.start_date, releases),
        occupancy=DailySeries(cases.start_date, occupancy),
    )


def hm_error(occupancy: DailySeries, reference: DailySeries, window: int) -> float:
    """Squared relative occupancy error over the trailing reference window.

    Each day contributes ``(y - ref)^2 / max(1, ref)^2``; the ``max``
    guard keeps days with an empty reference ward well defined.
    """
    if window < 1:
        raise InputError("calibration window must cover at least one day")
    if window > len(reference):
        raise InputError(
            f"calibration window of {window} days exceeds reference length {len(reference)}")
    err = 0.0
    for offset in range(len(reference) - window, len(reference)):
        day = reference.start_date + offset * ONE_DAY
        y = occupancy.value_on(day)
        ref_value = float(reference.values[offset])
        err += (y - ref_value) ** 2 / max(1.0, ref_value) ** 2
    return err


def hm_anchor_shift(occupancy: DailySeries, reference: DailySeries) -> DailySeries:
    """Shift the whole occupancy curve so it meets the last reference value.

    Additive post-processing: first differences (and hence all dynamics)
    are preserved, only the level is corrected.
    """
    shift = float(reference.values[-1]) - occupancy.value_on(reference.end_date)
    return occupancy.with_values(occupancy.values + shift)


@dataclass(frozen=True)
class HmCalibration:
    params: HmParams
    err: float
    iterations: int
    converged: bool


def hm_calibrate(cases: DailySeries, factors: DailySeries | None,
                 reference: DailySeries, window: int,
                 shape_adm: str = "gamma", shape_stay: str = "gamma",
                 support: int = 60, gamma_shape: float = GAMMA_KERNEL_SHAPE,
                 start: tuple[float, float, float] | None = None,
                 max_iterations: int = 500) -> HmCalibration:
    """Fit (scale_adm, scale_stay, rate) to a reference occupancy series.

    The reference must share the case series' start date; its leading
    part acts as a transient phase whose output is ignored. A transient
    shorter than two kernel supports is accepted but logged as a warning,
    since then beds occupied in the window may stem from unknown
    pre-series cases.

    The three free parameters are optimized in log-space (positivity for
    free) with a Nelder-Mead simplex built from ``start``, given as
    ``(scale_adm, scale_stay, rate)``, by perturbing each coordinate by
    10%; the search stops when the simplex diameter falls below 1e-6 in
    log coordinates or after ``max_iterations``. Non-convergence returns
    the best point found, flagged.
    """
    if reference.start_date != cases.start_date:
        raise InputError("reference series must start with the case series")
    if len(reference) > len(cases):
        raise InputError("reference longer than the case series")
    if window > len(reference):
        raise InputError(
            f"calibration window of {window} days exceeds reference length {len(reference)}")
    transient = len(reference) - window
    if transient <= 2 * support:
        log.warning(
            "transient of %d days is not larger than twice the kernel support (%d); "
            "window occupancy may depend on the unknown initial state", transient, 2 * support)

    factor_values = _factor_values(cases, factors)
    x_values = cases.values
    ref_tail = reference.values[len(reference) - window:]
    factor_max = float(np.max(factor_values))

    def objective(z: np.ndarray) -> float:
        mu_adm, mu_stay, rate = np.exp(z)
        try:
            kernel_adm = discretize_delay(shape_adm, mu_adm, support, gamma_shape).mass
            kernel_stay = discretize_delay(shape_stay, mu_stay, support, gamma_shape).mass
        except InputError:
            return _RATE_PENALTY
        weighted = rate * factor_values * x_values
        _, _, occupancy = _forward_arrays(weighted, kernel_adm, kernel_stay)
        y_tail = occupancy[len(reference) - window:len(reference)]
        err = float(np.sum((y_tail - ref_tail) ** 2 / np.maximum(1.0, ref_tail) ** 2))
        if rate * factor_max >= 1.0:
            err += _RATE_PENALTY * (rate * factor_max)
        return err

    if start is None:
        start = _default_start(x_values, ref_tail, support)
    z0 = np.log(np.asarray(start, dtype=float))

    if objective(z0) == 0.0:    # degenerate flat problem: the start is already optimal
        params = _build_params(start, shape_adm, shape_stay, support, factors, gamma_shape)
        return HmCalibration(params=params, err=0.0, iterations=0, converged=True)

    simplex = np.tile(z0, (4, 1))
    for j in range(3):
        simplex[j + 1, j] += 0.1 * abs(z0[j]) if z0[j] != 0.0 else 0.1

    result = optimize.minimize(
        objective, z0, method="Nelder-Mead",
        options={"initial_simplex": simplex, "xatol": 1e-6, "fatol": float("inf"),
                 "maxiter": max_iterations, "maxfev": 50 * max_iterations,
                 "adaptive": False})
    mu_adm, mu_stay, rate = np.exp(result.x)
    params = _build_params((mu_adm, mu_stay, rate), shape_adm, shape_stay,
                           support, factors, gamma_shape)
    return HmCalibration(params=params, err=float(result.fun),
                         iterations=int(result.nit), converged=bool(result.success))


def _default_start(x_values, ref_tail, support):
    stay_guess = max(support / 6.0, 1.0)
    adm_guess = max(support / 12.0, 1.0)
    mean_cases = float(np.mean(x_values)) if np.any(x_values > 0) else 1.0
    mean_ref = float(np.mean(ref_tail))
    rate_guess = mean_ref / max(mean_cases * stay_guess, 1e-9)
    rate_guess = min(max(rate_guess, 1e-6), 0.5)
    return (adm_guess, stay_guess, rate_guess)


def _build_params(start, shape_adm, shape_stay, support, factors, gamma_shape) -> HmParams:
    mu_adm, mu_stay, rate = start
    try:
        return HmParams(rate=float(rate), mu_adm=float(mu_adm), mu_stay=float(mu_stay),
                        shape_adm=shape_adm, shape_stay=shape_stay, support=support,
                        factors=factors, gamma_shape=gamma_shape)
    except InputError as exc:
        raise NumericalError(
            f"calibration ended outside the valid parameter region ({exc}); "
            "reference and case series are inconsistent") from exc
