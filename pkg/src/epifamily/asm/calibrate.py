"""Week-by-week fitting of the transmissibility steps.

The time profile of infectiousness is a step function: one scalar per
7-day window scaling a fixed age profile. Because step ``i`` only acts
inside window ``i`` and the state entering window ``i`` is fixed once
earlier steps are fitted, the windows decouple and each step can be
found by scalar bisection: cumulative modeled case inflow over the
window is continuous and increasing in the step value.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ..errors import InputError, NumericalError
from ..series import DailySeries
from .model import AgeMesh, AsmParams, AsmState, asm_integrate

log = logging.getLogger(__name__)

_WIDEN_FACTOR = 10.0
_MAX_WIDENINGS = 3


@dataclass(frozen=True)
class BetaCalibration:
    """Fitted weekly transmissibility scalars plus per-week diagnostics."""

    beta_steps: tuple[float, ...]
    weekly_targets: tuple[float, ...]
    weekly_model: tuple[float, ...]       # cumulative modeled cases per window
    bisection_steps: tuple[int, ...]
    converged: tuple[bool, ...]
    at_lower_bound: tuple[bool, ...]


def asm_calibrate_beta(params: AsmParams, state0: AsmState, mesh: AgeMesh,
                       reference_cases: DailySeries, weeks: int | None = None,
                       bracket: tuple[float, float] = (1e-3, 10.0),
                       rel_tol: float = 1e-3, max_steps: int = 60,
                       rtol: float = 1e-6) -> BetaCalibration:
    """Fit one transmissibility step per 7-day window of the reference.

    Each window's target is the summed reference case count; the model
    response is the cumulative (detection-scaled) infection inflow over
    the window. Bisection stops once the response matches the target to
    ``rel_tol`` relative or after ``max_steps`` halvings. If the target
    exceeds the response at the upper bracket end, the bracket is
    widened by 10x up to 3 times before failing; a zero target is
    answered by the lower bracket end, flagged.
    """
    week_len = params.week_length
    if weeks is None:
        weeks = len(reference_cases) // week_len
    if weeks < 1:
        raise InputError("need at least one full window to calibrate")
    if len(reference_cases) < weeks * week_len:
        raise InputError(f"reference covers {len(reference_cases)} days but "
                         f"{weeks} windows need {weeks * week_len}")

    fitted: list[float] = []
    targets: list[float] = []
    modeled: list[float] = []
    steps_used: list[int] = []
    converged: list[bool] = []
    at_lower: list[bool] = []
    state = state0

    for week in range(weeks):
        window = reference_cases.values[week * week_len:(week + 1) * week_len]
        target = float(np.sum(window))
        t_offset = float(week * week_len)

        def response(value: float):
            trial = params.with_beta_steps((value,))
            trajectory = asm_integrate(state, trial, mesh, week_len,
                                       rtol=rtol, t_offset=t_offset)
            return float(trajectory.cumulative_cases[-1]), trajectory.states[-1]

        lo, hi = bracket
        incidence_lo, state_lo = response(lo)
        incidence_hi, state_hi = response(hi)

        widenings = 0
        while target > incidence_hi and widenings < _MAX_WIDENINGS:
            hi *= _WIDEN_FACTOR
            incidence_hi, state_hi = response(hi)
            widenings += 1
        if target > incidence_hi:
            raise NumericalError(
                f"window {week}: target {target:.6g} above model response "
                f"{incidence_hi:.6g} even at transmissibility {hi:.6g}")
        widenings = 0
        while 0.0 < target < incidence_lo and widenings < _MAX_WIDENINGS:
            lo /= _WIDEN_FACTOR
            incidence_lo, state_lo = response(lo)
            widenings += 1
        if 0.0 < target < incidence_lo:
            raise NumericalError(
                f"window {week}: target {target:.6g} below model response "
                f"{incidence_lo:.6g} even at transmissibility {lo:.6g}")

        if target <= 0.0:
            # degenerate flat target: any positive step overshoots, take the floor
            fitted.append(lo)
            targets.append(target)
            modeled.append(incidence_lo)
            steps_used.append(0)
            converged.append(False)
            at_lower.append(True)
            log.warning("window %d: zero reference incidence, transmissibility "
                        "pinned to the lower bracket end %.4g", week, lo)
            state = state_lo
            continue

        tolerance = rel_tol * target
        best_value, best_incidence, best_state = hi, incidence_hi, state_hi
        n_steps = 0
        ok = abs(incidence_hi - target) <= tolerance
        while not ok and n_steps < max_steps:
            mid = 0.5 * (lo + hi)
            incidence_mid, state_mid = response(mid)
            n_steps += 1
            if abs(incidence_mid - target) <= abs(best_incidence - target):
                best_value, best_incidence, best_state = mid, incidence_mid, state_mid
            if abs(incidence_mid - target) <= tolerance:
                ok = True
                break
            if incidence_mid < target:
                lo = mid
            else:
                hi = mid
        fitted.append(best_value)
        targets.append(target)
        modeled.append(best_incidence)
        steps_used.append(n_steps)
        converged.append(ok)
        at_lower.append(False)
        if not ok:
            log.warning("window %d: bisection stopped after %d steps at relative "
                        "mismatch %.3g", week, n_steps,
                        abs(best_incidence - target) / target)
        state = best_state

    return BetaCalibration(beta_steps=tuple(fitted), weekly_targets=tuple(targets),
                           weekly_model=tuple(modeled),
                           bisection_steps=tuple(steps_used),
                           converged=tuple(converged), at_lower_bound=tuple(at_lower))
