import datetime as dt
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from epifamily.series import DailySeries, DelayDistribution

START = dt.date(2022, 1, 1)


def delta_delay(lag: int, support: int) -> DelayDistribution:
    mass = np.zeros(support)
    mass[lag] = 1.0
    return DelayDistribution(mass)


def daily(values, start=START) -> DailySeries:
    return DailySeries(start, np.asarray(values, dtype=float))


@pytest.fixture
def start_date():
    return START


def make_iwm_config(horizon=80, n_entities=100, cases=None, **overrides):
    """One-variant, one-observable config with deterministic delays."""
    from epifamily.iwm.config import IwmConfig

    if cases is None:
        cases = np.zeros(horizon)
    base = dict(
        n_entities=n_entities,
        start_date=START,
        horizon=horizon,
        variants=("alpha",),
        observables=("inf_alpha",),
        infection_targets={"alpha": "inf_alpha"},
        cases=daily(cases),
        variant_shares={"alpha": daily(np.ones(horizon))},
        detection_rate=0.5,
        undetected_factor=0.0,
        base_probs={"alpha": {"inf_alpha": 1.0}},
        waning_means={"alpha": {"inf_alpha": 30.0}},
        waning_families={"alpha": "point"},
        delay_detect=delta_delay(3, 6),
        delay_recover_detected=delta_delay(10, 12),
        delay_recover_undetected=delta_delay(8, 12),
    )
    base.update(overrides)
    return IwmConfig(**base)
