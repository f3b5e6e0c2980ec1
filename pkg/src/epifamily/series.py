"""Calendar-dated daily time series and discrete day-lag distributions.

These two value types are the exchange currency between all models in the
family: reported cases, vaccination counts, occupancy references and rate
factors travel as :class:`DailySeries`; admission/stay/recovery delays
travel as :class:`DelayDistribution`.

Conventions fixed here for the whole repository:

* series are strictly daily, day ``i`` maps to ``start_date + i`` days,
  no gaps, no sub-daily resolution;
* day lags are 0-based (lag 0 means "same day");
* truncated delay densities are renormalized over their support so the
  total mass is exactly 1 regardless of truncation.
"""

from __future__ import annotations

import csv
import datetime as dt
from dataclasses import dataclass
import numpy as np
from scipy import stats

from .errors import AlignmentError, InputError

ONE_DAY = dt.timedelta(days=1)

#: Shape constant of the gamma-family delay kernel. The kernel family is
#: fixed-shape / free-scale; only the scale (mean) is calibrated.
GAMMA_KERNEL_SHAPE = 3.0


@dataclass(frozen=True)
class DailySeries:
    """Immutable sequence of one real value per calendar day."""

    start_date: dt.date
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 1 or values.size < 1:
            raise InputError("a daily series needs at least one value")
        if not np.all(np.isfinite(values)):
            raise InputError("daily series values must be finite")
        values = values.copy()
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return len(self.values)

    @property
    def end_date(self) -> dt.date:
        """Date of the last value."""
        return self.start_date + (len(self) - 1) * ONE_DAY

    def dates(self) -> list[dt.date]:
        return [self.start_date + i * ONE_DAY for i in range(len(self))]

    def index_of(self, day: dt.date) -> int:
        idx = (day - self.start_date).days
        if not 0 <= idx < len(self):
            raise InputError(f"{day.isoformat()} outside series "
                             f"[{self.start_date.isoformat()}, {self.end_date.isoformat()}]")
        return idx

    def value_on(self, day: dt.date) -> float:
        return float(self.values[self.index_of(day)])

    def last(self, n: int) -> np.ndarray:
        """The trailing ``n`` values."""
        if not 1 <= n <= len(self):
            raise InputError(f"window of {n} days does not fit a series of length {len(self)}")
        return self.values[len(self) - n:]

    def with_values(self, values) -> "DailySeries":
        """Same calendar, new values (must keep the length)."""
        values = np.asarray(values, dtype=float)
        if values.shape != self.values.shape:
            raise InputError("replacement values must keep the series length")
        return DailySeries(self.start_date, values)


def constant_series(start_date: dt.date, value: float, length: int) -> DailySeries:
    return DailySeries(start_date, np.full(length, float(value)))


def align_and_concat(history: DailySeries, forecast: DailySeries | None) -> DailySeries:
    """Append a forecast to a history series, seam checked on the calendar.

    The forecast must start exactly one day after the history ends; a gap
    or overlap raises :class:`AlignmentError` naming both boundary dates.
    ``forecast=None`` stands for the empty forecast and returns the
    history unchanged.
    """
    if forecast is None:
        return history
    expected = history.end_date + ONE_DAY
    if forecast.start_date != expected:
        raise AlignmentError(
            f"forecast starts {forecast.start_date.isoformat()} but history ends "
            f"{history.end_date.isoformat()}; expected forecast start {expected.isoformat()}")
    return DailySeries(history.start_date, np.concatenate([history.values, forecast.values]))


def stochastic_round(reals, rng: np.random.Generator) -> np.ndarray:
    """Round each nonnegative real up or down at random, unbiased.

    ``r`` becomes ``floor(r) + 1`` with probability ``frac(r)`` and
    ``floor(r)`` otherwise, so the expectation of every rounded entry
    equals its input and long totals are preserved in expectation.
    """
    values = np.asarray(reals, dtype=float)
    if np.any(values < 0):
        raise InputError("stochastic rounding is defined for nonnegative values only")
    floor = np.floor(values)
    frac = values - floor
    bump = rng.random(values.shape) < frac
    return (floor + bump).astype(np.int64)


@dataclass(frozen=True)
class DelayDistribution:
    """Probability mass over integer day lags ``0 .. n-1``.

    Mass must be nonnegative and sum to 1 within 1e-12; use
    :func:`discretize_delay` to build one from a shape family, or pass an
    explicit (already normalized) mass vector.
    """

    mass: np.ndarray

    def __post_init__(self):
        mass = np.asarray(self.mass, dtype=float)
        if mass.ndim != 1 or mass.size < 1:
            raise InputError("delay distribution needs at least one lag")
        if np.any(mass < 0) or not np.all(np.isfinite(mass)):
            raise InputError("delay mass entries must be finite and >= 0")
        if abs(mass.sum() - 1.0) > 1e-12:
            raise InputError(f"delay mass sums to {mass.sum()!r}, expected 1 within 1e-12")
        mass = mass.copy()
        mass.flags.writeable = False
        object.__setattr__(self, "mass", mass)

    def __len__(self) -> int:
        return len(self.mass)

    @property
    def mean_lag(self) -> float:
        return float(np.arange(len(self.mass)) @ self.mass)

    @property
    def min_lag(self) -> int:
        """Smallest lag carrying mass."""
        return int(np.flatnonzero(self.mass)[0])

    @property
    def max_lag(self) -> int:
        """Largest lag carrying mass."""
        return int(np.flatnonzero(self.mass)[-1])

    def sample(self, rng: np.random.Generator, size=None):
        return rng.choice(len(self.mass), size=size, p=self.mass)


DELAY_FAMILIES = ("delta", "geometric", "gamma")


def discretize_delay(family: str, scale: float, support: int,
                     gamma_shape: float = GAMMA_KERNEL_SHAPE) -> DelayDistribution:
    """Map a scalar scale parameter onto a discrete day-lag distribution.

    All families are scale-parameterized with a fixed shape, so a larger
    ``scale`` always means a larger mean lag (strictly so for the
    continuous families; the delta family rounds the scale to a day).
    Mass beyond ``support`` days is truncated and the remainder
    renormalized to exactly 1.

    * ``delta``      point mass at ``round(scale)``;
    * ``geometric``  mass proportional to ``q**lag`` with untruncated
      mean equal to ``scale``;
    * ``gamma``      gamma density with shape ``gamma_shape``, mean
      ``scale``, integrated over half-open unit bins centred on each lag.
    """
    if scale <= 0:
        raise InputError(f"delay scale must be positive, got {scale!r}")
    if support < 1:
        raise InputError(f"delay support must cover at least one day, got {support!r}")
    lags = np.arange(support)
    if family == "delta":
        idx = int(round(scale))
        if idx >= support:
            raise InputError(f"delta lag {idx} does not fit support {support}")
        mass = np.zeros(support)
        mass[idx] = 1.0
    elif family == "geometric":
        q = scale / (1.0 + scale)
        mass = (1.0 - q) * q ** lags
    elif family == "gamma":
        if gamma_shape <= 0:
            raise InputError("gamma kernel shape must be positive")
        grid = np.concatenate([[0.0], lags + 0.5])
        cdf = stats.gamma.cdf(grid, a=gamma_shape, scale=scale / gamma_shape)
        mass = np.diff(cdf)
    else:
        raise InputError(f"unknown delay family {family!r}; expected one of {DELAY_FAMILIES}")
    total = mass.sum()
    if total <= 0:
        raise InputError(f"delay family {family!r} carries no mass on support {support}")
    return DelayDistribution(mass / total)


# --- CSV interface -----------------------------------------------------------
#
# One row per day, header `date,value`, ISO dates, strictly contiguous.

def read_series_csv(path, value_column: str = "value") -> DailySeries:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip().lower() for h in header] != ["date", value_column]:
            raise InputError(f"{path}: expected header 'date,{value_column}'")
        days: list[dt.date] = []
        values: list[float] = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise InputError(f"{path}:{lineno}: expected two columns")
            try:
                day = dt.date.fromisoformat(row[0].strip())
                value = float(row[1])
            except ValueError as exc:
                raise InputError(f"{path}:{lineno}: {exc}") from exc
            if days and day != days[-1] + ONE_DAY:
                raise AlignmentError(
                    f"{path}:{lineno}: {day.isoformat()} does not follow "
                    f"{days[-1].isoformat()}; series must be contiguous daily")
            days.append(day)
            values.append(value)
    if not days:
        raise InputError(f"{path}: no data rows")
    return DailySeries(days[0], np.array(values))


def write_series_csv(series: DailySeries, path, value_column: str = "value") -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["date", value_column])
        for day, value in zip(series.dates(), series.values):
            writer.writerow([day.isoformat(), repr(float(value))])
