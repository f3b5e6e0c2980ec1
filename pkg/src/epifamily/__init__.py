"""Family of interoperating epidemic decision-support models.

Four cooperating parts: an immunity-waning microsimulation (``iwm``), a
convolution-based hospital occupancy model (``hm``), an age-structured
SIR model with a vaccinated path (``asm``) and a synthetic case-scenario
generator (``scenarios``), glued together by daily time series
(``series``), composition pipelines (``pipelines``) and a causal-loop
coverage analyzer (``cld``).
"""

from .errors import AlignmentError, EpiFamilyError, InputError, NumericalError
from .series import (DailySeries, DelayDistribution, align_and_concat,
                     constant_series, discretize_delay, read_series_csv,
                     stochastic_round, write_series_csv)

__version__ = "0.1.0"

__all__ = [
    "AlignmentError", "EpiFamilyError", "InputError", "NumericalError",
    "DailySeries", "DelayDistribution", "align_and_concat", "constant_series",
    "discretize_delay", "read_series_csv", "stochastic_round", "write_series_csv",
    "__version__",
]
