"""Immunity waning microsimulation.

Entity-level event simulation that distributes reported infections and
vaccinations over a synthetic population and tracks who is currently
immune against which target (infection per virus variant, severe
disease, ...). Infections are inputs, not dynamics: the model estimates
immunity levels from known case and vaccination histories.
"""

from .config import IwmConfig, WANING_FAMILIES, sample_waning_factor
from .engine import (ImmunityTimelines, generate_external_events, protection_curves,
                     run_iwm, ExternalEvents)
from .io import (iwm_config_from_json, read_cases_csv, read_vaccinations_csv,
                 write_immunity_csv, write_census_csv)

__all__ = [
    "IwmConfig", "WANING_FAMILIES", "sample_waning_factor",
    "ImmunityTimelines", "ExternalEvents", "generate_external_events",
    "protection_curves", "run_iwm",
    "iwm_config_from_json", "read_cases_csv", "read_vaccinations_csv",
    "write_immunity_csv", "write_census_csv",
]
