"""Age structure model.

SIR-type compartment model in which every compartment is a density over
continuous age as well as time, with a parallel vaccinated path whose
infection term is damped by the vaccine effectiveness. An age-contact
kernel couples the cohorts; ageing itself is a slow transport along the
age axis. Its purpose is the age profile of cases, not case forecasting.
"""

from .model import (AgeDistribution, AgeMesh, AsmParams, AsmState, AsmTrajectory,
                    asm_age_distribution, asm_integrate, asm_rhs, contact_lambda)
from .initialize import asm_initialize, read_compartments_csv, read_contact_matrix_csv
from .calibrate import BetaCalibration, asm_calibrate_beta

__all__ = [
    "AgeDistribution", "AgeMesh", "AsmParams", "AsmState", "AsmTrajectory",
    "asm_age_distribution", "asm_integrate", "asm_rhs", "contact_lambda",
    "asm_initialize", "read_compartments_csv", "read_contact_matrix_csv",
    "BetaCalibration", "asm_calibrate_beta",
]
