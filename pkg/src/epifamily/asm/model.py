"""Core dynamics of the age structure model.

Five compartments, each a density over age ``a`` in years (persons per
year of age): susceptible, vaccinated-susceptible, infectious,
vaccinated-infectious, recovered. Per day ``t`` the model couples them
through the contact functional

    lambda(P, a) = integral kappa(a, b) P(b) db       (trapezoid rule)

which counts the daily contacts of an ``a``-year-old with members of
compartment ``P``. Infections move ``S -> I`` at rate
``beta(a,t) * lambda(I+Iv, a) / N`` and ``Sv -> Iv`` at the same rate
damped by ``(1 - effectiveness)``; recovery moves both infectious paths
to ``R`` at rate ``gamma(a)``. Ageing adds a transport term
``(1/365) dP/da`` (age in years, time in days), discretized with
first-order upwind differences and zero inflow at age 0; the upper mesh
end is absorbing and is warned about if reached.

Semi-discretely the reaction terms cancel pointwise and the transport
telescopes to the boundary, so total population is a linear invariant of
the method-of-lines system and is conserved to solver precision as long
as the density support stays inside the mesh.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.integrate import solve_ivp

from ..errors import InputError, NumericalError, UndefinedDistributionError

log = logging.getLogger(__name__)

DAYS_PER_YEAR = 365.0

#: fraction of total population allowed to sit on the last age node
#: before the absorbing boundary is considered "reached"
_BOUNDARY_MASS_WARN = 1e-9

COMPARTMENTS = ("S", "Sv", "I", "Iv", "R")


@dataclass(frozen=True)
class AgeMesh:
    """Uniform age grid from 0 to ``a_max`` years, inclusive."""

    a_max: float = 100.0
    delta_a: float = 1.0

    def __post_init__(self):
        if self.a_max < 100.0:
            raise InputError("age mesh must reach at least 100 years to cover "
                             "realistic initial age supports")
        if self.delta_a <= 0:
            raise InputError("mesh spacing must be positive")
        n_steps = self.a_max / self.delta_a
        if abs(n_steps - round(n_steps)) > 1e-9:
            raise InputError(f"a_max {self.a_max} is not a multiple of delta_a {self.delta_a}")

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(0.0, self.a_max, self.n_nodes)

    @property
    def n_nodes(self) -> int:
        return int(round(self.a_max / self.delta_a)) + 1

    @property
    def trapezoid_weights(self) -> np.ndarray:
        w = np.full(self.n_nodes, self.delta_a)
        w[0] = w[-1] = 0.5 * self.delta_a
        return w

    def integrate(self, density: np.ndarray) -> float:
        return float(self.trapezoid_weights @ density)


@dataclass
class AsmState:
    """Compartment densities sampled on the mesh nodes."""

    S: np.ndarray
    Sv: np.ndarray
    I: np.ndarray
    Iv: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        arrays = [np.asarray(getattr(self, name), dtype=float) for name in COMPARTMENTS]
        length = arrays[0].size
        for name, arr in zip(COMPARTMENTS, arrays):
            if arr.ndim != 1 or arr.size != length:
                raise InputError("all compartment densities must share the mesh")
            if np.any(arr < 0):
                raise InputError(f"negative initial density in compartment {name}")
            setattr(self, name, arr)

    def stack(self) -> np.ndarray:
        return np.concatenate([getattr(self, name) for name in COMPARTMENTS])

    @classmethod
    def unstack(cls, vector: np.ndarray, n_nodes: int) -> "AsmState":
        parts = vector[:5 * n_nodes].reshape(5, n_nodes)
        state = cls.__new__(cls)
        for name, part in zip(COMPARTMENTS, parts):
            setattr(state, name, part)
        return state

    def total(self, mesh: AgeMesh) -> float:
        return sum(mesh.integrate(getattr(self, name)) for name in COMPARTMENTS)


@dataclass(frozen=True)
class AsmParams:
    """Rates and kernels of one run.

    ``beta_steps`` scale the age profile week by week (a step function
    of time); beyond the last step the last value is held. ``gamma`` may
    be a scalar or a per-node array.
    """

    contact_matrix: np.ndarray          # kappa on mesh nodes, contacts/day density
    beta_profile: np.ndarray | float    # age profile of infectiousness
    beta_steps: tuple[float, ...]       # weekly scalars
    gamma: np.ndarray | float           # recovery rate per day
    effectiveness: float                # vaccine effectiveness in [0, 1]
    population: float                   # constant total N
    week_length: int = 7
    detection_factor: float = 1.0       # modeled infections -> reported cases

    def __post_init__(self):
        kappa = np.asarray(self.contact_matrix, dtype=float)
        if kappa.ndim != 2 or kappa.shape[0] != kappa.shape[1]:
            raise InputError("contact matrix must be square")
        if np.any(kappa < 0):
            raise InputError("contact matrix entries must be >= 0")
        object.__setattr__(self, "contact_matrix", kappa)
        if not 0.0 <= self.effectiveness <= 1.0:
            raise InputError("vaccine effectiveness must lie in [0, 1]")
        if np.any(np.asarray(self.gamma) <= 0):
            raise InputError("recovery rate must be positive")
        if self.population <= 0:
            raise InputError("population must be positive")
        if len(self.beta_steps) < 1 or np.any(np.asarray(self.beta_steps) < 0):
            raise InputError("need at least one nonnegative beta step")
        if self.week_length < 1:
            raise InputError("week length must be at least one day")

    def beta_at(self, t: float) -> np.ndarray | float:
        step = min(int(t // self.week_length), len(self.beta_steps) - 1)
        return np.asarray(self.beta_profile) * self.beta_steps[max(step, 0)]

    def with_beta_steps(self, steps: Sequence[float]) -> "AsmParams":
        return AsmParams(contact_matrix=self.contact_matrix,
                         beta_profile=self.beta_profile,
                         beta_steps=tuple(float(s) for s in steps),
                         gamma=self.gamma, effectiveness=self.effectiveness,
                         population=self.population, week_length=self.week_length,
                         detection_factor=self.detection_factor)


def contact_lambda(density: np.ndarray, kappa: np.ndarray, mesh: AgeMesh) -> np.ndarray:
    """Daily contacts of each age with all members of a compartment."""
    density = np.asarray(density, dtype=float)
    if kappa.shape != (mesh.n_nodes, mesh.n_nodes) or density.shape != (mesh.n_nodes,):
        raise InputError(f"shape mismatch: kernel {kappa.shape}, density {density.shape}, "
                         f"mesh has {mesh.n_nodes} nodes")
    return kappa @ (mesh.trapezoid_weights * density)


def _upwind(density: np.ndarray, delta_a: float) -> np.ndarray:
    # ageing moves mass towards higher ages; zero inflow at age 0
    out = np.empty_like(density)
    out[0] = density[0] / delta_a
    out[1:] = (density[1:] - density[:-1]) / delta_a
    return out


def _rhs_arrays(S, Sv, I, Iv, R, params: AsmParams, t: float, mesh: AgeMesh):
    """Derivatives of the five densities plus the aggregated infection inflow."""
    lam = contact_lambda(I + Iv, params.contact_matrix, mesh)
    pressure = params.beta_at(t) * lam / params.population
    foi = pressure * S
    foi_v = (1.0 - params.effectiveness) * pressure * Sv
    recovery = params.gamma * I
    recovery_v = params.gamma * Iv
    scale = 1.0 / DAYS_PER_YEAR
    dS = -scale * _upwind(S, mesh.delta_a) - foi
    dSv = -scale * _upwind(Sv, mesh.delta_a) - foi_v
    dI = -scale * _upwind(I, mesh.delta_a) + foi - recovery
    dIv = -scale * _upwind(Iv, mesh.delta_a) + foi_v - recovery_v
    dR = -scale * _upwind(R, mesh.delta_a) + recovery + recovery_v
    inflow = params.detection_factor * mesh.integrate(foi + foi_v)
    return (dS, dSv, dI, dIv, dR), inflow


def asm_rhs(state: AsmState, params: AsmParams, t: float, mesh: AgeMesh) -> dict:
    """Time derivatives of all five compartment densities, keyed by name."""
    derivs, _ = _rhs_arrays(state.S, state.Sv, state.I, state.Iv, state.R,
                            params, t, mesh)
    return dict(zip(COMPARTMENTS, derivs))


@dataclass
class AsmTrajectory:
    """Daily snapshots of a run plus bookkeeping of numerical repairs."""

    mesh: AgeMesh
    days: np.ndarray                    # 0 .. horizon
    states: list[AsmState]
    cumulative_cases: np.ndarray        # modeled infection inflow, detection-scaled
    clamped_mass: float                 # total negative mass zeroed out
    boundary_reached: bool

    def compartment_totals(self, name: str) -> np.ndarray:
        return np.array([self.mesh.integrate(getattr(s, name)) for s in self.states])

    def population(self) -> np.ndarray:
        return np.array([s.total(self.mesh) for s in self.states])


def asm_integrate(state0: AsmState, params: AsmParams, mesh: AgeMesh, horizon: int,
                  rtol: float = 1e-6, method: str = "RK45",
                  t_offset: float = 0.0) -> AsmTrajectory:
    """Method-of-lines integration with daily snapshots.

    Between snapshots the stacked node system runs under adaptive
    step-size control at the requested relative tolerance. After every
    day, negative densities (integrator overshoot) are clamped to zero
    and the removed mass is accounted; mass arriving at the upper age
    boundary triggers a warning since the boundary is absorbing.
    """
    if horizon < 1:
        raise InputError("horizon must cover at least one day")
    n_nodes = mesh.n_nodes
    if params.contact_matrix.shape != (n_nodes, n_nodes):
        raise InputError("contact matrix does not match the mesh")
    weights = mesh.trapezoid_weights
    atol = 1e-3 * rtol * params.population / mesh.a_max

    def rhs(t, y):
        parts = y[:5 * n_nodes].reshape(5, n_nodes)
        derivs, inflow = _rhs_arrays(*parts, params, t, mesh)
        return np.concatenate([*derivs, [inflow]])

    y = np.concatenate([state0.stack(), [0.0]])
    states = [AsmState.unstack(y.copy(), n_nodes)]
    cumulative = [0.0]
    clamped = 0.0
    boundary_reached = False

    for day in range(horizon):
        sol = solve_ivp(rhs, (t_offset + day, t_offset + day + 1), y, method=method,
                        rtol=rtol, atol=atol, t_eval=[t_offset + day + 1])
        if not sol.success:
            raise NumericalError(f"integration failed on day {day}: {sol.message}")
        y = sol.y[:, -1]
        densities = y[:5 * n_nodes].reshape(5, n_nodes)
        negative = np.minimum(densities, 0.0)
        clamped += float(-(negative * weights).sum())
        np.maximum(densities, 0.0, out=densities)
        if not boundary_reached:
            edge_mass = float(densities[:, -1].sum() * weights[-1])
            if edge_mass > _BOUNDARY_MASS_WARN * params.population:
                boundary_reached = True
                log.warning("density support reached the age boundary on day %d; "
                            "mass beyond %.0f years is absorbed", day + 1, mesh.a_max)
        states.append(AsmState.unstack(y.copy(), n_nodes))
        cumulative.append(float(y[-1]))

    return AsmTrajectory(mesh=mesh, days=np.arange(horizon + 1), states=states,
                         cumulative_cases=np.array(cumulative), clamped_mass=clamped,
                         boundary_reached=boundary_reached)


@dataclass(frozen=True)
class AgeDistribution:
    ages: np.ndarray
    density: np.ndarray      # normalized to integrate to 1
    mean_age: float
    mass: float              # persons behind the distribution


def asm_age_distribution(trajectory: AsmTrajectory, day: int,
                         split: str = "all") -> AgeDistribution:
    """Normalized age profile of the active cases at one day.

    ``split`` selects all cases, only the vaccinated path or only the
    unvaccinated path; an empty selection cannot be normalized and
    raises :class:`UndefinedDistributionError`.
    """
    if not 0 <= day < len(trajectory.states):
        raise InputError(f"day {day} outside trajectory of {len(trajectory.states) - 1} days")
    state = trajectory.states[day]
    if split == "all":
        density = state.I + state.Iv
    elif split == "vaccinated":
        density = state.Iv
    elif split == "unvaccinated":
        density = state.I
    else:
        raise InputError(f"unknown split {split!r}; expected all/vaccinated/unvaccinated")
    mesh = trajectory.mesh
    mass = mesh.integrate(density)
    if mass <= 0.0:
        raise UndefinedDistributionError(
            f"no infectious mass in split {split!r} on day {day}")
    normalized = density / mass
    mean_age = mesh.integrate(mesh.nodes * normalized)
    return AgeDistribution(ages=mesh.nodes, density=normalized,
                           mean_age=float(mean_age), mass=float(mass))
