import numpy as np
import pytest

from epifamily.asm import (AgeMesh, AsmParams, AsmState, asm_age_distribution,
                           asm_initialize, asm_integrate, asm_rhs, contact_lambda)
from epifamily.asm.initialize import smooth_bins
from epifamily.errors import InputError, UndefinedDistributionError

from oracles import quadrature_lambda_oracle, scalar_sir_reference

MESH = AgeMesh(100.0, 1.0)


def bump(ages, center, half_width, amplitude):
    x = (ages - center) / half_width
    return np.where(np.abs(x) < 1, amplitude * np.cos(np.pi * x / 2) ** 2, 0.0)


def flat_block(ages, lo, hi, value):
    return np.where((ages >= lo) & (ages <= hi), value, 0.0)


def make_state(mesh=MESH, s=11750.0, i=750.0, sv=0.0, iv=0.0, r=0.0,
               lo=10, hi=90):
    ages = mesh.nodes
    zero = np.zeros_like(ages)
    return AsmState(S=flat_block(ages, lo, hi, s),
                    Sv=flat_block(ages, lo, hi, sv) if sv else zero.copy(),
                    I=flat_block(ages, lo, hi, i) if i else zero.copy(),
                    Iv=flat_block(ages, lo, hi, iv) if iv else zero.copy(),
                    R=flat_block(ages, lo, hi, r) if r else zero.copy())


def uniform_params(state, mesh=MESH, beta=0.23, gamma=0.125, theta=0.0):
    return AsmParams(contact_matrix=np.ones((mesh.n_nodes, mesh.n_nodes)),
                     beta_profile=1.0, beta_steps=(beta,), gamma=gamma,
                     effectiveness=theta, population=state.total(mesh))


class TestMesh:
    def test_nodes_and_weights(self):
        mesh = AgeMesh(100.0, 2.0)
        assert mesh.n_nodes == 51
        assert mesh.nodes[0] == 0.0 and mesh.nodes[-1] == 100.0
        weights = mesh.trapezoid_weights
        assert weights[0] == weights[-1] == 1.0
        assert weights[1:-1].tolist() == [2.0] * 49
        assert mesh.integrate(np.ones(51)) == pytest.approx(100.0)

    def test_rejects_small_or_ragged(self):
        with pytest.raises(InputError):
            AgeMesh(80.0, 1.0)
        with pytest.raises(InputError):
            AgeMesh(100.0, 3.0)


class TestContactLambda:
    def test_zero_density(self):
        kappa = np.ones((MESH.n_nodes, MESH.n_nodes))
        assert not contact_lambda(np.zeros(MESH.n_nodes), kappa, MESH).any()

    def test_constant_kernel_factorizes(self):
        density = bump(MESH.nodes, 40, 20, 100.0)
        kappa = np.full((MESH.n_nodes, MESH.n_nodes), 2.5)
        lam = contact_lambda(density, kappa, MESH)
        assert np.allclose(lam, 2.5 * MESH.integrate(density), rtol=1e-12)

    def test_block_kernel_keeps_old_ages_dark(self):
        ages = MESH.nodes
        young = ages < 40
        kappa = np.where(np.outer(young, young) | np.outer(~young, ~young), 1.0, 0.0)
        density = bump(ages, 20, 15, 50.0)   # supported on young ages only
        lam = contact_lambda(density, kappa, MESH)
        assert np.allclose(lam[~young], 0.0)
        expected = quadrature_lambda_oracle(kappa, density, ages)
        assert np.allclose(lam, expected, rtol=1e-12, atol=1e-9)

    def test_shape_mismatch(self):
        with pytest.raises(InputError):
            contact_lambda(np.zeros(5), np.ones((5, 5)), MESH)


class TestRhs:
    def test_no_infectious_pressure(self):
        state = make_state(i=0.0)
        params = uniform_params(state)
        derivs = asm_rhs(state, params, 0.0, MESH)
        # only transport remains and nothing recovers
        assert not derivs["R"].any()
        assert not derivs["I"].any()
        # transported mass leaves low-age nodes and arrives above
        assert derivs["S"].sum() != 0.0 or derivs["S"].any()

    def test_fully_protective_vaccine(self):
        state = make_state(sv=5000.0)
        params = uniform_params(state, theta=1.0)
        derivs = asm_rhs(state, params, 0.0, MESH)
        transport_only = asm_rhs(
            AsmState(S=state.Sv.copy(), Sv=np.zeros_like(state.Sv),
                     I=np.zeros_like(state.Sv), Iv=np.zeros_like(state.Sv),
                     R=np.zeros_like(state.Sv)),
            params, 0.0, MESH)["S"]
        assert np.allclose(derivs["Sv"], transport_only, rtol=0, atol=1e-12)

    def test_reaction_terms_match_scalar_formulas(self):
        # uniform densities and constant kernel: adding the transport term
        # back in, each node obeys the scalar SIR right-hand side
        state = make_state(s=9000.0, i=600.0, sv=2000.0, iv=100.0, r=300.0)
        params = uniform_params(state, beta=0.3, gamma=0.11, theta=0.6)
        derivs = asm_rhs(state, params, 0.0, MESH)
        total_infectious = MESH.integrate(state.I + state.Iv)
        pressure = 0.3 * total_infectious / params.population
        scale = 1.0 / 365.0

        def transport(density):
            out = np.empty_like(density)
            out[0] = density[0]
            out[1:] = density[1:] - density[:-1]
            return scale * out

        assert np.allclose(derivs["S"] + transport(state.S),
                           -pressure * state.S, rtol=1e-12, atol=1e-9)
        assert np.allclose(derivs["Sv"] + transport(state.Sv),
                           -(1 - 0.6) * pressure * state.Sv, rtol=1e-12, atol=1e-9)
        assert np.allclose(derivs["I"] + transport(state.I),
                           pressure * state.S - 0.11 * state.I, rtol=1e-12, atol=1e-9)
        assert np.allclose(derivs["Iv"] + transport(state.Iv),
                           (1 - 0.6) * pressure * state.Sv - 0.11 * state.Iv,
                           rtol=1e-12, atol=1e-9)
        assert np.allclose(derivs["R"] + transport(state.R),
                           0.11 * (state.I + state.Iv), rtol=1e-12, atol=1e-9)

    def test_reactions_cancel_pointwise(self):
        state = make_state(s=9000.0, i=600.0, sv=2000.0, iv=100.0, r=300.0)
        params = uniform_params(state, beta=0.3, gamma=0.11, theta=0.4)
        derivs = asm_rhs(state, params, 0.0, MESH)
        total = sum(derivs.values())
        scale = 1.0 / 365.0
        transported = sum(getattr(state, n) for n in ("S", "Sv", "I", "Iv", "R"))
        expected = -scale * np.concatenate([[transported[0]],
                                            np.diff(transported)])
        assert np.allclose(total, expected, rtol=1e-10, atol=1e-9)


class TestIntegrate:
    def test_pure_transport_conserves(self):
        state = make_state(i=0.0)
        params = uniform_params(state)
        trajectory = asm_integrate(state, params, MESH, 100)
        population = trajectory.population()
        assert np.max(np.abs(population - population[0])) / population[0] <= 1e-6
        assert not trajectory.boundary_reached
        # nothing ever enters the infectious or recovered paths
        assert trajectory.compartment_totals("I").max() == 0.0
        assert trajectory.compartment_totals("R").max() == 0.0

    def test_scalar_reduction(self):
        state = make_state()
        params = uniform_params(state)
        trajectory = asm_integrate(state, params, MESH, 120)
        s0, i0, r0 = (MESH.integrate(getattr(state, n)) for n in ("S", "I", "R"))
        reference = scalar_sir_reference(s0, i0, r0, 0.23 / params.population,
                                         0.125, 120)
        for idx, name in ((0, "S"), (1, "I"), (2, "R")):
            got = trajectory.compartment_totals(name)
            scale = np.abs(reference[idx]).max()
            assert np.abs(got - reference[idx]).max() / scale < 0.005

    def test_mesh_self_convergence(self):
        def run(delta_a):
            mesh = AgeMesh(100.0, delta_a)
            ages = mesh.nodes
            zero = np.zeros_like(ages)
            state = AsmState(S=bump(ages, 45, 35, 12000.0), Sv=zero.copy(),
                             I=bump(ages, 30, 10, 900.0), Iv=zero.copy(),
                             R=zero.copy())
            a, b = np.meshgrid(ages, ages, indexing="ij")
            kappa = 0.4 + 0.8 * np.exp(-(a - b) ** 2 / (2 * 15.0 ** 2))
            params = AsmParams(contact_matrix=kappa, beta_profile=1.0,
                               beta_steps=(0.35,), gamma=0.125,
                               effectiveness=0.0, population=state.total(mesh))
            return asm_integrate(state, params, mesh, 120).compartment_totals("I")[-1]

        coarse, fine = run(2.0), run(1.0)
        assert abs(fine - coarse) / fine < 0.01

    def test_theta_monotone(self):
        cumulative = []
        for theta in (0.0, 0.5, 1.0):
            state = make_state(s=8000.0, sv=4000.0, i=500.0)
            params = uniform_params(state, beta=0.3, theta=theta)
            trajectory = asm_integrate(state, params, MESH, 80)
            cumulative.append(trajectory.cumulative_cases[-1])
        assert cumulative[0] > cumulative[1] > cumulative[2]

    def test_clamping_bounded(self):
        state = make_state()
        params = uniform_params(state, beta=0.4)
        trajectory = asm_integrate(state, params, MESH, 120)
        assert trajectory.clamped_mass <= 1e-9 * params.population


class TestInitialize:
    def test_single_bin_mass_preserved(self):
        density = smooth_bins([(0.0, 100.0, 1000.0)], 8.0, MESH)
        assert MESH.integrate(density) == pytest.approx(1000.0, rel=1e-12)
        # large bandwidth over one wide bin: close to uniform in the bulk
        bulk = density[20:80]
        assert bulk.max() < 1.3 * bulk.min()

    def test_per_compartment_totals(self):
        state = asm_initialize({"S": [(0, 100, 900.0)], "I": [(20, 40, 100.0)]},
                               3.0, MESH)
        assert MESH.integrate(state.S) == pytest.approx(900.0, rel=1e-3)
        assert MESH.integrate(state.I) == pytest.approx(100.0, rel=1e-3)
        assert not state.Sv.any() and not state.R.any()

    def test_mixed_bin_widths(self):
        bins = [(0, 5, 50.0), (5, 10, 60.0), (10, 20, 200.0), (20, 30, 180.0),
                (30, 40, 170.0), (40, 50, 160.0), (50, 60, 150.0),
                (60, 80, 220.0), (80, 100, 90.0)]
        density = smooth_bins(bins, 3.0, MESH)
        total = sum(count for _, _, count in bins)
        assert np.trapezoid(density, MESH.nodes) == pytest.approx(total, rel=1e-3)

    def test_rejects_bad_bins(self):
        with pytest.raises(InputError):
            smooth_bins([(10, 10, 5.0)], 3.0, MESH)
        with pytest.raises(InputError):
            smooth_bins([(0, 10, -1.0)], 3.0, MESH)
        with pytest.raises(InputError):
            asm_initialize({}, 3.0, MESH)
        with pytest.raises(InputError):
            asm_initialize({"S": [(0, 10, 0.0)]}, 3.0, MESH)


class TestAgeDistribution:
    def test_support_containment(self):
        ages = MESH.nodes
        zero = np.zeros_like(ages)
        state = AsmState(S=flat_block(ages, 10, 90, 100.0), Sv=zero.copy(),
                         I=flat_block(ages, 20, 29, 40.0), Iv=zero.copy(),
                         R=zero.copy())
        params = uniform_params(state, beta=0.0001)
        trajectory = asm_integrate(state, params, MESH, 1)
        dist = asm_age_distribution(trajectory, 0, "all")
        assert 20.0 <= dist.mean_age <= 30.0
        assert MESH.integrate(dist.density) == pytest.approx(1.0, rel=1e-12)

    def test_split_additivity(self):
        ages = MESH.nodes
        zero = np.zeros_like(ages)
        state = AsmState(S=flat_block(ages, 10, 90, 100.0), Sv=zero.copy(),
                         I=bump(ages, 30, 15, 40.0), Iv=bump(ages, 60, 20, 25.0),
                         R=zero.copy())
        params = uniform_params(state, beta=0.0001)
        trajectory = asm_integrate(state, params, MESH, 1)
        all_dist = asm_age_distribution(trajectory, 0, "all")
        vacc = asm_age_distribution(trajectory, 0, "vaccinated")
        unvacc = asm_age_distribution(trajectory, 0, "unvaccinated")
        total = vacc.mass + unvacc.mass
        mixed = (vacc.mass * vacc.density + unvacc.mass * unvacc.density) / total
        assert np.allclose(all_dist.density, mixed, rtol=0, atol=1e-12)

    def test_empty_split_raises(self):
        state = make_state()     # no vaccinated path at all
        params = uniform_params(state)
        trajectory = asm_integrate(state, params, MESH, 1)
        with pytest.raises(UndefinedDistributionError):
            asm_age_distribution(trajectory, 0, "vaccinated")

    def test_old_skewed_vaccination_lowers_mean_case_age(self):
        def scenario(vaccinate_old):
            ages = MESH.nodes
            S = bump(ages, 45, 40, 12000.0)
            Sv = np.zeros_like(S)
            if vaccinate_old:
                old = ages >= 60
                Sv[old] = S[old] * 0.85
                S = S - Sv
            zero = np.zeros_like(S)
            state = AsmState(S=S, Sv=Sv, I=bump(ages, 40, 25, 300.0),
                             Iv=zero.copy(), R=zero.copy())
            params = uniform_params(state, beta=0.3, gamma=0.11, theta=0.9)
            trajectory = asm_integrate(state, params, MESH, 150)
            totals = (trajectory.compartment_totals("I")
                      + trajectory.compartment_totals("Iv"))
            peak = int(np.argmax(totals))
            return asm_age_distribution(trajectory, peak, "all").mean_age

        assert scenario(True) < scenario(False)
