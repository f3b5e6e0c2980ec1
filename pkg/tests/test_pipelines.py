import dataclasses
import datetime as dt

import numpy as np
import pytest

from epifamily.asm import AgeMesh, AsmParams, AsmState, asm_integrate
from epifamily.errors import AlignmentError, InputError, NumericalError
from epifamily.hm import HmParams, hm_forward
from epifamily.iwm import run_iwm, protection_curves
from epifamily.pipelines import (immunity_rate_factors, pipeline_ss1, pipeline_ss2,
                                 pipeline_ss3, pipeline_ss4)
from epifamily.series import DailySeries, align_and_concat

from conftest import START, daily, delta_delay, make_iwm_config


def delta_params(factors=None):
    return HmParams(rate=0.1, mu_adm=2, mu_stay=3, shape_adm="delta",
                    shape_stay="delta", support=10, factors=factors)


class TestSs1:
    def test_identity_factor(self):
        cases = daily(np.full(40, 100.0))
        report = pipeline_ss1([cases], [1.0], delta_params(), START)
        baseline = hm_forward(cases, delta_params())
        assert np.array_equal(report.series["occupancy_s0_f1"].values,
                              baseline.occupancy.values)

    def test_factor_scales_steady_state(self):
        cases = daily(np.full(40, 100.0))
        report = pipeline_ss1([cases], [1.0, 1.3], delta_params(), START)
        base = report.series["occupancy_s0_f1"].values
        scaled = report.series["occupancy_s0_f1.3"].values
        assert np.allclose(base[6:], 30.0)
        assert np.allclose(scaled[6:], 39.0)

    def test_matrix_matches_componentwise_reruns(self):
        rng = np.random.default_rng(0)
        scenarios = [daily(rng.uniform(0, 200, 60)) for _ in range(2)]
        factors = [1.0, 1.3]
        forecast_start = START + dt.timedelta(days=30)
        report = pipeline_ss1(scenarios, factors, delta_params(), forecast_start)
        assert len(report.series) == 4
        for s_idx, cases in enumerate(scenarios):
            for factor in factors:
                xi = np.ones(60)
                xi[30:] *= factor
                manual = hm_forward(cases, delta_params(factors=daily(xi)))
                name = f"occupancy_s{s_idx}_f{factor:g}"
                assert np.array_equal(report.series[name].values,
                                      manual.occupancy.values)
                assert report.provenance[name] == "hm"

    def test_nonpositive_factor_rejected(self):
        with pytest.raises(InputError):
            pipeline_ss1([daily(np.ones(10))], [0.0], delta_params(), START)


def asm_setup(vaccinated=True):
    mesh = AgeMesh(100.0, 2.0)
    ages = mesh.nodes

    def bump(center, half_width, amplitude):
        x = (ages - center) / half_width
        return np.where(np.abs(x) < 1, amplitude * np.cos(np.pi * x / 2) ** 2, 0.0)

    zero = np.zeros_like(ages)
    state = AsmState(S=bump(45, 35, 12000.0),
                     Sv=bump(70, 20, 3000.0) if vaccinated else zero.copy(),
                     I=bump(30, 10, 400.0), Iv=zero.copy(), R=zero.copy())
    params = AsmParams(contact_matrix=np.ones((mesh.n_nodes, mesh.n_nodes)),
                       beta_profile=1.0, beta_steps=(0.5, 0.4),
                       gamma=0.125, effectiveness=0.7, population=state.total(mesh))
    return mesh, state, params


class TestSs2:
    def test_self_consistent_fit(self):
        mesh, state, params = asm_setup()
        trajectory = asm_integrate(state, params, mesh, 14)
        forecast = DailySeries(START, np.diff(trajectory.cumulative_cases))
        report = pipeline_ss2(forecast, state, params, mesh, weeks=2)
        for model, target in zip(report.metadata["weekly_model"],
                                 report.metadata["weekly_targets"]):
            assert abs(model - target) <= 1e-3 * target
        assert "mean_age_all" in report.series
        assert "mean_age_vaccinated" in report.series
        assert report.provenance["mean_age_all"] == "asm"

    def test_zero_vaccinated_split_noted_not_fatal(self):
        mesh, state, params = asm_setup(vaccinated=False)
        trajectory = asm_integrate(state, params, mesh, 14)
        forecast = DailySeries(START, np.diff(trajectory.cumulative_cases))
        report = pipeline_ss2(forecast, state, params, mesh, weeks=2)
        assert "mean_age_all" in report.series
        assert "mean_age_vaccinated" not in report.series
        assert "vaccinated" in report.metadata["split_notes"]


class TestSs3:
    def make_history_forecast(self, horizon=40, forecast_days=20, level=4.0):
        history = {"alpha": daily(np.full(horizon, level))}
        forecast = {"alpha": DailySeries(START + dt.timedelta(days=horizon),
                                         np.full(forecast_days, level))}
        return history, forecast

    def config_template(self, horizon=40, n_entities=400):
        return make_iwm_config(
            horizon=horizon, n_entities=n_entities,
            cases=np.full(horizon, 4.0),
            observables=("inf_alpha", "severe"),
            base_probs={"alpha": {"inf_alpha": 0.7, "severe": 0.9}},
            waning_means={"alpha": {"inf_alpha": 60.0, "severe": 150.0}},
            waning_families={"alpha": "exponential"})

    def test_zero_inputs_give_zero_curves(self):
        history = {"alpha": daily(np.zeros(30))}
        forecast = {"alpha": DailySeries(START + dt.timedelta(days=30), np.zeros(10))}
        config = make_iwm_config(horizon=30, n_entities=50,
                                 observables=("inf_alpha", "severe"),
                                 base_probs={"alpha": {"inf_alpha": 0.7, "severe": 0.9}},
                                 waning_means={"alpha": {"inf_alpha": 60.0, "severe": 150.0}},
                                 waning_families={"alpha": "exponential"})
        report = pipeline_ss3(history, forecast, config, "inf_alpha", "severe", 3)
        for name, series in report.series.items():
            assert not series.values.any(), name

    def test_alignment_error_propagates(self):
        history, forecast = self.make_history_forecast()
        forecast = {"alpha": DailySeries(START + dt.timedelta(days=45),
                                         np.full(10, 4.0))}
        with pytest.raises(AlignmentError):
            pipeline_ss3(history, forecast, self.config_template(),
                         "inf_alpha", "severe", 2)

    def test_bit_identical_to_manual_chain(self):
        history, forecast = self.make_history_forecast()
        config = self.config_template()
        seeds = [3, 8, 21]
        report = pipeline_ss3(history, forecast, config, "inf_alpha", "severe", seeds)

        joined = align_and_concat(history["alpha"], forecast["alpha"])
        manual_config = dataclasses.replace(
            config, cases=joined, horizon=len(joined),
            variant_shares={"alpha": DailySeries(START, np.where(
                joined.values > 0, 1.0, 0.0))})
        curves = [protection_curves(run_iwm(manual_config, seed),
                                    "inf_alpha", "severe") for seed in seeds]
        infection = np.array([c[0].values for c in curves])
        assert np.array_equal(report.series["protection_infection_mean"].values,
                              infection.mean(axis=0))
        assert np.array_equal(report.series["protection_infection_min"].values,
                              infection.min(axis=0))
        assert np.array_equal(report.series["protection_infection_max"].values,
                              infection.max(axis=0))

    def test_band_shrinks_with_population(self):
        def band_width(n_entities, level):
            history = {"alpha": daily(np.full(40, level))}
            forecast = {"alpha": DailySeries(START + dt.timedelta(days=40),
                                             np.full(20, level))}
            config = make_iwm_config(
                horizon=40, n_entities=n_entities, cases=np.full(40, level),
                observables=("inf_alpha", "severe"),
                base_probs={"alpha": {"inf_alpha": 0.7, "severe": 0.9}},
                waning_means={"alpha": {"inf_alpha": 60.0, "severe": 150.0}},
                waning_families={"alpha": "exponential"})
            report = pipeline_ss3(history, forecast, config,
                                  "inf_alpha", "severe", 6)
            width = (report.series["protection_infection_max"].values
                     - report.series["protection_infection_min"].values)
            return width[10:].mean()

        assert band_width(3000, 30.0) < band_width(300, 3.0)

    def test_mean_inside_band(self):
        history, forecast = self.make_history_forecast()
        report = pipeline_ss3(history, forecast, self.config_template(),
                              "inf_alpha", "severe", 5)
        for label in ("infection", "severe"):
            mean = report.series[f"protection_{label}_mean"].values
            low = report.series[f"protection_{label}_min"].values
            high = report.series[f"protection_{label}_max"].values
            assert np.all(mean >= low - 1e-12) and np.all(mean <= high + 1e-12)

    def test_zero_forecast_decays_like_cohort_oracle(self):
        # with an empty forecast the immunity level over the forecast
        # window is pure waning of the history-built stock
        from oracles import iwm_cohort_oracle

        horizon, forecast_days, n = 40, 30, 400
        history = {"alpha": daily(np.full(horizon, 6.0))}
        forecast = {"alpha": DailySeries(START + dt.timedelta(days=horizon),
                                         np.zeros(forecast_days))}
        config = make_iwm_config(
            horizon=horizon, n_entities=n, cases=np.full(horizon, 6.0),
            observables=("inf_alpha", "severe"),
            base_probs={"alpha": {"inf_alpha": 0.7, "severe": 0.9}},
            waning_means={"alpha": {"inf_alpha": 90.0, "severe": 150.0}},
            waning_families={"alpha": "exponential"})
        seeds = list(range(20))
        report = pipeline_ss3(history, forecast, config, "inf_alpha", "severe", seeds)
        mean_curve = report.series["protection_infection_mean"].values * n
        # detected tests 0..39 with a 3-day lag: infections -3..36,
        # recoveries 10 days after infection, 6 per day
        recoveries = [(day + 10, 6.0) for day in range(-3, horizon - 3)]
        total_days = horizon + forecast_days
        expected = iwm_cohort_oracle(total_days, recoveries, 0.7, 90.0)
        window = slice(horizon, total_days)
        last_inflow_day = (horizon - 4) + 10
        assert (np.diff(expected[last_inflow_day:]) < 0).all()   # decay only
        assert (np.diff(mean_curve[last_inflow_day:]) <= 0).all()
        fraction = expected / n
        sigma = np.sqrt(np.maximum(n * fraction * (1 - fraction), 1e-12) / len(seeds))
        inside = np.abs(mean_curve - expected) <= 3.0 * sigma + 1e-9
        assert inside[window].mean() >= 0.95


class TestSs4:
    def test_ratio_spot_value(self):
        # anchor day carries no protection (ratio 1), the second day the
        # quoted levels: (1 - 0.8) / (1 - 0.5) = 0.4
        p_inf = daily([0.0, 0.5])
        p_sev = daily([0.0, 0.8])
        factors = immunity_rate_factors(p_inf, p_sev, START)
        assert factors.values[1] == pytest.approx(0.2 / 0.5)

    def test_equal_protection_means_no_adjustment(self):
        horizon = 40
        values = np.linspace(0.1, 0.4, horizon)
        p_inf = daily(values)
        p_sev = daily(values)
        cases = daily(np.full(horizon, 100.0))
        report = pipeline_ss4(p_inf, p_sev, cases, delta_params(), START)
        assert np.allclose(report.series["rate_factors"].values, 1.0)
        assert np.array_equal(report.series["occupancy_adjusted"].values,
                              report.series["occupancy_unadjusted"].values)

    def test_faster_infection_waning_lowers_occupancy(self):
        horizon = 60
        anchor = START + dt.timedelta(days=19)
        p_sev = np.full(horizon, 0.8)
        p_inf = np.concatenate([np.full(20, 0.75), np.linspace(0.75, 0.2, 40)])
        report = pipeline_ss4(daily(p_inf), daily(p_sev), daily(np.full(horizon, 100.0)),
                              delta_params(), anchor)
        adjusted = report.series["occupancy_adjusted"].values
        unadjusted = report.series["occupancy_unadjusted"].values
        assert np.all(adjusted <= unadjusted + 1e-12)
        assert adjusted[-1] < unadjusted[-1]

    def test_singular_ratio(self):
        p_inf = daily([0.2, 1.0])
        p_sev = daily([0.9, 1.0])
        with pytest.raises(NumericalError):
            immunity_rate_factors(p_inf, p_sev, START)

    def test_severe_below_infection_names_day(self):
        p_inf = daily([0.2, 0.6])
        p_sev = daily([0.9, 0.5])
        with pytest.raises(InputError) as excinfo:
            immunity_rate_factors(p_inf, p_sev, START)
        assert "2022-01-02" in str(excinfo.value)

    def test_report_write_round_trips(self, tmp_path):
        import json
        from epifamily.series import read_series_csv

        p_inf = daily([0.0, 0.5])
        p_sev = daily([0.0, 0.8])
        cases = daily([100.0, 100.0])
        report = pipeline_ss4(p_inf, p_sev, cases, delta_params(), START)
        report.write(tmp_path)
        doc = json.loads((tmp_path / "report.json").read_text())
        assert doc["pipeline"] == "ss4"
        assert doc["metadata"]["anchor_day"] == START.isoformat()
        back = read_series_csv(tmp_path / "rate_factors.csv")
        assert np.array_equal(back.values, report.series["rate_factors"].values)

    def test_factors_in_unit_interval_when_anchor_is_max(self):
        rng = np.random.default_rng(1)
        p_inf = np.sort(rng.uniform(0.1, 0.6, 30))
        p_sev = p_inf + rng.uniform(0.05, 0.3, 30)
        p_sev = np.clip(p_sev, 0, 0.95)
        ratio = (1 - p_sev) / (1 - p_inf)
        anchor = START + dt.timedelta(days=int(np.argmax(ratio)))
        factors = immunity_rate_factors(daily(p_inf), daily(p_sev), anchor)
        assert np.all(factors.values > 0) and np.all(factors.values <= 1 + 1e-12)
