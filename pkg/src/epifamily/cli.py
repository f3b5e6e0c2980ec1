"""Command-line entry point.

One binary, one reproducibility surface: every subcommand reads a JSON
config, writes its artifacts plus a manifest (config and input hashes,
seeds, package version) into the output directory, and reports problems
as machine-readable JSON on stderr. Exit codes: 0 success, 2 invalid
input or config, 3 numerical failure (non-convergence, singular ratio).

Commands::

    epifamily iwm run            --config cfg.json --out dir [--seeds 0..4] [--jobs 4]
    epifamily hm calibrate       --config cfg.json --out dir
    epifamily hm forecast        --config cfg.json --out dir
    epifamily asm run            --config cfg.json --out dir
    epifamily asm calibrate      --config cfg.json --out dir
    epifamily scenarios generate --config cfg.json --out dir
    epifamily pipeline ss1|ss2|ss3|ss4 --config cfg.json --out dir [--seeds ...]
    epifamily cld check          [--config cfg.json] --out dir

``EPIFAMILY_LOG`` (debug/info/warning/error) controls verbosity.
"""

from __future__ import annotations

import argparse
import csv
import datetime as dt
import hashlib
import json
import logging
import os
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .asm.calibrate import asm_calibrate_beta
from .asm.initialize import (DEFAULT_BANDWIDTH_YEARS, asm_initialize,
                             read_compartments_csv, read_contact_matrix_csv)
from .asm.model import AgeMesh, AsmParams, AsmTrajectory, asm_integrate
from .cld import cld_to_dot, coverage_report, load_cld, report_to_json
from .errors import InputError, NumericalError
from .hm import HmCalibration, HmParams, hm_anchor_shift, hm_calibrate, hm_forward
from .iwm.engine import run_iwm
from .iwm.io import (iwm_config_from_json, read_cases_csv, write_census_csv,
                     write_immunity_csv)
from .pipelines import (PipelineReport, fingerprint, pipeline_ss1, pipeline_ss2,
                        pipeline_ss3, pipeline_ss4)
from .scenarios import ScenarioSpec, VariantTakeover, generate_scenarios
from .series import DailySeries, ONE_DAY, read_series_csv, write_series_csv

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERICAL = 3


def _parse_seeds(text: str) -> list[int]:
    if ".." in text:
        lo, hi = text.split("..", 1)
        return list(range(int(lo), int(hi) + 1))
    return [int(part) for part in text.split(",") if part]


def _sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


class RunContext:
    """Collects input hashes and output names for the run manifest."""

    def __init__(self, args):
        self.args = args
        self.out_dir = Path(args.out)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.inputs: dict[str, str] = {}
        self.outputs: list[str] = []
        self.config: dict = {}
        self.config_dir = Path(".")
        if getattr(args, "config", None):
            config_path = Path(args.config)
            self.config_dir = config_path.parent
            self.inputs[str(config_path)] = _sha256(config_path)
            with open(config_path) as fh:
                self.config = json.load(fh)

    def input_path(self, name, base=None) -> Path:
        """Resolve a config-relative input path and record its hash."""
        path = Path(name)
        if not path.is_absolute():
            path = Path(base if base is not None else self.config_dir) / path
        if not path.exists():
            raise InputError(f"input file {path} does not exist")
        self.inputs[str(path)] = _sha256(path)
        return path

    def write_text(self, name: str, text: str) -> Path:
        """Atomic single-write of one artifact."""
        path = self.out_dir / name
        tmp = path.with_suffix(path.suffix + ".tmp")
        with open(tmp, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
        self.outputs.append(name)
        return path

    def write_json(self, name: str, doc) -> Path:
        return self.write_text(name, json.dumps(doc, indent=2, sort_keys=True) + "\n")

    def write_file(self, name: str, writer) -> Path:
        """Atomic write through a callable that takes a path."""
        path = self.out_dir / name
        tmp = path.with_suffix(path.suffix + ".tmp")
        writer(tmp)
        os.replace(tmp, path)
        self.outputs.append(name)
        return path

    def finish(self, command: str, seeds=None) -> None:
        manifest = {
            "command": command,
            "package_version": __version__,
            "inputs": dict(sorted(self.inputs.items())),
            "outputs": sorted(self.outputs),
            "seeds": seeds if seeds is None else [int(s) for s in seeds],
            "config_fingerprint": fingerprint(self.config),
        }
        log.info("%s: config %s, seeds %s", command,
                 manifest["config_fingerprint"], manifest["seeds"])
        self.write_json("manifest.json", manifest)


# --- series/config helpers ----------------------------------------------------

def _require(config: dict, key: str):
    if key not in config:
        raise InputError(f"config is missing required key {key!r}")
    return config[key]


def _hm_params_from(ctx: RunContext, config: dict) -> HmParams:
    factors = None
    if config.get("xi_csv"):
        factors = read_series_csv(ctx.input_path(config["xi_csv"]))
    if config.get("calibration_json"):
        with open(ctx.input_path(config["calibration_json"])) as fh:
            doc = json.load(fh)["params"]
    elif "params" in config:
        doc = config["params"]
    else:
        raise InputError("config needs either 'params' or 'calibration_json'")
    return HmParams(rate=float(doc["rate"]), mu_adm=float(doc["mu_adm"]),
                    mu_stay=float(doc["mu_stay"]),
                    shape_adm=doc.get("shape_adm", "gamma"),
                    shape_stay=doc.get("shape_stay", "gamma"),
                    support=int(doc.get("support", 60)),
                    gamma_shape=float(doc.get("gamma_shape", 3.0)),
                    factors=factors)


def _age_profile(spec, mesh: AgeMesh):
    """Scalar or [[age_lo, age_hi, value], ...] onto mesh nodes."""
    if isinstance(spec, (int, float)):
        return float(spec)
    values = np.zeros(mesh.n_nodes)
    assigned = np.zeros(mesh.n_nodes, dtype=bool)
    for lo, hi, value in spec:
        mask = (mesh.nodes >= lo) & (mesh.nodes < hi)
        values[mask] = value
        assigned |= mask
    if not assigned.all():
        age = mesh.nodes[~assigned][0]
        raise InputError(f"age profile leaves age {age:g} unassigned")
    return values


def _asm_setup(ctx: RunContext, config: dict, base=None):
    mesh_cfg = config.get("mesh", {})
    mesh = AgeMesh(a_max=float(mesh_cfg.get("a_max", 100.0)),
                   delta_a=float(mesh_cfg.get("delta_a", 1.0)))
    raw = read_compartments_csv(
        ctx.input_path(_require(config, "compartments_csv"), base))
    state = asm_initialize(raw, float(config.get("bandwidth", DEFAULT_BANDWIDTH_YEARS)), mesh)
    kappa = read_contact_matrix_csv(
        ctx.input_path(_require(config, "contact_matrix_csv"), base), mesh)
    params = AsmParams(
        contact_matrix=kappa,
        beta_profile=_age_profile(config.get("beta_profile", 1.0), mesh),
        beta_steps=tuple(float(b) for b in config.get("beta_steps", (1.0,))),
        gamma=_age_profile(_require(config, "gamma"), mesh),
        effectiveness=float(config.get("effectiveness", 0.0)),
        population=state.total(mesh),
        week_length=int(config.get("week_length", 7)),
        detection_factor=float(config.get("detection_factor", 1.0)))
    return mesh, state, params


def _write_trajectory(ctx: RunContext, trajectory: AsmTrajectory, start_date: dt.date):
    mesh = trajectory.mesh

    def density_writer(name):
        def write(path):
            with open(path, "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["date"] + [f"{a:g}" for a in mesh.nodes])
                for day, state in enumerate(trajectory.states):
                    date = (start_date + day * ONE_DAY).isoformat()
                    writer.writerow([date] + [repr(float(v))
                                              for v in getattr(state, name)])
        return write

    for name in ("S", "Sv", "I", "Iv", "R"):
        ctx.write_file(f"density_{name}.csv", density_writer(name))

    def totals(path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["date", "S", "Sv", "I", "Iv", "R", "cases"])
            daily_cases = np.diff(trajectory.cumulative_cases, prepend=0.0)
            for day, state in enumerate(trajectory.states):
                date = (start_date + day * ONE_DAY).isoformat()
                writer.writerow([date] + [repr(mesh.integrate(getattr(state, n)))
                                          for n in ("S", "Sv", "I", "Iv", "R")]
                                + [repr(float(daily_cases[day]))])

    ctx.write_file("totals.csv", totals)


# --- command handlers ----------------------------------------------------------

def _cmd_iwm_run(ctx: RunContext) -> None:
    config = dict(ctx.config)
    if "cases_csv" in config:
        config["cases_csv"] = str(ctx.input_path(config["cases_csv"]))
    if config.get("vaccinations_csv"):
        config["vaccinations_csv"] = str(ctx.input_path(config["vaccinations_csv"]))
    iwm_config = iwm_config_from_json(config, base_dir=".")
    seeds = _parse_seeds(ctx.args.seeds)
    jobs = max(1, ctx.args.jobs)
    if jobs > 1 and len(seeds) > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run_iwm, [iwm_config] * len(seeds), seeds))
    else:
        results = [run_iwm(iwm_config, seed) for seed in seeds]
    for seed, timelines in zip(seeds, results):
        ctx.write_file(f"immunity_seed{seed}.csv",
                       lambda p, t=timelines: write_immunity_csv(t, p))
        ctx.write_file(f"census_seed{seed}.csv",
                       lambda p, t=timelines: write_census_csv(t, p))
    ctx.finish("iwm run", seeds=seeds)


def _cmd_hm_calibrate(ctx: RunContext) -> None:
    config = ctx.config
    cases = read_series_csv(ctx.input_path(_require(config, "cases_csv")))
    reference = read_series_csv(ctx.input_path(_require(config, "reference_csv")), "beds")
    factors = None
    if config.get("xi_csv"):
        factors = read_series_csv(ctx.input_path(config["xi_csv"]))
    start = config.get("start")
    result = hm_calibrate(
        cases, factors, reference, window=int(_require(config, "window")),
        shape_adm=config.get("shape_adm", "gamma"),
        shape_stay=config.get("shape_stay", "gamma"),
        support=int(config.get("support", 60)),
        gamma_shape=float(config.get("gamma_shape", 3.0)),
        start=None if start is None else tuple(float(v) for v in start))
    ctx.write_json("calibration.json", _calibration_doc(result))
    if not result.converged:
        raise NumericalError(f"calibration did not converge within "
                             f"{result.iterations} iterations (err={result.err:.6g})")
    ctx.finish("hm calibrate")


def _calibration_doc(result: HmCalibration) -> dict:
    p = result.params
    return {"params": {"rate": p.rate, "mu_adm": p.mu_adm, "mu_stay": p.mu_stay,
                       "shape_adm": p.shape_adm, "shape_stay": p.shape_stay,
                       "support": p.support, "gamma_shape": p.gamma_shape},
            "err": result.err, "iterations": result.iterations,
            "converged": result.converged}


def _cmd_hm_forecast(ctx: RunContext) -> None:
    config = ctx.config
    cases = read_series_csv(ctx.input_path(_require(config, "cases_csv")))
    params = _hm_params_from(ctx, config)
    output = hm_forward(cases, params)
    occupancy = output.occupancy
    if config.get("anchor_reference_csv"):
        reference = read_series_csv(ctx.input_path(config["anchor_reference_csv"]), "beds")
        occupancy = hm_anchor_shift(occupancy, reference)

    def write(path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["date", "admissions", "releases", "occupancy"])
            for i, day in enumerate(cases.dates()):
                writer.writerow([day.isoformat(), repr(float(output.admissions.values[i])),
                                 repr(float(output.releases.values[i])),
                                 repr(float(occupancy.values[i + 1]))])

    ctx.write_file("occupancy.csv", write)
    ctx.finish("hm forecast")


def _cmd_asm_run(ctx: RunContext) -> None:
    config = ctx.config
    mesh, state, params = _asm_setup(ctx, config)
    horizon = int(_require(config, "horizon"))
    start_date = dt.date.fromisoformat(config.get("start_date", "2000-01-01"))
    trajectory = asm_integrate(state, params, mesh, horizon,
                               rtol=float(config.get("rtol", 1e-6)))
    _write_trajectory(ctx, trajectory, start_date)
    ctx.finish("asm run")


def _cmd_asm_calibrate(ctx: RunContext) -> None:
    config = ctx.config
    mesh, state, params = _asm_setup(ctx, config)
    reference = read_series_csv(ctx.input_path(_require(config, "reference_csv")))
    bracket = tuple(float(v) for v in config.get("bracket", (1e-3, 10.0)))
    calibration = asm_calibrate_beta(
        params, state, mesh, reference, weeks=config.get("weeks"),
        bracket=bracket, rel_tol=float(config.get("rel_tol", 1e-3)),
        rtol=float(config.get("rtol", 1e-6)))
    ctx.write_json("beta_fit.json", {
        "beta_steps": list(calibration.beta_steps),
        "weekly_targets": list(calibration.weekly_targets),
        "weekly_model": list(calibration.weekly_model),
        "bisection_steps": list(calibration.bisection_steps),
        "converged": list(calibration.converged),
        "at_lower_bound": list(calibration.at_lower_bound)})
    fitted = params.with_beta_steps(calibration.beta_steps)
    horizon = len(calibration.beta_steps) * params.week_length
    trajectory = asm_integrate(state, fitted, mesh, horizon,
                               rtol=float(config.get("rtol", 1e-6)))
    _write_trajectory(ctx, trajectory, reference.start_date)
    ctx.finish("asm calibrate")


def _cmd_scenarios(ctx: RunContext) -> None:
    config = ctx.config
    takeovers = tuple(
        VariantTakeover(variant=t["variant"], start_day=int(t["start_day"]),
                        growth_rate=float(t["growth_rate"]),
                        transmissibility=float(t["transmissibility"]))
        for t in config.get("takeovers", ()))
    spec = ScenarioSpec(
        start_date=dt.date.fromisoformat(_require(config, "start_date")),
        horizon=int(_require(config, "horizon")),
        population=float(_require(config, "population")),
        transmission=float(_require(config, "transmission")),
        recovery=float(_require(config, "recovery")),
        waning=float(config.get("waning", 0.0)),
        seasonal_amplitude=float(config.get("seasonal_amplitude", 0.0)),
        initial=tuple(float(v) for v in _require(config, "initial")),
        baseline_variant=config.get("baseline_variant", "baseline"),
        takeovers=takeovers,
        seed=int(config.get("seed", 0)))
    scenarios = generate_scenarios(spec, int(config.get("count", 1)))
    for k, scenario in enumerate(scenarios):
        def write(path, scenario=scenario):
            with open(path, "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["date", "variant", "count"])
                for variant, series in scenario.items():
                    for day, value in zip(series.dates(), series.values):
                        writer.writerow([day.isoformat(), variant, repr(float(value))])
        ctx.write_file(f"cases_s{k}.csv", write)
    ctx.finish("scenarios generate", seeds=[spec.seed])


def _write_pipeline_report(ctx: RunContext, report: PipelineReport) -> None:
    for name, series in report.series.items():
        if ctx.args.format == "csv":
            ctx.write_file(f"{name}.csv", lambda p, s=series: write_series_csv(s, p))
    doc = {"pipeline": report.pipeline, "provenance": report.provenance,
           "metadata": report.metadata}
    if ctx.args.format == "json":
        doc["series"] = {name: {"start_date": s.start_date.isoformat(),
                                "values": [float(v) for v in s.values]}
                         for name, s in report.series.items()}
    else:
        doc["series"] = {name: f"{name}.csv" for name in report.series}
    ctx.write_json("report.json", doc)


def _cmd_pipeline(ctx: RunContext) -> None:
    story = ctx.args.story
    config = ctx.config
    if story == "ss1":
        if "scenarios_config" in config:
            with open(ctx.input_path(config["scenarios_config"])) as fh:
                scenario_doc = json.load(fh)
            takeovers = tuple(
                VariantTakeover(variant=t["variant"], start_day=int(t["start_day"]),
                                growth_rate=float(t["growth_rate"]),
                                transmissibility=float(t["transmissibility"]))
                for t in scenario_doc.get("takeovers", ()))
            spec = ScenarioSpec(
                start_date=dt.date.fromisoformat(scenario_doc["start_date"]),
                horizon=int(scenario_doc["horizon"]),
                population=float(scenario_doc["population"]),
                transmission=float(scenario_doc["transmission"]),
                recovery=float(scenario_doc["recovery"]),
                waning=float(scenario_doc.get("waning", 0.0)),
                seasonal_amplitude=float(scenario_doc.get("seasonal_amplitude", 0.0)),
                initial=tuple(float(v) for v in scenario_doc["initial"]),
                baseline_variant=scenario_doc.get("baseline_variant", "baseline"),
                takeovers=takeovers, seed=int(scenario_doc.get("seed", 0)))
            bundles = generate_scenarios(spec, int(scenario_doc.get("count", 1)))
            cases = [DailySeries(spec.start_date,
                                 np.sum([s.values for s in bundle.values()], axis=0))
                     for bundle in bundles]
        else:
            cases = [read_series_csv(ctx.input_path(p)) for p in _require(config, "cases")]
        params = _hm_params_from(ctx, config)
        report = pipeline_ss1(cases, [float(f) for f in _require(config, "virulence_factors")],
                              params, dt.date.fromisoformat(_require(config, "forecast_start")))
    elif story == "ss2":
        asm_path = ctx.input_path(_require(config, "asm_config"))
        with open(asm_path) as fh:
            asm_doc = json.load(fh)
        mesh, state, params = _asm_setup(ctx, asm_doc, base=asm_path.parent)
        forecast = read_series_csv(ctx.input_path(_require(config, "forecast_csv")))
        report = pipeline_ss2(forecast, state, params, mesh, weeks=config.get("weeks"))
    elif story == "ss3":
        iwm_path = ctx.input_path(_require(config, "iwm_config"))
        with open(iwm_path) as fh:
            iwm_doc = json.load(fh)
        for key in ("cases_csv", "vaccinations_csv"):
            if iwm_doc.get(key):
                ctx.input_path(iwm_doc[key], base=iwm_path.parent)
        base_config = iwm_config_from_json(iwm_doc, base_dir=iwm_path.parent)
        history = {v: DailySeries(base_config.start_date,
                                  base_config.variant_cases(v))
                   for v in base_config.variants}
        forecast_total, forecast_shares = read_cases_csv(
            ctx.input_path(_require(config, "forecast_csv")))
        forecast_cases = {v: DailySeries(forecast_total.start_date,
                                         forecast_total.values * forecast_shares[v].values)
                          for v in forecast_shares}
        seeds = _parse_seeds(ctx.args.seeds)
        report = pipeline_ss3(history, forecast_cases, base_config,
                              _require(config, "infection_target"),
                              _require(config, "severe_target"), seeds)
    elif story == "ss4":
        p_inf = read_series_csv(ctx.input_path(_require(config, "protection_infection_csv")))
        p_sev = read_series_csv(ctx.input_path(_require(config, "protection_severe_csv")))
        cases = read_series_csv(ctx.input_path(_require(config, "cases_csv")))
        params = _hm_params_from(ctx, config)
        report = pipeline_ss4(p_inf, p_sev, cases, params,
                              dt.date.fromisoformat(_require(config, "anchor_day")))
    else:
        raise InputError(f"unknown pipeline {story!r}")
    _write_pipeline_report(ctx, report)
    ctx.finish(f"pipeline {story}",
               seeds=report.metadata.get("seeds"))


def _cmd_cld_check(ctx: RunContext) -> None:
    config = ctx.config
    if config:
        system = load_cld(ctx.input_path(_require(config, "system")))
        models = {name: load_cld(ctx.input_path(path))
                  for name, path in _require(config, "models").items()}
    else:
        fixture_dir = resources.files("epifamily") / "fixtures"
        system = load_cld(fixture_dir / "system.cld")
        models = {name: load_cld(fixture_dir / f"{name}.cld")
                  for name in ("abem", "iwm", "hm", "asm")}
    report = coverage_report(system, models)
    ctx.write_json("coverage.json", report_to_json(report))
    ctx.write_text("system.dot", cld_to_dot(system, "system"))
    for name, graph in models.items():
        ctx.write_text(f"{name}.dot", cld_to_dot(graph, name))
    ctx.finish("cld check")


_HANDLERS = {
    ("iwm", "run"): _cmd_iwm_run,
    ("hm", "calibrate"): _cmd_hm_calibrate,
    ("hm", "forecast"): _cmd_hm_forecast,
    ("asm", "run"): _cmd_asm_run,
    ("asm", "calibrate"): _cmd_asm_calibrate,
    ("scenarios", "generate"): _cmd_scenarios,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="epifamily",
                                     description="epidemic model family toolkit")
    sub = parser.add_subparsers(dest="group", required=True)

    def add_common(p, config_required=True):
        p.add_argument("--config", required=config_required,
                       help="JSON config file")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seeds", default="0", help="seed list 'a..b' or 'a,b,c'")
        p.add_argument("--jobs", type=int, default=1, help="worker processes")
        p.add_argument("--format", choices=("csv", "json"), default="csv")

    for group, actions in (("iwm", ("run",)), ("hm", ("calibrate", "forecast")),
                           ("asm", ("run", "calibrate")), ("scenarios", ("generate",))):
        group_parser = sub.add_parser(group)
        action_sub = group_parser.add_subparsers(dest="action", required=True)
        for action in actions:
            add_common(action_sub.add_parser(action))

    pipeline_parser = sub.add_parser("pipeline")
    pipeline_sub = pipeline_parser.add_subparsers(dest="story", required=True)
    for story in ("ss1", "ss2", "ss3", "ss4"):
        add_common(pipeline_sub.add_parser(story))

    cld_parser = sub.add_parser("cld")
    cld_sub = cld_parser.add_subparsers(dest="action", required=True)
    add_common(cld_sub.add_parser("check"), config_required=False)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = os.environ.get("EPIFAMILY_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        ctx = RunContext(args)
        if args.group == "pipeline":
            _cmd_pipeline(ctx)
        elif args.group == "cld":
            _cmd_cld_check(ctx)
        else:
            _HANDLERS[(args.group, args.action)](ctx)
    except InputError as exc:
        json.dump({"error": "input", "message": str(exc)}, sys.stderr)
        sys.stderr.write("\n")
        return EXIT_INPUT
    except NumericalError as exc:
        json.dump({"error": "numerical", "message": str(exc)}, sys.stderr)
        sys.stderr.write("\n")
        return EXIT_NUMERICAL
    except FileNotFoundError as exc:
        json.dump({"error": "input", "message": str(exc)}, sys.stderr)
        sys.stderr.write("\n")
        return EXIT_INPUT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
