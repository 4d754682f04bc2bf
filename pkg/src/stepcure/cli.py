"""Command-line surface: fit, profile, test, simulate, km, curves.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
Errors are also emitted as one-line JSON on stderr for machine use.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np

from .data import Dataset
from .errors import DataError, NumericalError, StepCureError
from .families import FamilyKind, FamilyParams
from .fitting import EmConfig, FitResult, em_fit, profile_fit_delta
from .io import (
    fit_report,
    load_dataset,
    load_profiles_csv,
    load_sim_config,
    read_json,
    test_report,
    write_curves_csv,
    write_dataset_csv,
    write_json,
    write_profile_csv,
    write_step_csv,
    write_study_csv,
)
from .lrt import TestProblem, run_test
from .model import CureModel, StepStressModel, StressSchedule
from .nonparam import averaged_population_survival, kaplan_meier, ks_distance
from .simulate import run_study, simulate_dataset

_FAMILY = click.Choice([k.value for k in FamilyKind])


def _split_csv(raw: str) -> list[str]:
    return [part.strip() for part in raw.split(",") if part.strip()]


def _cure_for(fit: FitResult):
    if fit.cure is not None and fit.cure.n_covariates > 0:
        return fit.cure
    return fit.p_hat if fit.p_hat else None


def _ks_for_fit(fit: FitResult, dataset: Dataset):
    model = StepStressModel(fit.kind, fit.theta, fit.schedule)
    fitted = averaged_population_survival(model, _cure_for(fit), dataset.design_matrix())
    km = kaplan_meier(dataset.times, dataset.events)
    scale = fit.time_scale
    return km, ks_distance(km, lambda t: fitted(np.asarray(t) / scale))


def _echo_fit(fit: FitResult, ks=None):
    sched = fit.schedule
    click.echo(f"family: {fit.kind.value}   structure: {fit.structure.value}")
    click.echo(f"tau1 = {sched.tau1 * fit.time_scale:g}, tau2 = {sched.tau2 * fit.time_scale:g}"
               f"   (fitting scale divisor {fit.time_scale:g})")
    state = "converged" if fit.converged else "NOT converged"
    click.echo(f"{state} after {fit.iterations} EM iterations; "
               f"MLL = {fit.mll:.4f} on the fitting scale")
    click.echo(f"{'parameter':<14}{'estimate':>12}{'std.err':>12}")
    for i, name in enumerate(fit.param_names):
        se = "--"
        if fit.se is not None and np.isfinite(fit.se[i]):
            se = f"{fit.se[i]:.4f}"
        click.echo(f"{name:<14}{fit.estimates[i]:>12.4f}{se:>12}")
    if fit.se_message:
        click.echo(f"note: {fit.se_message}")
    if ks is not None:
        click.echo(f"K-S distance {ks.distance:.4f} (p = {ks.p_value:.4f}, "
                   f"m = {ks.n_effective})")


@click.group()
def cli():
    """Step-stress lifetime models with a cured fraction."""


@cli.command(name="fit")
@click.option("--input", "input_path", required=True, type=click.Path(exists=True))
@click.option("--family", type=_FAMILY, required=True)
@click.option("--tau1", type=float, required=True)
@click.option("--tau2", type=float, required=True)
@click.option("--covariates", default="", help="comma-separated covariate columns")
@click.option("--no-normalize", is_flag=True, help="fit on the raw time scale")
@click.option("--output", type=click.Path(), default=None, help="JSON report path")
@click.option("--km-csv", type=click.Path(), default=None, help="export the KM curve")
@click.option("--with-tests", default="", help="also run these problems, e.g. 1,4")
def fit_cmd(input_path, family, tau1, tau2, covariates, no_normalize, output,
            km_csv, with_tests):
    """Fit one model at a fixed schedule and report estimates."""
    kind = FamilyKind(family)
    dataset = load_dataset(input_path, _split_csv(covariates))
    schedule = StressSchedule(tau1, tau2)
    config = EmConfig(normalize=not no_normalize)
    fit = em_fit(dataset, schedule, kind, config)
    km, ks = _ks_for_fit(fit, dataset)
    tests = {}
    for raw in _split_csv(with_tests):
        problem = TestProblem(int(raw))
        result, _, _ = run_test(problem, dataset, schedule, kind, config)
        tests[str(int(problem))] = test_report(result)
    curve_files = {}
    if km_csv:
        write_step_csv(km, km_csv)
        curve_files["km"] = str(km_csv)
    run_config = {
        "input": str(input_path), "family": family, "tau1": tau1, "tau2": tau2,
        "covariates": _split_csv(covariates), "normalize": not no_normalize,
    }
    report = fit_report(fit, run_config, ks=ks, tests=tests, curve_files=curve_files)
    _echo_fit(fit, ks)
    if output:
        write_json(report, output)
        click.echo(f"report written to {output}")


@cli.command(name="profile")
@click.option("--input", "input_path", required=True, type=click.Path(exists=True))
@click.option("--family", type=_FAMILY, required=True)
@click.option("--tau1", type=float, required=True)
@click.option("--tau2-grid", "grid_spec", required=True,
              help="start:stop[:step] for tau2 candidates; default step 5")
@click.option("--covariates", default="")
@click.option("--no-normalize", is_flag=True)
@click.option("--curve-csv", type=click.Path(), default=None, help="profile curve path")
@click.option("--output", type=click.Path(), default=None, help="best-fit report path")
@click.option("--threads", type=int, default=1, show_default=True)
def profile_cmd(input_path, family, tau1, grid_spec, covariates, no_normalize,
                curve_csv, output, threads):
    """Grid search over tau2 by maximized log-likelihood."""
    kind = FamilyKind(family)
    dataset = load_dataset(input_path, _split_csv(covariates))
    parts = grid_spec.split(":")
    if len(parts) not in (2, 3):
        raise click.UsageError("--tau2-grid must be start:stop[:step]")
    start, stop = float(parts[0]), float(parts[1])
    step = float(parts[2]) if len(parts) == 3 else 5.0
    if step <= 0:
        raise click.UsageError("grid step must be positive")
    grid = np.arange(start, stop + 1e-9 * max(1.0, abs(stop)), step)
    config = EmConfig(normalize=not no_normalize)
    result = profile_fit_delta(dataset, kind, tau1, grid, config, workers=threads)
    click.echo(f"best tau2 = {result.best_tau2:g} "
               f"(delta = {result.best_tau2 - tau1:g}), "
               f"MLL = {result.best_fit.mll:.4f}")
    _echo_fit(result.best_fit)
    if curve_csv:
        write_profile_csv(result, curve_csv)
        click.echo(f"profile curve written to {curve_csv}")
    if output:
        run_config = {
            "input": str(input_path), "family": family, "tau1": tau1,
            "tau2": result.best_tau2, "covariates": _split_csv(covariates),
            "normalize": not no_normalize, "grid": grid_spec,
        }
        report = fit_report(result.best_fit, run_config)
        write_json(report, output)
        click.echo(f"report written to {output}")


@cli.command(name="test")
@click.option("--input", "input_path", required=True, type=click.Path(exists=True))
@click.option("--family", type=_FAMILY, required=True)
@click.option("--tau1", type=float, required=True)
@click.option("--tau2", type=float, required=True)
@click.option("--problem", type=click.IntRange(1, 4), required=True)
@click.option("--covariates", default="")
@click.option("--no-normalize", is_flag=True)
@click.option("--output", type=click.Path(), default=None)
def test_cmd(input_path, family, tau1, tau2, problem, covariates, no_normalize, output):
    """Likelihood-ratio test of problems 1-4."""
    kind = FamilyKind(family)
    dataset = load_dataset(input_path, _split_csv(covariates))
    config = EmConfig(normalize=not no_normalize)
    result, fit0, fit1 = run_test(TestProblem(problem), dataset,
                                  StressSchedule(tau1, tau2), kind, config)
    payload = test_report(result)
    click.echo(json.dumps(payload, indent=2, sort_keys=True))
    if output:
        write_json(payload, output)


@cli.command(name="simulate")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--output-dir", type=click.Path(), default=".", show_default=True)
@click.option("--threads", type=int, default=1, show_default=True)
def simulate_cmd(config_path, output_dir, threads):
    """Generate datasets and/or run the replication study from a config file."""
    configs, extras = load_sim_config(config_path)
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    prefix = extras["output_prefix"]
    if extras["mode"] in ("datasets", "both"):
        for cfg in configs:
            for rep in range(min(extras["datasets"], cfg.reps)):
                path = out / f"{prefix}_n{cfg.n}_rep{rep}.csv"
                write_dataset_csv(simulate_dataset(cfg, rep), path)
                click.echo(f"dataset written to {path}")
    if extras["mode"] in ("study", "both"):
        summaries = [run_study(cfg, workers=threads) for cfg in configs]
        path = out / f"{prefix}_summary.csv"
        write_study_csv(summaries, path)
        for s in summaries:
            click.echo(f"n={s.config.n}: {s.n_converged} converged, {s.n_failed} failed")
        click.echo(f"study summary written to {path}")


@cli.command(name="km")
@click.option("--input", "input_path", required=True, type=click.Path(exists=True))
@click.option("--output", type=click.Path(), required=True)
def km_cmd(input_path, output):
    """Kaplan-Meier curve export."""
    dataset = load_dataset(input_path)
    write_step_csv(kaplan_meier(dataset.times, dataset.events), output)
    click.echo(f"KM curve written to {output}")


def _theta_from_estimates(est: dict) -> FamilyParams:
    if "alpha1" in est:
        return FamilyParams.from_vector(est["alpha1"], est["alpha2"],
                                        est["lambda1"], est["lambda2"])
    if "alpha" in est:
        return FamilyParams.from_vector(est["alpha"], est["alpha"],
                                        est["lambda1"], est["lambda2"])
    return FamilyParams.from_vector(1.0, 1.0, est["lambda1"], est["lambda2"])


@cli.command(name="curves")
@click.option("--report", "report_path", required=True, type=click.Path(exists=True))
@click.option("--profiles", "profiles_path", required=True, type=click.Path(exists=True))
@click.option("--output", type=click.Path(), required=True)
@click.option("--tmax", type=float, default=None,
              help="largest raw time on the grid; default 2.5 * tau2")
@click.option("--points", type=int, default=201, show_default=True)
def curves_cmd(report_path, profiles_path, output, tmax, points):
    """Predicted population survival at user covariate profiles."""
    report = read_json(report_path)
    kind = FamilyKind(report["family"])
    est = report["estimates"]
    theta = _theta_from_estimates(est)
    sched = StressSchedule(report["schedule"]["tau1"], report["schedule"]["tau2"])
    scale = float(report["time_scale"])
    model = StepStressModel(kind, theta, sched)
    cov_names = tuple(report["config"].get("covariates", []))
    if cov_names:
        beta = [est["beta0"]] + [est[f"beta_{c}"] for c in cov_names]
        cure = CureModel(tuple(beta), cov_names)
    elif report.get("p_hat"):
        cure = float(report["p_hat"])
    else:
        cure = None
    profiles = load_profiles_csv(profiles_path, cov_names)
    tmax = tmax if tmax is not None else 2.5 * report["schedule"]["tau2_raw"]
    grid = np.linspace(0.0, tmax, points)
    curves = {}
    for label, z in profiles:
        design = np.concatenate([[1.0], z])[None, :]
        fn = averaged_population_survival(model, cure, design)
        curves[label] = fn(grid / scale)
    write_curves_csv(grid, curves, output)
    click.echo(f"curves written to {output}")


def _error_json(kind: str, message: str) -> None:
    sys.stderr.write(json.dumps({"error": {"type": kind, "message": message}}) + "\n")


def main(argv=None) -> int:
    """Entry point with the exit-code contract; returns the code."""
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.UsageError as exc:
        _error_json("usage", exc.format_message())
        return 1
    except click.ClickException as exc:
        _error_json("usage", exc.format_message())
        return 1
    except click.Abort:
        _error_json("usage", "aborted")
        return 1
    except DataError as exc:
        _error_json("data", str(exc))
        return 2
    except (NumericalError, StepCureError) as exc:
        _error_json("numerical", str(exc))
        return 3
    except ValueError as exc:
        _error_json("usage", str(exc))
        return 1


if __name__ == "__main__":
    sys.exit(main())
