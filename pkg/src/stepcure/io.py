"""CSV/JSON input and output: datasets, reports, curves, study tables.

The dataset CSV needs a header with ``time`` (positive) and ``status``
(1 = event, 0 = censored) columns plus any covariate columns.  Reports are
JSON with frozen field names; curve exports are two-column CSV.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict

import numpy as np

from .data import Dataset
from .errors import DataError
from .families import FamilyKind, FamilyParams
from .fitting import FitResult, ProfileResult
from .lrt import TestResult
from .nonparam import KsResult, StepSurvival
from .simulate import SimConfig, StudySummary


def _parse_float(raw: str, row: int, col: str) -> float:
    try:
        return float(raw)
    except (TypeError, ValueError):
        raise DataError(f"row {row}: column '{col}' is not a number: {raw!r}") from None


def load_dataset(path, covariates: list[str] | None = None) -> Dataset:
    """Read a dataset CSV, validating rows and naming offenders.

    ``covariates`` selects covariate columns by name; None loads none.
    Row numbers in error messages count physical lines (header is row 1).
    """
    covariates = list(covariates or [])
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for required in ("time", "status"):
            if required not in header:
                raise DataError(f"missing required column '{required}'")
        for col in covariates:
            if col not in header:
                raise DataError(f"missing covariate column '{col}'")
        times, events, covs = [], [], []
        for lineno, row in enumerate(reader, start=2):
            t = _parse_float(row["time"], lineno, "time")
            if not t > 0.0:
                raise DataError(f"row {lineno}: time must be positive")
            status = row["status"].strip() if row["status"] is not None else ""
            if status not in ("0", "1"):
                raise DataError(f"row {lineno}: status must be 0 or 1, got {status!r}")
            times.append(t)
            events.append(status == "1")
            covs.append([_parse_float(row[c], lineno, c) for c in covariates])
    if not times:
        raise DataError("dataset has no rows")
    return Dataset(np.asarray(times), np.asarray(events),
                   np.asarray(covs, dtype=float).reshape(len(times), len(covariates)),
                   tuple(covariates))


def write_dataset_csv(dataset: Dataset, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time", "status", *dataset.covariate_names])
        for i in range(dataset.n):
            writer.writerow([f"{dataset.times[i]:.10g}", int(dataset.events[i]),
                             *(f"{v:.10g}" for v in dataset.covariates[i])])


def write_step_csv(step: StepSurvival, path) -> None:
    """KM curve as (time, survival) rows, anchored at (0, 1)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time", "survival"])
        writer.writerow([0.0, 1.0])
        for t, s in zip(step.times, step.survival):
            writer.writerow([f"{t:.10g}", f"{s:.10g}"])


def write_curves_csv(times, curves: dict[str, np.ndarray], path) -> None:
    """Population-survival curves on a shared time grid, one column per label."""
    labels = list(curves)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time", *labels])
        for i, t in enumerate(times):
            writer.writerow([f"{t:.10g}", *(f"{curves[k][i]:.10g}" for k in labels)])


def write_profile_csv(profile: ProfileResult, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["tau2", "mll", "converged", "error"])
        for pt in profile.points:
            if pt.fit is None:
                writer.writerow([f"{pt.tau2:.10g}", "", "", pt.error])
            else:
                writer.writerow([f"{pt.tau2:.10g}", f"{pt.fit.mll:.10g}",
                                 int(pt.fit.converged), ""])


def write_study_csv(summaries: list[StudySummary], path) -> None:
    """Study table: one row per sample size, estimate and rmse column blocks."""
    names = summaries[0].param_names
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["n", "reps_converged", "reps_failed",
                         *[f"mean_{p}" for p in names],
                         *[f"rmse_{p}" for p in names]])
        for s in summaries:
            writer.writerow([s.config.n, s.n_converged, s.n_failed,
                             *(f"{v:.6g}" for v in s.mean),
                             *(f"{v:.6g}" for v in s.rmse)])


# ---------------------------------------------------------------------------
# Fit report JSON
# ---------------------------------------------------------------------------

def _clean(value):
    if isinstance(value, (np.floating, np.integer)):
        value = value.item()
    if isinstance(value, float) and not np.isfinite(value):
        return None
    return value


def fit_report(fit: FitResult, run_config: dict, ks: KsResult | None = None,
               tests: dict | None = None, curve_files: dict | None = None) -> dict:
    """Self-contained JSON-ready report for one fit."""
    se = None
    if fit.se is not None:
        se = {name: _clean(float(v)) for name, v in zip(fit.param_names, fit.se)}
    report = {
        "config": run_config,
        "family": fit.kind.value,
        "structure": fit.structure.value,
        "time_scale": fit.time_scale,
        "schedule": {
            "tau1": fit.schedule.tau1,
            "tau2": fit.schedule.tau2,
            "tau1_raw": fit.schedule.tau1 * fit.time_scale,
            "tau2_raw": fit.schedule.tau2 * fit.time_scale,
        },
        "estimates": {name: float(v) for name, v in zip(fit.param_names, fit.estimates)},
        "standard_errors": se,
        "se_message": fit.se_message,
        "p_hat": fit.p_hat,
        "mll": fit.mll,
        "iterations": fit.iterations,
        "converged": fit.converged,
        "n_events": fit.n_events,
        "n_censored": fit.n_censored,
        "trace": [float(v) for v in fit.trace],
        "ks": None if ks is None else {
            "distance": ks.distance, "p_value": ks.p_value,
            "n_effective": ks.n_effective, "note": ks.note,
        },
        "tests": tests or {},
        "curve_files": curve_files or {},
    }
    return report


def test_report(result: TestResult) -> dict:
    return {
        "problem": int(result.problem),
        "statistic": result.statistic,
        "reference": result.reference.label(),
        "p_value": result.p_value,
        "l0": result.l0,
        "l1": result.l1,
        "clipped": result.clipped,
    }


def write_json(payload: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


# ---------------------------------------------------------------------------
# Simulation config files (plain key = value lines)
# ---------------------------------------------------------------------------

_REQUIRED_SIM_KEYS = ("family", "alpha1", "alpha2", "lambda1", "lambda2",
                      "beta", "tau1", "delta", "n", "reps", "seed")


def _split_list(raw: str) -> list[str]:
    return [part.strip() for part in raw.split(",") if part.strip()]


def parse_config_text(text: str) -> dict[str, str]:
    """Parse ``key = value`` lines; '#' starts a comment."""
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise DataError(f"config line {lineno}: expected 'key = value'")
        key, value = body.split("=", 1)
        out[key.strip().lower()] = value.strip()
    return out


def load_sim_config(path) -> tuple[list[SimConfig], dict]:
    """Read a simulation config file.

    Returns one SimConfig per requested sample size plus the extra settings
    (mode, output prefix) the CLI consumes.
    """
    with open(path) as fh:
        raw = parse_config_text(fh.read())
    missing = [k for k in _REQUIRED_SIM_KEYS if k not in raw]
    if missing:
        raise DataError(f"config missing keys: {', '.join(missing)}")
    try:
        kind = FamilyKind(raw["family"].lower())
    except ValueError:
        raise DataError(f"unknown family {raw['family']!r}") from None
    theta = FamilyParams.from_vector(float(raw["alpha1"]), float(raw["alpha2"]),
                                     float(raw["lambda1"]), float(raw["lambda2"]))
    beta = tuple(float(v) for v in _split_list(raw["beta"]))
    names = tuple(_split_list(raw.get("covariates", "")))
    if not names and len(beta) > 1:
        names = tuple(f"z{i + 1}" for i in range(len(beta) - 1))
    ranges = []
    for name in names:
        key = f"range_{name}".lower()
        if key not in raw:
            raise DataError(f"config missing '{key}' for covariate {name!r}")
        parts = _split_list(raw[key])
        if len(parts) != 2:
            raise DataError(f"'{key}' must be 'lo, hi'")
        ranges.append((float(parts[0]), float(parts[1])))
    target = raw.get("censor_fraction")
    end = raw.get("study_end")
    if (target is None) == (end is None):
        raise DataError("set exactly one of censor_fraction and study_end")
    n_values = [int(v) for v in _split_list(raw["n"])]
    configs = [
        SimConfig(
            kind=kind, theta=theta, beta=beta,
            tau1=float(raw["tau1"]), delta=float(raw["delta"]),
            n=n, reps=int(raw["reps"]),
            covariate_ranges=tuple(ranges), covariate_names=names,
            target_censor_fraction=None if target is None else float(target),
            study_end=None if end is None else float(end),
            seed=int(raw["seed"]),
        )
        for n in n_values
    ]
    extras = {
        "mode": raw.get("mode", "study"),
        "output_prefix": raw.get("output_prefix", "study"),
        "datasets": int(raw.get("datasets", "1")),
    }
    if extras["mode"] not in ("study", "datasets", "both"):
        raise DataError(f"mode must be study, datasets, or both, got {extras['mode']!r}")
    return configs, extras


def load_profiles_csv(path, covariate_names: tuple[str, ...]):
    """Covariate profiles for curve prediction: label column plus covariates."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for col in covariate_names:
            if col not in header:
                raise DataError(f"profiles file missing covariate column '{col}'")
        label_col = "label" if "label" in header else None
        profiles = []
        for lineno, row in enumerate(reader, start=2):
            label = row[label_col] if label_col else f"profile{lineno - 1}"
            z = [_parse_float(row[c], lineno, c) for c in covariate_names]
            profiles.append((label, np.asarray(z, dtype=float)))
    if not profiles:
        raise DataError("profiles file has no rows")
    return profiles
