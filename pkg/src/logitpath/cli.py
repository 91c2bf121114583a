"""Command-line front end.

Subcommands: fit, decompose, simulate, marginalize.  Fitted systems are
passed between stages as a single JSON artifact, so each stage can be
cached, inspected, or rerun on its own.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from .effects import EffectError, EffectRequest
from .fitting import (DataError, Dataset, FitError, FittedSystem, fit_system)
from .inference import (InferenceError, effect_table, inner_transform,
                        outer_transform, transform_fitted)
from .model import ModelSpecError, SystemSpec, validate_system
from .multi import PathSpec
from .simulation import SimulationError, results_to_csv, run_study

_ERRORS = (DataError, FitError, ModelSpecError, EffectError,
           InferenceError, SimulationError, OSError, json.JSONDecodeError)


def _fail(message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(1)


def _load_json(path: str):
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as e:
        _fail(str(e))
    except json.JSONDecodeError as e:
        _fail(f"{path}:{e.lineno}: {e.msg}")


def _load_fitted(path: str) -> FittedSystem:
    doc = _load_json(path)
    try:
        return FittedSystem.from_json_dict(doc)
    except (KeyError, TypeError, ModelSpecError) as e:
        _fail(f"{path}: not a fitted-system artifact ({e})")


def _write_or_echo(text: str, out):
    if out:
        Path(out).write_text(text)
        click.echo(f"wrote {out}")
    else:
        click.echo(text)


@click.group()
def main():
    """Fit recursive logistic systems and decompose treatment effects."""


@main.command("fit")
@click.option("--data", "data_path", required=True,
              help="CSV of records, or CSV/JSON rows with a count column.")
@click.option("--model", "model_path", required=True,
              help="JSON system specification.")
@click.option("--out", default=None, help="Where to write the fitted artifact.")
def cmd_fit(data_path, model_path, out):
    """Fit every equation of a system by maximum likelihood."""
    doc = _load_json(model_path)
    try:
        spec = SystemSpec.from_json_dict(doc)
    except ModelSpecError as e:
        _fail(f"{model_path}: {e}")
    report = validate_system(spec)
    if not report:
        _fail(f"{model_path}: invalid system: " + "; ".join(report.problems))
    try:
        data = Dataset.load(data_path)
        fitted = fit_system(data, spec)
    except _ERRORS as e:
        _fail(str(e))
    click.echo(fitted.summary_text())
    if out:
        Path(out).write_text(json.dumps(fitted.to_json_dict(), indent=2))
        click.echo(f"wrote {out}")


def _coerce_treatment(spec: SystemSpec, raw: str):
    from .fitting import _coerce_one
    return _coerce_one(spec.treatment, raw)


def _coerce_setting(spec: SystemSpec, pairs):
    from .fitting import _coerce_one
    setting = {}
    for text in pairs:
        if "=" not in text:
            _fail(f"--set wants NAME=VALUE, got {text!r}")
        name, _, raw = text.partition("=")
        var = spec.variable(name.strip())
        setting[var.name] = _coerce_one(var, raw.strip())
    return setting


@main.command("decompose")
@click.option("--fitted", "fitted_path", required=True,
              help="Fitted-system artifact from the fit subcommand.")
@click.option("--contrast", "contrasts", multiple=True,
              help="Treatment contrast 'a,b' (effect of a versus b).")
@click.option("--at", "at_points", multiple=True, type=float,
              help="Derivative evaluation point (continuous treatment).")
@click.option("--by", "by_var", default=None,
              help="Stratify over the values of this binary or categorical "
                   "covariate.")
@click.option("--set", "settings", multiple=True,
              help="Fix a covariate, NAME=VALUE; repeatable.")
@click.option("--scale", default="both",
              type=click.Choice(["logodds", "prob", "both"]))
@click.option("--path", "paths", multiple=True,
              help="Mediator path, comma-separated indices; repeatable.")
@click.option("--marginalize-inner", "marg_inner", default=None, type=int,
              help="Sum out mediator 1 (the innermost) before decomposing.")
@click.option("--marginalize-outer", "marg_outer", default=None, type=int,
              help="Sum out mediator 2 of a two-mediator system first.")
@click.option("--format", "fmt", default="text",
              type=click.Choice(["text", "json", "csv"]))
@click.option("--out", default=None)
def cmd_decompose(fitted_path, contrasts, at_points, by_var, settings, scale,
                  paths, marg_inner, marg_outer, fmt, out):
    """Decompose the total effect of the treatment on the outcome."""
    fitted = _load_fitted(fitted_path)
    spec = fitted.spec
    if not contrasts and not at_points:
        _fail("nothing to do: give at least one --contrast or --at")
    transform = None
    if marg_inner is not None and marg_outer is not None:
        _fail("choose one of --marginalize-inner / --marginalize-outer")
    if marg_inner is not None:
        if marg_inner != 1:
            _fail("only the innermost mediator (index 1) can be summed out "
                  "at this layer; repeat via the marginalize subcommand")
        transform = inner_transform
    if marg_outer is not None:
        if marg_outer != 2 or len(spec.mediators) != 2:
            _fail("outer marginalization sums out mediator 2 of a "
                  "two-mediator system")
        transform = outer_transform

    try:
        base_settings = _coerce_setting(spec, settings)
    except _ERRORS as e:
        _fail(str(e))
    strata = [base_settings]
    if by_var:
        try:
            var = spec.variable(by_var)
        except ModelSpecError as e:
            _fail(str(e))
        if var.kind == "binary":
            values = (0.0, 1.0)
        elif var.kind == "categorical":
            values = var.levels
        else:
            _fail(f"--by needs a binary or categorical variable, "
                  f"{by_var!r} is continuous")
        strata = [{**base_settings, var.name: v} for v in values]

    scales = ("logodds", "probability") if scale == "both" else (
        "probability" if scale == "prob" else "logodds",)
    requests = []
    try:
        for sc in scales:
            for setting in strata:
                for text in contrasts:
                    pieces = [p.strip() for p in text.split(",")]
                    if len(pieces) != 2:
                        _fail(f"--contrast wants 'a,b', got {text!r}")
                    x1 = _coerce_treatment(spec, pieces[0])
                    x0 = _coerce_treatment(spec, pieces[1])
                    requests.append(EffectRequest.contrast(
                        x1, x0, covariates=setting, scale=sc))
                for at in at_points:
                    requests.append(EffectRequest.derivative(
                        at, covariates=setting, scale=sc))
        parsed_paths = [PathSpec.parse([p.strip() for p in text.split(",")])
                        for text in paths]
        for ps in parsed_paths:
            for i in ps.indices:
                if i > len(spec.mediators):
                    raise EffectError(
                        f"path index {i}: system has only "
                        f"{len(spec.mediators)} mediator(s)")
        table = effect_table(fitted, requests, paths=parsed_paths,
                             transform=transform)
    except _ERRORS as e:
        _fail(str(e))
    rendered = {"text": table.to_text, "json": table.to_json,
                "csv": table.to_csv}[fmt]()
    _write_or_echo(rendered, out)


@main.command("simulate")
@click.option("--config", "config_path", required=True,
              help="JSON study grid: seed, replications, treatment, "
                   "beta_x, n.")
@click.option("--out", default=None, help="Where to write the results CSV.")
@click.option("--seed", default=None, type=int, help="Override the seed.")
def cmd_simulate(config_path, out, seed):
    """Run the Monte Carlo comparison study."""
    grid = _load_json(config_path)
    if not isinstance(grid, dict):
        _fail(f"{config_path}: expected a JSON object")
    if seed is not None:
        grid = {**grid, "seed": seed}
    try:
        results = run_study(grid)
    except _ERRORS as e:
        _fail(str(e))
    csv_text = results_to_csv(results)
    if out:
        Path(out).write_text(csv_text)
    for r in results:
        click.echo(
            f"{r.kind:<11} beta_x={r.beta_x:<4} n={r.n:<5} true={r.true_value:.3f}  "
            f"rsd avg={r.rsd.average:.3f} rmse={r.rsd.rmse:.3f}  "
            f"khb avg={r.khb.average:.3f} rmse={r.khb.rmse:.3f}  "
            f"excluded={r.excluded}")
    if out:
        click.echo(f"wrote {out}")
    else:
        click.echo(csv_text)


@main.command("marginalize")
@click.option("--fitted", "fitted_path", required=True)
@click.option("--inner", default=None, type=int,
              help="Sum out the innermost mediator (give index 1).")
@click.option("--outer", default=None, type=int,
              help="Sum out mediator 2 of a two-mediator system.")
@click.option("--out", required=True,
              help="Where to write the reduced fitted artifact.")
def cmd_marginalize(fitted_path, inner, outer, out):
    """Rewrite a fitted system with one mediator summed out."""
    fitted = _load_fitted(fitted_path)
    if (inner is None) == (outer is None):
        _fail("choose exactly one of --inner / --outer")
    try:
        if inner is not None:
            if inner != 1:
                _fail("only the innermost mediator (index 1) can be summed "
                      "out; repeat the command to go deeper")
            reduced, cross = transform_fitted(fitted, inner_transform)
        else:
            if outer != 2 or len(fitted.spec.mediators) != 2:
                _fail("outer marginalization sums out mediator 2 of a "
                      "two-mediator system")
            reduced, cross = transform_fitted(fitted, outer_transform)
    except _ERRORS as e:
        _fail(str(e))
    Path(out).write_text(json.dumps(reduced.to_json_dict(), indent=2))
    click.echo(reduced.summary_text())
    if cross > 1e-12:
        click.echo(
            "note: this reduction correlates equations; the artifact keeps "
            "per-equation covariance only, so standard errors computed from "
            "it downstream ignore the cross-equation part. Decompose with "
            "--marginalize-outer on the original fit for exact ones.",
            err=True)
    click.echo(f"wrote {out}")


if __name__ == "__main__":
    main()
