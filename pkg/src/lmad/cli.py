"""Command-line front end: gen, train, detect, consensus, bench."""

from __future__ import annotations

import json
import secrets
import sys
from pathlib import Path

import click
from scipy.linalg import LinAlgError

from . import anomaly, bench, experiments
from .network import load_model, save_model
from .optim import TrainingError
from .timeseries import GenConfig, gen_engine_like, load_series_csv, save_series_csv, sinc_series

EXIT_INPUT = 2
EXIT_NUMERIC = 3


class InputError(click.ClickException):
    exit_code = EXIT_INPUT


class NumericalError(click.ClickException):
    exit_code = EXIT_NUMERIC


def _guard(fn, *args, context: str = "", **kw):
    try:
        return fn(*args, **kw)
    except (TrainingError, LinAlgError, FloatingPointError) as exc:
        raise NumericalError(f"{context}{exc}") from exc
    except (ValueError, KeyError, OSError) as exc:
        raise InputError(f"{context}{exc}") from exc


def _parse_ints(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(t) for t in str(text).replace(" ", "").split(",") if t)
    except ValueError:
        raise click.BadParameter(f"expected comma-separated integers, got {text!r}") from None


def _write_json(path: Path, doc: dict):
    path.write_text(json.dumps(doc, indent=1))
    click.echo(f"wrote {path}")


def _seed(ctx) -> int:
    return ctx.obj["seed"]


def _out(ctx, name: str) -> Path:
    return ctx.obj["out_dir"] / name


@click.group()
@click.option("--seed", type=int, default=None, help="RNG seed; drawn and printed when omitted.")
@click.option("--out-dir", type=click.Path(file_okay=False, path_type=Path), default=Path("."),
              show_default=True, help="Directory for every emitted file.")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False, path_type=Path),
              default=None, help="JSON file with defaults: top-level seed/out_dir, "
                                 "plus one object per subcommand.")
@click.pass_context
def main(ctx, seed, out_dir, config_path):
    """Levenberg-Marquardt function approximation and residual anomaly detection."""
    cfg = {}
    if config_path is not None:
        try:
            cfg = json.loads(config_path.read_text())
        except json.JSONDecodeError as exc:
            raise InputError(f"{config_path}: {exc}") from exc
        ctx.default_map = {k: v for k, v in cfg.items() if isinstance(v, dict)}
    src = ctx.get_parameter_source
    if seed is None and "seed" in cfg:
        seed = int(cfg["seed"])
    if seed is None:
        seed = secrets.randbelow(2**31)
        click.echo(f"seed: {seed} (drawn)", err=True)
    if src("out_dir").name == "DEFAULT" and "out_dir" in cfg:
        out_dir = Path(cfg["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    ctx.obj = {"seed": seed, "out_dir": out_dir}


@main.command()
@click.option("--preset", type=click.Choice(["engine", "sinc"]), default="engine", show_default=True)
@click.option("--n-events", type=int, default=32, show_default=True)
@click.option("--samples-per-event", type=int, default=200, show_default=True)
@click.option("--anomaly-events", default=None,
              help="Comma-separated event indices, or 'none' (default: last two).")
@click.option("--anomaly-gain", type=float, default=1.5, show_default=True)
@click.option("--failure-spike", type=float, default=3.56, show_default=True)
@click.option("--jump-rate", type=int, default=4, show_default=True)
@click.option("--n-points", type=int, default=100, show_default=True, help="Sinc preset only.")
@click.option("--out", "out_name", default=None, help="Output CSV name inside --out-dir.")
@click.pass_context
def gen(ctx, preset, n_events, samples_per_event, anomaly_events, anomaly_gain, failure_spike,
        jump_rate, n_points, out_name):
    """Write a synthetic series as CSV."""
    seed = _seed(ctx)
    if preset == "sinc":
        series = _guard(sinc_series, n_points)
    else:
        if anomaly_events is None:
            events = None
        elif anomaly_events.strip().lower() in ("", "none"):
            events = ()
        else:
            events = _parse_ints(anomaly_events)
        cfg = _guard(GenConfig, n_events=n_events, samples_per_event=samples_per_event, seed=seed,
                     anomaly_events=events, anomaly_gain=anomaly_gain,
                     failure_spike=failure_spike, jump_rate=jump_rate)
        series = gen_engine_like(cfg)
    path = _out(ctx, out_name or f"{preset}.csv")
    _guard(save_series_csv, series, path)
    click.echo(f"seed: {seed}")
    click.echo(f"wrote {path} ({len(series)} rows, {series.n_events} events)")


def recipe_options(fn):
    opts = [
        click.option("--preset", type=click.Choice(sorted(experiments.PRESETS)), default=None,
                     help="Start from a named recipe; explicit flags override it."),
        click.option("--mode", type=click.Choice(["regressor", "autoencoder"]), default=None),
        click.option("--hidden", default=None, help="Hidden layer sizes, e.g. 40 or 100,50,25."),
        click.option("--optimizer", type=click.Choice(["lm", "adam", "sgdm", "rprop"]), default=None),
        click.option("--epochs", type=int, default=None),
        click.option("--patience", type=int, default=None, help="0 disables early stopping."),
        click.option("--val-fraction", type=float, default=None),
        click.option("--split-once", is_flag=True, default=False,
                     help="Draw the train/validation division once instead of every epoch."),
        click.option("--loss", type=click.Choice(["mse", "mae"]), default=None),
        click.option("--lr", "learning_rate", type=float, default=None),
        click.option("--batch-size", type=int, default=None),
        click.option("--train-events", "n_train_events", type=int, default=None),
        click.option("--window", "window_width", type=int, default=None),
        click.option("--stride", "window_stride", type=int, default=None),
        click.option("--init", type=click.Choice(["glorot", "nguyen-widrow"]), default=None),
    ]
    for opt in reversed(opts):
        fn = opt(fn)
    return fn


def _recipe(preset=None, mode=None, hidden=None, split_once=False, **kw) -> experiments.Recipe:
    if preset:
        base = experiments.PRESETS[preset]
    elif mode == "autoencoder":
        base = experiments.PRESETS["ae-lm"]
    else:
        base = experiments.Recipe()
    fields = base.to_dict()
    fields.update({k: v for k, v in kw.items() if v is not None})
    if hidden is not None:
        fields["hidden"] = _parse_ints(hidden)
    if mode is not None and mode != base.mode:
        fields["mode"] = mode
        if kw.get("loss") is None:
            fields["loss"] = None  # re-derive the mode's default loss
    if split_once:
        fields["resplit_each_epoch"] = False
    return experiments.Recipe(**fields)


@main.command()
@click.argument("data", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@recipe_options
@click.option("--model-out", default="model.json", show_default=True)
@click.option("--report-out", default="train_report.json", show_default=True)
@click.pass_context
def train(ctx, data, model_out, report_out, **kw):
    """Normalize on the training events, train, and save model + training report."""
    seed = _seed(ctx)
    recipe = _guard(_recipe, **kw, context="recipe: ")
    series = _guard(load_series_csv, data)
    fit = _guard(experiments.fit_series, series, recipe, seed, context=f"{data}: ")
    save_model(fit.net, _out(ctx, model_out))
    fit.report.save(_out(ctx, report_out))
    r = fit.report
    click.echo(f"seed: {seed}")
    click.echo(f"{recipe.label}: P={fit.net.param_count} epochs={r.epochs_run} "
               f"stop={r.stop_reason} best_val_{r.loss}={r.best_val_loss:.4e} "
               f"time={r.wall_time:.2f}s")
    click.echo(f"wrote {_out(ctx, model_out)} and {_out(ctx, report_out)}")


@main.command()
@click.argument("model", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.argument("data", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--threshold", type=float, default=anomaly.DEFAULT_RATIO, show_default=True,
              help="Flag test events whose max |residual| reaches this multiple of the training max.")
@click.option("--report-out", default="anomaly_report.json", show_default=True)
@click.option("--residuals-out", default="residuals.csv", show_default=True)
@click.pass_context
def detect(ctx, model, data, threshold, report_out, residuals_out):
    """Score a series with a trained model and flag anomalous events."""
    net = _guard(load_model, model, context=f"{model}: ")
    series = _guard(load_series_csv, data)
    res, report = _guard(experiments.detect_with_model, net, series, threshold)
    _write_json(_out(ctx, report_out), report.to_dict())
    anomaly.write_residual_csv(res, _out(ctx, residuals_out))
    click.echo(f"wrote {_out(ctx, residuals_out)}")
    click.echo(f"train_max={report.train_max:.4e} flagged={sorted(report.flagged_events)}")


@main.command("consensus")
@click.argument("data", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@recipe_options
@click.option("--runs", type=int, default=5, show_default=True)
@click.option("--quorum", type=float, default=anomaly.DEFAULT_QUORUM, show_default=True)
@click.option("--threshold", type=float, default=anomaly.DEFAULT_RATIO, show_default=True)
@click.option("--report-out", default="consensus_report.json", show_default=True)
@click.pass_context
def consensus_cmd(ctx, data, runs, quorum, threshold, report_out, **kw):
    """Train with several seeds and keep the anomalies most runs agree on."""
    if runs < 2:
        raise InputError("--runs must be at least 2")
    seed = _seed(ctx)
    recipe = _guard(_recipe, **kw, context="recipe: ")
    series = _guard(load_series_csv, data)
    seeds = [seed + k for k in range(runs)]
    rep = _guard(experiments.run_consensus, series, recipe, seeds, threshold, quorum)
    doc = rep.to_dict()
    doc["seeds"] = seeds
    _write_json(_out(ctx, report_out), doc)
    click.echo(f"seeds: {seeds}")
    click.echo(f"consensus={sorted(rep.consensus_events)} artefacts={sorted(rep.artefact_events)}")


@main.command("bench")
@click.option("--scenario", "scenarios", default=",".join(bench.SCENARIOS), show_default=True,
              help="Comma-separated subset of: " + ", ".join(bench.SCENARIOS))
@click.option("--seeds", "n_seeds", type=int, default=3, show_default=True,
              help="Number of consecutive seeds starting at --seed.")
@click.option("--out", "out_name", default="bench.csv", show_default=True)
@click.pass_context
def bench_cmd(ctx, scenarios, n_seeds, out_name):
    """Run the optimizer comparison suite and write one CSV row per run."""
    names = [s.strip() for s in scenarios.split(",") if s.strip()]
    unknown = [n for n in names if n not in bench.SCENARIOS]
    if unknown:
        raise InputError(f"unknown scenario(s) {unknown}; choose from {list(bench.SCENARIOS)}")
    seed = _seed(ctx)
    seeds = [seed + k for k in range(n_seeds)]
    results = []
    for name in names:
        click.echo(f"running {name} on seeds {seeds} ...", err=True)
        results += _guard(bench.run_scenario, name, seeds)
    path = _out(ctx, out_name)
    bench.write_bench_csv(results, path)
    for line in bench.summarize(results):
        click.echo(line)
    click.echo(f"wrote {path}")


if __name__ == "__main__":
    sys.exit(main())
