"""Optimizer comparison suite: sinc curve fit, engine-like anomaly detection, autoencoder budget."""

from __future__ import annotations

import csv
import statistics
from dataclasses import asdict, dataclass

import numpy as np

from .experiments import PRESETS, Recipe, detect_fit, fit_series, full_mse
from .network import Batch, NetworkSpec, build_network
from .optim import GradConfig, LMConfig, TrainReport, train_grad, train_lm
from .timeseries import GenConfig, Normalizer, gen_engine_like, gen_sinc

SCENARIOS = ("sinc", "engine", "autoencoder")

BENCH_COLUMNS = [
    "scenario", "optimizer", "architecture", "seed", "param_count", "epochs_run",
    "stop_reason", "train_mse", "val_loss", "loss", "wall_time", "train_max",
    "ratio_event_a", "ratio_event_b", "flagged_events",
]

SINC_HIDDEN = 20
SINC_EPOCHS = 100

ENGINE_RUNS = ("lm", "rprop", "adam")
AUTOENCODER_RUNS = ("ae-lm", "ae-adam", "ae-adam512")


@dataclass
class BenchResult:
    scenario: str
    optimizer: str
    architecture: str
    seed: int
    param_count: int
    epochs_run: int
    stop_reason: str
    train_mse: float
    val_loss: float
    loss: str
    wall_time: float
    train_max: float | None = None
    anomaly_ratios: tuple[float, ...] = ()
    flagged_events: tuple[int, ...] = ()

    def row(self) -> dict:
        ratios = list(self.anomaly_ratios) + [None, None]
        return {
            "scenario": self.scenario,
            "optimizer": self.optimizer,
            "architecture": self.architecture,
            "seed": self.seed,
            "param_count": self.param_count,
            "epochs_run": self.epochs_run,
            "stop_reason": self.stop_reason,
            "train_mse": _fmt(self.train_mse),
            "val_loss": _fmt(self.val_loss),
            "loss": self.loss,
            "wall_time": f"{self.wall_time:.3f}",
            "train_max": _fmt(self.train_max),
            "ratio_event_a": _fmt(ratios[0]),
            "ratio_event_b": _fmt(ratios[1]),
            "flagged_events": " ".join(str(e) for e in self.flagged_events),
        }


def _fmt(v):
    return "" if v is None else repr(float(v))


def sinc_batch(n_points: int = 100) -> Batch:
    """Sinc samples with inputs rescaled to [-1, 1]."""
    b = gen_sinc(n_points)
    return Batch(Normalizer.fit(b.inputs).apply(b.inputs), b.targets)


def sinc_run(optimizer: str, seed: int, hidden: int = SINC_HIDDEN, epochs: int = SINC_EPOCHS,
             init: str = "nguyen-widrow"):
    """Dense(hidden)/tanh fit of sinc; returns (network, report, MSE over all points)."""
    batch = sinc_batch()
    net = build_network(NetworkSpec(1, (hidden,), 1), seed, init)
    if optimizer == "lm":
        report = train_lm(net, batch, LMConfig(max_epochs=epochs, seed=seed))
    else:
        report = train_grad(net, batch, GradConfig(optimizer, max_epochs=epochs, seed=seed))
    return net, report, full_mse(net, batch)


def _result(scenario, label, seed, net, report: TrainReport, train_mse, anomaly=None,
            events=()) -> BenchResult:
    res = BenchResult(
        scenario=scenario,
        optimizer=report.optimizer,
        architecture=label,
        seed=seed,
        param_count=net.param_count,
        epochs_run=report.epochs_run,
        stop_reason=report.stop_reason,
        train_mse=train_mse,
        val_loss=report.best_val_loss,
        loss=report.loss,
        wall_time=report.wall_time,
    )
    if anomaly is not None:
        res.train_max = anomaly.train_max
        res.anomaly_ratios = tuple(anomaly.ratio(e) for e in events)
        res.flagged_events = tuple(sorted(anomaly.flagged_events))
    return res


def run_sinc(seeds) -> list[BenchResult]:
    out = []
    for opt in ("lm", "adam"):
        for s in seeds:
            net, report, mse = sinc_run(opt, s)
            out.append(_result("sinc", f"dense({SINC_HIDDEN})-{SINC_EPOCHS}ep", s, net, report, mse))
    return out


def _run_presets(scenario, names, seeds, gen: GenConfig | None) -> list[BenchResult]:
    out = []
    for name in names:
        recipe: Recipe = PRESETS[name]
        for s in seeds:
            cfg = gen or GenConfig()
            series = gen_engine_like(GenConfig(**{**asdict(cfg), "seed": s}))
            fit = fit_series(series, recipe, s)
            _, rep = detect_fit(fit)
            train = fit.normed.as_batch().subset(np.arange(fit.boundary))
            if recipe.mode == "autoencoder":
                train_mse = float(fit.report.final_train_loss)
            else:
                train_mse = full_mse(fit.net, train)
            out.append(_result(scenario, recipe.label, s, fit.net, fit.report, train_mse,
                               rep, cfg.anomaly_events))
    return out


def run_scenario(name: str, seeds, gen: GenConfig | None = None) -> list[BenchResult]:
    if name == "sinc":
        return run_sinc(seeds)
    if name == "engine":
        return _run_presets("engine", ENGINE_RUNS, seeds, gen)
    if name == "autoencoder":
        return _run_presets("autoencoder", AUTOENCODER_RUNS, seeds, gen)
    raise ValueError(f"unknown scenario {name!r}; choose from {SCENARIOS}")


def write_bench_csv(results: list[BenchResult], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=BENCH_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in results:
            w.writerow(r.row())


def summarize(results: list[BenchResult]) -> list[str]:
    """Median metrics per (scenario, architecture), plus the autoencoder budget crossover."""
    groups: dict[tuple[str, str], list[BenchResult]] = {}
    for r in results:
        groups.setdefault((r.scenario, r.architecture), []).append(r)
    lines = []
    for (scenario, arch), rs in groups.items():
        med = statistics.median
        line = (f"{scenario:12s} {arch:32s} P={rs[0].param_count:<6d} "
                f"train_mse={med(r.train_mse for r in rs):.3e} "
                f"val_{rs[0].loss}={med(r.val_loss for r in rs):.3e}")
        if rs[0].anomaly_ratios:
            line += f" max_anomaly_ratio={med(max(r.anomaly_ratios) for r in rs):.2f}"
        lines.append(line)
    ae = {arch: statistics.median(r.val_loss for r in rs)
          for (sc, arch), rs in groups.items() if sc == "autoencoder"}
    if ae:
        lm = PRESETS["ae-lm"].label
        for name in ("ae-adam", "ae-adam512"):
            label = PRESETS[name].label
            if lm in ae and label in ae:
                verdict = "matches or beats" if ae[label] <= ae[lm] else "does not reach"
                lines.append(f"crossover: {label} {verdict} {lm} "
                             f"(val {ae[label]:.3e} vs {ae[lm]:.3e})")
    return lines
