"""Training recipes shared by the CLI, the benchmark and the acceptance tests.

A recipe bundles architecture and optimizer settings. ``fit_series`` takes a
raw EventSeries, normalizes it on the training events, trains, and returns
the model together with the data it needs for detection.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import anomaly
from .network import Batch, Network, NetworkSpec, build_network, forward
from .optim import GradConfig, LMConfig, TrainReport, train_grad, train_lm
from .timeseries import EventSeries, Normalizer, normalize_series, train_boundary, window


@dataclass
class Recipe:
    optimizer: str = "lm"
    hidden: tuple[int, ...] = (40,)
    mode: str = "regressor"
    epochs: int = 300
    patience: int = 3
    val_fraction: float = 0.4
    resplit_each_epoch: bool = True
    loss: str | None = None  # None: mse for regressors, mae for autoencoders
    learning_rate: float | None = None
    batch_size: int | None = None
    n_train_events: int = 15
    window_width: int = 32
    window_stride: int = 8
    init: str = "nguyen-widrow"

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.loss is None:
            self.loss = "mae" if self.mode == "autoencoder" else "mse"

    @property
    def label(self) -> str:
        arch = "x".join(str(h) for h in self.hidden)
        prefix = "ae-" if self.mode == "autoencoder" else ""
        return f"{prefix}{self.optimizer}-dense({arch})-{self.epochs}ep"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d


PRESETS = {
    # dense(40)/tanh trained by LM for 300 epochs, patience 3
    "lm": Recipe("lm", (40,), epochs=300, patience=3),
    "rprop": Recipe("rprop", (100, 50, 25), epochs=1000, patience=10),
    "adam": Recipe("adam", (40,), epochs=300, patience=3),
    "ae-lm": Recipe("lm", (10,), mode="autoencoder", epochs=50, patience=0),
    "ae-adam": Recipe("adam", (10,), mode="autoencoder", epochs=50, patience=0),
    "ae-adam512": Recipe("adam", (512,), mode="autoencoder", epochs=500, patience=0),
}


def optimizer_config(recipe: Recipe, seed):
    common = dict(
        max_epochs=recipe.epochs,
        val_fraction=recipe.val_fraction,
        patience=recipe.patience,
        resplit_each_epoch=recipe.resplit_each_epoch,
        loss=recipe.loss,
        seed=seed,
    )
    if recipe.optimizer == "lm":
        return LMConfig(**common)
    return GradConfig(optimizer=recipe.optimizer, learning_rate=recipe.learning_rate,
                      batch_size=recipe.batch_size, **common)


def train(net: Network, batch: Batch, recipe: Recipe, seed) -> TrainReport:
    cfg = optimizer_config(recipe, seed)
    if isinstance(cfg, LMConfig):
        return train_lm(net, batch, cfg)
    return train_grad(net, batch, cfg)


def training_batch(normed: EventSeries, boundary: int, recipe: Recipe) -> Batch:
    if recipe.mode == "autoencoder":
        w = window(normed.output[:boundary], recipe.window_width, recipe.window_stride)
        return Batch(w, w)
    return Batch(normed.input[:boundary, None], normed.output[:boundary, None])


def build_for(recipe: Recipe, seed) -> Network:
    if recipe.mode == "autoencoder":
        spec = NetworkSpec(recipe.window_width, recipe.hidden, recipe.window_width,
                           mode="autoencoder")
    else:
        spec = NetworkSpec(1, recipe.hidden, 1)
    return build_network(spec, seed, recipe.init)


@dataclass
class FitResult:
    net: Network
    report: TrainReport
    normed: EventSeries
    boundary: int
    x_norm: Normalizer
    y_norm: Normalizer
    recipe: Recipe
    seed: int | None = None
    extras: dict = field(default_factory=dict)


def fit_series(series: EventSeries, recipe: Recipe, seed) -> FitResult:
    """Normalize on the training events, train on them, and keep everything detection needs."""
    normed, nx, ny = normalize_series(series, recipe.n_train_events)
    boundary = train_boundary(series, recipe.n_train_events)
    net = build_for(recipe, seed)
    report = train(net, training_batch(normed, boundary, recipe), recipe, seed)
    net.meta = {
        "recipe": recipe.to_dict(),
        "seed": seed,
        "x_norm": nx.to_dict(),
        "y_norm": ny.to_dict(),
    }
    return FitResult(net, report, normed, boundary, nx, ny, recipe, seed)


def residuals_for(net: Network, normed: EventSeries, boundary: int,
                  recipe: Recipe) -> anomaly.ResidualSeries:
    if recipe.mode == "autoencoder":
        return anomaly.autoencoder_residual_series(net, normed, boundary, recipe.window_stride)
    return anomaly.residual_series(net, normed, boundary)


def detect_fit(fit: FitResult, ratio_threshold: float = anomaly.DEFAULT_RATIO):
    res = residuals_for(fit.net, fit.normed, fit.boundary, fit.recipe)
    fp = anomaly.fingerprint(fit.seed, fit.recipe.to_dict())
    report = anomaly.detect(res, ratio_threshold, fp, float(fit.y_norm.half_range[0]))
    return res, report


def detect_with_model(net: Network, series: EventSeries,
                      ratio_threshold: float = anomaly.DEFAULT_RATIO):
    """Score a raw series with a saved model, reusing the normalizers stored in its metadata."""
    meta = net.meta
    if "recipe" not in meta:
        raise ValueError("model carries no training metadata; cannot normalize data")
    recipe = Recipe(**meta["recipe"])
    nx = Normalizer.from_dict(meta["x_norm"])
    ny = Normalizer.from_dict(meta["y_norm"])
    if recipe.n_train_events >= series.n_events:
        raise ValueError(
            f"series has {series.n_events} events; model was trained on the first "
            f"{recipe.n_train_events}"
        )
    if recipe.mode == "autoencoder" and len(series) < net.spec.input_dim:
        raise ValueError("series shorter than the autoencoder window")
    normed = EventSeries(nx.apply(series.input), ny.apply(series.output),
                         series.event_ends, series.name)
    boundary = train_boundary(series, recipe.n_train_events)
    res = residuals_for(net, normed, boundary, recipe)
    fp = anomaly.fingerprint(meta.get("seed"), meta["recipe"])
    return res, anomaly.detect(res, ratio_threshold, fp, float(ny.half_range[0]))


def run_consensus(series: EventSeries, recipe: Recipe, seeds, ratio_threshold=anomaly.DEFAULT_RATIO,
                  quorum=anomaly.DEFAULT_QUORUM):
    reports = []
    for s in seeds:
        fit = fit_series(series, recipe, s)
        reports.append(detect_fit(fit, ratio_threshold)[1])
    return anomaly.consensus(reports, quorum)


def with_overrides(recipe: Recipe, **kw) -> Recipe:
    return replace(recipe, **{k: v for k, v in kw.items() if v is not None})


def full_mse(net: Network, batch: Batch) -> float:
    r = batch.targets - forward(net, batch.inputs)
    return float(np.mean(r * r))
