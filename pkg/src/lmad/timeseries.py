"""Event-segmented time series: CSV I/O, normalization, splitting, windows and generators."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .network import Batch

CSV_HEADER = ["index", "input", "output", "event_end"]


@dataclass
class EventSeries:
    input: np.ndarray
    output: np.ndarray
    event_ends: np.ndarray
    name: str = ""

    def __post_init__(self):
        self.input = np.asarray(self.input, dtype=np.float64).ravel()
        self.output = np.asarray(self.output, dtype=np.float64).ravel()
        self.event_ends = np.asarray(self.event_ends, dtype=np.int64).ravel()
        n = self.input.size
        if self.output.size != n:
            raise ValueError(f"input has {n} samples but output has {self.output.size}")
        if self.event_ends.size == 0:
            raise ValueError("series has no events")
        if np.any(np.diff(self.event_ends) <= 0) or self.event_ends[0] < 0:
            raise ValueError("event_ends must be strictly increasing and non-negative")
        if self.event_ends[-1] != n - 1:
            raise ValueError(f"last event must end at sample {n - 1}, got {self.event_ends[-1]}")

    def __len__(self):
        return self.input.size

    @property
    def n_events(self) -> int:
        return self.event_ends.size

    @property
    def event_starts(self) -> np.ndarray:
        return np.concatenate([[0], self.event_ends[:-1] + 1])

    def event_slice(self, k: int) -> slice:
        return slice(int(self.event_starts[k]), int(self.event_ends[k]) + 1)

    def event_index(self) -> np.ndarray:
        """Event number of every sample."""
        return np.repeat(np.arange(self.n_events), np.diff(np.concatenate([[-1], self.event_ends])))

    def as_batch(self) -> Batch:
        return Batch(self.input[:, None], self.output[:, None])


def save_series_csv(series: EventSeries, path) -> None:
    ends = np.zeros(len(series), dtype=int)
    ends[series.event_ends] = 1
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for i in range(len(series)):
            w.writerow([i, repr(float(series.input[i])), repr(float(series.output[i])), ends[i]])


def load_series_csv(path, name: str | None = None) -> EventSeries:
    path = Path(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    missing = [c for c in CSV_HEADER if c not in header]
    if missing:
        raise ValueError(f"{path}: missing columns {missing}")
    col = {c: header.index(c) for c in CSV_HEADER}
    body = rows[1:]
    if not body:
        raise ValueError(f"{path}: no data rows")
    xs, ys, marks = [], [], []
    for lineno, row in enumerate(body, start=2):
        try:
            xs.append(float(row[col["input"]]))
            ys.append(float(row[col["output"]]))
            mark = int(row[col["event_end"]])
        except (ValueError, IndexError) as exc:
            raise ValueError(f"{path}:{lineno}: bad row {row!r} ({exc})") from None
        if mark not in (0, 1):
            raise ValueError(f"{path}:{lineno}: event_end must be 0 or 1, got {mark}")
        marks.append(mark)
    marks = np.asarray(marks)
    if not marks.any():
        raise ValueError(f"{path}: no event marks")
    if marks[-1] != 1:
        raise ValueError(f"{path}:{len(body) + 1}: last row must close an event (event_end=1)")
    return EventSeries(xs, ys, np.flatnonzero(marks), name=name if name is not None else path.stem)


@dataclass
class Normalizer:
    """Per-channel affine map of a fitted [min, max] range onto [-1, 1]."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        self.lo = np.atleast_1d(np.asarray(self.lo, dtype=np.float64))
        self.hi = np.atleast_1d(np.asarray(self.hi, dtype=np.float64))
        if np.any(self.hi <= self.lo):
            raise ValueError("normalizer needs max > min on every channel")

    @classmethod
    def fit(cls, data) -> "Normalizer":
        data = np.asarray(data, dtype=np.float64)
        if data.ndim == 1:
            data = data[:, None]
        lo, hi = data.min(axis=0), data.max(axis=0)
        if np.any(hi <= lo):
            raise ValueError("cannot normalize a constant channel")
        return cls(lo, hi)

    def apply(self, x):
        x = np.asarray(x, dtype=np.float64)
        return 2.0 * (x - self.lo) / (self.hi - self.lo) - 1.0

    def invert(self, z):
        z = np.asarray(z, dtype=np.float64)
        return (z + 1.0) * 0.5 * (self.hi - self.lo) + self.lo

    @property
    def half_range(self) -> np.ndarray:
        return 0.5 * (self.hi - self.lo)

    def to_dict(self) -> dict:
        return {"min": self.lo.tolist(), "max": self.hi.tolist()}

    @classmethod
    def from_dict(cls, d) -> "Normalizer":
        return cls(d["min"], d["max"])


def split_by_events(series: EventSeries, n_train_events: int):
    """First ``n_train_events`` events versus the rest."""
    if not 1 <= n_train_events < series.n_events:
        raise ValueError(
            f"n_train_events must be in [1, {series.n_events - 1}], got {n_train_events}"
        )
    cut = int(series.event_ends[n_train_events - 1]) + 1
    train = EventSeries(series.input[:cut], series.output[:cut],
                        series.event_ends[:n_train_events], series.name)
    test = EventSeries(series.input[cut:], series.output[cut:],
                       series.event_ends[n_train_events:] - cut, series.name)
    return train, test


def train_boundary(series: EventSeries, n_train_events: int) -> int:
    if not 1 <= n_train_events < series.n_events:
        raise ValueError(
            f"need at least one test event: {n_train_events} training events requested, "
            f"series has {series.n_events}"
        )
    return int(series.event_ends[n_train_events - 1]) + 1


def normalize_series(series: EventSeries, n_train_events: int):
    """Fit per-channel normalizers on the training events and apply them to the whole series."""
    cut = train_boundary(series, n_train_events)
    nx = Normalizer.fit(series.input[:cut])
    ny = Normalizer.fit(series.output[:cut])
    normed = EventSeries(nx.apply(series.input), ny.apply(series.output),
                         series.event_ends, series.name)
    return normed, nx, ny


def window_starts(length: int, width: int, stride: int, cover_tail: bool = False) -> np.ndarray:
    if width < 1 or stride < 1:
        raise ValueError("width and stride must be positive")
    if width > length:
        raise ValueError(f"window width {width} exceeds series length {length}")
    starts = np.arange(0, length - width + 1, stride)
    if cover_tail and starts[-1] + width < length:
        starts = np.append(starts, length - width)
    return starts


def window(x, width: int, stride: int = 1, cover_tail: bool = False) -> np.ndarray:
    """Overlapping windows of ``x`` as rows.

    ``cover_tail`` appends one extra window ending at the last sample when the
    regular stride would leave the tail uncovered.
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    starts = window_starts(x.size, width, stride, cover_tail)
    return x[starts[:, None] + np.arange(width)]


def dewindow(windows, length: int, stride: int = 1, cover_tail: bool = False) -> np.ndarray:
    """Average overlapping window rows back to a per-sample sequence (NaN where uncovered)."""
    windows = np.asarray(windows, dtype=np.float64)
    width = windows.shape[1]
    starts = window_starts(length, width, stride, cover_tail)
    if starts.size != windows.shape[0]:
        raise ValueError(f"expected {starts.size} windows, got {windows.shape[0]}")
    total = np.zeros(length)
    count = np.zeros(length)
    idx = starts[:, None] + np.arange(width)
    np.add.at(total, idx, windows)
    np.add.at(count, idx, 1.0)
    with np.errstate(invalid="ignore"):
        return np.where(count > 0, total / np.maximum(count, 1), np.nan)


def gen_sinc(n_points: int = 100, half_range: float = 4.0) -> Batch:
    if n_points < 2:
        raise ValueError("need at least 2 points")
    x = np.linspace(-half_range, half_range, n_points)
    return Batch(x[:, None], np.sinc(x)[:, None])


def sinc_series(n_points: int = 100, half_range: float = 4.0) -> EventSeries:
    b = gen_sinc(n_points, half_range)
    return EventSeries(b.inputs[:, 0], b.targets[:, 0], [n_points - 1], name="sinc")


@dataclass
class GenConfig:
    n_events: int = 32
    samples_per_event: int = 200
    seed: int | None = 0
    anomaly_events: tuple[int, ...] | None = None
    anomaly_gain: float = 1.5
    failure_spike: float = 3.56
    jump_rate: int = 4
    burst_amplitude: float = 0.6
    noise: float = 0.01
    ramp: int = 4

    def __post_init__(self):
        if self.n_events < 3:
            raise ValueError("n_events must be >= 3")
        if self.anomaly_events is None:
            self.anomaly_events = (self.n_events - 2, self.n_events - 1)
        self.anomaly_events = tuple(sorted(int(e) for e in self.anomaly_events))
        if any(not 0 <= e < self.n_events for e in self.anomaly_events):
            raise ValueError(f"anomaly events {self.anomaly_events} outside [0, {self.n_events})")
        if self.samples_per_event < 2 * (self.jump_rate + 1):
            raise ValueError("samples_per_event too small for the requested jump_rate")
        if self.jump_rate < 0 or self.noise < 0 or self.ramp < 1:
            raise ValueError("jump_rate and noise must be non-negative, ramp positive")
        if self.anomaly_gain < 1:
            raise ValueError("anomaly_gain must be >= 1")


class EngineLaw:
    """The run-constant input->output relation: an offset plus a few steep tanh steps."""

    def __init__(self, rng, n_bumps: int = 4):
        self.offset = rng.uniform(-0.2, 0.2)
        self.amps = rng.uniform(0.2, 0.5, n_bumps) * rng.choice([-1.0, 1.0], n_bumps)
        self.slopes = rng.uniform(5.0, 25.0, n_bumps)
        self.centers = rng.uniform(-0.7, 0.7, n_bumps)

    def __call__(self, u):
        u = np.asarray(u, dtype=np.float64)
        return self.offset + np.tanh(self.slopes * (u[..., None] - self.centers)) @ self.amps


def _engine_streams(cfg: GenConfig):
    law_ss, level_ss, noise_ss, anom_ss = np.random.SeedSequence(cfg.seed).spawn(4)
    return (np.random.default_rng(law_ss), np.random.default_rng(level_ss),
            np.random.default_rng(noise_ss), np.random.default_rng(anom_ss))


def engine_law(cfg: GenConfig) -> EngineLaw:
    return EngineLaw(_engine_streams(cfg)[0])


IDLE_LEVEL = -0.9
FULL_LEVEL = 0.9


def _event_input(rng, n: int, jumps: int, ramp: int) -> np.ndarray:
    """One engine run: starts at idle, visits full power once, other levels random."""
    cuts = np.sort(rng.choice(np.arange(2, n - 1), size=jumps, replace=False)) if jumps else []
    levels = rng.uniform(IDLE_LEVEL, FULL_LEVEL, size=jumps + 1)
    levels[0] = IDLE_LEVEL
    if jumps:
        levels[rng.integers(1, jumps + 1)] = FULL_LEVEL
    x = np.empty(n)
    bounds = np.concatenate([[0], cuts, [n]]).astype(int)
    for k in range(jumps + 1):
        x[bounds[k]:bounds[k + 1]] = levels[k]
    # short linear ramps at each level change
    kernel = np.ones(ramp) / ramp
    padded = np.concatenate([np.full(ramp - 1, x[0]), x])
    return np.convolve(padded, kernel, mode="valid")


def gen_engine_like(cfg: GenConfig | None = None) -> EventSeries:
    """Multi-event series with abrupt level shifts, injected anomalies and a final spike."""
    cfg = cfg or GenConfig()
    law_rng, level_rng, noise_rng, anom_rng = _engine_streams(cfg)
    law = EngineLaw(law_rng)
    m = cfg.samples_per_event
    xs, ys = [], []
    for k in range(cfg.n_events):
        x = _event_input(level_rng, m, cfg.jump_rate, cfg.ramp)
        x = x + cfg.noise * 0.5 * noise_rng.standard_normal(m)
        clean = law(x)
        y = clean + cfg.noise * (1.0 + np.abs(clean)) * noise_rng.standard_normal(m)
        if k in cfg.anomaly_events:
            y = y + (cfg.anomaly_gain - 1.0) * clean
            if cfg.anomaly_gain > 1:
                centre = anom_rng.integers(m // 4, 3 * m // 4)
                width = anom_rng.uniform(3.0, 8.0)
                t = np.arange(m)
                y = y + cfg.burst_amplitude * np.exp(-0.5 * ((t - centre) / width) ** 2)
        if k == cfg.n_events - 1 and cfg.failure_spike:
            rise = np.exp(-0.5 * ((np.arange(m) - (m - 1)) / 2.0) ** 2)
            y = y + cfg.failure_spike * rise
        xs.append(x)
        ys.append(y)
    ends = np.arange(1, cfg.n_events + 1) * m - 1
    return EventSeries(np.concatenate(xs), np.concatenate(ys), ends, name=f"engine-seed{cfg.seed}")


def check_labels(cfg: GenConfig, n_train_events: int = 15) -> dict:
    """Compare mean |output - law(input)| over anomaly events and clean test events."""
    series = gen_engine_like(cfg)
    law = engine_law(cfg)
    dev = np.abs(series.output - law(series.input))
    ev = series.event_index()
    anomalous = np.isin(ev, cfg.anomaly_events)
    clean_test = (ev >= n_train_events) & ~anomalous
    return {
        "anomalous": float(dev[anomalous].mean()) if anomalous.any() else 0.0,
        "clean_test": float(dev[clean_test].mean()) if clean_test.any() else 0.0,
    }
