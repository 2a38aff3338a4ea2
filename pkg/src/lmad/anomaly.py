"""Residual-based anomaly flags and multi-run consensus."""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .network import Network, forward
from .timeseries import EventSeries, dewindow, window

REPORT_VERSION = 1
DEFAULT_RATIO = 2.0
DEFAULT_QUORUM = 0.8


@dataclass
class ResidualSeries:
    values: np.ndarray
    event_ends: np.ndarray
    train_boundary: int

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).ravel()
        self.event_ends = np.asarray(self.event_ends, dtype=np.int64).ravel()
        if self.event_ends[-1] != self.values.size - 1:
            raise ValueError("event_ends do not cover the residual series")
        if self.train_boundary != 0 and self.train_boundary - 1 not in self.event_ends:
            raise ValueError(f"train boundary {self.train_boundary} is not an event boundary")

    @property
    def n_events(self) -> int:
        return self.event_ends.size

    @property
    def n_train_events(self) -> int:
        return int(np.searchsorted(self.event_ends, self.train_boundary))

    def event_slices(self):
        start = 0
        for end in self.event_ends:
            yield slice(start, int(end) + 1)
            start = int(end) + 1

    def event_index(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_events), np.diff(np.concatenate([[-1], self.event_ends])))


@dataclass
class EventStat:
    event: int
    max_abs: float
    mean_abs: float
    mse: float


@dataclass
class AnomalyReport:
    train_max: float
    per_event: list[tuple[int, float, float]]  # (event, max |r|, ratio)
    ratio_threshold: float
    flagged_events: set[int]
    n_train_events: int
    model_fingerprint: str = ""
    output_scale: float | None = None

    def ratio(self, event: int) -> float:
        return self.per_event[event][2]

    def max_ratio(self, events) -> float:
        return max(self.per_event[e][2] for e in events)

    def to_dict(self) -> dict:
        doc = {
            "format": "lmad-anomaly-report",
            "version": REPORT_VERSION,
            "model_fingerprint": self.model_fingerprint,
            "ratio_threshold": self.ratio_threshold,
            "n_train_events": self.n_train_events,
            "train_max": self.train_max,
            "flagged_events": sorted(self.flagged_events),
            "per_event": [
                {"event": e, "max_abs": m, "ratio": q} for e, m, q in self.per_event
            ],
        }
        if self.output_scale is not None:
            # residuals are in normalized units; this converts max |r| back to raw units
            doc["output_scale"] = self.output_scale
            doc["train_max_raw"] = self.train_max * self.output_scale
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "AnomalyReport":
        return cls(
            train_max=doc["train_max"],
            per_event=[(p["event"], p["max_abs"], p["ratio"]) for p in doc["per_event"]],
            ratio_threshold=doc["ratio_threshold"],
            flagged_events=set(doc["flagged_events"]),
            n_train_events=doc["n_train_events"],
            model_fingerprint=doc.get("model_fingerprint", ""),
            output_scale=doc.get("output_scale"),
        )


@dataclass
class ConsensusReport:
    runs: list[AnomalyReport]
    quorum: float
    votes: dict[int, int]
    consensus_events: set[int]
    artefact_events: set[int]

    def to_dict(self) -> dict:
        return {
            "format": "lmad-consensus-report",
            "version": REPORT_VERSION,
            "quorum": self.quorum,
            "n_runs": len(self.runs),
            "votes": {str(k): v for k, v in sorted(self.votes.items())},
            "consensus_events": sorted(self.consensus_events),
            "artefact_events": sorted(self.artefact_events),
            "runs": [r.to_dict() for r in self.runs],
        }


def residual_series(net: Network, series: EventSeries, train_boundary: int) -> ResidualSeries:
    """Per-sample ``y - yhat`` over the whole series."""
    if net.spec.input_dim != 1 or net.spec.output_dim != 1:
        raise ValueError(
            f"regressor residuals need a 1->1 network, got "
            f"{net.spec.input_dim}->{net.spec.output_dim}"
        )
    pred = forward(net, series.input[:, None])[:, 0]
    return ResidualSeries(series.output - pred, series.event_ends, train_boundary)


def autoencoder_residual_series(net: Network, series: EventSeries, train_boundary: int,
                                stride: int) -> ResidualSeries:
    """Mean absolute reconstruction error per sample across the windows that cover it."""
    width = net.spec.input_dim
    w = window(series.output, width, stride, cover_tail=True)
    err = np.abs(w - forward(net, w))
    return ResidualSeries(dewindow(err, len(series), stride, cover_tail=True),
                          series.event_ends, train_boundary)


def per_event_stats(res: ResidualSeries) -> list[EventStat]:
    out = []
    for k, sl in enumerate(res.event_slices()):
        r = res.values[sl]
        a = np.abs(r)
        out.append(EventStat(k, float(a.max()), float(a.mean()), float(np.mean(r * r))))
    return out


def detect(res: ResidualSeries, ratio_threshold: float = DEFAULT_RATIO,
           fingerprint: str = "", output_scale: float | None = None) -> AnomalyReport:
    """Flag test events whose max |r| is at least ``ratio_threshold`` times the training max."""
    if res.train_boundary < 1:
        raise ValueError("training region is empty")
    train_max = float(np.max(np.abs(res.values[:res.train_boundary])))
    if train_max == 0:
        raise ValueError("training residuals are all zero; refusing to form ratios")
    n_train = res.n_train_events
    per_event = []
    flagged = set()
    for st in per_event_stats(res):
        ratio = st.max_abs / train_max
        per_event.append((st.event, st.max_abs, ratio))
        if st.event >= n_train and st.max_abs >= ratio_threshold * train_max:
            flagged.add(st.event)
    return AnomalyReport(train_max, per_event, ratio_threshold, flagged, n_train,
                         fingerprint, output_scale)


def quorum_votes(quorum: float, k: int) -> int:
    # guard against float products like 0.7 * 10 = 7.000000000000001
    return max(1, math.ceil(quorum * k - 1e-9))


def consensus(reports: list[AnomalyReport], quorum: float = DEFAULT_QUORUM) -> ConsensusReport:
    """Split flagged events into those recurring in at least ``ceil(quorum*K)`` runs and the rest."""
    if len(reports) < 2:
        raise ValueError("consensus needs at least 2 runs")
    if not 0 < quorum <= 1:
        raise ValueError("quorum must lie in (0, 1]")
    shape = (len(reports[0].per_event), reports[0].n_train_events)
    for r in reports[1:]:
        if (len(r.per_event), r.n_train_events) != shape:
            raise ValueError("reports cover different event structures")
    votes: dict[int, int] = {}
    for r in reports:
        for e in r.flagged_events:
            votes[e] = votes.get(e, 0) + 1
    need = quorum_votes(quorum, len(reports))
    agreed = {e for e, v in votes.items() if v >= need}
    return ConsensusReport(reports, quorum, votes, agreed, set(votes) - agreed)


def fingerprint(seed, config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return f"seed={seed}:{hashlib.sha256(blob).hexdigest()[:12]}"


def write_residual_csv(res: ResidualSeries, path) -> None:
    ev = res.event_index()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "residual", "event", "region"])
        for i, v in enumerate(res.values):
            region = "train" if i < res.train_boundary else "test"
            w.writerow([i, repr(float(v)), int(ev[i]), region])


def save_json(doc: dict, path) -> None:
    Path(path).write_text(json.dumps(doc, indent=1))
