"""Trainers: Levenberg-Marquardt plus first-order baselines (ADAM, SGD+momentum, Rprop).

Every trainer draws a fresh random train/validation division of the batch at
each epoch (unless ``resplit_each_epoch`` is off), applies patience on the
validation loss, and restores the best-validation parameters on exit.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import linalg

from .network import Batch, Network, forward, jacobian, loss_and_gradient, loss_value

REPORT_FORMAT = "lmad-train-report"
REPORT_VERSION = 1

STOP_REASONS = ("max_epochs", "patience_exhausted", "lambda_overflow", "converged")

# convergence thresholds for LM
SSE_TOL = 1e-14
GRAD_TOL = 1e-12
# Rprop step-size floor
RPROP_DELTA_MIN = 1e-9


class TrainingError(RuntimeError):
    """Raised when training hits a non-finite loss."""


@dataclass
class LMConfig:
    lambda0: float = 1e-3
    lambda_inc: float = 10.0
    lambda_dec: float = 0.1
    lambda_max: float = 1e10
    lambda_min: float = 1e-20
    max_epochs: int = 100
    val_fraction: float = 0.4
    patience: int = 0
    resplit_each_epoch: bool = True
    loss: str = "mse"
    block_rows: int = 4096
    seed: int | None = None

    def __post_init__(self):
        if not 0 < self.lambda0 <= self.lambda_max:
            raise ValueError("need 0 < lambda0 <= lambda_max")
        if not self.lambda_inc > 1 > self.lambda_dec > 0:
            raise ValueError("need lambda_inc > 1 > lambda_dec > 0")
        if not 0 < self.lambda_min <= self.lambda0:
            raise ValueError("need 0 < lambda_min <= lambda0")
        _check_common(self)


@dataclass
class GradConfig:
    optimizer: str = "adam"
    learning_rate: float | None = None
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    rprop_eta_plus: float = 1.2
    rprop_eta_minus: float = 0.5
    rprop_delta0: float = 0.07
    rprop_delta_max: float = 50.0
    batch_size: int | None = None
    loss: str = "mse"
    max_epochs: int = 100
    val_fraction: float = 0.4
    patience: int = 0
    resplit_each_epoch: bool = True
    seed: int | None = None

    def __post_init__(self):
        if self.optimizer not in ("adam", "sgdm", "rprop"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.learning_rate is None:
            self.learning_rate = 1e-2 if self.optimizer == "sgdm" else 1e-3
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if not self.rprop_eta_minus < 1 < self.rprop_eta_plus:
            raise ValueError("need rprop_eta_minus < 1 < rprop_eta_plus")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        _check_common(self)


def _check_common(cfg):
    if not 0 < cfg.val_fraction < 1:
        raise ValueError("val_fraction must lie in (0, 1)")
    if cfg.max_epochs < 1:
        raise ValueError("max_epochs must be >= 1")
    if cfg.patience < 0:
        raise ValueError("patience must be non-negative")
    if cfg.loss not in ("mse", "mae"):
        raise ValueError(f"unknown loss {cfg.loss!r}")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    step: float  # damping factor for LM, learning rate otherwise
    accepted: bool
    sse_before: float | None = None
    sse_after: float | None = None


@dataclass
class TrainReport:
    optimizer: str
    epoch_history: list[EpochRecord]
    best_epoch: int
    best_val_loss: float
    final_train_loss: float
    stop_reason: str
    wall_time: float
    best_params: np.ndarray
    loss: str = "mse"
    config: dict = field(default_factory=dict)

    @property
    def epochs_run(self) -> int:
        return len(self.epoch_history)

    def to_dict(self, include_timing: bool = True) -> dict:
        doc = {
            "format": REPORT_FORMAT,
            "version": REPORT_VERSION,
            "optimizer": self.optimizer,
            "loss": self.loss,
            "config": self.config,
            "best_epoch": self.best_epoch,
            "best_val_loss": self.best_val_loss,
            "final_train_loss": self.final_train_loss,
            "stop_reason": self.stop_reason,
            "epoch_history": [asdict(r) for r in self.epoch_history],
            "best_params": [float(p) for p in self.best_params],
        }
        if include_timing:
            doc["wall_time"] = self.wall_time
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainReport":
        if doc.get("format") != REPORT_FORMAT:
            raise ValueError("not a training report document")
        return cls(
            optimizer=doc["optimizer"],
            epoch_history=[EpochRecord(**r) for r in doc["epoch_history"]],
            best_epoch=doc["best_epoch"],
            best_val_loss=doc["best_val_loss"],
            final_train_loss=doc["final_train_loss"],
            stop_reason=doc["stop_reason"],
            wall_time=doc.get("wall_time", 0.0),
            best_params=np.asarray(doc["best_params"], dtype=np.float64),
            loss=doc.get("loss", "mse"),
            config=doc.get("config", {}),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))


def split_train_val(n_samples: int, val_fraction: float, rng):
    """Random division of ``range(n_samples)`` into (train, val) index arrays."""
    if not 0 < val_fraction < 1:
        raise ValueError("val_fraction must lie in (0, 1)")
    if n_samples < 2:
        raise ValueError("need at least 2 samples to split")
    n_val = int(round(val_fraction * n_samples))
    if n_val == 0 or n_val == n_samples:
        raise ValueError(
            f"split of {n_samples} samples at fraction {val_fraction} leaves one side empty"
        )
    perm = rng.permutation(n_samples)
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def epoch_splits(n_samples: int, cfg):
    """Yield (train, val) indices per epoch; replayable from ``cfg.seed``."""
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(1)[0])
    split = split_train_val(n_samples, cfg.val_fraction, rng)
    while True:
        yield split
        if cfg.resplit_each_epoch:
            split = split_train_val(n_samples, cfg.val_fraction, rng)


def early_stop_check(val_history, patience: int) -> str:
    """'stop' once the last ``patience`` epochs all failed to beat the running best."""
    if len(val_history) == 0:
        raise ValueError("validation history is empty")
    if patience == 0:
        return "continue"
    best = np.inf
    since_best = 0
    for v in val_history:
        if v < best:
            best = v
            since_best = 0
        else:
            since_best += 1
    return "stop" if since_best >= patience else "continue"


def solve_damped(JtJ: np.ndarray, Jtr: np.ndarray, lam: float):
    """Solve ``(JtJ + lam*I) delta = Jtr`` by Cholesky; None if the factorization fails."""
    A = JtJ + lam * np.eye(JtJ.shape[0])
    try:
        c = linalg.cho_factor(A, lower=True, check_finite=False)
    except linalg.LinAlgError:
        return None
    delta = linalg.cho_solve(c, Jtr, check_finite=False)
    if not np.all(np.isfinite(delta)):
        return None
    return delta


def lm_step(J, r, lam: float):
    """Damped Gauss-Newton step for residuals ``r = y - yhat`` and ``J = d yhat / d theta``.

    Returns None when the damped normal matrix is not numerically positive
    definite; the caller should raise the damping and retry.
    """
    J = np.asarray(J, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64).ravel()
    if J.ndim != 2 or J.shape[0] != r.size:
        raise ValueError(f"Jacobian shape {J.shape} does not match residual length {r.size}")
    if lam < 0:
        raise ValueError("damping must be non-negative")
    if not (np.all(np.isfinite(J)) and np.all(np.isfinite(r))):
        raise ValueError("non-finite entries in Jacobian or residuals")
    return solve_damped(J.T @ J, J.T @ r, lam)


def normal_equations(net: Network, batch: Batch, params=None, block_rows: int = 4096):
    """Accumulate J^T J, J^T r and SSE over row blocks of the batch."""
    P = net.param_count
    JtJ = np.zeros((P, P))
    Jtr = np.zeros(P)
    sse = 0.0
    per_block = max(1, block_rows // net.spec.output_dim)
    for start in range(0, len(batch), per_block):
        x = batch.inputs[start:start + per_block]
        y = batch.targets[start:start + per_block]
        r = (y - forward(net, x, params)).ravel()
        J = jacobian(net, x, params)
        JtJ += J.T @ J
        Jtr += J.T @ r
        sse += float(r @ r)
    return JtJ, Jtr, sse


def sse(net: Network, batch: Batch, params=None) -> float:
    r = batch.targets - forward(net, batch.inputs, params)
    return float(np.sum(r * r))


def _check_dims(net: Network, batch: Batch):
    if batch.inputs.shape[1] != net.spec.input_dim or batch.targets.shape[1] != net.spec.output_dim:
        raise ValueError(
            f"batch shapes {batch.inputs.shape}/{batch.targets.shape} do not match "
            f"network {net.spec.input_dim}->{net.spec.output_dim}"
        )


def _finite(value: float, what: str, epoch: int):
    if not np.isfinite(value):
        raise TrainingError(f"non-finite {what} at epoch {epoch}")


class _Tracker:
    """Best-validation bookkeeping and patience shared by all trainers."""

    def __init__(self, patience: int):
        self.patience = patience
        self.history: list[EpochRecord] = []
        self.best_val = np.inf
        self.best_epoch = -1
        self.best_params = None

    def record(self, rec: EpochRecord, params: np.ndarray) -> bool:
        self.history.append(rec)
        if rec.val_loss < self.best_val:
            self.best_val = rec.val_loss
            self.best_epoch = rec.epoch
            self.best_params = params.copy()
        vals = [r.val_loss for r in self.history]
        return early_stop_check(vals, self.patience) == "stop"

    def report(self, optimizer, stop_reason, t0, loss, cfg) -> TrainReport:
        return TrainReport(
            optimizer=optimizer,
            epoch_history=self.history,
            best_epoch=self.best_epoch,
            best_val_loss=self.best_val,
            final_train_loss=self.history[-1].train_loss,
            stop_reason=stop_reason,
            wall_time=time.perf_counter() - t0,
            best_params=self.best_params,
            loss=loss,
            config=asdict(cfg),
        )


def train_lm(net: Network, batch: Batch, config: LMConfig) -> TrainReport:
    """Levenberg-Marquardt training on the sum of squared residuals.

    One accepted step per epoch: the Jacobian is formed once on the epoch's
    training subset and the damped system is re-solved with growing damping
    until the SSE drops. Damping beyond ``lambda_max`` ends training with
    ``stop_reason='lambda_overflow'``. ``config.loss`` only selects the
    reported train/validation metric. ``net.params`` is set to the best
    validation parameters on return.
    """
    _check_dims(net, batch)
    t0 = time.perf_counter()
    cfg = config
    theta = net.params.copy()
    lam = cfg.lambda0
    tracker = _Tracker(cfg.patience)
    splits = epoch_splits(len(batch), cfg)
    stop_reason = "max_epochs"

    for epoch in range(cfg.max_epochs):
        train_idx, val_idx = next(splits)
        train, val = batch.subset(train_idx), batch.subset(val_idx)
        JtJ, Jtr, sse0 = normal_equations(net, train, theta, cfg.block_rows)
        _finite(sse0, "training SSE", epoch)

        accepted = False
        sse1 = sse0
        while True:
            delta = solve_damped(JtJ, Jtr, lam)
            if delta is not None:
                candidate = theta + delta
                sse1 = sse(net, train, candidate)
                if np.isfinite(sse1) and sse1 < sse0:
                    theta = candidate
                    accepted = True
                    break
            if lam * cfg.lambda_inc > cfg.lambda_max:
                sse1 = sse0
                break
            lam *= cfg.lambda_inc

        train_loss = loss_value(forward(net, train.inputs, theta), train.targets, cfg.loss)
        val_loss = loss_value(forward(net, val.inputs, theta), val.targets, cfg.loss)
        _finite(val_loss, "validation loss", epoch)
        rec = EpochRecord(epoch, train_loss, val_loss, lam, accepted, sse0, sse1)
        patience_hit = tracker.record(rec, theta)

        if not accepted:
            stop_reason = "lambda_overflow"
            break
        lam = max(lam * cfg.lambda_dec, cfg.lambda_min)
        if sse1 < SSE_TOL or np.linalg.norm(Jtr) < GRAD_TOL:
            stop_reason = "converged"
            break
        if patience_hit:
            stop_reason = "patience_exhausted"
            break

    net.params = tracker.best_params.copy()
    return tracker.report("lm", stop_reason, t0, cfg.loss, cfg)


class Adam:
    def __init__(self, n_params, lr=1e-3, beta1=0.9, beta2=0.999, epsilon=1e-8):
        self.lr, self.beta1, self.beta2, self.epsilon = lr, beta1, beta2, epsilon
        self.m = np.zeros(n_params)
        self.v = np.zeros(n_params)
        self.t = 0

    def step(self, theta, grad):
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1 ** self.t)
        v_hat = self.v / (1 - self.beta2 ** self.t)
        return theta - self.lr * m_hat / (np.sqrt(v_hat) + self.epsilon)


class SGDMomentum:
    def __init__(self, n_params, lr=1e-2, momentum=0.9):
        self.lr, self.momentum = lr, momentum
        self.velocity = np.zeros(n_params)

    def step(self, theta, grad):
        self.velocity = self.momentum * self.velocity - self.lr * grad
        return theta + self.velocity


class Rprop:
    """Sign-based steps with per-parameter sizes; no update on a sign flip."""

    def __init__(self, n_params, eta_plus=1.2, eta_minus=0.5, delta0=0.07, delta_max=50.0):
        self.eta_plus, self.eta_minus = eta_plus, eta_minus
        self.delta_max = delta_max
        self.delta = np.full(n_params, float(delta0))
        self.prev_grad = np.zeros(n_params)

    def step(self, theta, grad):
        agree = self.prev_grad * grad
        self.delta = np.where(agree > 0, self.delta * self.eta_plus, self.delta)
        self.delta = np.where(agree < 0, self.delta * self.eta_minus, self.delta)
        np.clip(self.delta, RPROP_DELTA_MIN, self.delta_max, out=self.delta)
        grad = np.where(agree < 0, 0.0, grad)
        self.prev_grad = grad
        return theta - np.sign(grad) * self.delta


def make_stepper(cfg: GradConfig, n_params: int):
    if cfg.optimizer == "adam":
        return Adam(n_params, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon)
    if cfg.optimizer == "sgdm":
        return SGDMomentum(n_params, cfg.learning_rate, cfg.momentum)
    return Rprop(n_params, cfg.rprop_eta_plus, cfg.rprop_eta_minus,
                 cfg.rprop_delta0, cfg.rprop_delta_max)


def train_grad(net: Network, batch: Batch, config: GradConfig) -> TrainReport:
    """First-order training with ADAM, SGD+momentum or Rprop.

    Rprop always uses the full training subset; ADAM and SGDM use
    ``batch_size`` minibatches when set. Leaves the best validation
    parameters in ``net.params``.
    """
    _check_dims(net, batch)
    t0 = time.perf_counter()
    cfg = config
    theta = net.params.copy()
    stepper = make_stepper(cfg, net.param_count)
    tracker = _Tracker(cfg.patience)
    splits = epoch_splits(len(batch), cfg)
    shuffle_rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(2)[1])
    full_batch = cfg.optimizer == "rprop" or cfg.batch_size is None
    stop_reason = "max_epochs"

    for epoch in range(cfg.max_epochs):
        train_idx, val_idx = next(splits)
        train, val = batch.subset(train_idx), batch.subset(val_idx)
        if full_batch:
            chunks = [np.arange(len(train))]
        else:
            order = shuffle_rng.permutation(len(train))
            chunks = [order[i:i + cfg.batch_size] for i in range(0, len(train), cfg.batch_size)]
        for idx in chunks:
            value, grad = loss_and_gradient(net, train.subset(idx), cfg.loss, theta)
            _finite(value, "training loss", epoch)
            theta = stepper.step(theta, grad)

        train_loss = loss_value(forward(net, train.inputs, theta), train.targets, cfg.loss)
        val_loss = loss_value(forward(net, val.inputs, theta), val.targets, cfg.loss)
        _finite(train_loss, "training loss", epoch)
        _finite(val_loss, "validation loss", epoch)
        rec = EpochRecord(epoch, train_loss, val_loss, cfg.learning_rate, True)
        if tracker.record(rec, theta):
            stop_reason = "patience_exhausted"
            break

    net.params = tracker.best_params.copy()
    return tracker.report(cfg.optimizer, stop_reason, t0, cfg.loss, cfg)
