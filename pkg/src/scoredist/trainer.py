"""Mini-batch SGD with momentum, weight decay and a step learning-rate schedule."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .dataio import Sample
from .divergence import DivergenceKind, divergence, gradient, interior_mask
from .predictor import PredictorConfig, PredictorParams, backward, forward, init_params
from .reliability import (
    ReliabilityConfig,
    UncalibratedThresholdError,
    blended_reliability,
    calibrate,
    calibrate_count_threshold,
    kurtosis_reliability,
    rating_count_reliability,
)

log = logging.getLogger(__name__)

RELIABILITY_MODES = ("none", "kurtosis", "rating_count", "blend")


class DivergedError(RuntimeError):
    """Non-finite gradient. ``report`` holds the run up to the failing step."""

    def __init__(self, message: str, report: "TrainReport | None" = None):
        super().__init__(message)
        self.report = report


@dataclass(frozen=True)
class TrainConfig:
    loss_kind: DivergenceKind = DivergenceKind.CJS
    reliability_mode: str = "none"
    lam: float = 1.0
    batch_size: int = 48
    momentum: float = 0.9
    weight_decay: float = 0.0005
    base_lr: float = 0.01
    lr_gamma: float = 0.5
    lr_step_iters: int = 1000
    max_iters: int = 2000
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "loss_kind", DivergenceKind.parse(self.loss_kind))
        mode = "rating_count" if self.reliability_mode == "count" else self.reliability_mode
        object.__setattr__(self, "reliability_mode", mode)
        if mode not in RELIABILITY_MODES:
            raise ValueError(f"unknown reliability mode {self.reliability_mode!r}")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lambda must lie in [0, 1]")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")
        if not self.base_lr > 0:
            raise ValueError("base_lr must be positive")
        if not 0.0 < self.lr_gamma <= 1.0:
            raise ValueError("lr_gamma must lie in (0, 1]")
        if self.lr_step_iters < 1:
            raise ValueError("lr_step_iters must be positive")
        if self.max_iters < 0:
            raise ValueError("max_iters must be non-negative")

    def to_dict(self) -> dict:
        return {
            "loss_kind": self.loss_kind.value,
            "reliability_mode": self.reliability_mode,
            "lam": self.lam,
            "batch_size": self.batch_size,
            "momentum": self.momentum,
            "weight_decay": self.weight_decay,
            "base_lr": self.base_lr,
            "lr_gamma": self.lr_gamma,
            "lr_step_iters": self.lr_step_iters,
            "max_iters": self.max_iters,
            "seed": self.seed,
        }


@dataclass
class OptimizerState:
    velocity: PredictorParams
    current_lr: float
    iteration: int = 0

    @classmethod
    def fresh(cls, params: PredictorParams, cfg: TrainConfig) -> "OptimizerState":
        return cls(params.zeros_like(), cfg.base_lr, 0)


@dataclass
class TrainReport:
    losses: list[float]
    params: PredictorParams
    skipped: int
    seconds: float
    weights: np.ndarray = field(default_factory=lambda: np.zeros(0))
    boundary_skips: int = 0
    reliability: ReliabilityConfig | None = None


def sgd_step(
    params: PredictorParams, grads: PredictorParams, state: OptimizerState, cfg: TrainConfig
) -> tuple[PredictorParams, OptimizerState]:
    """One momentum step: ``v = m*v - lr*(g + wd*w); w = w + v``.

    Returns new params and state; the inputs are not modified.
    """
    for g in grads.arrays():
        if not np.all(np.isfinite(g)):
            raise DivergedError("diverged: non-finite gradient")
    new_params = params.copy()
    new_velocity = state.velocity.copy()
    for w, v, g in zip(new_params.arrays(), new_velocity.arrays(), grads.arrays()):
        v *= cfg.momentum
        v -= state.current_lr * (g + cfg.weight_decay * w)
        w += v
    return new_params, _advance(OptimizerState(new_velocity, state.current_lr, state.iteration), cfg)


def _advance(state: OptimizerState, cfg: TrainConfig) -> OptimizerState:
    iteration = state.iteration + 1
    lr = state.current_lr
    # "step" policy: decay whenever the iteration count reaches a multiple of the step size
    if iteration % cfg.lr_step_iters == 0:
        lr *= cfg.lr_gamma
    return OptimizerState(state.velocity, lr, iteration)


def sample_weights(
    samples: Sequence[Sample], cfg: TrainConfig, rel: ReliabilityConfig | None
) -> np.ndarray:
    """Per-sample reliability weight under ``cfg.reliability_mode``."""
    mode = cfg.reliability_mode
    if mode == "none":
        return np.ones(len(samples))
    if rel is None:
        raise UncalibratedThresholdError("threshold not calibrated")
    r_kurt = r_cnt = None
    if mode in ("kurtosis", "blend"):
        r_kurt = [kurtosis_reliability(s.target, rel) for s in samples]
    if mode in ("rating_count", "blend"):
        r_cnt = [rating_count_reliability(s.rating_count, rel) for s in samples]
    if mode == "kurtosis":
        return np.array(r_kurt)
    if mode == "rating_count":
        return np.array(r_cnt)
    return np.array([blended_reliability(a, b, cfg.lam) for a, b in zip(r_kurt, r_cnt)])


def calibrate_on(samples: Sequence[Sample], rel: ReliabilityConfig | None = None) -> ReliabilityConfig:
    """Resolve the kurtosis and rating-count thresholds on a training set."""
    rel = rel or ReliabilityConfig()
    counts = [s.rating_count for s in samples]
    if all(s.degenerate for s in samples):
        # every kurtosis weight is 0 whatever the threshold
        return replace(
            rel,
            threshold=math.inf,
            count_threshold=calibrate_count_threshold(counts, rel.percentile, rel.reference_count),
        )
    return calibrate(rel, [s.target for s in samples], counts)


def batch_loss(kind, targets: np.ndarray, preds: np.ndarray, weights: np.ndarray) -> float:
    """Mean over the batch of weight * divergence, summed in a fixed order."""
    per_sample = weights * divergence(kind, targets, preds)
    return float(np.sum(per_sample) / len(per_sample))


def train(
    samples: Sequence[Sample],
    cfg: TrainConfig,
    predictor: PredictorConfig | None = None,
    reliability: ReliabilityConfig | None = None,
    init: PredictorParams | None = None,
) -> TrainReport:
    """Train a predictor on ``samples``.

    With a reliability mode other than ``"none"``, thresholds left unresolved
    in ``reliability`` are calibrated on ``samples`` first. ``predictor``
    defaults to one hidden layer of 64 units seeded with ``cfg.seed``.
    """
    if len(samples) == 0:
        raise ValueError("cannot train on an empty dataset")
    started = time.perf_counter()
    kind = cfg.loss_kind
    features = np.stack([s.features for s in samples])
    targets = np.stack([s.target.probs for s in samples])

    if predictor is None:
        predictor = PredictorConfig(input_dim=features.shape[1], seed=cfg.seed)
    params = init.copy() if init is not None else init_params(predictor)

    if cfg.reliability_mode != "none":
        reliability = reliability or ReliabilityConfig(lam=cfg.lam)
        if reliability.threshold is None or reliability.count_threshold is None:
            reliability = calibrate_on(samples, reliability)
    weights = sample_weights(samples, cfg, reliability)
    skipped = set(np.flatnonzero(weights == 0.0).tolist())
    if skipped:
        log.warning("%d of %d samples have zero reliability weight", len(skipped), len(samples))

    state = OptimizerState.fresh(params, cfg)
    rng = np.random.default_rng(cfg.seed)
    order = rng.permutation(len(samples))
    cursor = 0
    losses: list[float] = []
    boundary_skips = 0

    def report() -> TrainReport:
        return TrainReport(
            losses, params, len(skipped), time.perf_counter() - started,
            weights, boundary_skips, reliability,
        )

    while state.iteration < cfg.max_iters:
        if cursor + cfg.batch_size > len(order):
            take = order[cursor:]
            order = rng.permutation(len(samples))
            need = cfg.batch_size - take.size
            idx = np.concatenate([take, order[:need]])
            cursor = need
        else:
            idx = order[cursor : cursor + cfg.batch_size]
            cursor += cfg.batch_size

        with np.errstate(over="ignore", invalid="ignore"):
            # blow-ups surface as a non-finite loss below
            trace = forward(params, features[idx])
        preds = trace.y_hat
        w = weights[idx].copy()
        ok = interior_mask(kind, preds)
        if not np.all(ok):
            # boundary predictions under a logarithmic loss are dropped from this step
            bad = np.flatnonzero(~ok)
            boundary_skips += bad.size
            skipped.update(int(i) for i in idx[bad])
            w[bad] = 0.0
        loss = batch_loss(kind, targets[idx], preds, w)
        if not np.isfinite(loss):
            raise DivergedError("diverged: non-finite loss", report())
        losses.append(loss)
        if not np.any(w > 0.0):
            # nothing to learn from this batch; keep params (and weight decay) untouched
            state = _advance(state, cfg)
            continue

        live = w > 0.0
        g = np.zeros_like(preds)
        g[live] = gradient(kind, targets[idx][live], preds[live]) * (w[live] / len(idx))[:, None]
        grads = backward(params, trace, g)
        try:
            params, state = sgd_step(params, grads, state, cfg)
        except DivergedError as exc:
            raise DivergedError(str(exc), report()) from None

    return report()
