"""Central finite-difference checks for the analytic gradients."""

from __future__ import annotations

from typing import Callable, Iterable

import numpy as np

from .divergence import DivergenceKind, divergence, gradient
from .predictor import PredictorConfig, backward, forward, init_params

STEP = 1e-5
DIVERGENCE_TOL = 1e-6
END_TO_END_TOL = 1e-5


def random_interior_histograms(rng: np.random.Generator, n: int, num_bins: int = 10, floor: float = 0.1):
    """Dirichlet(1) draws mixed with the uniform histogram; every bin >= floor / Z."""
    d = rng.dirichlet(np.ones(num_bins), size=n)
    return (1.0 - floor) * d + floor / num_bins


def relative_error(analytic, numeric) -> float:
    a = np.ravel(analytic)
    b = np.ravel(numeric)
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    if scale == 0.0:
        return 0.0
    return float(np.linalg.norm(a - b) / scale)


def central_difference(f: Callable[[np.ndarray], float], x: np.ndarray, h: float = STEP) -> np.ndarray:
    x = np.array(x, dtype=np.float64)
    out = np.empty_like(x)
    for i in range(x.size):
        e = x.copy()
        e.flat[i] += h
        fp = f(e)
        e.flat[i] -= 2.0 * h
        fm = f(e)
        out.flat[i] = (fp - fm) / (2.0 * h)
    return out


def check_divergences(kinds: Iterable = tuple(DivergenceKind), trials: int = 100, seed: int = 0) -> dict:
    """Worst relative error of each kind's gradient over random interior pairs."""
    rng = np.random.default_rng(seed)
    worst = {}
    for kind in map(DivergenceKind.parse, kinds):
        ys = random_interior_histograms(rng, trials)
        qs = random_interior_histograms(rng, trials)
        err = 0.0
        for y, q in zip(ys, qs):
            numeric = central_difference(lambda v: divergence(kind, y, v), q)
            err = max(err, relative_error(gradient(kind, y, q), numeric))
        worst[kind] = err
    return worst


def _end_to_end_case(rng: np.random.Generator, kind: DivergenceKind):
    cfg = PredictorConfig(
        input_dim=int(rng.integers(2, 6)),
        hidden_dims=(int(rng.integers(3, 7)),),
        num_bins=10,
        seed=int(rng.integers(2**32)),
    )
    params = init_params(cfg)
    for b in params.biases:
        b += rng.normal(0.0, 0.1, b.shape)
    while True:
        x = rng.normal(0.0, 1.0, cfg.input_dim)
        trace = forward(params, x)
        # keep ReLU inputs clear of the kink so the difference quotient is smooth
        if all(np.min(np.abs(z)) > 1e-3 for z in trace.pre_activations[:-1]):
            break
    y = random_interior_histograms(rng, 1)[0]
    return params, x, y, trace


def check_end_to_end(kinds: Iterable = tuple(DivergenceKind), trials: int = 100, seed: int = 0) -> dict:
    """Worst relative error of predictor-plus-loss parameter gradients."""
    rng = np.random.default_rng(seed)
    worst = {}
    for kind in map(DivergenceKind.parse, kinds):
        err = 0.0
        for _ in range(trials):
            params, x, y, trace = _end_to_end_case(rng, kind)
            analytic = backward(params, trace, gradient(kind, y, trace.y_hat)).flat()

            def loss(vec):
                return divergence(kind, y, forward(params.with_flat(vec), x).y_hat)

            err = max(err, relative_error(analytic, central_difference(loss, params.flat())))
        worst[kind] = err
    return worst
