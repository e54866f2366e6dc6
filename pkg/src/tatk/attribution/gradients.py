"""Path-integral gradient attributions and the time-forward cropping wrapper."""

from __future__ import annotations

from typing import Callable

import numpy as np

from ..models import Model
from .base import (Attribution, as_baseline, input_gradients, require_causal,
                   resolve_target)


def trapezoid_grid(steps: int) -> tuple[np.ndarray, np.ndarray]:
    """Uniform alpha grid on [0, 1] with trapezoid weights summing to one."""
    if steps < 2:
        raise ValueError(f"steps must be >= 2, got {steps}")
    alphas = np.linspace(0.0, 1.0, steps)
    weights = np.full(steps, 1.0 / (steps - 1))
    weights[[0, -1]] *= 0.5
    return alphas, weights


def integrated_gradients(model: Model, x: np.ndarray, baseline=None, steps: int = 64,
                         target=None, seed: int = 0) -> Attribution:
    x = np.asarray(x, dtype=np.float64)
    target = resolve_target(model, x, target)
    x_bar = as_baseline(baseline).resolve(x, np.random.default_rng(seed))
    alphas, weights = trapezoid_grid(steps)
    path = x_bar[None] + alphas[:, None, None] * (x - x_bar)[None]
    grads = input_gradients(model, path, target)
    avg = np.tensordot(weights, grads, axes=1)
    return Attribution((x - x_bar) * avg, "integrated_gradients", [target],
                       {"steps": steps, "baseline": as_baseline(baseline), "seed": seed})


def temporal_integrated_gradients(model: Model, x: np.ndarray, baseline=None, steps: int = 64,
                                  normalize: bool = True, target=None, temporal: bool = False,
                                  seed: int = 0) -> Attribution:
    """For every ``t``, integrate gradients on ``x[:t]`` while moving only step ``t``.

    Preceding steps keep their observed values; the explained output is the
    model's prediction at ``t`` (its argmax for classification unless a fixed
    ``target`` is given). ``extras["per_time"]`` holds the feature-summed scores,
    divided by the L2 norm of the full matrix when ``normalize`` is set.
    """
    require_causal(model, "temporal_integrated_gradients")
    x = np.asarray(x, dtype=np.float64)
    T, N = x.shape
    x_bar = as_baseline(baseline).resolve(x, np.random.default_rng(seed))
    alphas, weights = trapezoid_grid(steps)
    values = np.zeros((T, N))
    targets = []
    for t in range(T):
        crop = x[: t + 1]
        tgt = resolve_target(model, crop, target)
        targets.append(tgt)
        delta = x[t] - x_bar[t]
        if not delta.any():
            continue
        path = np.repeat(crop[None], steps, axis=0)
        path[:, t, :] = x_bar[t][None] + alphas[:, None] * delta[None]
        grads = input_gradients(model, path, tgt)[:, t, :]
        values[t] = delta * (weights @ grads)
    per_time = values.sum(axis=1)
    norm = np.linalg.norm(values)
    if normalize and norm > 0:
        per_time = per_time / norm
    if temporal:
        out = np.zeros((T, T, N))
        out[np.arange(T), np.arange(T)] = values
        values = out
    return Attribution(values, "temporal_integrated_gradients", targets,
                       {"steps": steps, "baseline": as_baseline(baseline), "normalize": normalize,
                        "seed": seed},
                       {"per_time": per_time})


def time_forward_tunnel(inner: Callable[..., Attribution], model: Model, x: np.ndarray,
                        temporal: bool = False, target=None, **options) -> Attribution:
    """Run ``inner`` on every prefix ``x[:t]`` explaining the prediction at ``t``.

    Static mode keeps row ``t`` of each prefix attribution; temporal mode keeps
    the whole prefix attribution as slice ``t`` of a ``(T, T, N)`` array.
    """
    require_causal(model, "time_forward_tunnel")
    x = np.asarray(x, dtype=np.float64)
    T, N = x.shape
    static = np.zeros((T, N))
    full = np.zeros((T, T, N)) if temporal else None
    targets = []
    for t in range(T):
        crop = x[: t + 1]
        tgt = resolve_target(model, crop, target)
        targets.append(tgt)
        a = inner(model, crop, target=tgt, **options)
        vals = a.values
        static[t] = vals[t]
        if temporal:
            full[t, : t + 1] = vals
    name = getattr(inner, "__name__", "method")
    return Attribution(full if temporal else static, f"time_forward_tunnel({name})", targets,
                       dict(options, inner=name))
