"""Cell-level occlusion with fixed or bootstrapped replacements, optionally causal."""

from __future__ import annotations

import numpy as np

from ..models import Model
from .base import Attribution, as_baseline, evaluate, require_causal, resolve_target

STRATEGIES = ("fixed", "augmented", "temporal", "temporal_augmented")


def _replacements(strategy: str, x: np.ndarray, x_bar: np.ndarray, background, draws: int,
                  rng: np.random.Generator) -> np.ndarray:
    """Replacement values ``(draws, T, N)`` for every cell."""
    T, N = x.shape
    if strategy.endswith("augmented"):
        # bootstrap from the same feature across all series and times
        pool = background.reshape(-1, N)
        rows = rng.integers(len(pool), size=(draws, T, N))
        return pool[rows, np.arange(N)[None, None, :]]
    return np.broadcast_to(x_bar, (1, T, N))


def occlusion(model: Model, x: np.ndarray, strategy: str = "fixed", baseline=None,
              background: np.ndarray | None = None, draws: int = 25, target=None,
              seed: int = 0) -> Attribution:
    """Attribution of cell ``(t, i)`` is ``F(x) - mean_draws F(x with x_ti replaced)``.

    Temporal strategies explain the prediction at ``t`` from the prefix
    ``x[:t]`` and only replace cells of its last step.
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown occlusion strategy {strategy!r}; expected one of {STRATEGIES}")
    if draws < 1:
        raise ValueError("draws must be >= 1")
    augmented = strategy.endswith("augmented")
    if augmented:
        if background is None or len(background) == 0:
            raise ValueError(f"{strategy} occlusion needs a background set")
        background = np.asarray(background, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    T, N = x.shape
    rng = np.random.default_rng(seed)
    x_bar = as_baseline(baseline).resolve(x, rng)
    repl = _replacements(strategy, x, x_bar, background, draws, rng)
    D = repl.shape[0]
    values = np.zeros((T, N))
    options = {"strategy": strategy, "baseline": as_baseline(baseline), "draws": draws, "seed": seed}

    if not strategy.startswith("temporal"):
        tgt = resolve_target(model, x, target)
        ref = evaluate(model, x[None], tgt)[0]
        batch = np.repeat(x[None], N * T * D, axis=0).reshape(T, N, D, T, N)
        for t in range(T):
            for i in range(N):
                batch[t, i, :, t, i] = repl[:, t, i]
        out = evaluate(model, batch.reshape(-1, T, N), tgt).reshape(T, N, D)
        values = ref - out.mean(axis=2)
        return Attribution(values, f"occlusion[{strategy}]", [tgt], options)

    require_causal(model, f"{strategy} occlusion")
    targets = []
    for t in range(T):
        crop = x[: t + 1]
        tgt = resolve_target(model, crop, target)
        targets.append(tgt)
        ref = evaluate(model, crop[None], tgt)[0]
        batch = np.repeat(crop[None], N * D, axis=0).reshape(N, D, t + 1, N)
        for i in range(N):
            batch[i, :, t, i] = repl[:, t, i]
        out = evaluate(model, batch.reshape(-1, t + 1, N), tgt).reshape(N, D)
        values[t] = ref - out.mean(axis=1)
    return Attribution(values, f"occlusion[{strategy}]", targets, options)


def augmented_occlusion(model, x, **kw):
    return occlusion(model, x, strategy="augmented", **kw)


def temporal_occlusion(model, x, **kw):
    return occlusion(model, x, strategy="temporal", **kw)


def temporal_augmented_occlusion(model, x, **kw):
    return occlusion(model, x, strategy="temporal_augmented", **kw)
