"""Weighted linear surrogates over binary cell masks: LIME and KernelSHAP.

A mask ``z`` keeps cell ``j`` when ``z_j = 1`` and replaces it by the
baseline otherwise. The LOF kernel weighs each perturbed input by how typical
it is of the background set, ``1 / max(1, LOF)``, instead of by its distance
to the explained input.
"""

from __future__ import annotations

import itertools
import logging
import warnings
from math import comb

import numpy as np

from ..models import Model
from .base import Attribution, as_baseline, evaluate, resolve_target
from .lof import LOF, similarity_score

logger = logging.getLogger(__name__)

RIDGE = 1e-6
EXHAUSTIVE_LIMIT = 12


class SingularSystemWarning(RuntimeWarning):
    pass


def weighted_lstsq(A: np.ndarray, y: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Solve ``min sum w (y - A b)^2``; falls back to a tiny ridge when rank deficient."""
    sw = np.sqrt(w)
    Aw, yw = A * sw[:, None], y * sw
    if np.linalg.matrix_rank(Aw) < A.shape[1]:
        warnings.warn("singular regression system; using ridge fallback (lambda=1e-6)",
                      SingularSystemWarning, stacklevel=3)
        return np.linalg.solve(Aw.T @ Aw + RIDGE * np.eye(A.shape[1]), Aw.T @ yw)
    return np.linalg.lstsq(Aw, yw, rcond=None)[0]


def _lof_weights(perturbed: np.ndarray, background, k: int, T: int) -> np.ndarray:
    if background is None or len(background) == 0:
        raise ValueError("the lof kernel needs a background set")
    bg = np.asarray(background, dtype=np.float64)
    # crop (M, T', N) backgrounds to the explained prefix
    bg = bg[:, :T].reshape(len(bg), -1) if bg.ndim == 3 else bg
    lof, _ = LOF(bg, k).score(perturbed.reshape(len(perturbed), -1))
    return similarity_score(lof)


def _distance_weights(x_flat: np.ndarray, pert: np.ndarray, distance: str) -> np.ndarray:
    if distance == "cosine":
        nx = np.linalg.norm(x_flat)
        npert = np.linalg.norm(pert, axis=1)
        denom = nx * npert
        cos = np.divide(pert @ x_flat, denom, out=np.zeros(len(pert)), where=denom > 0)
        d = 1.0 - cos
    elif distance == "euclidean":
        d = np.linalg.norm(pert - x_flat[None], axis=1)
    else:
        raise ValueError(f"unknown distance {distance!r}")
    width = 0.25 * np.sqrt(x_flat.size)
    return np.exp(-(d ** 2) / width ** 2)


def _setup(model, x, baseline, seed, target):
    x = np.asarray(x, dtype=np.float64)
    rng = np.random.default_rng(seed)
    x_bar = as_baseline(baseline).resolve(x, rng)
    return x, x_bar, rng, resolve_target(model, x, target)


def lime(model: Model, x: np.ndarray, n_samples: int = 256, kernel: str = "distance",
         distance: str = "cosine", baseline=None, background=None, lof_k: int = 5,
         target=None, seed: int = 0) -> Attribution:
    """LIME with Bernoulli(0.5) masks and an intercept.

    ``kernel`` is ``distance`` (exponential kernel on cosine/euclidean
    distance), ``uniform`` (all weights one) or ``lof``.
    """
    if kernel not in ("distance", "uniform", "lof"):
        raise ValueError(f"unknown lime kernel {kernel!r}")
    x, x_bar, rng, tgt = _setup(model, x, baseline, seed, target)
    T, N = x.shape
    d = T * N
    if n_samples < d + 2:
        raise ValueError(f"lime needs n_samples >= T*N + 2 = {d + 2}, got {n_samples}")
    Z = (rng.random((n_samples, d)) < 0.5).astype(np.float64)
    pert = Z * x.reshape(-1) + (1.0 - Z) * x_bar.reshape(-1)
    y = evaluate(model, pert.reshape(-1, T, N), tgt)
    if kernel == "distance":
        w = _distance_weights(x.reshape(-1), pert, distance)
    elif kernel == "uniform":
        w = np.ones(n_samples)
    else:
        w = _lof_weights(pert, background, lof_k, T)
    coef = weighted_lstsq(np.hstack([np.ones((n_samples, 1)), Z]), y, w)
    name = "lof_lime" if kernel == "lof" else "lime"
    return Attribution(coef[1:].reshape(T, N), name, [tgt],
                       {"n_samples": n_samples, "kernel": kernel, "distance": distance,
                        "baseline": as_baseline(baseline), "lof_k": lof_k, "seed": seed},
                       {"intercept": float(coef[0])})


def shapley_kernel_weight(d: int, size: np.ndarray) -> np.ndarray:
    size = np.asarray(size)
    binom = np.array([comb(d, int(s)) for s in size], dtype=np.float64)
    return (d - 1) / (binom * size * (d - size))


def _all_coalitions(d: int) -> np.ndarray:
    Z = np.array(list(itertools.product((0.0, 1.0), repeat=d)))
    size = Z.sum(axis=1)
    return Z[(size > 0) & (size < d)]


def _sample_coalitions(d: int, n: int, rng: np.random.Generator) -> np.ndarray:
    sizes = np.arange(1, d)
    p = (d - 1) / (sizes * (d - sizes))
    p = p / p.sum()
    drawn = rng.choice(sizes, size=n, p=p)
    Z = np.zeros((n, d))
    for r, s in enumerate(drawn):
        Z[r, rng.choice(d, size=s, replace=False)] = 1.0
    return Z


def kernel_shap(model: Model, x: np.ndarray, n_samples: int | str | None = None,
                kernel: str = "shap", baseline=None, background=None, lof_k: int = 5,
                target=None, seed: int = 0) -> Attribution:
    """KernelSHAP with the efficiency constraint built into the regression.

    ``n_samples="exhaustive"`` (the default when T*N <= 12) enumerates every
    coalition with Shapley-kernel weights, which yields exact Shapley values.
    Otherwise coalition sizes are drawn from the Shapley kernel and all samples
    weigh one. ``kernel="lof"`` multiplies in the LOF similarity.
    """
    if kernel not in ("shap", "lof"):
        raise ValueError(f"unknown kernel_shap kernel {kernel!r}")
    x, x_bar, rng, tgt = _setup(model, x, baseline, seed, target)
    T, N = x.shape
    d = T * N
    if n_samples is None:
        n_samples = "exhaustive" if d <= EXHAUSTIVE_LIMIT else 2 * d + 128
    exhaustive = n_samples == "exhaustive"
    if exhaustive:
        if d > 20:
            raise ValueError(f"exhaustive enumeration over {d} cells is too large")
        Z = _all_coalitions(d) if d > 1 else np.zeros((0, 1))
        w = shapley_kernel_weight(d, Z.sum(axis=1)) if len(Z) else np.zeros(0)
    else:
        n_samples = int(n_samples)
        if n_samples < d + 2:
            raise ValueError(f"kernel_shap needs n_samples >= T*N + 2 = {d + 2}, got {n_samples}")
        Z = _sample_coalitions(d, n_samples, rng)
        w = np.ones(n_samples)
    f_full, f_empty = evaluate(model, np.stack([x, x_bar]), tgt)
    delta = f_full - f_empty
    options = {"n_samples": n_samples, "kernel": kernel, "baseline": as_baseline(baseline),
               "lof_k": lof_k, "seed": seed}
    name = "lof_kernel_shap" if kernel == "lof" else "kernel_shap"
    if d == 1:
        return Attribution(np.full((T, N), delta), name, [tgt], options)
    pert = Z * x.reshape(-1) + (1.0 - Z) * x_bar.reshape(-1)
    y = evaluate(model, pert.reshape(-1, T, N), tgt)
    if kernel == "lof":
        w = w * _lof_weights(pert, background, lof_k, T)
    # eliminate the last coefficient with sum(phi) = f(x) - f(x_bar)
    A = Z[:, :-1] - Z[:, -1:]
    target_y = y - f_empty - Z[:, -1] * delta
    phi = weighted_lstsq(A, target_y, w)
    phi = np.append(phi, delta - phi.sum())
    return Attribution(phi.reshape(T, N), name, [tgt], options, {"base_value": float(f_empty)})


def lof_lime(model, x, **kw):
    return lime(model, x, kernel="lof", **kw)


def lof_kernel_shap(model, x, **kw):
    return kernel_shap(model, x, kernel="lof", **kw)
