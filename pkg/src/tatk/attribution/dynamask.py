"""Learned soft masks that blend each cell with a temporal average."""

from __future__ import annotations

import logging

import numpy as np

from .. import autodiff as ad
from ..models import Model
from .base import Attribution

logger = logging.getLogger(__name__)


def moving_average(x: np.ndarray, window: int) -> np.ndarray:
    """Centered per-feature moving average, shrinking at the edges.

    ``window == 1`` would reproduce ``x``; the per-feature global time mean is
    used instead so that masking still removes information.
    """
    if window < 1 or window % 2 == 0:
        raise ValueError(f"window must be odd and >= 1, got {window}")
    T = x.shape[0]
    if window == 1:
        return np.broadcast_to(x.mean(axis=0), x.shape).copy()
    half = window // 2
    csum = np.vstack([np.zeros((1, x.shape[1])), np.cumsum(x, axis=0)])
    lo = np.clip(np.arange(T) - half, 0, T)
    hi = np.clip(np.arange(T) + half + 1, 0, T)
    return (csum[hi] - csum[lo]) / (hi - lo)[:, None]


def _fit_mask(model, x, avg, ref, scale, lam, epochs, lr, mode, target):
    T, N = x.shape
    m = np.full((T, N), 0.5)
    ramp = max(1, epochs // 3)
    xt, at = ad.constant(x[None]), ad.constant(avg[None])
    for epoch in range(epochs):
        lam_e = lam * min(1.0, (epoch + 1) / ramp)
        mt = ad.tensor(m[None])
        keep = mt if mode == "preserve" else ad.sub(1.0, mt)
        phi = ad.add(ad.mul(keep, xt), ad.mul(ad.sub(1.0, keep), at))
        out = model.final_output(phi)
        if target is not None:
            out = out[:, target:target + 1]
        diff = ad.sub(out, ref)
        fidelity = ad.mul(ad.tsum(ad.mul(diff, diff)), 1.0 / scale)
        if mode == "delete":
            fidelity = ad.neg(fidelity)
        loss = ad.add(fidelity, ad.mul(ad.tsum(mt), lam_e))
        (g,) = ad.grad(loss, [mt])
        m = np.clip(m - lr * g[0], 0.0, 1.0)
        if not np.isfinite(m).all():
            raise FloatingPointError(f"dynamask diverged (lr={lr})")
    return m


def dynamask(model: Model, x: np.ndarray, keep_ratio: float = 0.1, epochs: int = 100,
             lr: float = 0.5, window: int = 5, mode: str = "preserve", target=None,
             bisection_steps: int = 10, lambda_range: tuple[float, float] = (1e-3, 10.0),
             seed: int = 0) -> Attribution:
    """Mask ``m`` in ``[0, 1]^{T x N}`` learned by projected gradient descent.

    The perturbed input is ``m * x + (1 - m) * moving_average(x)``. Preserve
    mode keeps the prediction with a sparse mask, delete mode destroys it with
    a sparse deletion mask. The fidelity term is divided by its fully masked
    value, and the L1 penalty ramps up linearly over the
    first third of the epochs. The L1 weight lambda is bisected on a log scale
    so the mean mask lands near ``keep_ratio``.
    """
    if not 0.0 < keep_ratio < 1.0:
        raise ValueError("keep_ratio must lie in (0, 1)")
    if mode not in ("preserve", "delete"):
        raise ValueError(f"unknown dynamask mode {mode!r}")
    if epochs < 1:
        raise ValueError("epochs must be >= 1")
    x = np.asarray(x, dtype=np.float64)
    avg = moving_average(x, window)

    def outputs(inp):
        out = model.final_output(ad.constant(inp[None])).data
        return out[:, target:target + 1] if target is not None else out

    ref = outputs(x)
    scale = float(np.sum((outputs(avg) - ref) ** 2))
    if scale <= 1e-12:
        # prediction ignores the perturbation: no fidelity signal, only sparsity
        scale = np.inf
    ref_t = ad.constant(ref)

    def fit(lam):
        if np.isinf(scale):
            return np.zeros_like(x)
        return _fit_mask(model, x, avg, ref_t, scale, lam, epochs, lr, mode, target)

    lo, hi = np.log(lambda_range[0]), np.log(lambda_range[1])
    best, best_gap = None, np.inf
    for _ in range(bisection_steps):
        mid = 0.5 * (lo + hi)
        m = fit(np.exp(mid))
        gap = m.mean() - keep_ratio
        if abs(gap) < best_gap:
            best, best_gap, best_lam = m, abs(gap), float(np.exp(mid))
        if np.isinf(scale):
            break
        if gap > 0:
            lo = mid
        else:
            hi = mid
    logger.debug("dynamask lambda=%.4g mean mask=%.4f", best_lam, best.mean())
    return Attribution(best, "dynamask", [target],
                       {"keep_ratio": keep_ratio, "epochs": epochs, "lr": lr, "window": window,
                        "mode": mode, "seed": seed},
                       {"lambda": best_lam})
