"""Attribution quality inferred from prediction shifts under masking."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .. import autodiff as ad
from ..attribution.base import BaselineSpec, as_baseline
from ..attribution.lof import LOF, similarity_score
from ..models import Model

KINDS = ("accuracy", "comprehensiveness", "cross_entropy", "log_odds", "mae", "mse", "sufficiency")
PROBABILITY_KINDS = ("accuracy", "comprehensiveness", "cross_entropy", "log_odds", "sufficiency")
DEFAULT_MODE = {"comprehensiveness": "remove", "sufficiency": "keep"}
PROB_CLIP = 1e-12


@dataclass
class MaskPolicy:
    """Which cells to perturb and how.

    ``fraction`` of the T*N cells is selected on ``side`` (``top`` = most
    important). ``mode="remove"`` perturbs the selection, ``keep`` perturbs its
    complement; ``None`` uses the metric's natural mode. ``weight_fn`` is
    ``None``, ``"lime_cosine"``, ``"lime_euclidean"`` or ``"lof"``.
    """

    fraction: float = 0.2
    side: str = "top"
    mode: str | None = None
    baseline: BaselineSpec = field(default_factory=BaselineSpec)
    noise: float = 0.0
    draws: int = 1
    weight_fn: str | None = None
    lof_k: int = 5
    background: np.ndarray | None = None
    threshold: float = 0.5
    seed: int = 0

    def __post_init__(self):
        self.baseline = as_baseline(self.baseline)
        if not 0.0 < self.fraction <= 1.0:
            raise ValueError(f"fraction must lie in (0, 1], got {self.fraction}")
        if self.side not in ("top", "bottom"):
            raise ValueError(f"side must be 'top' or 'bottom', got {self.side!r}")
        if self.mode not in (None, "remove", "keep"):
            raise ValueError(f"mode must be 'remove' or 'keep', got {self.mode!r}")
        if self.noise < 0:
            raise ValueError("noise must be non-negative")
        if self.draws < 1:
            raise ValueError("draws must be >= 1")
        if self.weight_fn not in (None, "lime_cosine", "lime_euclidean", "lof"):
            raise ValueError(f"unknown weight function {self.weight_fn!r}")
        if self.weight_fn == "lof" and self.background is None:
            raise ValueError("the lof weight needs a background set")

    def label(self) -> str:
        mode = self.mode or "default"
        return f"{self.side}{self.fraction:g}-{mode}"

    def to_dict(self) -> dict:
        return {"fraction": self.fraction, "side": self.side, "mode": self.mode,
                "baseline": self.baseline.to_dict(), "noise": self.noise, "draws": self.draws,
                "weight_fn": self.weight_fn, "lof_k": self.lof_k, "threshold": self.threshold,
                "seed": self.seed}


def n_selected(fraction: float, n_cells: int) -> int:
    # round first: 0.7 * 10 must give 7, not 8
    k = math.ceil(round(fraction * n_cells, 9))
    if k < 1:
        raise ValueError("selection covers zero cells")
    return min(k, n_cells)


def select_cells(attr: np.ndarray, fraction: float, side: str = "top") -> np.ndarray:
    """Boolean mask of the selected cells.

    Cells are ranked once by (attribution descending, flat index ascending);
    ``top`` takes the head of that ranking and ``bottom`` its tail, so
    complementary fractions give complementary masks.
    """
    flat = np.asarray(attr, dtype=np.float64).ravel()
    k = n_selected(fraction, flat.size)
    order = np.lexsort((np.arange(flat.size), -flat))
    chosen = order[:k] if side == "top" else order[flat.size - k:]
    mask = np.zeros(flat.size, dtype=bool)
    mask[chosen] = True
    return mask.reshape(np.shape(attr))


def masked_cells(attr: np.ndarray, policy: MaskPolicy, kind: str | None = None) -> np.ndarray:
    mode = policy.mode
    natural = DEFAULT_MODE.get(kind)
    if mode is None:
        mode = natural or "remove"
    elif natural is not None and mode != natural:
        raise ValueError(f"{kind} is defined for mode={natural!r}, got {mode!r}")
    selected = select_cells(attr, policy.fraction, policy.side)
    return selected if mode == "remove" else ~selected


def perturb(x: np.ndarray, mask: np.ndarray, policy: MaskPolicy) -> np.ndarray:
    """``(draws, T, N)`` inputs with masked cells set to a baseline draw plus noise.

    Draw ``d`` uses its own generator seeded by ``(seed, d)``.
    """
    x = np.asarray(x, dtype=np.float64)
    out = np.empty((policy.draws,) + x.shape)
    for d in range(policy.draws):
        rng = np.random.default_rng([policy.seed, d])
        fill = policy.baseline.resolve(x, rng)
        if policy.noise > 0:
            fill = fill + rng.normal(0.0, policy.noise, size=x.shape)
        out[d] = np.where(mask, fill, x)
    return out


def draw_weights(x: np.ndarray, perturbed: np.ndarray, policy: MaskPolicy) -> np.ndarray:
    D = len(perturbed)
    flat = perturbed.reshape(D, -1)
    if policy.weight_fn is None:
        w = np.ones(D)
    elif policy.weight_fn.startswith("lime"):
        xf = x.ravel()
        if policy.weight_fn == "lime_cosine":
            denom = np.linalg.norm(flat, axis=1) * np.linalg.norm(xf)
            cos = np.divide(flat @ xf, denom, out=np.zeros(D), where=denom > 0)
            dist = 1.0 - cos
        else:
            dist = np.linalg.norm(flat - xf[None], axis=1)
        w = np.exp(-(dist ** 2) / (0.25 * np.sqrt(xf.size)) ** 2)
    else:
        bg = np.asarray(policy.background, dtype=np.float64)[:, : x.shape[0]]
        lof, _ = LOF(bg.reshape(len(bg), -1), policy.lof_k).score(flat)
        w = similarity_score(lof)
    total = w.sum()
    if total <= 0:
        return np.full(D, 1.0 / D)
    return w / total


def _outputs(model: Model, xs: np.ndarray) -> np.ndarray:
    return model.final_output(ad.constant(xs)).data


def _per_draw(kind: str, model: Model, orig: np.ndarray, pert: np.ndarray, label,
              threshold: float) -> np.ndarray:
    if kind in ("mae", "mse"):
        diff = pert - orig[None]
        return np.mean(np.abs(diff) if kind == "mae" else diff ** 2, axis=1)
    c = int(np.argmax(orig))
    if kind in ("comprehensiveness", "sufficiency"):
        return orig[c] - pert[:, c]
    p_o = np.clip(orig, PROB_CLIP, 1 - PROB_CLIP)
    p_p = np.clip(pert, PROB_CLIP, 1 - PROB_CLIP)
    if kind == "log_odds":
        return np.log(p_p[:, c]) - np.log(p_o[c])
    if kind == "cross_entropy":
        # excess cross-entropy: zero when the outputs agree
        return np.sum(p_o[None] * (np.log(p_o)[None] - np.log(p_p)), axis=1)
    ref = c if label is None else int(label)
    if pert.shape[1] == 2:
        pred = (pert[:, 1] > threshold).astype(int)
    else:
        pred = np.argmax(pert, axis=1)
    return (pred == ref).astype(np.float64)


def black_box_metric(kind: str, model: Model, x: np.ndarray, attr: np.ndarray,
                     policy: MaskPolicy, label=None) -> float:
    """One instance: perturb per ``policy`` and compare outputs with the original."""
    if kind not in KINDS:
        raise ValueError(f"unknown black-box metric {kind!r}; expected one of {KINDS}")
    if kind in PROBABILITY_KINDS and model.task == "regression":
        raise ValueError(f"{kind} needs class probabilities; model task is regression")
    x = np.asarray(x, dtype=np.float64)
    attr = np.asarray(attr, dtype=np.float64)
    if attr.shape != x.shape:
        raise ValueError(f"attribution shape {attr.shape} does not match input {x.shape}")
    mask = masked_cells(attr, policy, kind)
    pert = perturb(x, mask, policy)
    w = draw_weights(x, pert, policy)
    outs = _outputs(model, np.concatenate([x[None], pert]))
    values = _per_draw(kind, model, outs[0], outs[1:], label, policy.threshold)
    return float(np.dot(w, values))


def black_box_metric_batch(kind: str, model: Model, xs: np.ndarray, attrs: np.ndarray,
                           policy: MaskPolicy, labels=None) -> float:
    """Mean of the per-instance metric over a batch."""
    vals = [black_box_metric(kind, model, x, a, policy, None if labels is None else labels[i])
            for i, (x, a) in enumerate(zip(xs, attrs))]
    return float(np.mean(vals))


def lipschitz_max(method: Callable, model: Model, x: np.ndarray, radius: float = 0.1,
                  n_samples: int = 10, seed: int = 0, **options) -> float:
    """Largest ``||attr(x) - attr(z)|| / ||x - z||`` over points drawn uniformly in a ball."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    x = np.asarray(x, dtype=np.float64)
    rng = np.random.default_rng(seed)
    base = method(model, x, **options).values
    best = 0.0
    taken = 0
    while taken < n_samples:
        direction = rng.standard_normal(x.shape)
        norm = np.linalg.norm(direction)
        r = radius * rng.random() ** (1.0 / x.size)
        if norm == 0 or r == 0:
            continue
        z = x + direction / norm * r
        dist = np.linalg.norm(z - x)
        if dist == 0:
            continue
        ratio = np.linalg.norm(method(model, z, **options).values - base) / dist
        best = max(best, float(ratio))
        taken += 1
    return best
