"""Shared types for attribution methods."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import autodiff as ad
from ..models import Model


class CausalModelRequired(ValueError):
    """Raised when a temporal method is given a model that cannot take cropped inputs."""


@dataclass
class Attribution:
    """Per-cell saliency, ``(T, N)`` or temporal ``(T, T, N)``.

    ``targets`` holds the explained output index per time step (one entry for
    static methods). ``extras`` carries method-specific side outputs.
    """

    values: np.ndarray
    method: str
    targets: list = field(default_factory=list)
    options: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim not in (2, 3):
            raise ValueError(f"attribution must be (T, N) or (T, T, N), got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise FloatingPointError(f"{self.method} produced non-finite attributions")
        if self.temporal:
            T = self.values.shape[0]
            if self.values.shape[1] != T:
                raise ValueError(f"temporal attribution must be (T, T, N), got {self.values.shape}")
            if (self.values[np.triu(np.ones((T, T), dtype=bool), k=1)] != 0).any():
                raise ValueError("temporal attribution assigns importance to future steps")

    @property
    def temporal(self) -> bool:
        return self.values.ndim == 3


@dataclass
class BaselineSpec:
    """Reference input: ``zeros``, ``constant`` (``value``) or ``sample`` from ``background``."""

    kind: str = "zeros"
    value: float = 0.0
    background: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("zeros", "constant", "sample"):
            raise ValueError(f"unknown baseline kind {self.kind!r}")
        if self.kind == "sample":
            if self.background is None or len(self.background) == 0:
                raise ValueError("sample baseline needs a non-empty background set")
            self.background = np.asarray(self.background, dtype=np.float64)

    def resolve(self, x: np.ndarray, rng: np.random.Generator | None = None) -> np.ndarray:
        """A concrete baseline with the shape of ``x`` (background cropped to ``len(x)``)."""
        if self.kind == "zeros":
            return np.zeros_like(x)
        if self.kind == "constant":
            return np.full_like(x, self.value)
        rng = rng if rng is not None else np.random.default_rng(0)
        pick = self.background[rng.integers(len(self.background))]
        return pick[: x.shape[0]].copy()

    def to_dict(self) -> dict:
        return {"kind": self.kind, "value": self.value}


def as_baseline(baseline) -> BaselineSpec:
    if baseline is None:
        return BaselineSpec()
    if isinstance(baseline, BaselineSpec):
        return baseline
    if isinstance(baseline, (int, float)):
        return BaselineSpec("constant", float(baseline))
    if isinstance(baseline, str):
        return BaselineSpec(baseline)
    raise TypeError(f"cannot interpret {baseline!r} as a baseline")


def resolve_target(model: Model, x: np.ndarray, target=None) -> int:
    """Explained output index: given, argmax of the prediction, or 0 for regression."""
    n_out = model.n_outputs
    if target is not None:
        target = int(target)
        if not 0 <= target < n_out:
            raise IndexError(f"target {target} out of range for {n_out} outputs")
        return target
    if model.task == "regression":
        return 0
    return int(np.argmax(model.final_output(x[None]).data[0]))


def scalar_output(model: Model, x: ad.Tensor, target: int) -> ad.Tensor:
    """``(B,)`` explained outputs for a batch ``(B, T, N)``."""
    return model.final_output(x)[:, target]


def evaluate(model: Model, xs: np.ndarray, target: int, chunk: int = 2048) -> np.ndarray:
    """Explained output for a batch of inputs, evaluated in chunks."""
    out = [scalar_output(model, ad.constant(xs[i:i + chunk]), target).data
           for i in range(0, len(xs), chunk)]
    return np.concatenate(out)


def input_gradients(model: Model, xs: np.ndarray, target: int, chunk: int = 1024) -> np.ndarray:
    """Gradient of the explained output with respect to every input in the batch."""
    grads = []
    for i in range(0, len(xs), chunk):
        xt = ad.tensor(xs[i:i + chunk])
        y = scalar_output(model, xt, target)
        grads.append(ad.grad(y, [xt], np.ones(y.shape))[0])
    return np.concatenate(grads)


def require_causal(model: Model, name: str) -> None:
    if not model.recurrent:
        raise CausalModelRequired(
            f"{name} crops the series at every step and needs a causal model that accepts "
            f"variable-length input; {model.arch!r} requires a fixed window")


# -- serialization ----------------------------------------------------------

def write_attributions(attrs: list[Attribution], directory, seed=None, model_hash=None) -> None:
    """One CSV for a batch of attributions plus ``meta.json``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    temporal = attrs[0].temporal
    with open(directory / "attributions.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["b", "t", "t_prime", "f", "value"] if temporal else ["b", "t", "f", "value"])
        for b, a in enumerate(attrs):
            for idx in np.ndindex(a.values.shape):
                w.writerow([b, *idx, repr(float(a.values[idx]))])
    meta = {"method": attrs[0].method, "options": _jsonable(attrs[0].options), "seed": seed,
            "model_hash": model_hash, "shape": [len(attrs), *attrs[0].values.shape],
            "temporal": temporal}
    with open(directory / "meta.json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_attributions(directory) -> tuple[np.ndarray, dict]:
    directory = Path(directory)
    meta_path, csv_path = directory / "meta.json", directory / "attributions.csv"
    for p in (meta_path, csv_path):
        if not p.exists():
            raise FileNotFoundError(f"missing attribution file {p}")
    meta = json.loads(meta_path.read_text())
    values = np.zeros(meta["shape"])
    with open(csv_path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for row in reader:
            idx = tuple(int(v) for v in row[:-1])
            values[idx] = float(row[-1])
    return values, meta


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items() if not isinstance(v, np.ndarray)}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, BaselineSpec):
        return obj.to_dict()
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if callable(obj):
        return getattr(obj, "__name__", repr(obj))
    return obj
