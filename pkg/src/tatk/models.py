"""Differentiable predictors over time series, SGD training and weight files.

Every model maps a batch ``(B, T, N)`` to logits. Feed-forward models return
``(B, C)``; recurrent (causal) models return one prediction per step,
``(B, T, C)``. ``output`` applies the task link (softmax for classification,
identity for regression) and is what attribution methods explain.
"""

from __future__ import annotations

import copy
import hashlib
import io
import json
import logging
import struct
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

logger = logging.getLogger(__name__)

ACTIVATIONS = ("relu", "softplus", "tanh", "sigmoid", "identity")
TASKS = ("binary", "multiclass", "regression")
MAGIC = b"TATK"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class Activation:
    kind: str
    beta: float = 1.0

    def __post_init__(self):
        if self.kind not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.kind!r}; expected one of {ACTIVATIONS}")

    def __call__(self, z: Tensor) -> Tensor:
        if self.kind == "relu":
            return ad.relu(z)
        if self.kind == "softplus":
            return ad.softplus(z, self.beta)
        if self.kind == "tanh":
            return ad.tanh(z)
        if self.kind == "sigmoid":
            return ad.sigmoid(z)
        return ad.identity(z)


class Model:
    """Base class: parameters in an ordered dict of arrays plus activation modules."""

    recurrent = False
    arch = "model"

    def __init__(self, task: str = "regression"):
        if task not in TASKS:
            raise ValueError(f"unknown task {task!r}; expected one of {TASKS}")
        self.task = task
        self.params: dict[str, np.ndarray] = {}
        self.activations: list[Activation] = []

    @property
    def n_outputs(self) -> int:
        raise NotImplementedError

    def descriptor(self) -> dict:
        raise NotImplementedError

    def _logits(self, x: Tensor, p: dict[str, Tensor]) -> Tensor:
        raise NotImplementedError

    def _param_tensors(self, trainable: bool) -> dict[str, Tensor]:
        return {k: Tensor(v, requires_grad=trainable) for k, v in self.params.items()}

    def check_input(self, x: Tensor) -> None:
        if x.ndim != 3:
            raise ad.ShapeError(f"{self.arch}: expected input (B, T, N), got {x.shape}")

    def logits(self, x, params: dict[str, Tensor] | None = None) -> Tensor:
        x = x if isinstance(x, Tensor) else ad.constant(x)
        self.check_input(x)
        return self._logits(x, params if params is not None else self._param_tensors(False))

    def output(self, x, params: dict[str, Tensor] | None = None) -> Tensor:
        """Probabilities for classification tasks, raw values for regression."""
        z = self.logits(x, params)
        return ad.softmax(z) if self.task != "regression" else z

    def predict(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 2
        out = self.output(x[None] if single else x).data
        return out[0] if single else out

    def final_output(self, x) -> Tensor:
        """Output used as the explained prediction: the last step for recurrent models."""
        out = self.output(x)
        return out[:, -1, :] if self.recurrent else out

    # -- activation modules --------------------------------------------------

    def list_activations(self) -> list[Activation]:
        return list(self.activations)

    def replace_activation(self, index: int, act: Activation) -> "Model":
        new = copy.copy(self)
        new.activations = list(self.activations)
        new.activations[index] = act
        return new

    def swap_activations(self, from_kind: str, to_kind: str, beta: float = 1.0) -> "Model":
        """New model sharing parameters with every ``from_kind`` activation replaced."""
        for kind in (from_kind, to_kind):
            if kind not in ACTIVATIONS:
                raise ValueError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}")
        if not any(a.kind == from_kind for a in self.activations):
            warnings.warn(f"{self.arch} has no {from_kind!r} activation; swap is a no-op",
                          stacklevel=2)
        new = copy.copy(self)
        new.activations = [Activation(to_kind, beta) if a.kind == from_kind else a
                           for a in self.activations]
        return new

    def copy(self) -> "Model":
        new = copy.copy(self)
        new.params = {k: v.copy() for k, v in self.params.items()}
        new.activations = list(self.activations)
        return new

    def fingerprint(self) -> str:
        return hashlib.sha256(dumps_model(self)).hexdigest()[:16]


def _init(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class MLP(Model):
    """Feed-forward net on the flattened window; ``units[0]`` must equal T*N."""

    arch = "mlp"

    def __init__(self, units: Sequence[int], activation: str = "relu", task: str = "regression",
                 seed: int = 0):
        super().__init__(task)
        units = [int(u) for u in units]
        if len(units) < 2:
            raise ValueError("MLP needs at least input and output sizes")
        self.units = units
        rng = np.random.default_rng(seed)
        for i, (a, b) in enumerate(zip(units[:-1], units[1:])):
            self.params[f"W{i}"] = _init(rng, a, (a, b))
            self.params[f"b{i}"] = _init(rng, a, (b,))
        self.activations = [Activation(activation) for _ in units[1:-1]]

    @property
    def n_outputs(self) -> int:
        return self.units[-1]

    def check_input(self, x: Tensor) -> None:
        super().check_input(x)
        if x.shape[1] * x.shape[2] != self.units[0]:
            raise ad.ShapeError(f"mlp: input window {x.shape[1:]} does not flatten to "
                                f"{self.units[0]} features (feed-forward models need fixed T)")

    def _logits(self, x, p):
        h = ad.reshape(x, (x.shape[0], self.units[0]))
        n_layers = len(self.units) - 1
        for i in range(n_layers):
            h = ad.add(ad.matmul(h, p[f"W{i}"]), p[f"b{i}"])
            if i < n_layers - 1:
                h = self.activations[i](h)
        return h

    def descriptor(self) -> dict:
        return {"arch": self.arch, "units": self.units, "task": self.task,
                "activations": [[a.kind, a.beta] for a in self.activations]}


class RNN(Model):
    """Single-layer Elman network with a linear head at every step.

    ``h_t = act(x_t W_x + h_{t-1} W_h + b)``, ``y_t = h_t W_o + c``.
    """

    recurrent = True
    arch = "rnn"

    def __init__(self, n_features: int, hidden: int, n_outputs: int, task: str = "multiclass",
                 activation: str = "tanh", seed: int = 0):
        super().__init__(task)
        self.n_features, self.hidden, self._n_out = int(n_features), int(hidden), int(n_outputs)
        rng = np.random.default_rng(seed)
        self.params["W_x"] = _init(rng, n_features, (n_features, hidden))
        self.params["W_h"] = _init(rng, hidden, (hidden, hidden))
        self.params["b"] = np.zeros(hidden)
        self.params["W_o"] = _init(rng, hidden, (hidden, n_outputs))
        self.params["c"] = np.zeros(n_outputs)
        self.activations = [Activation(activation)]

    @property
    def n_outputs(self) -> int:
        return self._n_out

    def check_input(self, x: Tensor) -> None:
        super().check_input(x)
        if x.shape[2] != self.n_features:
            raise ad.ShapeError(f"rnn: expected {self.n_features} features, got {x.shape[2]}")

    def _logits(self, x, p):
        B, T, _ = x.shape
        act = self.activations[0]
        xw = ad.matmul(x, p["W_x"])
        h = None
        outs = []
        for t in range(T):
            z = ad.add(xw[:, t, :], p["b"])
            if h is not None:
                z = ad.add(z, ad.matmul(h, p["W_h"]))
            h = act(z)
            outs.append(ad.add(ad.matmul(h, p["W_o"]), p["c"]))
        return ad.stack(outs, axis=1)

    def descriptor(self) -> dict:
        return {"arch": self.arch, "n_features": self.n_features, "hidden": self.hidden,
                "n_outputs": self._n_out, "task": self.task,
                "activations": [[a.kind, a.beta] for a in self.activations]}


class LinearModel(Model):
    """``F(x) = <w, x> + b`` over the whole window; regression, one output."""

    arch = "linear"

    def __init__(self, weights: np.ndarray, bias: float = 0.0):
        super().__init__("regression")
        w = np.asarray(weights, dtype=np.float64)
        if w.ndim != 2:
            raise ValueError("weights must have shape (T, N)")
        self.shape = w.shape
        self.params["w"] = w.reshape(-1, 1).copy()
        self.params["b"] = np.array([float(bias)])

    @property
    def n_outputs(self) -> int:
        return 1

    def check_input(self, x):
        super().check_input(x)
        if x.shape[1:] != self.shape:
            raise ad.ShapeError(f"linear: expected window {self.shape}, got {x.shape[1:]}")

    def _logits(self, x, p):
        flat = ad.reshape(x, (x.shape[0], x.shape[1] * x.shape[2]))
        return ad.add(ad.matmul(flat, p["w"]), p["b"])

    def descriptor(self) -> dict:
        return {"arch": self.arch, "shape": list(self.shape), "task": self.task, "activations": []}


class WhiteBoxRegressor(Model):
    """Causal sum of squares over a salient mask: ``y_t = sum_{t'<=t, i} m[t', i] x[t', i]^2``.

    The last step gives the full-window regressor; earlier steps make the model
    usable on cropped inputs.
    """

    recurrent = True
    arch = "whitebox"

    def __init__(self, mask: np.ndarray):
        super().__init__("regression")
        self.mask = np.asarray(mask, dtype=np.float64)
        if self.mask.ndim != 2:
            raise ValueError("mask must have shape (T, N)")

    @property
    def n_outputs(self) -> int:
        return 1

    def check_input(self, x):
        super().check_input(x)
        if x.shape[1] > self.mask.shape[0] or x.shape[2] != self.mask.shape[1]:
            raise ad.ShapeError(f"whitebox: input {x.shape[1:]} exceeds mask {self.mask.shape}")

    def _logits(self, x, p):
        T = x.shape[1]
        sq = ad.mul(ad.mul(x, x), self.mask[:T])
        per_t = ad.tsum(sq, axis=2)
        running = None
        outs = []
        for t in range(T):
            step = per_t[:, t:t + 1]
            running = step if running is None else ad.add(running, step)
            outs.append(running)
        return ad.stack(outs, axis=1)

    def descriptor(self) -> dict:
        return {"arch": self.arch, "mask": self.mask.tolist(), "task": self.task,
                "activations": []}


# -- training ---------------------------------------------------------------

@dataclass
class TrainConfig:
    epochs: int = 50
    lr: float = 0.1
    batch_size: int = 32
    loss: str = "cross_entropy"
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.lr <= 0:
            raise ValueError(f"learning rate must be positive, got {self.lr}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.loss not in ("cross_entropy", "mse"):
            raise ValueError(f"unknown loss {self.loss!r}")


@dataclass
class TrainResult:
    model: Model
    losses: list[float] = field(default_factory=list)


def _loss(model: Model, x: np.ndarray, y: np.ndarray, loss: str, params) -> Tensor:
    z = model.logits(x, params)
    if loss == "cross_entropy":
        if model.task == "regression":
            raise ValueError("cross_entropy loss needs a classification task")
        if y.shape != z.shape[:-1]:
            raise ad.ShapeError(f"labels shape {y.shape} does not match predictions {z.shape[:-1]}")
        return ad.cross_entropy(z, y)
    target = y.reshape(z.shape) if y.size == z.data.size else None
    if target is None:
        raise ad.ShapeError(f"labels shape {y.shape} does not match predictions {z.shape}")
    return ad.mse(z, target)


def train(model: Model, inputs: np.ndarray, labels: np.ndarray, cfg: TrainConfig) -> TrainResult:
    """Mini-batch SGD on a copy of ``model``; returns it with the per-epoch loss curve."""
    if labels is None:
        raise ValueError("training needs labels")
    inputs = np.asarray(inputs, dtype=np.float64)
    labels = np.asarray(labels)
    if labels.shape[0] != inputs.shape[0]:
        raise ad.ShapeError(f"{labels.shape[0]} labels for {inputs.shape[0]} series")
    model = model.copy()
    rng = np.random.default_rng(cfg.seed)
    names = list(model.params)
    losses = []
    n = inputs.shape[0]
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            params = model._param_tensors(True)
            try:
                loss = _loss(model, inputs[idx], labels[idx], cfg.loss, params)
            except FloatingPointError as exc:
                raise FloatingPointError(f"non-finite loss at epoch {epoch}") from exc
            grads = ad.grad(loss, [params[k] for k in names])
            for k, g in zip(names, grads):
                model.params[k] = model.params[k] - cfg.lr * g
            total += float(loss.data) * len(idx)
        epoch_loss = total / n
        if not np.isfinite(epoch_loss):
            raise FloatingPointError(f"non-finite loss at epoch {epoch}")
        losses.append(epoch_loss)
        logger.debug("epoch %d loss %.6f", epoch, epoch_loss)
    return TrainResult(model, losses)


def accuracy(model: Model, inputs: np.ndarray, labels: np.ndarray) -> float:
    probs = model.predict(inputs)
    return float(np.mean(probs.argmax(axis=-1) == labels))


# -- serialization ----------------------------------------------------------

def build_model(desc: dict) -> Model:
    arch = desc["arch"]
    if arch == "mlp":
        m = MLP(desc["units"], task=desc["task"])
    elif arch == "rnn":
        m = RNN(desc["n_features"], desc["hidden"], desc["n_outputs"], task=desc["task"])
    elif arch == "linear":
        m = LinearModel(np.zeros(desc["shape"]))
    elif arch == "whitebox":
        m = WhiteBoxRegressor(np.asarray(desc["mask"]))
    else:
        raise ValueError(f"unknown architecture {arch!r}")
    m.activations = [Activation(k, float(b)) for k, b in desc.get("activations", [])]
    return m


def dumps_model(model: Model) -> bytes:
    desc = dict(model.descriptor())
    desc["params"] = [[k, list(v.shape)] for k, v in model.params.items()]
    header = json.dumps(desc, sort_keys=True).encode("utf-8")
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", FORMAT_VERSION))
    buf.write(struct.pack("<I", len(header)))
    buf.write(header)
    for v in model.params.values():
        buf.write(np.ascontiguousarray(v, dtype="<f8").tobytes())
    return buf.getvalue()


def loads_model(blob: bytes) -> Model:
    if blob[:4] != MAGIC:
        raise ValueError("not a model file (bad magic)")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported model file version {version}")
    (hlen,) = struct.unpack_from("<I", blob, 8)
    desc = json.loads(blob[12:12 + hlen].decode("utf-8"))
    model = build_model(desc)
    offset = 12 + hlen
    params = {}
    for name, shape in desc["params"]:
        n = int(np.prod(shape)) if shape else 1
        params[name] = np.frombuffer(blob, dtype="<f8", count=n, offset=offset).astype(np.float64).reshape(shape)
        offset += 8 * n
    if offset != len(blob):
        raise ValueError("model file has trailing bytes")
    model.params = params
    return model


def save_model(model: Model, path) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps_model(model))


def load_model(path) -> Model:
    with open(path, "rb") as fh:
        return loads_model(fh.read())
