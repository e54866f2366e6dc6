"""Synthetic time-series generators with known ground-truth saliency."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .models import WhiteBoxRegressor


@dataclass
class SeriesBatch:
    """``inputs`` is ``(B, T, N)``; labels are ``(B,)`` static or ``(B, T)`` temporal."""

    inputs: np.ndarray
    labels: np.ndarray | None = None
    background: np.ndarray | None = None
    aux: dict = field(default_factory=dict)

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        if self.inputs.ndim != 3 or min(self.inputs.shape) < 1:
            raise ValueError(f"inputs must be (B, T, N) with B, T, N >= 1, got {self.inputs.shape}")
        if self.labels is not None:
            self.labels = np.asarray(self.labels)
            B, T, _ = self.inputs.shape
            if self.labels.shape not in ((B,), (B, T)):
                raise ValueError(f"labels shape {self.labels.shape} inconsistent with inputs "
                                 f"{self.inputs.shape}")
        if self.background is not None:
            self.background = np.asarray(self.background, dtype=np.float64)
            if self.background.ndim != 3 or self.background.shape[2] != self.inputs.shape[2]:
                raise ValueError(f"background shape {self.background.shape} inconsistent with "
                                 f"inputs {self.inputs.shape}")

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.inputs.shape


@dataclass
class SaliencyTruth:
    """Ground-truth importance, ``(B, T, N)`` or temporal ``(B, T, T, N)``."""

    values: np.ndarray
    kind: str = "binary"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.kind not in ("binary", "real"):
            raise ValueError(f"unknown truth kind {self.kind!r}")
        if self.kind == "binary" and not np.isin(self.values, (0.0, 1.0)).all():
            raise ValueError("binary truth must contain only 0 and 1")
        if self.kind == "real" and (self.values < 0).any():
            raise ValueError("real-valued truth must be non-negative")
        if self.temporal:
            T = self.values.shape[1]
            future = np.triu(np.ones((T, T), dtype=bool), k=1)
            if (self.values[:, future, :] != 0).any():
                raise ValueError("temporal truth assigns importance to future steps")

    @property
    def temporal(self) -> bool:
        return self.values.ndim == 4


# -- ARMA -------------------------------------------------------------------

def _check_stationary(ar: Sequence[float]) -> None:
    if len(ar) == 0:
        return
    # roots of z^p - a1 z^{p-1} - ... - ap must lie inside the unit circle
    roots = np.roots(np.concatenate([[1.0], -np.asarray(ar, dtype=np.float64)]))
    if np.any(np.abs(roots) >= 1.0):
        raise ValueError(f"AR coefficients {list(ar)} are not stationary")


def arma_series(n_series: int, T: int, N: int, ar: Sequence[float], ma: Sequence[float],
                rng: np.random.Generator, burn_in: int = 50) -> np.ndarray:
    """Independent unit-noise ARMA(p, q) series per feature, shape ``(B, T, N)``."""
    _check_stationary(ar)
    ar, ma = np.asarray(ar, dtype=np.float64), np.asarray(ma, dtype=np.float64)
    p, q = len(ar), len(ma)
    L = T + burn_in
    eps = rng.standard_normal((n_series, L, N))
    x = np.zeros((n_series, L, N))
    for t in range(L):
        v = eps[:, t, :].copy()
        for j in range(1, p + 1):
            if t - j >= 0:
                v += ar[j - 1] * x[:, t - j, :]
        for j in range(1, q + 1):
            if t - j >= 0:
                v += ma[j - 1] * eps[:, t - j, :]
        x[:, t, :] = v
    return x[:, burn_in:, :]


def generate_arma(B: int = 32, T: int = 50, N: int = 3, ar: Sequence[float] = (0.5, -0.3),
                  ma: Sequence[float] = (0.3, 0.2), window: tuple[int, int] | None = None,
                  features: Sequence[int] | None = None, seed: int = 0, n_background: int = 32):
    """ARMA inputs explained by a sum-of-squares regressor on a rectangular window.

    ``window`` is the half-open time range ``[t0, t1)``; it defaults to the
    middle fifth of ``T``. ``features`` defaults to ``{0}``.
    Returns ``(batch, truth, model)``.
    """
    if window is None:
        t0 = (2 * T) // 5
        window = (t0, max(t0 + 1, (3 * T) // 5))
    if features is None:
        features = (0,)
    t0, t1 = int(window[0]), int(window[1])
    features = sorted({int(i) for i in features})
    if not (0 <= t0 < t1 <= T) or not features:
        raise ValueError(f"empty or out-of-range salient window t=[{t0},{t1}) features={features}")
    if features[0] < 0 or features[-1] >= N:
        raise ValueError(f"salient features {features} out of range for N={N}")
    rng = np.random.default_rng(seed)
    x = arma_series(B + n_background, T, N, ar, ma, rng)
    mask = np.zeros((T, N))
    mask[t0:t1, features] = 1.0
    model = WhiteBoxRegressor(mask)
    inputs, background = x[:B], x[B:] if n_background else None
    labels = np.einsum("btn,tn->b", inputs ** 2, mask)
    truth = SaliencyTruth(np.broadcast_to(mask, inputs.shape).copy(), "binary")
    batch = SeriesBatch(inputs, labels, background,
                        aux={"window": [t0, t1], "features": features, "ar": list(ar), "ma": list(ma)})
    return batch, truth, model


# -- HMM --------------------------------------------------------------------

HMM_TRANSITION = np.array([[0.9, 0.1], [0.1, 0.9]])


def generate_hmm(B: int = 100, T: int = 50, seed: int = 0,
                 transition: np.ndarray = HMM_TRANSITION, sigma: float = 0.1,
                 n_background: int = 0):
    """Two-state HMM with three features.

    The hidden state picks the salient feature (1 or 2). That feature carries
    ``+-1 + Normal(0, sigma)`` with a fair random sign; the others are
    ``Normal(0, 1)`` noise. The label at ``t`` is ``1[x_{t,salient} > 0]``.
    Returns ``(batch, truth)``; hidden states are in ``batch.aux["states"]``.
    """
    if T < 2:
        raise ValueError("HMM series need T >= 2")
    if B < 1:
        raise ValueError("B must be >= 1")
    transition = np.asarray(transition, dtype=np.float64)
    if transition.shape != (2, 2) or not np.allclose(transition.sum(axis=1), 1.0) \
            or (transition < 0).any():
        raise ValueError("transition must be a 2x2 row-stochastic matrix")
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    rng = np.random.default_rng(seed)
    total = B + n_background
    states = np.zeros((total, T), dtype=int)
    states[:, 0] = rng.integers(0, 2, size=total)
    for t in range(1, T):
        stay = rng.random(total) < transition[states[:, t - 1], states[:, t - 1]]
        states[:, t] = np.where(stay, states[:, t - 1], 1 - states[:, t - 1])
    x = rng.standard_normal((total, T, 3))
    sign = np.where(rng.random((total, T)) < 0.5, -1.0, 1.0)
    salient_value = sign + sigma * rng.standard_normal((total, T))
    b_idx, t_idx = np.meshgrid(np.arange(total), np.arange(T), indexing="ij")
    x[b_idx, t_idx, states + 1] = salient_value
    labels = (salient_value > 0).astype(int)
    truth = np.zeros((total, T, 3))
    truth[b_idx, t_idx, states + 1] = 1.0
    batch = SeriesBatch(x[:B], labels[:B], x[B:] if n_background else None,
                        aux={"states": states[:B]})
    return batch, SaliencyTruth(truth[:B], "binary")


# -- Hawkes -----------------------------------------------------------------

@dataclass
class HawkesParams:
    """Multivariate exponential-kernel Hawkes process.

    ``alpha[k, n]`` and ``beta[k, n]`` describe how events of type ``n`` excite
    type ``k``.
    """

    mu: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    horizon: float

    def __post_init__(self):
        self.mu = np.atleast_1d(np.asarray(self.mu, dtype=np.float64))
        K = self.mu.shape[0]
        self.alpha = np.asarray(self.alpha, dtype=np.float64).reshape(K, K)
        self.beta = np.asarray(self.beta, dtype=np.float64).reshape(K, K)
        self.horizon = float(self.horizon)

    @property
    def K(self) -> int:
        return self.mu.shape[0]

    def branching_radius(self) -> float:
        return float(np.max(np.abs(np.linalg.eigvals(self.alpha / self.beta))))

    def validate(self) -> None:
        if (self.mu <= 0).any():
            raise ValueError("mu must be positive")
        if (self.alpha < 0).any():
            raise ValueError("alpha must be non-negative")
        if (self.beta <= 0).any():
            raise ValueError("beta must be positive")
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")
        rho = self.branching_radius()
        if rho >= 1.0:
            raise ValueError(f"non-stationary Hawkes process: spectral radius of alpha/beta is {rho:.4g}")


def hawkes_intensity(params: HawkesParams, history, t: float, k: int) -> float:
    """Conditional intensity of type ``k`` at ``t`` from events strictly before ``t``.

    ``history`` is a sequence of ``(time, type)`` pairs sorted by time.
    """
    if t < 0:
        raise ValueError("t must be non-negative")
    times = np.array([h[0] for h in history], dtype=np.float64)
    types = np.array([h[1] for h in history], dtype=int)
    if times.size > 1 and np.any(np.diff(times) < 0):
        raise ValueError("history must be sorted by time")
    past = times < t
    dt = t - times[past]
    n = types[past]
    return float(params.mu[k] + np.sum(params.alpha[k, n] * np.exp(-params.beta[k, n] * dt)))


def simulate_hawkes(params: HawkesParams, rng: np.random.Generator,
                    debug: bool = False) -> list[tuple[float, int]]:
    """Ogata thinning on ``[0, horizon)``; returns sorted ``(time, type)`` events.

    The excitation state ``S[k, n] = sum_i exp(-beta[k, n] (t - t_i^n))`` decays
    between candidates, so the intensity just after the current time bounds it
    until the next event.
    """
    params.validate()
    K = params.K
    S = np.zeros((K, K))
    t = 0.0
    events = []
    while True:
        lam_bar = float(np.sum(params.mu + np.sum(params.alpha * S, axis=1)))
        t_next = t + rng.exponential(1.0 / lam_bar)
        if t_next >= params.horizon:
            break
        S = S * np.exp(-params.beta * (t_next - t))
        t = t_next
        lam = params.mu + np.sum(params.alpha * S, axis=1)
        total = float(lam.sum())
        u = rng.random()
        if debug:
            assert total <= lam_bar * (1 + 1e-12), "thinning bound violated"
        if u * lam_bar <= total:
            k = int(np.searchsorted(np.cumsum(lam) / total, rng.random(), side="right"))
            k = min(k, K - 1)
            if debug:
                assert u <= total / lam_bar
                assert abs(total - sum(hawkes_intensity(params, events, t, j) for j in range(K))) \
                    <= 1e-9 * total
            events.append((t, k))
            S[:, k] += 1.0
    return events


def hawkes_truth(params: HawkesParams, events, T: int) -> np.ndarray:
    """Temporal saliency ``(T, T, K)`` on a grid of ``T`` equal bins.

    Row ``t`` is evaluated at the bin start ``tau_t``. Entry ``(t, t', n)`` is
    the intensity contributed at ``tau_t`` by type-``n`` events in bin ``t'``,
    summed over target types, divided by the total intensity at ``tau_t``. A
    row therefore sums to the excitation share ``(lambda - mu) / lambda``.
    """
    K = params.K
    width = params.horizon / T
    out = np.zeros((T, T, K))
    if not events:
        return out
    times = np.array([e[0] for e in events])
    types = np.array([e[1] for e in events], dtype=int)
    bins = np.minimum((times / width).astype(int), T - 1)
    mu_total = params.mu.sum()
    for t in range(1, T):
        tau = t * width
        past = bins < t
        if not past.any():
            continue
        dt = tau - times[past]
        # contribution of each past event summed over target types k
        contrib = np.sum(params.alpha[:, types[past]] * np.exp(-params.beta[:, types[past]] * dt),
                         axis=0)
        lam_total = mu_total + contrib.sum()
        np.add.at(out[t], (bins[past], types[past]), contrib / lam_total)
    return out


def generate_hawkes(params: HawkesParams, B: int = 16, T: int = 50, seed: int = 0,
                    n_background: int = 0):
    """Simulate ``B`` sequences, bin them into per-type counts and build temporal truth.

    Labels are the total intensity at each bin start (a causal regression target).
    Returns ``(events, batch, truth)``.
    """
    params.validate()
    if T < 1 or B < 1:
        raise ValueError("B and T must be >= 1")
    rng = np.random.default_rng(seed)
    width = params.horizon / T
    total = B + n_background
    all_events, counts, labels, truth = [], np.zeros((total, T, params.K)), np.zeros((total, T)), []
    for b in range(total):
        ev = simulate_hawkes(params, rng)
        all_events.append(ev)
        for time, k in ev:
            counts[b, min(int(time / width), T - 1), k] += 1
        for t in range(T):
            labels[b, t] = sum(hawkes_intensity(params, ev, t * width, k) for k in range(params.K))
        if b < B:
            truth.append(hawkes_truth(params, ev, T))
    batch = SeriesBatch(counts[:B], labels[:B], counts[B:] if n_background else None)
    return all_events[:B], batch, SaliencyTruth(np.array(truth), "real")


# -- on-disk format -----------------------------------------------------------

FLOAT_FMT = "%.17g"


def _write_series(path: Path, x: np.ndarray) -> None:
    B, T, N = x.shape
    b, t = np.meshgrid(np.arange(B), np.arange(T), indexing="ij")
    rows = np.column_stack([b.ravel(), t.ravel(), x.reshape(B * T, N)])
    header = ",".join(["b", "t"] + [f"f{i}" for i in range(N)])
    np.savetxt(path, rows, fmt=["%d", "%d"] + [FLOAT_FMT] * N, delimiter=",", header=header,
               comments="")


def _read_series(path: Path) -> np.ndarray:
    rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    B, T = int(rows[:, 0].max()) + 1, int(rows[:, 1].max()) + 1
    return rows[:, 2:].reshape(B, T, -1)


def _write_indexed(path: Path, values: np.ndarray, names: list[str], fmt: str) -> None:
    idx = np.indices(values.shape).reshape(values.ndim, -1).T
    rows = np.column_stack([idx, values.ravel()])
    np.savetxt(path, rows, fmt=["%d"] * values.ndim + [fmt], delimiter=",",
               header=",".join(names + ["value"]), comments="")


def _read_indexed(path: Path, shape) -> np.ndarray:
    rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return rows[:, -1].reshape(shape)


def save_dataset(directory, batch: SeriesBatch, truth: SaliencyTruth | None = None,
                 meta: dict | None = None) -> None:
    """Write ``inputs.csv``, ``labels.csv``, ``truth.csv``, ``background.csv`` and ``meta.json``.

    Floats carry 17 significant digits so a reload is bit-exact.
    """
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    info = dict(meta or {})
    info["shape"] = list(batch.inputs.shape)
    _write_series(d / "inputs.csv", batch.inputs)
    if batch.labels is not None:
        integral = np.issubdtype(batch.labels.dtype, np.integer)
        names = ["b"] if batch.labels.ndim == 1 else ["b", "t"]
        _write_indexed(d / "labels.csv", batch.labels, names, "%d" if integral else FLOAT_FMT)
        info["labels"] = {"shape": list(batch.labels.shape), "integer": bool(integral)}
    if batch.background is not None:
        _write_series(d / "background.csv", batch.background)
    if truth is not None:
        names = ["b", "t", "t_prime", "f"] if truth.temporal else ["b", "t", "f"]
        _write_indexed(d / "truth.csv", truth.values, names, FLOAT_FMT)
        info["truth"] = {"shape": list(truth.values.shape), "kind": truth.kind}
    (d / "meta.json").write_text(json.dumps(info, indent=2, sort_keys=True) + "\n")


def load_dataset(directory) -> tuple[SeriesBatch, SaliencyTruth | None, dict]:
    """Inverse of :func:`save_dataset`; missing files raise ``FileNotFoundError`` naming them."""
    d = Path(directory)
    for name in ("meta.json", "inputs.csv"):
        if not (d / name).exists():
            raise FileNotFoundError(f"dataset file {d / name} does not exist")
    meta = json.loads((d / "meta.json").read_text())
    inputs = _read_series(d / "inputs.csv")
    labels = None
    if "labels" in meta:
        labels = _read_indexed(d / "labels.csv", meta["labels"]["shape"])
        if meta["labels"]["integer"]:
            labels = labels.astype(np.int64)
    background = _read_series(d / "background.csv") if (d / "background.csv").exists() else None
    truth = None
    if "truth" in meta:
        values = _read_indexed(d / "truth.csv", meta["truth"]["shape"])
        truth = SaliencyTruth(values, meta["truth"]["kind"])
    return SeriesBatch(inputs, labels, background), truth, meta
