"""Explain a model after swapping some of its activation modules."""

from __future__ import annotations

import warnings
from typing import Callable, Sequence

import numpy as np

from ..models import Model
from .base import Attribution

DEFAULT_SWAPS = (("relu", "softplus", 1.0),)


def swapped_model(model: Model, swaps: Sequence[tuple] = DEFAULT_SWAPS) -> Model:
    for from_kind, to_kind, *rest in swaps:
        beta = float(rest[0]) if rest else 1.0
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            model = model.swap_activations(from_kind, to_kind, beta)
    return model


def nonlinearities_tunnel(inner: Callable[..., Attribution], model: Model, x: np.ndarray,
                          swaps: Sequence[tuple] = DEFAULT_SWAPS, **options) -> Attribution:
    """``inner`` applied to a copy of ``model`` whose activations are swapped.

    By default every ReLU becomes a Softplus; the original model is untouched.
    """
    attr = inner(swapped_model(model, swaps), x, **options)
    attr.method = f"nonlinearities_tunnel({attr.method})"
    attr.options = dict(attr.options, swaps=[list(s) for s in swaps])
    return attr
