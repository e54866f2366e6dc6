"""Attribution methods sharing the call shape ``method(model, x, **options)``."""

from .base import (Attribution, BaselineSpec, CausalModelRequired, as_baseline,
                   read_attributions, write_attributions)
from .dynamask import dynamask, moving_average
from .gradients import integrated_gradients, temporal_integrated_gradients, time_forward_tunnel
from .lof import LOF, lof_score, similarity_score
from .occlusion import (augmented_occlusion, occlusion, temporal_augmented_occlusion,
                        temporal_occlusion)
from .surrogate import kernel_shap, lime, lof_kernel_shap, lof_lime
from .tunnel import nonlinearities_tunnel, swapped_model

METHODS = {
    "integrated_gradients": integrated_gradients,
    "temporal_integrated_gradients": temporal_integrated_gradients,
    "occlusion": occlusion,
    "augmented_occlusion": augmented_occlusion,
    "temporal_occlusion": temporal_occlusion,
    "temporal_augmented_occlusion": temporal_augmented_occlusion,
    "lime": lime,
    "lof_lime": lof_lime,
    "kernel_shap": kernel_shap,
    "lof_kernel_shap": lof_kernel_shap,
    "dynamask": dynamask,
}

NEEDS_BACKGROUND = {"augmented_occlusion", "temporal_augmented_occlusion", "lof_lime",
                    "lof_kernel_shap"}

# wrappers taking an inner method name
WRAPPERS = {
    "time_forward_tunnel": time_forward_tunnel,
    "nonlinearities_tunnel": nonlinearities_tunnel,
}


def get_method(name: str):
    if name not in METHODS:
        raise KeyError(f"unknown attribution method {name!r}; available: "
                       f"{', '.join(sorted(METHODS) + sorted(WRAPPERS))}")
    return METHODS[name]


__all__ = [
    "Attribution", "BaselineSpec", "CausalModelRequired", "as_baseline", "read_attributions",
    "write_attributions", "dynamask", "moving_average", "integrated_gradients",
    "temporal_integrated_gradients", "time_forward_tunnel", "LOF", "lof_score",
    "similarity_score", "occlusion", "augmented_occlusion", "temporal_occlusion",
    "temporal_augmented_occlusion", "kernel_shap", "lime", "lof_kernel_shap", "lof_lime",
    "nonlinearities_tunnel", "swapped_model", "METHODS", "NEEDS_BACKGROUND", "WRAPPERS", "get_method",
]
