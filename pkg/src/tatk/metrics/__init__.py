"""White-box and black-box attribution metrics."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .black_box import (KINDS, MaskPolicy, black_box_metric, black_box_metric_batch,
                        lipschitz_max, masked_cells, perturb, select_cells)
from .white_box import (aup, aur, average_precision, minmax_normalize, roc_auc,
                        white_box_metrics)


@dataclass
class MetricReport:
    """Metric values plus the configuration needed to recompute them."""

    values: dict[str, float]
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        bad = [k for k, v in self.values.items() if not np.isfinite(v)]
        if bad:
            raise FloatingPointError(f"non-finite metric values: {bad}")

    def to_json(self) -> str:
        return json.dumps({"metrics": self.values, "config": self.config}, indent=2,
                          sort_keys=True)

    def to_csv_row(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        keys = sorted(self.values)
        w.writerow(keys)
        w.writerow([repr(self.values[k]) for k in keys])
        return buf.getvalue()


__all__ = [
    "KINDS", "MaskPolicy", "MetricReport", "aup", "aur", "average_precision",
    "black_box_metric", "black_box_metric_batch", "lipschitz_max", "masked_cells",
    "minmax_normalize", "perturb", "roc_auc", "select_cells", "white_box_metrics",
]
