"""Interpretability analyses over fusion traces."""

from protoehr.interpret.analysis import (
    default_cluster_count,
    jaccard_diagnostic,
    level_importance,
    prototype_cluster_eval,
    prototype_heatmap,
    top_codes_per_prototype,
)

__all__ = [
    "default_cluster_count",
    "jaccard_diagnostic",
    "level_importance",
    "prototype_cluster_eval",
    "prototype_heatmap",
    "top_codes_per_prototype",
]
