"""
Attention 模块 - 基于滤波器消融的类别注意力权重（W / W*）
"""

from .filter_weights import (
    FilterWeights,
    MaskedWeights,
    per_sample_filter_weights,
    classwise_weights,
    blend_weights,
    threshold_mask,
    weighted_generator_output,
    weighting_tail,
    weighted_fake_features,
    source_filter_weights,
    refresh_weights,
    filter_weights_frame,
    export_filter_weights,
    masked_to_tensors,
    masked_from_tensors,
)

__all__ = [
    "FilterWeights",
    "MaskedWeights",
    "per_sample_filter_weights",
    "classwise_weights",
    "blend_weights",
    "threshold_mask",
    "weighted_generator_output",
    "weighting_tail",
    "weighted_fake_features",
    "source_filter_weights",
    "refresh_weights",
    "filter_weights_frame",
    "export_filter_weights",
    "masked_to_tensors",
    "masked_from_tensors",
]
