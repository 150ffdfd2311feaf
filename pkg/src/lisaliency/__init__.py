"""Lateral-inhibition saliency maps for small CNN classifiers.

End-to-end pipeline: train a desk-scale classifier, produce category-specific
attention maps and top-5 fused saliency maps from gradient feedback filtered
by a lateral-inhibition model, validate the method with weight-randomization
sanity checks, and quantify background influence with mask-guided Gaussian
blur experiments.
"""

__version__ = "0.1.0"

from .errors import LisaliencyError
from .inhibition import LIParams, build_suppression_masks, gate, inhibition_field, max_c
from .network import (ActivationTrace, NetworkSpec, NetworkWeights, TAP_AFTER,
                      TAP_BEFORE, backprop_category, forward, forward_traced,
                      init_weights, load_network_spec)
from .saliency import (AttentionMap, SaliencyMap, attention_map, masked_forward,
                       normalize_l2, resize_bilinear, saliency_map, sum_c)
from .sanity import (RandomizationPlan, SimilarityRecord, hog_descriptor, pearson,
                     randomize_layer, run_randomization_test, spearman)
from .experiments import (AccuracyReport, BlurConfig, blend_blur, gaussian_blur,
                          run_blur_experiment, saliency_to_mask)
from .training import TrainConfig, train
from .weights_io import load_weights, save_weights

__all__ = [
    "__version__", "LisaliencyError", "LIParams", "build_suppression_masks",
    "gate", "inhibition_field", "max_c", "ActivationTrace", "NetworkSpec",
    "NetworkWeights", "TAP_AFTER", "TAP_BEFORE", "backprop_category", "forward",
    "forward_traced", "init_weights", "load_network_spec", "AttentionMap",
    "SaliencyMap", "attention_map", "masked_forward", "normalize_l2",
    "resize_bilinear", "saliency_map", "sum_c", "RandomizationPlan",
    "SimilarityRecord", "hog_descriptor", "pearson", "randomize_layer",
    "run_randomization_test", "spearman", "AccuracyReport", "BlurConfig",
    "blend_blur", "gaussian_blur", "run_blur_experiment", "saliency_to_mask",
    "TrainConfig", "train", "load_weights", "save_weights",
]
