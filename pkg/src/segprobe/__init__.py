"""Linear probing of frozen self-supervised features for segmentation.

A feature extractor that was never trained on labels already organizes an
image into objects; this package measures how much of that structure a
single affine layer can turn into a segmentation, and how little (or how
noisy) the supervision can be. It trains on precomputed feature stores,
synthesizes point/scribble/noisy label regimes from dense masks, scores
with mIoU, and clusters tokens for label-free inspection.
"""

__version__ = "0.1.0"

from .cluster import ClusterResult, cluster_map, kmeans
from .errors import (
    CalibrationError,
    DataError,
    InvalidArgumentError,
    InvalidLabelError,
    NumericsError,
    SegProbeError,
    StoreError,
    UndefinedMetricError,
    UsageError,
)
from .labels import (
    IGNORE_INDEX,
    LabelMask,
    class_palette,
    load_mask,
    mask_quality,
    save_mask,
    synth_noisy,
    synth_points,
    synth_scribble,
)
from .metrics import MetricReport, accumulate, iou_per_class, miou, miou_between
from .probe import (
    ProbeParams,
    SegmentationOutput,
    TrainConfig,
    augment,
    forward,
    load_checkpoint,
    loss_and_grad,
    masked_ce_loss,
    save_checkpoint,
    train,
)
from .store import (
    FeatureMap,
    FeatureStore,
    ImageSample,
    SampleEntry,
    audit_store,
    create_store,
    open_store,
)
from .synthetic import build_synthetic_store, random_class_mask
from .tensor import bilinear_resize, bilinear_resize_adjoint, set_default_dtype, using_dtype

__all__ = [
    "ClusterResult", "cluster_map", "kmeans",
    "CalibrationError", "DataError", "InvalidArgumentError", "InvalidLabelError",
    "NumericsError", "SegProbeError", "StoreError", "UndefinedMetricError", "UsageError",
    "IGNORE_INDEX", "LabelMask", "class_palette", "load_mask", "mask_quality",
    "save_mask", "synth_noisy", "synth_points", "synth_scribble",
    "MetricReport", "accumulate", "iou_per_class", "miou", "miou_between",
    "ProbeParams", "SegmentationOutput", "TrainConfig", "augment", "forward",
    "load_checkpoint", "loss_and_grad", "masked_ce_loss", "save_checkpoint", "train",
    "FeatureMap", "FeatureStore", "ImageSample", "SampleEntry",
    "audit_store", "create_store", "open_store",
    "build_synthetic_store", "random_class_mask",
    "bilinear_resize", "bilinear_resize_adjoint", "set_default_dtype", "using_dtype",
    "__version__",
]
