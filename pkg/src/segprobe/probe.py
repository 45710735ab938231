"""Linear segmentation head over frozen features, and its SGD trainer.

The only trainable state in the whole pipeline is one affine map from
feature width Z to class count C. ``forward`` applies it per patch token
and bilinearly upsamples the patch logits to pixel resolution; the loss is
pixel-wise cross-entropy restricted to labeled pixels. Because the
upsampling is linear, the exact gradient routes through its transpose
(``tensor.bilinear_resize_adjoint``) — no autodiff framework involved.

Two documented knobs cover ambiguities in the objective:

* ``loss_head``: "softmax" (default) treats the C logits of a pixel as one
  categorical distribution; "per-class-sigmoid" penalizes only the true
  class's logit through -log(sigmoid(z_y)).
* ``normalization_mode``: "labeled-count" (default) divides by the number
  of labeled pixels, keeping step sizes comparable across sparse and dense
  supervision; "total-pixels" divides by H*W regardless of labeling, so
  sparser labels yield proportionally smaller losses.
"""

from __future__ import annotations

import base64
import json
import warnings
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import seeding, tensor
from .errors import (
    CropSkippedWarning,
    EmptySupervisionWarning,
    InvalidArgumentError,
)
from .labels import LabelMask
from .store import FeatureMap, FeatureStore, ImageSample, _atomic_write_bytes

NORMALIZATION_MODES = ("labeled-count", "total-pixels")
LOSS_HEADS = ("softmax", "per-class-sigmoid")

CHECKPOINT_FORMAT = "segprobe-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class ProbeParams:
    """The affine head: weight (Z, C), bias (C,)."""

    weight: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        self.weight = np.asarray(self.weight)
        self.bias = np.asarray(self.bias)
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[1],):
            raise InvalidArgumentError(
                f"weight {self.weight.shape} and bias {self.bias.shape} must be "
                "(feature_dim, num_classes) and (num_classes,)"
            )
        tensor.check_finite(self.weight, "weight")
        tensor.check_finite(self.bias, "bias")

    @property
    def feature_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def num_classes(self) -> int:
        return self.weight.shape[1]

    @classmethod
    def zeros(cls, feature_dim: int, num_classes: int, dtype=None) -> "ProbeParams":
        # Zero init: the objective is convex in the head given frozen
        # features, so there is no symmetry to break.
        dtype = dtype or tensor.default_dtype()
        return cls(np.zeros((feature_dim, num_classes), dtype=dtype),
                   np.zeros(num_classes, dtype=dtype))

    def copy(self) -> "ProbeParams":
        return ProbeParams(self.weight.copy(), self.bias.copy())


@dataclass
class TrainConfig:
    """Trainer hyperparameters; defaults are the reference recipe."""

    learning_rate: float = 0.001
    iterations: int = 20000
    batch_size: int = 10
    momentum: float = 0.9
    weight_decay: float = 0.0
    crop_pixels: int = 448
    flip_prob: float = 0.5
    normalization_mode: str = "labeled-count"
    loss_head: str = "softmax"
    seed: int = 0
    standardize_features: bool = False

    def validate(self, patch_size: int | None = None) -> None:
        if not self.learning_rate > 0:
            raise InvalidArgumentError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.iterations < 1:
            raise InvalidArgumentError(f"iterations must be >= 1, got {self.iterations}")
        if self.batch_size < 1:
            raise InvalidArgumentError(f"batch_size must be >= 1, got {self.batch_size}")
        if not 0.0 <= self.momentum < 1.0:
            raise InvalidArgumentError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise InvalidArgumentError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.crop_pixels < 1:
            raise InvalidArgumentError(f"crop_pixels must be >= 1, got {self.crop_pixels}")
        if not 0.0 <= self.flip_prob <= 1.0:
            raise InvalidArgumentError(f"flip_prob must be in [0, 1], got {self.flip_prob}")
        if self.normalization_mode not in NORMALIZATION_MODES:
            raise InvalidArgumentError(
                f"normalization_mode {self.normalization_mode!r} not one of {NORMALIZATION_MODES}"
            )
        if self.loss_head not in LOSS_HEADS:
            raise InvalidArgumentError(f"loss_head {self.loss_head!r} not one of {LOSS_HEADS}")
        if patch_size is not None and self.crop_pixels % patch_size != 0:
            raise InvalidArgumentError(
                f"crop_pixels={self.crop_pixels} must be divisible by the store's "
                f"patch_size={patch_size}"
            )


@dataclass
class SegmentationOutput:
    """Pixel-resolution logits (H, W, C)."""

    logits: np.ndarray

    @property
    def argmax_map(self) -> np.ndarray:
        return np.argmax(self.logits, axis=-1)


def forward(features: FeatureMap, params: ProbeParams) -> SegmentationOutput:
    """Affine map per token, then bilinear upsampling to pixel logits."""
    if features.dim != params.feature_dim:
        raise InvalidArgumentError(
            f"feature dim {features.dim} != head feature_dim {params.feature_dim}"
        )
    token_logits = features.values @ params.weight + params.bias
    logits = tensor.bilinear_resize(token_logits, features.image_h, features.image_w)
    return SegmentationOutput(logits)


def _picked_log_probs(logits_at_labeled: np.ndarray, classes: np.ndarray, loss_head: str):
    """log-prob of each labeled pixel's true class, per the chosen head."""
    rows = np.arange(classes.shape[0])
    if loss_head == "softmax":
        return tensor.log_softmax(logits_at_labeled, axis=-1)[rows, classes]
    return tensor.log_sigmoid(logits_at_labeled[rows, classes])


def _normalizer(mode: str, labeled_count: int, total_pixels: int) -> int:
    return labeled_count if mode == "labeled-count" else total_pixels


def masked_ce_loss(out: SegmentationOutput, labels: LabelMask,
                   mode: str = "labeled-count", loss_head: str = "softmax") -> float:
    """Cross-entropy over labeled pixels, divided by the mode's pixel count.

    Zero labeled pixels is a defined case: the loss is 0.0, with an
    EmptySupervisionWarning under labeled-count mode (the normalizer there
    would otherwise be 0/0).
    """
    if mode not in NORMALIZATION_MODES:
        raise InvalidArgumentError(f"mode {mode!r} not one of {NORMALIZATION_MODES}")
    if loss_head not in LOSS_HEADS:
        raise InvalidArgumentError(f"loss_head {loss_head!r} not one of {LOSS_HEADS}")
    h, w, _ = out.logits.shape
    if (labels.h, labels.w) != (h, w):
        raise InvalidArgumentError(
            f"labels are {labels.h}x{labels.w} but logits are {h}x{w}"
        )
    labeled = labels.labeled
    n_labeled = int(np.count_nonzero(labeled))
    if n_labeled == 0:
        if mode == "labeled-count":
            warnings.warn("loss over zero labeled pixels is defined as 0",
                          EmptySupervisionWarning, stacklevel=2)
        return 0.0
    classes = labels.values[labeled].astype(np.int64)
    picked = _picked_log_probs(out.logits[labeled], classes, loss_head)
    return float(-picked.astype(np.float64).sum() / _normalizer(mode, n_labeled, h * w))


def _sample_loss_and_grad(params: ProbeParams, sample: ImageSample, config: TrainConfig):
    """Loss and analytic (grad_weight, grad_bias) for one sample.

    The pixel-logit gradient G is nonzero only at labeled pixels; pulling
    it back through the upsampling transpose gives the token-logit
    gradient, and the affine map's gradients follow from there.
    """
    feats = sample.features
    labels = sample.labels
    if labels is None:
        raise InvalidArgumentError(f"sample {feats.image_id!r} has no labels")
    out = forward(feats, params)
    h, w, c = out.logits.shape
    labeled = labels.labeled
    n_labeled = int(np.count_nonzero(labeled))
    if n_labeled == 0:
        zw = np.zeros_like(params.weight)
        zb = np.zeros_like(params.bias)
        return 0.0, zw, zb
    classes = labels.values[labeled].astype(np.int64)
    rows = np.arange(n_labeled)
    at_labeled = out.logits[labeled]
    norm = _normalizer(config.normalization_mode, n_labeled, h * w)
    if config.loss_head == "softmax":
        log_p = tensor.log_softmax(at_labeled, axis=-1)
        loss = float(-log_p[rows, classes].astype(np.float64).sum() / norm)
        pixel_grad = np.exp(log_p)
        pixel_grad[rows, classes] -= 1.0
    else:
        z_true = at_labeled[rows, classes]
        loss = float(-tensor.log_sigmoid(z_true).astype(np.float64).sum() / norm)
        # d/dz_y of -log sigmoid(z_y) = sigmoid(z_y) - 1; other classes untouched.
        pixel_grad = np.zeros_like(at_labeled)
        pixel_grad[rows, classes] = tensor.sigmoid(z_true) - 1.0
    pixel_grad /= norm
    full_grad = np.zeros_like(out.logits)
    full_grad[labeled] = pixel_grad
    token_grad = tensor.bilinear_resize_adjoint(full_grad, feats.grid_h, feats.grid_w)
    grad_weight = np.tensordot(feats.values, token_grad, axes=([0, 1], [0, 1]))
    grad_bias = token_grad.sum(axis=(0, 1))
    return loss, grad_weight.astype(params.weight.dtype), grad_bias.astype(params.bias.dtype)


def loss_and_grad(params: ProbeParams, batch: list, config: TrainConfig):
    """Mean loss and mean gradients over a batch of ImageSamples."""
    if not batch:
        raise InvalidArgumentError("batch must be non-empty")
    total_loss = 0.0
    grad_weight = np.zeros_like(params.weight)
    grad_bias = np.zeros_like(params.bias)
    for sample in batch:
        loss, gw, gb = _sample_loss_and_grad(params, sample, config)
        total_loss += loss
        grad_weight += gw
        grad_bias += gb
    n = len(batch)
    return total_loss / n, grad_weight / n, grad_bias / n


def augment(sample: ImageSample, config: TrainConfig, seed: int,
            patch_size: int | None = None) -> ImageSample:
    """Random aligned crop on the feature grid plus consistent horizontal flip.

    The crop spans crop_pixels/patch_size patches; the mask gets the
    patch-aligned pixel window so features and labels keep describing the
    same region. A crop larger than the grid is skipped with a warning.
    Color jitter operates on raw pixels and so belongs in the feature
    exporter, not here.
    """
    feats = sample.features
    if patch_size is None:
        patch_size = max(1, round(feats.image_h / feats.grid_h))
    config.validate(patch_size)
    rng = np.random.default_rng(seed)
    values = feats.values
    labels = sample.labels
    image_h, image_w = feats.image_h, feats.image_w

    crop_patches = config.crop_pixels // patch_size
    if crop_patches > feats.grid_h or crop_patches > feats.grid_w:
        warnings.warn(
            f"crop of {crop_patches} patches exceeds grid "
            f"{feats.grid_h}x{feats.grid_w}; skipping crop for {feats.image_id!r}",
            CropSkippedWarning, stacklevel=2)
    else:
        r0 = int(rng.integers(feats.grid_h - crop_patches + 1))
        c0 = int(rng.integers(feats.grid_w - crop_patches + 1))
        values = values[r0:r0 + crop_patches, c0:c0 + crop_patches]
        y0, x0 = r0 * patch_size, c0 * patch_size
        y1 = min((r0 + crop_patches) * patch_size, image_h)
        x1 = min((c0 + crop_patches) * patch_size, image_w)
        if labels is not None:
            labels = LabelMask(labels.values[y0:y1, x0:x1],
                               labels.num_classes, labels.ignore_index)
        image_h, image_w = y1 - y0, x1 - x0

    if config.flip_prob > 0 and rng.random() < config.flip_prob:
        values = values[:, ::-1]
        if labels is not None:
            labels = LabelMask(labels.values[:, ::-1].copy(),
                               labels.num_classes, labels.ignore_index)

    return ImageSample(
        features=FeatureMap(feats.image_id, np.ascontiguousarray(values), image_h, image_w),
        labels=labels,
        provenance=sample.provenance,
    )


def _standardizer(samples: dict):
    """Per-feature mean and std over all tokens of the training samples."""
    stacked = np.concatenate(
        [s.features.values.reshape(-1, s.features.dim) for s in samples.values()], axis=0)
    mean = stacked.mean(axis=0, dtype=np.float64)
    std = stacked.std(axis=0, dtype=np.float64)
    std = np.maximum(std, 1e-6)
    return mean, std


def train(store: FeatureStore, sample_ids: list, config: TrainConfig):
    """SGD with momentum from zero-initialized params.

    Samples are drawn by a seeded shuffle, reshuffled each epoch; each
    iteration consumes one batch of ``batch_size`` samples with fresh
    augmentation seeds. Returns (params, per-iteration loss history). The
    store is only read: run ``store.fingerprint()`` around this call to
    check that promise at the byte level.

    With ``standardize_features`` the head is trained on per-feature
    standardized tokens and the normalization is folded back into the
    returned affine params, so downstream ``forward`` needs no extra state.
    """
    config.validate(store.patch_size)
    if not sample_ids:
        raise InvalidArgumentError("sample_ids must be non-empty")
    samples = {}
    for image_id in sample_ids:
        entry = store.entry(image_id)
        if entry.mask_path is None:
            raise InvalidArgumentError(
                f"sample {image_id!r} has no mask; training needs labels for every sample"
            )
        samples[image_id] = store.load_sample(image_id)

    dtype = tensor.default_dtype()
    mean = std = None
    if config.standardize_features:
        mean, std = _standardizer(samples)
        for s in samples.values():
            s.features.values = ((s.features.values - mean) / std).astype(dtype)

    params = ProbeParams.zeros(store.feature_dim, store.num_classes, dtype=dtype)
    vel_w = np.zeros_like(params.weight)
    vel_b = np.zeros_like(params.bias)

    # Pre-computed batch schedule: epoch-wise shuffles, chunked by batch
    # size across epoch boundaries so every batch is full.
    shuffle_rng = seeding.generator(config.seed, "shuffle")
    ids = list(sample_ids)
    order = []
    needed = config.iterations * config.batch_size
    while len(order) < needed:
        order.extend(ids[i] for i in shuffle_rng.permutation(len(ids)))
    history = []
    for it in range(config.iterations):
        chunk = order[it * config.batch_size:(it + 1) * config.batch_size]
        batch = [
            augment(samples[image_id], config,
                    seed=seeding.derive_seed(config.seed, "augment", it, slot),
                    patch_size=store.patch_size)
            for slot, image_id in enumerate(chunk)
        ]
        loss, grad_w, grad_b = loss_and_grad(params, batch, config)
        if config.weight_decay:
            grad_w = grad_w + config.weight_decay * params.weight
            grad_b = grad_b + config.weight_decay * params.bias
        vel_w = config.momentum * vel_w + grad_w
        vel_b = config.momentum * vel_b + grad_b
        params.weight -= config.learning_rate * vel_w
        params.bias -= config.learning_rate * vel_b
        history.append(loss)

    if config.standardize_features:
        folded_w = (params.weight / std[:, None]).astype(dtype)
        folded_b = (params.bias - (mean / std) @ params.weight).astype(dtype)
        params = ProbeParams(folded_w, folded_b)
    tensor.check_finite(params.weight, "trained weight")
    tensor.check_finite(params.bias, "trained bias")
    return params, history


# ---------------------------------------------------------------------------
# Checkpoint I/O


def _encode_f4(arr: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(arr, dtype="<f4").tobytes()).decode("ascii")


def _decode_f4(payload: str, shape: tuple) -> np.ndarray:
    raw = base64.b64decode(payload.encode("ascii"))
    expected = int(np.prod(shape)) * 4
    if len(raw) != expected:
        raise InvalidArgumentError(
            f"checkpoint array payload is {len(raw)} bytes; expected {expected}"
        )
    return np.frombuffer(raw, dtype="<f4").reshape(shape).copy()


def save_checkpoint(path, params: ProbeParams, config: TrainConfig,
                    store_fingerprint: str | None = None) -> None:
    """Write the head as versioned JSON: shapes, little-endian float32
    weights (base64), the full TrainConfig, and the source store hash."""
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "feature_dim": params.feature_dim,
        "num_classes": params.num_classes,
        "dtype": "<f4",
        "weight": _encode_f4(params.weight),
        "bias": _encode_f4(params.bias),
        "train_config": asdict(config),
        "store_fingerprint": store_fingerprint,
    }
    _atomic_write_bytes(path, (json.dumps(doc, indent=2) + "\n").encode("utf-8"))


def load_checkpoint(path):
    """Read a checkpoint; returns (params, TrainConfig, store_fingerprint)."""
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != CHECKPOINT_FORMAT or doc.get("version") != CHECKPOINT_VERSION:
        raise InvalidArgumentError(
            f"{path}: not a version-{CHECKPOINT_VERSION} {CHECKPOINT_FORMAT} file"
        )
    z, c = int(doc["feature_dim"]), int(doc["num_classes"])
    params = ProbeParams(_decode_f4(doc["weight"], (z, c)), _decode_f4(doc["bias"], (c,)))
    known = {f.name for f in fields(TrainConfig)}
    raw_config = {k: v for k, v in doc.get("train_config", {}).items() if k in known}
    return params, TrainConfig(**raw_config), doc.get("store_fingerprint")
