"""Run a frozen backbone over an image directory and write a feature store.

The output is plain files: one NPY v1.0 array (little-endian float32,
C-order, shape (grid_h, grid_w, feature_dim)) per image plus a
manifest.json naming them, written atomically with the manifest last.
Nothing here depends on the consumer; the format is the whole interface.
"""

import hashlib
import json
import os
import re
import tempfile
import warnings
from dataclasses import dataclass

import numpy as np
import torch
from PIL import Image
from torchvision.transforms import functional as TF

from .backbones import Backbone, load_backbone
from .errors import UnreadableImageWarning, UsageError

IMAGE_EXTENSIONS = (".jpg", ".jpeg", ".png", ".bmp", ".webp", ".tif", ".tiff")
STORE_VERSION = 1

# standard ImageNet statistics, the convention the DINO family was trained with
_MEAN = [0.485, 0.456, 0.406]
_STD = [0.229, 0.224, 0.225]

_ID_RE = re.compile(r"^[A-Za-z0-9][A-Za-z0-9._-]*$")


@dataclass
class ExportSpec:
    image_dir: str
    backbone: str
    out: str
    crop: int | None = None          # resize shorter side then center crop
    jitter: bool = False             # photometric jitter before extraction
    variants: int = 1                # extra seeded augmented copies per image
    batch_size: int = 8
    num_classes: int = 21            # recorded in the manifest for consumers
    ignore_index: int = 255
    seed: int = 0                    # drives jitter and variant crops
    patch_size: int | None = None    # cross-checked against the backbone

    def validate(self, backbone: Backbone) -> None:
        if self.patch_size is not None and self.patch_size != backbone.patch_size:
            raise UsageError(
                f"declared patch_size {self.patch_size} does not match "
                f"{backbone.name} (patch {backbone.patch_size})"
            )
        if self.crop is not None:
            if self.crop < backbone.patch_size:
                raise UsageError(f"--crop {self.crop} is smaller than one patch")
            if self.crop % backbone.patch_size:
                raise UsageError(
                    f"--crop {self.crop} is not a multiple of patch size "
                    f"{backbone.patch_size}"
                )
        if self.batch_size < 1:
            raise UsageError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.variants < 1:
            raise UsageError(f"variants must be >= 1, got {self.variants}")
        if not 1 <= self.num_classes <= 255:
            raise UsageError(f"num_classes must be in [1, 255], got {self.num_classes}")


def _image_id(path: str) -> str:
    stem = os.path.splitext(os.path.basename(path))[0]
    cleaned = re.sub(r"[^A-Za-z0-9._-]", "-", stem).lstrip("._-")
    if not cleaned or not _ID_RE.match(cleaned):
        cleaned = "img-" + hashlib.sha1(stem.encode()).hexdigest()[:10]
    return cleaned


def _variant_rng(seed: int, image_id: str, variant: int) -> np.random.Generator:
    digest = hashlib.sha256(f"{seed}:{image_id}:{variant}".encode()).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "little"))


def _preprocess(img: Image.Image, image_id: str, spec: ExportSpec,
                patch: int, variant: int) -> torch.Tensor | None:
    """One processed tensor; variant 0 is canonical, higher variants are
    seeded augmentations (random crop window when --crop fixes a size,
    always jittered). A once-per-image export cannot reproduce true
    per-iteration augmentation; variants narrow that gap, nothing closes it.
    """
    rng = _variant_rng(spec.seed, image_id, variant)
    img = img.convert("RGB")
    if spec.crop is not None:
        short = min(img.size)
        scale = spec.crop / short
        img = img.resize((max(spec.crop, round(img.size[0] * scale)),
                          max(spec.crop, round(img.size[1] * scale))),
                         Image.Resampling.BICUBIC)
        if variant == 0:
            img = TF.center_crop(img, [spec.crop, spec.crop])
        else:
            left = int(rng.integers(img.size[0] - spec.crop + 1))
            top = int(rng.integers(img.size[1] - spec.crop + 1))
            img = img.crop((left, top, left + spec.crop, top + spec.crop))
    else:
        # crop each side down to the nearest patch multiple
        w, h = img.size
        tw, th = (w // patch) * patch, (h // patch) * patch
        if tw == 0 or th == 0:
            return None
        if (tw, th) != (w, h):
            img = TF.center_crop(img, [th, tw])
    if spec.jitter or variant > 0:
        brightness, contrast, saturation = rng.uniform(0.6, 1.4, size=3)
        img = TF.adjust_brightness(img, brightness)
        img = TF.adjust_contrast(img, contrast)
        img = TF.adjust_saturation(img, saturation)
    tensor = TF.to_tensor(img)
    return TF.normalize(tensor, _MEAN, _STD)


def _atomic_write(path: str, write_fn) -> None:
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path) or ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            write_fn(fh)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write_features(path: str, values: np.ndarray) -> None:
    arr = np.ascontiguousarray(values, dtype="<f4")
    _atomic_write(path, lambda fh: np.lib.format.write_array(fh, arr, version=(1, 0)))


def list_images(image_dir: str) -> list:
    if not os.path.isdir(image_dir):
        raise UsageError(f"{image_dir} is not a directory")
    names = [n for n in sorted(os.listdir(image_dir))
             if n.lower().endswith(IMAGE_EXTENSIONS)]
    if not names:
        raise UsageError(f"no images with extensions {IMAGE_EXTENSIONS} in {image_dir}")
    return [os.path.join(image_dir, n) for n in names]


def export_features(spec: ExportSpec) -> str:
    """Extract features for every readable image; returns the manifest path.

    The backbone runs inference-only: eval mode, no parameter gradients,
    inference_mode around every forward, deterministic algorithms on, so
    exporting the same directory twice yields identical bytes.
    """
    backbone = load_backbone(spec.backbone)  # before any disk writes
    spec.validate(backbone)
    paths = list_images(spec.image_dir)

    manifest_path = os.path.join(spec.out, "manifest.json")
    if os.path.exists(manifest_path):
        raise UsageError(f"{manifest_path} already exists; refusing to overwrite")
    os.makedirs(os.path.join(spec.out, "features"), exist_ok=True)

    torch.use_deterministic_algorithms(True)

    pending = []          # (image_id, tensor, height, width)
    samples = []
    seen = set()

    def flush():
        if not pending:
            return
        batch = torch.stack([tensor for _, tensor, _, _ in pending])
        with torch.inference_mode():
            feats = backbone.extract(batch)
        values = feats.cpu().numpy()
        for row, (image_id, _, height, width) in enumerate(pending):
            rel = f"features/{image_id}.npy"
            _write_features(os.path.join(spec.out, rel), values[row])
            samples.append({"image_id": image_id, "feature_path": rel,
                            "image_h": height, "image_w": width})
        pending.clear()

    for path in paths:
        image_id = _image_id(path)
        if image_id in seen:
            raise UsageError(f"duplicate image id {image_id!r} (from {path})")
        try:
            with Image.open(path) as img:
                tensors = [_preprocess(img, image_id, spec, backbone.patch_size, v)
                           for v in range(spec.variants)]
        except UsageError:
            raise
        except Exception as exc:
            warnings.warn(f"skipping unreadable image {path}: {exc}",
                          UnreadableImageWarning, stacklevel=2)
            continue
        if tensors[0] is None:
            warnings.warn(f"skipping {path}: smaller than one "
                          f"{backbone.patch_size}px patch",
                          UnreadableImageWarning, stacklevel=2)
            continue
        seen.add(image_id)
        for variant, tensor in enumerate(tensors):
            variant_id = image_id if variant == 0 else f"{image_id}.v{variant}"
            height, width = tensor.shape[-2], tensor.shape[-1]
            if pending and pending[0][1].shape != tensor.shape:
                flush()  # batches hold one spatial size at a time
            pending.append((variant_id, tensor, height, width))
            if len(pending) >= spec.batch_size:
                flush()
    flush()

    if not samples:
        raise UsageError(f"no readable images in {spec.image_dir}")

    manifest = {
        "version": STORE_VERSION,
        "patch_size": backbone.patch_size,
        "feature_dim": backbone.feature_dim,
        "num_classes": spec.num_classes,
        "ignore_index": spec.ignore_index,
        "samples": samples,
    }
    payload = (json.dumps(manifest, indent=2) + "\n").encode()
    _atomic_write(manifest_path, lambda fh: fh.write(payload))
    return manifest_path
