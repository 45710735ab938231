"""Standalone store validation: every failure is a report entry, not a raise.

Checks mirror what a consumer will reject: manifest schema, id uniqueness,
NPY version/dtype/order/shape per feature file, grid-vs-image consistency,
finite payloads, and mask readability when masks are present.
"""

import json
import os

import numpy as np
from PIL import Image

_HEADER_FIELDS = ("version", "patch_size", "feature_dim", "num_classes",
                  "ignore_index", "samples")
_SAMPLE_FIELDS = ("image_id", "feature_path", "image_h", "image_w")


def _check_feature_file(path: str, feature_dim: int, patch_size: int,
                        image_h: int, image_w: int, issues: list) -> None:
    name = os.path.basename(path)
    try:
        with open(path, "rb") as fh:
            version = np.lib.format.read_magic(fh)
            if version != (1, 0):
                issues.append(f"{name}: NPY version {version}, expected (1, 0)")
                return
            shape, fortran, dtype = np.lib.format.read_array_header_1_0(fh)
    except Exception as exc:
        issues.append(f"{name}: unreadable NPY header: {exc}")
        return
    if dtype != np.dtype("<f4"):
        issues.append(f"{name}: dtype {dtype}, expected little-endian float32")
        return
    if fortran:
        issues.append(f"{name}: Fortran order, expected C order")
        return
    if len(shape) != 3:
        issues.append(f"{name}: rank {len(shape)}, expected 3")
        return
    grid_h, grid_w, dim = shape
    if dim != feature_dim:
        issues.append(f"{name}: feature dim {dim}, manifest says {feature_dim}")
    for grid, extent, axis in ((grid_h, image_h, "h"), (grid_w, image_w, "w")):
        if not 0 <= extent - grid * patch_size < patch_size:
            issues.append(f"{name}: grid_{axis} {grid} x patch {patch_size} "
                          f"inconsistent with image_{axis} {extent}")
    try:
        values = np.load(path)
    except Exception as exc:
        issues.append(f"{name}: payload unreadable: {exc}")
        return
    if values.shape != tuple(shape):
        issues.append(f"{name}: payload shape {values.shape} != header {shape}")
    elif not np.isfinite(values).all():
        issues.append(f"{name}: non-finite values")


def verify_store(store_path: str) -> dict:
    """Validate a feature store; returns {"ok", "issues", "num_samples"}."""
    issues = []
    num_samples = 0
    manifest_path = (store_path if store_path.endswith(".json")
                     else os.path.join(store_path, "manifest.json"))
    root = os.path.dirname(os.path.abspath(manifest_path))
    try:
        with open(manifest_path, "rb") as fh:
            manifest = json.load(fh)
    except Exception as exc:
        return {"ok": False, "issues": [f"manifest: {exc}"], "num_samples": 0}

    for key in _HEADER_FIELDS:
        if key not in manifest:
            issues.append(f"manifest: missing field {key!r}")
    if issues:
        return {"ok": False, "issues": issues, "num_samples": 0}
    if manifest["version"] != 1:
        issues.append(f"manifest: unsupported version {manifest['version']}")
    patch_size = manifest["patch_size"]
    feature_dim = manifest["feature_dim"]
    num_classes = manifest["num_classes"]
    ignore_index = manifest["ignore_index"]

    seen = set()
    for row in manifest.get("samples", []):
        missing = [k for k in _SAMPLE_FIELDS if k not in row]
        if missing:
            issues.append(f"sample {row.get('image_id', '?')!r}: missing {missing}")
            continue
        num_samples += 1
        image_id = row["image_id"]
        if image_id in seen:
            issues.append(f"duplicate image id {image_id!r}")
        seen.add(image_id)
        feature_path = os.path.join(root, row["feature_path"])
        if not os.path.exists(feature_path):
            issues.append(f"{row['feature_path']}: missing file")
            continue
        _check_feature_file(feature_path, feature_dim, patch_size,
                            row["image_h"], row["image_w"], issues)
        if row.get("mask_path"):
            _check_mask(os.path.join(root, row["mask_path"]), row, num_classes,
                        ignore_index, issues)
    return {"ok": not issues, "issues": issues, "num_samples": num_samples}


def _check_mask(path: str, row: dict, num_classes: int, ignore_index: int,
                issues: list) -> None:
    name = os.path.basename(path)
    try:
        with Image.open(path) as img:
            if img.mode not in ("L", "P"):
                issues.append(f"{name}: mode {img.mode}, expected 8-bit L or P")
                return
            values = np.asarray(img, dtype=np.uint8)
    except Exception as exc:
        issues.append(f"{name}: unreadable mask: {exc}")
        return
    if values.shape != (row["image_h"], row["image_w"]):
        issues.append(f"{name}: mask shape {values.shape} != image dims")
    bad = (values >= num_classes) & (values != ignore_index)
    if bad.any():
        issues.append(f"{name}: {int(bad.sum())} pixels outside "
                      f"[0, {num_classes}) and != {ignore_index}")
