"""On-disk store for precomputed backbone features and paired masks.

The backbone is frozen, so its outputs are data, not model state: a store
is a directory with a ``manifest.json`` plus one NPY feature file per
image (little-endian float32, C-order, shape (grid_h, grid_w, dim)) and
optional 8-bit mask images. Training only ever reads a store; the
byte-level fingerprint lets callers prove that.

Writes are atomic (temp file, then ``os.replace``) and the manifest is
written last, so a crash mid-write leaves a parseable manifest that simply
omits the unfinished sample. ``open_store`` validates every feature-file
header up front rather than failing 10K iterations into a run.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
import tempfile
from dataclasses import dataclass

import numpy as np

from .errors import (
    DimensionMismatchError,
    DuplicateImageIdError,
    FeatureDecodeError,
    InvalidArgumentError,
    ManifestSchemaError,
    UnknownImageIdError,
)
from .labels import IGNORE_INDEX, LabelMask, load_mask, save_mask

STORE_VERSION = 1
MANIFEST_NAME = "manifest.json"
PROVENANCE_TAGS = ("gt", "scribble", "point", "noisy", "external-pseudo")

_ID_RE = re.compile(r"^[A-Za-z0-9][A-Za-z0-9._-]*$")


@dataclass(frozen=True)
class SampleEntry:
    """One manifest row; paths are relative to the store root."""

    image_id: str
    feature_path: str
    image_h: int
    image_w: int
    mask_path: str | None = None
    provenance: str | None = None


@dataclass
class FeatureMap:
    """Frozen-backbone features for one image: (grid_h, grid_w, dim) float32."""

    image_id: str
    values: np.ndarray
    image_h: int
    image_w: int

    @property
    def grid_h(self) -> int:
        return self.values.shape[0]

    @property
    def grid_w(self) -> int:
        return self.values.shape[1]

    @property
    def dim(self) -> int:
        return self.values.shape[2]


@dataclass
class ImageSample:
    features: FeatureMap
    labels: LabelMask | None = None
    provenance: str | None = None


def _check_grid(entry: SampleEntry, grid_h: int, grid_w: int, patch_size: int) -> None:
    # grid*patch must reproduce the image extent to within one patch
    # (exact when the image dims are multiples of the patch size).
    for name, grid, image in (("h", grid_h, entry.image_h), ("w", grid_w, entry.image_w)):
        if abs(grid * patch_size - image) >= patch_size:
            raise DimensionMismatchError(
                f"sample {entry.image_id!r}: grid_{name}={grid} * patch_size={patch_size} "
                f"does not cover image_{name}={image}"
            )


def _read_feature_header(path, entry: SampleEntry, feature_dim: int) -> tuple:
    """Validate an NPY header without loading the data; returns the shape."""
    try:
        with open(path, "rb") as fh:
            version = np.lib.format.read_magic(fh)
            if version != (1, 0):
                raise FeatureDecodeError(
                    f"{entry.feature_path}: NPY version {version} unsupported; expected 1.0"
                )
            shape, fortran_order, dtype = np.lib.format.read_array_header_1_0(fh)
    except FeatureDecodeError:
        raise
    except FileNotFoundError:
        raise
    except (ValueError, OSError) as exc:
        raise FeatureDecodeError(f"{entry.feature_path}: unreadable NPY header ({exc})") from exc
    if dtype != np.dtype("<f4") or fortran_order:
        raise FeatureDecodeError(
            f"{entry.feature_path}: dtype {dtype.str!r}"
            f"{' (Fortran order)' if fortran_order else ''}; feature files must be "
            "little-endian float32 ('<f4'), C-order"
        )
    if len(shape) != 3:
        raise DimensionMismatchError(
            f"{entry.feature_path}: shape {shape} is not (grid_h, grid_w, feature_dim)"
        )
    if shape[2] != feature_dim:
        raise DimensionMismatchError(
            f"{entry.feature_path}: trailing extent {shape[2]} != store feature_dim {feature_dim}"
        )
    return shape


def _atomic_write_bytes(path, payload: bytes) -> None:
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path) or ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class FeatureStore:
    """An open store: validated manifest plus typed read/write access."""

    def __init__(self, root, patch_size, feature_dim, num_classes,
                 ignore_index=IGNORE_INDEX, entries=()):
        self.root = os.path.abspath(root)
        self.patch_size = int(patch_size)
        self.feature_dim = int(feature_dim)
        self.num_classes = int(num_classes)
        self.ignore_index = int(ignore_index)
        self._entries: dict = {}
        for entry in entries:
            if entry.image_id in self._entries:
                raise DuplicateImageIdError(f"duplicate image_id {entry.image_id!r} in manifest")
            self._entries[entry.image_id] = entry
        if self.patch_size < 1 or self.feature_dim < 1:
            raise ManifestSchemaError(
                f"patch_size={self.patch_size} and feature_dim={self.feature_dim} must be >= 1"
            )
        if not 1 <= self.num_classes <= 255:
            raise ManifestSchemaError(f"num_classes must be in [1, 255], got {self.num_classes}")
        if 0 <= self.ignore_index < self.num_classes:
            raise ManifestSchemaError(
                f"ignore_index {self.ignore_index} collides with class range "
                f"[0, {self.num_classes})"
            )

    # -- paths -------------------------------------------------------------

    @property
    def manifest_path(self) -> str:
        return os.path.join(self.root, MANIFEST_NAME)

    def _resolve(self, rel_path: str) -> str:
        return os.path.join(self.root, rel_path)

    # -- read path ----------------------------------------------------------

    def image_ids(self) -> list:
        return list(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, image_id) -> bool:
        return image_id in self._entries

    def entry(self, image_id: str) -> SampleEntry:
        try:
            return self._entries[image_id]
        except KeyError:
            raise UnknownImageIdError(f"image_id {image_id!r} not in store") from None

    def load_features(self, image_id: str) -> FeatureMap:
        entry = self.entry(image_id)
        path = self._resolve(entry.feature_path)
        _read_feature_header(path, entry, self.feature_dim)
        values = np.load(path)
        if not np.all(np.isfinite(values)):
            raise FeatureDecodeError(f"{entry.feature_path}: non-finite feature values")
        _check_grid(entry, values.shape[0], values.shape[1], self.patch_size)
        return FeatureMap(image_id, values, entry.image_h, entry.image_w)

    def load_labels(self, image_id: str) -> LabelMask | None:
        entry = self.entry(image_id)
        if entry.mask_path is None:
            return None
        mask = load_mask(self._resolve(entry.mask_path), self.num_classes, self.ignore_index)
        if (mask.h, mask.w) != (entry.image_h, entry.image_w):
            raise DimensionMismatchError(
                f"sample {image_id!r}: mask is {mask.h}x{mask.w} but image is "
                f"{entry.image_h}x{entry.image_w}"
            )
        return mask

    def load_sample(self, image_id: str) -> ImageSample:
        entry = self.entry(image_id)
        return ImageSample(
            features=self.load_features(image_id),
            labels=self.load_labels(image_id),
            provenance=entry.provenance,
        )

    # -- write path ----------------------------------------------------------

    def write_sample(self, features: FeatureMap, labels: LabelMask | None = None,
                     provenance: str | None = None, palette: list | None = None) -> SampleEntry:
        """Persist one sample and atomically update the manifest.

        Order matters: feature and mask files land on disk (each via
        temp+rename) before the manifest references them.
        """
        image_id = features.image_id
        if not _ID_RE.match(image_id or ""):
            raise InvalidArgumentError(f"image_id {image_id!r} is not filesystem-safe")
        if image_id in self._entries:
            raise DuplicateImageIdError(f"image_id {image_id!r} already in store")
        values = np.ascontiguousarray(features.values, dtype="<f4")
        if values.ndim != 3 or values.shape[2] != self.feature_dim:
            raise DimensionMismatchError(
                f"sample {image_id!r}: feature shape {values.shape} does not end in "
                f"feature_dim {self.feature_dim}"
            )
        if provenance is not None and provenance not in PROVENANCE_TAGS:
            raise InvalidArgumentError(
                f"provenance {provenance!r} not one of {PROVENANCE_TAGS}"
            )
        if labels is not None and (labels.h, labels.w) != (features.image_h, features.image_w):
            raise DimensionMismatchError(
                f"sample {image_id!r}: mask is {labels.h}x{labels.w} but image is "
                f"{features.image_h}x{features.image_w}"
            )
        entry = SampleEntry(
            image_id=image_id,
            feature_path=f"features/{image_id}.npy",
            image_h=int(features.image_h),
            image_w=int(features.image_w),
            mask_path=f"masks/{image_id}.png" if labels is not None else None,
            provenance=provenance,
        )
        _check_grid(entry, values.shape[0], values.shape[1], self.patch_size)

        os.makedirs(os.path.join(self.root, "features"), exist_ok=True)
        feature_abs = self._resolve(entry.feature_path)
        fd, tmp = tempfile.mkstemp(dir=os.path.dirname(feature_abs), suffix=".tmp")
        try:
            with os.fdopen(fd, "wb") as fh:
                np.lib.format.write_array(fh, values, version=(1, 0))
            os.replace(tmp, feature_abs)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
        if labels is not None:
            os.makedirs(os.path.join(self.root, "masks"), exist_ok=True)
            save_mask(labels, self._resolve(entry.mask_path), palette=palette)

        self._entries[image_id] = entry
        self.write_manifest()
        return entry

    def add_entry(self, entry: SampleEntry) -> None:
        """Register a prepared manifest row without copying payload files.

        Used when a derived store references another store's feature files
        by relative path. The referenced feature header is validated; the
        caller still owns write_manifest().
        """
        if not entry.image_id:
            raise InvalidArgumentError("image_id must be non-empty")
        if entry.image_id in self._entries:
            raise DuplicateImageIdError(f"image_id {entry.image_id!r} already in store")
        if entry.provenance is not None and entry.provenance not in PROVENANCE_TAGS:
            raise InvalidArgumentError(
                f"provenance {entry.provenance!r} not one of {PROVENANCE_TAGS}"
            )
        shape = _read_feature_header(self._resolve(entry.feature_path), entry, self.feature_dim)
        _check_grid(entry, shape[0], shape[1], self.patch_size)
        self._entries[entry.image_id] = entry

    def manifest_dict(self) -> dict:
        samples = []
        for entry in self._entries.values():
            row = {
                "image_id": entry.image_id,
                "feature_path": entry.feature_path,
                "image_h": entry.image_h,
                "image_w": entry.image_w,
            }
            if entry.mask_path is not None:
                row["mask_path"] = entry.mask_path
            if entry.provenance is not None:
                row["provenance"] = entry.provenance
            samples.append(row)
        return {
            "version": STORE_VERSION,
            "patch_size": self.patch_size,
            "feature_dim": self.feature_dim,
            "num_classes": self.num_classes,
            "ignore_index": self.ignore_index,
            "samples": samples,
        }

    def write_manifest(self) -> None:
        payload = (json.dumps(self.manifest_dict(), indent=2) + "\n").encode("utf-8")
        _atomic_write_bytes(self.manifest_path, payload)

    # -- integrity -----------------------------------------------------------

    def fingerprint(self) -> str:
        """SHA-256 over the manifest and every referenced file, in manifest order.

        Training must leave this unchanged; that is the executable form of
        the frozen-backbone promise.
        """
        digest = hashlib.sha256()
        digest.update(json.dumps(self.manifest_dict(), sort_keys=True).encode("utf-8"))
        for entry in self._entries.values():
            for rel in (entry.feature_path, entry.mask_path):
                if rel is None:
                    continue
                with open(self._resolve(rel), "rb") as fh:
                    for chunk in iter(lambda: fh.read(1 << 20), b""):
                        digest.update(chunk)
        return digest.hexdigest()


def create_store(root, patch_size: int, feature_dim: int, num_classes: int,
                 ignore_index: int = IGNORE_INDEX) -> FeatureStore:
    """Initialize an empty store directory with a manifest."""
    os.makedirs(root, exist_ok=True)
    store = FeatureStore(root, patch_size, feature_dim, num_classes, ignore_index)
    if os.path.exists(store.manifest_path):
        raise InvalidArgumentError(f"{store.manifest_path} already exists")
    store.write_manifest()
    return store


def _require(mapping: dict, key: str, kind, where: str):
    if key not in mapping:
        raise ManifestSchemaError(f"{where}: missing required field {key!r}")
    value = mapping[key]
    if kind is int and isinstance(value, bool) or not isinstance(value, kind):
        raise ManifestSchemaError(
            f"{where}: field {key!r} must be {kind.__name__}, got {type(value).__name__}"
        )
    return value


def open_store(root) -> FeatureStore:
    """Open and eagerly validate a store (manifest schema + every NPY header)."""
    manifest_path = os.path.join(root, MANIFEST_NAME) if os.path.isdir(root) else root
    store_root = os.path.dirname(manifest_path) or "."
    with open(manifest_path, "r", encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ManifestSchemaError(f"{manifest_path}: not valid JSON ({exc})") from exc
    if not isinstance(raw, dict):
        raise ManifestSchemaError(f"{manifest_path}: top level must be a JSON object")
    version = _require(raw, "version", int, MANIFEST_NAME)
    if version != STORE_VERSION:
        raise ManifestSchemaError(f"manifest version {version} unsupported; expected {STORE_VERSION}")
    entries = []
    rows = _require(raw, "samples", list, MANIFEST_NAME)
    for i, row in enumerate(rows):
        where = f"samples[{i}]"
        if not isinstance(row, dict):
            raise ManifestSchemaError(f"{where}: must be a JSON object")
        provenance = row.get("provenance")
        if provenance is not None and provenance not in PROVENANCE_TAGS:
            raise ManifestSchemaError(
                f"{where}: provenance {provenance!r} not one of {PROVENANCE_TAGS}"
            )
        mask_path = row.get("mask_path")
        if mask_path is not None and not isinstance(mask_path, str):
            raise ManifestSchemaError(f"{where}: mask_path must be a string")
        entries.append(SampleEntry(
            image_id=_require(row, "image_id", str, where),
            feature_path=_require(row, "feature_path", str, where),
            image_h=_require(row, "image_h", int, where),
            image_w=_require(row, "image_w", int, where),
            mask_path=mask_path,
            provenance=provenance,
        ))
    store = FeatureStore(
        store_root,
        patch_size=_require(raw, "patch_size", int, MANIFEST_NAME),
        feature_dim=_require(raw, "feature_dim", int, MANIFEST_NAME),
        num_classes=_require(raw, "num_classes", int, MANIFEST_NAME),
        ignore_index=_require(raw, "ignore_index", int, MANIFEST_NAME),
        entries=entries,
    )
    for entry in entries:
        shape = _read_feature_header(store._resolve(entry.feature_path), entry, store.feature_dim)
        _check_grid(entry, shape[0], shape[1], store.patch_size)
    return store


def audit_store(root) -> dict:
    """Run every open/load-time check, collecting issues instead of raising.

    Returns {"ok": bool, "issues": [str, ...], "num_samples": int}; used by
    the CLI's verify subcommand so one pass reports all problems at once.
    """
    issues = []
    num_samples = 0
    try:
        store = open_store(root)
    except Exception as exc:
        return {"ok": False, "issues": [str(exc)], "num_samples": 0}
    num_samples = len(store)
    for image_id in store.image_ids():
        try:
            store.load_sample(image_id)
        except Exception as exc:
            issues.append(f"{image_id}: {exc}")
    return {"ok": not issues, "issues": issues, "num_samples": num_samples}
