"""Label masks: dense/pseudo mask I/O plus imperfect-label synthesis.

A mask stores one 8-bit class index per pixel; 255 marks pixels excluded
from both the loss and evaluation. The three synthesizers degrade a dense
ground-truth mask into the supervision regimes studied here:

* ``synth_points``    — a handful of labeled pixels per class,
* ``synth_scribble``  — thin strokes confined to each object,
* ``synth_noisy``     — dense masks corrupted to a requested quality,
                        the stand-in for image-level pseudo-labels.

Point and scribble outputs are sparse but noiseless (every labeled pixel
agrees with the ground truth); noisy outputs are dense but wrong on
purpose. All three are pure functions of (mask, parameters, seed).
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np
from PIL import Image
from scipy import ndimage

from . import metrics
from .errors import (
    CalibrationError,
    InvalidArgumentError,
    InvalidLabelError,
    MaskFormatError,
)

IGNORE_INDEX = 255

# 4-connectivity structuring element; component confinement and boundary
# rings all use this, so a walk can never leak across a diagonal.
_STRUCTURE_4 = ndimage.generate_binary_structure(2, 1)


@dataclass
class LabelMask:
    """Per-pixel class indices at image resolution.

    ``values`` is a (h, w) uint8 array; entries are class indices in
    [0, num_classes) or ``ignore_index``. Labeled pixels (value != ignore)
    are exactly the pixels the masked loss and the metrics look at.
    """

    values: np.ndarray
    num_classes: int
    ignore_index: int = IGNORE_INDEX

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.uint8)
        if self.values.ndim != 2:
            raise InvalidArgumentError(f"mask must be 2-D, got shape {self.values.shape}")
        if not 1 <= self.num_classes <= 255:
            raise InvalidArgumentError(f"num_classes must be in [1, 255], got {self.num_classes}")
        if 0 <= self.ignore_index < self.num_classes:
            raise InvalidArgumentError(
                f"ignore_index {self.ignore_index} collides with class range [0, {self.num_classes})"
            )
        self.validate()

    @property
    def h(self) -> int:
        return self.values.shape[0]

    @property
    def w(self) -> int:
        return self.values.shape[1]

    @property
    def labeled(self) -> np.ndarray:
        """Boolean supervision mask: True where a pixel carries a label."""
        return self.values != self.ignore_index

    @property
    def labeled_count(self) -> int:
        return int(np.count_nonzero(self.labeled))

    def validate(self) -> None:
        bad = (self.values >= self.num_classes) & (self.values != self.ignore_index)
        if np.any(bad):
            y, x = np.argwhere(bad)[0]
            raise InvalidLabelError(
                f"label value {int(self.values[y, x])} at pixel (y={y}, x={x}) is outside "
                f"[0, {self.num_classes}) and is not the ignore index {self.ignore_index}"
            )

    def copy(self) -> "LabelMask":
        return LabelMask(self.values.copy(), self.num_classes, self.ignore_index)

    def classes_present(self) -> list:
        vals = np.unique(self.values)
        return [int(v) for v in vals if v != self.ignore_index]


def load_mask(path, num_classes: int, ignore_index: int = IGNORE_INDEX) -> LabelMask:
    """Read an 8-bit single-channel PNG or PGM mask.

    Palette-indexed PNGs are accepted by reading the index channel directly
    (the VOC convention); grayscale values are class indices either way.
    """
    with Image.open(path) as img:
        if img.mode not in ("L", "P"):
            raise MaskFormatError(
                f"{path}: mode {img.mode!r} unsupported; masks must be 8-bit "
                "single-channel (grayscale or palette-indexed)"
            )
        values = np.asarray(img, dtype=np.uint8)
    try:
        return LabelMask(values, num_classes, ignore_index)
    except InvalidLabelError as exc:
        raise InvalidLabelError(f"{path}: {exc}") from exc


def save_mask(mask: LabelMask, path, palette: list | None = None) -> None:
    """Write a mask as 8-bit PNG (or PGM by extension).

    With ``palette`` (flat [r0,g0,b0,r1,...] list) a palette-indexed PNG is
    written; pixel values are the class indices in both variants, so
    ``load_mask`` round-trips bitwise.
    """
    img = Image.fromarray(mask.values, mode="L")
    if palette is not None:
        img = img.convert("P")
        img.putpalette(palette)
    img.save(path)


def class_palette(n: int = 256) -> list:
    """Flat RGB palette with well-separated colors (VOC-style bit shuffle)."""
    palette = []
    for i in range(n):
        r = g = b = 0
        c = i
        for j in range(8):
            r |= ((c >> 0) & 1) << (7 - j)
            g |= ((c >> 1) & 1) << (7 - j)
            b |= ((c >> 2) & 1) << (7 - j)
            c >>= 3
        palette.extend([r, g, b])
    return palette


# ---------------------------------------------------------------------------
# Point labels


def synth_points(gt: LabelMask, k_per_class: int, seed: int) -> LabelMask:
    """Keep min(k_per_class, class size) uniformly sampled pixels per class.

    Sampling is without replacement, so every labeled output pixel matches
    the ground truth at its location; everything else becomes ignore.
    """
    if k_per_class < 1:
        raise InvalidArgumentError(f"k_per_class must be >= 1, got {k_per_class}")
    if gt.labeled_count < 1:
        raise InvalidArgumentError("ground-truth mask has no labeled pixels")
    rng = np.random.default_rng(seed)
    out = np.full_like(gt.values, gt.ignore_index)
    for cls in gt.classes_present():
        idx = np.flatnonzero(gt.values == cls)
        take = rng.choice(idx, size=min(k_per_class, idx.size), replace=False)
        out.flat[take] = cls
    return LabelMask(out, gt.num_classes, gt.ignore_index)


# ---------------------------------------------------------------------------
# Scribble labels


def _bfs_farthest(inside: np.ndarray, start: tuple) -> tuple:
    """(farthest pixel, its 4-connected graph distance) from ``start``."""
    dist = np.full(inside.shape, -1, dtype=np.int32)
    dist[start] = 0
    queue = deque([start])
    far, far_d = start, 0
    h, w = inside.shape
    while queue:
        y, x = queue.popleft()
        d = dist[y, x] + 1
        for ny, nx in ((y - 1, x), (y + 1, x), (y, x - 1), (y, x + 1)):
            if 0 <= ny < h and 0 <= nx < w and inside[ny, nx] and dist[ny, nx] < 0:
                dist[ny, nx] = d
                if d > far_d:
                    far, far_d = (ny, nx), d
                queue.append((ny, nx))
    return far, far_d


def _component_walk(inside: np.ndarray, length: int, rng: np.random.Generator) -> np.ndarray:
    """Self-avoiding random walk of ~``length`` steps confined to ``inside``.

    Starts at one end of an (approximate) diameter so short strokes still
    span the component; a dead end simply truncates the walk.
    """
    coords = np.argwhere(inside)
    seed_px = tuple(coords[rng.integers(coords.shape[0])])
    start, _ = _bfs_farthest(inside, seed_px)
    visited = np.zeros(inside.shape, dtype=bool)
    visited[start] = True
    y, x = start
    h, w = inside.shape
    for _ in range(length):
        candidates = [
            (ny, nx)
            for ny, nx in ((y - 1, x), (y + 1, x), (y, x - 1), (y, x + 1))
            if 0 <= ny < h and 0 <= nx < w and inside[ny, nx] and not visited[ny, nx]
        ]
        if not candidates:
            break
        y, x = candidates[rng.integers(len(candidates))]
        visited[y, x] = True
    return visited


def synth_scribble(gt: LabelMask, thickness: int, length_frac: float, seed: int) -> LabelMask:
    """One stroke per connected component of each class.

    The stroke is a self-avoiding random walk confined to the component
    (4-connectivity), dilated to ``thickness`` pixels and clipped back to
    the component, with target length ``length_frac`` times the component's
    graph diameter. Labeled output pixels therefore always agree with the
    ground truth.
    """
    if thickness < 1:
        raise InvalidArgumentError(f"thickness must be >= 1, got {thickness}")
    if not 0.0 < length_frac <= 1.0:
        raise InvalidArgumentError(f"length_frac must be in (0, 1], got {length_frac}")
    if gt.labeled_count < 1:
        raise InvalidArgumentError("ground-truth mask has no labeled pixels")
    rng = np.random.default_rng(seed)
    out = np.full_like(gt.values, gt.ignore_index)
    brush = np.ones((thickness, thickness), dtype=bool)
    for cls in gt.classes_present():
        comp_map, n_comp = ndimage.label(gt.values == cls, structure=_STRUCTURE_4)
        for comp_id in range(1, n_comp + 1):
            inside = comp_map == comp_id
            # Two-sweep BFS: diameter estimate, then walk from one endpoint.
            any_px = tuple(np.argwhere(inside)[0])
            end_a, _ = _bfs_farthest(inside, any_px)
            _, diameter = _bfs_farthest(inside, end_a)
            length = max(1, int(round(length_frac * diameter)))
            stroke = _component_walk(inside, length, rng)
            if thickness > 1:
                stroke = ndimage.binary_dilation(stroke, structure=brush) & inside
            out[stroke] = cls
    return LabelMask(out, gt.num_classes, gt.ignore_index)


# ---------------------------------------------------------------------------
# Noisy dense labels


def mask_quality(mask, gt: LabelMask) -> float:
    """mIoU (percent) of a mask against its ground truth.

    Accepts a LabelMask or a raw value array; only ground-truth-labeled
    pixels are scored, matching how noisy-mask quality is quoted. Pixels
    the candidate leaves unlabeled count as misses, so sparse masks score
    by coverage (invisible for a single-class gt, where no wrong class
    exists to route the miss through).
    """
    values = getattr(mask, "values", mask)
    pred = np.asarray(values).astype(np.int64)
    if gt.num_classes >= 2:
        miss = (pred == gt.ignore_index) & gt.labeled
        pred = np.where(miss, (gt.values.astype(np.int64) + 1) % gt.num_classes, pred)
    pred = np.where(gt.labeled, pred, 0)
    return 100.0 * metrics.miou_between(pred, gt, gt.num_classes)


def _boundary_shift(values, labeled, cls, fraction, rng):
    """Grow class ``cls`` by a random subset of its one-pixel boundary ring."""
    region = values == cls
    ring = ndimage.binary_dilation(region, structure=_STRUCTURE_4) & ~region & labeled
    idx = np.flatnonzero(ring)
    if idx.size == 0:
        return None
    take = idx[rng.random(idx.size) < fraction]
    if take.size == 0:
        take = idx[[rng.integers(idx.size)]]
    out = values.copy()
    out.flat[take] = cls
    return out


def _region_flip(values, classes, cls, area_cap, rng):
    """Relabel one whole connected component of ``cls`` to another class."""
    others = [c for c in classes if c != cls]
    if not others:
        return None
    comp_map, n_comp = ndimage.label(values == cls, structure=_STRUCTURE_4)
    if n_comp == 0:
        return None
    areas = np.bincount(comp_map.ravel())[1:]
    small = np.flatnonzero(areas <= area_cap) + 1
    pick = small[rng.integers(small.size)] if small.size else int(np.argmin(areas)) + 1
    out = values.copy()
    out[comp_map == pick] = others[rng.integers(len(others))]
    return out


def synth_noisy(
    gt: LabelMask,
    target_miou_pct: float,
    seed: int,
    tolerance_pct: float = 2.0,
    max_steps: int = 5000,
) -> LabelMask:
    """Corrupt a dense mask until its mIoU against ``gt`` hits a target band.

    Corruption mixes one-pixel boundary dilations of random classes with
    whole-component class flips — the two error modes of CAM-style
    pseudo-labels (sloppy boundaries, confused objects). Proposals that
    would overshoot below the band are rejected and retried at finer
    granularity, so the walk down in quality lands inside
    [target - tolerance, target + tolerance]. Ignore pixels in ``gt`` stay
    ignored; every ground-truth-labeled pixel keeps a committed class, so
    the result is dense supervision wherever the ground truth is labeled.
    """
    if not 0.0 < target_miou_pct <= 100.0:
        raise InvalidArgumentError(
            f"target_miou_pct must be in (0, 100], got {target_miou_pct}"
        )
    lo, hi = target_miou_pct - tolerance_pct, target_miou_pct + tolerance_pct
    rng = np.random.default_rng(seed)
    work = gt.values.copy()
    labeled = gt.labeled
    quality = mask_quality(work, gt)
    if lo <= quality <= hi:
        return LabelMask(work, gt.num_classes, gt.ignore_index)
    classes = gt.classes_present()
    if len(classes) < 2:
        raise CalibrationError(
            f"cannot corrupt a mask with {len(classes)} class(es) below "
            f"{quality:.2f} mIoU (target {target_miou_pct})",
            achieved_miou_pct=quality,
        )
    scale = 1.0
    for _ in range(max_steps):
        # Corrupt down to the target itself, not just into the band, so the
        # result sits mid-band instead of hugging the upper edge.
        if quality <= target_miou_pct:
            break
        cls = classes[rng.integers(len(classes))]
        if rng.random() < 0.7:
            candidate = _boundary_shift(work, labeled, cls, min(0.9, 0.5 * scale), rng)
        else:
            area_cap = max(4, int(scale * 0.05 * gt.labeled_count))
            candidate = _region_flip(work, classes, cls, area_cap, rng)
        if candidate is None:
            continue
        new_quality = mask_quality(candidate, gt)
        if new_quality < lo:
            scale = max(scale * 0.5, 0.01)  # overshoot: retry gentler
            continue
        if new_quality < quality:
            work, quality = candidate, new_quality
            # Regrow after the overshoot brake, or a long descent to a low
            # target stalls on 1-pixel proposals.
            scale = min(1.0, scale * 1.5)
    if not lo <= quality <= hi:
        raise CalibrationError(
            f"could not reach target quality {target_miou_pct} +/- {tolerance_pct} "
            f"within {max_steps} proposals; achieved {quality:.2f}",
            achieved_miou_pct=quality,
        )
    return LabelMask(work, gt.num_classes, gt.ignore_index)
