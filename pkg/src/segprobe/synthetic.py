"""Synthetic linearly separable stores for tests, demos, and benchmarks.

Tokens encode a class as a one-hot prefix plus Gaussian noise, so a linear
head can fit them almost perfectly; what accuracy remains unreachable
lives in a thin band around region boundaries where upsampled logits
blend. Ground-truth masks are built by nearest-node upsampling of the
same class lattice the tokens came from, which keeps mask boundaries on
the midlines between patch nodes — the same place the endpoint-aligned
bilinear argmax puts them.
"""

from __future__ import annotations

import numpy as np

from . import seeding
from .cluster import nearest_index_map
from .errors import InvalidArgumentError
from .labels import IGNORE_INDEX, LabelMask
from .store import FeatureMap, FeatureStore, create_store


def random_class_grid(grid_h: int, grid_w: int, num_classes: int, seed,
                      sites: int | None = None) -> np.ndarray:
    """Random Voronoi partition of a lattice into class regions.

    Sites get classes round-robin, so with sites >= num_classes every
    class owns at least one cell (the site's own).
    """
    if num_classes < 1:
        raise InvalidArgumentError(f"num_classes must be >= 1, got {num_classes}")
    rng = seeding.generator(seed, "synth") if isinstance(seed, int) else seed
    sites = max(num_classes, sites or num_classes)
    if sites > grid_h * grid_w:
        raise InvalidArgumentError(
            f"{sites} sites do not fit a {grid_h}x{grid_w} grid"
        )
    flat = rng.choice(grid_h * grid_w, size=sites, replace=False)
    site_yx = np.stack([flat // grid_w, flat % grid_w], axis=1).astype(np.float64)
    site_class = np.arange(sites) % num_classes
    yy, xx = np.meshgrid(np.arange(grid_h), np.arange(grid_w), indexing="ij")
    cells = np.stack([yy.ravel(), xx.ravel()], axis=1).astype(np.float64)
    d2 = ((cells[:, None, :] - site_yx[None, :, :]) ** 2).sum(axis=2)
    nearest = np.argmin(d2, axis=1)
    return site_class[nearest].reshape(grid_h, grid_w).astype(np.uint8)


def nearest_node_upsample(grid: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Expand a class lattice to pixels by nearest-node lookup."""
    rows = nearest_index_map(grid.shape[0], out_h)
    cols = nearest_index_map(grid.shape[1], out_w)
    return grid[np.ix_(rows, cols)]


def random_class_mask(h: int, w: int, num_classes: int, seed,
                      sites: int | None = None,
                      ignore_index: int = IGNORE_INDEX) -> LabelMask:
    """Dense pixel-level Voronoi mask; region corruption test bed."""
    values = random_class_grid(h, w, num_classes, seed, sites=sites)
    return LabelMask(values, num_classes, ignore_index)


def tokens_for_grid(grid: np.ndarray, feature_dim: int, noise_sigma: float,
                    rng: np.random.Generator) -> np.ndarray:
    """(grid_h, grid_w, feature_dim) float32 tokens: one-hot class prefix
    plus isotropic Gaussian noise."""
    num_classes = int(grid.max()) + 1
    if feature_dim < num_classes:
        raise InvalidArgumentError(
            f"feature_dim {feature_dim} cannot one-hot encode {num_classes} classes"
        )
    h, w = grid.shape
    tokens = np.zeros((h, w, feature_dim), dtype=np.float32)
    onehot = np.eye(num_classes, feature_dim, dtype=np.float32)
    tokens += onehot[grid]
    if noise_sigma > 0:
        tokens += rng.normal(0.0, noise_sigma, size=tokens.shape).astype(np.float32)
    return tokens


def build_synthetic_store(root, num_images: int = 4, grid_h: int = 56, grid_w: int = 56,
                          num_classes: int = 4, feature_dim: int = 16,
                          patch_size: int = 4, noise_sigma: float = 0.1,
                          seed: int = 0, sites: int | None = None,
                          with_masks: bool = True) -> FeatureStore:
    """Create a store of separable samples with aligned ground-truth masks."""
    store = create_store(root, patch_size=patch_size, feature_dim=feature_dim,
                         num_classes=num_classes)
    image_h, image_w = grid_h * patch_size, grid_w * patch_size
    for i in range(num_images):
        grid_rng = seeding.generator(seed, "synth", i, 0)
        noise_rng = seeding.generator(seed, "synth", i, 1)
        grid = random_class_grid(grid_h, grid_w, num_classes, grid_rng, sites=sites)
        features = FeatureMap(
            image_id=f"synthetic-{i:03d}",
            values=tokens_for_grid(grid, feature_dim, noise_sigma, noise_rng),
            image_h=image_h,
            image_w=image_w,
        )
        labels = None
        if with_masks:
            labels = LabelMask(nearest_node_upsample(grid, image_h, image_w),
                               num_classes)
        store.write_sample(features, labels=labels,
                           provenance="gt" if with_masks else None)
    return store
