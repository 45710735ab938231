"""Seed splitting: one root seed per run, independent streams per purpose.

Streams are derived with numpy's SeedSequence and a fixed numeric purpose
key (plus optional extra terms such as the training iteration and batch
slot), so any stream can be reconstructed on its own without replaying the
draws of the others. This is what makes runs reproducible from a single
``--seed`` while keeping shuffling, augmentation, and label synthesis
statistically independent.
"""

from __future__ import annotations

import numpy as np

# Fixed purpose indices; never renumber, or old runs stop being reproducible.
PURPOSES = {
    "init": 0,
    "shuffle": 1,
    "augment": 2,
    "synth": 3,
    "cluster": 4,
}


def seed_sequence(root_seed: int, purpose: str, *key: int) -> np.random.SeedSequence:
    """SeedSequence for ``purpose`` (and optional sub-keys) under ``root_seed``."""
    if purpose not in PURPOSES:
        raise KeyError(f"unknown seed purpose {purpose!r}")
    return np.random.SeedSequence(root_seed, spawn_key=(PURPOSES[purpose], *key))


def generator(root_seed: int, purpose: str, *key: int) -> np.random.Generator:
    """Fresh PCG64 generator for one purpose stream."""
    return np.random.Generator(np.random.PCG64(seed_sequence(root_seed, purpose, *key)))


def derive_seed(root_seed: int, purpose: str, *key: int) -> int:
    """Collapse a purpose stream to a plain integer seed.

    For APIs that take a bare ``seed`` argument (label synthesis, k-means,
    augmentation) rather than a Generator.
    """
    return int(seed_sequence(root_seed, purpose, *key).generate_state(1)[0])
