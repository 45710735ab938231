import numpy as np
import pytest
from PIL import Image


def _gradient(w, h):
    x = np.linspace(0, 255, w, dtype=np.uint8)
    y = np.linspace(0, 255, h, dtype=np.uint8)
    return np.stack([np.tile(x, (h, 1)),
                     np.tile(y[:, None], (1, w)),
                     np.full((h, w), 128, dtype=np.uint8)], axis=-1)


def _noise(w, h, seed):
    return np.random.default_rng(seed).integers(0, 256, size=(h, w, 3)).astype(np.uint8)


def _shapes(w, h):
    img = np.full((h, w, 3), 40, dtype=np.uint8)
    img[h // 4: 3 * h // 4, w // 4: w // 2] = (200, 60, 60)
    img[h // 8: h // 2, w // 2: 7 * w // 8] = (60, 200, 120)
    return img


@pytest.fixture
def image_dir(tmp_path):
    d = tmp_path / "images"
    d.mkdir()
    Image.fromarray(_gradient(96, 64)).save(d / "photo-a.png")
    Image.fromarray(_noise(100, 76, seed=1)).save(d / "photo-b.jpg", quality=95)
    Image.fromarray(_noise(64, 64, seed=2)).save(d / "photo-c.png")
    Image.fromarray(_shapes(80, 56)).save(d / "photo-d.jpg", quality=95)
    return d


@pytest.fixture
def messy_dir(image_dir):
    (image_dir / "broken.jpg").write_bytes(b"this is not an image")
    Image.fromarray(_noise(5, 5, seed=3)).save(image_dir / "tiny.png")
    return image_dir
