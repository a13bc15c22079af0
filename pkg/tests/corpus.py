"""Photographic test corpus built from images bundled with scikit-image,
scikit-learn and matplotlib (no downloads).

Patches are cut at seeded offsets and given a seeded flip/rot90 so that a
few dozen photos yield ~1000 distinct 256x256 patches. Setting
REALONLY_PHOTOS to a directory of PNG/JPEG photos uses those instead.
"""
from __future__ import annotations

import functools
import os
from pathlib import Path
from typing import List

import numpy as np

from realonly.imagio import Raster, from_uint8, load_image

PATCH = 256
_SKIMAGE = ("astronaut", "brick", "camera", "cell", "chelsea", "clock", "coffee", "coins", "grass",
            "gravel", "hubble_deep_field", "immunohistochemistry", "moon", "retina", "rocket")


def _as_raster(arr, name) -> Raster:
    arr = np.asarray(arr)
    if arr.ndim == 3:
        arr = arr[:, :, :3]
    return from_uint8(arr, source=name)


@functools.lru_cache(maxsize=None)
def photos() -> tuple:
    env = os.environ.get("REALONLY_PHOTOS")
    if env:
        out = []
        for p in sorted(Path(env).iterdir()):
            if p.suffix.lower() in (".png", ".jpg", ".jpeg", ".ppm"):
                r = load_image(p)
                if min(r.width, r.height) >= PATCH:
                    out.append(r)
        return tuple(out)
    from skimage import data
    from sklearn.datasets import load_sample_images
    import matplotlib.cbook as cbook
    from PIL import Image

    out = [_as_raster(getattr(data, n)(), n) for n in _SKIMAGE]
    left, right, _ = data.stereo_motorcycle()
    out += [_as_raster(left, "motorcycle_left"), _as_raster(right, "motorcycle_right")]
    for i, img in enumerate(load_sample_images().images):
        out.append(_as_raster(img, f"sklearn{i}"))
    with cbook.get_sample_data("grace_hopper.jpg") as fh:
        out.append(_as_raster(np.asarray(Image.open(fh).convert("RGB")), "grace_hopper"))
    return tuple(out)


def patches(n: int, seed: int, size: int = PATCH) -> List[Raster]:
    """``n`` patches cycling over the photos; offsets and orientation seeded."""
    src = photos()
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        photo = src[i % len(src)]
        c, h, w = photo.shape
        top = int(rng.integers(0, h - size + 1))
        left = int(rng.integers(0, w - size + 1))
        block = photo.data[:, top:top + size, left:left + size]
        block = np.rot90(block, int(rng.integers(0, 4)), axes=(1, 2))
        if rng.integers(0, 2):
            block = block[:, :, ::-1]
        out.append(photo.with_data(np.ascontiguousarray(block)))
    return out
