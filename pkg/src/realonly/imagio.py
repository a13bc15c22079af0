"""Image decoding/encoding and the float raster type used across the pipeline."""
from __future__ import annotations

import io
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image, UnidentifiedImageError


class ImageError(Exception):
    """Raised when an image cannot be read, written, or transformed."""


@dataclass(frozen=True, eq=False)
class Raster:
    """Decoded image as float planes in [0, 1].

    ``data`` has shape ``(channels, height, width)``; ``width`` is the spectral
    M and ``height`` is N. The array is copied, clamped and frozen on
    construction, so a Raster can be shared freely between threads.
    """

    data: np.ndarray
    source: Optional[str] = None

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[None]
        if arr.ndim != 3 or arr.shape[0] not in (1, 3):
            raise ImageError(f"raster must have 1 or 3 channels, got shape {arr.shape}")
        if arr.shape[1] < 1 or arr.shape[2] < 1:
            raise ImageError(f"empty raster of shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ImageError("raster contains non-finite samples")
        np.clip(arr, 0.0, 1.0, out=arr)
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def with_data(self, data: np.ndarray) -> "Raster":
        return Raster(data, source=self.source)

    def to_uint8(self) -> np.ndarray:
        """HxW or HxWx3 uint8 array, rounded half-to-even."""
        q = np.rint(self.data * 255.0).astype(np.uint8)
        if self.channels == 1:
            return q[0]
        return np.moveaxis(q, 0, -1)

    def quantized(self) -> "Raster":
        return self.with_data(np.rint(self.data * 255.0) / 255.0)


def from_uint8(arr: np.ndarray, source: Optional[str] = None) -> Raster:
    arr = np.asarray(arr)
    if arr.ndim == 2:
        planes = arr[None]
    elif arr.ndim == 3:
        planes = np.moveaxis(arr, -1, 0)
    else:
        raise ImageError(f"unexpected array shape {arr.shape}")
    return Raster(planes.astype(np.float64) / 255.0, source=source)


def _decode(img: Image.Image, source: str) -> Raster:
    if img.mode in ("L", "1"):
        arr = np.asarray(img.convert("L"))
    elif img.mode == "P":
        # palette images may carry transparency; keep color only
        conv = img.convert("RGBA") if "transparency" in img.info else img.convert("RGB")
        arr = np.asarray(conv)[..., :3]
    elif img.mode == "LA":
        arr = np.asarray(img)[..., 0]
    elif img.mode in ("I;16", "I;16B", "I;16L", "I"):
        raise ImageError(f"{source}: unsupported bit depth (mode {img.mode})")
    else:
        arr = np.asarray(img.convert("RGB"))
    return from_uint8(arr, source=source)


_FORMATS = {"PNG", "PPM", "JPEG"}


def load_image(path) -> Raster:
    """Decode a PNG, binary PPM or JPEG file into a Raster.

    Samples are mapped by v/255, grayscale stays single-channel and alpha is
    dropped.
    """
    path = Path(path)
    if not path.is_file():
        raise ImageError(f"{path}: no such file")
    try:
        with Image.open(path) as img:
            if img.format not in _FORMATS:
                raise ImageError(f"{path}: unsupported format {img.format}")
            if img.format == "PPM" and img.mode not in ("RGB", "L"):
                raise ImageError(f"{path}: unsupported PPM variant (mode {img.mode})")
            img.load()
            return _decode(img, str(path))
    except ImageError:
        raise
    except UnidentifiedImageError as exc:
        raise ImageError(f"{path}: unsupported or unrecognised format") from exc
    except (OSError, SyntaxError, ValueError) as exc:
        raise ImageError(f"{path}: corrupt image stream ({exc})") from exc


def _to_pil(raster: Raster) -> Image.Image:
    arr = raster.to_uint8()
    return Image.fromarray(arr, mode="L" if arr.ndim == 2 else "RGB")


def encode_image(raster: Raster, fmt: str = "png", quality: int = 95) -> bytes:
    fmt = fmt.lower()
    buf = io.BytesIO()
    img = _to_pil(raster)
    if fmt == "png":
        img.save(buf, format="PNG")
    elif fmt == "ppm":
        if raster.channels == 1:
            img = img.convert("RGB")
        img.save(buf, format="PPM")
    elif fmt in ("jpeg", "jpg"):
        if not isinstance(quality, (int, np.integer)) or not 1 <= quality <= 100:
            raise ImageError(f"invalid JPEG quality {quality!r}; expected 1..100")
        img.save(buf, format="JPEG", quality=int(quality))
    else:
        raise ImageError(f"unsupported output format {fmt!r}")
    return buf.getvalue()


def save_image(raster: Raster, path, fmt: Optional[str] = None, quality: int = 95) -> None:
    """Write a raster as PNG, PPM (P6) or JPEG.

    ``fmt`` defaults to the file suffix. Samples are quantized to 8 bits.
    """
    path = Path(path)
    if fmt is None:
        fmt = path.suffix.lstrip(".").lower() or "png"
    payload = encode_image(raster, fmt, quality)
    try:
        path.write_bytes(payload)
    except OSError as exc:
        raise ImageError(f"{path}: cannot write ({exc})") from exc


def jpeg_roundtrip(raster: Raster, quality: int) -> Raster:
    payload = encode_image(raster, "jpeg", quality)
    with Image.open(io.BytesIO(payload)) as img:
        img.load()
        out = _decode(img, "<jpeg>")
    return raster.with_data(out.data)


def center_crop(raster: Raster, size: int) -> Raster:
    """Square crop of side ``size``; odd margins put the extra pixel after."""
    if size < 1 or size > min(raster.width, raster.height):
        raise ImageError(
            f"crop size {size} exceeds raster dimensions {raster.width}x{raster.height}"
        )
    top = (raster.height - size) // 2
    left = (raster.width - size) // 2
    return raster.with_data(raster.data[:, top:top + size, left:left + size])


def _source_coords(n_dst: int, n_src: int) -> np.ndarray:
    scale = n_src / n_dst
    return (np.arange(n_dst) + 0.5) * scale - 0.5


def resize_plane(plane: np.ndarray, new_h: int, new_w: int, method: str = "bilinear") -> np.ndarray:
    """Resample a 2-D array with half-pixel centres and edge clamping."""
    h, w = plane.shape
    ys = _source_coords(new_h, h)
    xs = _source_coords(new_w, w)
    if method == "nearest":
        # round half up so integer upscales replicate in aligned blocks
        yi = np.clip(np.floor(ys + 0.5).astype(int), 0, h - 1)
        xi = np.clip(np.floor(xs + 0.5).astype(int), 0, w - 1)
        return plane[np.ix_(yi, xi)]
    if method != "bilinear":
        raise ImageError(f"unknown resize method {method!r}")
    ys = np.clip(ys, 0, h - 1)
    xs = np.clip(xs, 0, w - 1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    top = plane[np.ix_(y0, x0)] * (1 - fx) + plane[np.ix_(y0, x1)] * fx
    bot = plane[np.ix_(y1, x0)] * (1 - fx) + plane[np.ix_(y1, x1)] * fx
    return top * (1 - fy) + bot * fy


def resize(raster: Raster, new_w: int, new_h: int, method: str = "bilinear") -> Raster:
    if new_w < 1 or new_h < 1:
        raise ImageError(f"resize target must be at least 1x1, got {new_w}x{new_h}")
    planes = np.stack([resize_plane(p, new_h, new_w, method) for p in raster.data])
    return raster.with_data(planes)
