"""Noise residual extraction: image minus a denoised copy of itself."""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
from scipy import ndimage

from .imagio import ImageError, Raster, load_image


class ExtractorError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Residual:
    """Signed, unclamped noise planes shaped like the source raster."""

    data: np.ndarray
    source: Optional[str] = None

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[None]
        if arr.ndim != 3:
            raise ExtractorError(f"residual must be (channels, height, width), got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ExtractorError("residual contains non-finite samples")
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def shape(self) -> tuple:
        return self.data.shape


@dataclass(frozen=True)
class ExtractorSpec:
    kind: str = "gaussian"
    sigma: float = 1.0
    window: int = 3
    levels: int = 2
    threshold: float = 0.02
    directory: Optional[str] = None

    def __post_init__(self):
        if self.kind == "gaussian":
            if not self.sigma > 0:
                raise ExtractorError(f"gaussian sigma must be > 0, got {self.sigma}")
        elif self.kind == "median":
            if self.window < 3 or self.window % 2 == 0:
                raise ExtractorError(f"median window must be odd and >= 3, got {self.window}")
        elif self.kind == "wavelet":
            if not 1 <= self.levels <= 5:
                raise ExtractorError(f"wavelet levels must be in 1..5, got {self.levels}")
            if not self.threshold >= 0:
                raise ExtractorError(f"wavelet threshold must be >= 0, got {self.threshold}")
        elif self.kind == "external":
            if not self.directory:
                raise ExtractorError("external extractor needs a residual directory")
        else:
            raise ExtractorError(f"unknown extractor kind {self.kind!r}")

    @property
    def ident(self) -> str:
        """Stable textual id, also accepted by :meth:`parse`."""
        if self.kind == "gaussian":
            return f"gaussian:{self.sigma!r}"
        if self.kind == "median":
            return f"median:{self.window}"
        if self.kind == "wavelet":
            return f"wavelet:{self.levels}:{self.threshold!r}"
        return f"external:{self.directory}"

    @classmethod
    def parse(cls, text: str) -> "ExtractorSpec":
        """Parse ``gaussian[:sigma]``, ``median[:window]``,
        ``wavelet[:levels[:threshold]]`` or ``external:DIR``."""
        kind, _, rest = text.strip().partition(":")
        args = rest.split(":") if rest else []
        try:
            if kind == "gaussian":
                return cls("gaussian", sigma=float(args[0]) if args else 1.0)
            if kind == "median":
                return cls("median", window=int(args[0]) if args else 3)
            if kind == "wavelet":
                levels = int(args[0]) if args else 2
                thr = float(args[1]) if len(args) > 1 else 0.02
                return cls("wavelet", levels=levels, threshold=thr)
            if kind == "external":
                return cls("external", directory=rest or None)
        except (ValueError, IndexError) as exc:
            raise ExtractorError(f"bad extractor spec {text!r}: {exc}") from exc
        raise ExtractorError(f"unknown extractor kind {kind!r}")


def gaussian_kernel(sigma: float) -> np.ndarray:
    radius = int(math.ceil(3 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(x * x) / (2 * sigma * sigma))
    return k / k.sum()


def gaussian_denoise(raster: Raster, sigma: float) -> Raster:
    """Separable Gaussian blur, radius ceil(3 sigma), edge replication."""
    if not sigma > 0:
        raise ExtractorError(f"sigma must be > 0, got {sigma}")
    k = gaussian_kernel(sigma)
    out = ndimage.correlate1d(raster.data, k, axis=1, mode="nearest")
    out = ndimage.correlate1d(out, k, axis=2, mode="nearest")
    return raster.with_data(out)


def median_denoise(raster: Raster, window: int) -> Raster:
    if window < 3 or window % 2 == 0:
        raise ExtractorError(f"median window must be odd and >= 3, got {window}")
    out = ndimage.median_filter(raster.data, size=(1, window, window), mode="nearest")
    return raster.with_data(out)


_SQRT2 = math.sqrt(2.0)


def haar_forward(plane: np.ndarray, levels: int) -> Tuple[np.ndarray, List[Tuple[np.ndarray, np.ndarray, np.ndarray]]]:
    """Orthonormal 2-D Haar analysis.

    Returns the coarsest approximation and a list of (horizontal, vertical,
    diagonal) detail bands, finest first. Both dimensions must be divisible
    by ``2**levels``.
    """
    approx = np.asarray(plane, dtype=np.float64)
    details = []
    for _ in range(levels):
        lo = (approx[0::2] + approx[1::2]) / _SQRT2
        hi = (approx[0::2] - approx[1::2]) / _SQRT2
        ll = (lo[:, 0::2] + lo[:, 1::2]) / _SQRT2
        lh = (lo[:, 0::2] - lo[:, 1::2]) / _SQRT2
        hl = (hi[:, 0::2] + hi[:, 1::2]) / _SQRT2
        hh = (hi[:, 0::2] - hi[:, 1::2]) / _SQRT2
        details.append((lh, hl, hh))
        approx = ll
    return approx, details


def haar_inverse(approx: np.ndarray, details) -> np.ndarray:
    out = approx
    for lh, hl, hh in reversed(details):
        h, w = out.shape
        lo = np.empty((h, 2 * w))
        hi = np.empty((h, 2 * w))
        lo[:, 0::2] = (out + lh) / _SQRT2
        lo[:, 1::2] = (out - lh) / _SQRT2
        hi[:, 0::2] = (hl + hh) / _SQRT2
        hi[:, 1::2] = (hl - hh) / _SQRT2
        out = np.empty((2 * h, 2 * w))
        out[0::2] = (lo + hi) / _SQRT2
        out[1::2] = (lo - hi) / _SQRT2
    return out


def soft_threshold(x: np.ndarray, t: float) -> np.ndarray:
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


def wavelet_denoise(raster: Raster, levels: int, threshold: float) -> Raster:
    """Haar shrinkage: soft-threshold every detail band, keep the approximation."""
    if not 1 <= levels <= 5:
        raise ExtractorError(f"wavelet levels must be in 1..5, got {levels}")
    if threshold < 0:
        raise ExtractorError(f"threshold must be >= 0, got {threshold}")
    block = 2 ** levels
    _, h, w = raster.shape
    ph = (-h) % block
    pw = (-w) % block
    out = []
    for plane in raster.data:
        padded = np.pad(plane, ((0, ph), (0, pw)), mode="symmetric")
        approx, details = haar_forward(padded, levels)
        details = [tuple(soft_threshold(d, threshold) for d in band) for band in details]
        out.append(haar_inverse(approx, details)[:h, :w])
    return raster.with_data(np.stack(out))


def denoise(raster: Raster, spec: ExtractorSpec) -> Raster:
    if spec.kind == "gaussian":
        return gaussian_denoise(raster, spec.sigma)
    if spec.kind == "median":
        return median_denoise(raster, spec.window)
    if spec.kind == "wavelet":
        return wavelet_denoise(raster, spec.levels, spec.threshold)
    raise ExtractorError(f"extractor {spec.kind!r} has no built-in denoiser")


def external_residual_path(directory, image_path) -> Path:
    return Path(directory) / (Path(image_path).stem + ".png")


def decode_external(encoded: Raster) -> Residual:
    """Map stored [0, 1] samples back to signed residual values."""
    return Residual(encoded.data * 2.0 - 1.0, source=encoded.source)


def encode_external(residual: Residual) -> Raster:
    """Inverse of :func:`decode_external`; values outside [-1, 1] saturate."""
    return Raster((residual.data + 1.0) / 2.0, source=residual.source)


def load_external_residual(directory, image_path) -> Raster:
    path = external_residual_path(directory, image_path)
    if not path.is_file():
        raise ExtractorError(f"missing external residual {path} for image {image_path}")
    try:
        return load_image(path)
    except ImageError as exc:
        raise ExtractorError(str(exc)) from exc


def extract_residual(raster: Raster, spec: ExtractorSpec, image_path=None) -> Residual:
    """Noise pattern ``I - denoise(I)`` per channel.

    For ``external`` specs the residual is read from ``<dir>/<stem>.png``,
    where the stem comes from ``image_path`` (or ``raster.source``).
    """
    if spec.kind == "external":
        ref = image_path or raster.source
        if ref is None:
            raise ExtractorError("external extractor needs the source image path")
        encoded = load_external_residual(spec.directory, ref)
        if encoded.shape != raster.shape:
            raise ExtractorError(
                f"external residual shape {encoded.shape} does not match image shape {raster.shape}"
            )
        return decode_external(encoded)
    smooth = denoise(raster, spec)
    return Residual(raster.data - smooth.data, source=raster.source)
