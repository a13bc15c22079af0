"""Amplitude spectra of residuals, row-mean enhancement and grid sampling.

Spectra are indexed ``amp[u, v]`` with ``u`` the frequency along the image
width (M) and ``v`` along the height (N); DC sits at ``[0, 0]``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence, Tuple

import numpy as np
from scipy import fft as sp_fft

from .imagio import Raster, resize_plane
from .noise import Residual


class SpectrumError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Spectrum:
    amp: np.ndarray

    def __post_init__(self):
        arr = np.array(self.amp, dtype=np.float64)
        if arr.ndim != 2:
            raise SpectrumError(f"amplitude plane must be 2-D, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)) or np.any(arr < 0):
            raise SpectrumError("amplitudes must be finite and nonnegative")
        arr.flags.writeable = False
        object.__setattr__(self, "amp", arr)

    @property
    def M(self) -> int:
        return self.amp.shape[0]

    @property
    def N(self) -> int:
        return self.amp.shape[1]


@dataclass(frozen=True, eq=False)
class FeatureVector:
    values: np.ndarray
    grid: Tuple[int, int]
    k: int
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.values)


def _amplitudes(planes: np.ndarray) -> np.ndarray:
    """|DFT|/(MN) of a (C, height, width) stack, returned as (C, M, N) with M = width.

    Uses a real FFT over the v axis and fills the other half of every plane
    from Hermitian symmetry, amp(u, v) = amp(-u mod M, -v mod N).
    """
    stack = np.swapaxes(planes, -1, -2)  # (C, M, N), indexed [x, y]
    M, N = stack.shape[-2:]
    half = np.abs(sp_fft.rfft2(stack, axes=(-2, -1)))
    half /= M * N
    amp = np.empty(stack.shape, dtype=np.float64)
    h = half.shape[-1]
    amp[..., :h] = half
    if N > h:
        v = np.arange(h, N)
        u = (-np.arange(M)) % M
        amp[..., h:] = half[..., u[:, None], (N - v)[None, :]]
    return amp


def dft2_amplitude(plane: np.ndarray) -> Spectrum:
    """|DFT| of a real (height, width) plane with 1/(MN) normalisation."""
    plane = np.asarray(plane, dtype=np.float64)
    if plane.ndim != 2 or plane.size == 0:
        raise SpectrumError(f"expected a non-empty 2-D plane, got shape {plane.shape}")
    if not np.all(np.isfinite(plane)):
        raise SpectrumError("plane contains non-finite samples")
    return Spectrum(_amplitudes(plane[None])[0])


def mean_amplitude(planes) -> Spectrum:
    """Average of the per-plane amplitude spectra."""
    planes = np.asarray(planes, dtype=np.float64)
    if planes.ndim != 3 or planes.shape[0] == 0 or planes[0].size == 0:
        raise SpectrumError("expected a non-empty stack of 2-D planes")
    if not np.all(np.isfinite(planes)):
        raise SpectrumError("plane contains non-finite samples")
    return Spectrum(_amplitudes(planes).mean(axis=0))


def merge_channels(residual: Residual) -> Spectrum:
    """Channel-merged spectrum: each channel transformed on its own, amplitudes averaged."""
    if residual.channels not in (1, 3):
        raise SpectrumError(f"unsupported channel count {residual.channels}")
    return mean_amplitude(residual.data)


def row_profile(spec: Spectrum) -> np.ndarray:
    return spec.amp.sum(axis=1)


def mean_profile(specs: Sequence[Spectrum]) -> np.ndarray:
    specs = list(specs)
    if not specs:
        raise SpectrumError("mean_profile needs at least one spectrum")
    m = specs[0].M
    if any(s.M != m for s in specs):
        raise SpectrumError("all spectra must share the same M")
    return np.mean([row_profile(s) for s in specs], axis=0)


def mean_spectrum(specs: Sequence[Spectrum]) -> Spectrum:
    specs = list(specs)
    if not specs:
        raise SpectrumError("mean_spectrum needs at least one spectrum")
    shape = specs[0].amp.shape
    if any(s.amp.shape != shape for s in specs):
        raise SpectrumError("all spectra must share the same shape")
    return Spectrum(np.mean([s.amp for s in specs], axis=0))


def enhance(spec: Spectrum) -> Spectrum:
    """Zero amplitudes strictly below their row mean, square the rest."""
    amp = spec.amp
    mu = amp.mean(axis=1, keepdims=True)
    return Spectrum(np.where(amp < mu, 0.0, amp * amp))


def grid_shape(M: int, N: int, k: int) -> Tuple[int, int]:
    return (M - 1) // k + 1, (N - 1) // k + 1


def sample_features(spec: Spectrum, k: int, meta=None) -> FeatureVector:
    """Sample ``A'(m k, n k)`` on the grid anchored at DC, row-major."""
    if not isinstance(k, (int, np.integer)) or k < 1 or k > min(spec.M, spec.N):
        raise SpectrumError(f"sampling interval k={k} out of range for {spec.M}x{spec.N}")
    sub = spec.amp[::k, ::k]
    return FeatureVector(sub.ravel().copy(), sub.shape, int(k), dict(meta or {}))


def resize_spectrum(spec: Spectrum, M: int, N: int) -> Spectrum:
    """Bilinear resampling of the amplitude plane, used after small crops."""
    if (M, N) == spec.amp.shape:
        return spec
    return Spectrum(np.maximum(resize_plane(spec.amp, M, N, "bilinear"), 0.0))


def residual_features(residual: Residual, k: int = 32, enhanced: bool = True,
                      spectrum_size=None, meta=None) -> FeatureVector:
    spec = merge_channels(residual)
    if spectrum_size is not None:
        spec = resize_spectrum(spec, *spectrum_size)
    if enhanced:
        spec = enhance(spec)
    meta = dict(meta or {})
    meta.setdefault("enhanced", enhanced)
    return sample_features(spec, k, meta)


def spectrum_to_image(spec: Spectrum, shift: bool = True, log_scale: bool = True) -> Raster:
    """Grayscale rendering: rows are v, columns are u."""
    img = spec.amp.T
    if shift:
        img = np.fft.fftshift(img)
    if log_scale:
        img = np.log1p(img)
    lo, hi = img.min(), img.max()
    if hi - lo <= 0:
        return Raster(np.full(img.shape, 0.5))
    return Raster((img - lo) / (hi - lo))
