"""Desk-scale stand-ins for generated images.

A photo is box-downsampled by ``factor`` and brought back to full size by
``log2(factor)`` stride-2 upsampling stages, the way a generator decoder
grows its output. Each stage is a 4x4 transposed convolution:

* ``nearest``  - taps ``outer([0,1,1,0])``, i.e. pixel replication;
* ``bilinear`` - taps ``outer([1,3,3,1]/4)``, half-pixel bilinear;
* ``transposed_conv`` - a random positive 4x4 kernel.

For the first two, ``jitter`` perturbs the taps multiplicatively, standing
in for learned weights. With ``jitter=0`` the stages are exact nearest /
bilinear resampling, whose four output phases all have unit gain; that
partition of unity cancels the replicated DC term, so such images carry no
spectral peaks at multiples of M/factor. Any phase-gain mismatch (jittered
or random taps) leaves the grid of peaks seen in generator output.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

from .imagio import Raster
from .noise import ExtractorSpec, extract_residual
from .spectrum import Spectrum, mean_spectrum, merge_channels

METHODS = ("nearest", "bilinear", "transposed_conv")
PEAK_RATIO_PASS = 5.0
RATIO_CAP = 1e6

_BASE_TAPS = {
    "nearest": np.array([0.0, 1.0, 1.0, 0.0]),
    "bilinear": np.array([0.25, 0.75, 0.75, 0.25]),
}

# (row offset into the low-res grid, kernel tap) contributing to output phase 0 / 1
_PHASE_TAPS = (((-1, 3), (0, 1)), ((0, 2), (1, 0)))


class SimError(ValueError):
    pass


@dataclass(frozen=True)
class SimSpec:
    method: str = "nearest"
    factor: int = 4
    seed: int = 0
    jitter: float = 0.1

    def __post_init__(self):
        if self.method not in METHODS:
            raise SimError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.factor not in (1, 2, 4, 8):
            raise SimError(f"factor must be 1, 2, 4 or 8, got {self.factor}")
        if self.jitter < 0:
            raise SimError(f"jitter must be >= 0, got {self.jitter}")

    @classmethod
    def parse(cls, text: str, seed: int = 0, jitter: float = 0.1) -> "SimSpec":
        """``method:factor``, e.g. ``nearest:4`` or ``bilinear:8``."""
        method, _, factor = text.partition(":")
        try:
            return cls(method, int(factor) if factor else 4, seed, jitter)
        except ValueError as exc:
            raise SimError(f"bad simulation spec {text!r}: {exc}") from exc


def box_downsample(data: np.ndarray, factor: int) -> np.ndarray:
    c, h, w = data.shape
    return data.reshape(c, h // factor, factor, w // factor, factor).mean(axis=(2, 4))


def stage_kernel(method: str, rng: np.random.Generator, jitter: float) -> np.ndarray:
    """4x4 taps of one stride-2 stage, scaled so the four phase gains average 1."""
    if method == "transposed_conv":
        k = rng.random((4, 4))
    else:
        base = _BASE_TAPS[method]
        k = np.outer(base, base)
        if jitter > 0:
            k = k * (1.0 + jitter * rng.standard_normal((4, 4)))
    return k * (4.0 / k.sum())


def upsample2(data: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Stride-2 transposed convolution with edge replication; (c,h,w) -> (c,2h,2w)."""
    c, h, w = data.shape
    xp = np.pad(data, ((0, 0), (1, 1), (1, 1)), mode="edge")
    out = np.empty((c, 2 * h, 2 * w))
    for r in (0, 1):
        for s in (0, 1):
            acc = np.zeros((c, h, w))
            for da, ka in _PHASE_TAPS[r]:
                for db, kb in _PHASE_TAPS[s]:
                    wgt = kernel[ka, kb]
                    if wgt != 0.0:
                        acc += wgt * xp[:, 1 + da:1 + da + h, 1 + db:1 + db + w]
            out[:, r::2, s::2] = acc
    return out


def simulate(real: Raster, spec: SimSpec) -> Raster:
    """Turn a real photo into a simulated generated image of the same size."""
    c, h, w = real.shape
    f = spec.factor
    if h % f or w % f:
        raise SimError(f"image {w}x{h} is not divisible by factor {f}")
    if f == 1:
        return real
    rng = np.random.Generator(np.random.Philox(spec.seed))
    x = box_downsample(real.data, f)
    for _ in range(int(math.ceil(math.log2(f)))):
        x = upsample2(x, stage_kernel(spec.method, rng, spec.jitter))
    return real.with_data(x)


def expected_period(M: int, factor: int) -> int:
    return M // factor


def _near_multiple(idx: np.ndarray, period: int) -> np.ndarray:
    rem = idx % period
    return np.minimum(rem, period - rem) <= 1


def peak_report(spec: Spectrum, expected_period: int, threshold: float = PEAK_RATIO_PASS) -> dict:
    """Contrast of the predicted peak lattice against the rest of the plane.

    Peak bins are every (u, v) within one bin of a multiple of
    ``expected_period`` in both directions, minus the DC neighbourhood. The
    ratio is mean(peak bins) / median(off-peak bins), capped at 1e6.
    """
    M, N = spec.amp.shape
    p = int(expected_period)
    if p < 1:
        raise SimError(f"period must be positive, got {expected_period}")
    if M % p or N % p:
        raise SimError(f"period {expected_period} does not divide the {M}x{N} spectrum")
    if p < 4:
        # with +-1 bin bands every bin would count as a peak
        raise SimError(f"period {expected_period} leaves no off-peak bins; need >= 4")
    u = np.arange(M)
    v = np.arange(N)
    lattice = _near_multiple(u, p)[:, None] & _near_multiple(v, p)[None, :]
    dc = (np.minimum(u, M - u) <= 1)[:, None] & (np.minimum(v, N - v) <= 1)[None, :]
    peak = spec.amp[lattice & ~dc]
    off = spec.amp[~lattice & ~dc]
    peak_mean = float(peak.mean())
    off_median = float(np.median(off))
    if off_median > 0:
        ratio = min(peak_mean / off_median, RATIO_CAP)
    else:
        ratio = RATIO_CAP if peak_mean > 0 else 1.0
    return {
        "period": p,
        "ratio": ratio,
        "passed": ratio >= threshold,
        "peak_mean": peak_mean,
        "offpeak_median": off_median,
    }


def set_spectrum(rasters: Iterable[Raster], extractor: Optional[ExtractorSpec] = None) -> Spectrum:
    """Mean channel-merged residual amplitude spectrum over a set of images."""
    extractor = extractor or ExtractorSpec()
    return mean_spectrum([merge_channels(extract_residual(r, extractor)) for r in rasters])
