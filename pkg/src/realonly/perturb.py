"""Seeded post-processing operations for robustness sweeps."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np
from scipy import ndimage

from .imagio import Raster, center_crop, jpeg_roundtrip
from .metrics import psnr


class PerturbError(ValueError):
    pass


# Allowed parameter range per kind (inclusive).
RANGES: Dict[str, tuple] = {
    "blur": (0.1, 1.0),
    "brightness": (0.3, 3.0),
    "gamma": (0.3, 3.0),
    "crop": (96, 256),
    "jpeg": (70, 100),
    "gauss": (1.0, 10.0),
    "saltpepper": (0.001, 0.01),
    "speckle": (0.01, 0.1),
    "poisson": (0.1, 1.0),
}

# PSNR intervals reported for the noise sweeps.
PAPER_PSNR = {
    "gauss": (26.0, 47.0),
    "saltpepper": (18.0, 31.0),
    "speckle": (22.0, 57.0),
    "poisson": (3.0, 58.0),
}

STOCHASTIC = ("gauss", "saltpepper", "speckle", "poisson")

_ALIASES = {
    "gauss_noise": "gauss", "gaussian": "gauss", "sp": "saltpepper", "s&p": "saltpepper",
    "salt_pepper": "saltpepper", "bright": "brightness", "gaussian_blur": "blur",
}


@dataclass(frozen=True)
class PerturbSpec:
    kind: str
    param: Optional[float] = None
    seed: int = 0

    def __post_init__(self):
        kind = _ALIASES.get(self.kind, self.kind)
        object.__setattr__(self, "kind", kind)
        if kind == "none":
            return
        if kind not in RANGES:
            raise PerturbError(f"unknown perturbation {self.kind!r}")
        lo, hi = RANGES[kind]
        if self.param is None or not lo <= self.param <= hi:
            raise PerturbError(f"{kind} parameter {self.param!r} outside [{lo}, {hi}]")
        if kind in ("crop", "jpeg") and float(self.param) != int(self.param):
            raise PerturbError(f"{kind} parameter must be an integer, got {self.param}")
        if not 0 <= self.seed < 2 ** 64:
            raise PerturbError(f"seed must be a 64-bit unsigned integer, got {self.seed}")

    @property
    def label(self) -> str:
        if self.kind == "none":
            return "none"
        p = int(self.param) if self.kind in ("crop", "jpeg") else self.param
        text = f"{self.kind}:{p:g}" if isinstance(p, float) else f"{self.kind}:{p}"
        if self.kind in STOCHASTIC:
            text += f"@seed={self.seed}"
        return text

    @classmethod
    def parse(cls, text: str, default_seed: int = 0) -> "PerturbSpec":
        """Parse ``kind:param[@seed=N]``, e.g. ``jpeg:85`` or ``gauss:5@seed=7``."""
        body, _, tail = text.strip().partition("@")
        seed = default_seed
        if tail:
            key, _, value = tail.partition("=")
            if key != "seed" or not value:
                raise PerturbError(f"bad perturbation suffix in {text!r}")
            seed = int(value)
        kind, _, param = body.partition(":")
        if kind == "none":
            return cls("none", None, seed)
        try:
            value = float(param)
        except ValueError as exc:
            raise PerturbError(f"bad perturbation parameter in {text!r}") from exc
        return cls(kind, value, seed)


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed))


def blur3(raster: Raster, sigma: float) -> Raster:
    x = np.array([-1.0, 0.0, 1.0])
    k = np.exp(-x * x / (2 * sigma * sigma))
    k /= k.sum()
    out = ndimage.correlate1d(raster.data, k, axis=1, mode="nearest")
    out = ndimage.correlate1d(out, k, axis=2, mode="nearest")
    return raster.with_data(out)


def salt_and_pepper(raster: Raster, density: float, rng: np.random.Generator) -> Raster:
    c, h, w = raster.shape
    n = int(round(density * h * w))
    flat = rng.choice(h * w, size=n, replace=False)
    out = raster.data.copy().reshape(c, h * w)
    n_salt = (n + 1) // 2
    out[:, flat[:n_salt]] = 1.0
    out[:, flat[n_salt:]] = 0.0
    return raster.with_data(out.reshape(c, h, w))


def apply(raster: Raster, spec: PerturbSpec) -> Raster:
    """Apply one perturbation; stochastic kinds depend only on ``spec.seed``."""
    kind, p = spec.kind, spec.param
    if kind == "none":
        return raster
    if kind == "blur":
        return blur3(raster, p)
    if kind == "brightness":
        if p == 1:
            return raster
        return raster.with_data(raster.data * p)
    if kind == "gamma":
        if p == 1:
            return raster
        return raster.with_data(raster.data ** p)
    if kind == "crop":
        return center_crop(raster, int(p))
    if kind == "jpeg":
        return jpeg_roundtrip(raster, int(p))
    rng = _rng(spec.seed)
    if kind == "gauss":
        return raster.with_data(raster.data + rng.normal(0.0, p / 255.0, raster.shape))
    if kind == "saltpepper":
        return salt_and_pepper(raster, p, rng)
    if kind == "speckle":
        return raster.with_data(raster.data * (1.0 + rng.normal(0.0, p, raster.shape)))
    if kind == "poisson":
        scale = p * 255.0
        return raster.with_data(rng.poisson(raster.data * scale) / scale)
    raise PerturbError(f"unknown perturbation {kind!r}")


def random_spec(kind: str, seed: int) -> PerturbSpec:
    """Draw a parameter uniformly from the allowed range (integers for crop/jpeg)."""
    kind = _ALIASES.get(kind, kind)
    if kind not in RANGES:
        raise PerturbError(f"unknown perturbation {kind!r}")
    rng = _rng(seed)
    lo, hi = RANGES[kind]
    if kind in ("crop", "jpeg"):
        value = float(rng.integers(lo, hi + 1))
    else:
        value = float(rng.uniform(lo, hi))
    return PerturbSpec(kind, value, seed)


def psnr_range_check(rasters: Sequence[Raster], kind: str, param_grid: Iterable[float],
                     seed: int = 0) -> dict:
    """Sweep ``param_grid`` over ``rasters`` and compare the PSNR span with
    the published interval for ``kind``."""
    kind = _ALIASES.get(kind, kind)
    if kind not in STOCHASTIC:
        raise PerturbError(f"{kind!r} is not a stochastic perturbation")
    values: List[float] = []
    rows = []
    for p in param_grid:
        per = []
        for idx, r in enumerate(rasters):
            noisy = apply(r, PerturbSpec(kind, float(p), seed + idx))
            per.append(psnr(r, noisy))
        finite = [v for v in per if math.isfinite(v)]
        rows.append({"param": float(p), "mean_psnr": float(np.mean(finite)) if finite else math.inf})
        values.extend(finite)
    lo, hi = min(values), max(values)
    plo, phi = PAPER_PSNR[kind]
    return {
        "kind": kind,
        "min_psnr": lo,
        "max_psnr": hi,
        "paper_range": [plo, phi],
        "overlaps": lo <= phi and hi >= plo,
        "brackets": lo <= plo and hi >= phi,
        "grid": rows,
    }
