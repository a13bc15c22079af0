"""nu-one-class SVM with an RBF kernel, trained by SMO on the dual.

The dual solved here is::

    min_a  1/2 a^T K a   s.t.  0 <= a_i <= 1/(nu l),  sum_i a_i = 1

and the decision value of a sample x is ``sum_i a_i K(x, t_i) - rho``.
Samples with a nonnegative decision value are inside the learned region.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Union

import numpy as np

log = logging.getLogger(__name__)

FORMAT_VERSION = "realonly-ocsvm/1"
STD_FLOOR = 1e-12
# slack for recomputing decisions from a stored model (summation order differs)
RHO_ROUNDOFF = 1e-13


class OcSvmError(ValueError):
    pass


class ConvergenceError(OcSvmError):
    def __init__(self, msg, kkt_gap):
        super().__init__(msg)
        self.kkt_gap = kkt_gap


@dataclass(frozen=True)
class OcSvmConfig:
    nu: float = 0.1
    gamma: Union[float, str] = "auto"
    tol: float = 1e-6
    max_iter: Optional[int] = None

    def __post_init__(self):
        if not 0 < self.nu < 1:
            raise OcSvmError(f"nu must lie in (0, 1), got {self.nu}")
        if self.gamma != "auto" and not (isinstance(self.gamma, (int, float)) and self.gamma > 0):
            raise OcSvmError(f"gamma must be > 0 or 'auto', got {self.gamma!r}")
        if not self.tol > 0:
            raise OcSvmError(f"tol must be > 0, got {self.tol}")
        if self.max_iter is not None and self.max_iter < 1:
            raise OcSvmError(f"max_iter must be >= 1, got {self.max_iter}")


@dataclass(frozen=True, eq=False)
class Scaler:
    mean: np.ndarray
    std: np.ndarray

    def transform(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.std

    def inverse(self, z: np.ndarray) -> np.ndarray:
        return np.asarray(z, dtype=np.float64) * self.std + self.mean


def standardize_fit(features) -> Scaler:
    """Per-dimension mean and population std; std floored at 1e-12."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise OcSvmError("standardize_fit needs at least two vectors of equal dimension")
    std = np.maximum(x.std(axis=0), STD_FLOOR)
    return Scaler(x.mean(axis=0), std)


def rbf_kernel(a, b, gamma: float) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise OcSvmError(f"dimension mismatch: {a.shape} vs {b.shape}")
    if not gamma > 0:
        raise OcSvmError(f"gamma must be > 0, got {gamma}")
    d = a - b
    return math.exp(-gamma * float(d @ d))


def rbf_matrix(x: np.ndarray, y: np.ndarray, gamma: float) -> np.ndarray:
    """K[i, j] = exp(-gamma ||x_i - y_j||^2); squared distances floored at 0."""
    xx = np.einsum("ij,ij->i", x, x)[:, None]
    yy = np.einsum("ij,ij->i", y, y)[None, :]
    d2 = np.maximum(xx + yy - 2.0 * (x @ y.T), 0.0)
    return np.exp(-gamma * d2)


@dataclass(frozen=True, eq=False)
class OcSvmModel:
    support_vectors: np.ndarray  # standardized coordinates
    alphas: np.ndarray
    rho: float
    gamma: float
    nu: float
    scaler: Scaler
    feature_config: dict = field(default_factory=dict)
    version: str = FORMAT_VERSION

    @property
    def dim(self) -> int:
        return self.scaler.mean.shape[0]

    def decision_batch(self, features) -> np.ndarray:
        if self.version != FORMAT_VERSION:
            raise OcSvmError(f"model version {self.version!r} is not {FORMAT_VERSION!r}")
        x = np.atleast_2d(np.asarray(features, dtype=np.float64))
        if x.shape[1] != self.dim:
            raise OcSvmError(f"feature dimension {x.shape[1]} does not match model dimension {self.dim}")
        z = self.scaler.transform(x)
        return rbf_matrix(z, self.support_vectors, self.gamma) @ self.alphas - self.rho

    def to_json(self) -> str:
        cfg = self.feature_config
        doc = {
            "version": self.version,
            "gamma": float(self.gamma),
            "nu": float(self.nu),
            "rho": float(self.rho),
            "k": cfg.get("k"),
            "extractor": cfg.get("extractor"),
            "merge": cfg.get("merge", "mean"),
            "scaler_mean": [float(v) for v in self.scaler.mean],
            "scaler_std": [float(v) for v in self.scaler.std],
            "sv": [[float(v) for v in row] for row in self.support_vectors],
            "alpha": [float(a) for a in self.alphas],
        }
        for key, value in cfg.items():
            if key not in ("k", "extractor", "merge"):
                doc.setdefault(key, value)
        # json emits repr() floats, which round-trip exactly
        return json.dumps(doc, indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "OcSvmModel":
        doc = json.loads(text)
        version = doc.get("version")
        if version != FORMAT_VERSION:
            raise OcSvmError(f"unsupported model version {version!r}")
        known = {"version", "gamma", "nu", "rho", "scaler_mean", "scaler_std", "sv", "alpha"}
        cfg = {k: v for k, v in doc.items() if k not in known}
        dim = len(doc["scaler_mean"])
        sv = np.asarray(doc["sv"], dtype=np.float64).reshape(-1, dim)
        return cls(
            support_vectors=sv,
            alphas=np.asarray(doc["alpha"], dtype=np.float64),
            rho=float(doc["rho"]),
            gamma=float(doc["gamma"]),
            nu=float(doc["nu"]),
            scaler=Scaler(np.asarray(doc["scaler_mean"], dtype=np.float64),
                          np.asarray(doc["scaler_std"], dtype=np.float64)),
            feature_config=cfg,
            version=version,
        )

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> "OcSvmModel":
        return cls.from_json(Path(path).read_text())


@dataclass
class TrainResult:
    """Solver output over the full training set (before SV filtering)."""

    model: OcSvmModel
    alpha: np.ndarray
    train_decision: np.ndarray
    kkt_gap: float
    n_iter: int
    objective: List[float] = field(default_factory=list)

    @property
    def sv_fraction(self) -> float:
        return float(np.count_nonzero(self.alpha > 0)) / len(self.alpha)

    def outlier_fraction(self, tol: float = 0.0) -> float:
        return float(np.mean(self.train_decision < -tol))


def _resolve_gamma(gamma, dim: int) -> float:
    if gamma == "auto":
        # standardized features have unit variance per dimension
        return 1.0 / dim
    return float(gamma)


def _rho(alpha: np.ndarray, grad: np.ndarray, C: float) -> float:
    eps = C * 1e-12
    free = (alpha > eps) & (alpha < C - eps)
    at_upper = alpha >= C - eps
    if np.any(free):
        # Margin-SV gradients agree to within the KKT gap. Taking the low end
        # of that band (instead of its mean, which sits inside it) keeps every
        # margin SV at decision >= 0 despite solver round-off.
        return float(grad[~at_upper].min()) - RHO_ROUNDOFF
    at_zero = alpha <= eps
    ub = grad[at_zero].min() if np.any(at_zero) else np.inf
    lb = grad[at_upper].max() if np.any(at_upper) else -np.inf
    if np.isinf(ub):
        return float(lb)
    if np.isinf(lb):
        return float(ub)
    return float((ub + lb) / 2)


def solve_dual(K: np.ndarray, nu: float, tol: float = 1e-6, max_iter: Optional[int] = None,
               track_objective: bool = False):
    """SMO on the one-class dual with a precomputed Gram matrix.

    Working pairs: i maximises -grad over indices that can increase, j is the
    second-order best partner among indices that can decrease (LIBSVM WSS2).
    Returns ``(alpha, grad, rho, gap, n_iter, objective_trace)``.
    """
    l = K.shape[0]
    if nu * l < 1:
        raise OcSvmError(f"nu * l = {nu * l:g} < 1; need at least {math.ceil(1 / nu)} samples")
    C = 1.0 / (nu * l)
    if max_iter is None:
        max_iter = 10 * l * l

    alpha = np.zeros(l)
    n_full = int(math.floor(nu * l))
    alpha[:n_full] = C
    if n_full < l:
        alpha[n_full] = max(1.0 - n_full * C, 0.0)
    grad = K @ alpha
    diag = np.diag(K).copy()
    trace = [0.5 * float(alpha @ grad)] if track_objective else []

    n_iter = 0
    gap = np.inf
    while True:
        up = alpha < C
        low = alpha > 0
        neg = -grad
        cand_i = np.where(up, neg, -np.inf)
        i = int(np.argmax(cand_i))
        gmax = cand_i[i]
        lowvals = np.where(low, neg, np.inf)
        gap = float(gmax - lowvals.min())
        if gap < tol:
            break
        if n_iter >= max_iter:
            raise ConvergenceError(
                f"SMO did not converge in {max_iter} pair updates (KKT gap {gap:.3e})", gap
            )
        b = gmax - neg
        ok = low & (b > 0)
        a = diag[i] + diag - 2.0 * K[i]
        a = np.where(a > 0, a, 1e-12)
        score = np.where(ok, -(b * b) / a, np.inf)
        j = int(np.argmin(score))

        quad = a[j]
        delta = (grad[j] - grad[i]) / quad
        # alpha_i += delta, alpha_j -= delta, within the box
        delta = min(delta, C - alpha[i], alpha[j])
        if delta <= 0:
            break
        alpha[i] += delta
        alpha[j] -= delta
        if alpha[j] < C * 1e-15:
            alpha[j] = 0.0
        if C - alpha[i] < C * 1e-15:
            alpha[i] = C
        grad += delta * (K[:, i] - K[:, j])
        n_iter += 1
        if track_objective:
            trace.append(0.5 * float(alpha @ grad))

    rho = _rho(alpha, grad, C)
    return alpha, grad, rho, gap, n_iter, trace


def train(features, config: OcSvmConfig = OcSvmConfig(), feature_config=None,
          track_objective: bool = False) -> TrainResult:
    """Fit a one-class SVM on raw (unstandardized) feature vectors."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise OcSvmError("training needs at least two feature vectors")
    l, d = x.shape
    if config.nu * l < 1:
        raise OcSvmError(f"nu * l = {config.nu * l:g} < 1 ({l} samples, nu={config.nu})")
    scaler = standardize_fit(x)
    z = scaler.transform(x)
    gamma = _resolve_gamma(config.gamma, d)
    K = rbf_matrix(z, z, gamma)
    np.fill_diagonal(K, 1.0)
    alpha, grad, rho, gap, n_iter, trace = solve_dual(
        K, config.nu, config.tol, config.max_iter, track_objective
    )
    keep = alpha > 0
    model = OcSvmModel(
        support_vectors=z[keep].copy(),
        alphas=alpha[keep].copy(),
        rho=rho,
        gamma=gamma,
        nu=config.nu,
        scaler=scaler,
        feature_config=dict(feature_config or {}),
    )
    log.debug("ocsvm: l=%d sv=%d rho=%.6g gap=%.2e iters=%d", l, keep.sum(), rho, gap, n_iter)
    return TrainResult(model, alpha, grad - rho, gap, n_iter, trace)


def decision(model: OcSvmModel, feature) -> float:
    return float(model.decision_batch(np.asarray(feature, dtype=np.float64)[None])[0])


REAL = "real"
GENERATED = "generated"


def verdict(value: float) -> str:
    return REAL if value >= 0 else GENERATED


def predict(model: OcSvmModel, feature) -> str:
    return verdict(decision(model, feature))
