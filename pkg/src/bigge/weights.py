"""Softplus-normal edge weights: density, sampling and standardization.

A weight is ``w = softplus(eps)`` with ``eps ~ Normal(mu, exp(log_var))``.
Its exact density follows from the change of variables ``eps = log(e^w - 1)``,
whose Jacobian is ``d eps / d w = 1 / (1 - e^-w)``, giving

    log p(w) = log N(eps* | mu, sigma^2) + w - eps*.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

__all__ = [
    "SoftplusNormalParams",
    "WeightStandardizer",
    "inverse_softplus",
    "softplus",
    "log_density",
    "sample",
]

HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True)
class SoftplusNormalParams:
    mu: float
    log_var: float

    def __post_init__(self):
        if not (math.isfinite(self.mu) and math.isfinite(self.log_var)):
            raise ValueError("mu and log_var must be finite")

    @property
    def sigma(self) -> float:
        return math.exp(0.5 * self.log_var)


@dataclass(frozen=True)
class WeightStandardizer:
    mean: float = 0.0
    sd: float = 1.0

    def __post_init__(self):
        if not self.sd > 0:
            raise ValueError("standardizer sd must be positive")

    @classmethod
    def fit(cls, weights: np.ndarray) -> "WeightStandardizer":
        w = np.asarray(weights, dtype=np.float64)
        if w.size == 0:
            return cls()
        sd = float(w.std()) if w.size > 1 else 0.0
        return cls(float(w.mean()), sd if sd > 0 else 1.0)

    def standardize(self, w):
        return (w - self.mean) / self.sd

    def destandardize(self, z):
        return z * self.sd + self.mean


def softplus(x):
    if isinstance(x, torch.Tensor):
        return torch.logaddexp(x, torch.zeros_like(x))
    return np.logaddexp(0.0, x)


def _check_positive(w) -> None:
    if isinstance(w, torch.Tensor):
        if not bool((w > 0).all()):
            raise ValueError("weights must be strictly positive")
    elif not np.all(np.asarray(w) > 0):
        raise ValueError("weights must be strictly positive")


def inverse_softplus(w):
    """``log(e^w - 1)`` computed as ``w + log(-expm1(-w))``, stable for tiny and huge w."""
    _check_positive(w)
    if isinstance(w, torch.Tensor):
        return w + torch.log(-torch.expm1(-w))
    w = np.asarray(w, dtype=np.float64)
    out = w + np.log(-np.expm1(-w))
    return out if out.ndim else float(out)


def log_density(w, mu, log_var):
    """Exact log-density of ``softplus(Normal(mu, exp(log_var)))`` at ``w > 0``.

    ``w`` is data and may be a float or numpy array; ``mu`` and ``log_var``
    may be torch tensors (differentiable) or numpy values.
    """
    _check_positive(w)
    eps = inverse_softplus(w)
    jac = np.asarray(w, dtype=np.float64) - np.asarray(eps, dtype=np.float64)
    if isinstance(mu, torch.Tensor) or isinstance(log_var, torch.Tensor):
        ref = mu if isinstance(mu, torch.Tensor) else log_var
        eps_t = torch.as_tensor(eps, dtype=ref.dtype)
        jac_t = torch.as_tensor(jac, dtype=ref.dtype)
        return -HALF_LOG_2PI - 0.5 * log_var - 0.5 * (eps_t - mu) ** 2 * torch.exp(-log_var) + jac_t
    out = -HALF_LOG_2PI - 0.5 * log_var - 0.5 * (eps - mu) ** 2 * np.exp(-log_var) + jac
    return out


def log_density_p(w: float, p: SoftplusNormalParams) -> float:
    return float(log_density(w, p.mu, p.log_var))


def sample(mu, log_var, rng: np.random.Generator, size=None):
    """Draw ``softplus(mu + sigma * z)``; results are clipped to the smallest positive float."""
    z = rng.standard_normal(size)
    w = softplus(np.asarray(mu) + np.exp(0.5 * np.asarray(log_var)) * z)
    w = np.maximum(w, np.finfo(np.float64).tiny)
    return w if np.ndim(w) else float(w)
