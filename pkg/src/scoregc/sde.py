"""Forward-noising SDE families (VE, VP, sub-VP) and their Gaussian kernels.

All functions accept a scalar time or a 1-D array of times; vectors are
arrays whose last axis is the data dimension.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, asdict

import numpy as np


class Family(str, enum.Enum):
    VE = "VE"
    VP = "VP"
    SUBVP = "SubVP"

    @classmethod
    def parse(cls, name: str) -> "Family":
        key = name.strip().lower().replace("-", "").replace("_", "")
        for fam in cls:
            if fam.value.lower() == key:
                return fam
        raise ValueError(f"unknown SDE family {name!r} (expected VE, VP or SubVP)")


@dataclass(frozen=True)
class SdeSpec:
    family: Family = Family.VP
    beta_min: float = 0.1
    beta_max: float = 20.0
    sigma_min: float = 0.01
    sigma_max: float = 50.0
    t_end: float = 1.0
    eps: float = 1e-5

    def __post_init__(self):
        if not isinstance(self.family, Family):
            object.__setattr__(self, "family", Family.parse(str(self.family)))
        if not 0 < self.beta_min < self.beta_max:
            raise ValueError("need 0 < beta_min < beta_max")
        if not 0 < self.sigma_min < self.sigma_max:
            raise ValueError("need 0 < sigma_min < sigma_max")
        if not 0 < self.eps < self.t_end:
            raise ValueError("need 0 < eps < t_end")
        if self.t_end != 1.0:
            raise ValueError("t_end is fixed at 1.0")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["family"] = self.family.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SdeSpec":
        return cls(**d)


@dataclass(frozen=True)
class Marginal:
    mean: np.ndarray
    std: np.ndarray | float


def _check_time(spec: SdeSpec, t, lower: float = 0.0):
    arr = np.asarray(t, dtype=np.float64)
    if np.any(~np.isfinite(arr)) or np.any(arr < lower) or np.any(arr > spec.t_end):
        raise ValueError(f"time {t!r} outside [{lower}, {spec.t_end}]")
    return arr


def _as_column(a):
    # broadcast a per-row time quantity against (..., d) vectors
    a = np.asarray(a, dtype=np.float64)
    return a[..., None] if a.ndim else a


def beta(spec: SdeSpec, t):
    if spec.family is Family.VE:
        raise ValueError("beta(t) is undefined for the VE family")
    t = _check_time(spec, t)
    return spec.beta_min + t * (spec.beta_max - spec.beta_min)


def int_beta(spec: SdeSpec, t):
    """Integrated schedule B(t) = int_0^t beta(s) ds."""
    t = _check_time(spec, t)
    return spec.beta_min * t + 0.5 * t**2 * (spec.beta_max - spec.beta_min)


def sigma(spec: SdeSpec, t):
    """VE noise level sigma_min * (sigma_max / sigma_min) ** t."""
    t = _check_time(spec, t)
    return spec.sigma_min * (spec.sigma_max / spec.sigma_min) ** t


def drift(spec: SdeSpec, x, t):
    x = np.asarray(x, dtype=np.float64)
    if spec.family is Family.VE:
        _check_time(spec, t)
        return np.zeros_like(x)
    return -0.5 * _as_column(beta(spec, t)) * x


def diffusion(spec: SdeSpec, t):
    if spec.family is Family.VE:
        return sigma(spec, t) * math.sqrt(2.0 * math.log(spec.sigma_max / spec.sigma_min))
    b = beta(spec, t)
    if spec.family is Family.VP:
        return np.sqrt(b)
    return np.sqrt(b * -np.expm1(-2.0 * int_beta(spec, t)))


def mean_coeff(spec: SdeSpec, t):
    """Scale alpha(t) with kernel mean alpha(t) * x0."""
    if spec.family is Family.VE:
        return np.ones_like(_check_time(spec, t))
    return np.exp(-0.5 * int_beta(spec, t))


def marginal_std(spec: SdeSpec, t):
    _check_time(spec, t, lower=spec.eps)
    if spec.family is Family.VE:
        return sigma(spec, t)
    em1 = -np.expm1(-int_beta(spec, t))
    if spec.family is Family.VP:
        return np.sqrt(em1)
    return em1


def marginal(spec: SdeSpec, x0, t) -> Marginal:
    """Perturbation kernel q(x(t) | x(0)) = N(mean, std^2 I)."""
    x0 = np.asarray(x0, dtype=np.float64)
    std = marginal_std(spec, t)
    mean = _as_column(mean_coeff(spec, t)) * x0
    return Marginal(mean=mean, std=std)


def prior_std(spec: SdeSpec) -> float:
    return spec.sigma_max if spec.family is Family.VE else 1.0


def prior_logp(spec: SdeSpec, xT):
    """Log-density of the terminal prior, summed over the last axis."""
    xT = np.asarray(xT, dtype=np.float64)
    d = xT.shape[-1]
    s = prior_std(spec)
    return -0.5 * d * math.log(2 * math.pi * s * s) - 0.5 * np.sum(xT * xT, axis=-1) / (s * s)


def euler_maruyama(spec: SdeSpec, x0, t1: float, n_steps: int, n_paths: int, rng: np.random.Generator):
    """Simulate the forward SDE from t=0 to t1; returns (n_paths, d) endpoints."""
    x = np.tile(np.asarray(x0, dtype=np.float64), (n_paths, 1))
    dt = t1 / n_steps
    sqdt = math.sqrt(dt)
    for k in range(n_steps):
        t = k * dt
        x = x + drift(spec, x, t) * dt + diffusion(spec, t) * sqdt * rng.standard_normal(x.shape)
    return x
