"""Labelled vector datasets, synthetic generators with analytic ground truth, and file I/O."""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import norm

from . import sde as sdelib
from .score_model import ScoreFunction, _prep
from .sde import SdeSpec

TENSOR_MAGIC = b"SGCT"
TENSOR_VERSION = 1
_HEADER = struct.Struct("<4sIQQI")


class TensorFileError(ValueError):
    """Base class for tensor-file problems."""


class TensorFormatError(TensorFileError):
    pass


class TensorTruncatedError(TensorFileError):
    pass


class TensorDimensionError(TensorFileError):
    pass


@dataclass
class LabeledDataset:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    name: str = "dataset"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.features = np.atleast_2d(np.asarray(self.features, dtype=np.float64))
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        N, D = self.features.shape
        if N < 1 or D < 1:
            raise ValueError("dataset needs N >= 1 and D >= 1")
        if self.labels.shape != (N,):
            raise ValueError(f"{N} feature rows but {self.labels.size} labels")
        if not np.all(np.isfinite(self.features)):
            raise ValueError("features contain non-finite values")
        if np.any(self.labels < 0) or np.any(self.labels >= self.num_classes):
            raise ValueError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self):
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def class_counts(self) -> list[int]:
        return np.bincount(self.labels, minlength=self.num_classes).tolist()

    def subset(self, idx, name=None) -> "LabeledDataset":
        # allows empty subsets, which the constructor rejects
        out = object.__new__(LabeledDataset)
        out.features = self.features[idx]
        out.labels = self.labels[idx]
        out.num_classes = self.num_classes
        out.name = name or self.name
        out.meta = dict(self.meta)
        return out

    def summary(self) -> dict:
        return {"name": self.name, "N": len(self), "D": self.dim,
                "num_classes": self.num_classes, "class_counts": self.class_counts()}


class AnalyticGaussianScore(ScoreFunction):
    """Exact score of Gaussian class-conditionals pushed through the forward SDE.

    Class y has data distribution N(m_y, diag(v_y)).  At time t the class
    marginal is N(alpha m_y, alpha^2 diag(v_y) + std^2 I) with alpha = 1 for VE.
    """

    def __init__(self, spec: SdeSpec, means, variances):
        self.spec = spec
        self.means = np.atleast_2d(np.asarray(means, dtype=np.float64))
        v = np.asarray(variances, dtype=np.float64)
        self.variances = np.broadcast_to(v, self.means.shape).copy()
        if np.any(self.variances <= 0):
            raise ValueError("variances must be positive")
        self.num_classes, self.input_dim = self.means.shape

    def _moments(self, t, y):
        alpha = np.asarray(sdelib.mean_coeff(self.spec, t), dtype=np.float64)[:, None]
        std = np.asarray(sdelib.marginal_std(self.spec, t), dtype=np.float64)[:, None]
        return alpha * self.means[y], alpha**2 * self.variances[y] + std**2

    def evaluate(self, x, t, y):
        x, t, y = _prep(x, t, y, self.num_classes, self.spec)
        mu, var = self._moments(t, y)
        return -(x - mu) / var

    def input_jvp(self, x, t, y, v):
        x, t, y = _prep(x, t, y, self.num_classes, self.spec)
        return -self._check_v(x, v) / self._moments(t, y)[1]

    input_vjp = input_jvp  # diagonal Jacobian is symmetric

    def score_and_jvp(self, x, t, y, v):
        x, t, y = _prep(x, t, y, self.num_classes, self.spec)
        mu, var = self._moments(t, y)
        return -(x - mu) / var, -self._check_v(x, v) / var

    def data_logpdf(self, x, y):
        """Log-density of the unperturbed class-y Gaussian."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        y = np.broadcast_to(np.asarray(y), (x.shape[0],))
        m, v = self.means[y], self.variances[y]
        return -0.5 * np.sum(np.log(2 * math.pi * v) + (x - m) ** 2 / v, axis=1)

    def marginal_logpdf(self, x, t, y):
        x, t, y = _prep(x, t, y, self.num_classes, self.spec)
        mu, var = self._moments(t, y)
        return -0.5 * np.sum(np.log(2 * math.pi * var) + (x - mu) ** 2 / var, axis=1)

    @classmethod
    def from_dataset(cls, spec: SdeSpec, ds: LabeledDataset) -> "AnalyticGaussianScore":
        if "means" not in ds.meta or "cov" not in ds.meta:
            raise ValueError(f"dataset {ds.name!r} carries no Gaussian generation parameters")
        return cls(spec, ds.meta["means"], ds.meta["cov"])


def gen_two_gaussians(n_per_class: int, means=((2.0, 0.0), (-2.0, 0.0)), cov=1.0, seed: int = 0,
                      name: str = "two-gaussians") -> LabeledDataset:
    """Balanced draw from N(means[0], diag(cov)) and N(means[1], diag(cov))."""
    if n_per_class < 1:
        raise ValueError("n_per_class must be >= 1")
    means = np.atleast_2d(np.asarray(means, dtype=np.float64))
    if means.shape[0] != 2:
        raise ValueError("need exactly two class means")
    cov = np.broadcast_to(np.asarray(cov, dtype=np.float64), means.shape[1:]).copy()
    if np.any(cov <= 0) or not np.all(np.isfinite(cov)):
        raise ValueError("degenerate covariance")
    rng = np.random.default_rng(seed)
    feats = [m + np.sqrt(cov) * rng.standard_normal((n_per_class, means.shape[1])) for m in means]
    labels = np.repeat([0, 1], n_per_class)
    return LabeledDataset(np.concatenate(feats), labels, 2, name=name,
                          meta={"generator": "two-gaussians", "means": means.tolist(),
                                "cov": cov.tolist(), "seed": seed})


def gen_two_moons(n_per_class: int, noise_std: float = 0.1, seed: int = 0,
                  name: str = "two-moons") -> LabeledDataset:
    """Upper unit arc centred at the origin (class 0), lower arc centred at (1, 0.5) (class 1)."""
    if n_per_class < 1:
        raise ValueError("n_per_class must be >= 1")
    if noise_std < 0:
        raise ValueError("noise_std must be >= 0")
    rng = np.random.default_rng(seed)
    a0 = rng.uniform(0, math.pi, n_per_class)
    a1 = rng.uniform(0, math.pi, n_per_class)
    upper = np.stack([np.cos(a0), np.sin(a0)], axis=1)
    lower = np.stack([1.0 - np.cos(a1), 0.5 - np.sin(a1)], axis=1)
    feats = np.concatenate([upper, lower]) + noise_std * rng.standard_normal((2 * n_per_class, 2))
    return LabeledDataset(feats, np.repeat([0, 1], n_per_class), 2, name=name,
                          meta={"generator": "two-moons", "noise_std": noise_std, "seed": seed})


def bayes_accuracy_two_gaussians(means, cov) -> float:
    """Accuracy of the Bayes rule for two equal-covariance Gaussians, equal priors."""
    means = np.atleast_2d(np.asarray(means, dtype=np.float64))
    cov = np.broadcast_to(np.asarray(cov, dtype=np.float64), means.shape[1:])
    delta = means[0] - means[1]
    return float(norm.cdf(0.5 * math.sqrt(np.sum(delta**2 / cov))))


def split(ds: LabeledDataset, fraction: float, seed: int = 0):
    """Stratified split; returns (rest, held_out) with ~fraction of each class held out."""
    if not 0 <= fraction < 1:
        raise ValueError("fraction must be in [0, 1)")
    rng = np.random.default_rng(seed)
    held = []
    for c in range(ds.num_classes):
        idx = np.flatnonzero(ds.labels == c)
        k = int(round(fraction * idx.size))
        held.append(rng.permutation(idx)[:k])
    held = np.sort(np.concatenate(held)).astype(np.int64)
    mask = np.ones(len(ds), dtype=bool)
    mask[held] = False
    return ds.subset(np.flatnonzero(mask), f"{ds.name}-train"), ds.subset(held, f"{ds.name}-test")


def write_tensor_file(ds: LabeledDataset, path) -> None:
    N, D = ds.features.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(TENSOR_MAGIC, TENSOR_VERSION, N, D, ds.num_classes))
        fh.write(np.ascontiguousarray(ds.features, dtype="<f8").tobytes())
        fh.write(ds.labels.astype("<u4").tobytes())


def read_tensor_file(path, name: str | None = None) -> LabeledDataset:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] != TENSOR_MAGIC:
        raise TensorFormatError(f"{path}: bad magic, not an SGCT tensor file")
    if len(raw) < _HEADER.size:
        raise TensorTruncatedError(f"{path}: truncated header")
    _, version, N, D, K = _HEADER.unpack_from(raw)
    if version != TENSOR_VERSION:
        raise TensorFormatError(f"{path}: unsupported version {version}")
    if N == 0 or D == 0 or K == 0:
        raise TensorDimensionError(f"{path}: zero dimension (N={N}, D={D}, classes={K})")
    if N * D > (2**63 - 1) // 8 or N * D * 8 + N * 4 > 2**63 - 1:
        raise TensorDimensionError(f"{path}: N*D overflows ({N} x {D})")
    need = _HEADER.size + N * D * 8 + N * 4
    if len(raw) < need:
        raise TensorTruncatedError(f"{path}: expected {need} bytes, found {len(raw)}")
    if len(raw) > need:
        raise TensorFormatError(f"{path}: {len(raw) - need} trailing bytes")
    off = _HEADER.size
    feats = np.frombuffer(raw, dtype="<f8", count=N * D, offset=off).reshape(N, D).astype(np.float64)
    labels = np.frombuffer(raw, dtype="<u4", count=N, offset=off + N * D * 8).astype(np.int64)
    if np.any(labels >= K):
        raise TensorFormatError(f"{path}: label >= num_classes ({K})")
    return LabeledDataset(feats, labels, int(K), name=name or path.stem)


def write_csv(ds: LabeledDataset, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"f{j}" for j in range(ds.dim)] + ["label"])
        for row, lab in zip(ds.features, ds.labels):
            w.writerow([repr(float(v)) for v in row] + [int(lab)])


def read_csv(path, num_classes: int | None = None, name: str | None = None) -> LabeledDataset:
    path = Path(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][-1] != "label":
        raise TensorFormatError(f"{path}: expected header f0,...,label")
    body = [r for r in rows[1:] if r]
    feats = np.array([[float(v) for v in r[:-1]] for r in body])
    labels = np.array([int(r[-1]) for r in body])
    K = num_classes if num_classes is not None else int(labels.max()) + 1
    return LabeledDataset(feats, labels, K, name=name or path.stem)


def load_dataset(path) -> LabeledDataset:
    path = Path(path)
    if path.suffix.lower() == ".csv":
        return read_csv(path)
    return read_tensor_file(path)


def save_dataset(ds: LabeledDataset, path) -> None:
    if Path(path).suffix.lower() == ".csv":
        write_csv(ds, path)
    else:
        write_tensor_file(ds, path)
