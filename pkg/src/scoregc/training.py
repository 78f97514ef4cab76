"""Denoising score matching: perturbation sampling, the weighted loss, and the Adam training loop."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, asdict, field

import numpy as np

from . import sde as sdelib
from .data import LabeledDataset, split
from .score_model import MlpScoreNet
from .sde import SdeSpec

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    lr: float = 1e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    scheduler_gamma: float = 0.25
    scheduler_patience: int = 10
    early_stop_patience: int = 25
    max_epochs: int = 500
    seed: int = 0
    val_fraction: float = 0.1
    val_repeats: int = 4
    hidden: int = 128
    n_freqs: int = 32
    fourier_scale: float = 30.0
    embed_dim: int = 64

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if not 0 < self.scheduler_gamma < 1:
            raise ValueError("scheduler_gamma must be in (0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0 <= self.val_fraction < 1:
            raise ValueError("val_fraction must be in [0, 1)")
        if self.max_epochs < 0 or self.val_repeats < 1:
            raise ValueError("max_epochs must be >= 0 and val_repeats >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


class Adam:
    def __init__(self, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = None
        self.v = None
        self.k = 0

    def step(self, theta: np.ndarray, grad: np.ndarray) -> None:
        """In-place update of ``theta``."""
        if self.m is None:
            self.m = np.zeros_like(theta)
            self.v = np.zeros_like(theta)
        self.k += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1**self.k)
        v_hat = self.v / (1 - self.beta2**self.k)
        theta -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass
class Perturbation:
    t: np.ndarray
    xt: np.ndarray
    target: np.ndarray
    std: np.ndarray
    z: np.ndarray


def sample_perturbation(spec: SdeSpec, x0, rng: np.random.Generator | None = None, t=None, z=None) -> Perturbation:
    """Draw t ~ U(eps, 1), z ~ N(0, I) and noise each row of ``x0``.

    ``t`` and ``z`` may be forced.  The target is the kernel score
    (mean - xt) / std^2, which equals -z / std.
    """
    x0 = np.atleast_2d(np.asarray(x0, dtype=np.float64))
    if not np.all(np.isfinite(x0)):
        raise ValueError("x0 must be finite")
    N = x0.shape[0]
    if t is None:
        t = rng.uniform(spec.eps, spec.t_end, size=N)
    t = np.broadcast_to(np.asarray(t, dtype=np.float64), (N,))
    if z is None:
        z = rng.standard_normal(x0.shape)
    z = np.broadcast_to(np.asarray(z, dtype=np.float64), x0.shape)
    m = sdelib.marginal(spec, x0, t)
    std = np.asarray(m.std)[:, None]
    xt = m.mean + std * z
    return Perturbation(t=t, xt=xt, target=(m.mean - xt) / std**2, std=std[:, 0], z=z)


def dsm_loss_from_scores(scores, pert: Perturbation) -> float:
    """(1/2N) sum_i std_i^2 * ||s_i - target_i||^2."""
    N = pert.xt.shape[0]
    r = pert.std[:, None] * (scores - pert.target)
    return float(np.sum(r * r) / (2 * N))


def dsm_loss(net, batch, spec: SdeSpec, rng: np.random.Generator | None = None,
             pert: Perturbation | None = None) -> float:
    x0, y = batch
    x0 = np.atleast_2d(np.asarray(x0, dtype=np.float64))
    if x0.shape[0] == 0:
        raise ValueError("empty batch")
    if pert is None:
        pert = sample_perturbation(spec, x0, rng)
    return dsm_loss_from_scores(net.evaluate(pert.xt, pert.t, y), pert)


def dsm_loss_and_grad(net: MlpScoreNet, x0, y, pert: Perturbation):
    N = pert.xt.shape[0]
    w = pert.std[:, None] ** 2

    def adjoint(scores):
        diff = scores - pert.target
        return float(np.sum(w * diff * diff) / (2 * N)), w * diff / N

    return net.value_and_param_grad(pert.xt, pert.t, y, adjoint)


@dataclass
class TrainReport:
    epochs: list = field(default_factory=list)
    best_epoch: int = 0
    best_val_loss: float = math.nan
    stop_reason: str = ""
    warnings: list = field(default_factory=list)
    n_params: int = 0

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_loss", "val_loss", "lr"])
            for e in self.epochs:
                w.writerow([e["epoch"], repr(e["train_loss"]), repr(e["val_loss"]), repr(e["lr"])])


class _FixedValidation:
    """Validation set with perturbations drawn once, so its loss is a deterministic function of theta."""

    def __init__(self, spec, ds: LabeledDataset, repeats: int, rng):
        self.x0 = np.repeat(ds.features, repeats, axis=0)
        self.y = np.repeat(ds.labels, repeats)
        self.pert = sample_perturbation(spec, self.x0, rng)

    def loss(self, net) -> float:
        return dsm_loss(net, (self.x0, self.y), None, pert=self.pert)


def validation_loss(net, spec: SdeSpec, ds: LabeledDataset, config: TrainConfig) -> float:
    """The same fixed-noise validation loss ``train`` tracks, recomputed from scratch."""
    _, val = split(ds, config.val_fraction, seed=config.seed)
    if len(val) == 0:
        raise ValueError("validation split is empty")
    fixed = _FixedValidation(spec, val, config.val_repeats, np.random.default_rng([config.seed, 2]))
    return fixed.loss(net)


def init_net(ds: LabeledDataset, spec: SdeSpec, config: TrainConfig) -> MlpScoreNet:
    return MlpScoreNet(ds.dim, ds.num_classes, spec, hidden=config.hidden, n_freqs=config.n_freqs,
                       fourier_scale=config.fourier_scale, embed_dim=config.embed_dim, seed=config.seed)


def train(ds: LabeledDataset, spec: SdeSpec, config: TrainConfig = TrainConfig(), net: MlpScoreNet | None = None):
    """Minibatch Adam on the DSM loss with plateau LR decay and early stopping.

    Returns the best-validation network and a TrainReport.  Deterministic
    given ``config.seed``.
    """
    if len(ds) == 0:
        raise ValueError("empty dataset")
    train_ds, val_ds = split(ds, config.val_fraction, seed=config.seed)
    report = TrainReport()
    missing = [c for c, n in enumerate(train_ds.class_counts()) if n == 0]
    if missing:
        msg = f"classes {missing} absent from the training split"
        log.warning(msg)
        report.warnings.append(msg)
    if len(train_ds) == 0:
        raise ValueError("training split is empty")

    net = net if net is not None else init_net(ds, spec, config)
    report.n_params = net.n_params
    rng = np.random.default_rng([config.seed, 1])
    fixed_val = None
    if len(val_ds):
        fixed_val = _FixedValidation(spec, val_ds, config.val_repeats, np.random.default_rng([config.seed, 2]))

    opt = Adam(config.lr, config.adam_beta1, config.adam_beta2, config.adam_eps)
    best_theta = net.theta.copy()
    best = math.inf
    since_best = 0
    since_decay = 0
    N = len(train_ds)
    report.stop_reason = "max_epochs"

    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(N)
        total = 0.0
        for start in range(0, N, config.batch_size):
            idx = order[start : start + config.batch_size]
            x0, y = train_ds.features[idx], train_ds.labels[idx]
            pert = sample_perturbation(spec, x0, rng)
            loss, grad = dsm_loss_and_grad(net, x0, y, pert)
            opt.step(net.theta, grad)
            total += loss * idx.size
        train_loss = total / N
        val_loss = fixed_val.loss(net) if fixed_val else train_loss
        report.epochs.append({"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss, "lr": opt.lr})
        if not math.isfinite(train_loss):
            report.stop_reason = "non-finite loss"
            break

        if val_loss < best * (1 - 1e-4):
            best = val_loss
            best_theta = net.theta.copy()
            report.best_epoch = epoch
            since_best = since_decay = 0
        else:
            since_best += 1
            since_decay += 1
            if since_decay > config.scheduler_patience:
                opt.lr *= config.scheduler_gamma
                since_decay = 0
                log.info("epoch %d: lr -> %.3g", epoch, opt.lr)
            if since_best >= config.early_stop_patience:
                report.stop_reason = "early_stop"
                break

    net.set_params(best_theta)
    report.best_val_loss = best if math.isfinite(best) else math.nan
    return net, report
