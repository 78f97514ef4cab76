"""Class- and time-conditional score models.

Every score model takes batched inputs: ``x`` of shape ``(B, d)``, ``t`` a
scalar or ``(B,)`` array and ``y`` an int or ``(B,)`` int array.  Tangent
and cotangent vectors may carry extra leading axes, ``(..., B, d)``, which
lets the exact divergence push all basis vectors through in one call.
"""

from __future__ import annotations

import json
import math
import struct
from pathlib import Path

import numpy as np

from .sde import SdeSpec, marginal_std

CHECKPOINT_MAGIC = b"SGCK"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


def _prep(x, t, y, num_classes, spec=None):
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    B = x.shape[0]
    t = np.broadcast_to(np.asarray(t, dtype=np.float64), (B,))
    y = np.broadcast_to(np.asarray(y), (B,))
    if not np.issubdtype(y.dtype, np.integer):
        if np.any(y != np.round(y)):
            raise ValueError("class labels must be integers")
        y = y.astype(np.int64)
    if np.any(y < 0) or np.any(y >= num_classes):
        raise ValueError(f"class label out of range [0, {num_classes})")
    if spec is not None and (np.any(t < spec.eps) or np.any(t > spec.t_end)):
        raise ValueError(f"time outside [{spec.eps}, {spec.t_end}]")
    return x, t, y


class ScoreFunction:
    """Interface for s(x, t, y) with input Jacobian products.

    Subclasses implement ``evaluate``, ``input_jvp`` and ``input_vjp``.
    """

    input_dim: int
    num_classes: int

    def evaluate(self, x, t, y) -> np.ndarray:
        raise NotImplementedError

    def input_jvp(self, x, t, y, v) -> np.ndarray:
        raise NotImplementedError

    def input_vjp(self, x, t, y, v) -> np.ndarray:
        raise NotImplementedError

    def score_and_jvp(self, x, t, y, v):
        return self.evaluate(x, t, y), self.input_jvp(x, t, y, v)

    def _check_v(self, x, v):
        v = np.asarray(v, dtype=np.float64)
        if v.ndim == 0 or v.shape[-1] != self.input_dim:
            raise ValueError(f"vector of shape {v.shape} does not match input of shape {np.shape(x)}")
        return v

    def __call__(self, x, t, y):
        return self.evaluate(x, t, y)


class LinearScore(ScoreFunction):
    """s(x, t, y) = A x + b_y, independent of t.  Mostly a test fixture."""

    def __init__(self, A, bias=None, num_classes: int = 1):
        self.A = np.atleast_2d(np.asarray(A, dtype=np.float64))
        if self.A.shape[0] != self.A.shape[1]:
            raise ValueError("A must be square")
        self.input_dim = self.A.shape[0]
        self.num_classes = num_classes
        if bias is None:
            bias = np.zeros((num_classes, self.input_dim))
        self.bias = np.asarray(bias, dtype=np.float64).reshape(num_classes, self.input_dim)

    def evaluate(self, x, t, y):
        x, t, y = _prep(x, t, y, self.num_classes)
        return x @ self.A.T + self.bias[y]

    def input_jvp(self, x, t, y, v):
        v = self._check_v(np.atleast_2d(x), v)
        return v @ self.A.T

    def input_vjp(self, x, t, y, v):
        v = self._check_v(np.atleast_2d(x), v)
        return v @ self.A


def silu(z):
    return z * _sigmoid(z)


def silu_grad(z):
    s = _sigmoid(z)
    return s * (1.0 + z * (1.0 - s))


def _sigmoid(z):
    # split on sign to avoid overflow in exp
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


class MlpScoreNet(ScoreFunction):
    """Two-hidden-layer SiLU MLP on [x, Fourier(t), embed(y)], output / std(t).

    Parameters live in one flat vector ``theta``; the named arrays below are
    views into it, in this canonical order:

        W1 (d + 2F + E, H), b1 (H,), W2 (H, H), b2 (H,),
        W3 (H, d), b3 (d,), class_embed (num_classes, E)

    all row-major.  ``freqs`` (F,) is frozen and not part of ``theta``.
    """

    def __init__(
        self,
        input_dim: int,
        num_classes: int,
        spec: SdeSpec,
        hidden: int = 128,
        n_freqs: int = 32,
        fourier_scale: float = 30.0,
        embed_dim: int = 64,
        seed: int = 0,
    ):
        if input_dim < 1 or num_classes < 1:
            raise ValueError("input_dim and num_classes must be positive")
        self.input_dim = input_dim
        self.num_classes = num_classes
        self.spec = spec
        self.hidden = hidden
        self.n_freqs = n_freqs
        self.fourier_scale = fourier_scale
        self.embed_dim = embed_dim
        self.seed = seed

        rng = np.random.default_rng(seed)
        self.freqs = rng.normal(0.0, fourier_scale, size=n_freqs)
        self.theta = np.zeros(self._layout_size())
        self._bind_views()

        fan1 = self.W1.shape[0]
        self.W1[...] = rng.uniform(-1, 1, self.W1.shape) / math.sqrt(fan1)
        self.b1[...] = rng.uniform(-1, 1, self.b1.shape) / math.sqrt(fan1)
        self.W2[...] = rng.uniform(-1, 1, self.W2.shape) / math.sqrt(hidden)
        self.b2[...] = rng.uniform(-1, 1, self.b2.shape) / math.sqrt(hidden)
        self.class_embed[...] = rng.standard_normal(self.class_embed.shape)
        # W3, b3 stay zero so the initial score is identically 0

    def _shapes(self):
        d, H, E = self.input_dim, self.hidden, self.embed_dim
        n_in = d + 2 * self.n_freqs + E
        return [
            ("W1", (n_in, H)),
            ("b1", (H,)),
            ("W2", (H, H)),
            ("b2", (H,)),
            ("W3", (H, d)),
            ("b3", (d,)),
            ("class_embed", (self.num_classes, E)),
        ]

    def _layout_size(self):
        return sum(math.prod(s) for _, s in self._shapes())

    def _bind_views(self):
        off = 0
        for name, shape in self._shapes():
            n = math.prod(shape)
            setattr(self, name, self.theta[off : off + n].reshape(shape))
            off += n

    @property
    def n_params(self) -> int:
        return self.theta.size

    def set_params(self, theta):
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != self.theta.shape:
            raise ValueError(f"expected {self.theta.size} parameters, got {theta.size}")
        self.theta[...] = theta

    def copy(self) -> "MlpScoreNet":
        other = object.__new__(MlpScoreNet)
        other.__dict__.update(self.__dict__)
        other.freqs = self.freqs.copy()
        other.theta = self.theta.copy()
        other._bind_views()
        return other

    def time_features(self, t):
        arg = 2.0 * math.pi * np.asarray(t, dtype=np.float64)[:, None] * self.freqs
        return np.concatenate([np.sin(arg), np.cos(arg)], axis=1)

    def _forward(self, x, t, y):
        x, t, y = _prep(x, t, y, self.num_classes, self.spec)
        if x.shape[1] != self.input_dim:
            raise ValueError(f"expected input dimension {self.input_dim}, got {x.shape[1]}")
        h0 = np.concatenate([x, self.time_features(t), self.class_embed[y]], axis=1)
        z1 = h0 @ self.W1 + self.b1
        a1 = silu(z1)
        z2 = a1 @ self.W2 + self.b2
        a2 = silu(z2)
        raw = a2 @ self.W3 + self.b3
        inv_std = 1.0 / marginal_std(self.spec, t)
        cache = dict(y=y, h0=h0, z1=z1, a1=a1, z2=z2, a2=a2, inv_std=inv_std[:, None])
        return raw * cache["inv_std"], cache

    def evaluate(self, x, t, y):
        return self._forward(x, t, y)[0]

    def _jvp(self, cache, v):
        d = self.input_dim
        dz1 = v @ self.W1[:d]
        dz2 = (silu_grad(cache["z1"]) * dz1) @ self.W2
        return ((silu_grad(cache["z2"]) * dz2) @ self.W3) * cache["inv_std"]

    def input_jvp(self, x, t, y, v):
        _, cache = self._forward(x, t, y)
        return self._jvp(cache, self._check_v(np.atleast_2d(x), v))

    def score_and_jvp(self, x, t, y, v):
        out, cache = self._forward(x, t, y)
        return out, self._jvp(cache, self._check_v(np.atleast_2d(x), v))

    def input_vjp(self, x, t, y, v):
        _, cache = self._forward(x, t, y)
        v = self._check_v(np.atleast_2d(x), v)
        g2 = ((v * cache["inv_std"]) @ self.W3.T) * silu_grad(cache["z2"])
        g1 = (g2 @ self.W2.T) * silu_grad(cache["z1"])
        return g1 @ self.W1[: self.input_dim].T

    def _backward(self, cache, adjoint):
        g = np.zeros_like(self.theta)
        grads = {}
        gout = np.asarray(adjoint, dtype=np.float64) * cache["inv_std"]
        grads["W3"] = cache["a2"].T @ gout
        grads["b3"] = gout.sum(axis=0)
        gz2 = (gout @ self.W3.T) * silu_grad(cache["z2"])
        grads["W2"] = cache["a1"].T @ gz2
        grads["b2"] = gz2.sum(axis=0)
        gz1 = (gz2 @ self.W2.T) * silu_grad(cache["z1"])
        grads["W1"] = cache["h0"].T @ gz1
        grads["b1"] = gz1.sum(axis=0)
        gh0 = gz1 @ self.W1[-self.embed_dim :].T
        gemb = np.zeros_like(self.class_embed)
        np.add.at(gemb, cache["y"], gh0)
        grads["class_embed"] = gemb
        off = 0
        for name, shape in self._shapes():
            n = math.prod(shape)
            g[off : off + n] = grads[name].ravel()
            off += n
        return g

    def param_grad(self, x, t, y, adjoint):
        """Gradient w.r.t. theta of sum(adjoint * evaluate(x, t, y))."""
        _, cache = self._forward(x, t, y)
        return self._backward(cache, adjoint)

    def value_and_param_grad(self, x, t, y, loss_adjoint_fn):
        """Evaluate, hand the output to ``loss_adjoint_fn`` -> (loss, dL/ds), backprop."""
        out, cache = self._forward(x, t, y)
        loss, adj = loss_adjoint_fn(out)
        return loss, self._backward(cache, adj)

    def header(self) -> dict:
        return {
            "architecture": "mlp",
            "input_dim": self.input_dim,
            "num_classes": self.num_classes,
            "hidden": self.hidden,
            "n_freqs": self.n_freqs,
            "fourier_scale": self.fourier_scale,
            "embed_dim": self.embed_dim,
            "activation": "silu",
            "param_order": [name for name, _ in self._shapes()],
            "n_params": self.n_params,
            "sde": self.spec.to_dict(),
            "seed": self.seed,
            "freqs": [float(f) for f in self.freqs],
        }


def save_checkpoint(net: MlpScoreNet, path, extra: dict | None = None) -> None:
    header = net.header()
    if extra:
        header["extra"] = extra
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        fh.write(net.theta.astype("<f8").tobytes())


def load_checkpoint(path) -> MlpScoreNet:
    raw = Path(path).read_bytes()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    if len(raw) < 16:
        raise CheckpointError(f"{path}: truncated header")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    (hlen,) = struct.unpack_from("<Q", raw, 8)
    if 16 + hlen > len(raw):
        raise CheckpointError(f"{path}: truncated header")
    header = json.loads(raw[16 : 16 + hlen].decode("utf-8"))
    if header.get("architecture") != "mlp":
        raise CheckpointError(f"{path}: unknown architecture {header.get('architecture')!r}")
    net = MlpScoreNet(
        header["input_dim"],
        header["num_classes"],
        SdeSpec.from_dict(header["sde"]),
        hidden=header["hidden"],
        n_freqs=header["n_freqs"],
        fourier_scale=header["fourier_scale"],
        embed_dim=header["embed_dim"],
        seed=header["seed"],
    )
    net.freqs = np.asarray(header["freqs"], dtype=np.float64)
    body = raw[16 + hlen :]
    if len(body) != 8 * net.n_params:
        raise CheckpointError(f"{path}: expected {net.n_params} parameters, found {len(body) / 8:g}")
    net.set_params(np.frombuffer(body, dtype="<f8"))
    return net
