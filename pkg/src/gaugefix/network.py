"""One-hidden-layer ReLU regression network with analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core_math import Matrix, Vector


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Params:
    """Parameters ``(W1, b1, W2, b2)`` of ``f(x) = W2 relu(W1 x + b1) + b2``.

    Row ``i`` of ``W1`` holds the incoming weights of hidden unit ``i`` and
    column ``i`` of ``W2`` its outgoing weights.
    """

    W1: Matrix
    b1: Vector
    W2: Matrix
    b2: Vector

    def __post_init__(self):
        for name in ("W1", "b1", "W2", "b2"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        H, _ = self.W1.shape
        if self.b1.shape != (H,) or self.W2.ndim != 2 or self.W2.shape[1] != H:
            raise ValueError(
                f"inconsistent shapes W1={self.W1.shape} b1={self.b1.shape} W2={self.W2.shape}"
            )
        if self.b2.shape != (self.W2.shape[0],):
            raise ValueError(f"b2 shape {self.b2.shape} does not match W2 {self.W2.shape}")

    @property
    def width(self) -> int:
        return self.W1.shape[0]

    @property
    def in_dim(self) -> int:
        return self.W1.shape[1]

    @property
    def out_dim(self) -> int:
        return self.W2.shape[0]

    def flat(self) -> np.ndarray:
        return np.concatenate([self.W1.ravel(), self.b1, self.W2.ravel(), self.b2])

    def unflat(self, theta: np.ndarray) -> Params:
        """Build Params of this shape from a flat vector laid out like :meth:`flat`."""
        H, d, m = self.width, self.in_dim, self.out_dim
        i = 0
        W1 = theta[i:i + H * d].reshape(H, d); i += H * d
        b1 = theta[i:i + H]; i += H
        W2 = theta[i:i + m * H].reshape(m, H); i += m * H
        b2 = theta[i:i + m]
        return Params(W1, b1, W2, b2)

    def max_abs(self) -> float:
        return float(max(np.max(np.abs(a), initial=0.0) for a in (self.W1, self.b1, self.W2, self.b2)))

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in (self.W1, self.b1, self.W2, self.b2))


@dataclass(frozen=True, eq=False)
class Grads:
    """Gradient blocks shaped like :class:`Params`.

    ``degenerate`` optionally marks hidden units whose gradient was defined by
    convention (zero-norm weight blocks) rather than by the formula.
    """

    dW1: Matrix
    db1: Vector
    dW2: Matrix
    db2: Vector
    degenerate: np.ndarray | None = None

    def __post_init__(self):
        for name in ("dW1", "db1", "dW2", "db2"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))

    def flat(self) -> np.ndarray:
        return np.concatenate([self.dW1.ravel(), self.db1, self.dW2.ravel(), self.db2])

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.flat())))

    def __add__(self, other: Grads) -> Grads:
        return Grads(self.dW1 + other.dW1, self.db1 + other.db1,
                     self.dW2 + other.dW2, self.db2 + other.db2)

    def scaled(self, c: float) -> Grads:
        return Grads(c * self.dW1, c * self.db1, c * self.dW2, c * self.db2)


@dataclass(frozen=True, eq=False)
class Dataset:
    X: np.ndarray  # (N, d)
    Y: np.ndarray  # (N, m)
    split: str = "train"

    def __post_init__(self):
        X = np.array(self.X, dtype=np.float64)
        Y = np.array(self.Y, dtype=np.float64)
        if X.ndim == 1:
            X = X[:, None]
        if Y.ndim == 1:
            Y = Y[:, None]
        if X.shape[0] != Y.shape[0]:
            raise ValueError(f"X has {X.shape[0]} rows but Y has {Y.shape[0]}")
        object.__setattr__(self, "X", _frozen(X))
        object.__setattr__(self, "Y", _frozen(Y))

    def __len__(self) -> int:
        return self.X.shape[0]


def init_params(d: int, H: int, m: int, rng: np.random.Generator) -> Params:
    """Weights ~ N(0, 1/fan_in) per layer, biases zero."""
    if min(d, H, m) < 1:
        raise ValueError(f"dimensions must be >= 1, got d={d} H={H} m={m}")
    W1 = rng.normal(0.0, np.sqrt(1.0 / d), size=(H, d))
    W2 = rng.normal(0.0, np.sqrt(1.0 / H), size=(m, H))
    return Params(W1, np.zeros(H), W2, np.zeros(m))


def relu(z):
    return np.maximum(z, 0.0)


def forward(p: Params, x) -> np.ndarray:
    """Evaluate the network on one input ``(d,)`` or a batch ``(N, d)``."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != p.in_dim or x.ndim not in (1, 2):
        raise ValueError(f"input shape {x.shape} incompatible with d={p.in_dim}")
    h = relu(x @ p.W1.T + p.b1)
    return h @ p.W2.T + p.b2


def _check_data(p: Params, data: Dataset) -> None:
    if len(data) == 0:
        raise ValueError("empty dataset")
    if data.X.shape[1] != p.in_dim or data.Y.shape[1] != p.out_dim:
        raise ValueError(
            f"dataset dims (d={data.X.shape[1]}, m={data.Y.shape[1]}) "
            f"do not match params (d={p.in_dim}, m={p.out_dim})"
        )


def mse_loss(p: Params, data: Dataset) -> float:
    """Mean over samples of the squared error summed over output dims."""
    _check_data(p, data)
    r = forward(p, data.X) - data.Y
    return float(np.sum(r * r) / len(data))


def loss_and_gradients(p: Params, data: Dataset) -> tuple[float, Grads]:
    """MSE and its exact gradient from a single forward pass.

    The ReLU derivative at exactly zero is taken as zero.
    """
    _check_data(p, data)
    N = len(data)
    z = data.X @ p.W1.T + p.b1
    h = relu(z)
    r = h @ p.W2.T + p.b2 - data.Y
    loss = float(np.sum(r * r) / N)
    df = (2.0 / N) * r
    dW2 = df.T @ h
    db2 = df.sum(axis=0)
    dz = (df @ p.W2) * (z > 0)
    dW1 = dz.T @ data.X
    db1 = dz.sum(axis=0)
    return loss, Grads(dW1, db1, dW2, db2)


def task_gradients(p: Params, data: Dataset) -> Grads:
    return loss_and_gradients(p, data)[1]
