"""Neuron-wise rescaling orbits of a one-hidden-layer ReLU network.

A positive scale ``s_i`` per hidden unit maps ``w_i -> s_i w_i``,
``b1_i -> s_i b1_i`` and ``a_i -> a_i / s_i`` (``w_i`` = row ``i`` of ``W1``,
``a_i`` = column ``i`` of ``W2``). Because ReLU is positively homogeneous the
network function is unchanged along these orbits. The log-norm coordinates

    alpha_i = log(n1_i + eps),  beta_i = log(n2_i + eps)
    u_i = alpha_i + beta_i       (orbit invariant as eps -> 0)
    v_i = alpha_i - beta_i       (position along the orbit)

split each unit into an invariant and an imbalance direction, and the
imbalance penalty is ``G = mean_i v_i**2``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .network import Grads, Params, forward

DEFAULT_EPS = 1e-8


@dataclass(frozen=True, eq=False)
class GaugeScales:
    """Strictly positive per-unit scales; ``degenerate`` flags units left at 1."""

    s: np.ndarray
    degenerate: np.ndarray | None = None

    def __post_init__(self):
        s = np.array(self.s, dtype=np.float64)
        if s.ndim != 1:
            raise ValueError("gauge scales must be a vector")
        if not np.all(np.isfinite(s)) or np.any(s <= 0):
            raise ValueError("gauge scales must be finite and strictly positive")
        s.setflags(write=False)
        object.__setattr__(self, "s", s)

    def inverse(self) -> GaugeScales:
        return GaugeScales(1.0 / self.s)

    def __len__(self) -> int:
        return self.s.shape[0]


@dataclass(frozen=True, eq=False)
class GaugeCoords:
    n1: np.ndarray
    n2: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    u: np.ndarray
    v: np.ndarray


@dataclass(frozen=True, eq=False)
class RadialForces:
    F1: np.ndarray
    F2: np.ndarray
    degenerate: np.ndarray | None = None


@dataclass(frozen=True, eq=False)
class DampingRates:
    kappa: np.ndarray


def _as_scales(s) -> GaugeScales:
    return s if isinstance(s, GaugeScales) else GaugeScales(s)


def random_scales(rng: np.random.Generator, H: int, log_range: float = 1.0) -> GaugeScales:
    """``s_i = exp(U(-log_range, log_range))``, symmetric on the orbit."""
    return GaugeScales(np.exp(rng.uniform(-log_range, log_range, size=H)))


def apply_gauge_transform(p: Params, s) -> Params:
    s = _as_scales(s).s
    if s.shape != (p.width,):
        raise ValueError(f"expected {p.width} scales, got {s.shape}")
    return Params(s[:, None] * p.W1, s * p.b1, p.W2 / s[None, :], p.b2)


def neuron_norms(p: Params) -> tuple[np.ndarray, np.ndarray]:
    """Incoming (row of W1) and outgoing (column of W2) norms per hidden unit."""
    return np.linalg.norm(p.W1, axis=1), np.linalg.norm(p.W2, axis=0)


def _coords_from_norms(n1, n2, eps) -> GaugeCoords:
    alpha = np.log(n1 + eps)
    beta = np.log(n2 + eps)
    return GaugeCoords(n1, n2, alpha, beta, alpha + beta, alpha - beta)


def gauge_coords(p: Params, eps: float = DEFAULT_EPS) -> GaugeCoords:
    if eps <= 0:
        raise ValueError("eps must be positive")
    return _coords_from_norms(*neuron_norms(p), eps)


def gauge_functional(p: Params, eps: float = DEFAULT_EPS) -> float:
    v = gauge_coords(p, eps).v
    return float(np.mean(v * v))


def _gauge_value_and_gradients(p: Params, eps: float) -> tuple[float, Grads, GaugeCoords]:
    # value and gradient share one norm evaluation
    c = gauge_coords(p, eps)
    H = p.width
    dead = (c.n1 == 0) | (c.n2 == 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        gw = np.where(c.n1 > 0, (2.0 / H) * c.v / (c.n1 * (c.n1 + eps)), 0.0)
        ga = np.where(c.n2 > 0, -(2.0 / H) * c.v / (c.n2 * (c.n2 + eps)), 0.0)
    grads = Grads(
        gw[:, None] * p.W1,
        np.zeros_like(p.b1),
        ga[None, :] * p.W2,
        np.zeros_like(p.b2),
        degenerate=dead,
    )
    return float(np.mean(c.v * c.v)), grads, c


def gauge_gradients(p: Params, eps: float = DEFAULT_EPS) -> Grads:
    """Closed-form gradient of :func:`gauge_functional`.

    Both weight blocks of unit ``i`` receive a multiple of themselves (the
    gradient is radial) and the biases receive nothing. Units with a zero
    norm get a zero block and are marked in ``Grads.degenerate``.
    """
    return _gauge_value_and_gradients(p, eps)[1]


def balanced_rescaling(p: Params, eps: float = DEFAULT_EPS) -> GaugeScales:
    """Scales ``sqrt((n2 + eps) / (n1 + eps))`` that equalise the two norms.

    Units with both norms zero cannot be balanced; they keep ``s_i = 1``
    and are flagged.
    """
    n1, n2 = neuron_norms(p)
    dead = (n1 == 0) & (n2 == 0)
    s = np.where(dead, 1.0, np.sqrt((n2 + eps) / (n1 + eps)))
    return GaugeScales(s, degenerate=dead)


def invariance_error(p: Params, s, X) -> float:
    """Mean absolute output difference between ``p`` and its transform by ``s``."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] == 0:
        raise ValueError("need at least one input")
    q = apply_gauge_transform(p, s)
    return float(np.mean(np.abs(forward(p, X) - forward(q, X))))


def damping_rates(p: Params, lam: float, eps: float = DEFAULT_EPS) -> DampingRates:
    """Per-unit relaxation rate of the imbalance coordinate under the penalty."""
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    n1, n2 = neuron_norms(p)
    return DampingRates(_kappa(n1, n2, lam, eps, p.width))


def _kappa(n1, n2, lam, eps, H):
    return (2.0 * lam / H) * ((n1 + eps) ** -2 + (n2 + eps) ** -2)


def radial_forces(p: Params, g: Grads, eps: float = DEFAULT_EPS) -> RadialForces:
    """Projection of the task gradient onto grad(alpha_i) and grad(beta_i)."""
    n1, n2 = neuron_norms(p)
    dead = (n1 == 0) | (n2 == 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        F1 = np.sum(p.W1 * g.dW1, axis=1) / (n1 * (n1 + eps))
        F2 = np.sum(p.W2 * g.dW2, axis=0) / (n2 * (n2 + eps))
    F1 = np.where(n1 > 0, F1, 0.0)
    F2 = np.where(n2 > 0, F2, 0.0)
    return RadialForces(F1, F2, degenerate=dead)


def predicted_v_dot(coords: GaugeCoords, forces: RadialForces, kappa: DampingRates) -> np.ndarray:
    """Instantaneous imbalance velocity: task drive minus penalty damping."""
    if not (len(coords.v) == len(forces.F1) == len(forces.F2) == len(kappa.kappa)):
        raise ValueError("inconsistent per-unit lengths")
    return -(forces.F1 - forces.F2) - kappa.kappa * coords.v


def gauge_only_u_dot(coords: GaugeCoords, lam: float, eps: float, H: int) -> np.ndarray:
    """Drift of the invariant coordinate caused by the penalty alone.

    Vanishes when the two norms of a unit are equal.
    """
    return (2.0 * lam / H) * coords.v * (-(coords.n1 + eps) ** -2 + (coords.n2 + eps) ** -2)
