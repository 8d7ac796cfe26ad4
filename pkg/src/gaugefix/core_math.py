"""Small numerical helpers shared by the rest of the package.

Matrices and vectors are plain ``numpy`` float64 arrays. Random streams are
``numpy.random.Generator`` instances backed by PCG64 (128-bit state), seeded
through ``SeedSequence`` so that sub-streams keyed by integers are independent
and reproducible across platforms.
"""

from __future__ import annotations

import numpy as np

RNG_ALGORITHM = "numpy.random.PCG64 via SeedSequence"

Matrix = np.ndarray
Vector = np.ndarray


def seeded_rng(seed: int, *keys: int) -> np.random.Generator:
    """Return a deterministic generator for ``seed``.

    Extra integer ``keys`` select an independent sub-stream, e.g.
    ``seeded_rng(3, 1)`` for parameter init and ``seeded_rng(3, 0)`` for data.
    """
    if seed < 0 or any(k < 0 for k in keys):
        raise ValueError("seeds and stream keys must be non-negative")
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), *map(int, keys)])))


def gaussian(rng: np.random.Generator, n: int, std: float) -> Vector:
    """Draw ``n`` i.i.d. samples from N(0, std**2)."""
    if std < 0:
        raise ValueError(f"std must be non-negative, got {std}")
    if std == 0:
        return np.zeros(n)
    return rng.normal(0.0, std, size=n)


def l2_norm(v) -> float:
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        return 0.0
    # scale by the largest entry so squares neither overflow nor underflow
    m = float(np.max(np.abs(v)))
    if m == 0.0 or not np.isfinite(m):
        return m
    w = v.ravel() / m
    return m * float(np.sqrt(np.dot(w, w)))


def matvec(M, v) -> Vector:
    """Matrix-vector product with an explicit shape check."""
    M = np.asarray(M, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if M.ndim != 2 or v.ndim != 1 or M.shape[1] != v.shape[0]:
        raise ValueError(f"matvec shape mismatch: {M.shape} @ {v.shape}")
    return M @ v
