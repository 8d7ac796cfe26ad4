"""Built-in invariant checks run by ``gaugefix validate``.

Each check returns ``(passed, detail)``. They are small versions of the test
suite that need nothing beyond numpy, so an installed copy can demonstrate
the core identities without pytest.
"""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from .core_math import seeded_rng
from .dynamics import TrainConfig, integrate_gauge_flow, relaxation_prediction, train
from .experiments import DatasetConfig, initial_params, make_dataset
from .gauge import (
    apply_gauge_transform,
    balanced_rescaling,
    damping_rates,
    gauge_coords,
    gauge_functional,
    gauge_gradients,
    invariance_error,
    predicted_v_dot,
    radial_forces,
    random_scales,
)
from .network import Dataset, Params, forward, mse_loss, task_gradients


def random_params(rng, d, H, m, lo=0.1, hi=10.0) -> Params:
    """Random network whose per-unit norms are log-uniform in ``[lo, hi]``."""
    def blocks(k, n):
        x = rng.normal(size=(k, n))
        x /= np.linalg.norm(x, axis=1, keepdims=True)
        return x * np.exp(rng.uniform(np.log(lo), np.log(hi), size=(k, 1)))

    return Params(blocks(H, d), rng.normal(size=H), blocks(H, m).T, rng.normal(size=m))


def random_dataset(rng, n, d, m) -> Dataset:
    return Dataset(rng.uniform(-2, 2, size=(n, d)), rng.normal(size=(n, m)))


def central_differences(fn, p: Params, h: float = 1e-6) -> np.ndarray:
    theta = p.flat()
    out = np.empty_like(theta)
    for k in range(theta.size):
        e = np.zeros_like(theta)
        e[k] = h
        out[k] = (fn(p.unflat(theta + e)) - fn(p.unflat(theta - e))) / (2 * h)
    return out


def kink_mask(p: Params, X, margin: float = 1e-3) -> np.ndarray:
    """True for flat coordinates whose finite difference may straddle a ReLU kink."""
    z = X @ p.W1.T + p.b1
    near = np.min(np.abs(z), axis=0) < margin
    H, d, m = p.width, p.in_dim, p.out_dim
    return np.concatenate([np.repeat(near, d), near, np.zeros(m * H + m, bool)])


def relative_error(a, b, floor: float = 1e-12) -> np.ndarray:
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def check_invariance(seed=0):
    tr, va = make_dataset(DatasetConfig(seed=seed))
    p = train(initial_params(seed, 20), tr, va, TrainConfig(steps=300)).final_params
    rng = seeded_rng(seed, 9)
    X = rng.uniform(-3, 3, size=(512, 1))
    worst = max(invariance_error(p, random_scales(rng, 20), X) for _ in range(200))
    return worst <= 1e-12, f"max delta_inv={worst:.3g}"


def check_gradients(seed=0, n=5):
    rng = seeded_rng(seed, 10)
    worst = 0.0
    for _ in range(n):
        p = random_params(rng, 2, 4, 1, 0.5, 2.0)
        data = random_dataset(rng, 8, 2, 1)
        keep = ~kink_mask(p, data.X)
        fd = central_differences(lambda q: mse_loss(q, data), p)
        worst = max(worst, relative_error(task_gradients(p, data).flat(), fd)[keep].max())
        fd = central_differences(lambda q: gauge_functional(q, 1e-8), p)
        worst = max(worst, relative_error(gauge_gradients(p, 1e-8).flat(), fd).max())
    return worst <= 1e-6, f"max rel err={worst:.3g}"


def check_radiality(seed=0):
    rng = seeded_rng(seed, 11)
    p = random_params(rng, 3, 6, 2)
    g = gauge_gradients(p, 1e-8)
    cw = np.abs(np.sum(g.dW1 * p.W1, 1)) / (np.linalg.norm(g.dW1, axis=1) * np.linalg.norm(p.W1, axis=1))
    ca = np.abs(np.sum(g.dW2 * p.W2, 0)) / (np.linalg.norm(g.dW2, axis=0) * np.linalg.norm(p.W2, axis=0))
    dev = max(np.max(np.abs(cw - 1)), np.max(np.abs(ca - 1)))
    zero_bias = not np.any(g.db1) and not np.any(g.db2)
    return dev <= 1e-12 and zero_bias, f"max |cos|-1={dev:.3g}, bias grads zero={zero_bias}"


def check_balanced(seed=0):
    rng = seeded_rng(seed, 12)
    p = random_params(rng, 2, 8, 1)
    q = apply_gauge_transform(p, balanced_rescaling(p, 1e-12))
    X = rng.uniform(-3, 3, size=(64, 2))
    G = gauge_functional(q, 1e-12)
    dev = float(np.max(np.abs(forward(p, X) - forward(q, X))))
    return G <= 1e-12 and dev <= 1e-12, f"G={G:.3g}, output dev={dev:.3g}"


def check_relaxation(seed=0):
    rng = seeded_rng(seed, 13)
    p = random_params(rng, 1, 5, 1, 0.5, 2.0)
    flow = integrate_gauge_flow(p, lam=1.0, eps=1e-8, t_end=2.0, dt=1e-3)
    pred = relaxation_prediction(flow)[-1]
    err = float(np.max(relative_error(flow.v[-1], pred)))
    return err <= 1e-4, f"max rel err vs quadrature={err:.3g}"


def check_v_dot(seed=0):
    rng = seeded_rng(seed, 14)
    p = random_params(rng, 1, 6, 1, 0.5, 2.0)
    data = random_dataset(rng, 32, 1, 1)
    lam, eps, dt = 0.5, 1e-8, 1e-5
    pred = predicted_v_dot(gauge_coords(p, eps), radial_forces(p, task_gradients(p, data), eps),
                           damping_rates(p, lam, eps))
    flow = integrate_gauge_flow(p, lam, eps, t_end=dt, dt=dt, include_task=True, data=data)
    meas = (flow.v[-1] - flow.v[0]) / dt
    err = float(np.linalg.norm(meas - pred) / np.linalg.norm(pred))
    return err <= 1e-3, f"rel err={err:.3g}"


def check_transform_laws(seed=0):
    rng = seeded_rng(seed, 15)
    eps = 1e-14
    p = random_params(rng, 2, 8, 1)
    s = random_scales(rng, 8)
    c0, c1 = gauge_coords(p, eps), gauge_coords(apply_gauge_transform(p, s), eps)
    du = float(np.max(np.abs(c1.u - c0.u)))
    dv = float(np.max(np.abs(c1.v - c0.v - 2 * np.log(s.s))))
    return du <= 1e-12 and dv <= 1e-10, f"max |du|={du:.3g}, max |dv - 2 log s|={dv:.3g}"


def check_determinism(seed=0):
    tr, va = make_dataset(DatasetConfig(seed=seed, n_train=64, n_val=64))
    cfg = TrainConfig(steps=50, lam=0.2)
    a = train(initial_params(seed, 20), tr, va, cfg).records
    b = train(initial_params(seed, 20), tr, va, replace(cfg)).records
    same = a.tobytes() == b.tobytes()
    return same, "bitwise identical traces" if same else "traces differ"


CHECKS = {
    "gauge_invariance": check_invariance,
    "gradients_vs_finite_differences": check_gradients,
    "radiality": check_radiality,
    "balanced_representative": check_balanced,
    "relaxation_law": check_relaxation,
    "v_dot_prediction": check_v_dot,
    "transform_laws": check_transform_laws,
    "determinism": check_determinism,
}


def run_all(seed: int = 0, out=print) -> bool:
    ok_all = True
    for name, fn in CHECKS.items():
        try:
            ok, detail = fn(seed)
        except Exception as exc:  # report and keep going
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        ok_all &= bool(ok)
        out(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    out(f"{len(CHECKS)} checks, {'all passed' if ok_all else 'FAILURES'}")
    return ok_all
