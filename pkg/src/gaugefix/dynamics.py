"""Gradient descent on ``L_task + lambda * G`` and the continuous-time flow."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .gauge import (
    DEFAULT_EPS,
    GaugeCoords,
    _coords_from_norms,
    _gauge_value_and_gradients,
    _kappa,
    gauge_functional,
    neuron_norms,
)
from .network import Dataset, Params, loss_and_gradients, mse_loss

TRACE_COLUMNS = (
    "step", "train_mse", "val_mse", "G", "mean_abs_v", "max_abs_v", "mean_u", "param_max_abs",
)

STABLE, MARGINAL, UNSTABLE = "Stable", "Marginal", "Unstable"
_SEVERITY = {STABLE: 0, MARGINAL: 1, UNSTABLE: 2}


class DivergenceError(FloatingPointError):
    """Raised when an update would produce non-finite parameters."""


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 5e-3
    lam: float = 0.0
    eps: float = DEFAULT_EPS
    steps: int = 5000
    seed: int = 0
    # Unstable once train loss exceeds this multiple of the step-0 loss
    divergence_threshold: float = 1e4
    # Marginal: trailing window (fraction of the trace) with relative
    # peak-to-peak oscillation above this amplitude
    marginal_window: float = 0.1
    marginal_amplitude: float = 0.1
    width: int = 20

    def __post_init__(self):
        if self.lr < 0 or self.lam < 0 or self.eps <= 0 or self.steps < 0:
            raise ValueError(f"invalid TrainConfig {self}")


@dataclass(frozen=True)
class StabilityLabel:
    label: str
    statistic: float
    reason: str = ""

    @property
    def severity(self) -> int:
        return _SEVERITY[self.label]


def worst_label(labels) -> str:
    return max(labels, key=lambda lab: _SEVERITY[getattr(lab, "label", lab)])


@dataclass
class TrainTrace:
    """Per-step metrics (rows follow :data:`TRACE_COLUMNS`) plus the outcome."""

    records: np.ndarray
    final_params: Params
    config: TrainConfig
    truncated_at: int | None = None
    stability: StabilityLabel | None = None

    def column(self, name: str) -> np.ndarray:
        return self.records[:, TRACE_COLUMNS.index(name)]

    def last_finite(self) -> np.ndarray:
        """Last record whose metrics are all finite."""
        ok = np.all(np.isfinite(self.records), axis=1)
        return self.records[np.flatnonzero(ok)[-1]]

    def __len__(self) -> int:
        return self.records.shape[0]


@dataclass
class FlowTrace:
    times: np.ndarray
    n1: np.ndarray  # (T, H)
    n2: np.ndarray
    u: np.ndarray
    v: np.ndarray
    kappa: np.ndarray
    G: np.ndarray  # (T,)
    final_params: Params
    eps: float
    truncated: bool = False
    dt_stability_bound: float = float("inf")
    meta: dict = field(default_factory=dict)

    def coords(self, k: int) -> GaugeCoords:
        return _coords_from_norms(self.n1[k], self.n2[k], self.eps)


def total_loss(p: Params, data: Dataset, lam: float, eps: float = DEFAULT_EPS) -> float:
    task = mse_loss(p, data)
    if lam == 0:
        return task
    return task + lam * gauge_functional(p, eps)


def _total_gradient(p: Params, data: Dataset | None, lam: float, eps: float):
    """Flat gradient of ``L_task + lam * G``; returns (task_loss, G, coords, grad)."""
    if data is not None:
        loss, g = loss_and_gradients(p, data)
        flat = g.flat()
    else:
        loss, flat = float("nan"), np.zeros(p.flat().shape)
    G, gg, coords = _gauge_value_and_gradients(p, eps)
    if lam != 0:
        flat = flat + lam * gg.flat()
    return loss, G, coords, flat


def gd_step(p: Params, data: Dataset, cfg: TrainConfig) -> Params:
    """One full-batch gradient-descent step on the total loss."""
    return _gd_update(p, _total_gradient(p, data, cfg.lam, cfg.eps)[3], cfg.lr)


def _gd_update(p: Params, grad: np.ndarray, lr: float) -> Params:
    if not np.all(np.isfinite(grad)):
        raise DivergenceError("non-finite gradient")
    with np.errstate(over="ignore", invalid="ignore"):
        theta = p.flat() - lr * grad
    if not np.all(np.isfinite(theta)):
        raise DivergenceError("non-finite parameters after update")
    return p.unflat(theta)


def train(p0: Params, train_data: Dataset, val_data: Dataset, cfg: TrainConfig) -> TrainTrace:
    """Run ``cfg.steps`` GD steps, recording metrics before every update.

    Training stops early (and is labelled Unstable) as soon as a metric turns
    non-finite or the train loss exceeds ``divergence_threshold`` times its
    initial value; the offending record is kept as the last row.
    """
    rows = []
    p = p0
    last_ok = p0
    truncated_at = None
    initial = None
    for step in range(cfg.steps + 1):
        with np.errstate(all="ignore"):
            loss, G, c, grad = _total_gradient(p, train_data, cfg.lam, cfg.eps)
            val = mse_loss(p, val_data)
        absv = np.abs(c.v)
        row = (step, loss, val, G, absv.mean(), absv.max(), c.u.mean(), p.max_abs())
        rows.append(row)
        if initial is None:
            initial = loss
        if not np.all(np.isfinite(row)) or loss > cfg.divergence_threshold * initial:
            truncated_at = step
            break
        last_ok = p
        if step == cfg.steps:
            break
        try:
            with np.errstate(all="ignore"):
                p = _gd_update(p, grad, cfg.lr)
        except DivergenceError:
            truncated_at = step + 1
            rows.append((step + 1,) + (np.nan,) * (len(TRACE_COLUMNS) - 1))
            break
    trace = TrainTrace(np.array(rows, dtype=np.float64), last_ok, cfg, truncated_at)
    trace.stability = classify_stability(trace)
    return trace


def classify_stability(trace: TrainTrace, window: int | None = None) -> StabilityLabel:
    """Stable / Marginal / Unstable label for a training trace.

    ``window`` defaults to ``marginal_window`` of the trace length (at least 3).
    """
    cfg = trace.config
    loss = trace.column("train_mse")
    if len(loss) == 0:
        raise ValueError("empty trace")
    if trace.truncated_at is not None or not np.all(np.isfinite(trace.records)):
        return StabilityLabel(UNSTABLE, float(trace.truncated_at or -1), "non-finite or diverged")
    ratio = float(np.max(loss) / loss[0]) if loss[0] > 0 else 0.0
    if ratio > cfg.divergence_threshold:
        return StabilityLabel(UNSTABLE, ratio, "loss exceeded divergence threshold")
    if window is None:
        window = max(3, int(round(cfg.marginal_window * len(loss))))
    tail = loss[-window:]
    diffs = np.diff(tail)
    monotone = np.all(diffs <= 0) or np.all(diffs >= 0)
    mean = float(np.mean(tail))
    amplitude = float((tail.max() - tail.min()) / mean) if mean > 0 else 0.0
    if not monotone and amplitude > cfg.marginal_amplitude:
        return StabilityLabel(MARGINAL, amplitude, "oscillating tail")
    return StabilityLabel(STABLE, amplitude)


def scale_drift(trace: TrainTrace) -> tuple[float, float]:
    """Growth of the mean imbalance and excursion of the mean invariant coordinate.

    ``drift_v = max_t mean|v|(t) - mean|v|(0)`` and
    ``drift_u = max_t |mean u(t) - mean u(0)|`` over finite records.
    """
    rec = trace.records[np.all(np.isfinite(trace.records), axis=1)]
    if len(rec) == 0:
        raise ValueError("trace has no finite records")
    mv = rec[:, TRACE_COLUMNS.index("mean_abs_v")]
    mu = rec[:, TRACE_COLUMNS.index("mean_u")]
    return float(mv.max() - mv[0]), float(np.max(np.abs(mu - mu[0])))


def integrate_gauge_flow(
    p0: Params,
    lam: float,
    eps: float = DEFAULT_EPS,
    t_end: float = 1.0,
    dt: float = 1e-2,
    include_task: bool = False,
    data: Dataset | None = None,
    divergence_threshold: float = 1e4,
) -> FlowTrace:
    """Classical RK4 integration of ``theta' = -[task] grad L - lam grad G``.

    The number of steps is ``round(t_end / dt)``; snapshots are stored at
    every step. Integration stops with ``truncated=True`` if a coordinate
    becomes non-finite or exceeds ``divergence_threshold`` in magnitude.
    """
    if dt <= 0 or t_end < dt:
        raise ValueError("need dt > 0 and t_end >= dt")
    if include_task and data is None:
        raise ValueError("include_task requires a dataset")
    task_data = data if include_task else None
    H = p0.width
    n_steps = int(round(t_end / dt))

    def rhs(theta):
        return -_total_gradient(p0.unflat(theta), task_data, lam, eps)[3]

    def snapshot(p):
        c = _coords_from_norms(*neuron_norms(p), eps)
        return c, _kappa(c.n1, c.n2, lam, eps, H)

    theta = p0.flat()
    c, k = snapshot(p0)
    hist = {"n1": [c.n1], "n2": [c.n2], "u": [c.u], "v": [c.v], "kappa": [k], "G": [np.mean(c.v ** 2)]}
    times = [0.0]
    kmax = float(np.max(k)) if lam > 0 else 0.0
    truncated = False
    p = p0
    for n in range(1, n_steps + 1):
        with np.errstate(all="ignore"):
            k1 = rhs(theta)
            k2 = rhs(theta + 0.5 * dt * k1)
            k3 = rhs(theta + 0.5 * dt * k2)
            k4 = rhs(theta + dt * k3)
            new = theta + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(new)):
            truncated = True
            break
        p_new = p0.unflat(new)
        c, k = snapshot(p_new)
        if not (np.all(np.isfinite(c.u)) and np.all(np.isfinite(c.v))) or max(
            np.max(np.abs(c.u)), np.max(np.abs(c.v))
        ) > divergence_threshold:
            truncated = True
            break
        theta, p = new, p_new
        times.append(n * dt)
        for key, val in (("n1", c.n1), ("n2", c.n2), ("u", c.u), ("v", c.v), ("kappa", k)):
            hist[key].append(val)
        hist["G"].append(np.mean(c.v ** 2))
    # explicit RK4 on a linear decay is stable for dt * rate < ~2.78
    bound = 2.0 / kmax if kmax > 0 else float("inf")
    return FlowTrace(
        times=np.array(times),
        n1=np.array(hist["n1"]),
        n2=np.array(hist["n2"]),
        u=np.array(hist["u"]),
        v=np.array(hist["v"]),
        kappa=np.array(hist["kappa"]),
        G=np.array(hist["G"]),
        final_params=p,
        eps=eps,
        truncated=truncated,
        dt_stability_bound=bound,
        meta={"lam": lam, "dt": dt, "t_end": t_end, "include_task": include_task},
    )


def relaxation_prediction(flow: FlowTrace) -> np.ndarray:
    """``v(0) * exp(-int_0^t kappa)`` via trapezoidal quadrature of stored rates."""
    dt = np.diff(flow.times)[:, None]
    integral = np.concatenate(
        [np.zeros((1, flow.kappa.shape[1])), np.cumsum(0.5 * dt * (flow.kappa[1:] + flow.kappa[:-1]), axis=0)]
    )
    return flow.v[0] * np.exp(-integral)


def efolding_time(times: np.ndarray, v: np.ndarray) -> float:
    """First time ``|v|`` falls to ``|v(0)|/e``, log-linearly interpolated."""
    lv = np.log(np.abs(v))
    target = lv[0] - 1.0
    below = np.flatnonzero(lv <= target)
    if len(below) == 0:
        return float("nan")
    j = below[0]
    t0, t1, l0, l1 = times[j - 1], times[j], lv[j - 1], lv[j]
    return float(t0 + (target - l0) * (t1 - t0) / (l1 - l0))
