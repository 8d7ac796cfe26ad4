"""Neuron-wise rescaling symmetry and soft gauge fixing for one-hidden-layer ReLU networks."""

__version__ = "0.1.0"

from .core_math import RNG_ALGORITHM, gaussian, l2_norm, matvec, seeded_rng
from .network import Dataset, Grads, Params, forward, init_params, mse_loss, task_gradients
from .gauge import (
    DEFAULT_EPS,
    DampingRates,
    GaugeCoords,
    GaugeScales,
    RadialForces,
    apply_gauge_transform,
    balanced_rescaling,
    damping_rates,
    gauge_coords,
    gauge_functional,
    gauge_gradients,
    gauge_only_u_dot,
    invariance_error,
    neuron_norms,
    predicted_v_dot,
    radial_forces,
)
from .dynamics import (
    DivergenceError,
    FlowTrace,
    StabilityLabel,
    TrainConfig,
    TrainTrace,
    classify_stability,
    gd_step,
    integrate_gauge_flow,
    scale_drift,
    total_loss,
    train,
)
from .experiments import (
    DatasetConfig,
    InvarianceResult,
    StressResult,
    SweepResult,
    emit_reports,
    invariance_experiment,
    lambda_sweep,
    lr_stress,
    make_dataset,
)
