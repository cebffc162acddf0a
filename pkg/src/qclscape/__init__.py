"""Quantum circuit learning loss landscapes: training, cuts, NEB and minima clustering."""

__version__ = "0.1.0"

from .ansatz import CircuitSpec, GateOp, build_ansatz, encode, forward, predict
from .connectivity import (
    AMS,
    BatchObjective,
    NEBPath,
    PathMetrics,
    build_ams,
    classify_connected,
    mean_shift,
    neb_init,
    neb_run,
    neb_step,
    neb_tangent,
    path_metrics,
)
from .errors import ConfigurationError, DegeneracyError, DomainError, NumericalError, ShapeError
from .gradloss import Batch, loss_and_gradient, mse_loss
from .harness import DataSplit, Dataset, SweepGrid, TrainConfig, TrainRecord, generate_dataset, split, sweep, train
from .landscape import PlaneBasis, cut_1d, cut_2d, dropout_curve, plane_basis
from .optim import OptimizerState, adam_step, make_optimizer, qng_step, sgd_step
from .simulator import StateVector

__all__ = [name for name in dir() if not name.startswith("_")]
