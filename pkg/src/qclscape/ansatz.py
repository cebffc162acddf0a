"""Circuit construction and the QCL model prediction.

The model is ``y_hat(x, theta) = <Z_1>`` measured after the feature
encoding block and the trainable RY/CNOT blocks. With the default
3 qubits and depth ``D`` the circuit has ``3*D + 1`` parameters: one RY
per qubit per block plus a trailing RY on the measured qubit.
"""

from dataclasses import dataclass, field

import numpy as np

from . import simulator as sim
from .errors import ConfigurationError, DomainError, ShapeError

RY, RZ, CNOT = "RY", "RZ", "CNOT"
LAYOUTS = ("chain", "cycle")
# "rz-ry": RZ(arccos x^2) acts first, then RY(arcsin x); "ry-rz" is the reverse
ENCODING_ORDERS = ("rz-ry", "ry-rz")


@dataclass(frozen=True)
class GateOp:
    kind: str
    target: int
    control: int = None
    param_slot: int = None

    def __post_init__(self):
        if self.kind not in (RY, RZ, CNOT):
            raise ConfigurationError(f"unknown gate kind {self.kind!r}")
        if (self.control is not None) != (self.kind == CNOT):
            raise ConfigurationError("control qubit is required for CNOT and only for CNOT")
        if self.kind == CNOT and self.control == self.target:
            raise ConfigurationError("CNOT control and target must differ")
        if self.kind == CNOT and self.param_slot is not None:
            raise ConfigurationError("CNOT has no parameter")


@dataclass(frozen=True)
class CircuitSpec:
    """Immutable description of the trainable part of the circuit.

    ``layers`` groups the parameter slots of each RY layer (the trailing RY
    is its own layer); it drives the block-diagonal metric.
    """

    n_qubits: int
    depth: int
    layout: str
    schedule: tuple
    param_count: int
    readout: int = 1
    layers: tuple = field(default=())
    encoding: str = "rz-ry"

    def __post_init__(self):
        if not 1 <= self.n_qubits <= sim.MAX_QUBITS:
            raise ConfigurationError(f"n_qubits must be in [1, {sim.MAX_QUBITS}]")
        if self.encoding not in ENCODING_ORDERS:
            raise ConfigurationError(f"encoding must be one of {ENCODING_ORDERS}")
        if not 0 <= self.readout < self.n_qubits:
            raise ConfigurationError(f"readout qubit {self.readout} out of range")
        slots = []
        for op in self.schedule:
            for q in (op.target, op.control):
                if q is not None and not 0 <= q < self.n_qubits:
                    raise ConfigurationError(f"gate {op} acts outside {self.n_qubits} qubits")
            if op.param_slot is not None:
                slots.append(op.param_slot)
        if sorted(slots) != list(range(self.param_count)):
            raise ConfigurationError("every parameter slot must appear exactly once in the schedule")
        if not self.layers:
            object.__setattr__(self, "layers", tuple((s,) for s in range(self.param_count)))

    @property
    def cnot_count(self):
        return sum(op.kind == CNOT for op in self.schedule)

    def to_dict(self):
        return {
            "n_qubits": self.n_qubits,
            "depth": self.depth,
            "layout": self.layout,
            "param_count": self.param_count,
            "readout": self.readout,
            "encoding": self.encoding,
        }


def entangler(layout, n_qubits):
    """CNOT (control, target) pairs of one entangling layer."""
    if layout == "chain":
        return [(q, q + 1) for q in range(n_qubits - 1)]
    if layout == "cycle":
        if n_qubits < 3:
            # a 2-qubit ring would repeat the same pair backwards
            return [(q, q + 1) for q in range(n_qubits - 1)]
        return [(q, (q + 1) % n_qubits) for q in range(n_qubits)]
    raise ConfigurationError(f"unknown layout {layout!r}; expected one of {LAYOUTS}")


def build_ansatz(layout, depth, n_qubits=3, readout=1, trailing_qubit=None, encoding="rz-ry"):
    """Build the layered RY/CNOT ansatz.

    Each of the ``depth`` blocks is an RY on every qubit (in qubit order)
    followed by the layout's CNOTs. A final RY acts on ``trailing_qubit``,
    which defaults to the readout qubit.

    With ``encoding="rz-ry"`` the RZ encoding gate meets ``|0>`` first and
    only contributes a phase, so features enter through RY(arcsin x). The
    ``"ry-rz"`` order keeps the RZ phase; on 3 qubits it cannot fit the
    parabola below a test MSE of about 0.04 at depth 1.
    """
    if depth < 1:
        raise ConfigurationError(f"depth must be >= 1, got {depth}")
    pairs = entangler(layout, n_qubits)
    if trailing_qubit is None:
        trailing_qubit = readout
    schedule, layers = [], []
    slot = 0
    for _ in range(depth):
        layer = []
        for q in range(n_qubits):
            schedule.append(GateOp(RY, q, param_slot=slot))
            layer.append(slot)
            slot += 1
        layers.append(tuple(layer))
        schedule.extend(GateOp(CNOT, t, control=c) for c, t in pairs)
    schedule.append(GateOp(RY, trailing_qubit, param_slot=slot))
    layers.append((slot,))
    return CircuitSpec(
        n_qubits=n_qubits,
        depth=depth,
        layout=layout,
        schedule=tuple(schedule),
        param_count=slot + 1,
        readout=readout,
        layers=tuple(layers),
        encoding=encoding,
    )


def check_features(xs):
    xs = np.atleast_1d(np.asarray(xs, dtype=float))
    if xs.ndim != 1:
        raise ShapeError(f"features must be one-dimensional, got shape {xs.shape}")
    if np.any(np.abs(xs) > 1.0) or not np.all(np.isfinite(xs)):
        raise DomainError("features must lie in [-1, 1]")
    return xs


def check_theta(spec, theta):
    theta = np.asarray(theta, dtype=float)
    if theta.shape[-1:] != (spec.param_count,):
        raise ShapeError(f"expected {spec.param_count} parameters, got shape {theta.shape}")
    if not np.all(np.isfinite(theta)):
        raise DomainError("parameters must be finite")
    return theta


def batch_encode(xs, n_qubits, order="rz-ry"):
    """Encoded states for an array of features, shape ``(len(xs), 2**n)``."""
    if order not in ENCODING_ORDERS:
        raise ConfigurationError(f"encoding must be one of {ENCODING_ORDERS}")
    xs = check_features(xs)
    ry_angle = np.arcsin(xs)
    rz_angle = np.arccos(xs**2)
    amps = sim.batch_init(n_qubits, len(xs))
    for q in range(n_qubits):
        if order == "rz-ry":
            amps = sim.batch_rz(amps, n_qubits, q, rz_angle)
            amps = sim.batch_ry(amps, n_qubits, q, ry_angle)
        else:
            amps = sim.batch_ry(amps, n_qubits, q, ry_angle)
            amps = sim.batch_rz(amps, n_qubits, q, rz_angle)
    return amps


def encode(x, n_qubits=3, order="rz-ry"):
    """Encoded state of one feature: RZ(arccos x^2) and RY(arcsin x) on every qubit."""
    return sim.StateVector(batch_encode([x], n_qubits, order)[0], n_qubits)


def apply_schedule(spec, amps, thetas, ops=None):
    """Run ``ops`` (default: the whole schedule) on each row of ``amps``.

    ``thetas`` is either one parameter vector or one per row.
    """
    thetas = np.asarray(thetas, dtype=float)
    for op in spec.schedule if ops is None else ops:
        if op.kind == CNOT:
            amps = sim.batch_cnot(amps, spec.n_qubits, op.control, op.target)
            continue
        angle = thetas[..., op.param_slot] if op.param_slot is not None else 0.0
        if op.kind == RY:
            amps = sim.batch_ry(amps, spec.n_qubits, op.target, angle)
        else:
            amps = sim.batch_rz(amps, spec.n_qubits, op.target, angle)
    return amps


def final_states(spec, xs, thetas):
    thetas = check_theta(spec, thetas)
    amps = batch_encode(xs, spec.n_qubits, spec.encoding)
    if thetas.ndim == 2 and thetas.shape[0] != amps.shape[0]:
        raise ShapeError("need one parameter vector per feature")
    return apply_schedule(spec, amps, thetas)


def predict(spec, xs, thetas):
    """Vectorised predictions; ``thetas`` may be ``(P,)`` or ``(len(xs), P)``."""
    amps = final_states(spec, xs, thetas)
    return sim.batch_expectation_z(amps, spec.n_qubits, spec.readout)


def forward(spec, x, theta):
    theta = check_theta(spec, theta)
    if theta.ndim != 1:
        raise ShapeError("forward takes a single parameter vector")
    return float(predict(spec, [x], theta)[0])
