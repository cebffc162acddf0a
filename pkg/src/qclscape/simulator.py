"""Dense statevector simulation of RY, RZ and CNOT gates.

Qubit 0 is the least-significant bit of the basis index, so the basis
state ``|q2 q1 q0>`` sits at index ``q0 + 2*q1 + 4*q2``.

Two layers live here. The ``StateVector`` functions are the single-state
API used by tests and small scripts. The ``batch_*`` kernels act on an
array of shape ``(batch, 2**n)`` with per-row angles and are what the
circuit code uses for speed; the single-state functions are thin wrappers
around them, so both paths share one implementation of each gate.

Gate conventions: ``RY(t) = exp(-i t Y / 2)``, ``RZ(t) = exp(-i t Z / 2)``.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ConfigurationError

MAX_QUBITS = 12


@dataclass(frozen=True)
class StateVector:
    amplitudes: np.ndarray
    n_qubits: int

    def __post_init__(self):
        if self.amplitudes.shape != (2**self.n_qubits,):
            raise ValueError(
                f"expected {2**self.n_qubits} amplitudes, got shape {self.amplitudes.shape}"
            )

    @property
    def norm(self):
        return float(np.sqrt(np.sum(np.abs(self.amplitudes) ** 2)))


def _check_qubit(qubit, n_qubits):
    if not 0 <= qubit < n_qubits:
        raise IndexError(f"qubit {qubit} out of range for {n_qubits} qubits")


def init_state(n_qubits):
    """Return ``|0...0>`` on ``n_qubits`` qubits."""
    if not 1 <= n_qubits <= MAX_QUBITS:
        raise ConfigurationError(f"n_qubits must be in [1, {MAX_QUBITS}], got {n_qubits}")
    amps = np.zeros(2**n_qubits, dtype=complex)
    amps[0] = 1.0
    return StateVector(amps, n_qubits)


def batch_init(n_qubits, batch):
    if not 1 <= n_qubits <= MAX_QUBITS:
        raise ConfigurationError(f"n_qubits must be in [1, {MAX_QUBITS}], got {n_qubits}")
    amps = np.zeros((batch, 2**n_qubits), dtype=complex)
    amps[:, 0] = 1.0
    return amps


def _halves(amps, n_qubits, qubit):
    # view (batch, high, bit, low): bit index selects the qubit's value
    view = amps.reshape(amps.shape[0], 2 ** (n_qubits - qubit - 1), 2, 2**qubit)
    return view[:, :, 0, :], view[:, :, 1, :]


def _angles(angle, batch):
    a = np.asarray(angle, dtype=float)
    if a.ndim == 0:
        return a
    return a.reshape(batch, 1, 1)


def batch_ry(amps, n_qubits, qubit, angle):
    """Apply RY to every row of ``amps``; ``angle`` is a scalar or one per row."""
    _check_qubit(qubit, n_qubits)
    half = _angles(angle, amps.shape[0]) / 2
    c, s = np.cos(half), np.sin(half)
    out = np.empty_like(amps)
    a0, a1 = _halves(amps, n_qubits, qubit)
    o0, o1 = _halves(out, n_qubits, qubit)
    o0[...] = c * a0 - s * a1
    o1[...] = s * a0 + c * a1
    return out


def batch_rz(amps, n_qubits, qubit, angle):
    _check_qubit(qubit, n_qubits)
    half = _angles(angle, amps.shape[0]) / 2
    out = np.empty_like(amps)
    a0, a1 = _halves(amps, n_qubits, qubit)
    o0, o1 = _halves(out, n_qubits, qubit)
    o0[...] = np.exp(-1j * half) * a0
    o1[...] = np.exp(1j * half) * a1
    return out


@lru_cache(maxsize=None)
def _cnot_permutation(n_qubits, control, target):
    idx = np.arange(2**n_qubits)
    flip = ((idx >> control) & 1).astype(bool)
    perm = idx.copy()
    perm[flip] ^= 1 << target
    perm.setflags(write=False)
    return perm


def batch_cnot(amps, n_qubits, control, target):
    _check_qubit(control, n_qubits)
    _check_qubit(target, n_qubits)
    if control == target:
        raise IndexError("CNOT control and target must differ")
    return amps[:, _cnot_permutation(n_qubits, control, target)]


@lru_cache(maxsize=None)
def _z_signs(n_qubits, qubit):
    idx = np.arange(2**n_qubits)
    signs = 1.0 - 2.0 * ((idx >> qubit) & 1)
    signs.setflags(write=False)
    return signs


def batch_pauli_y(amps, n_qubits, qubit):
    """Apply the Pauli Y matrix (not a rotation) to every row."""
    _check_qubit(qubit, n_qubits)
    out = np.empty_like(amps)
    a0, a1 = _halves(amps, n_qubits, qubit)
    o0, o1 = _halves(out, n_qubits, qubit)
    o0[...] = -1j * a1
    o1[...] = 1j * a0
    return out


def batch_expectation_z(amps, n_qubits, qubit):
    """<Z_qubit> for every row, clipped to [-1, 1] against rounding."""
    _check_qubit(qubit, n_qubits)
    probs = amps.real**2 + amps.imag**2
    values = np.sum(probs * _z_signs(n_qubits, qubit), axis=1)
    return np.clip(values, -1.0, 1.0)


def _single(fn, state, *args):
    out = fn(state.amplitudes[None, :], state.n_qubits, *args)
    return StateVector(out[0], state.n_qubits)


def apply_ry(state, qubit, angle):
    return _single(batch_ry, state, qubit, float(angle))


def apply_rz(state, qubit, angle):
    return _single(batch_rz, state, qubit, float(angle))


def apply_cnot(state, control, target):
    return _single(batch_cnot, state, control, target)


def expectation_z(state, qubit):
    return float(batch_expectation_z(state.amplitudes[None, :], state.n_qubits, qubit)[0])
