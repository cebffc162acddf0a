"""SGD, Adam and quantum natural gradient step rules.

The QNG preconditioner is a Fubini-Study metric averaged over the feature
batch. Training uses the per-layer block-diagonal approximation (or its
diagonal); ``fubini_metric_exact`` builds the full matrix from
parameter-shifted states and is kept as an oracle.
"""

from dataclasses import dataclass, replace

import numpy as np
from scipy import linalg

from . import simulator as sim
from .ansatz import RY, apply_schedule, batch_encode, check_features, check_theta, final_states
from .errors import ConfigurationError, DomainError, NumericalError, ShapeError

OPTIMIZERS = ("sgd", "adam", "qng")
METRIC_APPROX = ("block-diag", "diag")


@dataclass(frozen=True)
class OptimizerState:
    kind: str
    learning_rate: float = 0.05
    step_count: int = 0
    adam_m: np.ndarray = None
    adam_v: np.ndarray = None
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    qng_reg: float = 1e-6
    qng_approx: str = "block-diag"

    def hyperparameters(self):
        params = {"kind": self.kind, "learning_rate": self.learning_rate}
        if self.kind == "adam":
            params.update(beta1=self.beta1, beta2=self.beta2, eps_adam=self.eps_adam)
        elif self.kind == "qng":
            params.update(qng_reg=self.qng_reg, qng_approx=self.qng_approx)
        return params


def make_optimizer(kind, n_params, learning_rate=0.05, **options):
    kind = kind.lower()
    if kind not in OPTIMIZERS:
        raise ConfigurationError(f"unknown optimizer {kind!r}; expected one of {OPTIMIZERS}")
    if learning_rate <= 0:
        raise ConfigurationError("learning rate must be positive")
    if options.get("qng_approx", "block-diag") not in METRIC_APPROX:
        raise ConfigurationError(f"qng_approx must be one of {METRIC_APPROX}")
    if options.get("qng_reg", 0.0) < 0:
        raise ConfigurationError("qng_reg must be >= 0")
    state = OptimizerState(kind=kind, learning_rate=learning_rate, **options)
    if kind == "adam":
        state = replace(state, adam_m=np.zeros(n_params), adam_v=np.zeros(n_params))
    return state


def _same_shape(theta, grad):
    theta = np.asarray(theta, dtype=float)
    grad = np.asarray(grad, dtype=float)
    if theta.shape != grad.shape:
        raise ShapeError(f"parameter shape {theta.shape} != gradient shape {grad.shape}")
    return theta, grad


def sgd_step(theta, grad, lr):
    theta, grad = _same_shape(theta, grad)
    if lr <= 0:
        raise ConfigurationError("learning rate must be positive")
    return theta - lr * grad


def adam_step(state, theta, grad):
    if state.kind != "adam":
        raise ConfigurationError(f"adam_step called with a {state.kind} optimizer state")
    theta, grad = _same_shape(theta, grad)
    if state.adam_m.shape != grad.shape:
        raise ShapeError("moment accumulators do not match the gradient shape")
    t = state.step_count + 1
    m = state.beta1 * state.adam_m + (1 - state.beta1) * grad
    v = state.beta2 * state.adam_v + (1 - state.beta2) * grad**2
    m_hat = m / (1 - state.beta1**t)
    v_hat = v / (1 - state.beta2**t)
    theta = theta - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps_adam)
    return replace(state, step_count=t, adam_m=m, adam_v=v), theta


def qng_step(theta, grad, metric, lr, lam=1e-6):
    """``theta - lr * solve(metric + lam*I, grad)`` via a Cholesky factorization."""
    theta, grad = _same_shape(theta, grad)
    metric = np.asarray(metric, dtype=float)
    if metric.shape != (len(grad), len(grad)):
        raise ShapeError(f"metric shape {metric.shape} does not match {len(grad)} parameters")
    if lam < 0:
        raise ConfigurationError("regularizer must be >= 0")
    system = metric + lam * np.eye(len(grad))
    try:
        factor = linalg.cho_factor(system, lower=True, check_finite=True)
    except (linalg.LinAlgError, ValueError) as exc:
        cond = float(np.linalg.cond(system)) if np.all(np.isfinite(system)) else float("inf")
        raise NumericalError(
            f"metric system is not positive definite (condition number {cond:.3g})", condition=cond
        ) from exc
    direction = linalg.cho_solve(factor, grad)
    return theta - lr * direction


def step(state, theta, grad, metric=None):
    """Dispatch one update; returns ``(state, theta)``."""
    if state.kind == "sgd":
        theta = sgd_step(theta, grad, state.learning_rate)
    elif state.kind == "adam":
        return adam_step(state, theta, grad)
    else:
        if metric is None:
            raise ConfigurationError("qng step needs a metric")
        theta = qng_step(theta, grad, metric, state.learning_rate, state.qng_reg)
    return replace(state, step_count=state.step_count + 1), theta


def _fubini(psi, dpsi):
    # psi: (dim,), dpsi: (P, dim)
    overlaps = dpsi.conj() @ dpsi.T
    berry = dpsi.conj() @ psi
    g = overlaps.real - np.outer(berry, berry.conj()).real
    return 0.5 * (g + g.T)


def fubini_metric_exact(spec, x, theta):
    """Full Fubini-Study metric of the output state for one feature.

    Derivative states come from the state-level shift rule: for a gate
    ``exp(-i t Y / 2)``, ``d psi / d t = (psi(t + pi/2) - psi(t - pi/2)) / (2 sqrt 2)``.
    """
    theta = check_theta(spec, theta)
    p = spec.param_count
    shifts = (np.pi / 2) * np.eye(p)
    thetas = np.concatenate([theta[None, :], theta + shifts, theta - shifts])
    states = final_states(spec, np.repeat(check_features([x]), 2 * p + 1), thetas)
    psi = states[0]
    dpsi = (states[1 : p + 1] - states[p + 1 :]) / (2 * np.sqrt(2))
    return _fubini(psi, dpsi)


def _layer_starts(spec):
    """For each layer: (index of its first gate in the schedule, [(slot, qubit), ...])."""
    where = {op.param_slot: (i, op) for i, op in enumerate(spec.schedule) if op.param_slot is not None}
    out = []
    for layer in spec.layers:
        positions = sorted(where[s][0] for s in layer)
        if positions != list(range(positions[0], positions[0] + len(layer))):
            raise ConfigurationError(f"layer {layer} is not a contiguous run of gates")
        gates = [(s, where[s][1]) for s in layer]
        if any(op.kind != RY for _, op in gates) or len({op.target for _, op in gates}) != len(gates):
            raise ConfigurationError(f"layer {layer} must be RY gates on distinct qubits")
        out.append((positions[0], [(s, op.target) for s, op in gates]))
    return out


def fubini_metric_blockdiag(spec, xs, theta, approx="block-diag"):
    """Per-layer block-diagonal Fubini-Study metric averaged over ``xs``.

    Each block is ``(<Y_j Y_k> - <Y_j><Y_k>) / 4`` on the state entering the
    layer; with ``approx="diag"`` only the block diagonals are kept.
    """
    if approx not in METRIC_APPROX:
        raise ConfigurationError(f"approx must be one of {METRIC_APPROX}")
    xs = check_features(xs)
    if len(xs) == 0:
        raise DomainError("metric needs at least one feature")
    theta = check_theta(spec, theta)
    n = spec.n_qubits
    metric = np.zeros((spec.param_count, spec.param_count))
    amps = batch_encode(xs, n, spec.encoding)
    done = 0
    for start, gates in _layer_starts(spec):
        amps = apply_schedule(spec, amps, theta, spec.schedule[done:start])
        done = start
        ys = [sim.batch_pauli_y(amps, n, q) for _, q in gates]
        means = [np.sum(amps.conj() * y, axis=1).real for y in ys]
        for a, (sa, _) in enumerate(gates):
            for b, (sb, _) in enumerate(gates):
                if approx == "diag" and a != b:
                    continue
                corr = np.sum(ys[a].conj() * ys[b], axis=1).real
                metric[sa, sb] = 0.25 * np.mean(corr - means[a] * means[b])
    return metric
