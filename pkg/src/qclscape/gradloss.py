"""MSE loss over a batch and its parameter-shift gradient."""

from dataclasses import dataclass

import numpy as np

from .ansatz import check_features, check_theta, predict
from .errors import DomainError, ShapeError

SHIFT = np.pi / 2


@dataclass(frozen=True)
class Batch:
    xs: np.ndarray
    ys: np.ndarray

    def __post_init__(self):
        xs = np.atleast_1d(np.asarray(self.xs, dtype=float))
        ys = np.atleast_1d(np.asarray(self.ys, dtype=float))
        if xs.shape != ys.shape or xs.ndim != 1:
            raise ShapeError(f"features {xs.shape} and labels {ys.shape} must be equal-length vectors")
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "ys", ys)

    def __len__(self):
        return len(self.xs)

    def subset(self, idx):
        return Batch(self.xs[idx], self.ys[idx])


def _nonempty(batch):
    if len(batch) == 0:
        raise DomainError("batch is empty")


def mse(ys, preds):
    return float(np.mean((np.asarray(ys, dtype=float) - np.asarray(preds, dtype=float)) ** 2))


def mse_loss(spec, theta, batch):
    _nonempty(batch)
    theta = check_theta(spec, theta)
    return mse(batch.ys, predict(spec, batch.xs, theta))


def _shifted(theta):
    p = len(theta)
    shifts = SHIFT * np.eye(p)
    return np.concatenate([theta + shifts, theta - shifts])


def prediction_gradients(spec, theta, xs):
    """Parameter-shift gradient of y_hat for each feature, shape ``(len(xs), P)``."""
    theta = check_theta(spec, theta)
    xs = check_features(xs)
    p = spec.param_count
    thetas = np.tile(_shifted(theta), (len(xs), 1))
    values = predict(spec, np.repeat(xs, 2 * p), thetas).reshape(len(xs), 2, p)
    return 0.5 * (values[:, 0, :] - values[:, 1, :])


def predict_gradient(spec, theta, x):
    return prediction_gradients(spec, theta, [x])[0]


def loss_and_gradient(spec, theta, batch):
    """Batch MSE and its gradient ``-(2/n) sum (y - y_hat) grad y_hat``.

    One vectorised call evaluates the unshifted predictions and the
    ``2P`` shifted ones for every sample.
    """
    _nonempty(batch)
    theta = check_theta(spec, theta)
    p = spec.param_count
    thetas = np.tile(np.concatenate([theta[None, :], _shifted(theta)]), (len(batch), 1))
    values = predict(spec, np.repeat(batch.xs, 2 * p + 1), thetas).reshape(len(batch), 2 * p + 1)
    preds = values[:, 0]
    grads = 0.5 * (values[:, 1 : p + 1] - values[:, p + 1 :])
    residuals = batch.ys - preds
    loss = float(np.mean(residuals**2))
    grad = -2.0 / len(batch) * np.sum(residuals[:, None] * grads, axis=0)
    return loss, grad


def loss_gradient(spec, theta, batch):
    return loss_and_gradient(spec, theta, batch)[1]


def finite_difference(fn, theta, h=1e-5):
    """Central-difference gradient of a scalar function; an oracle for tests."""
    theta = np.asarray(theta, dtype=float)
    grad = np.empty_like(theta)
    for i in range(len(theta)):
        step = np.zeros_like(theta)
        step[i] = h
        grad[i] = (fn(theta + step) - fn(theta - step)) / (2 * h)
    return grad
