"""Loss-landscape cuts through trained minima.

One-dimensional cuts follow the straight segment between two parameter
vectors. Two-dimensional cuts use the plane through three vectors with
``theta_a`` as origin, ``w1`` along ``theta_b - theta_a`` and ``w2`` the
Gram-Schmidt remainder of ``theta_c - theta_a``.
"""

import csv
import json
from dataclasses import dataclass

import numpy as np

from .errors import DegeneracyError, ShapeError
from .gradloss import mse_loss

DEGENERACY_TOL = 1e-9


def _pair(theta_a, theta_b):
    a = np.asarray(theta_a, dtype=float)
    b = np.asarray(theta_b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise ShapeError(f"parameter vectors differ in shape: {a.shape} vs {b.shape}")
    return a, b


def interpolate(theta_a, theta_b, alpha):
    a, b = _pair(theta_a, theta_b)
    if alpha == 0:
        return a.copy()
    if alpha == 1:
        return b.copy()
    return (1 - alpha) * a + alpha * b


@dataclass
class Cut1D:
    alphas: np.ndarray
    train_loss: np.ndarray
    test_loss: np.ndarray = None


def cut_1d(spec, theta_a, theta_b, n_points, data):
    """Train (and test) MSE at ``n_points`` equally spaced alphas in [0, 1]."""
    if n_points < 2:
        raise ShapeError("a cut needs at least two points")
    a, b = _pair(theta_a, theta_b)
    alphas = np.linspace(0.0, 1.0, n_points)
    points = [interpolate(a, b, al) for al in alphas]
    train = np.array([mse_loss(spec, p, data.train) for p in points])
    test = np.array([mse_loss(spec, p, data.test) for p in points])
    return Cut1D(alphas, train, test)


@dataclass(frozen=True)
class PlaneBasis:
    """Orthonormal plane through three parameter vectors.

    ``scale1`` is the w1 coordinate of ``theta_b``; ``theta_c`` sits at
    ``(offset_c, scale2)``. ``offset_c`` is zero only when ``theta_c - theta_a``
    is already orthogonal to ``w1``.
    """

    origin: np.ndarray
    w1: np.ndarray
    w2: np.ndarray
    scale1: float
    scale2: float
    offset_c: float
    anchors: tuple = ()

    def point(self, alpha, beta):
        # defining vectors are returned exactly so their grid losses match direct evaluation
        for coords, theta in self.anchors:
            if (alpha, beta) == coords:
                return theta.copy()
        return self.origin + alpha * self.w1 + beta * self.w2

    def project(self, theta):
        d = np.asarray(theta, dtype=float) - self.origin
        return float(d @ self.w1), float(d @ self.w2)

    def to_dict(self):
        return {
            "origin": self.origin.tolist(),
            "w1": self.w1.tolist(),
            "w2": self.w2.tolist(),
            "scale1": self.scale1,
            "scale2": self.scale2,
            "offset_c": self.offset_c,
            "w1_orientation": "theta_b - theta_a",
            "defining_points": [list(c) + [t.tolist()] for c, t in self.anchors],
        }


def plane_basis(theta_a, theta_b, theta_c):
    a, b = _pair(theta_a, theta_b)
    _, c = _pair(theta_a, theta_c)
    d1 = b - a
    n1 = np.linalg.norm(d1)
    if n1 < DEGENERACY_TOL:
        raise DegeneracyError("theta_a and theta_b coincide", residual=float(n1))
    w1 = d1 / n1
    dc = c - a
    offset = float(dc @ w1)
    r = dc - offset * w1
    # second Gram-Schmidt pass keeps w1.w2 at rounding level
    r -= (r @ w1) * w1
    n2 = np.linalg.norm(r)
    if n2 < DEGENERACY_TOL * max(1.0, np.linalg.norm(dc)):
        raise DegeneracyError(
            f"theta_c is collinear with theta_a, theta_b (residual norm {n2:.3g})", residual=float(n2)
        )
    w2 = r / n2
    scale1, scale2 = float(d1 @ w1), float(dc @ w2)
    anchors = (((0.0, 0.0), a.copy()), ((scale1, 0.0), b.copy()), ((offset, scale2), c.copy()))
    return PlaneBasis(a.copy(), w1, w2, scale1, scale2, offset, anchors)


@dataclass
class LandscapeGrid:
    basis: PlaneBasis
    alphas: np.ndarray
    betas: np.ndarray
    losses: np.ndarray
    test_losses: np.ndarray = None


def default_ranges(basis, margin=0.25):
    """Axis ranges spanning the defining points plus ``margin`` of the span on each side."""
    lo1, hi1 = min(0.0, basis.offset_c, basis.scale1), max(0.0, basis.offset_c, basis.scale1)
    lo2, hi2 = min(0.0, basis.scale2), max(0.0, basis.scale2)
    s1, s2 = hi1 - lo1, hi2 - lo2
    return (lo1 - margin * s1, hi1 + margin * s1), (lo2 - margin * s2, hi2 + margin * s2)


def grid_axes(basis, alpha_range=None, beta_range=None, resolution=50, include_anchors=True):
    """Linearly spaced axes; anchor coordinates are merged in so minima land on grid points."""
    if isinstance(resolution, int):
        resolution = (resolution, resolution)
    if min(resolution) < 2:
        raise ShapeError("grid resolution must be >= 2 per axis")
    ra, rb = default_ranges(basis)
    alpha_range = alpha_range or ra
    beta_range = beta_range or rb
    alphas = np.linspace(*alpha_range, resolution[0])
    betas = np.linspace(*beta_range, resolution[1])
    if include_anchors:
        alphas = np.union1d(alphas, [0.0, basis.scale1, basis.offset_c])
        betas = np.union1d(betas, [0.0, basis.scale2])
    return alphas, betas


def cut_2d(spec, basis, data, alphas=None, betas=None, alpha_range=None, beta_range=None,
           resolution=50, with_test=False):
    if alphas is None or betas is None:
        alphas, betas = grid_axes(basis, alpha_range, beta_range, resolution)
    alphas = np.asarray(alphas, dtype=float)
    betas = np.asarray(betas, dtype=float)
    train = np.empty((len(alphas), len(betas)))
    test = np.empty_like(train) if with_test else None
    for i, al in enumerate(alphas):
        for j, be in enumerate(betas):
            theta = basis.point(float(al), float(be))
            train[i, j] = mse_loss(spec, theta, data.train)
            if with_test:
                test[i, j] = mse_loss(spec, theta, data.test)
    return LandscapeGrid(basis, alphas, betas, train, test)


@dataclass
class DropoutCurve:
    alphas: np.ndarray
    loss_free: np.ndarray
    loss_clamped: np.ndarray
    zero_indices: tuple

    @property
    def max_loss_change(self):
        return float(self.loss_clamped.max() - self.loss_free.max())


def dropout_curve(spec, theta_a, theta_b, zero_indices, n_points, data, split="train"):
    """Losses along the segment with and without the listed parameters forced to 0."""
    a, b = _pair(theta_a, theta_b)
    idx = tuple(int(i) for i in zero_indices)
    for i in idx:
        if not 0 <= i < len(a):
            raise IndexError(f"parameter index {i} out of range for {len(a)} parameters")
    if n_points < 2:
        raise ShapeError("a cut needs at least two points")
    batch = data.train if split == "train" else data.test
    alphas = np.linspace(0.0, 1.0, n_points)
    free, clamped = np.empty(n_points), np.empty(n_points)
    for k, al in enumerate(alphas):
        theta = interpolate(a, b, al)
        free[k] = mse_loss(spec, theta, batch)
        if idx:
            theta[list(idx)] = 0.0
            clamped[k] = mse_loss(spec, theta, batch)
        else:
            clamped[k] = free[k]
    return DropoutCurve(alphas, free, clamped, idx)


def _fmt(v):
    return format(float(v), ".17g")


def write_grid(grid, csv_path, sidecar_path, extra=None):
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        header = ["alpha", "beta", "train_loss"] + (["test_loss"] if grid.test_losses is not None else [])
        w.writerow(header)
        for i, al in enumerate(grid.alphas):
            for j, be in enumerate(grid.betas):
                row = [_fmt(al), _fmt(be), _fmt(grid.losses[i, j])]
                if grid.test_losses is not None:
                    row.append(_fmt(grid.test_losses[i, j]))
                w.writerow(row)
    meta = {"basis": grid.basis.to_dict(), "shape": [len(grid.alphas), len(grid.betas)]}
    meta.update(extra or {})
    with open(sidecar_path, "w") as fh:
        json.dump(meta, fh, indent=2)
        fh.write("\n")


def write_curve(curve, csv_path):
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["alpha", "loss_free", "loss_clamped"])
        for al, f, c in zip(curve.alphas, curve.loss_free, curve.loss_clamped):
            w.writerow([_fmt(al), _fmt(f), _fmt(c)])


def write_cut(cut, csv_path):
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["alpha", "train_loss", "test_loss"])
        for al, tr, te in zip(cut.alphas, cut.train_loss, cut.test_loss):
            w.writerow([_fmt(al), _fmt(tr), _fmt(te)])
