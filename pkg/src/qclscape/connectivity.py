"""Aggregate minima sets and nudged-elastic-band paths between minima.

The NEB works on any stochastic objective ``objective(theta, rng) ->
(loss, grad)``; ``BatchObjective`` supplies the QCL version that estimates
both from a fresh training mini-batch per pivot per step. Full-data
losses are used only for path metrics and best-path selection.
"""

import csv
import json
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
from scipy.spatial.distance import cdist, pdist

from .errors import ConfigurationError, DomainError, ShapeError
from .gradloss import loss_and_gradient, mse_loss
from .harness import HIST_BINS, HIST_RANGE, mse_histogram

NEB_PROFILES = {"localized": (10, 10), "long": (12, 100), "medium": (9, 50)}


# -- mean shift ---------------------------------------------------------------


def estimate_bandwidth(points, quantile=0.3):
    """``quantile`` of the pairwise distances; falls back to 1.0 when they all vanish."""
    points = np.asarray(points, dtype=float)
    if len(points) < 2:
        return 1.0
    bw = float(np.quantile(pdist(points), quantile))
    if bw <= 0:
        bw = float(np.max(pdist(points))) or 1.0
    return bw


@dataclass
class MeanShiftResult:
    centers: np.ndarray
    labels: np.ndarray
    bandwidth: float
    cluster_sizes: np.ndarray


def mean_shift(points, bandwidth=None, tol=1e-4, max_iter=500):
    """Flat-kernel mean shift seeded at every point.

    Seeds move to the mean of the points within ``bandwidth`` until they
    move less than ``tol``. Converged seeds are merged greedily, most
    populated first, dropping any that lie within ``bandwidth`` of a kept
    center. Each point is labelled with its nearest center.
    """
    points = np.asarray(points, dtype=float)
    if points.ndim != 2 or len(points) == 0:
        raise ShapeError("mean_shift needs a non-empty (n, P) array")
    if bandwidth is None:
        bandwidth = estimate_bandwidth(points)
    if bandwidth <= 0:
        raise ConfigurationError(f"bandwidth must be positive, got {bandwidth}")

    seeds = points.copy()
    active = np.ones(len(seeds), dtype=bool)
    for _ in range(max_iter):
        if not active.any():
            break
        near = cdist(seeds[active], points) <= bandwidth
        counts = near.sum(axis=1)
        moved = np.where(counts[:, None] > 0, near @ points / np.maximum(counts, 1)[:, None], seeds[active])
        shift = np.linalg.norm(moved - seeds[active], axis=1)
        seeds[active] = moved
        idx = np.flatnonzero(active)
        active[idx[shift < tol]] = False

    support = (cdist(seeds, points) <= bandwidth).sum(axis=1)
    order = np.argsort(-support, kind="stable")
    kept = []
    for i in order:
        if all(np.linalg.norm(seeds[i] - seeds[j]) > bandwidth for j in kept):
            kept.append(i)
    centers = seeds[kept]
    labels = np.argmin(cdist(points, centers), axis=1)
    sizes = np.bincount(labels, minlength=len(centers))
    return MeanShiftResult(centers, labels, float(bandwidth), sizes)


# -- aggregate minima set ----------------------------------------------------


@dataclass
class AMS:
    centers: np.ndarray
    test_mse: np.ndarray
    cluster_sizes: np.ndarray
    n_p: int
    n_c: int
    bin_index: int = None
    bin_edges: tuple = None
    bandwidth: float = None

    def __len__(self):
        return len(self.centers)

    def to_json(self):
        return [
            {"center": c.tolist(), "test_mse": float(m), "cluster_size": int(s)}
            for c, m, s in zip(self.centers, self.test_mse, self.cluster_sizes)
        ]

    @classmethod
    def from_json(cls, items):
        centers = np.array([it["center"] for it in items], dtype=float)
        return cls(
            centers=centers,
            test_mse=np.array([it["test_mse"] for it in items], dtype=float),
            cluster_sizes=np.array([it["cluster_size"] for it in items], dtype=int),
            n_p=int(sum(it["cluster_size"] for it in items)),
            n_c=len(items),
        )


def _bin_of(values, value_range, n_bins):
    lo, hi = value_range
    width = (hi - lo) / n_bins
    return np.clip(np.floor((np.asarray(values, dtype=float) - lo) / width).astype(int), 0, n_bins - 1)


def build_ams(records, loss_fn, value_range=HIST_RANGE, n_bins=HIST_BINS, bandwidth=None, wrap=False):
    """Cluster the final parameters of the best runs and keep centers that stay in the best bin.

    ``records`` need ``best_test_mse`` and ``theta_final``; ``loss_fn(theta)``
    returns the test MSE used to vet each center.
    """
    if not records:
        raise DomainError("no training records")
    best = np.array([r.best_test_mse for r in records])
    eligible = best <= value_range[1]
    if not eligible.any():
        return AMS(np.empty((0, len(records[0].theta_final))), np.empty(0), np.empty(0, int), 0, 0)
    bins = _bin_of(best, value_range, n_bins)
    target = int(bins[eligible].min())
    chosen = [r for r, b, e in zip(records, bins, eligible) if e and b == target]
    points = np.array([r.theta_final for r in chosen])
    if wrap:
        points = np.mod(points, 2 * np.pi)
    ms = mean_shift(points, bandwidth)
    mses = np.array([loss_fn(c) for c in ms.centers])
    keep = _bin_of(mses, value_range, n_bins) == target
    if target == n_bins - 1:
        keep &= mses <= value_range[1]
    _, edges, _, _ = mse_histogram(best, value_range, n_bins)
    return AMS(
        centers=ms.centers[keep],
        test_mse=mses[keep],
        cluster_sizes=ms.cluster_sizes[keep],
        n_p=len(chosen),
        n_c=len(ms.centers),
        bin_index=target,
        bin_edges=(float(edges[target]), float(edges[target + 1])),
        bandwidth=ms.bandwidth,
    )


# -- nudged elastic band -----------------------------------------------------


class BatchObjective:
    """Mini-batch loss and parameter-shift gradient of a QCL circuit."""

    def __init__(self, spec, batch, batch_size=32):
        self.spec = spec
        self.batch = batch
        self.batch_size = min(batch_size, len(batch))

    def __call__(self, theta, rng):
        idx = rng.choice(len(self.batch), self.batch_size, replace=False)
        return loss_and_gradient(self.spec, theta, self.batch.subset(idx))


def full_loss(spec, batch):
    return lambda theta: mse_loss(spec, theta, batch)


@dataclass
class NEBPath:
    pivots: np.ndarray
    k: float = 1.0
    losses: np.ndarray = None

    def __post_init__(self):
        self.pivots = np.asarray(self.pivots, dtype=float)
        if self.pivots.ndim != 2 or len(self.pivots) < 3:
            raise ConfigurationError("a NEB path needs at least 3 pivots")

    @property
    def fixed(self):
        flags = np.zeros(len(self.pivots), dtype=bool)
        flags[[0, -1]] = True
        return flags


def neb_init(theta_a, theta_b, n_pivots, k=1.0):
    """Pivots equally spaced on the segment; the endpoints are the exact inputs."""
    a = np.asarray(theta_a, dtype=float)
    b = np.asarray(theta_b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise ShapeError(f"endpoint shapes differ: {a.shape} vs {b.shape}")
    if n_pivots < 3:
        raise ConfigurationError(f"NEB needs at least 3 pivots, got {n_pivots}")
    ts = np.linspace(0.0, 1.0, n_pivots)[:, None]
    pivots = (1 - ts) * a + ts * b
    pivots[0], pivots[-1] = a, b
    return NEBPath(pivots, k)


def neb_tangent(pivots, i, losses):
    """Upwind tangent at interior pivot ``i``.

    On a monotone stretch the segment towards the higher-loss neighbour is
    used; at a local extremum the two segments are blended with weights
    given by the loss differences, larger weight on the higher neighbour.
    """
    pivots = np.asarray(pivots, dtype=float)
    if not 0 < i < len(pivots) - 1:
        raise IndexError(f"pivot {i} is not interior")
    fwd = pivots[i + 1] - pivots[i]
    bwd = pivots[i] - pivots[i - 1]
    prev, here, nxt = losses[i - 1], losses[i], losses[i + 1]
    if nxt > here > prev:
        tau = fwd
    elif nxt < here < prev:
        tau = bwd
    else:
        big = max(abs(nxt - here), abs(prev - here))
        small = min(abs(nxt - here), abs(prev - here))
        if big == 0:
            tau = fwd + bwd
        elif nxt > prev:
            tau = fwd * big + bwd * small
        else:
            tau = fwd * small + bwd * big
    norm = np.linalg.norm(tau)
    return tau / norm if norm > 0 else np.zeros_like(tau)


def neb_forces(pivots, losses, grads, k):
    """Spring force along the tangent minus the gradient component across it."""
    forces = np.zeros_like(pivots)
    for i in range(1, len(pivots) - 1):
        tau = neb_tangent(pivots, i, losses)
        spring = k * (np.linalg.norm(pivots[i + 1] - pivots[i]) - np.linalg.norm(pivots[i] - pivots[i - 1]))
        g = grads[i]
        forces[i] = spring * tau - (g - (g @ tau) * tau)
    return forces


def neb_step(path, objective, lr, rng, k=None):
    """One update of all interior pivots; endpoints are never touched."""
    k = path.k if k is None else k
    losses = np.empty(len(path.pivots))
    grads = np.zeros_like(path.pivots)
    for i, theta in enumerate(path.pivots):
        losses[i], g = objective(theta, rng)
        if 0 < i < len(path.pivots) - 1:
            grads[i] = g
    forces = neb_forces(path.pivots, losses, grads, k)
    pivots = path.pivots.copy()
    pivots[1:-1] += lr * forces[1:-1]
    return NEBPath(pivots, k, losses)


@dataclass
class PathMetrics:
    max_loss: float
    auc: float
    endpoint_ratio: float
    endpoint_losses: tuple

    def to_dict(self):
        return {
            "max_loss": self.max_loss,
            "auc": self.auc,
            "endpoint_ratio": self.endpoint_ratio,
            "endpoint_losses": list(self.endpoint_losses),
        }


def path_metrics(losses, endpoint_losses=None):
    losses = np.asarray(losses, dtype=float)
    if losses.ndim != 1 or len(losses) < 2:
        raise ShapeError("need one loss per pivot")
    if endpoint_losses is None:
        endpoint_losses = (losses[0], losses[-1])
    la, lb = (float(v) for v in endpoint_losses)
    top = float(losses.max())
    with np.errstate(divide="ignore"):
        ratio = max(top / la if la > 0 else np.inf, top / lb if lb > 0 else np.inf)
    auc = float(np.sum(0.5 * (losses[1:] + losses[:-1])))
    return PathMetrics(top, auc, float(ratio), (la, lb))


def classify_connected(metrics, epsilon=0.02):
    return metrics.max_loss - max(metrics.endpoint_losses) <= epsilon


@dataclass
class NEBResult:
    initial: np.ndarray
    best: np.ndarray
    best_step: int
    train_losses: list
    test_losses: list = None
    k: float = 1.0
    lr: float = 0.05
    profile: str = "custom"
    seed: int = 0
    metrics: dict = field(default_factory=dict)

    @property
    def initial_metrics(self):
        return path_metrics(self.train_losses[0])

    @property
    def best_metrics(self):
        return path_metrics(self.train_losses[self.best_step])


def resolve_profile(profile, n_pivots=None, steps=None):
    if profile in NEB_PROFILES:
        p, s = NEB_PROFILES[profile]
    elif profile == "custom":
        if n_pivots is None or steps is None:
            raise ConfigurationError("custom NEB profile needs n_pivots and steps")
        p, s = n_pivots, steps
    else:
        raise ConfigurationError(f"unknown NEB profile {profile!r}; expected {sorted(NEB_PROFILES)} or custom")
    return (n_pivots or p), (s if steps is None else steps)


def neb_run(theta_a, theta_b, objective, evaluate, profile="localized", k=1.0, lr=0.05, seed=0,
            evaluate_test=None, n_pivots=None, steps=None):
    """Run NEB and keep the path with the smallest full-data AUC.

    ``evaluate(theta)`` gives the full training loss used for metrics and
    selection; ``evaluate_test`` optionally adds test losses. Step 0 is the
    straight line, so the best path never has a larger AUC than it.
    """
    n_pivots, steps = resolve_profile(profile, n_pivots, steps)
    rng = np.random.default_rng(seed)
    path = neb_init(theta_a, theta_b, n_pivots, k)
    initial = path.pivots.copy()
    if np.array_equal(initial[0], initial[-1]):
        steps = 0

    def full(pivots, fn):
        return np.array([fn(p) for p in pivots])

    train_hist = [full(path.pivots, evaluate)]
    test_hist = [full(path.pivots, evaluate_test)] if evaluate_test else None
    best, best_step, best_auc = initial, 0, path_metrics(train_hist[0]).auc
    for s in range(1, steps + 1):
        path = neb_step(path, objective, lr, rng, k)
        train_hist.append(full(path.pivots, evaluate))
        if evaluate_test:
            test_hist.append(full(path.pivots, evaluate_test))
        auc = path_metrics(train_hist[-1]).auc
        if auc < best_auc:
            best, best_step, best_auc = path.pivots.copy(), s, auc

    result = NEBResult(initial, best, best_step, train_hist, test_hist, k, lr, profile, seed)
    result.metrics = {
        "initial_train": result.initial_metrics.to_dict(),
        "best_train": result.best_metrics.to_dict(),
    }
    if test_hist is not None:
        result.metrics["initial_test"] = path_metrics(test_hist[0]).to_dict()
        result.metrics["best_test"] = path_metrics(test_hist[best_step]).to_dict()
    return result


def pair_seed(seed, i, j):
    return int(np.random.SeedSequence([seed, i, j]).generate_state(1)[0])


def neb_all_pairs(centers, objective, evaluate, profile="localized", k=1.0, lr=0.05, seed=0, **kw):
    """NEB between every pair of centers; each pair gets its own RNG stream."""
    out = {}
    for i, j in combinations(range(len(centers)), 2):
        out[(i, j)] = neb_run(centers[i], centers[j], objective, evaluate, profile, k, lr,
                              pair_seed(seed, i, j), **kw)
    return out


def write_neb(result, csv_path, sidecar_path, extra=None):
    fmt = lambda v: format(float(v), ".17g")  # noqa: E731
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        header = ["step", "pivot_index", "loss_train"] + (["loss_test"] if result.test_losses else [])
        w.writerow(header)
        for s, losses in enumerate(result.train_losses):
            for i, v in enumerate(losses):
                row = [s, i, fmt(v)]
                if result.test_losses:
                    row.append(fmt(result.test_losses[s][i]))
                w.writerow(row)
    meta = {
        "initial_pivots": result.initial.tolist(),
        "best_pivots": result.best.tolist(),
        "best_step": result.best_step,
        "k": result.k,
        "lr": result.lr,
        "profile": result.profile,
        "n_pivots": len(result.initial),
        "steps": len(result.train_losses) - 1,
        "seed": result.seed,
        "metrics": result.metrics,
    }
    meta.update(extra or {})
    with open(sidecar_path, "w") as fh:
        json.dump(meta, fh, indent=2)
        fh.write("\n")
