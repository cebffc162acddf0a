"""Data, initialization, the training loop, sweeps and run statistics."""

import hashlib
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .ansatz import LAYOUTS, build_ansatz
from .errors import ConfigurationError, DomainError
from .gradloss import Batch, loss_and_gradient, mse_loss
from .optim import METRIC_APPROX, OPTIMIZERS, fubini_metric_blockdiag, make_optimizer, step

log = logging.getLogger(__name__)

N_POINTS = 500
NOISE = 0.1
GLOROT_SIGMA = math.sqrt(2 / 6)
DEFAULT_INITS = ("normal:0", "normal:pi/4", "normal:pi/2", "normal:3pi/4", "normal:pi", "uniform")
DEFAULT_BATCH_SIZES = (1, 2, 4, 8, 16, 32)
HIST_RANGE = (0.007, 0.16)
HIST_BINS = 50

_MU = {"0": 0.0, "pi/4": math.pi / 4, "pi/2": math.pi / 2, "3pi/4": 3 * math.pi / 4, "pi": math.pi}


@dataclass(frozen=True)
class Dataset:
    xs: np.ndarray
    ys: np.ndarray
    seed: int

    def __len__(self):
        return len(self.xs)


@dataclass(frozen=True)
class DataSplit:
    train: Batch
    test: Batch
    train_idx: np.ndarray
    test_idx: np.ndarray


def generate_dataset(seed=0, n_points=N_POINTS, noise=NOISE):
    """Equally spaced features on [-1, 1] labelled ``x**2 + U(-noise, noise)``."""
    rng = np.random.default_rng(seed)
    xs = np.linspace(-1.0, 1.0, n_points)
    eps = rng.uniform(-noise, noise, n_points) if noise > 0 else np.zeros(n_points)
    return Dataset(xs, xs**2 + eps, seed)


def split(dataset, ratio=0.8, seed=0):
    if not 0 < ratio < 1:
        raise ConfigurationError(f"split ratio must be in (0, 1), got {ratio}")
    n_train = int(math.floor(len(dataset) * ratio + 1e-9))
    if n_train == 0 or n_train == len(dataset):
        raise ConfigurationError(f"ratio {ratio} leaves one side of the split empty")
    perm = np.random.default_rng(seed).permutation(len(dataset))
    train_idx, test_idx = np.sort(perm[:n_train]), np.sort(perm[n_train:])
    return DataSplit(
        Batch(dataset.xs[train_idx], dataset.ys[train_idx]),
        Batch(dataset.xs[test_idx], dataset.ys[test_idx]),
        train_idx,
        test_idx,
    )


def parse_init(scheme):
    """``"uniform"`` or ``"normal:<mu>"`` with mu in 0, pi/4, pi/2, 3pi/4, pi or a float."""
    if scheme == "uniform":
        return "uniform", None
    kind, _, mu = scheme.partition(":")
    if kind not in ("normal", "gaussian") or not mu:
        raise ConfigurationError(f"unknown init scheme {scheme!r}")
    if mu in _MU:
        return "normal", _MU[mu]
    try:
        return "normal", float(mu)
    except ValueError:
        raise ConfigurationError(f"cannot parse init mean in {scheme!r}") from None


def init_params(scheme, n_params, rng):
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    kind, mu = parse_init(scheme)
    if kind == "uniform":
        return rng.uniform(0.0, 2 * math.pi, n_params)
    return rng.normal(mu, GLOROT_SIGMA, n_params)


@dataclass(frozen=True)
class TrainConfig:
    layout: str = "cycle"
    depth: int = 1
    optimizer: str = "adam"
    lr: float = 0.05
    steps: int = 300
    batch_size: int = 8
    init: str = "normal:pi/2"
    seed: int = 0
    n_qubits: int = 3
    encoding: str = "rz-ry"
    data_seed: int = 0
    split_seed: int = 0
    qng_reg: float = 1e-6
    qng_approx: str = "block-diag"
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    eval_stride: int = 1

    def __post_init__(self):
        if self.layout not in LAYOUTS:
            raise ConfigurationError(f"layout must be one of {LAYOUTS}")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigurationError(f"optimizer must be one of {OPTIMIZERS}")
        if self.qng_approx not in METRIC_APPROX:
            raise ConfigurationError(f"qng_approx must be one of {METRIC_APPROX}")
        if self.depth < 1 or self.steps < 0 or self.batch_size < 1 or self.eval_stride < 1:
            raise ConfigurationError("depth, batch_size and eval_stride must be >= 1, steps >= 0")
        parse_init(self.init)

    def to_dict(self):
        return asdict(self)

    def config_hash(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def optimizer_state(self, n_params):
        opts = {}
        if self.optimizer == "adam":
            opts = dict(beta1=self.beta1, beta2=self.beta2, eps_adam=self.eps_adam)
        elif self.optimizer == "qng":
            opts = dict(qng_reg=self.qng_reg, qng_approx=self.qng_approx)
        return make_optimizer(self.optimizer, n_params, self.lr, **opts)


@dataclass
class TrainRecord:
    config: TrainConfig
    theta_init: np.ndarray
    theta_final: np.ndarray
    train_loss: np.ndarray
    test_mse: np.ndarray
    best_test_mse: float
    best_step: int
    duration_s: float
    circuit: dict = field(default_factory=dict)

    @property
    def seed(self):
        return self.config.seed

    def to_json(self):
        config = self.config.to_dict()
        config["circuit"] = self.circuit
        return {
            "config": config,
            "theta_init": self.theta_init.tolist(),
            "theta_final": self.theta_final.tolist(),
            "train_loss": self.train_loss.tolist(),
            "test_mse": [None if math.isnan(v) else v for v in self.test_mse.tolist()],
            "best_test_mse": self.best_test_mse,
            "best_step": self.best_step,
            "seed": self.seed,
            "duration_s": self.duration_s,
        }

    @classmethod
    def from_json(cls, obj):
        config = dict(obj["config"])
        circuit = config.pop("circuit", {})
        test = [math.nan if v is None else v for v in obj["test_mse"]]
        return cls(
            config=TrainConfig(**config),
            theta_init=np.asarray(obj["theta_init"], dtype=float),
            theta_final=np.asarray(obj["theta_final"], dtype=float),
            train_loss=np.asarray(obj["train_loss"], dtype=float),
            test_mse=np.asarray(test, dtype=float),
            best_test_mse=float(obj["best_test_mse"]),
            best_step=int(obj["best_step"]),
            duration_s=float(obj["duration_s"]),
            circuit=circuit,
        )


class EpochSampler:
    """Mini-batches drawn without replacement; reshuffles when an epoch runs out."""

    def __init__(self, n, batch_size, rng):
        self.n = n
        self.batch_size = min(batch_size, n)
        self.rng = rng
        self._order = np.empty(0, dtype=int)
        self._pos = 0

    def __call__(self):
        if self._pos + self.batch_size > len(self._order):
            self._order = self.rng.permutation(self.n)
            self._pos = 0
        idx = self._order[self._pos : self._pos + self.batch_size]
        self._pos += self.batch_size
        return idx


def _streams(config):
    # optimizers share the init and batch streams of an otherwise identical run
    key = f"{config.layout}|{config.depth}|{config.init}|{config.batch_size}"
    salt = int.from_bytes(hashlib.sha256(key.encode()).digest()[:4], "little")
    init_seq = np.random.SeedSequence([config.seed, salt, 0])
    batch_seq = np.random.SeedSequence([config.seed, salt, 1])
    return np.random.default_rng(init_seq), np.random.default_rng(batch_seq)


def train(spec, config, data, theta_init=None):
    """Run ``config.steps`` optimizer updates; no early stopping.

    ``train_loss[t]`` is the mini-batch loss at the t-th iterate (the batch
    used for its gradient; the last entry uses one more drawn batch) and
    ``test_mse[t]`` the full test-set MSE there, so both have
    ``steps + 1`` entries. Test entries skipped by ``eval_stride`` are NaN.
    """
    start = time.perf_counter()
    init_rng, batch_rng = _streams(config)
    if theta_init is None:
        theta_init = init_params(config.init, spec.param_count, init_rng)
    theta = np.array(theta_init, dtype=float)
    state = config.optimizer_state(spec.param_count)
    sampler = EpochSampler(len(data.train), config.batch_size, batch_rng)

    train_loss = np.empty(config.steps + 1)
    test_mse = np.full(config.steps + 1, math.nan)
    test_mse[0] = mse_loss(spec, theta, data.test)
    for t in range(config.steps):
        batch = data.train.subset(sampler())
        train_loss[t], grad = loss_and_gradient(spec, theta, batch)
        metric = None
        if config.optimizer == "qng":
            metric = fubini_metric_blockdiag(spec, batch.xs, theta, config.qng_approx)
        state, theta = step(state, theta, grad, metric)
        if (t + 1) % config.eval_stride == 0 or t + 1 == config.steps:
            test_mse[t + 1] = mse_loss(spec, theta, data.test)
    train_loss[config.steps] = mse_loss(spec, theta, data.train.subset(sampler()))

    best = int(np.nanargmin(test_mse))
    return TrainRecord(
        config=config,
        theta_init=np.asarray(theta_init, dtype=float),
        theta_final=theta,
        train_loss=train_loss,
        test_mse=test_mse,
        best_test_mse=float(test_mse[best]),
        best_step=best,
        duration_s=time.perf_counter() - start,
        circuit=spec.to_dict(),
    )


@dataclass(frozen=True)
class SweepGrid:
    layouts: tuple = LAYOUTS
    depths: tuple = (1, 2, 3, 4)
    optimizers: tuple = OPTIMIZERS
    inits: tuple = DEFAULT_INITS
    batch_sizes: tuple = DEFAULT_BATCH_SIZES
    seeds: tuple = (0,)
    base: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, obj):
        known = {"layouts", "depths", "optimizers", "inits", "batch_sizes", "seeds"}
        grid = {k: tuple(obj[k]) for k in known if k in obj}
        base = {k: v for k, v in obj.items() if k not in known}
        unknown = set(base) - set(TrainConfig.__dataclass_fields__)
        if unknown:
            raise ConfigurationError(f"unknown sweep config keys: {sorted(unknown)}")
        return cls(**grid, base=base)

    def configs(self):
        axes = [self.layouts, self.depths, self.optimizers, self.inits, self.batch_sizes, self.seeds]
        if any(len(a) == 0 for a in axes):
            raise ConfigurationError("sweep grid has an empty axis")
        out = []
        for layout in self.layouts:
            for depth in self.depths:
                for opt in self.optimizers:
                    for seed in self.seeds:
                        for init in self.inits:
                            for bs in self.batch_sizes:
                                out.append(
                                    TrainConfig(
                                        layout=layout, depth=depth, optimizer=opt, init=init,
                                        batch_size=bs, seed=seed, **self.base,
                                    )
                                )
        return out


def _data_for(config, cache={}):
    key = (config.data_seed, config.split_seed)
    if key not in cache:
        cache[key] = split(generate_dataset(config.data_seed), 0.8, config.split_seed)
    return cache[key]


def run_config(config):
    """Train one config on its dataset; used as the sweep worker."""
    spec = build_ansatz(config.layout, config.depth, config.n_qubits, encoding=config.encoding)
    return train(spec, config, _data_for(config))


def _safe_run(config):
    try:
        return run_config(config), None
    except Exception as exc:  # noqa: BLE001 - failures are recorded, not fatal
        return None, f"{type(exc).__name__}: {exc}"


def load_records(path):
    records = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                records.append(TrainRecord.from_json(json.loads(line)))
    return records


def sweep(grid, out_path=None, jobs=1):
    """Run every config of ``grid``; returns ``(records, failures)``.

    With ``out_path`` records are appended as JSON lines as they finish
    and configs already present in the file are skipped, so an
    interrupted sweep can simply be restarted.
    """
    configs = grid.configs()
    done = {}
    if out_path is not None and Path(out_path).exists():
        for rec in load_records(out_path):
            done[rec.config.config_hash()] = rec
    todo = [c for c in configs if c.config_hash() not in done]
    log.info("sweep: %d configs, %d already done", len(configs), len(configs) - len(todo))

    fresh, failures = {}, []
    sink = open(out_path, "a") if out_path is not None else None
    try:
        if jobs > 1:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                results = list(zip(todo, pool.map(_safe_run, todo)))
        else:
            results = ((c, _safe_run(c)) for c in todo)
        for config, (record, error) in results:
            if error is not None:
                log.warning("run %s failed: %s", config.config_hash(), error)
                failures.append({"config": config.to_dict(), "error": error})
                continue
            fresh[config.config_hash()] = record
            if sink is not None:
                sink.write(json.dumps(record.to_json()) + "\n")
                sink.flush()
    finally:
        if sink is not None:
            sink.close()
    if failures and out_path is not None:
        with open(str(out_path) + ".failures.jsonl", "a") as fh:
            for f in failures:
                fh.write(json.dumps(f) + "\n")
    merged = {**done, **fresh}
    return [merged[c.config_hash()] for c in configs if c.config_hash() in merged], failures


def mse_histogram(values, value_range=HIST_RANGE, n_bins=HIST_BINS):
    """Counts per equal-width bin with out-of-range values clamped to the end bins.

    Returns ``(counts, edges, n_below, n_above)``.
    """
    lo, hi = value_range
    values = np.asarray(values, dtype=float)
    width = (hi - lo) / n_bins
    idx = np.clip(np.floor((values - lo) / width).astype(int), 0, n_bins - 1)
    counts = np.bincount(idx, minlength=n_bins)
    edges = lo + width * np.arange(n_bins + 1)
    return counts, edges, int(np.sum(values < lo)), int(np.sum(values > hi))


def lowest_bin(values, value_range=HIST_RANGE, n_bins=HIST_BINS):
    """``(bin index, midpoint, occupancy)`` of the lowest occupied bin."""
    counts, edges, _, _ = mse_histogram(values, value_range, n_bins)
    i = int(np.flatnonzero(counts)[0])
    return i, 0.5 * (edges[i] + edges[i + 1]), int(counts[i])


def summarize(records, value_range=HIST_RANGE, n_bins=HIST_BINS):
    """Median, histogram and steps-to-best statistics per (layout, depth, optimizer)."""
    if not records:
        raise DomainError("no records to summarize")
    groups = {}
    for rec in records:
        c = rec.config
        groups.setdefault((c.layout, c.depth, c.optimizer), []).append(rec)
    rows = []
    for (layout, depth, opt), recs in sorted(groups.items()):
        best = np.array([r.best_test_mse for r in recs])
        _, mid, occ = lowest_bin(best, value_range, n_bins)
        _, _, below, above = mse_histogram(best, value_range, n_bins)
        rows.append(
            {
                "layout": layout,
                "optimizer": opt,
                "depth": depth,
                "median": float(np.median(best)),
                "n": len(recs),
                "lowest_bin": mid,
                "n_occ": occ,
                "mean_steps": float(np.mean([r.best_step for r in recs])),
                "n_below_range": below,
                "n_above_range": above,
            }
        )
    return rows
