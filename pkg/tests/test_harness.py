import json
import math

import numpy as np
import pytest

from qclscape.ansatz import build_ansatz, predict
from qclscape.errors import ConfigurationError, DomainError
from qclscape.gradloss import Batch
from qclscape.harness import (
    GLOROT_SIGMA,
    DataSplit,
    SweepGrid,
    TrainConfig,
    TrainRecord,
    generate_dataset,
    init_params,
    load_records,
    lowest_bin,
    mse_histogram,
    split,
    summarize,
    sweep,
    train,
)


def fake_record(mse, layout="cycle", depth=1, optimizer="adam", best_step=10, theta=None):
    theta = np.zeros(4) if theta is None else np.asarray(theta, dtype=float)
    return TrainRecord(
        config=TrainConfig(layout=layout, depth=depth, optimizer=optimizer),
        theta_init=theta.copy(), theta_final=theta.copy(), train_loss=np.zeros(2),
        test_mse=np.array([mse, mse]), best_test_mse=mse, best_step=best_step, duration_s=0.0,
    )


class TestDataset:
    def test_grid(self):
        ds = generate_dataset(3)
        assert len(ds) == 500 and ds.xs[0] == -1.0 and ds.xs[-1] == 1.0

    def test_noiseless(self):
        ds = generate_dataset(0, noise=0.0)
        np.testing.assert_array_equal(ds.ys, ds.xs**2)

    def test_deterministic(self):
        a, b = generate_dataset(7), generate_dataset(7)
        np.testing.assert_array_equal(a.ys, b.ys)
        assert not np.array_equal(a.ys, generate_dataset(8).ys)

    def test_noise_bounded(self):
        ds = generate_dataset(1)
        assert np.all(np.abs(ds.ys - ds.xs**2) <= 0.1)

    @pytest.mark.parametrize("ratio,sizes", [(0.8, (400, 100)), (0.5, (250, 250))])
    def test_split_sizes(self, ratio, sizes):
        s = split(generate_dataset(0), ratio, 0)
        assert (len(s.train), len(s.test)) == sizes
        assert not set(s.train_idx) & set(s.test_idx)

    def test_split_deterministic(self):
        a, b = split(generate_dataset(0), 0.8, 5), split(generate_dataset(0), 0.8, 5)
        np.testing.assert_array_equal(a.train_idx, b.train_idx)

    @pytest.mark.parametrize("ratio", [0.0, 1.0, 0.001])
    def test_degenerate_split(self, ratio):
        with pytest.raises(ConfigurationError):
            split(generate_dataset(0), ratio, 0)


class TestInit:
    def test_gaussian_sigma(self):
        s = init_params("normal:0", 100_000, np.random.default_rng(0))
        assert abs(s.std() - 0.5774) < 0.01 and GLOROT_SIGMA == pytest.approx(0.57735, abs=1e-5)

    def test_gaussian_mean(self):
        assert abs(init_params("normal:pi/2", 100_000, np.random.default_rng(1)).mean() - np.pi / 2) < 0.01

    def test_uniform_range(self):
        s = init_params("uniform", 100_000, np.random.default_rng(2))
        assert s.min() >= 0 and s.max() < 2 * np.pi

    def test_bad_scheme(self):
        with pytest.raises(ConfigurationError):
            init_params("laplace:0", 3, 0)


class TestTrain:
    def test_zero_gradient_landscape(self):
        spec = build_ansatz("cycle", 1)
        theta = np.array([0.2, 1.0, -0.4, 0.9])
        xs = np.linspace(-1, 1, 20)
        batch = Batch(xs, predict(spec, xs, theta))
        data = DataSplit(batch, batch, np.arange(20), np.arange(20))
        rec = train(spec, TrainConfig(steps=20), data, theta_init=theta)
        np.testing.assert_array_equal(rec.theta_final, theta)

    def test_adam_reaches_low_mse(self, data, d1_cycle):
        rec = train(d1_cycle, TrainConfig(optimizer="adam", batch_size=8, init="normal:pi/2"), data)
        assert rec.best_test_mse <= 0.02
        assert len(rec.train_loss) == len(rec.test_mse) == 301
        assert rec.best_test_mse == np.nanmin(rec.test_mse) <= rec.test_mse[-1]

    def test_deterministic(self, small_data, d1_cycle):
        cfg = TrainConfig(optimizer="qng", steps=15, batch_size=4)
        a, b = train(d1_cycle, cfg, small_data), train(d1_cycle, cfg, small_data)
        np.testing.assert_array_equal(a.theta_final, b.theta_final)
        np.testing.assert_array_equal(a.test_mse, b.test_mse)

    def test_stride_leaves_nan(self, small_data, d1_cycle):
        rec = train(d1_cycle, TrainConfig(steps=10, eval_stride=4), small_data)
        assert np.isnan(rec.test_mse[1]) and not np.isnan(rec.test_mse[4]) and not np.isnan(rec.test_mse[10])

    def test_json_round_trip(self, small_data, d1_cycle):
        rec = train(d1_cycle, TrainConfig(steps=5, eval_stride=2), small_data)
        obj = json.loads(json.dumps(rec.to_json()))
        assert list(obj) == ["config", "theta_init", "theta_final", "train_loss", "test_mse",
                             "best_test_mse", "best_step", "seed", "duration_s"]
        back = TrainRecord.from_json(obj)
        np.testing.assert_array_equal(back.theta_final, rec.theta_final)
        assert back.config == rec.config and back.best_test_mse == rec.best_test_mse
        assert obj["config"]["circuit"]["param_count"] == 4


class TestSweep:
    def test_full_grid_size(self):
        grid = SweepGrid()
        configs = grid.configs()
        assert len(configs) == 24 * 36
        groups = {(c.layout, c.depth, c.optimizer) for c in configs}
        assert len(groups) == 24

    def test_empty_axis(self):
        with pytest.raises(ConfigurationError):
            SweepGrid(layouts=()).configs()

    def test_unknown_key(self):
        with pytest.raises(ConfigurationError):
            SweepGrid.from_dict({"depths": [1], "learning_rate": 0.1})

    def test_resume_without_duplicates(self, tmp_path):
        grid = SweepGrid(layouts=("chain",), depths=(1,), optimizers=("sgd",), inits=("normal:0",),
                         batch_sizes=(1, 2, 4), base={"steps": 3})
        out = tmp_path / "r.jsonl"
        first, _ = sweep(SweepGrid(**{**grid.__dict__, "batch_sizes": (1,)}), out)
        records, failures = sweep(grid, out)
        hashes = [r.config.config_hash() for r in load_records(out)]
        assert len(first) == 1 and len(records) == 3 and not failures
        assert len(hashes) == len(set(hashes)) == 3

    def test_parallel_matches_serial(self):
        grid = SweepGrid(layouts=("cycle",), depths=(1,), optimizers=("adam",), inits=("uniform",),
                         batch_sizes=(2, 4), base={"steps": 4})
        serial, _ = sweep(grid)
        parallel, _ = sweep(grid, jobs=2)
        for a, b in zip(serial, parallel):
            np.testing.assert_array_equal(a.theta_final, b.theta_final)


class TestStatistics:
    def test_bin_width_and_midpoint(self):
        counts, edges, below, above = mse_histogram([0.008, 0.0116, 0.5, 0.001])
        assert edges[1] - edges[0] == pytest.approx(0.00306)
        assert counts[0] == 2 and counts[1] == 1 and counts[-1] == 1 and (below, above) == (1, 1)
        assert lowest_bin([0.008])[1] == pytest.approx(0.00853)

    def test_single_record_bin(self):
        i, mid, occ = lowest_bin([0.0116])
        assert (i, occ) == (1, 1) and abs(mid - 0.0116) <= 0.00306 / 2 and mid == pytest.approx(0.01159)

    def test_summarize(self):
        recs = [fake_record(v, best_step=s) for v, s in [(0.01, 10), (0.03, 20), (0.02, 30)]]
        recs.append(fake_record(0.05, optimizer="sgd"))
        rows = summarize(recs)
        adam = next(r for r in rows if r["optimizer"] == "adam")
        sgd = next(r for r in rows if r["optimizer"] == "sgd")
        assert adam["median"] == 0.02 and adam["n"] == 3 and adam["mean_steps"] == 20
        assert adam["n_occ"] == 1 and sgd["median"] == 0.05

    def test_empty(self):
        with pytest.raises(DomainError):
            summarize([])


def test_noiseless_predictor_bound():
    vals = []
    for s in range(20):
        d = split(generate_dataset(s), 0.8, s)
        vals.append(np.mean((d.test.ys - d.test.xs**2) ** 2))
    assert 0.0025 <= np.mean(vals) <= 0.0042 and math.isclose(np.mean(vals), 1 / 300, rel_tol=0.15)
