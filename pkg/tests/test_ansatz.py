import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qclscape import simulator as sim
from qclscape.ansatz import CNOT, build_ansatz, encode, forward, predict
from qclscape.errors import ConfigurationError, DomainError, ShapeError

from oracles import dense_forward


class TestBuildAnsatz:
    def test_cycle_d1(self):
        spec = build_ansatz("cycle", 1)
        assert spec.param_count == 4
        assert [(op.control, op.target) for op in spec.schedule if op.kind == CNOT] == [(0, 1), (1, 2), (2, 0)]

    def test_chain_d1(self):
        spec = build_ansatz("chain", 1)
        assert spec.param_count == 4
        assert [(op.control, op.target) for op in spec.schedule if op.kind == CNOT] == [(0, 1), (1, 2)]

    @pytest.mark.parametrize("depth", [1, 2, 3, 4])
    @pytest.mark.parametrize("layout,per_block", [("cycle", 3), ("chain", 2)])
    def test_counts(self, layout, per_block, depth):
        spec = build_ansatz(layout, depth)
        assert spec.param_count == 3 * depth + 1
        assert spec.cnot_count == per_block * depth
        slots = sorted(op.param_slot for op in spec.schedule if op.param_slot is not None)
        assert slots == list(range(spec.param_count))

    def test_general_qubit_count(self):
        assert build_ansatz("cycle", 2, n_qubits=5).param_count == 11

    def test_trailing_ry_on_readout(self):
        last = build_ansatz("cycle", 2).schedule[-1]
        assert last.kind == "RY" and last.target == 1

    @pytest.mark.parametrize("args", [("ring", 1), ("cycle", 0)])
    def test_bad_config(self, args):
        with pytest.raises(ConfigurationError):
            build_ansatz(*args)

    def test_immutable(self):
        spec = build_ansatz("cycle", 1)
        with pytest.raises(Exception):
            spec.depth = 3

    def test_to_dict(self):
        d = build_ansatz("chain", 3).to_dict()
        assert {"n_qubits": 3, "depth": 3, "layout": "chain", "param_count": 10}.items() <= d.items()


class TestEncode:
    def test_zero(self):
        s = encode(0.0)
        for q in range(3):
            assert sim.expectation_z(s, q) == pytest.approx(1.0, abs=1e-12)

    @pytest.mark.parametrize("order", ["rz-ry", "ry-rz"])
    def test_one(self, order):
        s = encode(1.0, order=order)
        for q in range(3):
            assert abs(sim.expectation_z(s, q)) < 1e-12

    @pytest.mark.parametrize("x", [1.5, -1.01, np.nan])
    def test_domain(self, x):
        with pytest.raises(DomainError):
            encode(x)


class TestForward:
    def test_zero_point(self):
        for layout in ("chain", "cycle"):
            for d in (1, 3):
                assert forward(build_ansatz(layout, d), 0.0, np.zeros(3 * d + 1)) == pytest.approx(1.0, abs=1e-12)

    def test_chain_x_one(self):
        assert abs(forward(build_ansatz("chain", 1), 1.0, np.zeros(4))) < 1e-12

    @pytest.mark.parametrize("phi", [0.0, 0.3, 1.7, -2.5])
    def test_trailing_cosine(self, phi):
        assert forward(build_ansatz("cycle", 1), 0.0, [0, 0, 0, phi]) == pytest.approx(np.cos(phi), abs=1e-12)

    def test_dense_oracle_both_orders(self, rng):
        for order in ("rz-ry", "ry-rz"):
            for _ in range(30):
                layout = ("chain", "cycle")[rng.integers(2)]
                d = int(rng.integers(1, 5))
                x, theta = rng.uniform(-1, 1), rng.uniform(-np.pi, np.pi, 3 * d + 1)
                spec = build_ansatz(layout, d, encoding=order)
                assert abs(forward(spec, x, theta) - dense_forward(layout, d, x, theta, order=order)) < 1e-10

    def test_batched_matches_single(self, rng):
        spec = build_ansatz("cycle", 2)
        xs = rng.uniform(-1, 1, 6)
        thetas = rng.normal(size=(6, 7))
        out = predict(spec, xs, thetas)
        for x, t, y in zip(xs, thetas, out):
            assert y == pytest.approx(forward(spec, x, t), abs=1e-14)

    def test_shape_errors(self):
        spec = build_ansatz("cycle", 1)
        with pytest.raises(ShapeError):
            forward(spec, 0.1, np.zeros(5))
        with pytest.raises(DomainError):
            forward(spec, 0.1, [0, 0, np.inf, 0])

    @settings(max_examples=40, deadline=None)
    @given(st.floats(-1, 1), st.lists(st.floats(-6, 6), min_size=7, max_size=7), st.integers(0, 6))
    def test_periodic_and_bounded(self, x, theta, i):
        spec = build_ansatz("chain", 2)
        theta = np.array(theta)
        y = forward(spec, x, theta)
        shifted = theta.copy()
        shifted[i] += 2 * np.pi
        assert -1 <= y <= 1
        assert abs(forward(spec, x, shifted) - y) < 1e-10
