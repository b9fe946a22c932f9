import numpy as np
import pytest

from frfupdate.exceptions import OptimizerDivergenceError
from frfupdate.optim import (Bounds, PsoConfig, SaoConfig, pso_minimize,
                             sao_minimize, write_trace_csv)

BOX = Bounds(lower=np.array([-1.0, -1.0]), upper=np.array([1.0, 1.0]))
CENTER = np.array([0.3, -0.4])


def bowl(x):
    return float(((x - CENTER) ** 2).sum())


def rastrigin(x):
    return float(10 * x.size + np.sum(x**2 - 10 * np.cos(2 * np.pi * x)))


class TestBounds:
    def test_validation(self):
        with pytest.raises(ValueError):
            Bounds(lower=np.array([0.0]), upper=np.array([0.0]))

    def test_open_edge_nudge(self):
        b = Bounds(lower=np.array([0.0]), upper=np.array([10.0]),
                   lower_open=np.array([True]))
        lo, hi = b.effective()
        assert lo[0] > 0.0
        assert b.clamp(np.array([-5.0]))[0] == lo[0]


class TestSao:
    def test_quadratic_bowl(self):
        for seed in range(3):
            x, f, _ = sao_minimize(bowl, BOX, SaoConfig(), seed=seed)
            assert f < 1e-2
            assert np.linalg.norm(x - CENTER) < 0.2

    def test_temperature_schedule_geometric(self):
        cfg = SaoConfig()
        temps = cfg.temperatures()
        assert temps[0] == 100.0
        assert all(t >= 3.0 for t in temps)
        ratios = np.diff(np.log(temps))
        assert np.allclose(ratios, np.log(0.8))
        assert temps[-1] * 0.8 < 3.0  # one more stage would undershoot the target

    def test_trace_best_never_increases_and_bookkeeping(self):
        trace = []
        x, f, n = sao_minimize(bowl, BOX, SaoConfig(), seed=1, trace=trace)
        assert n == len(trace)
        values = np.array([row[1] for row in trace])
        running = np.minimum.accumulate(values)
        assert np.all(np.diff(running) <= 0)
        assert f == values.min()  # exact bookkeeping

    def test_proposals_respect_bounds(self):
        trace = []
        sao_minimize(bowl, BOX, SaoConfig(), seed=2, trace=trace)
        xs = np.array([row[2:4] for row in trace])
        assert np.all(xs >= BOX.lower) and np.all(xs <= BOX.upper)

    def test_determinism(self):
        t1, t2 = [], []
        r1 = sao_minimize(bowl, BOX, SaoConfig(), seed=9, trace=t1)
        r2 = sao_minimize(bowl, BOX, SaoConfig(), seed=9, trace=t2)
        assert np.array_equal(r1[0], r2[0]) and r1[1] == r2[1]
        assert t1 == t2

    def test_divergence_error(self):
        center = 0.5 * (BOX.lower + BOX.upper)

        def nasty(x):
            return 0.0 if np.array_equal(x, center) else float("nan")

        with pytest.raises(OptimizerDivergenceError):
            sao_minimize(nasty, BOX, SaoConfig(), seed=0)

    def test_nonfinite_initial_point_rejected(self):
        with pytest.raises(ValueError):
            sao_minimize(lambda x: float("inf"), BOX, SaoConfig(), seed=0)


class TestPso:
    def test_quadratic_bowl(self):
        for seed in range(3):
            x, f, n = pso_minimize(bowl, BOX, PsoConfig(), seed=seed)
            assert f < 1e-4
            assert n == 10_000

    def test_positions_respect_bounds(self):
        trace = []
        pso_minimize(bowl, BOX, PsoConfig(max_evaluations=2000), seed=3, trace=trace)
        xs = np.array([row[2:4] for row in trace])
        assert np.all(xs >= BOX.lower) and np.all(xs <= BOX.upper)

    def test_result_beats_initial_swarm(self):
        trace = []
        _, f, _ = pso_minimize(bowl, BOX, PsoConfig(max_evaluations=1000), seed=4,
                               trace=trace)
        initial = [row[1] for row in trace if row[-1] == 0]
        assert f <= min(initial)

    def test_exact_bookkeeping(self):
        trace = []
        _, f, n = pso_minimize(bowl, BOX, PsoConfig(max_evaluations=1500), seed=5,
                               trace=trace)
        assert n == len(trace) == 1500
        assert f == min(row[1] for row in trace)

    def test_determinism(self):
        t1, t2 = [], []
        r1 = pso_minimize(bowl, BOX, PsoConfig(max_evaluations=800), seed=6, trace=t1)
        r2 = pso_minimize(bowl, BOX, PsoConfig(max_evaluations=800), seed=6, trace=t2)
        assert np.array_equal(r1[0], r2[0]) and r1[1] == r2[1]
        assert t1 == t2

    def test_divergence_error(self):
        with pytest.raises(OptimizerDivergenceError):
            pso_minimize(lambda x: float("nan"), BOX, PsoConfig(max_evaluations=500),
                         seed=0)


class TestMultimodal:
    def test_rastrigin_table_budgets(self):
        rb = Bounds(lower=np.array([-5.12, -5.12]), upper=np.array([5.12, 5.12]))
        sao_hits = sum(sao_minimize(rastrigin, rb, SaoConfig(), seed=s)[1] < 1.0
                       for s in range(5))
        pso_hits = sum(pso_minimize(rastrigin, rb, PsoConfig(), seed=s)[1] < 1.0
                       for s in range(5))
        assert sao_hits >= 4
        assert pso_hits >= 4


class TestTraceCsv:
    def test_sao_trace_csv(self, tmp_path):
        trace = []
        sao_minimize(bowl, BOX, SaoConfig(iterations_per_temperature=5), seed=0,
                     trace=trace)
        path = tmp_path / "trace.csv"
        write_trace_csv(trace, path, dim=2, kind="sao")
        lines = path.read_text().splitlines()
        assert lines[0] == "evaluation_index,objective,x_1,x_2,accepted,temperature"
        assert len(lines) == len(trace) + 1

    def test_pso_trace_csv(self, tmp_path):
        trace = []
        pso_minimize(bowl, BOX, PsoConfig(swarm_size=5, max_evaluations=20), seed=0,
                     trace=trace)
        path = tmp_path / "trace.csv"
        write_trace_csv(trace, path, dim=2, kind="pso")
        assert path.read_text().splitlines()[0] == "evaluation_index,objective,x_1,x_2,generation"
