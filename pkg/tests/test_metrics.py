import pytest
from hypothesis import given
from hypothesis import strategies as st

from repexkit.metrics import (
    CycleTiming,
    MetricsError,
    cycle_time,
    mean_cycle_time,
    strong_efficiency,
    utilization,
    utilization_from_trace,
    weak_efficiency,
)

pos = st.floats(1e-3, 1e6)


class TestCycleTime:
    def test_zero(self):
        assert cycle_time(CycleTiming(0, 0, 0, 0, 0)) == 0

    def test_example(self):
        assert cycle_time(CycleTiming(139.6, 5, 6.3, 2, 10)) == pytest.approx(162.9, abs=1e-12)

    def test_md_only(self):
        assert cycle_time(CycleTiming(100, 0, 0, 0, 0)) == 100

    def test_negative(self):
        with pytest.raises(MetricsError, match="invalid-timing"):
            CycleTiming(1, -0.1, 0, 0, 0)

    @given(st.lists(st.floats(0, 1e4), min_size=5, max_size=5), st.permutations(range(5)))
    def test_permutation_invariant(self, parts, perm):
        a = cycle_time(CycleTiming(*parts))
        b = cycle_time(CycleTiming(*[parts[k] for k in perm]))
        assert a == pytest.approx(b, rel=1e-12, abs=1e-9)

    def test_mean(self):
        rows = [CycleTiming(10, 1, 0, 0, 1), CycleTiming(20, 1, 0, 0, 1)]
        assert mean_cycle_time(rows) == 17


class TestEfficiency:
    def test_weak_examples(self):
        assert weak_efficiency(139.6, 155.1) == pytest.approx(90.0064474532559, rel=1e-12)
        assert round(weak_efficiency(139.6, 155.1), 2) == 90.01
        assert weak_efficiency(100, 200) == 50

    def test_strong_examples(self):
        assert strong_efficiency(1000, 520, 2) == pytest.approx(96.1538461538462, rel=1e-12)
        assert strong_efficiency(1000, 1000, 2) == 50

    @given(pos)
    def test_identity(self, t):
        assert weak_efficiency(t, t) == 100
        assert strong_efficiency(t, t, 1) == 100

    @pytest.mark.parametrize("args", [(0, 1), (1, 0), (-1, 1)])
    def test_weak_invalid(self, args):
        with pytest.raises(MetricsError):
            weak_efficiency(*args)

    def test_strong_invalid_n(self):
        with pytest.raises(MetricsError):
            strong_efficiency(1, 1, 0.5)


class TestUtilization:
    def test_full(self):
        assert utilization({"md_busy": 400, "total_cores": 4, "makespan": 100}) == 100

    def test_example(self):
        assert utilization({"md_busy": 360, "total_cores": 4, "makespan": 100}) == 90

    def test_zero_span(self):
        with pytest.raises(MetricsError):
            utilization({"md_busy": 0, "total_cores": 4, "makespan": 0})

    def test_from_trace(self):
        events = [
            {"t": 0.0, "event": "start", "kind": "md", "cores": 1},
            {"t": 0.0, "event": "start", "kind": "md", "cores": 1},
            {"t": 10.0, "event": "end", "kind": "md", "cores": 1, "work": 10.0},
            {"t": 5.0, "event": "fail", "kind": "md", "cores": 1, "work": 5.0},
            {"t": 10.0, "event": "end", "kind": "exchange", "cores": 1, "work": 2.0},
        ]
        assert utilization_from_trace(events, 2) == 50
