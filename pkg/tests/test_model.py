import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from repexkit.model import (
    DimensionKind,
    DimensionSpec,
    ModelError,
    ReplicaState,
    ReplicaStatus,
    angle_diff,
    beta,
    build_grid,
    build_ladder,
    mix_seed,
    wrap_angle,
)


def temp_dim(n, lo=273.0, hi=373.0):
    return DimensionSpec.from_values("temperature", build_ladder("temperature", lo, hi, n, "geometric"))


class TestLadder:
    def test_single_window(self):
        assert build_ladder("temperature", 273, 373, 1, "geometric") == [273]

    def test_geometric_six(self):
        v = build_ladder("temperature", 273, 373, 6, "geometric")
        assert len(v) == 6
        assert v[0] == 273 and v[-1] == 373
        ratios = np.array(v[1:]) / np.array(v[:-1])
        np.testing.assert_allclose(ratios, (373 / 273) ** (1 / 5), rtol=1e-13)
        # oracle values (30-digit arithmetic)
        np.testing.assert_allclose(v, [273.0, 290.584124647770959, 309.300855301506556, 329.223143921593957,
                                       350.428641356203283, 373.0], rtol=1e-14)

    def test_periodic_umbrella(self):
        assert build_ladder("umbrella", 0, 360, 8, "uniform") == [0, 45, 90, 135, 180, 225, 270, 315]

    def test_uniform_includes_endpoints(self):
        assert build_ladder("hamiltonian_scale", 0.0, 1.0, 5, "uniform") == pytest.approx([0, .25, .5, .75, 1])

    @pytest.mark.parametrize("args, msg", [
        (("temperature", 273, 373, 0, "geometric"), "invalid-count"),
        (("temperature", 0, 373, 4, "geometric"), "invalid-range"),
        (("temperature", 400, 373, 4, "geometric"), "invalid-range"),
    ])
    def test_errors(self, args, msg):
        with pytest.raises(ModelError, match=msg):
            build_ladder(*args)

    @given(lo=st.floats(1.0, 1e3), span=st.floats(1.0, 1e3), n=st.integers(2, 40))
    def test_geometric_is_log_uniform(self, lo, span, n):
        v = np.log(build_ladder("temperature", lo, lo + span, n, "geometric"))
        d = np.diff(v)
        np.testing.assert_allclose(d, d[0], rtol=1e-9, atol=1e-12)


class TestDimensionSpec:
    def test_rejects_negative_temperature(self):
        with pytest.raises(ModelError):
            DimensionSpec.from_values("temperature", [-10, 300])

    def test_rejects_non_monotone(self):
        with pytest.raises(ModelError):
            DimensionSpec.from_values("temperature", [300, 280, 320])

    def test_rejects_lambda_out_of_range(self):
        with pytest.raises(ModelError):
            DimensionSpec.from_values("hamiltonian_scale", [0.5, 1.5])

    def test_kind_flags(self):
        assert DimensionKind.HAMILTONIAN_SCALE.needs_energy_tasks
        assert not DimensionKind.UMBRELLA.needs_energy_tasks


class TestGrid:
    def test_384_replica_grid(self):
        dims = [temp_dim(6), DimensionSpec.from_values("umbrella", build_ladder("umbrella", 0, 360, 8)),
                DimensionSpec.from_values("umbrella", build_ladder("umbrella", 0, 360, 8), coordinate=1)]
        assert len(build_grid(dims, [0.0, 0.0])) == 384

    def test_single_replica(self):
        g = build_grid([temp_dim(1)], [0.0])
        assert len(g) == 1 and g.replicas[0].coords == (0,)

    def test_row_major_ids(self):
        g = build_grid([temp_dim(2), temp_dim(3)], [0.0])
        assert [r.coords for r in g.replicas] == list(itertools.product(range(2), range(3)))

    def test_empty_dimensions(self):
        with pytest.raises(ModelError, match="invalid-config"):
            build_grid([], [0.0])

    def test_seeds_deterministic_and_distinct(self):
        a = build_grid([temp_dim(4), temp_dim(4)], [0.0], seed=7)
        b = build_grid([temp_dim(4), temp_dim(4)], [0.0], seed=7)
        assert [r.seed for r in a.replicas] == [r.seed for r in b.replicas]
        assert len({r.seed for r in a.replicas}) == 16
        assert a.replicas[3].seed == mix_seed(7, 3)

    def test_exhaustive_product_up_to_5(self):
        for shape in itertools.product(range(1, 6), repeat=3):
            g = build_grid([temp_dim(n) for n in shape], [0.0])
            assert len(g) == math.prod(shape)
            assert sorted(r.coords for r in g.replicas) == list(itertools.product(*(range(n) for n in shape)))

    def test_active_excludes_failed(self):
        g = build_grid([temp_dim(4)], [0.0])
        g[2].status = ReplicaStatus.FAILED
        assert [r.replica_id for r in g.active()] == [0, 1, 3]


class TestAngles:
    @pytest.mark.parametrize("x, expect", [(0, 0), (360, 0), (-45, 315), (725, 5)])
    def test_wrap(self, x, expect):
        assert wrap_angle(x) == pytest.approx(expect)

    def test_wrap_rejects_nan(self):
        with pytest.raises(ModelError):
            wrap_angle(float("nan"))

    def test_angle_diff(self):
        assert angle_diff(10, 350) == pytest.approx(20)
        assert angle_diff(350, 10) == pytest.approx(-20)
        assert angle_diff(180, 0) == pytest.approx(-180)

    @given(st.floats(-1e6, 1e6), st.integers(-50, 50))
    def test_wrap_idempotent_and_periodic(self, x, k):
        w = wrap_angle(x)
        assert 0 <= w < 360
        assert wrap_angle(w) == w
        assert wrap_angle(x + 360 * k) == pytest.approx(w, abs=1e-6)


def test_beta_value():
    assert beta(300) == pytest.approx(1.67739857890456915, rel=1e-14)


def test_replica_state_roundtrip():
    r = ReplicaState(3, (1, 2), np.array([0.1, 359.9]), np.array([1e-3, -2.5]), 2 ** 63 + 5, 4,
                     ReplicaStatus.AWAITING_EXCHANGE)
    back = ReplicaState.from_dict(r.to_dict())
    assert back.coords == r.coords and back.seed == r.seed and back.status == r.status
    np.testing.assert_array_equal(back.positions, r.positions)
    np.testing.assert_array_equal(back.velocities, r.velocities)


@settings(max_examples=50)
@given(st.integers(0, 2 ** 64 - 1), st.integers(0, 10 ** 6))
def test_mix_seed_is_u64(seed, rid):
    s = mix_seed(seed, rid)
    assert 0 <= s < 2 ** 64
