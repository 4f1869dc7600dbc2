import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from repexkit.engine import (
    ConfigurationError,
    DoubleWell1D,
    EngineError,
    EngineRequest,
    LangevinEngine,
    MDSegment,
    Restraint,
    SinglePointEnergy,
    ThermoParams,
    Torsion2D,
    energy_and_gradient,
    kinetic_energy,
    params_for,
    restraint_energy,
    run_md_segment,
    single_point_energy,
    total_energy,
)
from repexkit.model import DimensionSpec, build_grid
from repexkit.validation import finite_difference_gradient

DW = DoubleWell1D()
TS = Torsion2D()


def md(system, x, T=300.0, n=1000, dt=0.01, friction=1.0, stride=100, seed=1, v=None, params=None):
    x = np.atleast_1d(np.asarray(x, dtype=float))
    v = np.zeros_like(x) if v is None else np.asarray(v, dtype=float)
    params = params or ThermoParams(T)
    return run_md_segment(system, EngineRequest(x, v, seed, params, MDSegment(n, dt, friction, stride)))


class TestTotalEnergy:
    def test_origin(self):
        assert total_energy(DW, [0.0], ThermoParams(300)) == 0.0

    def test_restraint_only(self):
        # phi = 10 deg from a centre at 0 with k = 0.02: 0.5 * 0.02 * 10^2
        p = ThermoParams(300, (Restraint(0.0, 0.02, 0),))
        base = total_energy(TS, [10.0, 0.0], ThermoParams(300))
        assert total_energy(TS, [10.0, 0.0], p) - base == pytest.approx(1.0, abs=1e-12)

    def test_lambda_zero_switches_off_potential(self):
        assert total_energy(DW, [1.7], ThermoParams(300, lam=0.0)) == 0.0
        assert total_energy(TS, [33.0, 271.0], ThermoParams(300, lam=0.0)) == 0.0

    def test_minimal_image_restraint(self):
        r = (Restraint(350.0, 0.02, 0),)
        assert restraint_energy(TS, [10.0, 0.0], r) == pytest.approx(0.5 * 0.02 * 400)

    def test_torsion_formula(self):
        phi, psi = np.deg2rad(60.0), np.deg2rad(200.0)
        expect = 3 * (1 - np.cos(phi)) + 3 * (1 - np.cos(psi)) + 1.5 * np.cos(phi + psi)
        assert total_energy(TS, [60.0, 200.0], ThermoParams(300)) == pytest.approx(expect, rel=1e-13)

    def test_term_scaling(self):
        x = [60.0, 200.0]
        full = total_energy(TS, x, ThermoParams(300))
        coupling = 1.5 * np.cos(np.deg2rad(260.0))
        half = total_energy(TS, x, ThermoParams(300, lam=0.5, term="coupling"))
        assert half == pytest.approx(full - 0.5 * coupling, rel=1e-13)

    def test_dimension_mismatch(self):
        with pytest.raises(ConfigurationError, match="invalid-config"):
            total_energy(DW, [0.0, 1.0], ThermoParams(300))

    def test_unknown_term(self):
        with pytest.raises(ConfigurationError):
            total_energy(TS, [0.0, 0.0], ThermoParams(300, term="salt"))


class TestSinglePoint:
    def test_lambda_half(self):
        assert single_point_energy(DW, [1.0], ThermoParams(300, lam=0.5)) == pytest.approx(-0.5)

    def test_foreign_umbrella(self):
        base = total_energy(TS, [0.0, 0.0], ThermoParams(300))
        foreign = ThermoParams(300, (Restraint(45.0, 0.02, 0),))
        assert single_point_energy(TS, [0.0, 0.0], foreign) == pytest.approx(base + 20.25)

    def test_own_params_match_segment_energy(self):
        params = ThermoParams(310, (Restraint(90.0, 0.02, 0),))
        res = md(TS, [80.0, 100.0], params=params, n=200)
        assert single_point_energy(TS, res.positions, params) == res.energy


class TestSegment:
    def test_zero_steps(self):
        res = md(DW, [0.3], n=0)
        assert res.positions[0] == 0.3
        assert res.energy == total_energy(DW, [0.3], ThermoParams(300))
        assert len(res.trajectory) == 1

    def test_stays_at_minimum_without_noise(self):
        x0 = DW.minimum()
        res = md(DW, x0, T=0.0, n=5000)
        assert abs(res.positions[0] - x0[0]) < 1e-9

    def test_deterministic(self):
        a = md(TS, [10.0, 20.0], n=3000, seed=42)
        b = md(TS, [10.0, 20.0], n=3000, seed=42)
        np.testing.assert_array_equal(a.trajectory, b.trajectory)
        np.testing.assert_array_equal(a.velocities, b.velocities)
        c = md(TS, [10.0, 20.0], n=3000, seed=43)
        assert not np.array_equal(a.trajectory, c.trajectory)

    def test_trajectory_length(self):
        for n, stride in [(1000, 100), (999, 100), (5, 1), (7, 3)]:
            assert len(md(DW, [0.1], n=n, stride=stride).trajectory) == n // stride + 1

    def test_angles_wrapped(self):
        res = md(TS, [359.0, 1.0], T=2000.0, n=20000, dt=0.5, stride=10)
        assert np.all((res.trajectory >= 0) & (res.trajectory < 360))

    def test_nonfinite_force_is_engine_error(self):
        with pytest.raises(EngineError):
            md(DW, [1e80], n=10)

    def test_energy_conservation_without_thermostat(self):
        x0, v0 = np.array([1.5]), np.array([0.3])
        res = md(DW, x0, v=v0, T=300.0, n=10 ** 5, dt=0.001, friction=0.0, stride=10 ** 5)
        e0 = total_energy(DW, x0, ThermoParams(300)) + kinetic_energy(DW, v0)
        e1 = res.energy + kinetic_energy(DW, res.velocities)
        assert abs(e1 - e0) / abs(e0) < 1e-3

    def test_single_point_request_via_engine(self):
        eng = LangevinEngine(DW)
        assert eng.single_point_energy(np.array([1.0]), ThermoParams(300, lam=0.5)) == pytest.approx(-0.5)
        with pytest.raises(ConfigurationError):
            run_md_segment(DW, EngineRequest(np.zeros(1), np.zeros(1), 0, ThermoParams(300),
                                             SinglePointEnergy(ThermoParams(300))))


class TestSegmentValidation:
    @pytest.mark.parametrize("kw", [dict(n_steps=-1, step_size=0.1), dict(n_steps=1, step_size=0.0),
                                    dict(n_steps=1, step_size=0.1, friction=-1),
                                    dict(n_steps=1, step_size=0.1, stride=0)])
    def test_rejects(self, kw):
        with pytest.raises(ConfigurationError):
            MDSegment(**kw)


def test_params_for_grid_cell():
    dims = [DimensionSpec.from_values("temperature", [300, 330]),
            DimensionSpec.from_values("hamiltonian_scale", [0.5, 1.0], term="phi"),
            DimensionSpec.from_values("umbrella", [0, 90, 180, 270], force_constant=0.02, coordinate=1)]
    grid = build_grid(dims, [0.0, 0.0])
    p = params_for(grid, (1, 0, 2))
    assert p.temperature == 330 and p.lam == 0.5 and p.term == "phi"
    assert p.restraints == (Restraint(180, 0.02, 1),)


@settings(max_examples=60, deadline=None)
@given(phi=st.floats(0, 359.99), psi=st.floats(0, 359.99), c0=st.floats(0, 359.99), k=st.floats(0.001, 1.0))
def test_torsion_gradient_matches_finite_difference(phi, psi, c0, k):
    x = np.array([phi, psi])
    params = ThermoParams(300, (Restraint(c0, k, 0),))
    # stay away from the minimal-image cut where the restraint is not differentiable
    if abs(abs((phi - c0 + 180) % 360 - 180) - 180) < 1e-3:
        return
    g = energy_and_gradient(TS, x, params)[1]
    fd = finite_difference_gradient(TS, x, params)
    np.testing.assert_allclose(g, fd, rtol=1e-6, atol=1e-7)
