import json

import pytest

from repexkit.config import ConfigError, config_from_dict, dump_config, parse_config
from repexkit.engine import DoubleWell1D, Torsion2D
from repexkit.pilot import resources as res
from repexkit.pilot.patterns import FifoN, TimeWindow


def minimal(**over):
    cfg = {"system": {"type": "DoubleWell1D"},
           "dimensions": [{"kind": "temperature", "ladder": [300, 330]}],
           "cycles": 3}
    cfg.update(over)
    return cfg


def error_path(data):
    with pytest.raises(ConfigError) as info:
        config_from_dict(data)
    return info.value.path


class TestDefaults:
    def test_minimal_resolves(self):
        c = config_from_dict(minimal())
        assert c.replica_count == 2
        assert c.pilot.cores == 2
        assert c.pattern.type == "sync"
        assert c.steps_per_cycle == 1000 and c.stride == 100
        assert c.pilot.backend.type == "real"

    def test_ladder_from_bounds(self):
        c = config_from_dict(minimal(dimensions=[{"kind": "temperature", "lo": 273, "hi": 373, "n": 6}]))
        assert c.dimensions[0].progression == "geometric"
        assert c.dimensions[0].ladder[0] == 273 and c.dimensions[0].ladder[-1] == 373

    def test_grid_6x8x8(self):
        c = config_from_dict(minimal(system={"type": "Torsion2D"}, dimensions=[
            {"kind": "temperature", "lo": 273, "hi": 373, "n": 6},
            {"kind": "hamiltonian_scale", "lo": 0.3, "hi": 1.0, "n": 8},
            {"kind": "umbrella", "lo": 0, "hi": 360, "n": 8, "coordinate": 1},
        ]))
        assert c.replica_count == 384
        assert len(c.build_grid()) == 384
        assert c.dimensions[2].ladder == [0, 45, 90, 135, 180, 225, 270, 315]


class TestErrors:
    def test_negative_temperature_in_ladder(self):
        assert error_path(minimal(dimensions=[{"kind": "temperature", "ladder": [-10, 300]}])) \
            == "dimensions[0].ladder"

    def test_negative_lower_bound(self):
        assert error_path(minimal(dimensions=[{"kind": "temperature", "lo": -5, "hi": 300, "n": 3}])) \
            == "dimensions[0].lo"

    def test_unknown_kind(self):
        assert error_path(minimal(dimensions=[{"kind": "pressure", "ladder": [1, 2]}])) == "dimensions[0].kind"

    def test_missing_cycles(self):
        data = minimal()
        del data["cycles"]
        with pytest.raises(ConfigError, match="cycles: missing required key"):
            config_from_dict(data)

    def test_umbrella_coordinate_out_of_range(self):
        assert error_path(minimal(dimensions=[{"kind": "umbrella", "ladder": [0, 1], "coordinate": 1}])) \
            == "dimensions[0].coordinate"

    def test_two_scale_dimensions(self):
        d = {"kind": "hamiltonian_scale", "ladder": [0.5, 1.0]}
        assert error_path(minimal(dimensions=[d, d])) == "dimensions"

    def test_unknown_key(self):
        assert error_path(minimal(cylces=3)) == "cylces"

    def test_lognormal_needs_one_parameter(self):
        data = minimal(pilot={"durations": {"md": {"type": "lognormal", "sigma": 0.5}}})
        assert error_path(data).startswith("pilot.durations.md")

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            parse_config(tmp_path / "nope.json")

    def test_bad_json(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text("{not json")
        with pytest.raises(ConfigError, match="not valid JSON"):
            parse_config(p)


class TestRoundTrip:
    def test_dump_and_reload(self, tmp_path):
        data = minimal(pattern={"type": "async", "criterion": {"type": "fifo", "n": 2}},
                       pilot={"backend": {"type": "virtual"},
                              "durations": {"md": {"type": "lognormal", "mean": 10, "sigma": 0.75}}})
        c = config_from_dict(data)
        p = tmp_path / "resolved.json"
        dump_config(c, p)
        back = parse_config(p)
        assert back == c
        md = json.loads(p.read_text())["pilot"]["durations"]["md"]
        assert md["mean"] is None and md["mu"] == pytest.approx(2.302585092994046 - 0.28125)


class TestBuild:
    def test_domain_objects(self):
        c = config_from_dict(minimal(
            pattern={"type": "async", "criterion": {"type": "window", "seconds": 5}},
            pilot={"cores": 4, "backend": {"type": "virtual"}},
            faults={"p": 0.1, "recovery": {"type": "relaunch", "max_retries": 2}}))
        assert isinstance(c.build_system(), DoubleWell1D)
        assert isinstance(c.build_criterion(), TimeWindow)
        pilot = c.build_pilot()
        assert pilot.total_cores == 4 and isinstance(pilot.backend, res.VirtualClock)
        faults = c.build_faults()
        assert faults.p == 0.1 and isinstance(faults.recovery, res.Relaunch)
        assert c.build_segment().n_steps == 1000

    def test_torsion_and_fifo(self):
        c = config_from_dict(minimal(system={"type": "Torsion2D"},
                                     pattern={"type": "async", "criterion": {"type": "fifo", "n": 1}}))
        assert isinstance(c.build_system(), Torsion2D)
        assert isinstance(c.build_criterion(), FifoN)
        assert c.build_grid()[0].positions.shape == (2,)


def test_unstable_step_for_restraint():
    data = minimal(system={"type": "Torsion2D"}, step_size=0.5,
                   dimensions=[{"kind": "umbrella", "lo": 0, "hi": 360, "n": 8, "force_constant": 0.02}])
    with pytest.raises(ConfigError, match="unstable") as info:
        config_from_dict(data)
    assert info.value.path == "step_size"
    data["step_size"] = 0.1
    assert config_from_dict(data).step_size == 0.1
