import numpy as np
import pytest
from hypothesis import given, strategies as st

from velomat.core import (
    ConfigError,
    ForceMap,
    MatGeometry,
    RawFrame,
    VelostatModel,
    body_pressure_estimate,
    geometry_from_mapping,
    load_geometry,
    load_model,
    parse_kv_text,
    pressure_units_convert,
)

UNITS = ["kgf/cm2", "psi", "kPa"]


class TestPressureUnits:
    def test_paper_lying_figure(self):
        assert pressure_units_convert(0.0157, "kgf/cm2", "psi") == pytest.approx(0.223, abs=0.01)

    def test_zero_is_zero_everywhere(self):
        for a in UNITS:
            for b in UNITS:
                assert pressure_units_convert(0.0, a, b) == 0.0

    def test_kgf_to_kpa_definition(self):
        assert pressure_units_convert(1.0, "kgf/cm2", "kPa") == pytest.approx(98.0665)

    def test_unknown_unit_rejected(self):
        with pytest.raises(ConfigError):
            pressure_units_convert(1.0, "bar", "psi")

    @given(
        st.floats(min_value=1e-6, max_value=1e6),
        st.sampled_from(UNITS),
        st.sampled_from(UNITS),
    )
    def test_round_trip(self, value, a, b):
        back = pressure_units_convert(pressure_units_convert(value, a, b), b, a)
        assert back == pytest.approx(value, rel=1e-9)


class TestBodyPressure:
    def test_lying_flat(self):
        assert body_pressure_estimate(80, 170 * 30) == pytest.approx(0.22, abs=0.01)

    def test_standing(self):
        assert body_pressure_estimate(80, 350) == pytest.approx(3.13, abs=0.15)

    def test_unit_definition(self):
        assert body_pressure_estimate(1, 1) == pytest.approx(14.2233)

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            body_pressure_estimate(0, 100)
        with pytest.raises(ValueError):
            body_pressure_estimate(80, -1)

    @given(st.floats(min_value=1, max_value=500), st.floats(min_value=10, max_value=1e5))
    def test_homogeneous(self, mass, area):
        base = body_pressure_estimate(mass, area)
        assert body_pressure_estimate(2 * mass, area) == pytest.approx(2 * base, rel=1e-12)
        assert body_pressure_estimate(mass, 2 * area) == pytest.approx(base / 2, rel=1e-12)


class TestGeometry:
    def test_defaults(self):
        g = MatGeometry(16, 16)
        assert g.adc_max == 1023
        assert g.cell_area_cm2 == pytest.approx(1.0)

    def test_ceiling(self):
        MatGeometry(128, 68)
        with pytest.raises(ConfigError):
            MatGeometry(129, 68)

    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(rows=0, cols=4),
            dict(rows=4, cols=4, r_fixed=0),
            dict(rows=4, cols=4, v_in=-1),
            dict(rows=4, cols=4, adc_bits=17),
            dict(rows=4, cols=4, frame_rate=0),
        ],
    )
    def test_invalid(self, kwargs):
        with pytest.raises(ConfigError):
            MatGeometry(**kwargs)


class TestModelAndGrids:
    def test_model_invariants(self):
        with pytest.raises(ConfigError):
            VelostatModel(rho_k=-1)
        with pytest.raises(ConfigError):
            VelostatModel(r_min=100, r_max=100)

    def test_force_map_validation(self):
        g = MatGeometry(2, 2)
        with pytest.raises(ValueError):
            ForceMap(g, np.zeros((3, 2)))
        with pytest.raises(ValueError):
            ForceMap(g, np.array([[0.0, -1.0], [0.0, 0.0]]))

    def test_raw_frame_range(self):
        with pytest.raises(ValueError):
            RawFrame(0, 0, np.array([[70000]]))
        frame = RawFrame(3, 120, np.array([[1, 2], [3, 4]]))
        assert frame.rows == 2 and frame.cols == 2

    def test_frames_immutable(self):
        frame = RawFrame(0, 0, np.zeros((2, 2), dtype=int))
        with pytest.raises(ValueError):
            frame.counts[0, 0] = 1


class TestConfigFiles:
    def test_parse_kv(self):
        kv = parse_kv_text("a = 1\n# comment\nb = two  # trailing\n\n")
        assert kv == {"a": "1", "b": "two"}
        with pytest.raises(ConfigError):
            parse_kv_text("no equals sign")

    def test_load_geometry_and_model(self, tmp_path):
        p = tmp_path / "geom.cfg"
        p.write_text("rows = 8\ncols = 4\nadc_bits = 12\n")
        g = load_geometry(p)
        assert (g.rows, g.cols, g.adc_bits) == (8, 4, 12)
        q = tmp_path / "model.cfg"
        q.write_text("rho_k = 1500\nr_max = 30000\n")
        m = load_model(q)
        assert m.rho_k == 1500 and m.r_max == 30000

    def test_geometry_needs_dims(self):
        with pytest.raises(ConfigError):
            geometry_from_mapping({"rows": "4"})
