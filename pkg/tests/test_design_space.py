import csv
import io
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from xbarsim import design_space as ds
from xbarsim.design_space import DesignPoint

K_B = 1.380649e-23


def test_ops_bound_weights():
    assert ds.ops_per_second_bound(DesignPoint(weights_total=250e6, t_int=100e-9)) == 5e15


def test_ops_bound_zero_weights():
    assert ds.ops_per_second_bound(DesignPoint(weights_total=0)) == 0


def test_ops_bound_tight_when_share_one():
    p = DesignPoint(weights_total=1e6, mac_total=1e6, share_max=1)
    assert ds.ops_per_second_bound(p) == 2 * 1e6 / 100e-9


def test_ops_bound_takes_minimum():
    p = DesignPoint(weights_total=1e6, mac_total=1e6, share_max=4)
    assert ds.ops_per_second_bound(p) == pytest.approx(2e6 / (100e-9 * 4))


def test_min_device_resistance():
    assert ds.min_device_resistance(DesignPoint(array_n=2048, r_wire=0.1)) == pytest.approx(
        2048**2 * 0.1 / 0.1)
    assert ds.min_device_resistance(DesignPoint(array_n=1, r_wire=0.1)) == pytest.approx(1.0)


@given(st.integers(1, 4096))
def test_min_device_resistance_quadratic(n):
    a = ds.min_device_resistance(DesignPoint(array_n=n))
    b = ds.min_device_resistance(DesignPoint(array_n=2 * n))
    assert b == pytest.approx(4 * a, rel=1e-12)


def test_min_voltage_formula():
    p = DesignPoint(array_n=2048, r_dev=5e6, temperature=300, t_int=100e-9)
    expected = 10 * math.sqrt(2048 * 5e6 * K_B * 300 / 100e-9)
    assert ds.min_voltage(p) == pytest.approx(expected, rel=1e-12)


def test_min_voltage_uses_wiring_limited_resistance_by_default():
    p = DesignPoint(array_n=64, r_wire=0.1)
    assert ds.device_resistance(p) == ds.min_device_resistance(p)


def test_area_reference_value():
    area, bare = ds.area_lower_bound(DesignPoint(pitch=200e-9, array_n=2048, tile_num=128))
    assert area == pytest.approx(4 * (2e-7) ** 2 * 2048**2 * 128, rel=1e-12)
    assert area * 1e6 == pytest.approx(85.9, abs=0.05)
    assert area == bare


def test_area_efficiency_and_scaling():
    p = DesignPoint(tile_num=64, array_efficiency=0.5)
    area, bare = ds.area_lower_bound(p)
    assert area == pytest.approx(2 * bare)
    assert ds.area_lower_bound(p.replace(tile_num=0)) == (0.0, 0.0)
    assert ds.area_lower_bound(p.replace(pitch=p.pitch / 2))[0] == pytest.approx(area / 4)


def test_energy_formula():
    p = DesignPoint(array_n=1024, r_dev=1e6, e_adc=5e-12)
    v = 0.1
    r_aver = 2e6
    expected = 2 * 1024**2 / (v**2 / r_aver * 100e-9 * 1024**2 + 5e-12 * 1024)
    assert ds.energy_efficiency_bound(p, v) == pytest.approx(expected, rel=1e-12)


def test_energy_infinite_adc():
    assert ds.energy_efficiency_bound(DesignPoint(e_adc=math.inf)) == 0.0


def test_energy_array_term_halves_when_tint_doubles():
    p = DesignPoint(array_n=512, r_dev=1e6, e_adc=0.0)
    a = ds.energy_efficiency_bound(p, 0.2)
    b = ds.energy_efficiency_bound(p.replace(t_int=2 * p.t_int), 0.2)
    assert b == pytest.approx(a / 2, rel=1e-12)


@given(st.floats(1e-13, 1e-10), st.floats(1.01, 10))
def test_energy_monotone_in_eadc(e, k):
    p = DesignPoint(r_dev=5e6)
    assert ds.energy_efficiency_bound(p.replace(e_adc=e * k)) < ds.energy_efficiency_bound(
        p.replace(e_adc=e))


@given(st.floats(0.01, 1.0), st.floats(1.01, 5))
def test_energy_monotone_in_voltage(v, k):
    p = DesignPoint(r_dev=5e6)
    assert ds.energy_efficiency_bound(p, v * k) < ds.energy_efficiency_bound(p, v)


@pytest.mark.parametrize("kw", [dict(t_int=0), dict(array_efficiency=1.5), dict(snr_target=0),
                                dict(r_dev=-1.0), dict(array_n=0)])
def test_point_invariants(kw):
    with pytest.raises(ValueError):
        DesignPoint(**kw)


def test_reference_point_cross_consistency():
    for tiles in (64, 128):
        p = DesignPoint(array_n=2048, r_wire=0.1, t_int=100e-9, weights_total=250e6,
                        tile_num=tiles)
        assert 4e6 <= ds.min_device_resistance(p) <= 5.5e6
        assert ds.ops_per_second_bound(p) == 5e15
        assert 0.15 <= ds.min_voltage(p) <= 0.30


# -- sweeps -----------------------------------------------------------------------------

def test_single_point_grid():
    rows = ds.sweep({"array_n": 1024})
    assert len(rows) == 1 and rows[0]["array_n"] == 1024


def test_empty_grid_rejected():
    with pytest.raises(ValueError):
        ds.sweep({})
    with pytest.raises(ValueError):
        ds.sweep({"array_n": []})


def test_unknown_parameter_rejected():
    with pytest.raises(ValueError):
        ds.sweep({"flux_capacitor": [1]})


def test_defaults_fill_absent_fields():
    row = ds.sweep({"tile_num": 8})[0]
    assert row["t_int"] == DesignPoint().t_int and row["e_adc"] == DesignPoint().e_adc


def test_reference_grid_trends():
    rows = ds.sweep({"tile_num": [64, 128], "array_n": [512, 1024, 2048], "t_int": 100e-9,
                     "r_wire": 0.1})
    assert len(rows) == 6
    for tiles in (64, 128):
        sub = sorted((r for r in rows if r["tile_num"] == tiles), key=lambda r: r["array_n"])
        for key in ("min_r_dev", "min_voltage", "area_m2", "ops_per_joule"):
            vals = [r[key] for r in sub]
            assert vals == sorted(vals) and len(set(vals)) == 3, key
    a64 = [r["area_m2"] for r in rows if r["tile_num"] == 64]
    a128 = [r["area_m2"] for r in rows if r["tile_num"] == 128]
    np.testing.assert_allclose(a128, 2 * np.array(a64))


def test_csv_layout():
    text = ds.rows_to_csv(ds.sweep({"array_n": [16, 32]}))
    table = list(csv.DictReader(io.StringIO(text)))
    assert len(table) == 2
    assert set(ds.SWEEP_OUTPUTS) <= set(table[0])
    assert table[0]["mac_total"] == ""


def test_load_grid(tmp_path):
    (tmp_path / "g.yaml").write_text("grid:\n  array_n: [8, 16]\n")
    assert ds.load_grid(tmp_path / "g.yaml") == {"array_n": [8, 16]}
    (tmp_path / "e.yaml").write_text("{}\n")
    with pytest.raises(ValueError):
        ds.load_grid(tmp_path / "e.yaml")
