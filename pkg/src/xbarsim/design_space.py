"""Closed-form co-design bounds for crossbar accelerators and parameter sweeps.

Given an operating point (array size, integration time, wire and device
resistance, pitch, tile count, ADC energy) this module evaluates

* the throughput ceiling ``2 MAC_total / (t_int N_share) <= 2 w_total / t_int``,
* the minimum device resistance that keeps ``N^2 r_wire / R_dev`` below a
  wiring margin (default 0.1),
* the minimum read voltage that lifts the weight range above Johnson read
  noise by a target ratio (default 10),
* the planar area floor ``4 p^2 N^2 tiles / efficiency``,
* the energy-efficiency ceiling ``2 N^2 / (V^2 t_int N^2 / R_aver + E_ADC N)``.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import itertools
import math
from dataclasses import dataclass

import yaml

from .crossbar import johnson_min_voltage

WIRE_MARGIN = 0.1
SNR_TARGET = 10.0


@dataclass(frozen=True)
class DesignPoint:
    weights_total: float = 250e6
    mac_total: float | None = None
    share_max: float | None = None
    t_int: float = 100e-9
    temperature: float = 300.0
    v_read: float | None = None
    r_wire: float = 0.1
    r_dev: float | None = None
    r_aver: float | None = None
    array_n: int = 2048
    tile_num: int = 128
    pitch: float = 200e-9
    array_efficiency: float = 1.0
    e_adc: float = 5e-12
    snr_target: float = SNR_TARGET
    wire_margin: float = WIRE_MARGIN

    def __post_init__(self):
        if self.t_int <= 0 or self.temperature <= 0:
            raise ValueError("t_int and temperature must be > 0")
        if not 0 < self.array_efficiency <= 1:
            raise ValueError("array_efficiency must be in (0, 1]")
        if self.snr_target <= 0 or self.wire_margin <= 0:
            raise ValueError("snr_target and wire_margin must be > 0")
        if self.array_n < 1:
            raise ValueError("array_n must be >= 1")
        for name in ("weights_total", "r_wire", "pitch", "e_adc", "tile_num"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        for name in ("mac_total", "share_max", "v_read", "r_dev", "r_aver"):
            value = getattr(self, name)
            if value is not None and value <= 0:
                raise ValueError(f"{name} must be > 0 when given")

    def replace(self, **changes) -> "DesignPoint":
        return dataclasses.replace(self, **changes)


def ops_per_second_bound(point: DesignPoint) -> float:
    """Throughput ceiling; the tighter MAC-based bound is used when known."""
    weight_bound = 2.0 * point.weights_total / point.t_int
    if point.mac_total is None or point.share_max is None:
        return weight_bound
    return min(2.0 * point.mac_total / (point.t_int * point.share_max), weight_bound)


def min_device_resistance(point: DesignPoint) -> float:
    return point.array_n**2 * point.r_wire / point.wire_margin


def device_resistance(point: DesignPoint) -> float:
    """R_dev of the point: the given value, else the wiring-limited minimum."""
    return point.r_dev if point.r_dev is not None else min_device_resistance(point)


def min_voltage(point: DesignPoint) -> float:
    return johnson_min_voltage(point.array_n, device_resistance(point), point.temperature,
                               point.t_int, point.snr_target)


def average_resistance(point: DesignPoint) -> float:
    """R_aver of the point; defaults to twice R_dev (mid-window differential array)."""
    return point.r_aver if point.r_aver is not None else 2.0 * device_resistance(point)


def area_lower_bound(point: DesignPoint) -> tuple[float, float]:
    """``(bound with array efficiency, efficiency-free bound)`` in square metres."""
    bare = 4.0 * point.pitch**2 * point.array_n**2 * point.tile_num
    return bare / point.array_efficiency, bare


def energy_efficiency_bound(point: DesignPoint, v: float | None = None) -> float:
    """Operations per joule ceiling for one ``N x N`` MVM.

    ``v`` overrides the operating voltage; otherwise ``point.v_read`` or the
    noise-limited :func:`min_voltage` is used.
    """
    if v is None:
        v = point.v_read if point.v_read is not None else min_voltage(point)
    n = point.array_n
    denom = v**2 / average_resistance(point) * point.t_int * n**2 + point.e_adc * n
    if math.isinf(denom):
        return 0.0
    return 2.0 * n**2 / denom


def evaluate(point: DesignPoint) -> dict:
    area, area_bare = area_lower_bound(point)
    v = point.v_read if point.v_read is not None else min_voltage(point)
    return {
        "ops_per_second": ops_per_second_bound(point),
        "min_r_dev": min_device_resistance(point),
        "r_dev": device_resistance(point),
        "min_voltage": min_voltage(point),
        "v_used": v,
        "area_m2": area,
        "area_bare_m2": area_bare,
        "ops_per_joule": energy_efficiency_bound(point, v),
    }


SWEEP_INPUTS = [f.name for f in dataclasses.fields(DesignPoint)]
SWEEP_OUTPUTS = ["ops_per_second", "min_r_dev", "r_dev", "min_voltage", "v_used", "area_m2",
                 "area_bare_m2", "ops_per_joule"]


def expand_grid(grid: dict) -> list[DesignPoint]:
    """Cartesian product of the parameter lists in ``grid``.

    Scalars are treated as one-element lists; parameters absent from the grid
    keep their :class:`DesignPoint` defaults.
    """
    if not grid:
        raise ValueError("empty grid")
    unknown = set(grid) - set(SWEEP_INPUTS)
    if unknown:
        raise ValueError(f"unknown grid parameters {sorted(unknown)}")
    names = list(grid)
    lists = [v if isinstance(v, list) else [v] for v in grid.values()]
    if any(len(v) == 0 for v in lists):
        raise ValueError("grid parameter with no values")
    return [DesignPoint(**dict(zip(names, combo))) for combo in itertools.product(*lists)]


def sweep(grid: dict) -> list[dict]:
    """One row per grid point: every input field followed by the derived bounds."""
    rows = []
    for point in expand_grid(grid):
        row = dataclasses.asdict(point)
        row.update(evaluate(point))
        rows.append(row)
    return rows


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def rows_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    header = SWEEP_INPUTS + SWEEP_OUTPUTS
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(row[k]) for k in header])
    return buf.getvalue()


def load_grid(path) -> dict:
    """Read a YAML grid file: a mapping of parameter name to value list.

    The grid may also sit under a top-level ``grid`` key.
    """
    with open(path) as fh:
        raw = yaml.safe_load(fh)
    if isinstance(raw, dict) and "grid" in raw:
        raw = raw["grid"]
    if not isinstance(raw, dict) or not raw:
        raise ValueError(f"{path}: grid file must hold a non-empty mapping")
    return raw
