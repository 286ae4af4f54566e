"""Electrical model of one crossbar tile.

Rows are driven with voltages, columns are held at virtual ground and their
charge is integrated for ``t_int`` seconds before conversion.  Column ``j``
carries ``I_j = sum_i G_ij V_i`` in the ideal case; :func:`mvm_nonideal` adds
wire resistance, device read noise and Johnson noise on top.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
import yaml

from . import devices
from .devices import ConductanceState, DeviceParams, DeviceWornError

K_B = 1.380649e-23  # J/K
_VOLTAGE_SLACK = 1e-12


class CrossbarError(Exception):
    pass


class SolverError(CrossbarError):
    """The nodal IR-drop solve failed (singular or non-finite network)."""


@dataclass(frozen=True)
class CrossbarConfig:
    rows: int
    cols: int
    r_wire: float = 0.0
    v_read: float = 0.2
    t_int: float = 100e-9
    temperature: float = 300.0
    adc_bits: int = 8
    adc_energy_per_sample: float = 5e-12
    adc_share: int = 1

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError("rows and cols must be >= 1")
        if self.r_wire < 0:
            raise ValueError("r_wire must be >= 0")
        if self.t_int <= 0:
            raise ValueError("t_int must be > 0")
        if self.v_read <= 0:
            raise ValueError("v_read must be > 0")
        if self.adc_bits < 1:
            raise ValueError("adc_bits must be >= 1")
        if self.adc_share < 1 or self.cols % self.adc_share:
            raise ValueError(f"adc_share={self.adc_share} must be >= 1 and divide cols={self.cols}")

    def replace(self, **changes) -> "CrossbarConfig":
        return dataclasses.replace(self, **changes)


@dataclass
class Accounting:
    """Running energy/latency ledger for MVMs, conversions and writes.

    Every MVM appends one record, so totals can be checked against the sum of
    the per-operation entries.
    """

    mvm_count: int = 0
    array_energy: float = 0.0
    adc_energy: float = 0.0
    adc_conversions: int = 0
    saturations: int = 0
    latency_slots: int = 0
    write_pulses: int = 0
    write_energy: float = 0.0
    records: list = field(default_factory=list)

    @property
    def total_energy(self) -> float:
        return self.array_energy + self.adc_energy

    def log_array(self, energy: float, count: int = 1):
        self.mvm_count += count
        self.array_energy += energy
        self.records.append(("array", count, energy))

    def log_adc(self, conversions: int, energy: float, slots: int, saturated: int):
        self.adc_conversions += conversions
        self.adc_energy += energy
        self.latency_slots += slots
        self.saturations += saturated
        self.records.append(("adc", conversions, energy))

    def log_writes(self, pulses: int, energy: float):
        self.write_pulses += pulses
        self.write_energy += energy

    def merge(self, other: "Accounting"):
        for name in ("mvm_count", "array_energy", "adc_energy", "adc_conversions",
                     "saturations", "latency_slots", "write_pulses", "write_energy"):
            setattr(self, name, getattr(self, name) + getattr(other, name))
        self.records.extend(other.records)

    def as_dict(self) -> dict:
        return {
            "mvm_count": self.mvm_count,
            "array_energy": self.array_energy,
            "adc_energy": self.adc_energy,
            "total_energy": self.total_energy,
            "adc_conversions": self.adc_conversions,
            "saturations": self.saturations,
            "latency_slots": self.latency_slots,
            "write_pulses": self.write_pulses,
            "write_energy": self.write_energy,
        }


@dataclass
class CrossbarState:
    """Conductance grid of one tile plus its electrical configuration.

    ``g`` holds programmed conductances, ``age`` the seconds since each cell
    was last written, ``pulses`` the per-cell write counts and ``scale`` the
    device-to-device multiplier on the programming step, drawn once.
    """

    config: CrossbarConfig
    device: DeviceParams
    g: np.ndarray
    age: np.ndarray
    pulses: np.ndarray
    scale: np.ndarray

    def __post_init__(self):
        shape = (self.config.rows, self.config.cols)
        for name in ("g", "age", "pulses", "scale"):
            arr = getattr(self, name)
            if arr.shape != shape:
                raise ValueError(f"{name} has shape {arr.shape}, expected {shape}")

    @classmethod
    def fresh(cls, config: CrossbarConfig, device: DeviceParams,
              rng: np.random.Generator | None = None, g_init=None) -> "CrossbarState":
        """New tile with every cell at ``g_init`` (default ``g_min``).

        Device-to-device spread is sampled from ``rng`` when the device has
        a non-zero ``spatial_rel_sigma``.
        """
        shape = (config.rows, config.cols)
        if g_init is None:
            g_init = device.g_min
        g = np.clip(np.broadcast_to(np.asarray(g_init, dtype=float), shape).copy(),
                    device.g_min, device.g_max)
        if device.spatial_rel_sigma > 0:
            if rng is None:
                raise ValueError("rng required for devices with spatial variation")
            scale = devices.lognormal_factor(rng, device.spatial_rel_sigma, shape)
        else:
            scale = np.ones(shape)
        return cls(config, device, g, np.zeros(shape), np.zeros(shape, dtype=np.int64), scale)

    @property
    def shape(self) -> tuple[int, int]:
        return self.g.shape

    def copy(self) -> "CrossbarState":
        return CrossbarState(self.config, self.device, self.g.copy(), self.age.copy(),
                             self.pulses.copy(), self.scale.copy())

    def transposed(self) -> "CrossbarState":
        """Copy of the tile read in the other direction (columns driven, rows sensed)."""
        cfg = self.config.replace(rows=self.config.cols, cols=self.config.rows, adc_share=1)
        return CrossbarState(cfg, self.device, self.g.T.copy(), self.age.T.copy(),
                             self.pulses.T.copy(), self.scale.T.copy())

    def cell(self, i: int, j: int) -> ConductanceState:
        return ConductanceState(float(self.g[i, j]), int(self.pulses[i, j]), float(self.age[i, j]))

    def effective_g(self) -> np.ndarray:
        """Conductances as seen by a read right now (drift applied, no noise)."""
        return devices.drifted_array(self.g, self.age, self.device)

    def advance_time(self, seconds: float):
        if seconds < 0:
            raise ValueError("seconds must be >= 0")
        self.age += seconds

    def _check_endurance(self, mask):
        dev = self.device
        if dev.enforce_endurance and np.any(self.pulses[mask] >= dev.endurance):
            raise DeviceWornError(f"{dev.name}: endurance of {dev.endurance} pulses exhausted")

    def pulse(self, direction, rng: np.random.Generator | None = None) -> int:
        """One programming pulse per cell where ``direction`` is non-zero.

        Returns the number of pulses applied.
        """
        direction = np.broadcast_to(np.asarray(direction, dtype=np.int8), self.shape)
        mask = direction != 0
        n = int(mask.sum())
        if n == 0:
            return 0
        self._check_endurance(mask)
        g0 = self.effective_g()[mask]
        self.g[mask] = devices.pulse_array(g0, self.device, direction[mask], rng, self.scale[mask])
        self.age[mask] = 0.0
        self.pulses[mask] += 1
        return n

    def step_towards(self, requested, mask, rng: np.random.Generator | None = None) -> int:
        """Write pulses whose requested conductance change is ``requested``.

        Used by closed-loop programming: the controller asks for the full
        error, the device delivers it times its spatial multiplier and the
        cycle-to-cycle programming noise.
        """
        mask = np.asarray(mask, dtype=bool)
        n = int(mask.sum())
        if n == 0:
            return 0
        self._check_endurance(mask)
        req = np.asarray(requested, dtype=float)[mask]
        if self.device.response_kind is devices.ResponseKind.ONE_SIDED and np.any(req < 0):
            raise devices.UnsupportedUpdateError(f"{self.device.name}: one-sided device")
        delta = req * self.scale[mask]
        if self.device.dg_rel_sigma > 0:
            delta = delta * devices.lognormal_factor(rng, self.device.dg_rel_sigma, n)
        g0 = self.effective_g()[mask]
        self.g[mask] = np.clip(g0 + delta, self.device.g_min, self.device.g_max)
        self.age[mask] = 0.0
        self.pulses[mask] += 1
        return n

    def reset(self, mask=None) -> int:
        """Full RESET to ``g_min`` (the only depression of one-sided devices)."""
        mask = np.ones(self.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
        n = int(mask.sum())
        if n:
            self._check_endurance(mask)
            self.g[mask] = self.device.g_min
            self.age[mask] = 0.0
            self.pulses[mask] += 1
        return n


# ---------------------------------------------------------------------------
# MVM


def _check_inputs(state: CrossbarState, v_in, length: int) -> np.ndarray:
    v = np.asarray(v_in, dtype=float)
    if v.ndim not in (1, 2) or v.shape[-1] != length:
        raise ValueError(f"input has shape {v.shape}, expected (..., {length})")
    if not np.all(np.isfinite(v)):
        raise ValueError("input contains non-finite values")
    if np.any(np.abs(v) > state.config.v_read * (1 + _VOLTAGE_SLACK)):
        raise ValueError(f"input magnitude exceeds v_read={state.config.v_read}")
    return v


def _log_array_energy(accounting, v, g, t_int):
    if accounting is None:
        return
    v2 = np.atleast_2d(v) ** 2
    energy = float(np.sum(v2 @ g)) * t_int
    accounting.log_array(energy, count=v2.shape[0])


def mvm_ideal(state: CrossbarState, v_in, accounting: Accounting | None = None) -> np.ndarray:
    """Column currents ``I_j = sum_i G_ij V_i`` for row voltages ``v_in``.

    Accepts a single vector of length ``rows`` or a batch of shape
    ``(batch, rows)``.
    """
    v = _check_inputs(state, v_in, state.config.rows)
    g = state.effective_g()
    _log_array_energy(accounting, v, g, state.config.t_int)
    return v @ g


def mvm_transpose_ideal(state: CrossbarState, v_cols,
                        accounting: Accounting | None = None) -> np.ndarray:
    """Row currents when the columns are driven and the rows sensed."""
    v = _check_inputs(state, v_cols, state.config.cols)
    g = state.effective_g()
    _log_array_energy(accounting, v, g.T, state.config.t_int)
    return v @ g.T


def _nodal_system(g: np.ndarray, r_wire: float):
    """Sparse conductance matrix of the wired array and the driver coupling.

    Unknowns are the row-wire node voltages followed by the column-wire node
    voltages, one of each per cell.  Rows are driven at column 0 through one
    wire segment; columns are sensed below the last row through one segment
    into virtual ground.
    """
    m, n = g.shape
    gw = 1.0 / r_wire
    mn = m * n
    row_id = np.arange(mn).reshape(m, n)
    col_id = row_id + mn

    ii, jj, vv = [], [], []

    def link(a, b, cond):
        cond = np.broadcast_to(cond, np.shape(a)).ravel()
        a = np.ravel(a)
        b = np.ravel(b)
        ii.extend((a, b, a, b))
        jj.extend((a, b, b, a))
        vv.extend((cond, cond, -cond, -cond))

    def ground(a, cond):
        a = np.ravel(a)
        ii.append(a)
        jj.append(a)
        vv.append(np.broadcast_to(cond, a.shape).astype(float).ravel())

    link(row_id[:, :-1], row_id[:, 1:], gw)
    link(col_id[:-1, :], col_id[1:, :], gw)
    link(row_id, col_id, g)
    ground(row_id[:, 0], gw)  # driver; its source term goes to the rhs
    ground(col_id[-1, :], gw)  # sense amplifier at virtual ground

    A = sp.csc_matrix((np.concatenate(vv), (np.concatenate(ii), np.concatenate(jj))),
                      shape=(2 * mn, 2 * mn))
    return A, row_id[:, 0], col_id[-1, :], gw


def solve_ir_drop_exact(g: np.ndarray, r_wire: float, v: np.ndarray) -> np.ndarray:
    """Column currents of the resistive ladder network by a full nodal solve.

    ``v`` may be one vector or a batch; the factorization is shared.
    """
    v2 = np.atleast_2d(np.asarray(v, dtype=float))
    if r_wire == 0:
        out = v2 @ g
        return out if np.ndim(v) == 2 else out[0]
    A, drive_nodes, sense_nodes, gw = _nodal_system(g, r_wire)
    rhs = np.zeros((A.shape[0], v2.shape[0]))
    rhs[drive_nodes, :] = gw * v2.T
    try:
        lu = spla.splu(A)
        x = lu.solve(rhs)
    except RuntimeError as exc:
        raise SolverError(
            f"nodal solve failed for {g.shape[0]}x{g.shape[1]} array, r_wire={r_wire}: {exc}"
        ) from exc
    if not np.all(np.isfinite(x)):
        raise SolverError(
            f"nodal solve produced non-finite voltages; g range [{g.min()}, {g.max()}], "
            f"r_wire={r_wire}"
        )
    out = (gw * x[sense_nodes, :]).T
    return out if np.ndim(v) == 2 else out[0]


def solve_ir_drop_approx(g: np.ndarray, r_wire: float, v: np.ndarray,
                         n_iter: int = 2) -> np.ndarray:
    """Column currents with a cumulative-current path correction.

    Starting from the ideal cell currents, each pass computes the voltage lost
    along every row wire and gained along every column wire from cumulative
    sums of the currents each wire segment carries, then re-evaluates the cell
    currents with the corrected device voltages.
    """
    v2 = np.atleast_2d(np.asarray(v, dtype=float))
    vin = v2[:, :, None]  # (batch, rows, 1)
    v_dev = np.broadcast_to(vin, (v2.shape[0],) + g.shape)
    for _ in range(n_iter + 1):
        cell = g * v_dev
        if r_wire == 0:
            break
        # current through row segment k feeds cells k..n-1
        row_seg = np.flip(np.cumsum(np.flip(cell, axis=2), axis=2), axis=2)
        v_row = vin - r_wire * np.cumsum(row_seg, axis=2)
        # current through column segment below row i collects rows 0..i
        col_seg = np.cumsum(cell, axis=1)
        v_col = r_wire * np.flip(np.cumsum(np.flip(col_seg, axis=1), axis=1), axis=1)
        v_dev = v_row - v_col
    out = cell.sum(axis=1)
    return out if np.ndim(v) == 2 else out[0]


def johnson_current_sigma(g_col_sum, temperature: float, t_int: float):
    """Integrated Johnson noise of a column, expressed as a current.

    Each device contributes charge variance ``k_B T t_int G``; contributions
    add in quadrature along the column.
    """
    return np.sqrt(K_B * temperature * t_int * np.asarray(g_col_sum)) / t_int


def mvm_nonideal(state: CrossbarState, v_in, rng_seed=None, *, solver: str = "exact",
                 thermal_noise: bool = True, read_noise: bool = True, n_iter: int = 2,
                 accounting: Accounting | None = None) -> np.ndarray:
    """Column currents including IR drop, device read noise and Johnson noise.

    Signed inputs are applied in two phases (positive and negative halves)
    whose results are subtracted, so the devices only see one polarity.
    ``solver`` is ``"exact"`` (sparse nodal solve) or ``"approx"``.
    """
    if solver not in ("exact", "approx"):
        raise ValueError(f"unknown solver {solver!r}")
    v = _check_inputs(state, v_in, state.config.rows)
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    cfg = state.config
    if read_noise:
        g = devices.read_array(state.g, state.age, state.device, rng)
    else:
        g = state.effective_g()
    solve = solve_ir_drop_exact if solver == "exact" else (
        lambda g_, r_, v_: solve_ir_drop_approx(g_, r_, v_, n_iter))
    v2 = np.atleast_2d(v)
    out = np.zeros((v2.shape[0], cfg.cols))
    for sign, half in ((1.0, np.maximum(v2, 0.0)), (-1.0, np.maximum(-v2, 0.0))):
        active = np.any(half != 0, axis=1)
        if not np.any(active):
            continue
        cur = solve(g, cfg.r_wire, half[active])
        if thermal_noise:
            sigma = johnson_current_sigma(g.sum(axis=0), cfg.temperature, cfg.t_int)
            cur = cur + sigma * rng.standard_normal(cur.shape)
        out[active] += sign * cur
        _log_array_energy(accounting, half[active], g, cfg.t_int)
    return out if v.ndim == 2 else out[0]


# ---------------------------------------------------------------------------
# conversion and bounds


def full_scale_charge(state: CrossbarState) -> float:
    """Worst-case column charge: every device at g_max, every row at v_read."""
    cfg = state.config
    return cfg.rows * state.device.g_max * cfg.v_read * cfg.t_int


def adc_quantize(i_out, state: CrossbarState, *, lsb: float | None = None, offset=0.0,
                 accounting: Accounting | None = None) -> np.ndarray:
    """Convert column currents to ADC codes.

    By default the charge ``I * t_int`` is mapped linearly onto
    ``2**adc_bits`` levels spanning ``[0, full_scale_charge]``.  A calibrated
    range can be given as an ``lsb`` charge and a per-sample ``offset`` charge
    subtracted before conversion.  Out-of-range samples saturate and are
    counted in ``accounting``.
    """
    cfg = state.config
    top = 2**cfg.adc_bits - 1
    q = np.asarray(i_out, dtype=float) * cfg.t_int - offset
    if lsb is None:
        lsb = full_scale_charge(state) / top
    raw = np.floor(q / lsb + 0.5)
    codes = np.clip(raw, 0, top).astype(np.int64)
    if accounting is not None:
        n_vectors = 1 if codes.ndim <= 1 else codes.shape[0]
        accounting.log_adc(
            conversions=int(codes.size),
            energy=codes.size * cfg.adc_energy_per_sample,
            slots=n_vectors * cfg.adc_share,
            saturated=int(np.count_nonzero((raw > top) | (raw < 0))),
        )
    return codes


def required_adc_bits(rows: int, input_bits: int, weight_bits: int) -> int:
    """ADC resolution ``log2(M) + I + W - 2`` needed for exact column sums.

    Non-power-of-two row counts are rounded up to the next power of two.
    """
    if rows < 1 or input_bits < 1 or weight_bits < 1:
        raise ValueError("rows, input_bits and weight_bits must be >= 1")
    return math.ceil(math.log2(rows)) + input_bits + weight_bits - 2


def johnson_min_voltage(n: int, r_dev: float, temperature: float, t_int: float,
                        snr_target: float = 10.0) -> float:
    """Smallest read voltage whose weight range clears the read noise by ``snr_target``."""
    if snr_target <= 0:
        raise ValueError("snr_target must be > 0")
    return snr_target * math.sqrt(n * r_dev * K_B * temperature / t_int)


def min_read_voltage(state: CrossbarState, snr_target: float = 10.0) -> float:
    cfg = state.config
    return johnson_min_voltage(cfg.rows, state.device.r_on, cfg.temperature, cfg.t_int,
                               snr_target)


# ---------------------------------------------------------------------------
# persistence

_SNAPSHOT_MAGIC = "xbarsim-snapshot 1"
_HEADER_END = b"\n--- end header ---\n"


def save_snapshot(state: CrossbarState, path, seed: int | None = None):
    """Write a tile as a YAML text header followed by raw little-endian arrays.

    The binary part holds ``g``, ``age`` and ``scale`` as float64 and
    ``pulses`` as int64, each in row-major order.
    """
    header = {
        "format": _SNAPSHOT_MAGIC,
        "rows": state.config.rows,
        "cols": state.config.cols,
        "device_preset": state.device.name,
        "seed": seed,
        "config": dataclasses.asdict(state.config),
        "device": yaml.safe_load(devices.dump_params(state.device))[state.device.name],
    }
    with open(path, "wb") as fh:
        fh.write(yaml.safe_dump(header, sort_keys=True).encode())
        fh.write(_HEADER_END)
        for arr in (state.g, state.age, state.scale):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(state.pulses, dtype="<i8").tobytes())


def load_snapshot(path) -> tuple[CrossbarState, dict]:
    """Read a tile written by :func:`save_snapshot`; returns ``(state, header)``."""
    blob = Path(path).read_bytes()
    cut = blob.find(_HEADER_END)
    if cut < 0:
        raise ValueError(f"{path}: missing snapshot header")
    header = yaml.safe_load(blob[:cut].decode())
    if header.get("format") != _SNAPSHOT_MAGIC:
        raise ValueError(f"{path}: not a crossbar snapshot")
    config = CrossbarConfig(**header["config"])
    device = devices._params_from_mapping(header["device_preset"], header["device"])
    m, n = header["rows"], header["cols"]
    body = blob[cut + len(_HEADER_END):]
    size = m * n * 8
    if len(body) != 4 * size:
        raise ValueError(f"{path}: expected {4 * size} data bytes, found {len(body)}")
    parts = [np.frombuffer(body[k * size:(k + 1) * size], dtype="<f8").reshape(m, n).copy()
             for k in range(3)]
    pulses = np.frombuffer(body[3 * size:], dtype="<i8").reshape(m, n).copy()
    state = CrossbarState(config, device, parts[0], parts[1], pulses, parts[2])
    return state, header


def write_vector_csv(values, path, header: str = "value"):
    """One value per line; floats use ``repr`` so files round-trip exactly."""
    values = np.asarray(values)
    with open(path, "w") as fh:
        fh.write(f"index,{header}\n")
        for k, val in enumerate(values.ravel()):
            val = int(val) if np.issubdtype(values.dtype, np.integer) else repr(float(val))
            fh.write(f"{k},{val}\n")
