"""Conductance response, noise and drift models for NVM cross-point devices.

Every device is described by a frozen :class:`DeviceParams`.  Single-cell
operations work on :class:`ConductanceState` values and return new values;
the ``*_array`` helpers are the vectorized forms used by whole crossbars.

The stored conductance of a cell is its value at programming time.  Drift is
applied lazily from the cell's ``age`` whenever the cell is read, so advancing
time never touches ``g`` itself.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
import yaml

SECONDS_PER_MONTH = 365.25 / 12 * 86400.0
DRIFT_T0 = 1.0  # reference time of the power-law drift model, seconds


class ResponseKind(str, Enum):
    LINEAR_SYMMETRIC = "linear_symmetric"
    NONLINEAR_SYMMETRIC = "nonlinear_symmetric"
    ASYMMETRIC_SOFT_BOUNDS = "asymmetric_soft_bounds"
    ONE_SIDED = "one_sided"


class DriftKind(str, Enum):
    NONE = "none"
    POWER_LAW = "power_law"
    LINEAR_RATE = "linear_rate"


class DeviceError(Exception):
    """Base class for device-level failures."""


class DeviceWornError(DeviceError):
    """Raised when a pulse is requested on a cell past its endurance."""


class UnsupportedUpdateError(DeviceError):
    """Raised when a device cannot realize the requested conductance change."""


class _Everywhere:
    """Marker returned by :func:`symmetry_point` for symmetric devices."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "EVERYWHERE"


EVERYWHERE = _Everywhere()


@dataclass(frozen=True)
class DeviceParams:
    """Static parameters of one NVM technology.

    Conductances are in siemens, energies in joules, times in seconds.
    ``bits_per_cell == 0`` denotes a continuous (analog) device.
    """

    name: str
    g_min: float
    g_max: float
    bits_per_cell: int = 0
    response_kind: ResponseKind = ResponseKind.LINEAR_SYMMETRIC
    alpha_up: float = 0.0
    alpha_down: float = 0.0
    dg_mean: float = 0.0
    dg_rel_sigma: float = 0.0
    spatial_rel_sigma: float = 0.0
    read_rel_sigma: float = 0.0
    drift_kind: DriftKind = DriftKind.NONE
    drift_nu: float = 0.0
    drift_rate: float = 0.0
    write_energy: float = 0.0
    write_latency: float = 0.0
    endurance: int = 10**18
    enforce_endurance: bool = True
    metadata: dict = field(default_factory=dict, compare=False, hash=False)

    def __post_init__(self):
        object.__setattr__(self, "response_kind", ResponseKind(self.response_kind))
        object.__setattr__(self, "drift_kind", DriftKind(self.drift_kind))
        if not 0.0 <= self.g_min < self.g_max:
            raise ValueError(f"need 0 <= g_min < g_max, got {self.g_min}, {self.g_max}")
        for name in ("dg_rel_sigma", "spatial_rel_sigma", "read_rel_sigma",
                     "drift_nu", "drift_rate", "alpha_up", "alpha_down", "dg_mean"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.bits_per_cell < 0:
            raise ValueError("bits_per_cell must be >= 0")
        if self.endurance < 1:
            raise ValueError("endurance must be >= 1")

    @property
    def window(self) -> float:
        return self.g_max - self.g_min

    @property
    def r_on(self) -> float:
        """On-resistance 1/g_max (the R_dev of the co-design bounds)."""
        return 1.0 / self.g_max

    @property
    def on_off_ratio(self) -> float:
        return math.inf if self.g_min == 0 else self.g_max / self.g_min

    @property
    def is_symmetric(self) -> bool:
        return self.response_kind in (ResponseKind.LINEAR_SYMMETRIC,
                                      ResponseKind.NONLINEAR_SYMMETRIC)

    def replace(self, **changes) -> "DeviceParams":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class ConductanceState:
    """One cell: programmed conductance, pulse count, seconds since programming."""

    g: float
    pulses_seen: int = 0
    age: float = 0.0


# ---------------------------------------------------------------------------
# response curves


def nominal_increment(g, params: DeviceParams, direction: int):
    """Zero-noise magnitude of the conductance change of one pulse at ``g``.

    ``direction`` is +1 (potentiation) or -1 (depression).  Works elementwise
    on arrays.
    """
    g = np.asarray(g, dtype=float)
    kind = params.response_kind
    if kind is ResponseKind.LINEAR_SYMMETRIC:
        return np.full_like(g, params.dg_mean)
    if kind is ResponseKind.NONLINEAR_SYMMETRIC:
        # |dG| peaks mid-window and falls off towards both bounds, identically
        # for both directions; alpha_up sets the fall-off in [0, 1)
        u = (g - params.g_min) / params.window
        return params.dg_mean * (1.0 - params.alpha_up * np.abs(2.0 * u - 1.0))
    if kind is ResponseKind.ASYMMETRIC_SOFT_BOUNDS:
        if direction > 0:
            return params.alpha_up * (params.g_max - g)
        return params.alpha_down * (g - params.g_min)
    # one-sided: only potentiation is incremental
    if direction > 0:
        return np.full_like(g, params.dg_mean)
    return np.zeros_like(g)


def lognormal_factor(rng: np.random.Generator, rel_sigma: float, size=None):
    """Mean-one lognormal multipliers with relative standard deviation ``rel_sigma``."""
    if rel_sigma == 0:
        return np.ones(size) if size is not None else 1.0
    s2 = math.log1p(rel_sigma**2)
    return np.exp(rng.normal(-0.5 * s2, math.sqrt(s2), size=size))


def pulse_array(g, params: DeviceParams, direction, rng: np.random.Generator | None = None,
                scale=1.0):
    """Apply one pulse to every element of ``g``.

    ``direction`` is an int or an array of {-1, 0, +1}; zero entries are left
    untouched.  ``scale`` is the per-device spatial multiplier on the step.
    Endurance bookkeeping is the caller's job.
    """
    g = np.asarray(g, dtype=float)
    direction = np.broadcast_to(np.asarray(direction), g.shape)
    if params.response_kind is ResponseKind.ONE_SIDED and np.any(direction < 0):
        raise UnsupportedUpdateError(
            f"{params.name}: one-sided device cannot be depressed incrementally; use reset"
        )
    up = nominal_increment(g, params, +1)
    down = nominal_increment(g, params, -1)
    step = np.where(direction > 0, up, np.where(direction < 0, -down, 0.0))
    if params.dg_rel_sigma > 0:
        if rng is None:
            raise ValueError("rng required for noisy devices")
        step = step * lognormal_factor(rng, params.dg_rel_sigma, g.shape)
    return np.clip(g + step * scale, params.g_min, params.g_max)


def drift_factor(age, params: DeviceParams):
    """Multiplicative conductance change after ``age`` seconds since programming."""
    age = np.asarray(age, dtype=float)
    if params.drift_kind is DriftKind.POWER_LAW:
        t = np.maximum(age, DRIFT_T0)
        return (t / DRIFT_T0) ** (-params.drift_nu)
    if params.drift_kind is DriftKind.LINEAR_RATE:
        return 1.0 - params.drift_rate * age
    return np.ones_like(age)


def drifted_array(g, age, params: DeviceParams):
    """Conductance seen at read time, drift applied and clamped to the window."""
    g = np.asarray(g, dtype=float) * drift_factor(age, params)
    return np.clip(g, params.g_min, params.g_max)


def read_array(g, age, params: DeviceParams, rng: np.random.Generator | None):
    """Drifted conductance with Gaussian temporal read noise."""
    g = drifted_array(g, age, params)
    if params.read_rel_sigma > 0:
        if rng is None:
            raise ValueError("rng required for noisy reads")
        g = g * (1.0 + params.read_rel_sigma * rng.standard_normal(g.shape))
        g = np.clip(g, params.g_min, params.g_max)
    return g


# ---------------------------------------------------------------------------
# single-cell operations


def apply_pulse(state: ConductanceState, params: DeviceParams, direction: str,
                rng_seed: int) -> ConductanceState:
    """Apply one potentiation (``"up"``) or depression (``"down"``) pulse."""
    if direction not in ("up", "down"):
        raise ValueError(f"direction must be 'up' or 'down', got {direction!r}")
    if params.enforce_endurance and state.pulses_seen >= params.endurance:
        raise DeviceWornError(
            f"{params.name}: endurance of {params.endurance} pulses exhausted"
        )
    rng = np.random.default_rng(rng_seed)
    sign = 1 if direction == "up" else -1
    # programming starts from the drifted value and restarts the drift clock
    g = float(pulse_array(drifted_conductance(state, params), params, sign, rng))
    return ConductanceState(g=g, pulses_seen=state.pulses_seen + 1, age=0.0)


def reset_to_min(state: ConductanceState, params: DeviceParams) -> ConductanceState:
    """Full RESET: the only depression available to one-sided devices."""
    if params.enforce_endurance and state.pulses_seen >= params.endurance:
        raise DeviceWornError(f"{params.name}: endurance exhausted")
    return ConductanceState(g=params.g_min, pulses_seen=state.pulses_seen + 1, age=0.0)


def symmetry_point(params: DeviceParams):
    """Conductance where the zero-noise up and down step magnitudes are equal.

    Returns :data:`EVERYWHERE` for symmetric devices and ``None`` for
    one-sided devices, which have no such point.
    """
    kind = params.response_kind
    if params.is_symmetric:
        return EVERYWHERE
    if kind is ResponseKind.ONE_SIDED:
        return None
    a, b = params.alpha_up, params.alpha_down
    if a + b == 0:
        return None
    return (a * params.g_max + b * params.g_min) / (a + b)


def symmetry_increment(params: DeviceParams) -> float:
    """|dG| at the symmetry point (the step that sets the effective resolution)."""
    g_sym = symmetry_point(params)
    if g_sym is None:
        raise UnsupportedUpdateError(f"{params.name}: no symmetry point")
    if g_sym is EVERYWHERE:
        g_sym = 0.5 * (params.g_min + params.g_max)
    return float(nominal_increment(g_sym, params, +1))


def programming_steps(params: DeviceParams) -> int:
    """Effective number of programming steps, ``2 (G_max - G_min) / dG``.

    For asymmetric devices dG is the increment at the symmetry point; for
    nonlinear symmetric devices the mean increment ``dg_mean`` is used.
    """
    if params.response_kind is ResponseKind.ONE_SIDED:
        raise UnsupportedUpdateError(f"{params.name}: one-sided devices are unsuitable for training")
    if params.window == 0:
        return 0
    if params.response_kind is ResponseKind.ASYMMETRIC_SOFT_BOUNDS:
        if params.alpha_up <= 0 or params.alpha_down <= 0:
            raise ValueError("asymmetric devices need alpha_up, alpha_down > 0")
        dg = symmetry_increment(params)
    else:
        if params.dg_mean <= 0:
            raise ValueError("dg_mean must be > 0")
        dg = params.dg_mean
    return int(round(2.0 * params.window / dg))


def apply_drift(state: ConductanceState, params: DeviceParams,
                elapsed: float) -> ConductanceState:
    """Advance the cell's age by ``elapsed`` seconds.

    The effect on the conductance shows up through :func:`drifted_conductance`.
    """
    if elapsed < 0:
        raise ValueError("elapsed must be >= 0")
    return dataclasses.replace(state, age=state.age + elapsed)


def drifted_conductance(state: ConductanceState, params: DeviceParams) -> float:
    return float(drifted_array(state.g, state.age, params))


def read_conductance(state: ConductanceState, params: DeviceParams, rng_seed: int) -> float:
    """Noisy read of one cell (drift included), deterministic per seed."""
    return float(read_array(state.g, state.age, params, np.random.default_rng(rng_seed)))


# ---------------------------------------------------------------------------
# presets

_PRESET_FILE = Path(__file__).with_name("data") / "presets.yaml"


def _params_from_mapping(name: str, fields: dict) -> DeviceParams:
    known = {f.name for f in dataclasses.fields(DeviceParams)}
    unknown = set(fields) - known
    if unknown:
        raise ValueError(f"preset {name!r}: unknown fields {sorted(unknown)}")
    fields = dict(fields)
    fields.setdefault("name", name)
    for key in ("endurance", "bits_per_cell"):
        if key in fields:
            fields[key] = int(float(fields[key]))
    return DeviceParams(**fields)


def load_presets(path: str | Path | None = None) -> dict[str, DeviceParams]:
    """Read device presets from a YAML file with one mapping per preset."""
    path = Path(path) if path is not None else _PRESET_FILE
    with open(path) as fh:
        raw = yaml.safe_load(fh)
    if not isinstance(raw, dict):
        raise ValueError(f"{path}: expected a mapping of preset names")
    return {name: _params_from_mapping(name, body or {}) for name, body in raw.items()}


def get_preset(name: str, path: str | Path | None = None) -> DeviceParams:
    presets = load_presets(path)
    try:
        return presets[name]
    except KeyError:
        raise KeyError(f"unknown device preset {name!r}; have {sorted(presets)}") from None


def dump_params(params: DeviceParams) -> str:
    """Serialize one device to the preset YAML format."""
    body = {}
    for f in dataclasses.fields(params):
        if f.name == "name":
            continue
        value = getattr(params, f.name)
        if isinstance(value, Enum):
            value = value.value
        body[f.name] = value
    return yaml.safe_dump({params.name: body}, sort_keys=False)
