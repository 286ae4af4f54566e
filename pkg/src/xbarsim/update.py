"""Parallel rank-1 updates by coincidence of stochastic row and column pulse trains.

The update ``W <- W - eta * outer(x, delta)`` is realized in constant time:
every row ``i`` fires a Bernoulli train with rate ``a |x_i|`` and every
column ``j`` one with rate ``b |delta_j|``.  A cell changes by one device step
each time its row and column pulses coincide, so the expected number of steps
is ``L a b |x_i delta_j|``.  Choosing ``a = b = sqrt(eta / (dw L))``, where
``dw`` is the weight change of one step, makes the expected weight change
equal to the SGD step.

Cells whose product ``x_i delta_j`` is positive are depressed and the others
potentiated; the two groups are driven in separate phases, so one update
takes ``2 L`` pulse slots.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import devices
from .crossbar import Accounting, CrossbarConfig, CrossbarState
from .devices import DeviceParams, ResponseKind, UnsupportedUpdateError

DEFAULT_TRAIN_LENGTH = 32


@dataclass(frozen=True)
class PulsePlan:
    row_trains: np.ndarray  # (rows, L) bool
    col_trains: np.ndarray  # (cols, L) bool
    row_polarity: np.ndarray  # sign of x_i
    col_polarity: np.ndarray  # sign of delta_j
    length: int
    encoding_seed: int | None
    row_rates: np.ndarray
    col_rates: np.ndarray
    clipped: int = 0

    def coincidences(self) -> np.ndarray:
        """Number of coincident pulses per cell."""
        return self.row_trains.astype(np.int32) @ self.col_trains.T.astype(np.int32)

    def direction(self) -> np.ndarray:
        """+1 where the cell is potentiated, -1 where depressed, 0 where idle."""
        return (-np.outer(self.row_polarity, self.col_polarity)).astype(np.int8)


def build_pulse_plan(x, delta, eta: float, L: int = DEFAULT_TRAIN_LENGTH, seed=None,
                     dw: float = 1.0) -> PulsePlan:
    """Encode ``x`` and ``delta`` as Bernoulli pulse trains of length ``L``.

    ``dw`` is the weight change produced by one coincident pulse.  Rates that
    exceed one after scaling are clipped; the count is kept in ``clipped``.
    """
    x = np.asarray(x, dtype=float)
    delta = np.asarray(delta, dtype=float)
    if L < 1:
        raise ValueError("L must be >= 1")
    if eta <= 0 or dw <= 0:
        raise ValueError("eta and dw must be > 0")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(delta))):
        raise ValueError("x and delta must be finite")
    gain = np.sqrt(eta / (dw * L))
    p = gain * np.abs(x)
    q = gain * np.abs(delta)
    clipped = int(np.count_nonzero(p > 1) + np.count_nonzero(q > 1))
    p = np.minimum(p, 1.0)
    q = np.minimum(q, 1.0)
    rng = np.random.default_rng(seed)
    rows = rng.random((x.size, L)) < p[:, None]
    cols = rng.random((delta.size, L)) < q[:, None]
    return PulsePlan(rows, cols, np.sign(x).astype(np.int8), np.sign(delta).astype(np.int8),
                     L, seed, p, q, clipped)


@dataclass
class UpdateReport:
    pulses: int = 0
    energy: float = 0.0
    latency_slots: int = 0
    clipped: int = 0

    def merge(self, other: "UpdateReport"):
        self.pulses += other.pulses
        self.energy += other.energy
        self.latency_slots += other.latency_slots
        self.clipped += other.clipped


@dataclass
class DifferentialPair:
    """A logical weight array stored as ``G+`` and ``G-`` tiles.

    The logical weight is ``w_scale * ((G+ - ref+) - (G- - ref-))``.  Updates
    on bidirectional devices go to ``G+`` only, with ``G-`` parked at its
    reference; one-sided devices potentiate ``G+`` for positive and ``G-``
    for negative changes.
    """

    plus: CrossbarState
    minus: CrossbarState
    ref_plus: np.ndarray
    ref_minus: np.ndarray
    w_scale: float

    @classmethod
    def create(cls, config: CrossbarConfig, device: DeviceParams, rng=None, *,
               reference: str = "midpoint", w_max: float = 1.0) -> "DifferentialPair":
        """New pair with both members at the reference conductance.

        ``reference`` is ``"midpoint"`` (window centre) or ``"symmetry"``
        (the device's symmetry point, i.e. zero-shifted).  ``w_scale`` maps
        half the conductance window to ``w_max``.
        """
        g_ref = reference_conductance(device, reference)
        plus = CrossbarState.fresh(config, device, rng, g_init=g_ref)
        minus = CrossbarState.fresh(config, device, rng, g_init=g_ref)
        ref = np.full(plus.shape, g_ref)
        return cls(plus, minus, ref, ref.copy(), w_max / (0.5 * device.window))

    @property
    def device(self) -> DeviceParams:
        return self.plus.device

    @property
    def weight_step(self) -> float:
        """Logical weight change of one nominal device step at the reference."""
        dev = self.device
        if dev.response_kind is ResponseKind.ASYMMETRIC_SOFT_BOUNDS:
            g_ref = float(np.mean(self.ref_plus))
            step = 0.5 * (devices.nominal_increment(g_ref, dev, 1)
                          + devices.nominal_increment(g_ref, dev, -1))
        else:
            step = devices.nominal_increment(0.5 * (dev.g_min + dev.g_max), dev, 1)
        return float(step) * self.w_scale

    def weights(self) -> np.ndarray:
        return zero_shift_reference(self)

    def copy(self) -> "DifferentialPair":
        return DifferentialPair(self.plus.copy(), self.minus.copy(), self.ref_plus.copy(),
                                self.ref_minus.copy(), self.w_scale)


def reference_conductance(device: DeviceParams, reference: str) -> float:
    midpoint = 0.5 * (device.g_min + device.g_max)
    if reference == "midpoint":
        return midpoint
    if reference == "symmetry":
        g_sym = devices.symmetry_point(device)
        if g_sym is None:
            raise UnsupportedUpdateError(f"{device.name}: no symmetry point to shift to")
        return midpoint if g_sym is devices.EVERYWHERE else float(g_sym)
    raise ValueError(f"unknown reference {reference!r}")


def zero_shift_reference(pair: DifferentialPair, device: DeviceParams | None = None) -> np.ndarray:
    """Logical weights relative to the per-cell reference conductances."""
    gp = pair.plus.effective_g()
    gm = pair.minus.effective_g()
    return pair.w_scale * ((gp - pair.ref_plus) - (gm - pair.ref_minus))


def _pulse_counts(tile: CrossbarState, counts: np.ndarray, sign: int, rng) -> int:
    """Apply ``counts[i, j]`` same-direction pulses to each cell."""
    mask = counts > 0
    if not mask.any():
        return 0
    dev = tile.device
    total = int(counts.sum())
    if dev.response_kind is ResponseKind.LINEAR_SYMMETRIC and dev.dg_rel_sigma == 0:
        # constant step: n pulses in one direction add up exactly (clamping is
        # monotone within a phase)
        if dev.enforce_endurance and np.any(tile.pulses[mask] + counts[mask] > dev.endurance):
            raise devices.DeviceWornError(f"{dev.name}: endurance exhausted")
        g0 = tile.effective_g()[mask]
        step = sign * counts[mask] * dev.dg_mean * tile.scale[mask]
        tile.g[mask] = np.clip(g0 + step, dev.g_min, dev.g_max)
        tile.age[mask] = 0.0
        tile.pulses[mask] += counts[mask]
        return total
    for k in range(1, int(counts.max()) + 1):
        tile.pulse(np.where(counts >= k, sign, 0), rng)
    return total


def apply_update(tiles, plan: PulsePlan, device: DeviceParams | None = None, seed=None, *,
                 accounting: Accounting | None = None) -> UpdateReport:
    """Fire the planned trains into ``tiles`` (a :class:`CrossbarState` or a
    :class:`DifferentialPair`), updating them in place.
    """
    if isinstance(tiles, DifferentialPair):
        target = tiles.plus
    else:
        target = tiles
    dev = device if device is not None else target.device
    if plan.row_trains.shape[0] != target.shape[0] or plan.col_trains.shape[0] != target.shape[1]:
        raise ValueError(
            f"plan is {plan.row_trains.shape[0]}x{plan.col_trains.shape[0]}, "
            f"tile is {target.shape[0]}x{target.shape[1]}"
        )
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    counts = plan.coincidences()
    direction = plan.direction()
    pulses = 0
    one_sided = dev.response_kind is ResponseKind.ONE_SIDED
    if one_sided:
        if not isinstance(tiles, DifferentialPair):
            if np.any(counts[direction < 0]):
                raise UnsupportedUpdateError(
                    f"{dev.name}: one-sided device needs a differential pair for depression"
                )
            pulses += _pulse_counts(target, np.where(direction > 0, counts, 0), 1, rng)
        else:
            pulses += _pulse_counts(tiles.plus, np.where(direction > 0, counts, 0), 1, rng)
            pulses += _pulse_counts(tiles.minus, np.where(direction < 0, counts, 0), 1, rng)
    else:
        for sign in (1, -1):
            pulses += _pulse_counts(target, np.where(direction == sign, counts, 0), sign, rng)
    report = UpdateReport(pulses=pulses, energy=pulses * dev.write_energy,
                          latency_slots=2 * plan.length, clipped=plan.clipped)
    if accounting is not None:
        accounting.log_writes(report.pulses, report.energy)
    return report
