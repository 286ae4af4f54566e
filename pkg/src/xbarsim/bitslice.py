"""Bit-sliced weights and bit-streamed inputs on differential crossbar pairs.

Numeric convention
------------------
Weights are signed ``W``-bit integers in ``[-2**(W-1), 2**(W-1) - 1]``.  They
are stored sign-magnitude: the magnitude is cut into ``ceil(W / b)`` slices of
``b`` bits, and each slice digit is written as a conductance level on the
``G+`` member of the pair for positive weights or the ``G-`` member for
negative ones.  The other member stays at ``g_min``.  Slice 0 holds the most
significant digit.

Inputs are signed ``I``-bit integers.  Their positive and negative halves are
streamed in two separate phases, one magnitude bit-plane per step, least
significant bit first; the digital shift-and-add subtracts the negative phase.

The logical product is ``y = x @ W`` with ``W`` of shape ``(rows, cols)``:
matrix rows are crossbar rows (inputs), matrix columns are crossbar columns.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
import yaml

from .crossbar import (Accounting, CrossbarConfig, CrossbarState, adc_quantize, mvm_ideal,
                       mvm_nonideal, required_adc_bits)
from .devices import DeviceParams
from .programming import ProgramReport, write_verify

MAX_BITS_PER_CELL = 4


class PlanError(ValueError):
    pass


@dataclass(frozen=True)
class SlicePlan:
    rows: int
    cols: int
    weight_bits: int
    input_bits: int
    bits_per_cell: int
    tile_rows: int
    tile_cols: int
    differential: bool = True

    @property
    def num_slices(self) -> int:
        return math.ceil(self.weight_bits / self.bits_per_cell)

    @property
    def grid(self) -> tuple[int, int]:
        return (math.ceil(self.rows / self.tile_rows), math.ceil(self.cols / self.tile_cols))

    @property
    def levels(self) -> int:
        return 2**self.bits_per_cell

    @property
    def adc_bits(self) -> int:
        # one input bit per step; the differential pair adds a sign bit to the
        # b-bit cell digit
        return required_adc_bits(self.tile_rows, 1, self.bits_per_cell + 1)

    def shift(self, s: int) -> int:
        """Binary weight of slice ``s`` (slice 0 is the MSB digit)."""
        return (self.num_slices - 1 - s) * self.bits_per_cell

    def tile_keys(self):
        """``(slice, tile_row, tile_col)`` triples in slice-major, row-major order."""
        gr, gc = self.grid
        for s in range(self.num_slices):
            for tr in range(gr):
                for tc in range(gc):
                    yield s, tr, tc

    def row_span(self, tr: int) -> slice:
        return slice(tr * self.tile_rows, min((tr + 1) * self.tile_rows, self.rows))

    def col_span(self, tc: int) -> slice:
        return slice(tc * self.tile_cols, min((tc + 1) * self.tile_cols, self.cols))

    def to_yaml(self) -> str:
        body = asdict(self)
        body.update(num_slices=self.num_slices, grid=list(self.grid), adc_bits=self.adc_bits)
        return yaml.safe_dump(body, sort_keys=False)


def plan_slices(rows: int, cols: int, weight_bits: int, input_bits: int, bits_per_cell: int,
                tile_dims: tuple[int, int], device: DeviceParams | None = None) -> SlicePlan:
    """Cover a ``rows x cols`` weight matrix with slices and tiles."""
    for name, value in (("rows", rows), ("cols", cols), ("weight_bits", weight_bits),
                        ("input_bits", input_bits), ("bits_per_cell", bits_per_cell),
                        ("tile_rows", tile_dims[0]), ("tile_cols", tile_dims[1])):
        if value < 1:
            raise PlanError(f"{name} must be >= 1, got {value}")
    if bits_per_cell > MAX_BITS_PER_CELL:
        raise PlanError(f"bits_per_cell={bits_per_cell} exceeds {MAX_BITS_PER_CELL}")
    if device is not None and 0 < device.bits_per_cell < bits_per_cell:
        raise PlanError(
            f"device {device.name!r} stores {device.bits_per_cell} bits per cell, "
            f"plan needs {bits_per_cell}"
        )
    return SlicePlan(rows, cols, weight_bits, input_bits, bits_per_cell, *tile_dims)


@dataclass(frozen=True)
class QuantizedMatrix:
    values: np.ndarray
    bits: int
    scale: float = 1.0

    def __post_init__(self):
        values = np.asarray(self.values)
        if not np.issubdtype(values.dtype, np.integer):
            raise ValueError("values must be integers")
        lo, hi = -(2 ** (self.bits - 1)), 2 ** (self.bits - 1) - 1
        if values.size and (values.min() < lo or values.max() > hi):
            raise ValueError(f"values outside the {self.bits}-bit signed range [{lo}, {hi}]")
        if self.scale <= 0:
            raise ValueError("scale must be > 0")
        object.__setattr__(self, "values", values.astype(np.int64))

    @classmethod
    def from_float(cls, w, bits: int) -> "QuantizedMatrix":
        """Symmetric uniform quantization; ``weight ~= values * scale``."""
        w = np.asarray(w, dtype=float)
        top = 2 ** (bits - 1) - 1
        peak = float(np.max(np.abs(w))) if w.size else 0.0
        if top == 0 or peak == 0:
            return cls(np.zeros(w.shape, dtype=np.int64), bits, 1.0)
        scale = peak / top
        return cls(np.clip(np.rint(w / scale), -top, top).astype(np.int64), bits, scale)

    @classmethod
    def from_twos_complement(cls, codes, bits: int, scale: float = 1.0) -> "QuantizedMatrix":
        """Interpret raw ``bits``-wide unsigned codes as two's-complement integers."""
        codes = np.asarray(codes, dtype=np.int64)
        if np.any((codes < 0) | (codes >= 2**bits)):
            raise ValueError(f"codes must fit in {bits} bits")
        return cls(np.where(codes >= 2 ** (bits - 1), codes - 2**bits, codes), bits, scale)

    def dequantize(self) -> np.ndarray:
        return self.values * self.scale


def slice_digits(values, plan: SlicePlan) -> np.ndarray:
    """Per-slice magnitude digits, shape ``(num_slices, rows, cols)``, MSB first."""
    mag = np.abs(np.asarray(values, dtype=np.int64))
    mask = plan.levels - 1
    return np.stack([(mag >> plan.shift(s)) & mask for s in range(plan.num_slices)])


@dataclass
class SlicedTiles:
    """Physical tiles of a plan, keyed ``(slice, tile_row, tile_col, polarity)``.

    ``polarity`` is ``+1`` for the ``G+`` member and ``-1`` for ``G-``.
    """

    plan: SlicePlan
    tiles: dict = field(default_factory=dict)

    def __getitem__(self, key) -> CrossbarState:
        return self.tiles[key]

    def items(self):
        return self.tiles.items()

    def level_conductance(self, key, level):
        dev = self.tiles[key].device
        return dev.g_min + np.asarray(level) * (dev.window / (self.plan.levels - 1))


def make_tiles(plan: SlicePlan, device: DeviceParams, config: CrossbarConfig | None = None,
               rng: np.random.Generator | None = None) -> SlicedTiles:
    """Fresh tiles for every slice, tile position and pair member.

    ``config`` supplies the electrical parameters; its shape is replaced by the
    plan's tile shape and, unless set explicitly, the ADC resolution by
    :attr:`SlicePlan.adc_bits`.
    """
    if config is None:
        config = CrossbarConfig(plan.tile_rows, plan.tile_cols, adc_bits=plan.adc_bits)
    config = config.replace(rows=plan.tile_rows, cols=plan.tile_cols)
    out = SlicedTiles(plan)
    for s, tr, tc in plan.tile_keys():
        for pol in (1, -1):
            out.tiles[(s, tr, tc, pol)] = CrossbarState.fresh(config, device, rng)
    return out


def program_weights(plan: SlicePlan, weights: QuantizedMatrix, tiles: SlicedTiles,
                    rng_seed=None, *, tolerance: float | None = None, max_pulses: int = 200,
                    accounting: Accounting | None = None) -> tuple[SlicedTiles, ProgramReport]:
    """Write every slice digit into its tile with closed-loop write-verify."""
    values = weights.values
    if values.shape != (plan.rows, plan.cols):
        raise PlanError(f"weights have shape {values.shape}, plan is {plan.rows}x{plan.cols}")
    if weights.bits != plan.weight_bits:
        raise PlanError(f"weights are {weights.bits}-bit, plan expects {plan.weight_bits}")
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    digits = slice_digits(values, plan)
    report = ProgramReport()
    for s, tr, tc in plan.tile_keys():
        rs, cs = plan.row_span(tr), plan.col_span(tc)
        block = values[rs, cs]
        for pol in (1, -1):
            key = (s, tr, tc, pol)
            tile = tiles[key]
            level = np.zeros(tile.shape, dtype=np.int64)
            member = block > 0 if pol > 0 else block < 0
            level[: block.shape[0], : block.shape[1]] = np.where(member, digits[s][rs, cs], 0)
            sub = write_verify(tile, tiles.level_conductance(key, level), rng,
                               tolerance=tolerance, max_pulses=max_pulses, accounting=accounting)
            report.merge(sub, tag=key)
    return tiles, report


def mvm_bitsliced(plan: SlicePlan, tiles: SlicedTiles, x, mode: str = "ideal", rng_seed=None,
                  *, solver: str = "exact", accounting: Accounting | None = None) -> np.ndarray:
    """Integer ``x @ W`` through the sliced tiles with per-column ADCs.

    ``x`` is one vector of length ``rows`` or a batch of them.  Each bit-plane
    of each input phase is applied to every tile; each column pair is
    converted separately and the codes recombined by shift-and-add.  ADC
    saturation is counted in ``accounting``.
    """
    if mode not in ("ideal", "nonideal"):
        raise ValueError(f"mode must be 'ideal' or 'nonideal', got {mode!r}")
    x = np.asarray(x)
    if not np.issubdtype(x.dtype, np.integer):
        raise ValueError("x must be an integer vector")
    single = x.ndim == 1
    x2 = np.atleast_2d(x).astype(np.int64)
    if x2.shape[1] != plan.rows:
        raise ValueError(f"x has length {x2.shape[1]}, plan has {plan.rows} rows")
    lo, hi = -(2 ** (plan.input_bits - 1)), 2 ** (plan.input_bits - 1) - 1
    if x2.size and (x2.min() < lo or x2.max() > hi):
        raise ValueError(f"x outside the {plan.input_bits}-bit signed range [{lo}, {hi}]")
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)

    batch = x2.shape[0]
    out = np.zeros((batch, plan.cols), dtype=np.int64)
    for phase in (1, -1):
        mag = np.maximum(phase * x2, 0)
        if not mag.any():
            continue
        for t in range(plan.input_bits):
            plane = (mag >> t) & 1
            if not plane.any():
                continue
            for s, tr, tc in plan.tile_keys():
                rs, cs = plan.row_span(tr), plan.col_span(tc)
                codes = {}
                for pol in (1, -1):
                    tile = tiles[(s, tr, tc, pol)]
                    cfg, dev = tile.config, tile.device
                    v = np.zeros((batch, cfg.rows))
                    v[:, : rs.stop - rs.start] = plane[:, rs] * cfg.v_read
                    if mode == "ideal":
                        cur = mvm_ideal(tile, v, accounting=accounting)
                    else:
                        cur = mvm_nonideal(tile, v, rng, solver=solver, accounting=accounting)
                    lsb = dev.window / (plan.levels - 1) * cfg.v_read * cfg.t_int
                    # reference column: the g_min floor every cell carries
                    offset = dev.g_min * v.sum(axis=1, keepdims=True) * cfg.t_int
                    codes[pol] = adc_quantize(cur, tile, lsb=lsb, offset=offset,
                                              accounting=accounting)
                partial = codes[1] - codes[-1]
                out[:, cs] += phase * (partial[:, : cs.stop - cs.start] << (plan.shift(s) + t))
    return out[0] if single else out
