"""Closed-loop write-verify programming of crossbar tiles."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import devices
from .crossbar import Accounting, CrossbarState


@dataclass
class ProgramReport:
    cells: int = 0
    pulses: int = 0
    resets: int = 0
    verify_reads: int = 0
    energy: float = 0.0
    failures: list = field(default_factory=list)
    residuals: list = field(default_factory=list)

    @property
    def verified_fraction(self) -> float:
        return 1.0 if self.cells == 0 else 1.0 - len(self.failures) / self.cells

    @property
    def max_abs_residual(self) -> float:
        return float(max((np.max(np.abs(r)) for r in self.residuals if r.size), default=0.0))

    @property
    def mean_abs_residual(self) -> float:
        flat = [r.ravel() for r in self.residuals if r.size]
        return float(np.mean(np.abs(np.concatenate(flat)))) if flat else 0.0

    def merge(self, other: "ProgramReport", tag=None):
        self.cells += other.cells
        self.pulses += other.pulses
        self.resets += other.resets
        self.verify_reads += other.verify_reads
        self.energy += other.energy
        self.failures.extend((tag, f) if tag is not None else f for f in other.failures)
        self.residuals.extend(other.residuals)

    def as_dict(self) -> dict:
        return {
            "cells": self.cells,
            "pulses": self.pulses,
            "resets": self.resets,
            "verify_reads": self.verify_reads,
            "energy": self.energy,
            "failures": len(self.failures),
            "verified_fraction": self.verified_fraction,
            "max_abs_residual": self.max_abs_residual,
            "mean_abs_residual": self.mean_abs_residual,
        }


def write_verify(state: CrossbarState, targets, rng: np.random.Generator | None = None, *,
                 tolerance: float | None = None, max_pulses: int = 200,
                 mask=None, accounting: Accounting | None = None) -> ProgramReport:
    """Program ``state`` towards ``targets`` by pulse / read / compare cycles.

    Each cycle reads the unverified cells (with read noise), stops on cells
    within ``tolerance`` of their target and pulses the others by the observed
    error.  One-sided devices that overshoot are RESET and approach again from
    below.  Cells still outside tolerance after ``max_pulses`` are reported
    as failures.  ``tolerance`` defaults to 1 % of the conductance window.
    """
    dev = state.device
    targets = np.clip(np.broadcast_to(np.asarray(targets, dtype=float), state.shape),
                      dev.g_min, dev.g_max)
    if tolerance is None:
        tolerance = 0.01 * dev.window
    pending = np.ones(state.shape, dtype=bool) if mask is None else np.array(mask, dtype=bool)
    report = ProgramReport(cells=int(pending.sum()))
    start_pulses = state.pulses.copy()
    one_sided = dev.response_kind is devices.ResponseKind.ONE_SIDED

    for cycle in range(max_pulses + 1):
        if not pending.any():
            break
        read = devices.read_array(state.g, state.age, dev, rng)
        report.verify_reads += int(pending.sum())
        err = targets - read
        pending &= np.abs(err) > tolerance
        if cycle == max_pulses or not pending.any():
            break
        if one_sided:
            overshoot = pending & (err < 0)
            report.resets += state.reset(overshoot)
            state.step_towards(err, pending & ~overshoot, rng)
        else:
            state.step_towards(err, pending, rng)

    if mask is None:
        touched = np.ones(state.shape, dtype=bool)
    else:
        touched = np.asarray(mask, dtype=bool)
    report.pulses = int((state.pulses - start_pulses).sum())
    report.energy = report.pulses * dev.write_energy
    report.failures = [tuple(map(int, ij)) for ij in np.argwhere(pending)]
    report.residuals = [(state.effective_g() - targets)[touched]]
    if accounting is not None:
        accounting.log_writes(report.pulses, report.energy)
    return report
