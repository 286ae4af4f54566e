"""Simulator for compute-in-memory on non-volatile-memory crossbar arrays."""

from .bitslice import (QuantizedMatrix, SlicePlan, make_tiles, mvm_bitsliced, plan_slices,
                       program_weights)
from .crossbar import (Accounting, CrossbarConfig, CrossbarState, adc_quantize, mvm_ideal,
                       mvm_nonideal, mvm_transpose_ideal, required_adc_bits, solve_ir_drop_approx,
                       solve_ir_drop_exact)
from .design_space import DesignPoint, sweep
from .devices import DeviceParams, get_preset, load_presets
from .estimators import CrossbarMLPClassifier
from .programming import write_verify
from .training import AnalogNetwork, NetworkSpec
from .update import DifferentialPair, PulsePlan, apply_update, build_pulse_plan

__version__ = "0.1.0"

__all__ = [
    "Accounting", "AnalogNetwork", "CrossbarConfig", "CrossbarMLPClassifier", "CrossbarState",
    "DesignPoint", "DeviceParams", "DifferentialPair", "NetworkSpec", "PulsePlan",
    "QuantizedMatrix", "SlicePlan", "adc_quantize", "apply_update", "build_pulse_plan",
    "get_preset", "load_presets", "make_tiles", "mvm_bitsliced", "mvm_ideal", "mvm_nonideal",
    "mvm_transpose_ideal", "plan_slices", "program_weights", "required_adc_bits",
    "solve_ir_drop_approx", "solve_ir_drop_exact", "sweep", "write_verify",
]
