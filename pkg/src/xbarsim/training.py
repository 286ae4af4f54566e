"""Fully connected networks whose layers live on simulated crossbars.

Each layer ``l`` holds a ``(n_in + 1) x n_out`` weight array; the extra row is
the bias, driven by a constant-one input.  In ``"analog"`` mode the array is a
:class:`~xbarsim.update.DifferentialPair`:

* forward: inputs are scaled into ``[0, v_read]`` per sample, column currents
  of ``G+`` and ``G-`` are subtracted and rescaled digitally;
* backward: errors drive the columns and the rows are sensed (transposed read);
* update: ``w <- w - eta * outer(x, delta)`` through coincident pulse trains.

``"float"`` mode runs the same arithmetic on numpy arrays and serves as the
baseline.
"""

from __future__ import annotations

import copy
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import crossbar as xb
from .crossbar import Accounting, CrossbarConfig
from .datasets import Dataset
from .devices import DeviceParams, get_preset
from .programming import ProgramReport, write_verify
from .seeding import substream
from .update import DifferentialPair, UpdateReport, apply_update, build_pulse_plan

ACTIVATIONS = ("relu", "sigmoid")


@dataclass(frozen=True)
class NetworkSpec:
    dims: tuple
    activation: str = "relu"
    eta: float = 0.05
    epochs: int = 3
    seed: int = 0

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if len(dims) < 2 or min(dims) < 1:
            raise ValueError(f"need at least two positive layer sizes, got {dims}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        if self.eta <= 0:
            raise ValueError("eta must be > 0")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        object.__setattr__(self, "dims", dims)


def softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(p, labels) -> np.ndarray:
    p = np.atleast_2d(p)
    labels = np.atleast_1d(labels)
    return -np.log(np.maximum(p[np.arange(len(labels)), labels], 1e-300))


def _act(name, z):
    if name == "relu":
        return np.maximum(z, 0.0)
    return 1.0 / (1.0 + np.exp(-z))


def _act_grad(name, z, a):
    if name == "relu":
        return (z > 0).astype(float)
    return a * (1.0 - a)


def _with_bias(a):
    return np.hstack([a, np.ones((a.shape[0], 1))])


@dataclass
class StepMetrics:
    loss: float
    pulses: int = 0
    energy: float = 0.0
    latency_slots: int = 0
    clipped: int = 0


@dataclass
class EvalReport:
    accuracy: float
    n_samples: int
    mvm_count: int = 0
    array_energy: float = 0.0
    adc_energy: float = 0.0
    latency_slots: int = 0
    accounting: Accounting = field(default_factory=Accounting, repr=False)

    @property
    def total_energy(self) -> float:
        return self.array_energy + self.adc_energy


class AnalogNetwork:
    """A multilayer perceptron on crossbars, or its float baseline.

    Parameters
    ----------
    spec : NetworkSpec
    mode : ``"float"`` or ``"analog"``
    device : DeviceParams or preset name (analog mode)
    config : CrossbarConfig template; only its electrical fields are used
    mvm : ``"ideal"`` or ``"nonideal"`` crossbar reads
    adc_bits : quantize column currents with this resolution, or ``None``
    pulse_length : pulse-train length of each update
    zero_shift : reference the pairs at the device symmetry point
    w_max : logical weight represented by half the conductance window
    """

    def __init__(self, spec: NetworkSpec, mode: str = "float", device=None,
                 config: CrossbarConfig | None = None, mvm: str = "ideal",
                 adc_bits: int | None = None, pulse_length: int = 32, zero_shift: bool = False,
                 w_max: float = 1.0, solver: str = "approx", initial_weights=None):
        if mode not in ("float", "analog"):
            raise ValueError(f"mode must be 'float' or 'analog', got {mode!r}")
        if mvm not in ("ideal", "nonideal"):
            raise ValueError(f"mvm must be 'ideal' or 'nonideal', got {mvm!r}")
        self.spec = spec
        self.mode = mode
        self.mvm = mvm
        self.adc_bits = adc_bits
        self.pulse_length = pulse_length
        self.zero_shift = zero_shift
        self.w_max = w_max
        self.solver = solver
        if isinstance(device, str):
            device = get_preset(device)
        self.device = device
        self.config = config if config is not None else CrossbarConfig(1, 1)
        self.program_report = ProgramReport()
        self.float_weights = None
        self.pairs = None
        if initial_weights is None:
            initial_weights = self.initial_weights()
        if mode == "float":
            self.float_weights = [np.array(w, dtype=float) for w in initial_weights]
        else:
            if device is None:
                raise ValueError("analog mode needs a device")
            self._build_pairs()
            self.set_weights(initial_weights)

    # -- construction -----------------------------------------------------

    def initial_weights(self) -> list[np.ndarray]:
        rng = substream(self.spec.seed, "init")
        out = []
        for n_in, n_out in zip(self.spec.dims[:-1], self.spec.dims[1:]):
            lim = np.sqrt(6.0 / (n_in + n_out))
            w = rng.uniform(-lim, lim, size=(n_in + 1, n_out))
            w[-1] = 0.0
            out.append(w)
        return out

    def _layer_config(self, n_in, n_out) -> CrossbarConfig:
        return self.config.replace(rows=n_in + 1, cols=n_out, adc_share=1,
                                   adc_bits=self.adc_bits or self.config.adc_bits)

    def _build_pairs(self):
        rng = substream(self.spec.seed, "devices")
        reference = "symmetry" if self.zero_shift else "midpoint"
        self.pairs = [
            DifferentialPair.create(self._layer_config(n_in, n_out), self.device, rng,
                                    reference=reference, w_max=self.w_max)
            for n_in, n_out in zip(self.spec.dims[:-1], self.spec.dims[1:])
        ]

    def weights(self) -> list[np.ndarray]:
        if self.mode == "float":
            return [w.copy() for w in self.float_weights]
        return [pair.weights() for pair in self.pairs]

    def set_weights(self, weights, tolerance: float | None = None, max_pulses: int = 200):
        """Load logical weights; in analog mode this is a write-verify transfer."""
        if self.mode == "float":
            self.float_weights = [np.array(w, dtype=float) for w in weights]
            return
        rng = substream(self.spec.seed, "transfer")
        dev = self.device
        if tolerance is None and dev.dg_rel_sigma == 0 and dev.read_rel_sigma == 0:
            # noiseless devices can be programmed exactly; a window-relative
            # tolerance would leave small weights untouched
            tolerance = 1e-9 * dev.window
        for pair, w in zip(self.pairs, weights):
            target = pair.ref_plus + (np.asarray(w) / pair.w_scale)
            # the G- member sits at its reference; G+ carries the weight
            self.program_report.merge(write_verify(pair.minus, pair.ref_minus, rng,
                                                   tolerance=tolerance, max_pulses=max_pulses))
            self.program_report.merge(write_verify(pair.plus, target, rng,
                                                   tolerance=tolerance, max_pulses=max_pulses))

    def advance_time(self, seconds: float):
        if self.pairs is None:
            return
        for pair in self.pairs:
            pair.plus.advance_time(seconds)
            pair.minus.advance_time(seconds)

    def with_device(self, device: DeviceParams) -> "AnalogNetwork":
        """Copy whose tiles keep their conductances but read as ``device``.

        Used to sweep read-side parameters (read noise, drift) over one
        programmed network.
        """
        if self.mode != "analog":
            raise ValueError("with_device needs an analog network")
        clone = copy.copy(self)
        clone.device = device
        clone.pairs = []
        for pair in self.pairs:
            p = pair.copy()
            p.plus.device = device
            p.minus.device = device
            clone.pairs.append(p)
        return clone

    # -- crossbar reads ---------------------------------------------------

    def _read(self, tile, v, rng, accounting, transpose=False):
        if transpose:
            if self.mvm == "ideal":
                return xb.mvm_transpose_ideal(tile, v, accounting=accounting)
            tile = tile.transposed()
        if self.mvm == "ideal":
            return xb.mvm_ideal(tile, v, accounting=accounting)
        return xb.mvm_nonideal(tile, v, rng, solver=self.solver, accounting=accounting)

    def _convert(self, cur, tile, accounting):
        if self.adc_bits is None:
            if accounting is not None:
                xb.adc_quantize(np.abs(cur), tile, accounting=accounting)
            return cur
        # unsigned full-scale ADC; negative samples come out as saturation
        codes = xb.adc_quantize(cur, tile, accounting=accounting)
        lsb = xb.full_scale_charge(tile) / (2**tile.config.adc_bits - 1)
        return codes * lsb / tile.config.t_int

    def _layer_mvm(self, l, a, rng=None, accounting=None):
        x = _with_bias(a)
        if self.mode == "float":
            return x @ self.float_weights[l]
        pair = self.pairs[l]
        v_read = pair.plus.config.v_read
        s = np.max(np.abs(x), axis=1, keepdims=True)
        s[s == 0] = 1.0
        v = x / s * v_read
        i_plus = self._convert(self._read(pair.plus, v, rng, accounting), pair.plus, accounting)
        i_minus = self._convert(self._read(pair.minus, v, rng, accounting), pair.minus, accounting)
        y = (i_plus - i_minus) * s / v_read * pair.w_scale
        ref = (pair.ref_plus - pair.ref_minus) * pair.w_scale
        if np.any(ref):
            y = y - x @ ref
        return y

    def _layer_mvm_t(self, l, delta, rng=None, accounting=None):
        """Back-propagated error through layer ``l`` (bias row dropped)."""
        if self.mode == "float":
            return delta @ self.float_weights[l][:-1].T
        pair = self.pairs[l]
        v_read = pair.plus.config.v_read
        s = np.max(np.abs(delta), axis=1, keepdims=True)
        s[s == 0] = 1.0
        v = delta / s * v_read
        i_plus = self._read(pair.plus, v, rng, accounting, transpose=True)
        i_minus = self._read(pair.minus, v, rng, accounting, transpose=True)
        out = (i_plus - i_minus) * s / v_read * pair.w_scale
        ref = (pair.ref_plus - pair.ref_minus) * pair.w_scale
        if np.any(ref):
            out = out - delta @ ref.T
        return out[:, :-1]

    # -- training ---------------------------------------------------------

    def forward(self, X, rng=None, accounting=None):
        """Activations and pre-activations of every layer for a batch ``X``.

        Returns ``(activations, preacts)`` where ``activations[0]`` is the
        input and ``activations[-1]`` the softmax output.
        """
        a = np.atleast_2d(np.asarray(X, dtype=float))
        acts, zs = [a], []
        n_layers = len(self.spec.dims) - 1
        for l in range(n_layers):
            z = self._layer_mvm(l, a, rng, accounting)
            a = softmax(z) if l == n_layers - 1 else _act(self.spec.activation, z)
            zs.append(z)
            acts.append(a)
        return acts, zs

    def backward(self, acts, zs, labels, rng=None, accounting=None):
        """Errors ``dLoss/dz`` per layer for softmax cross-entropy."""
        labels = np.atleast_1d(labels)
        delta = acts[-1].copy()
        delta[np.arange(len(labels)), labels] -= 1.0
        deltas = [delta]
        for l in range(len(zs) - 1, 0, -1):
            back = self._layer_mvm_t(l, delta, rng, accounting)
            delta = back * _act_grad(self.spec.activation, zs[l - 1], acts[l])
            deltas.insert(0, delta)
        return deltas

    def train_step(self, x, label, rng=None, accounting=None) -> StepMetrics:
        """Forward, backward and in-array update for one sample."""
        if rng is None:
            rng = np.random.default_rng(0)
        acts, zs = self.forward(x, rng, accounting)
        deltas = self.backward(acts, zs, label, rng, accounting)
        metrics = StepMetrics(loss=float(cross_entropy(acts[-1], label)[0]))
        eta = self.spec.eta
        for l, delta in enumerate(deltas):
            x_l = _with_bias(acts[l])[0]
            d_l = delta[0]
            if self.mode == "float":
                self.float_weights[l] -= eta * np.outer(x_l, d_l)
                continue
            pair = self.pairs[l]
            plan = build_pulse_plan(x_l, d_l, eta, self.pulse_length, rng, dw=pair.weight_step)
            rep = apply_update(pair, plan, seed=rng, accounting=accounting)
            metrics.pulses += rep.pulses
            metrics.energy += rep.energy
            metrics.latency_slots += rep.latency_slots
            metrics.clipped += rep.clipped
        return metrics

    def fit(self, data: Dataset, epochs: int | None = None, start_epoch: int = 0,
            callback=None) -> list[dict]:
        """Per-sample training; every epoch draws its own shuffle and noise streams.

        Returns one metrics row per epoch.  ``callback(epoch, row)`` is called
        after each epoch.
        """
        epochs = self.spec.epochs if epochs is None else epochs
        history = []
        for epoch in range(start_epoch, start_epoch + epochs):
            order = substream(self.spec.seed, "shuffle", epoch).permutation(len(data))
            rng = substream(self.spec.seed, "train", epoch)
            totals = StepMetrics(loss=0.0)
            for k in order:
                m = self.train_step(data.X[k:k + 1], data.y[k], rng)
                totals.loss += m.loss
                totals.pulses += m.pulses
                totals.energy += m.energy
                totals.latency_slots += m.latency_slots
                totals.clipped += m.clipped
            row = {"epoch": epoch, "mean_loss": totals.loss / max(len(data), 1),
                   "pulses": totals.pulses, "update_energy": totals.energy,
                   "update_latency_slots": totals.latency_slots, "clipped": totals.clipped}
            history.append(row)
            if callback is not None:
                callback(epoch, row)
        return history

    def predict_proba(self, X, seed: int = 0, accounting=None) -> np.ndarray:
        rng = substream(self.spec.seed, "eval", seed)
        acts, _ = self.forward(X, rng, accounting)
        return acts[-1]

    def evaluate(self, data: Dataset, mode: str | None = None, seed: int = 0) -> EvalReport:
        """Accuracy plus the energy/latency ledger of the forward MVMs.

        ``mode`` temporarily overrides the crossbar read mode.
        """
        saved = self.mvm
        if mode is not None:
            if mode not in ("ideal", "nonideal"):
                raise ValueError(f"mode must be 'ideal' or 'nonideal', got {mode!r}")
            self.mvm = mode
        try:
            acc = Accounting()
            if len(data) == 0:
                return EvalReport(accuracy=float("nan"), n_samples=0, accounting=acc)
            proba = self.predict_proba(data.X, seed, acc)
        finally:
            self.mvm = saved
        accuracy = float(np.mean(np.argmax(proba, axis=1) == data.y))
        return EvalReport(accuracy, len(data), acc.mvm_count, acc.array_energy, acc.adc_energy,
                          acc.latency_slots, acc)

    # -- persistence ------------------------------------------------------

    def save(self, directory, seed: int | None = None):
        """Write the network state: crossbar snapshots or float weight CSVs."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        meta = {"spec": dataclasses.asdict(self.spec), "mode": self.mode,
                "layers": len(self.spec.dims) - 1}
        meta["spec"]["dims"] = list(self.spec.dims)
        if self.mode == "float":
            for l, w in enumerate(self.float_weights):
                np.savetxt(directory / f"layer{l}_weights.csv", w, delimiter=",", fmt="%.17g")
        else:
            meta["pairs"] = []
            for l, pair in enumerate(self.pairs):
                xb.save_snapshot(pair.plus, directory / f"layer{l}_plus.xbar", seed)
                xb.save_snapshot(pair.minus, directory / f"layer{l}_minus.xbar", seed)
                meta["pairs"].append({"w_scale": pair.w_scale,
                                      "ref_plus": float(pair.ref_plus.flat[0]),
                                      "ref_minus": float(pair.ref_minus.flat[0])})
        (directory / "network.yaml").write_text(yaml.safe_dump(meta, sort_keys=True))

    def restore(self, directory):
        """Load state written by :meth:`save` into this (compatible) network."""
        directory = Path(directory)
        meta = yaml.safe_load((directory / "network.yaml").read_text())
        if meta["mode"] != self.mode or tuple(meta["spec"]["dims"]) != self.spec.dims:
            raise ValueError(f"{directory}: snapshot does not match this network")
        if self.mode == "float":
            self.float_weights = [
                np.atleast_2d(np.loadtxt(directory / f"layer{l}_weights.csv", delimiter=","))
                .reshape(self.float_weights[l].shape)
                for l in range(meta["layers"])
            ]
            return
        for l, info in enumerate(meta["pairs"]):
            plus, _ = xb.load_snapshot(directory / f"layer{l}_plus.xbar")
            minus, _ = xb.load_snapshot(directory / f"layer{l}_minus.xbar")
            self.pairs[l] = DifferentialPair(plus, minus, np.full(plus.shape, info["ref_plus"]),
                                             np.full(plus.shape, info["ref_minus"]),
                                             info["w_scale"])
