"""Acceptance criteria, each checked at its stated tolerance."""

import filecmp
import math
import time
from pathlib import Path

import numpy as np
import pytest

from xbarsim import bitslice as bs
from xbarsim import crossbar as xb
from xbarsim import design_space as ds
from xbarsim import devices as dv
from xbarsim.cli import main
from xbarsim.crossbar import CrossbarConfig, CrossbarState
from xbarsim.datasets import load_digits
from xbarsim.design_space import DesignPoint
from xbarsim.seeding import substream
from xbarsim.training import AnalogNetwork, NetworkSpec, cross_entropy, softmax
from xbarsim.update import apply_update, build_pulse_plan

IDEAL = dv.get_preset("ideal")
K_B = 1.380649e-23


def test_c01_adc_bits(criterion):
    bits = xb.required_adc_bits(128, 1, 2)
    criterion(1, bits == 8, f"required_adc_bits(128, 1, 2) = {bits}")


def test_c02_speed_bound(criterion):
    ops = ds.ops_per_second_bound(DesignPoint(weights_total=250e6, t_int=100e-9))
    criterion(2, ops == 5.0e15, f"{ops:.6g} Op/s")


def test_c03_resistance_bound(criterion):
    r = ds.min_device_resistance(DesignPoint(array_n=2048, r_wire=0.1))
    literal = 2048**2 * 0.1 / 0.1
    ok = 4.0e6 <= r <= 5.5e6 and r == pytest.approx(4.194e6, abs=5e2) and r == literal
    ok = ok and abs(r - 5e6) / 5e6 <= 0.25
    criterion(3, ok, f"{r / 1e6:.4f} MOhm")


def test_c04_voltage_bound(criterion):
    v = ds.min_voltage(DesignPoint(array_n=2048, r_dev=5e6, temperature=300, t_int=100e-9,
                                   snr_target=10))
    # independent calculator value: 10 sqrt(N R k_B T / t_int)
    hand = 10 * math.sqrt(2048 * 5e6 * K_B * 300 / 100e-9)
    ok = abs(v - 0.206) <= 0.01 * 0.206 and v == pytest.approx(hand, rel=1e-12)
    criterion(4, ok, f"{v:.5f} V")


def test_c05_energy_bound(criterion):
    p = DesignPoint(array_n=2048, r_wire=0.1, r_dev=5e6, temperature=300, t_int=100e-9,
                    e_adc=5e-12)
    e = ds.energy_efficiency_bound(p)
    rows = ds.sweep({"array_n": 2048, "r_dev": 5e6, "e_adc": [1e-13, 1e-12, 5e-12, 2e-11, 1e-10]})
    series = [r["ops_per_joule"] for r in rows]
    monotone = all(a > b for a, b in zip(series, series[1:]))
    criterion(5, e >= 1e14 and monotone, f"{e:.4g} Op/J at 5 pJ, monotone={monotone}")


def test_c06_bitslice_exact(criterion):
    rng = substream(0, "acceptance", 6)
    device_rng = substream(0, "acceptance", 6, "devices")
    bad = 0
    cases = 1000
    t0 = time.perf_counter()
    for k in range(cases):
        wb, ib = rng.choice([1, 2, 4], 2)
        b = int(rng.choice([1, 2]))
        rows, cols = rng.integers(1, 33, 2)
        W = rng.integers(-(2 ** (wb - 1)), 2 ** (wb - 1), (rows, cols))
        x = rng.integers(-(2 ** (ib - 1)), 2 ** (ib - 1), rows)
        plan = bs.plan_slices(rows, cols, int(wb), int(ib), b, (16, 16))
        tiles = bs.make_tiles(plan, IDEAL, None, device_rng)
        tiles, _ = bs.program_weights(plan, bs.QuantizedMatrix(W, int(wb)), tiles, k)
        if not np.array_equal(bs.mvm_bitsliced(plan, tiles, x), x @ W):
            bad += 1
    dt = time.perf_counter() - t0
    criterion(6, bad == 0 and dt < 60, f"{cases - bad}/{cases} exact in {dt:.1f} s")


def test_c07_ir_drop(criterion):
    rng = substream(0, "acceptance", 7)
    worst = 0.0
    t0 = time.perf_counter()
    for _ in range(200):
        m, n = rng.integers(16, 65, 2)
        g = rng.uniform(IDEAL.g_min, IDEAL.g_max, (m, n))
        # largest wire resistance allowed by N^2 r_wire / R_dev <= 0.1
        r_wire = 0.1 / (max(m, n) ** 2 * IDEAL.g_max)
        v = rng.uniform(0, 0.2, m)
        exact = xb.solve_ir_drop_exact(g, r_wire, v)
        approx = xb.solve_ir_drop_approx(g, r_wire, v)
        worst = max(worst, float(np.max(np.abs(approx - exact) / np.abs(exact))))
    g = rng.uniform(IDEAL.g_min, IDEAL.g_max, (40, 24))
    v = rng.uniform(0, 0.2, 40)
    zero_wire = float(np.max(np.abs(xb.solve_ir_drop_exact(g, 0.0, v) - v @ g)))
    scale = float(np.max(np.abs(v @ g)))
    dt = time.perf_counter() - t0
    ok = worst < 0.02 and zero_wire <= 1e-10 * scale and dt < 120
    criterion(7, ok, f"max approx error {worst:.3%}, r_wire=0 deviation {zero_wire / scale:.1e}"
                     f" relative, {dt:.1f} s")


def test_c08_device_dynamics(criterion):
    rng = substream(0, "acceptance", 8)
    lin = IDEAL.replace(g_min=1e-7)
    # (a) interior states, at least one step from either bound
    g = rng.uniform(lin.g_min + lin.dg_mean, lin.g_max - lin.dg_mean, 10_000)
    back = dv.pulse_array(dv.pulse_array(g, lin, +1), lin, -1)
    err_a = float(np.max(np.abs(back - g)))
    ok_a = err_a <= 1e-12

    # (b) balanced pulses from random starts on the noisy asymmetric preset
    rram = dv.get_preset("rram")
    g_sym = dv.symmetry_point(rram)
    inc = dv.symmetry_increment(rram)
    misses = 0
    for seed in range(100):
        srng = substream(seed, "acceptance", 8, "balanced")
        gc = srng.uniform(rram.g_min, rram.g_max)
        for k in range(2000):
            gc = float(dv.pulse_array(gc, rram, 1 if k % 2 == 0 else -1, srng))
        misses += abs(gc - g_sym) > inc
    ok_b = misses == 0

    # (c) power-law drift slope in log-log coordinates
    pcm = dv.get_preset("pcm")
    t = np.logspace(1, 9, 40)
    slope = np.polyfit(np.log(t), np.log(dv.drift_factor(t, pcm)), 1)[0]
    ok_c = abs(-slope - pcm.drift_nu) <= 1e-9
    criterion(8, ok_a and ok_b and ok_c,
              f"(a) max error {err_a:.1e}, (b) {100 - misses}/100 within one increment, "
              f"(c) slope {-slope:.12f} vs nu {pcm.drift_nu}")


@pytest.mark.parametrize("dg_sigma", [0.0, 0.3])
def test_c09_update_expectation(criterion, dg_sigma):
    dev = IDEAL.replace(dg_rel_sigma=dg_sigma)
    rng = substream(0, "acceptance", 9)
    x, d = rng.uniform(-1, 1, 16), rng.uniform(-1, 1, 16)
    L, reps = 256, 500
    dw = dev.dg_mean
    eta = 0.5 * dw * L
    total = np.zeros((16, 16))
    g_mid = 0.5 * (dev.g_min + dev.g_max)
    for r in range(reps):
        t = CrossbarState.fresh(CrossbarConfig(16, 16), dev, substream(r, "c9", "tile"), g_mid)
        apply_update(t, build_pulse_plan(x, d, eta, L, substream(r, "c9", "plan"), dw=dw),
                     seed=substream(r, "c9", "noise"))
        total += t.g - g_mid
    mean = (total / reps).ravel()
    target = -eta * np.outer(x, d).ravel()
    A = np.column_stack([target, np.ones_like(target)])
    coef = np.linalg.lstsq(A, mean, rcond=None)[0]
    r2 = 1 - np.sum((mean - A @ coef) ** 2) / np.sum((mean - mean.mean()) ** 2)
    criterion(f"9 (dG sigma {dg_sigma})", r2 > 0.99, f"R^2 = {r2:.5f}, slope {coef[0]:.4f}")


def _loss_from_layer(net, layer, z, label):
    """Loss as a function of the pre-activation of ``layer`` (float mode)."""
    ws = net.weights()
    for w in ws[layer + 1:]:
        a = np.maximum(z, 0.0) if net.spec.activation == "relu" else 1 / (1 + np.exp(-z))
        z = np.append(a, 1.0) @ w
    return float(cross_entropy(softmax(z[None, :]), [label])[0])


def test_c10_gradient_check(criterion):
    worst = 0.0
    h = 1e-6
    for seed in range(20):
        rng = substream(seed, "acceptance", 10)
        net = AnalogNetwork(NetworkSpec((6, 4, 3), seed=seed), "float")
        x = rng.random((1, 6))
        label = int(rng.integers(3))
        acts, zs = net.forward(x)
        deltas = net.backward(acts, zs, [label])
        for layer in range(2):
            for k in range(zs[layer].shape[1]):
                zp, zm = zs[layer][0].copy(), zs[layer][0].copy()
                zp[k] += h
                zm[k] -= h
                fd = (_loss_from_layer(net, layer, zp, label)
                      - _loss_from_layer(net, layer, zm, label)) / (2 * h)
                an = deltas[layer][0, k]
                if an == 0.0 and fd == 0.0:
                    continue
                worst = max(worst, abs(an - fd) / max(abs(fd), abs(an)))
    criterion(10, worst < 1e-4, f"max relative error {worst:.2e} over 20 seeds")


# -- end-to-end training -------------------------------------------------------------

@pytest.fixture(scope="module")
def digits_split():
    return load_digits().split(0.25, seed=0)


def test_c11a_ideal_vs_float(criterion, digits_split):
    train, test = digits_split
    spec = NetworkSpec((64, 32, 10), eta=0.05, epochs=3, seed=0)
    f = AnalogNetwork(spec, "float")
    f.fit(train)
    a = AnalogNetwork(spec, "analog", IDEAL)
    a.fit(train)
    acc_f, acc_a = f.evaluate(test).accuracy, a.evaluate(test).accuracy
    criterion("11a", acc_a >= 0.9 * acc_f, f"analog {acc_a:.4f} vs float {acc_f:.4f}")


def test_c11b_asymmetric_below_symmetric(criterion, digits_split):
    train, test = digits_split
    train = train.subset(np.arange(600))
    rram = dv.get_preset("rram")
    # counterpart with the same window and noise but symmetric linear steps of the
    # size the asymmetric device takes at its symmetry point
    sym = rram.replace(response_kind="linear_symmetric", alpha_up=0.0, alpha_down=0.0,
                       dg_mean=dv.symmetry_increment(rram))
    wins, pairs = 0, []
    for seed in range(10):
        spec = NetworkSpec((64, 32, 10), eta=0.05, epochs=2, seed=seed)
        res = []
        for dev in (rram, sym):
            net = AnalogNetwork(spec, "analog", dev)
            net.fit(train)
            res.append(net.evaluate(test, seed=seed).accuracy)
        pairs.append(tuple(res))
        wins += res[0] < res[1]
    detail = ", ".join(f"{a:.3f}<{b:.3f}" if a < b else f"{a:.3f}>={b:.3f}" for a, b in pairs)
    criterion("11b", wins >= 8, f"{wins}/10 seeds ordered: {detail}")


def test_c11c_read_noise_trend(criterion, digits_split):
    train, test = digits_split
    train = train.subset(np.arange(600))
    sigmas = (0.0, 0.005, 0.02, 0.1)
    table = np.zeros((10, len(sigmas)))
    for seed in range(10):
        spec = NetworkSpec((64, 32, 10), eta=0.05, epochs=2, seed=seed)
        f = AnalogNetwork(spec, "float")
        f.fit(train)
        base = AnalogNetwork(spec, "analog", IDEAL, initial_weights=f.weights(), mvm="nonideal")
        for j, s in enumerate(sigmas):
            net = base.with_device(IDEAL.replace(read_rel_sigma=s))
            table[seed, j] = net.evaluate(test, seed=seed).accuracy
    means = table.mean(axis=0)
    ok = all(a >= b for a, b in zip(means, means[1:]))
    criterion("11c", ok, "mean accuracy " + " -> ".join(f"{m:.4f}" for m in means))


# -- reproducibility ----------------------------------------------------------------

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def _csvs(directory):
    return sorted(p.relative_to(directory) for p in Path(directory).rglob("*.csv"))


def test_c12_byte_identical_reruns(criterion, tmp_path):
    runs = {
        "mvm": ["mvm", "--config", str(CONFIGS / "mvm_2x2.yaml"), "--mode", "nonideal"],
        "bounds": ["bounds", "sweep", "--grid", "builtin:reference"],
        "train": ["train", "--config", str(CONFIGS / "train_rram.yaml")],
    }
    checked, mismatched = 0, []
    for name, argv in runs.items():
        outs = []
        for rep in range(2):
            out = tmp_path / f"{name}{rep}"
            assert main(argv + ["--seed", "3", "--out", str(out)]) == 0
            outs.append(out)
        files = _csvs(outs[0])
        assert files == _csvs(outs[1]) and files
        for rel in files + [Path("manifest.yaml")]:
            checked += 1
            if not filecmp.cmp(outs[0] / rel, outs[1] / rel, shallow=False):
                mismatched.append(f"{name}/{rel}")
    criterion(12, not mismatched, f"{checked} files compared, mismatches: {mismatched or 'none'}")
