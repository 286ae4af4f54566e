"""Command-line entry point: ``xbarsim {mvm,bounds,train,program,devices}``.

Every run writes its outputs plus a ``manifest.yaml`` (resolved config, its
hash, the seed, library versions and output checksums) into ``--out``.
Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import platform
import shutil
import sys
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from . import bitslice as bs
from . import crossbar as xb
from . import design_space as ds
from . import devices
from .datasets import load_csv, load_digits, load_idx, make_blobs
from .programming import write_verify
from .seeding import substream
from .training import AnalogNetwork, NetworkSpec
from .update import DifferentialPair

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2
_BUILTIN = Path(__file__).with_name("data")


class ConfigError(Exception):
    """Bad usage, configuration or input file; maps to exit code 2."""


# ---------------------------------------------------------------------------
# file helpers


def read_matrix_csv(path) -> np.ndarray:
    """Comma-separated numeric rows; a non-numeric first line is a header."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"{path}: no such file")
    rows = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rows.append([float(p) for p in line.split(",")])
        except ValueError:
            if lineno == 1:
                continue
            raise ConfigError(f"{path}:{lineno}: non-numeric field") from None
        if len(rows[-1]) != len(rows[0]):
            raise ConfigError(f"{path}:{lineno}: expected {len(rows[0])} fields, "
                              f"found {len(rows[-1])}")
    if not rows:
        raise ConfigError(f"{path}: no data rows")
    return np.array(rows)


def read_vector_csv(path) -> np.ndarray:
    """A single row, a single column, or ``index,value`` pairs."""
    path = Path(path)
    data = read_matrix_csv(path)
    first = path.read_text().split("\n", 1)[0].strip().lower()
    if first.startswith("index") and data.shape[1] == 2:
        return data[:, 1]
    if 1 in data.shape:
        return data.ravel()
    raise ConfigError(f"{path}: expected a vector, found a {data.shape[0]}x{data.shape[1]} table")


def _fmt(value) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (np.integer,)):
        return str(int(value))
    return "" if value is None else str(value)


def write_matrix_csv(matrix, path):
    with open(path, "w") as fh:
        for row in np.atleast_2d(matrix):
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def write_rows_csv(rows: list[dict], path):
    if not rows:
        Path(path).write_text("")
        return
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(list(rows[0]))
        for row in rows:
            writer.writerow([_fmt(v) for v in row.values()])


def _plain(obj):
    """Recursively convert numpy scalars so YAML output is stable."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


def write_yaml(data, path):
    Path(path).write_text(yaml.safe_dump(_plain(data), sort_keys=True))


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(out: Path, command: str, config: dict, seed: int, files=None,
                   name: str = "manifest.yaml"):
    """Record what is needed to reproduce every file in ``out`` (or just ``files``)."""
    import scipy
    import sklearn

    canonical = yaml.safe_dump(_plain(config), sort_keys=True)
    if files is None:
        files = (p for p in out.rglob("*") if p.is_file() and not p.name.endswith("manifest.yaml"))
    outputs = {}
    for path in sorted(files):
        outputs[path.relative_to(out).as_posix()] = _sha256(path)
    manifest = {
        "command": command,
        "seed": seed,
        "config": _plain(config),
        "config_sha256": hashlib.sha256(canonical.encode()).hexdigest(),
        "versions": {"xbarsim": __version__, "python": platform.python_version(),
                     "numpy": np.__version__, "scipy": scipy.__version__,
                     "pyyaml": yaml.__version__, "scikit-learn": sklearn.__version__},
        "outputs": outputs,
    }
    write_yaml(manifest, out / name)


# ---------------------------------------------------------------------------
# configuration


def load_config(path) -> tuple[dict, Path]:
    """YAML mapping plus the directory relative paths are resolved against."""
    if path is None:
        return {}, Path.cwd()
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"{path}: no such config file")
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config must be a mapping")
    return raw, path.parent


def _resolve(base: Path, value):
    if value is None:
        return None
    p = Path(value)
    return p if p.is_absolute() else base / p


def _device(name) -> devices.DeviceParams:
    try:
        return devices.get_preset(str(name))
    except KeyError as exc:
        raise ConfigError(exc.args[0]) from None


def _crossbar_config(section: dict | None, rows=1, cols=1) -> xb.CrossbarConfig:
    section = dict(section or {})
    allowed = {"r_wire", "v_read", "t_int", "temperature", "adc_bits", "adc_energy_per_sample",
               "adc_share"}
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"unknown crossbar keys {sorted(unknown)}")
    try:
        return xb.CrossbarConfig(rows, cols, **section)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"crossbar: {exc}") from None


def _prepare_out(out) -> Path:
    if out is None:
        raise ConfigError("--out is required")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# subcommands


def cmd_mvm(args) -> int:
    cfg, base = load_config(args.config)
    mode = args.mode or cfg.get("mode", "ideal")
    if mode not in ("ideal", "nonideal", "bitsliced"):
        raise ConfigError(f"mvm mode must be ideal, nonideal or bitsliced, got {mode!r}")
    matrix_path = Path(args.matrix) if args.matrix else _resolve(base, cfg.get("matrix"))
    vector_path = Path(args.vector) if args.vector else _resolve(base, cfg.get("vector"))
    if matrix_path is None or vector_path is None:
        raise ConfigError("mvm needs --matrix and --vector (or config keys)")
    matrix = read_matrix_csv(matrix_path)
    vector = read_vector_csv(vector_path)
    if vector.size != matrix.shape[0]:
        raise ConfigError(f"vector has {vector.size} entries, matrix has {matrix.shape[0]} rows")
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    device = _device(cfg.get("device", "ideal"))
    acc = xb.Accounting()
    rows, cols = matrix.shape

    if mode == "bitsliced":
        wb = int(cfg.get("weight_bits", 4))
        ib = int(cfg.get("input_bits", 4))
        b = int(cfg.get("bits_per_cell", 2))
        tile = cfg.get("tile", [min(rows, 128), min(cols, 128)])
        if not (np.all(matrix == np.round(matrix)) and np.all(vector == np.round(vector))):
            raise ConfigError("bit-sliced mode needs integer matrix and vector entries")
        W = matrix.astype(np.int64)
        x = vector.astype(np.int64)
        try:
            plan = bs.plan_slices(rows, cols, wb, ib, b, tuple(tile), device)
            q = bs.QuantizedMatrix(W, wb)
            elec = _crossbar_config(cfg.get("crossbar"), plan.tile_rows, plan.tile_cols)
            if "adc_bits" not in (cfg.get("crossbar") or {}):
                elec = elec.replace(adc_bits=plan.adc_bits)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        tiles = bs.make_tiles(plan, device, elec, substream(seed, "mvm", "devices"))
        tiles, report = bs.program_weights(plan, q, tiles, substream(seed, "mvm", "program"),
                                           accounting=acc)
        noise_mode = cfg.get("read", "ideal")
        try:
            result = bs.mvm_bitsliced(plan, tiles, x, noise_mode, substream(seed, "mvm", "noise"),
                                      solver=cfg.get("solver", "exact"), accounting=acc)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        oracle = x @ W
        err = float(np.max(np.abs(result - oracle)))
        passed = noise_mode != "ideal" or err == 0
    else:
        elec = _crossbar_config(cfg.get("crossbar"), rows, cols)
        if np.any(matrix < device.g_min) or np.any(matrix > device.g_max):
            raise ConfigError(f"conductances must lie in [{device.g_min}, {device.g_max}] S "
                              f"for device {device.name!r}")
        state = xb.CrossbarState(elec, device, matrix.copy(), np.zeros_like(matrix),
                                 np.zeros(matrix.shape, dtype=np.int64), np.ones_like(matrix))
        try:
            if mode == "ideal":
                result = xb.mvm_ideal(state, vector, accounting=acc)
            else:
                result = xb.mvm_nonideal(state, vector, substream(seed, "mvm", "noise"),
                                         solver=cfg.get("solver", "exact"), accounting=acc)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        xb.adc_quantize(np.clip(result, 0, None), state, accounting=acc)
        oracle = vector @ matrix
        scale = max(float(np.max(np.abs(oracle))), np.finfo(float).tiny)
        err = float(np.max(np.abs(result - oracle))) / scale
        tol = float(cfg.get("oracle_tolerance", 1e-12 if mode == "ideal" else 0.05))
        passed = err <= tol

    out = _prepare_out(args.out)
    xb.write_vector_csv(result, out / "output.csv",
                        header="value" if mode == "bitsliced" else "current_A")
    summary = acc.as_dict()
    summary["oracle_max_error"] = err
    write_yaml(summary, out / "accounting.yaml")
    config = {"mode": mode, "matrix": str(matrix_path), "vector": str(vector_path),
              "device": device.name, **{k: v for k, v in cfg.items()
                                        if k not in ("mode", "matrix", "vector", "device")}}
    write_manifest(out, "mvm", config, seed)
    if args.oracle:
        print(f"oracle check {'PASS' if passed else 'FAIL'}: max error {err:.3e}")
        if not passed:
            return EXIT_RUNTIME
    return EXIT_OK


def cmd_bounds(args) -> int:
    cfg, base = load_config(args.config)
    grid_arg = args.grid or cfg.get("grid_file")
    if grid_arg is not None and str(grid_arg).startswith("builtin:"):
        grid_path = _BUILTIN / "grids" / f"{str(grid_arg)[8:]}.yaml"
        if not grid_path.is_file():
            raise ConfigError(f"no built-in grid {grid_arg!r}")
    else:
        grid_path = _resolve(Path.cwd() if args.grid else base, grid_arg)
    if grid_path is not None:
        if not grid_path.is_file():
            raise ConfigError(f"{grid_path}: no such grid file")
        try:
            grid = ds.load_grid(grid_path)
        except (ValueError, yaml.YAMLError) as exc:
            raise ConfigError(str(exc)) from None
    elif isinstance(cfg.get("grid"), dict):
        grid = cfg["grid"]
    else:
        raise ConfigError("bounds needs --grid or a 'grid' mapping in the config")
    try:
        rows = ds.sweep(grid)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad grid: {exc}") from None
    seed = 0 if args.seed is None else args.seed
    if args.out is not None and str(args.out).endswith(".csv"):
        # a file target: the manifest goes next to it
        target = Path(args.out)
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(ds.rows_to_csv(rows))
        write_manifest(target.parent, "bounds", {"grid": grid}, seed, files=[target],
                       name=f"{target.stem}.manifest.yaml")
    else:
        target = _prepare_out(args.out) / "bounds.csv"
        target.write_text(ds.rows_to_csv(rows))
        write_manifest(target.parent, "bounds", {"grid": grid}, seed)
    print(f"{len(rows)} design points written to {target}")
    return EXIT_OK


_TRAIN_KEYS = {"seed", "mode", "device", "network", "crossbar", "mvm", "adc_bits", "zero_shift",
               "pulse_length", "w_max", "solver", "data"}


def _load_dataset(section: dict, base: Path, seed: int):
    source = section.get("source", "digits")
    if source == "digits":
        data = load_digits()
    elif source == "blobs":
        data = make_blobs(int(section.get("n_samples", 600)), int(section.get("n_features", 16)),
                          int(section.get("n_classes", 4)), seed=seed)
    elif source == "csv":
        path = _resolve(base, section.get("path"))
        if path is None or not path.is_file():
            raise ConfigError(f"data.path {path}: no such file")
        try:
            data = load_csv(path, section.get("max_value"))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    elif source == "idx":
        images = _resolve(base, section.get("images"))
        labels = _resolve(base, section.get("labels"))
        for p in (images, labels):
            if p is None or not p.is_file():
                raise ConfigError(f"{p}: no such IDX file")
        data = load_idx(images, labels, int(section.get("downsample", 1)))
    else:
        raise ConfigError(f"unknown data source {source!r}")
    train, test = data.split(float(section.get("test_fraction", 0.25)), seed)
    if section.get("limit") is not None:
        train = train.subset(np.arange(min(int(section["limit"]), len(train))))
    if section.get("test_limit") is not None:
        test = test.subset(np.arange(min(int(section["test_limit"]), len(test))))
    return train, test


def _build_network(cfg: dict, n_features: int, n_classes: int, seed: int, mode: str):
    net_cfg = dict(cfg.get("network") or {})
    dims = net_cfg.pop("dims", None)
    if dims is None:
        dims = [n_features, *net_cfg.pop("hidden", [32]), n_classes]
    dims = list(dims)
    if dims[0] != n_features or dims[-1] != n_classes:
        raise ConfigError(f"network dims {dims} do not match the data "
                          f"({n_features} features, {n_classes} classes)")
    try:
        spec = NetworkSpec(tuple(dims), net_cfg.get("activation", "relu"),
                           float(net_cfg.get("eta", 0.05)), int(net_cfg.get("epochs", 3)), seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    device = _device(cfg.get("device", "ideal")) if mode == "analog" else None
    noise = cfg.get("noise") or {}
    if device is not None and "read_rel_sigma" in noise:
        device = device.replace(read_rel_sigma=float(noise["read_rel_sigma"]))
    try:
        return AnalogNetwork(spec, mode, device, config=_crossbar_config(cfg.get("crossbar")),
                             mvm=cfg.get("mvm", "ideal"), adc_bits=cfg.get("adc_bits"),
                             pulse_length=int(cfg.get("pulse_length", 32)),
                             zero_shift=bool(cfg.get("zero_shift", False)),
                             w_max=float(cfg.get("w_max", 1.0)), solver=cfg.get("solver", "approx"))
    except devices.UnsupportedUpdateError as exc:
        raise ConfigError(f"unsupported device/update combination: {exc}") from None
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def cmd_train(args) -> int:
    cfg, base = load_config(args.config)
    unknown = set(cfg) - _TRAIN_KEYS - {"noise"}
    if unknown:
        raise ConfigError(f"unknown train config keys {sorted(unknown)}")
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    mode = args.mode or cfg.get("mode", "float")
    if mode not in ("float", "analog"):
        raise ConfigError(f"train mode must be float or analog, got {mode!r}")
    train, test = _load_dataset(dict(cfg.get("data") or {}), base, seed)
    net = _build_network(cfg, train.X.shape[1], train.n_classes, seed, mode)

    history, start = [], 0
    out = _prepare_out(args.out)
    snaps = out / "snapshots"
    if args.resume is not None:
        prev = Path(args.resume)
        if not (prev / "snapshots" / "final" / "network.yaml").is_file():
            raise ConfigError(f"{prev}: no final snapshot to resume from")
        try:
            net.restore(prev / "snapshots" / "final")
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        with open(prev / "metrics.csv") as fh:
            history = [dict(r) for r in csv.DictReader(fh)]
        start = len(history)
        if prev.resolve() != out.resolve():
            if (snaps / "initial").exists():
                shutil.rmtree(snaps / "initial")
            shutil.copytree(prev / "snapshots" / "initial", snaps / "initial")
    else:
        net.save(snaps / "initial", seed)

    def log(epoch, row):
        report = net.evaluate(test, seed=epoch)
        row["test_accuracy"] = report.accuracy
        row["eval_energy"] = report.total_energy
        print(f"epoch {epoch}: loss {row['mean_loss']:.4f} test accuracy {report.accuracy:.4f}")

    new = net.fit(train, epochs=max(net.spec.epochs - start, 0), start_epoch=start, callback=log)
    history.extend({k: _fmt(v) for k, v in row.items()} for row in new)
    write_rows_csv(history, out / "metrics.csv")
    if (snaps / "final").exists():
        shutil.rmtree(snaps / "final")
    net.save(snaps / "final", seed)
    resolved = {**cfg, "mode": mode, "seed": seed}
    write_manifest(out, "train", resolved, seed)
    return EXIT_OK


def cmd_program(args) -> int:
    cfg, base = load_config(args.config)
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    matrix_path = Path(args.matrix) if args.matrix else _resolve(base, cfg.get("matrix"))
    if matrix_path is None:
        raise ConfigError("program needs --matrix (or a 'matrix' config key)")
    weights = read_matrix_csv(matrix_path)
    device = _device(cfg.get("device", "rram"))
    w_max = float(cfg.get("w_max", 1.0))
    if np.any(np.abs(weights) > w_max):
        raise ConfigError(f"weights exceed w_max={w_max}")
    elec = _crossbar_config(cfg.get("crossbar"), *weights.shape)
    pair = DifferentialPair.create(elec, device, substream(seed, "program", "devices"), w_max=w_max)
    rng = substream(seed, "program", "write")
    tol = cfg.get("tolerance")
    max_pulses = int(cfg.get("max_pulses", 200))
    acc = xb.Accounting()
    report = write_verify(pair.minus, pair.ref_minus, rng, tolerance=tol, max_pulses=max_pulses,
                          accounting=acc)
    report.merge(write_verify(pair.plus, pair.ref_plus + weights / pair.w_scale, rng,
                              tolerance=tol, max_pulses=max_pulses, accounting=acc))
    out = _prepare_out(args.out)
    write_matrix_csv(pair.weights(), out / "programmed_weights.csv")
    write_yaml(report.as_dict(), out / "program_report.yaml")
    xb.save_snapshot(pair.plus, out / "plus.xbar", seed)
    xb.save_snapshot(pair.minus, out / "minus.xbar", seed)
    write_manifest(out, "program", {**cfg, "matrix": str(matrix_path), "device": device.name},
                   seed)
    print(f"programmed {report.cells} cells, {report.pulses} pulses, "
          f"verified {report.verified_fraction:.4f}")
    return EXIT_OK


def cmd_devices(args) -> int:
    presets = devices.load_presets()
    rows = []
    for name, p in presets.items():
        rows.append({"name": name, "g_min": p.g_min, "g_max": p.g_max,
                     "on_off_ratio": p.on_off_ratio, "bits_per_cell": p.bits_per_cell,
                     "response": p.response_kind.value, "drift": p.drift_kind.value,
                     "write_energy": p.write_energy, "write_latency": p.write_latency,
                     "endurance": p.endurance})
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(list(rows[0]))
    for row in rows:
        writer.writerow([_fmt(v) for v in row.values()])
    sys.stdout.write(buf.getvalue())
    if args.out is not None:
        out = _prepare_out(args.out)
        (out / "devices.csv").write_text(buf.getvalue())
        write_manifest(out, "devices", {}, 0 if args.seed is None else args.seed)
    return EXIT_OK


# ---------------------------------------------------------------------------
# dispatch


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="YAML run configuration")
    common.add_argument("--seed", type=int, help="master seed (overrides the config)")
    common.add_argument("--out", help="output directory (bounds also accepts a .csv path)")
    common.add_argument("--mode", help="mvm: ideal|nonideal|bitsliced; train: float|analog")

    parser = _Parser(prog="xbarsim", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"xbarsim {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("mvm", parents=[common], help="matrix-vector product on a crossbar")
    p.add_argument("--matrix", help="CSV matrix (conductances in S, or integers when bit-sliced)")
    p.add_argument("--vector", help="CSV vector (row voltages in V, or integers when bit-sliced)")
    p.add_argument("--oracle", action="store_true", help="compare against a numpy product")
    p.set_defaults(func=cmd_mvm)

    p = sub.add_parser("bounds", parents=[common], help="sweep the co-design bounds")
    p.add_argument("action", nargs="?", choices=["sweep"], default="sweep",
                   help="only 'sweep' is available (the default)")
    p.add_argument("--grid", help="YAML grid file, or builtin:<name>")
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("train", parents=[common], help="train a network on crossbars")
    p.add_argument("--resume", help="output directory of an earlier run to continue")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("program", parents=[common], help="write-verify a weight matrix")
    p.add_argument("--matrix", help="CSV of logical weights")
    p.set_defaults(func=cmd_program)

    p = sub.add_parser("devices", parents=[common], help="list device presets")
    p.set_defaults(func=cmd_devices)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - any other failure is a runtime error
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
