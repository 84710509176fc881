"""``holoquant`` command-line entry point.

Exit codes: 0 success, 1 usage or config error, 2 data or validation error,
3 internal error.  ``HOLOQUANT_THREADS`` sets the worker count for sweeps.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (
    BudgetError,
    codebook_ablation,
    pruning_sweep,
    pruning_vs_vq,
    stack_coefficients,
    svd_spectrum,
    vq_budget_bits,
    write_comparison_csv,
    write_spectrum_csv,
)
from .config import ConfigError, load_config, parse_config
from .gsb import CompressedNetwork, VQConfig, compress_network, network_r_squared
from .kan import KanNetwork, ShapeError
from .lutham.bench import bench_iso_latency, make_iso_family, max_min_ratio, write_bench_csv
from .lutham.fileformat import ModelFormatError, load_model, save_model
from .lutham.plan import PlanningError, header_of, plan_memory
from .lutham.report import compression_report, file_bytes, header_report, per_edge_bits
from .lutham.runtime import NonFiniteInputError, Workspace, WorkspaceError, compressed_forward
from .quant import QuantizationError, quantize_network
from .trainer import TrainingError, init_network, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3
THREADS_ENV = "HOLOQUANT_THREADS"
MODES = ("spectrum", "prune-sweep", "ablation", "prune-vs-vq")
RUN_CHUNK = 1024


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _out_dir(args) -> Path:
    d = Path(args.out_dir)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _manifest(out: Path, command: str, args, seeds: dict, outputs, config=None, extra=None):
    doc = {
        "tool": "holoquant",
        "version": __version__,
        "command": command,
        "args": {k: v for k, v in sorted(vars(args).items()) if k != "func"},
        "seeds": seeds,
        "config": config.echo() if config is not None else None,
        "outputs": sorted(str(p) for p in outputs),
        "threads_env": os.environ.get(THREADS_ENV),
    }
    if extra:
        doc.update(extra)
    path = out / "manifest.json"
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, default=str) + "\n")
    return path


def _load(path):
    try:
        return load_model(path)
    except FileNotFoundError:
        raise DataError(f"model file not found: {path}") from None
    except IsADirectoryError:
        raise DataError(f"model path is a directory: {path}") from None


def _plots():
    # imported lazily so the data-only commands never touch matplotlib
    from . import plotting

    return plotting


def _csv_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


# -- train ---------------------------------------------------------------


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    seed = cfg.get("train", "seed") if args.seed is None else args.seed
    m = cfg.values["model"]
    task = cfg.task()
    if task.input_dim != m["dims"][0] or m["dims"][-1] != 1:
        raise ConfigError(
            f"model.dims {list(m['dims'])} must start at the task width {task.input_dim} and end at 1",
            cfg.lines.get(("model", "dims")),
            "model.dims",
        )
    tc = cfg.train_config(seed)
    net = init_network(m["dims"], m["grid_size"], tc.init_sigma, seed, tuple(m["domain"]))
    trained, history = train(net, task, tc)
    out = _out_dir(args)
    model_path = out / "model.skan"
    save_model(trained.astype(np.float32), model_path)
    loss_path = out / "loss.csv"
    _csv_rows(loss_path, ("epoch", "train_mse"), [(e, repr(float(v))) for e, v in enumerate(history, 1)])
    outputs = [model_path, loss_path, _plots().plot_loss(history, out / "loss.png")]
    _manifest(out, "train", args, {"train": seed, "task": task.seed}, outputs, cfg)
    print(f"trained {m['dims']} G={m['grid_size']} for {tc.epochs} epochs; final train MSE {history[-1]:.6g}")
    print(f"wrote {model_path}")
    return EXIT_OK


# -- compress / quantize -------------------------------------------------


def _storage_lines(model) -> list[str]:
    return [
        f"layer {i} per-edge storage: {per_edge_bits(h)} bits"
        for i, h in enumerate(header_of(model).layers)
    ]


def _section(args, name):
    """Values of one config section: file entries and defaults, overridden by given flags."""
    cfg = load_config(args.config, require=()) if args.config else parse_config("", require=())
    values = dict(cfg.values[name])
    for key in values:
        flag = getattr(args, key, None)
        if flag is not None and flag is not False:
            values[key] = flag
    return cfg, values


def cmd_compress(args) -> int:
    cfg, c = _section(args, "compress")
    if c["k"] < 1:
        raise UsageError("--k must be >= 1")
    if c["restarts"] < 1:
        raise UsageError("--restarts must be >= 1")
    net = _load(args.model)
    if not isinstance(net, KanNetwork):
        raise DataError(f"{args.model} is already compressed; compress expects a dense model")
    seed = c["seed"]
    vq = VQConfig(iters=c["iters"], batch=c["batch"], restarts=c["restarts"], seed=seed)
    cn = compress_network(net, c["k"], vq)
    if c["int8"]:
        cn = quantize_network(cn)
    per_layer, agg = network_r_squared(net, cn)
    out = _out_dir(args)
    model_path = out / "compressed.skan"
    save_model(cn, model_path)
    r2_path = out / "r2.csv"
    rows = [(str(i), repr(float(r))) for i, r in enumerate(per_layer)] + [("aggregate", repr(float(agg)))]
    _csv_rows(r2_path, ("layer", "r2"), rows)
    storage_path = out / "storage.csv"
    report = compression_report(net, cn)
    report.to_csv(storage_path)
    for i, r in enumerate(per_layer):
        print(f"layer {i} R^2: {r:.6f}")
    print(f"aggregate R^2: {agg:.6f}")
    for line in _storage_lines(cn):
        print(line)
    total = report["compressed_storage"]
    print(f"compressed storage: {total.bytes:,} B ({total.ratio:.3g}x)")
    _manifest(out, "compress", args, {"vq": seed}, [model_path, r2_path, storage_path],
              cfg if args.config else None, extra={"compress": c})
    return EXIT_OK


def cmd_quantize(args) -> int:
    cn = _load(args.model)
    if not isinstance(cn, CompressedNetwork):
        raise DataError(f"{args.model} is a dense model; quantize expects a compressed one")
    q = quantize_network(cn)
    out = _out_dir(args)
    model_path = out / "quantized.skan"
    save_model(q, model_path)
    for line in _storage_lines(q):
        print(line)
    _manifest(out, "quantize", args, {}, [model_path])
    return EXIT_OK


# -- run -----------------------------------------------------------------


def _read_inputs(path, width: int) -> np.ndarray:
    rows = []
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise DataError(f"cannot read input CSV {path}: {exc.strerror}") from None
    with fh:
        for n, row in enumerate(csv.reader(fh), start=1):
            if not row or (len(row) == 1 and not row[0].strip()) or row[0].lstrip().startswith("#"):
                continue
            if len(row) != width:
                raise DataError(f"row {n}: expected {width} columns, got {len(row)}")
            try:
                vals = [float(v) for v in row]
            except ValueError:
                raise DataError(f"row {n}: malformed value in {row!r}") from None
            if not all(np.isfinite(vals)):
                raise DataError(f"row {n}: non-finite value")
            rows.append(vals)
    return np.array(rows, dtype=np.float64).reshape(len(rows), width)


def cmd_run(args) -> int:
    model = _load(args.model)
    x = _read_inputs(args.inputs, model.in_dim)
    out = _out_dir(args)
    out_path = Path(args.output) if args.output else out / "outputs.csv"
    ws = Workspace(model, max(1, min(len(x), RUN_CHUNK)))
    with open(out_path, "w", newline="") as fh:
        w = csv.writer(fh)
        for start in range(0, len(x), RUN_CHUNK):
            y = compressed_forward(model, x[start : start + RUN_CHUNK], ws)
            w.writerows([[repr(float(v)) for v in r] for r in y])
    _manifest(out, "run", args, {}, [out_path], extra={"rows": int(len(x))})
    print(f"{len(x)} rows -> {out_path}")
    return EXIT_OK


# -- bench ---------------------------------------------------------------


def cmd_bench(args) -> int:
    cfg, bc = _section(args, "bench")
    if args.models:
        if len(args.models) < 2:
            raise UsageError("bench needs at least two models (or none with --grid-sizes)")
        models = [_load(p) for p in args.models]
        source = [str(p) for p in args.models]
    else:
        sizes = [int(g) for g in args.grid_sizes.split(",")]
        models = make_iso_family(args.dims, sizes, K=args.k or 256, seed=args.seed or 0, int8=args.int8)
        source = f"synthetic dims={args.dims} G={sizes}"
    try:
        stats = bench_iso_latency(models, bc["batch"], bc["repeats"], bc["warmup"], args.inner, args.seed or 0)
    except ValueError as exc:
        raise DataError(str(exc)) from None
    out = _out_dir(args)
    csv_path = out / "latency.csv"
    write_bench_csv(stats, csv_path)
    png = _plots().plot_latency(stats, out / "latency.png")
    for s in stats:
        print(f"G={s.G:4d}  median {s.median_us:9.2f} us  IQR [{s.p25_us:.2f}, {s.p75_us:.2f}]  "
              f"interpolations/edge {s.interpolations_per_edge:g}")
    print(f"max/min median ratio: {max_min_ratio(stats):.3f}")
    _manifest(
        out, "bench", args, {"inputs": args.seed or 0}, [csv_path, png], cfg if args.config else None,
        extra={"batch": bc["batch"], "warmup": bc["warmup"], "repeats": bc["repeats"], "models": source},
    )
    return EXIT_OK


# -- analyze -------------------------------------------------------------


def _spectrum_summary(rep, label):
    s = rep.cumulative
    lines = [f"{label}: rank-1: {100 * s[0]:.1f}% at r=1"]
    for p, r in rep.thresholds.items():
        lines.append(f"{label}: {100 * p:.0f}% variance at r={r} of {s.size}")
    return lines


def cmd_analyze(args) -> int:
    net = _load(args.model)
    if not isinstance(net, KanNetwork):
        raise DataError("analyze expects a dense model")
    out = _out_dir(args)
    cfg = None
    if args.config:
        cfg = load_config(args.config, require=("task",))
    elif args.mode != "spectrum":
        raise UsageError(f"--mode {args.mode} needs --config with a [task] section")
    summary, outputs = [], []
    plots = _plots()
    if args.mode == "spectrum":
        m = stack_coefficients(net)
        raw, cen = svd_spectrum(m), svd_spectrum(m, center=True)
        for rep, name in ((raw, "spectrum.csv"), (cen, "spectrum_centered.csv")):
            write_spectrum_csv(rep, out / name)
            outputs.append(out / name)
            summary += _spectrum_summary(rep, "centered" if rep.centered else "raw")
        outputs.append(plots.plot_spectrum([raw, cen], out / "spectrum.png"))
        seeds = {}
    else:
        task = cfg.task(net.in_dim)
        if task.input_dim != net.in_dim:
            raise DataError(f"task width {task.input_dim} does not match model input width {net.in_dim}")
        a = cfg.values["analyze"]
        count = cfg.values["task"]["test_samples"]
        seeds = {"task": task.seed}
        if args.mode == "prune-sweep":
            curve = pruning_sweep(net, task, sorted(set(a["sparsities"])), count)
            curve.to_csv(out / "sweep.csv")
            outputs += [out / "sweep.csv", plots.plot_sweep(curve, out / "sweep.png", "sparsity", "test MSE", logy=True)]
            summary += [f"sparsity {x:g}: test MSE {y:.6g} ({y / curve.y[0]:.2f}x baseline)" for x, y in zip(curve.x, curve.y)]
        elif args.mode == "ablation":
            ks = sorted(set(args.k_list or a["k_list"]))
            seeds["vq"] = list(a["seeds"])
            res = codebook_ablation(net, ks, a["seeds"], task, a["iters"], count)
            res.r2.to_csv(out / "ablation.csv", seed=" ".join(map(str, a["seeds"])))
            res.mse_delta.to_csv(out / "ablation_mse.csv", seed=" ".join(map(str, a["seeds"])))
            outputs += [out / "ablation.csv", out / "ablation_mse.csv", plots.plot_r2(res.r2, out / "ablation.png")]
            summary += [f"K={k}: best R^2 {r:.6f}, test MSE delta {d:+.3g}" for k, r, d in zip(res.r2.x, res.r2.y, res.mse_delta.y)]
        else:
            budgets = list(a["budgets"]) or _default_budgets(net)
            seed = 0 if args.seed is None else args.seed
            seeds["vq"] = seed
            rows = pruning_vs_vq(net, task, budgets, args.restarts or a["restarts"], a["iters"], seed, True, count)
            write_comparison_csv(rows, out / "comparison.csv")
            outputs += [out / "comparison.csv", plots.plot_comparison(rows, out / "comparison.png")]
            wins = sum(r.vq_inflation < r.prune_inflation for r in rows)
            for r in rows:
                summary.append(
                    f"budget {r.budget_bits:.0f} bits: pruning s={r.sparsity:.3f} MSE {r.prune_mse:.4g} "
                    f"({r.prune_mse / r.baseline_mse:.2f}x), VQ K={r.K} MSE {r.vq_mse:.4g} "
                    f"({r.vq_mse / r.baseline_mse:.2f}x)"
                )
            summary.append(f"VQ wins at {wins} of {len(rows)} budgets")
    summary_path = out / "summary.txt"
    summary_path.write_text("\n".join(summary) + "\n")
    outputs.append(summary_path)
    print("\n".join(summary))
    _manifest(out, "analyze", args, seeds, outputs, cfg)
    return EXIT_OK


def _default_budgets(net: KanNetwork) -> list[float]:
    """Budgets at the int8 VQ size for K = 2, 4, 8, ... up to the smallest layer's edge count."""
    top = min(l.num_edges for l in net.layers)
    ks, k = [], 2
    while k <= top:
        ks.append(k)
        k *= 2
    return sorted({float(vq_budget_bits(net, k)) for k in ks or [1]})


# -- inspect -------------------------------------------------------------

_KIND_NAMES = {0: "dense float32", 1: "vq float32", 2: "vq int8"}


def cmd_inspect(args) -> int:
    model = _load(args.model)
    header = header_of(model)
    plan = plan_memory(header, args.batch)
    lines = [
        f"file: {args.model} ({Path(args.model).stat().st_size:,} B, format v1)",
        f"layers: {len(header.layers)}  dims: {model.dims}  edges: {model.num_edges:,}",
    ]
    for i, (h, lp) in enumerate(zip(header.layers, plan.layers)):
        lines.append(
            f"layer {i}: {_KIND_NAMES[h.kind]}  {h.in_dim}->{h.out_dim}  E={h.num_edges:,} "
            f"G={h.grid_size} K={h.K} domain=[{h.domain_lo:g}, {h.domain_hi:g}]"
        )
        if h.K:
            lines.append(f"  index bits: {h.index_bits}  per-edge storage: {per_edge_bits(h)} bits")
            lines.append(f"  codebook: {lp.codebook_bytes:,} B")
            lines.append(f"  indices: {lp.index_bytes:,} B packed, {lp.unpacked_index_bytes:,} B unpacked")
            lines.append(f"  gains: {lp.gain_bytes:,} B  biases: {lp.bias_bytes:,} B")
            if h.kind == 2:
                lines.append(
                    f"  quant: codebook scale {h.codebook_scale!r}, bias scale {h.bias_scale!r}, "
                    f"gain log2 min {h.gain_log_min!r} step {h.gain_log_step!r}"
                )
        else:
            lines.append(f"  coefficients: {lp.dense_bytes:,} B")
    lines += [
        f"memory plan (batch {args.batch}):",
        f"  payload: {plan.payload_bytes:,} B",
        f"  resident: {plan.resident_bytes:,} B",
        f"  scratch: {plan.scratch_bytes:,} B",
        f"  working set: {plan.working_set_bytes:,} B",
        f"  file: {file_bytes(header):,} B",
    ]
    dense_hdr = type(header)(tuple(type(h)(h.in_dim, h.out_dim, h.grid_size, 0, 0) for h in header.layers))
    rep = header_report(dense_hdr, header, args.batch)
    lines.append("compression vs dense float32:")
    if rep.notes == ["uncompressed"]:
        lines.append("  uncompressed")
    else:
        for name in ("compressed_storage", "compressed_resident", "compressed_file"):
            r = rep[name]
            lines.append(f"  {name}: {r.bytes:,} B  ({r.ratio:.3g}x)")
    print("\n".join(lines))
    return EXIT_OK


# -- wiring --------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="holoquant", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"holoquant {__version__}")
    sub = p.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    sub.required = True

    def common(sp, seed=True):
        sp.add_argument("--out-dir", default=".", help="directory for outputs and manifest.json")
        if seed:
            sp.add_argument("--seed", type=int, default=None)

    t = sub.add_parser("train", help="train a dense model from a config file")
    t.add_argument("--config", required=True)
    common(t)
    t.set_defaults(func=cmd_train)

    c = sub.add_parser("compress", help="GSB-VQ compress a dense model")
    c.add_argument("model")
    c.add_argument("--config", default=None, help="reads the [compress] section; flags override it")
    c.add_argument("--k", type=int, default=None)
    c.add_argument("--restarts", type=int, default=None)
    c.add_argument("--iters", type=int, default=None)
    c.add_argument("--int8", action="store_true", help="also quantize codebook, gains and biases")
    common(c)
    c.set_defaults(func=cmd_compress)

    q = sub.add_parser("quantize", help="int8-quantize a compressed model")
    q.add_argument("model")
    common(q, seed=False)
    q.set_defaults(func=cmd_quantize)

    r = sub.add_parser("run", help="evaluate a model on rows of an input CSV")
    r.add_argument("model")
    r.add_argument("inputs")
    r.add_argument("--output", default=None, help="output CSV (default OUT_DIR/outputs.csv)")
    common(r, seed=False)
    r.set_defaults(func=cmd_run)

    b = sub.add_parser("bench", help="median latency across models differing only in G")
    b.add_argument("models", nargs="*")
    b.add_argument("--grid-sizes", default="5,128", help="synthetic family when no models are given")
    b.add_argument("--dims", type=lambda s: [int(v) for v in s.split(",")], default=[8, 32, 8])
    b.add_argument("--k", type=int, default=None)
    b.add_argument("--int8", action="store_true")
    b.add_argument("--config", default=None, help="reads the [bench] section; flags override it")
    b.add_argument("--batch", type=int, default=None)
    b.add_argument("--repeats", type=int, default=None)
    b.add_argument("--warmup", type=int, default=None)
    b.add_argument("--inner", type=int, default=1)
    common(b)
    b.set_defaults(func=cmd_bench)

    a = sub.add_parser("analyze", help="spectrum, pruning sweep, codebook ablation or pruning vs VQ")
    a.add_argument("model")
    a.add_argument("--mode", required=True, choices=MODES)
    a.add_argument("--config", default=None, help="task config (required except for spectrum)")
    a.add_argument("--k", dest="k_list", type=lambda s: [int(v) for v in s.split(",")], default=None,
                   help="comma-separated K list for ablation")
    a.add_argument("--restarts", type=int, default=None)
    common(a)
    a.set_defaults(func=cmd_analyze)

    i = sub.add_parser("inspect", help="print header, memory plan and storage ratios")
    i.add_argument("model")
    i.add_argument("--batch", type=int, default=1)
    i.set_defaults(func=cmd_inspect)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    try:
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        print(f"holoquant: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ModelFormatError as exc:
        print(f"holoquant: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (DataError, ShapeError, WorkspaceError, NonFiniteInputError, PlanningError,
            QuantizationError, TrainingError, BudgetError) as exc:
        print(f"holoquant: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        print(f"holoquant: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
