"""Command-line front end: ``qmdn gen-data | train | eval | plot | report``.

Exit codes: 0 success, 2 configuration/usage errors, 3 runtime aborts.
Outputs default to ``$QMDN_OUTPUT_ROOT`` (or ``./runs``).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from . import __version__
from .data import DataFormatError, Dataset, gen_double_slit, gen_logistic, load_csv, load_meta, save_csv
from .evaluation import (
    DEFAULT_GRIDS,
    EVAL_XS,
    crossing_epoch,
    density_grid,
    detect_modes,
    held_out_nll,
    kl_to_truth,
    modes_csv,
    sample_predictions,
    write_json,
)
from .models import CLASSICAL_PARAMS, load_model, param_count, save_model
from .svg import density_svg, loss_history_svg, scatter_svg
from .train import TrainConfig, TrainingAborted, TrainReport, train_ensemble, write_report

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3
ENV_OUTPUT_ROOT = "QMDN_OUTPUT_ROOT"
BENCHMARKS = ("double-slit", "logistic")
PUBLISHED_CLASSICAL_PARAMS = 105
SCATTER_POINTS = 2000
SAMPLES_PER_X = 200

log = logging.getLogger("qmdn")


class ConfigError(Exception):
    pass


def output_root() -> Path:
    return Path(os.environ.get(ENV_OUTPUT_ROOT, "runs"))


def write_manifest(out_dir: Path, command: str, config: dict, inputs: list, outputs: list, seed, name="manifest.json") -> None:
    manifest = {
        "command": command,
        "config": config,
        "inputs": [str(p) for p in inputs],
        "outputs": sorted(str(p) for p in outputs),
        "seed": seed,
        "version": __version__,
    }
    write_json(manifest, out_dir / name)


def read_config_file(path) -> dict:
    """Plain ``key = value`` lines; ``#`` starts a comment; dashes and underscores are interchangeable."""
    values = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        values[key.strip().replace("-", "_")] = value.strip()
    return values


def resolve_train_config(args) -> TrainConfig:
    file_values = read_config_file(args.config) if args.config else {}
    kwargs = {}
    for f in fields(TrainConfig):
        cli_value = getattr(args, f.name, None)
        if cli_value is not None:
            kwargs[f.name] = cli_value
        elif f.name in file_values:
            try:
                kwargs[f.name] = type(f.default)(file_values[f.name])
            except ValueError as exc:
                raise ConfigError(f"bad value for {f.name}: {file_values[f.name]!r}") from exc
    unknown = set(file_values) - {f.name for f in fields(TrainConfig)} - {"workers"}
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    try:
        return TrainConfig(**kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _load_dataset(path):
    try:
        return load_csv(path)
    except FileNotFoundError as exc:
        raise ConfigError(f"data file not found: {path}") from exc
    except DataFormatError as exc:
        raise ConfigError(str(exc)) from exc


# ---------------------------------------------------------------------------
# gen-data
# ---------------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    if args.benchmark == "double-slit":
        n = 20000 if args.n is None else args.n
        seed = 0 if args.seed is None else args.seed
        if n < 1:
            raise ConfigError("--n must be positive")
        ds = gen_double_slit(n, seed)
    else:
        if args.n is not None and args.n != 15000:
            raise ConfigError("the logistic dataset is fixed at 150 x 100 = 15000 points")
        ds = gen_logistic()
        seed = None
    out = Path(args.out) if args.out else output_root() / "data" / f"{args.benchmark}.csv"
    try:
        out.parent.mkdir(parents=True, exist_ok=True)
        save_csv(ds, out)
    except OSError as exc:
        raise ConfigError(f"cannot write {out}: {exc}") from exc
    write_manifest(
        out.parent,
        "gen-data",
        {"benchmark": args.benchmark, "n": len(ds)},
        [],
        [out, out.with_name(out.name + ".meta")],
        seed,
        name=f"{out.name}.manifest.json",
    )
    print(f"wrote {len(ds)} rows to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

def cmd_train(args) -> int:
    cfg = resolve_train_config(args)
    ds = _load_dataset(args.data)
    out = Path(args.out) if args.out else output_root() / "models" / args.model
    out.mkdir(parents=True, exist_ok=True)
    workers = 1 if args.strict_sequential else args.workers
    log.info("training %d %s member(s) on %s", cfg.ensemble_size, args.model, args.data)
    results = train_ensemble(args.model, ds, cfg, workers=workers)
    outputs, timing = [], {}
    for k, (model, report) in enumerate(results):
        stem = f"{args.model}_{k:02d}"
        save_model(model, out / f"{stem}.model")
        write_report(report, out, stem)
        outputs += [out / f"{stem}.model", out / f"{stem}.json", out / f"{stem}_loss.csv"]
        timing[stem] = report.wall_clock
        print(f"{stem}: seed {report.seed}, final NLL {report.final_loss:.4f}")
    # wall-clock is the only non-reproducible output, so it lives in its own file
    write_json(timing, out / "timing.json")
    meta = load_meta(args.data)
    config = asdict(cfg) | {"model": args.model, "benchmark": meta.get("generator"), "workers": workers}
    write_manifest(out, "train", config, [args.data], outputs, cfg.seed)
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------

def _load_member_dir(path: Path):
    if not path.is_dir():
        raise ConfigError(f"models directory not found: {path}")
    members = []
    for model_path in sorted(path.glob("*.model")):
        report_path = model_path.with_suffix(".json")
        report = TrainReport.from_json(report_path.read_text()) if report_path.exists() else None
        try:
            model = load_model(model_path)
        except (ValueError, KeyError) as exc:
            raise ConfigError(f"{model_path}: {exc}") from exc
        members.append((model_path.stem, model, report))
    if not members:
        raise ConfigError(f"no *.model files in {path}")
    manifest = path / "manifest.json"
    bench = json.loads(manifest.read_text())["config"].get("benchmark") if manifest.exists() else None
    return members, bench


def _check_benchmark(model, bench: str, trained_on, source) -> None:
    if trained_on is not None and trained_on != bench:
        raise ConfigError(f"{source}: models were trained on {trained_on!r}, not {bench!r}")
    lo, hi = (0.0, 1.0) if bench == "double-slit" else (2.5, 4.0)
    tol = 1e-6 + 0.05 * (hi - lo)
    if model.norm.x_min < lo - tol or model.norm.x_max > hi + tol:
        raise ConfigError(
            f"{source}: model input range [{model.norm.x_min:g}, {model.norm.x_max:g}] does not match {bench}"
        )


def _stats(values) -> dict:
    v = np.asarray(values, dtype=float)
    return {"mean": float(v.mean()), "std": float(v.std()), "min": float(v.min()), "max": float(v.max())}


def cmd_eval(args) -> int:
    bench = args.benchmark
    ds = _load_dataset(args.data)
    out = Path(args.out) if args.out else output_root() / "eval" / bench
    out.mkdir(parents=True, exist_ok=True)
    y_min, y_max, n_points = DEFAULT_GRIDS[bench]
    grid = np.linspace(y_min, y_max, n_points)
    rng = np.random.default_rng(args.seed)
    # fixed scatter subset so the sample overlay stays a manageable size
    pick = np.sort(np.random.default_rng(args.seed).permutation(len(ds))[: min(SCATTER_POINTS, len(ds))])
    outputs = []
    summary = {"benchmark": bench, "eval_xs": list(EVAL_XS[bench]), "members": {}, "ensembles": {}, "param_counts": {}}
    histories = {}

    for models_dir in args.models:
        members, trained_on = _load_member_dir(Path(models_dir))
        for name, model, report in members:
            _check_benchmark(model, bench, trained_on, models_dir)
            kind = model.kind
            entry = {
                "params": param_count(model),
                "held_out_nll": held_out_nll(model, ds),
                "final_train_nll": report.final_loss if report else None,
                "modes": {},
                "kl_to_truth": {},
            }
            summary["param_counts"][kind] = param_count(model)
            for x in EVAL_XS[bench]:
                curve = density_grid(model, x, y_min, y_max, n_points)
                modes = detect_modes(curve, args.mode_threshold)
                tag = f"{name}_x{x:g}"
                (out / f"density_{tag}.csv").write_text(curve.to_csv())
                (out / f"modes_{tag}.csv").write_text(modes_csv(modes))
                outputs += [out / f"density_{tag}.csv", out / f"modes_{tag}.csv"]
                entry["modes"][f"{x:g}"] = [m[0] for m in modes]
                if bench == "double-slit":
                    entry["kl_to_truth"][f"{x:g}"] = kl_to_truth(model, x, grid)
            samples = sample_predictions(model, ds.x[pick], rng)
            per_x = sample_predictions(model, np.repeat(EVAL_XS[bench], SAMPLES_PER_X), rng)
            for label, s in (("samples", samples), ("samples_at_x", per_x)):
                path = out / f"{label}_{name}.csv"
                save_csv(s, path)
                outputs += [path, path.with_name(path.name + ".meta")]
            summary["members"].setdefault(kind, {})[name] = entry
            if report:
                histories.setdefault(kind, []).append(report.losses)

    for kind, members in summary["members"].items():
        finals = [m["final_train_nll"] for m in members.values() if m["final_train_nll"] is not None]
        ens = {
            "n_members": len(members),
            "held_out_nll": _stats([m["held_out_nll"] for m in members.values()]),
            "mode_counts": {
                f"{x:g}": [len(m["modes"][f"{x:g}"]) for m in members.values()] for x in EVAL_XS[bench]
            },
        }
        if finals:
            ens["final_train_nll"] = _stats(finals)
        if bench == "double-slit":
            ens["kl_to_truth_median"] = {
                f"{x:g}": float(np.median([m["kl_to_truth"][f"{x:g}"] for m in members.values()]))
                for x in EVAL_XS[bench]
            }
        summary["ensembles"][kind] = ens
    if "mdn" in histories and "qmdn" in histories:
        summary["crossing_epoch"] = crossing_epoch(
            np.mean(histories["mdn"], axis=0), np.mean(histories["qmdn"], axis=0)
        )
    summary["notes"] = parameter_note()

    truth = out / "truth_subset.csv"
    save_csv(Dataset(ds.x[pick], ds.y[pick], {"generator": "truth-subset", "n": int(pick.size)}), truth)
    outputs += [truth, truth.with_name(truth.name + ".meta"), out / "summary.json"]
    write_json(summary, out / "summary.json")
    write_manifest(
        out,
        "eval",
        {"benchmark": bench, "grid": [y_min, y_max, n_points], "mode_threshold": args.mode_threshold},
        [*args.models, args.data],
        outputs,
        args.seed,
    )
    for kind, ens in summary["ensembles"].items():
        fin = ens.get("final_train_nll", {}).get("mean")
        print(f"{kind}: held-out NLL {ens['held_out_nll']['mean']:.4f}" + (f", final train NLL {fin:.4f}" if fin is not None else ""))
    return EXIT_OK


def parameter_note() -> str:
    return (
        f"classical MDN uses 1->5(tanh)->15 = {CLASSICAL_PARAMS} parameters; the published count is "
        f"{PUBLISHED_CLASSICAL_PARAMS}, which no 1->5->(5 or 15) topology reproduces. Q-MDN uses 3 heads x 36 = 108."
    )


# ---------------------------------------------------------------------------
# plot
# ---------------------------------------------------------------------------

def _read_xy_csv(path: Path, columns: tuple[str, str]):
    lines = [ln for ln in path.read_text().splitlines() if ln.strip()]
    if not lines or lines[0].replace(" ", "") != ",".join(columns):
        raise ConfigError(f"{path}: expected header {','.join(columns)}")
    try:
        arr = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]], dtype=float).reshape(-1, 2)
    except ValueError as exc:
        raise ConfigError(f"{path}: malformed row") from exc
    return arr[:, 0], arr[:, 1]


def cmd_plot(args) -> int:
    eval_dir = Path(args.eval_dir)
    summary_path = eval_dir / "summary.json"
    if not summary_path.exists():
        raise ConfigError(f"no summary.json in {eval_dir}")
    summary = json.loads(summary_path.read_text())
    bench = summary["benchmark"]
    out = Path(args.out) if args.out else eval_dir / "figures"
    out.mkdir(parents=True, exist_ok=True)
    y_min, y_max, _ = DEFAULT_GRIDS[bench]
    outputs = []

    histories = {}
    for models_dir in args.models or []:
        for report_path in sorted(Path(models_dir).glob("*.json")):
            if report_path.name in ("manifest.json", "timing.json"):
                continue
            report = TrainReport.from_json(report_path.read_text())
            histories.setdefault(report.model_kind, []).append(report.losses)
    if histories:
        path = out / "loss_history.svg"
        path.write_text(loss_history_svg(histories, f"{bench}: NLL per epoch"))
        outputs.append(path)

    for x in summary["eval_xs"]:
        curves = {}
        for kind, members in summary["members"].items():
            for name in members:
                grid, dens = _read_xy_csv(eval_dir / f"density_{name}_x{x:g}.csv", ("y", "density"))
                curves.setdefault(kind, []).append((grid, dens))
        path = out / f"density_x{x:g}.svg"
        path.write_text(density_svg(curves, f"{bench}: p(y | x={x:g})", (y_min, y_max)))
        outputs.append(path)

    groups = {"truth": _read_xy_csv(eval_dir / "truth_subset.csv", ("x", "y"))}
    for kind, members in summary["members"].items():
        first = sorted(members)[0]
        groups[kind] = _read_xy_csv(eval_dir / f"samples_{first}.csv", ("x", "y"))
    path = out / "scatter.svg"
    tx = groups["truth"][0]
    path.write_text(scatter_svg(groups, f"{bench}: data and model samples", (tx.min(), tx.max(), y_min, y_max)))
    outputs.append(path)

    write_manifest(out, "plot", {"benchmark": bench}, [eval_dir, *(args.models or [])], outputs, None)
    print(f"wrote {len(outputs)} figures to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------

def cmd_report(args) -> int:
    lines = [f"qmdn {__version__}", parameter_note(), ""]
    for eval_dir in args.eval_dirs:
        path = Path(eval_dir) / "summary.json"
        if not path.exists():
            raise ConfigError(f"no summary.json in {eval_dir}")
        s = json.loads(path.read_text())
        lines.append(f"[{s['benchmark']}]")
        for kind, ens in s["ensembles"].items():
            fin = ens.get("final_train_nll")
            lines.append(
                f"  {kind:5s} params={s['param_counts'].get(kind)} members={ens['n_members']} "
                + (f"final train NLL {fin['mean']:.4f} +/- {fin['std']:.4f}  " if fin else "")
                + f"held-out NLL {ens['held_out_nll']['mean']:.4f}"
            )
            for x, counts in ens["mode_counts"].items():
                lines.append(f"    x={x}: detected modes per member {counts} (median {float(np.median(counts)):g})")
            if "kl_to_truth_median" in ens:
                kl = ", ".join(f"x={x}: {v:.4f}" for x, v in ens["kl_to_truth_median"].items())
                lines.append(f"    median KL(truth || model): {kl}")
        if "crossing_epoch" in s:
            lines.append(f"  Q-MDN mean loss below classical from epoch: {s['crossing_epoch']}")
        lines.append("")
    text = "\n".join(lines)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qmdn", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a benchmark dataset")
    g.add_argument("benchmark", choices=BENCHMARKS)
    g.add_argument("--n", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--out", help="CSV path (metadata goes to <path>.meta)")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a model ensemble")
    t.add_argument("model", choices=("mdn", "qmdn"))
    t.add_argument("--data", required=True)
    t.add_argument("--config", help="plain-text key = value file with defaults")
    t.add_argument("--learning-rate", dest="learning_rate", type=float)
    t.add_argument("--batch-size", dest="batch_size", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--ensemble-size", "--ensemble", dest="ensemble_size", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--beta1", type=float)
    t.add_argument("--beta2", type=float)
    t.add_argument("--eps", type=float)
    t.add_argument("--workers", type=int, default=1, help="processes for ensemble members")
    t.add_argument("--strict-sequential", action="store_true", help="force a single process")
    t.add_argument("--out")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate trained ensembles")
    e.add_argument("--models", nargs="+", required=True, help="one or more training output directories")
    e.add_argument("--data", required=True)
    e.add_argument("--benchmark", choices=BENCHMARKS, required=True)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--mode-threshold", type=float, default=0.05)
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    pl = sub.add_parser("plot", help="render SVG figures from an eval directory")
    pl.add_argument("eval_dir")
    pl.add_argument("--models", nargs="*", help="training directories for loss histories")
    pl.add_argument("--out")
    pl.set_defaults(func=cmd_plot)

    r = sub.add_parser("report", help="print a text summary of eval directories")
    r.add_argument("eval_dirs", nargs="+")
    r.add_argument("--out")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingAborted as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
