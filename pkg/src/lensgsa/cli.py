"""Command-line pipeline: generate, train, evaluate, sobol, propagate, report, run-all.

Every command reads one JSON config, validates it before touching the disk
and writes its artifacts under the output directory. Exit codes: 0 success,
1 usage or config error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import dataset as D
from . import surrogate as S
from .assembly import INPUT_LABELS, OUTPUT_LABELS, AssemblyModel, NonConvergence
from .config import ConfigError, PipelineConfig, load_config, parse_config
from .propagate import propagate
from .sobol import run_convergence
from .svg import histogram_svg

DATASET_FILE = "dataset.csv"
MODEL_FILE = "model.json"
METRICS_FILE = "metrics.json"
HISTORY_FILE = "loss_history.csv"
SOBOL_FILES = {"total": "sobol_total.csv", "first_order": "sobol_first_order.csv"}
SOBOL_TRACE = "sobol_trace.json"
UQ_STATS = "uq_stats.csv"
UQ_TRACE = "uq_trace.json"
HIST_DIR = "histograms"
REPORT_FILE = "report.md"
CONFIG_COPY = "config.json"


class UsageError(Exception):
    pass


class StageError(RuntimeError):
    """A required artifact is missing or unreadable."""


def _fmt(v) -> str:
    return "%.17g" % v


def _write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _write_json(path: Path, doc) -> None:
    _write_text(path, json.dumps(doc, indent=1, sort_keys=True) + "\n")


def _write_csv(path: Path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([c if isinstance(c, str) else _fmt(c) for c in row])
    _write_text(path, buf.getvalue())


def _read_json(path: Path):
    if not path.exists():
        raise StageError(f"missing artifact {path}")
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise StageError(f"corrupt JSON in {path}: {exc}") from exc


class Run:
    """Resolved config plus artifact paths for one invocation."""

    def __init__(self, config: PipelineConfig, dataset_path=None, model_path=None, verbose=True):
        self.config = config
        self.out = Path(config.output_dir)
        self.dataset_path = Path(dataset_path) if dataset_path else self.out / DATASET_FILE
        self.model_path = Path(model_path) if model_path else self.out / MODEL_FILE
        self.verbose = verbose

    def log(self, msg: str) -> None:
        if self.verbose:
            print(msg, flush=True)

    def save_config(self) -> None:
        _write_text(self.out / CONFIG_COPY, self.config.to_json())

    def evaluator(self, kind: str):
        if kind == "direct-model":
            return AssemblyModel(self.config.assembly.to_params()).fit()
        if not self.model_path.exists():
            raise StageError(f"surrogate evaluator needs {self.model_path}; run `train` first "
                             "or pass --evaluator direct-model")
        net = S.load_network(self.model_path)
        return lambda X: S.predict(net, X)

    def load_dataset(self) -> D.Dataset:
        if not self.dataset_path.exists():
            raise StageError(f"missing dataset {self.dataset_path}; run `generate` first")
        return D.load(self.dataset_path, params=self.config.assembly.to_params())


def cmd_generate(run: Run) -> None:
    cfg = run.config.dataset
    t0 = time.perf_counter()
    X = D.sample_inputs(cfg.size, cfg.lower, cfg.upper, seed=cfg.seed)
    ds = D.generate(X, run.config.assembly.to_params(), workers=run.config.workers, seed=cfg.seed)
    if cfg.n_train is not None:
        ds = D.split(ds, seed=cfg.split_seed, n_train=cfg.n_train, n_test=cfg.n_test)
    else:
        ds = D.split(ds, cfg.train_fraction, seed=cfg.split_seed)
    ds.norm = D.compute_norm(ds)
    D.save(ds, run.dataset_path)
    run.save_config()
    run.log(f"generate: {len(ds)} rows ({ds.train_idx.size} train / {ds.test_idx.size} test), "
            f"0 failures, {time.perf_counter() - t0:.1f} s -> {run.dataset_path}")


def _metrics(net, ds) -> dict:
    return {which: S.evaluate(net, ds, which).to_dict() for which in ("train", "test")}


def cmd_train(run: Run) -> None:
    ds = run.load_dataset()
    if not ds.has_split:
        raise StageError(f"{run.dataset_path} has no train/test split")
    config = run.config.network.to_config()
    t0 = time.perf_counter()
    net, history = S.train(S.init(config), D.standardize(ds), config, verbose=run.verbose)
    S.save_network(net, run.model_path)
    _write_csv(run.out / HISTORY_FILE, ["epoch", "loss", "val_loss"],
               [(str(k), a, b) for k, (a, b) in enumerate(zip(history.loss, history.val_loss))])
    metrics = _metrics(net, ds)
    _write_json(run.out / METRICS_FILE, metrics)
    run.save_config()
    run.log(f"train: {net.n_parameters} parameters, {time.perf_counter() - t0:.1f} s; "
            f"test R2 {metrics['test']['r2']:.6f}, avg {metrics['test']['avg_pct']:.3f}%, "
            f"max {metrics['test']['max_pct']:.3f}%")


def cmd_evaluate(run: Run) -> None:
    ds = run.load_dataset()
    if not run.model_path.exists():
        raise StageError(f"missing model {run.model_path}; run `train` first")
    metrics = _metrics(S.load_network(run.model_path), ds)
    _write_json(run.out / METRICS_FILE, metrics)
    for which in ("train", "test"):
        m = metrics[which]
        run.log(f"{which:5s}  R2 {m['r2']:.6f}  avg {m['avg_pct']:.3f}%  max {m['max_pct']:.3f}%")


def _index_rows(matrix):
    # stored (inputs, outputs); written one row per output
    return [(OUTPUT_LABELS[j], *matrix[:, j]) for j in range(matrix.shape[1])]


def cmd_sobol(run: Run) -> None:
    cfg = run.config.sobol
    f = run.evaluator(cfg.evaluator)
    t0 = time.perf_counter()
    res = run_convergence(f, cfg.lower, cfg.upper, n_start=cfg.n_start, n_max=cfg.n_max,
                          growth_factor=cfg.growth_factor, seed=cfg.seed)
    for key, name in SOBOL_FILES.items():
        _write_csv(run.out / name, ["output", *INPUT_LABELS], _index_rows(getattr(res, key)))
    _write_json(run.out / SOBOL_TRACE, {
        "evaluator": cfg.evaluator,
        "seed": cfg.seed,
        "inputs": list(INPUT_LABELS),
        "outputs": list(OUTPUT_LABELS),
        "levels": [{"n": lv.n, "first_order": lv.first_order.tolist(), "total": lv.total.tolist()}
                   for lv in res.trace],
        "final": {
            "first_order": res.first_order.tolist(),
            "total": res.total.tolist(),
            "negative_first_order": res.negative_first_order.tolist(),
            "negative_total": res.negative_total.tolist(),
        },
    })
    run.save_config()
    run.log(f"sobol: {len(res.trace)} levels up to N={res.trace[-1].n} ({cfg.evaluator}), "
            f"{time.perf_counter() - t0:.1f} s")


def cmd_propagate(run: Run) -> None:
    cfg = run.config.propagate
    f = run.evaluator(cfg.evaluator)
    t0 = time.perf_counter()
    res = propagate(f, cfg.lower, cfg.upper, n_final=cfg.n_final, n_start=cfg.n_start,
                    seed=cfg.seed, n_bins=cfg.n_bins)
    _write_csv(run.out / UQ_STATS, ["output", "mean", "std"],
               [(OUTPUT_LABELS[j], res.mean[j], res.std[j]) for j in range(res.mean.size)])
    _write_json(run.out / UQ_TRACE, {
        "evaluator": cfg.evaluator,
        "seed": cfg.seed,
        "outputs": list(OUTPUT_LABELS),
        "levels": [{"n": lv.n, "mean": lv.mean.tolist(), "std": lv.std.tolist()} for lv in res.trace],
    })
    for label, h in zip(OUTPUT_LABELS, res.histograms):
        _write_csv(run.out / HIST_DIR / f"{label}.csv", ["bin_left", "bin_right", "count", "density"],
                   [(a, b, str(int(c)), d) for a, b, c, d in
                    zip(h.bin_edges[:-1], h.bin_edges[1:], h.counts, h.densities)])
        _write_text(run.out / HIST_DIR / f"{label}.svg", histogram_svg(h, label.replace("_", " ")))
    run.save_config()
    run.log(f"propagate: N={res.trace[-1].n} ({cfg.evaluator}), {time.perf_counter() - t0:.1f} s")


def _read_index_csv(path: Path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if rows[0] != ["output", *INPUT_LABELS] or len(rows) != len(OUTPUT_LABELS) + 1:
        raise StageError(f"unexpected layout in {path}")
    return [(r[0], [float(v) for v in r[1:]]) for r in rows[1:]]


def _table(header, rows) -> list:
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    lines += ["| " + " | ".join(row) + " |" for row in rows]
    return lines


def render_report(out: Path) -> str:
    """Markdown summary of whatever stages have produced artifacts in ``out``."""
    absent = "_Stage not run: artifacts absent._"
    md = ["# Lens assembly sensitivity and uncertainty report", ""]

    md += ["## Surrogate accuracy", ""]
    if (out / METRICS_FILE).exists():
        m = _read_json(out / METRICS_FILE)
        try:
            rows = [[k, f"{m[k]['r2']:.6f}", f"{m[k]['avg_pct']:.4f}", f"{m[k]['max_pct']:.4f}"]
                    for k in ("train", "test")]
        except (KeyError, TypeError) as exc:
            raise StageError(f"malformed {out / METRICS_FILE}: {exc}") from exc
        md += _table(["split", "R²", "avg error (%)", "max error (%)"], rows)
    else:
        md.append(absent)
    md.append("")

    for key, title in (("total", "Total Sobol indices"), ("first_order", "First-order Sobol indices")):
        md += [f"## {title}", ""]
        path = out / SOBOL_FILES[key]
        if path.exists():
            if (out / SOBOL_TRACE).exists():
                _read_json(out / SOBOL_TRACE)
            rows = []
            for label, vals in _read_index_csv(path):
                best = int(np.argmax(vals))
                cells = [f"**{v:.4f}**" if i == best else f"{v:.4f}" for i, v in enumerate(vals)]
                rows.append([label, *cells])
            md += _table(["output", *INPUT_LABELS], rows)
        else:
            md.append(absent)
        md.append("")

    md += ["## Uncertainty propagation", ""]
    if (out / UQ_STATS).exists():
        trace = _read_json(out / UQ_TRACE)
        sizes = [lv["n"] for lv in trace.get("levels", [])]
        md.append(f"Monte-Carlo levels: {', '.join(str(n) for n in sizes)}.")
        md.append("")
        with open(out / UQ_STATS, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))[1:]
        md += _table(["output", "mean (μm)", "std (μm)"],
                     [[r[0], f"{float(r[1]):.5f}", f"{float(r[2]):.5f}"] for r in rows])
        md.append("")
        for label in OUTPUT_LABELS:
            if (out / HIST_DIR / f"{label}.svg").exists():
                md.append(f"![{label}]({HIST_DIR}/{label}.svg)")
    else:
        md.append(absent)
    md.append("")
    return "\n".join(md)


def cmd_report(run: Run) -> None:
    text = render_report(run.out)
    _write_text(run.out / REPORT_FILE, text)
    run.log(f"report: {run.out / REPORT_FILE}")


def cmd_run_all(run: Run) -> None:
    for step in (cmd_generate, cmd_train, cmd_sobol, cmd_propagate, cmd_report):
        step(run)


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "sobol": cmd_sobol,
    "propagate": cmd_propagate,
    "report": cmd_report,
    "run-all": cmd_run_all,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", required=True, help="pipeline JSON config")
    common.add_argument("--seed", type=int, help="base seed; every stage seed is derived from it")
    common.add_argument("--workers", type=int, help="processes for data generation")
    common.add_argument("--out", help="output directory (overrides output_dir)")
    common.add_argument("--evaluator", choices=("surrogate", "direct-model"),
                        help="model used by sobol and propagate")
    common.add_argument("--dataset", help="dataset CSV (default: <out>/dataset.csv)")
    common.add_argument("--model", help="model JSON (default: <out>/model.json)")
    common.add_argument("-q", "--quiet", action="store_true", help="suppress progress output")

    parser = _Parser(prog="lensgsa", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def resolve_config(args) -> PipelineConfig:
    config = load_config(args.config)
    if args.seed is not None:
        config = config.with_seed(args.seed)
    if args.evaluator is not None:
        config = config.with_evaluator(args.evaluator)
    overrides = {}
    if args.workers is not None:
        overrides["workers"] = args.workers
    if args.out is not None:
        overrides["output_dir"] = args.out
    if overrides:
        config = parse_config({**config.model_dump(), **overrides})
    return config


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        config = resolve_config(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    run = Run(config, args.dataset, args.model, verbose=not args.quiet)
    try:
        COMMANDS[args.command](run)
    except NonConvergence as exc:
        print(f"error: forward model did not converge: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # any runtime failure maps to exit code 2
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
