"""Command-line entry points: generate | train | evaluate | report.

Output layout under the run directory::

    config.json                     resolved config echo
    data/{source,target}/           generated datasets (manifest.json + CSVs)
    data/target_test/               held-out target maps used for scoring
    runs/<method>/                  checkpoint.npz, report.json, losses.csv
    report/                         table.json, table.txt, loss_curves.png, importance.{json,png}
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .benchmark import BenchmarkData, run_method
from .config import ConfigError, ExperimentConfig, load_config
from .data import PlaceTypeDataset, load_dataset, save_dataset, split_dataset, subset_expand
from .encoder import load_checkpoint, save_checkpoint
from .evaluation import MetricReport, adaptation_table, format_table, interpret_place_type
from .synthetic import generate_place_type, write_generated
from .trainer import RunReport, evaluate_model, train

OUTPUT_ROOT_ENV = "SPATIAL_UDA_OUTPUT_ROOT"
EXIT_OK, EXIT_ERROR, EXIT_MISSING_ROWS = 0, 1, 2

log = logging.getLogger("spatial_uda.cli")


class JsonLineFormatter(logging.Formatter):
    def format(self, record: logging.LogRecord) -> str:
        msg = record.getMessage()
        try:
            payload = json.loads(msg)
        except json.JSONDecodeError:
            payload = None
        if not isinstance(payload, dict):
            payload = {"message": msg}
        return json.dumps({"ts": round(record.created, 3), "level": record.levelname.lower(), "logger": record.name, **payload})


def _setup_logging(verbose: bool) -> None:
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(JsonLineFormatter())
    root = logging.getLogger("spatial_uda")
    root.handlers[:] = [handler]
    root.setLevel(logging.INFO)
    root.propagate = False
    # per-epoch trainer events only on request
    logging.getLogger("spatial_uda.trainer").setLevel(logging.INFO if verbose else logging.WARNING)


def _event(name: str, **fields) -> None:
    log.info(json.dumps({"event": name, **fields}, default=str))


class OutputExists(RuntimeError):
    pass


def _claim(paths, overwrite: bool) -> None:
    taken = [str(p) for p in paths if Path(p).exists()]
    if taken and not overwrite:
        raise OutputExists(f"refusing to overwrite existing outputs (pass --overwrite): {taken}")


def output_dir(cfg: ExperimentConfig, cli_out: str | None) -> Path:
    if cli_out:
        return Path(cli_out)
    if cfg.output_dir:
        return Path(cfg.output_dir)
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "runs")) / cfg.task.name


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _echo_config(cfg: ExperimentConfig, out: Path) -> None:
    _write(out / "config.json", json.dumps(cfg.model_dump(mode="json"), indent=1, sort_keys=True) + "\n")


# -- generate ---------------------------------------------------------------------------


def _generate_one(gen_cfg):
    return generate_place_type(gen_cfg)


def cmd_generate(cfg: ExperimentConfig, out: Path, overwrite: bool = False, jobs: int = 1) -> dict[str, Path]:
    sides = [s for s in ("source", "target") if getattr(cfg, s).manifest is None]
    if not sides:
        raise ConfigError("both datasets come from manifests; nothing to generate")
    gen_cfgs = {s: cfg.gen_config(s) for s in sides}
    _claim([out / "data" / s for s in sides], overwrite)
    if jobs > 1 and len(sides) > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(sides))) as pool:
            datasets = dict(zip(sides, pool.map(_generate_one, [gen_cfgs[s] for s in sides])))
    else:
        datasets = {s: _generate_one(gen_cfgs[s]) for s in sides}
    written = {}
    for s in sides:
        written[s] = write_generated(datasets[s], gen_cfgs[s], out / "data" / s)
        _event("generated", side=s, place_type=datasets[s].place_type_id, maps=len(datasets[s]), manifest=written[s])
    _echo_config(cfg, out)
    return written


# -- train --------------------------------------------------------------------------------


def _dataset(cfg: ExperimentConfig, out: Path, side: str) -> PlaceTypeDataset:
    manifest = getattr(cfg, side).manifest
    path = Path(manifest) if manifest else out / "data" / side / "manifest.json"
    if not path.is_file():
        raise FileNotFoundError(f"{side} dataset missing at {path}; run `generate` first or set {side}.manifest")
    return load_dataset(path)


def prepare_data(cfg: ExperimentConfig, out: Path) -> BenchmarkData:
    """FPS-subset both place-types and hold out a labelled target test split when labels exist."""
    source = subset_expand(_dataset(cfg, out, "source"), cfg.subset_size)
    target = subset_expand(_dataset(cfg, out, "target"), cfg.subset_size)
    if target.is_labeled:
        t_train, t_val, t_test = split_dataset(target, cfg.split())
    else:
        t_train, t_val, t_test = target, None, None
    return BenchmarkData(source, t_train, t_val, t_test)


def _run_dir(out: Path, method: str) -> Path:
    return out / "runs" / method


def cmd_train(cfg: ExperimentConfig, out: Path, overwrite: bool = False) -> dict[str, RunReport]:
    _claim([_run_dir(out, m) for m in cfg.methods], overwrite)
    data = prepare_data(cfg, out)
    if data.target_test is not None:
        save_dataset(data.target_test, out / "data" / "target_test")
    enc_cfg = cfg.encoder_config(len(data.source.vocabulary))
    reports = {}
    for method in cfg.methods:
        tcfg = cfg.train_config(method)
        _event("train_start", method=method, seed=cfg.seed)
        if data.target_test is not None:
            _, report, model = run_method(data, method, cfg.seed, tcfg, enc_cfg, cfg.mix_config())
        elif method == "supervised":
            raise ValueError("the supervised row needs a labelled target dataset")
        else:
            model, report = train(data.source, data.target_train, tcfg, enc_cfg, cfg.mix_config())
        d = _run_dir(out, method)
        d.mkdir(parents=True, exist_ok=True)
        save_checkpoint(model, d / "checkpoint.npz", extra={"method": method, "seed": cfg.seed})
        _write(d / "report.json", report.to_json())
        _write(d / "timing.json", json.dumps({"wall_clock_s": report.wall_clock_s}) + "\n")
        _write(d / "losses.csv", report.loss_csv())
        reports[method] = report
        _event("train_done", method=method, best_epoch=report.best_epoch, test=report.test)
    _echo_config(cfg, out)
    return reports


# -- evaluate ------------------------------------------------------------------------


def evaluate_checkpoint(checkpoint: Path, manifest: Path) -> MetricReport:
    model, _ = load_checkpoint(checkpoint)
    return evaluate_model(model, load_dataset(manifest))


def cmd_evaluate(
    cfg: ExperimentConfig,
    out: Path,
    checkpoint: str | None = None,
    manifest: str | None = None,
    overwrite: bool = False,
) -> dict[str, dict]:
    """Score checkpoints on a labelled manifest and compare with the training reports."""
    manifest = Path(manifest) if manifest else out / "data" / "target_test" / "manifest.json"
    if checkpoint:
        targets = {Path(checkpoint).parent.name: Path(checkpoint)}
    else:
        targets = {p.parent.name: p for p in sorted((out / "runs").glob("*/checkpoint.npz"))}
    if not targets:
        raise FileNotFoundError(f"no checkpoints found under {out / 'runs'}")
    dests = {name: ck.parent / "evaluation.json" for name, ck in targets.items()}
    _claim(dests.values(), overwrite)
    results = {}
    for name, ck in targets.items():
        metrics = evaluate_checkpoint(ck, manifest)
        doc = {"checkpoint": str(ck), "manifest": str(manifest), "metrics": metrics.to_dict()}
        report_path = ck.parent / "report.json"
        if report_path.is_file():
            recorded = json.loads(report_path.read_text(encoding="utf-8"))["test"].get(load_dataset(manifest).place_type_id)
            doc["matches_report"] = recorded == metrics.to_dict() if recorded is not None else None
        _write(dests[name], json.dumps(doc, indent=1, sort_keys=True) + "\n")
        results[name] = doc
        _event("evaluated", run=name, accuracy=metrics.accuracy, f1=metrics.f1, matches_report=doc.get("matches_report"))
    return results


# -- report ------------------------------------------------------------------------------


def _plot_losses(reports: dict[str, RunReport], path: Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, axes = plt.subplots(1, len(reports), figsize=(4 * len(reports), 3.2), squeeze=False)
    for ax, (name, rep) in zip(axes[0], reports.items()):
        epochs = [e["epoch"] for e in rep.epochs]
        for term in rep.epochs[0]["losses"]:
            values = [e["losses"][term] for e in rep.epochs]
            if any(v != 0 for v in values):
                ax.plot(epochs, values, label=term, lw=2 if term == "total" else 1)
        ax.set_title(name)
        ax.set_xlabel("epoch")
        ax.legend(fontsize=7)
    axes[0][0].set_ylabel("mean batch loss")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def cmd_report(cfg: ExperimentConfig, out: Path, overwrite: bool = False) -> int:
    """Comparison table, loss curves and co-location importance. Returns the exit code."""
    dest = out / "report"
    _claim([dest], overwrite)
    runs = {p.parent.name: RunReport.from_dict(json.loads(p.read_text(encoding="utf-8"))) for p in sorted((out / "runs").glob("*/report.json"))}
    if not runs:
        raise FileNotFoundError(f"no run reports under {out / 'runs'}")
    target_id = cfg.task.target
    metrics = {name: MetricReport.from_dict(r.test[target_id]) for name, r in runs.items() if target_id in r.test}
    table = adaptation_table(metrics, allow_missing=True)
    dest.mkdir(parents=True, exist_ok=True)
    _write(dest / "table.json", json.dumps(table, indent=1, sort_keys=True) + "\n")
    text = format_table(table)
    _write(dest / "table.txt", text + "\n")
    print(text)
    _plot_losses(runs, dest / "loss_curves.png")
    try:
        target = _dataset(cfg, out, "target")
    except FileNotFoundError:
        target = None
    if target is not None and target.is_labeled:
        imp = interpret_place_type(target, cfg.split(), n_repeats=cfg.importance_repeats)
        imp.save(dest / "importance.json", plot=True)
        _event("importance", top=imp.top(3))
    if table["missing"]:
        print(f"missing rows: {', '.join(table['missing'])}", file=sys.stderr)
        return EXIT_MISSING_ROWS
    return EXIT_OK


# -- argument parsing --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config JSON")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out", help=f"run directory (default: config output_dir, else ${OUTPUT_ROOT_ENV}/<task>)")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="dotted config override, repeatable")
    common.add_argument("--overwrite", action="store_true", help="replace existing outputs")
    common.add_argument("--jobs", type=int, default=1, help="worker processes for pure stages")
    common.add_argument("-v", "--verbose", action="store_true", help="log per-epoch events")

    parser = argparse.ArgumentParser(prog="spatial-uda", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", parents=[common], help="write synthetic source/target datasets")
    sub.add_parser("train", parents=[common], help="train every configured method")
    ev = sub.add_parser("evaluate", parents=[common], help="score checkpoints on a labelled manifest")
    ev.add_argument("--checkpoint", help="one checkpoint (default: every run under --out)")
    ev.add_argument("--manifest", help="labelled manifest (default: the held-out target split)")
    sub.add_parser("report", parents=[common], help="comparison table, loss curves, importance")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _setup_logging(args.verbose)
    try:
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        cfg = load_config(args.config, args.set, args.seed)
        out = output_dir(cfg, args.out)
        if args.command == "generate":
            cmd_generate(cfg, out, args.overwrite, args.jobs)
        elif args.command == "train":
            cmd_train(cfg, out, args.overwrite)
        elif args.command == "evaluate":
            results = cmd_evaluate(cfg, out, args.checkpoint, args.manifest, args.overwrite)
            if any(r.get("matches_report") is False for r in results.values()):
                print("evaluation disagrees with the recorded training report", file=sys.stderr)
                return EXIT_ERROR
        else:
            return cmd_report(cfg, out, args.overwrite)
    except (ConfigError, OutputExists, FileNotFoundError, ValueError, KeyError) as exc:
        _event("error", kind=type(exc).__name__, detail=str(exc))
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
