import argparse
import asyncio
import json
import logging
import os
import sys

# Add src to Python path
sys.path.append(os.path.join(os.path.dirname(__file__), 'src'))

from rich.console import Console
from rich.logging import RichHandler
from rich.table import Table

from config_parser import ConfigParser
from errors import ConfigurationError, DopplerError, NumericalError
from harness.artifact import load_artifact, save_artifact
from harness.dataset import load_split, load_splits, manifest_path
from harness.evaluator import calibrate, evaluate, run_sweep, sweep_sources
from harness.experiments import run_experiments
from harness.oracle import run_oracle, summarize_by_case
from harness.predictor import predict_records
from harness.reports import write_confusion, write_experiments, write_predictions, write_sweep
from harness.trainer import train
from models import ScoreSource
from synth.generator import generate_all
from synth.manifest import load_recordings

console = Console(stderr=True)
logger = logging.getLogger("doppler")


def banner(title: str):
    console.print("=" * 60)
    console.print(f"🫀 DOPPLER CLASSIFIER - {title}")
    console.print("=" * 60)


def load_run(args):
    parser = ConfigParser()
    cfg = parser.parse_run_config(args.config, args.seed)
    cfg.require_seed()
    heads = parser.parse_heads_config(cfg.heads)
    return cfg, heads


async def cmd_gen(args):
    cfg, heads = load_run(args)
    if cfg.phantom is None:
        raise ConfigurationError("run config names no phantom config", field="phantom")
    phantom = ConfigParser().parse_phantom_config(cfg.phantom)
    console.print(f"🚀 Generating phantom datasets ({phantom.rows}x{phantom.cols}, seed {cfg.seed})...")
    paths = await asyncio.to_thread(generate_all, phantom, cfg.seed, cfg.data_dir, cfg.test_shift, heads.table)
    for split, path in paths.items():
        console.print(f"   • {split}: {path}")
    console.print("✅ Datasets generated")


async def cmd_train(args):
    cfg, heads = load_run(args)
    data = load_splits(cfg, ["train", "val"], heads.table, missing_ok=True)
    if "train" not in data:
        data["train"] = load_split(cfg, "train", heads.table)
    console.print(f"🚀 Training {cfg.variant.value} ({cfg.architecture}) for {cfg.epochs} epochs "
                  f"on {len(data['train'])} recordings...")
    artifact = train(cfg, heads, data["train"], data.get("val"), progress=True)
    path = save_artifact(artifact, cfg.artifact)
    history = artifact.metadata["history"]
    if history:
        last = history[-1]
        console.print(f"   • final epoch: loss {last['loss']:.4f}, accuracy {last['accuracy']:.4f}")
    console.print(f"💾 Artifact saved to: {path}")
    console.print("✅ Training completed")


async def cmd_calibrate(args):
    cfg, heads = load_run(args)
    artifact = load_artifact(cfg.artifact)
    recordings = load_split(cfg, "train", heads.table)
    source = ScoreSource(args.source or cfg.score_source)
    console.print(f"🚀 Calibrating {source.value} quantiles on {len(recordings)} training recordings...")
    artifact = await calibrate(artifact, recordings, cfg.quantile_grid.points(), source, cfg.mc, cfg.seed,
                               cfg.chunk_size, cfg.workers)
    save_artifact(artifact, cfg.artifact)
    console.print(f"💾 Calibrated artifact saved to: {cfg.artifact}")
    console.print("✅ Calibration completed")


async def cmd_eval(args):
    cfg, heads = load_run(args)
    artifact = load_artifact(cfg.artifact)
    recordings = load_split(cfg, args.split, artifact.heads.table)
    console.print(f"🚀 Evaluating on {len(recordings)} {args.split} recordings...")
    report = await evaluate(artifact, recordings, args.split, cfg.chunk_size, cfg.workers)
    paths = write_confusion(report, cfg.report_dir)

    table = Table(title=f"{args.split} accuracy {report.accuracy:.2%}")
    table.add_column("class")
    table.add_column("accuracy", justify="right")
    for name, value in report.per_class.items():
        table.add_row(name, "-" if value is None else f"{value:.2%}")
    console.print(table)
    if report.hazards:
        console.print(f"⚠️  {report.hazards} predictions carry the PV-under-CW hazard flag")
    console.print(f"💾 Reports written: {', '.join(str(p) for p in paths)}")
    console.print("✅ Evaluation completed")


async def cmd_sweep(args):
    cfg, heads = load_run(args)
    artifact = load_artifact(cfg.artifact)
    sets = load_splits(cfg, ["test", "unknown", "extra"], artifact.heads.table, missing_ok=True)
    if args.sources:
        train_recordings = load_split(cfg, "train", artifact.heads.table)
        console.print(f"🚀 Sweeping {len(args.sources)} score sources over {', '.join(sets)}...")
        results = await sweep_sources(artifact, train_recordings, sets, args.sources, cfg.quantile_grid.points(),
                                      cfg.mc, cfg.seed, cfg.chunk_size, cfg.workers)
        for source, records in results.items():
            write_sweep(records, cfg.report_dir, name=f"sweep_{source}")
    else:
        console.print(f"🚀 Sweeping the quantile grid over {', '.join(sets)}...")
        records = await run_sweep(artifact, sets, cfg.chunk_size, cfg.workers, cfg.seed)
        write_sweep(records, cfg.report_dir)
        table = Table(title="ignored / error at q = 5%")
        for column in ("dataset", "ignored", "error"):
            table.add_column(column)
        for r in records:
            if abs(r.q - 0.05) < 1e-9:
                table.add_row(r.dataset, f"{r.ignored:.2%}", "-" if r.error is None else f"{r.error:.2%}")
        console.print(table)
    console.print(f"💾 Sweep reports written to: {cfg.report_dir}")
    console.print("✅ Sweep completed")


async def cmd_experiment(args):
    parser = ConfigParser()
    exp_cfg = parser.parse_experiment_config(args.config)
    cfg = parser.parse_run_config(exp_cfg.run, args.seed)
    cfg.require_seed()
    heads = parser.parse_heads_config(cfg.heads)
    console.print(f"🚀 Running experiments {args.only or [e.id for e in exp_cfg.experiments]}...")
    rows, _ = await run_experiments(exp_cfg, cfg, heads, args.only, progress=True)
    path = write_experiments(rows, cfg.report_dir)

    table = Table(title="experiment comparison")
    for column in ("id", "input", "output", "accuracy", "parameters", "size (MB)", "ms/sample"):
        table.add_column(column)
    for row in rows:
        table.add_row(row.id, row.input, row.variant, f"{row.accuracy:.2%}", f"{row.parameters:,}",
                      f"{row.size_mb:.2f}", f"{row.ms_per_sample:.2f}")
    console.print(table)
    console.print(f"💾 Comparison written to: {path}")
    console.print("✅ Experiments completed")


async def cmd_predict(args):
    cfg, _ = load_run(args)
    artifact = load_artifact(args.artifact or cfg.artifact)
    source = args.input or str(manifest_path(cfg, "test"))
    recordings = load_recordings(source)
    lines = await predict_records(artifact, recordings, args.q, cfg.seed, cfg.chunk_size, cfg.workers)
    output = args.output or os.path.join(cfg.report_dir, "predictions.jsonl")
    write_predictions(lines, output)
    for line in lines:
        print(json.dumps(line, sort_keys=True, separators=(",", ":")))
    ignored = sum(1 for line in lines if line["decision"] == "ignored")
    console.print(f"✅ {len(lines)} predictions ({ignored} ignored) written to: {output}")


async def cmd_gradcheck(args):
    cfg, _ = load_run(args)
    console.print(f"🚀 Gradient oracle over {args.seeds} seeds per layer kind plus the {cfg.architecture} model...")
    overrides = dict(cfg.architecture_overrides)
    overrides.setdefault("input_size", cfg.pipeline.crop)
    overrides.setdefault("in_channels", cfg.pipeline.channels)
    results = await asyncio.to_thread(run_oracle, args.seeds, cfg.seed, not args.layers_only, overrides)

    table = Table(title="max relative error (analytic vs central difference)")
    for column in ("case", "max rel. error", "checked", "skipped", "status"):
        table.add_column(column)
    for case, worst, checked, skipped, ok in summarize_by_case(results):
        table.add_row(case, f"{worst:.2e}", str(checked), str(skipped), "✅" if ok else "❌")
    console.print(table)
    if not all(r.passed for r in results):
        raise NumericalError("gradient oracle found mismatches above 1e-4", node="gradcheck")
    console.print("✅ All gradients match")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="doppler", description="Doppler spectrum class identification")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, handler, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("config", help="config file path")
        p.add_argument("--seed", type=int, default=None, help="overrides the config seed")
        p.set_defaults(handler=handler)
        return p

    command("gen", cmd_gen, "generate synthetic phantom datasets")
    command("train", cmd_train, "train and write the model artifact")
    p = command("calibrate", cmd_calibrate, "fit quantile cutoffs on the training set")
    p.add_argument("--source", choices=[s.value for s in ScoreSource], default=None)
    p = command("eval", cmd_eval, "accuracy and confusion reports")
    p.add_argument("--split", default="test")
    p = command("sweep", cmd_sweep, "ignored/error rates over the quantile grid")
    p.add_argument("--sources", nargs="+", choices=[s.value for s in ScoreSource], default=None)
    p = command("experiment", cmd_experiment, "run the E1-E5 comparison")
    p.add_argument("--only", nargs="+", default=None)
    p = command("predict", cmd_predict, "classify recordings from a manifest")
    p.add_argument("--input", default=None, help="manifest of recordings (default: test split)")
    p.add_argument("--artifact", default=None)
    p.add_argument("--q", type=float, default=0.0, help="quantile on the calibration grid")
    p.add_argument("--output", default=None)
    p = command("gradcheck", cmd_gradcheck, "finite-difference gradient oracle")
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--layers-only", action="store_true")
    return parser


def fail(code: str, message: str, field=None) -> None:
    record = {"error": code, "message": message}
    if field:
        record["field"] = field
    print(json.dumps(record), file=sys.stderr)


async def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(message)s",
        handlers=[RichHandler(console=console, show_time=False)],
    )
    banner(args.command.upper())
    try:
        await args.handler(args)
    except DopplerError as e:
        console.print(f"❌ {e.message}")
        print(json.dumps(e.to_record()), file=sys.stderr)
        return 2
    except Exception as e:
        logger.exception("unexpected failure")
        fail("unexpected", str(e))
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(asyncio.run(main()))
