"""
Command-line entry points.

    gen-data      world summary + impression stream (NDJSON)
    train         train HSNN and its index, calibrate, split for serving
    build-index   inverted index from a trained run's artifacts
    retrieve      top-k items for the user ids in a file
    evaluate      NE / Recall@K / cost report for one run
    ablate        mode x toggle x seed grid with paired-seed win rates

Every command takes ``--config`` and ``--seed``. Failures print one line
``error code=<code> message="<text>"`` to stderr and exit 1.
"""

import argparse
import json
import logging
import os
import sys
from typing import List, Optional

from rich.console import Console
from rich.progress import Progress, SpinnerColumn, TextColumn
from rich.table import Table

from src.config import MODES, PRESETS, RunConfig, config_from_dict, load_config, save_config
from src.data.dataset_io import read_dataset, write_dataset
from src.database import init_database
from src.evaluation.ablation import mode_win_rates, run_ablation_grid, win_rates, write_grid
from src.evaluation.experiment import DataBundle, dataset_hash, prepare_data, run_experiment, train_calibrated
from src.evaluation.metrics import MetricsReport
from src.evaluation.plots import plot_run
from src.index.artifact import load_index_artifact, save_index_artifact
from src.index.hierarchy import occupancy
from src.lib.errors import ConfigError, DatasetFormatError, HSNNError, VersionSkewError
from src.lib.log import setup_logging
from src.models.hsnn import save_hsnn
from src.serving.inverted_index import InvertedIndex, build_inverted_index
from src.serving.retrieval import RetrievalBudget, retrieve_layerwise, user_request
from src.serving.snapshot import load_serving_snapshot, split_model

logger = logging.getLogger(__name__)

console = Console()

DATASET_FILE = "dataset.jsonl"


def run_dir(cfg: RunConfig) -> str:
    return os.path.join(cfg.output_dir, f"seed_{cfg.seed}")


def _csv(value: str, cast):
    try:
        return [cast(v) for v in value.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid list '{value}'")


def apply_overrides(cfg: RunConfig, args: argparse.Namespace) -> RunConfig:
    """Flags given on the command line replace the matching config keys."""
    data = cfg.to_dict()
    if getattr(args, "mode", None):
        data["train"]["mode"] = args.mode
    if getattr(args, "preset", None):
        data["model"]["preset"] = args.preset
    if getattr(args, "layers", None):
        data["model"]["layer_presets"] = args.layers
    if getattr(args, "layer_sizes", None):
        data["index"]["layer_sizes"] = args.layer_sizes
    if getattr(args, "beam", None):
        data["serving"]["beam"] = args.beam
    if getattr(args, "top_k", None):
        data["serving"]["top_k"] = args.top_k
    if getattr(args, "output_dir", None):
        data["output_dir"] = args.output_dir
    return config_from_dict(data)


def _print_error(error: HSNNError):
    message = str(error).replace("\\", "\\\\").replace('"', '\\"').replace("\n", " ")
    print(f'error code={error.code} message="{message}"', file=sys.stderr)


# data

def load_data(cfg: RunConfig, refresh: bool = False) -> DataBundle:
    """
    Regenerate the world and stream for ``cfg`` and check them against the
    dataset file written by gen-data, if there is one.

    Raises:
        ConfigError: the dataset on disk came from a different config or seed
    """
    data = prepare_data(cfg)
    path = os.path.join(run_dir(cfg), DATASET_FILE)
    if refresh or not os.path.exists(path):
        os.makedirs(run_dir(cfg), exist_ok=True)
        write_dataset(path, data.stream.examples())
        return data
    on_disk = dataset_hash(read_dataset(path))
    if on_disk != data.dataset_hash:
        raise ConfigError("data", f"{path} was generated from a different config or seed; "
                                  f"rerun gen-data or pass --refresh-data")
    return data


def cmd_gen_data(cfg: RunConfig, args: argparse.Namespace) -> int:
    data = load_data(cfg, refresh=args.refresh_data)
    out = run_dir(cfg)
    summary = {
        "num_users": len(data.world.users),
        "num_items_start": len(data.catalog),
        "num_items_live": len(data.world.items),
        "num_examples": len(data.stream.examples()),
        "churn_events": len(data.stream.events) - len(data.stream),
        "dataset_hash": data.dataset_hash,
        "config_hash": cfg.config_hash(),
    }
    with open(os.path.join(out, "world.json"), "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
    save_config(cfg, os.path.join(out, "config.json"))
    table = Table(title=f"Dataset ({out})")
    table.add_column("field")
    table.add_column("value", justify="right")
    for key, value in summary.items():
        table.add_row(key, str(value))
    console.print(table)
    return 0


# training and serving artifacts

def cmd_train(cfg: RunConfig, args: argparse.Namespace) -> int:
    out = run_dir(cfg)
    data = load_data(cfg, refresh=args.refresh_data)
    with Progress(SpinnerColumn(), TextColumn("[bold]Training {task.description}"), console=console,
                  transient=True) as progress:
        progress.add_task(f"{cfg.train.mode} {cfg.model.layer_presets}", total=None)
        training = train_calibrated(cfg, data, os.path.join(out, "checkpoints"))
    save_hsnn(training.model, os.path.join(out, "model"))
    split_model(training.model, os.path.join(out, "snapshot"))
    save_index_artifact(os.path.join(out, "index"), training.published)
    training.trace.to_csv(os.path.join(out, "trace.csv"), index=False)
    save_config(cfg, os.path.join(out, "config.json"))
    last = training.trace.iloc[-1] if len(training.trace) else None
    console.print(f"[green]Trained[/green] {cfg.train.mode} HSNN ({len(cfg.model.layer_presets)} layers) "
                  f"for {training.model.step} steps, index v{training.published.version}"
                  + (f", final loss {last['total']:.4f}" if last is not None else ""))
    return 0


def load_serving(cfg: RunConfig, refresh: bool = False):
    """(snapshot, inverted index, world) for a trained run."""
    out = run_dir(cfg)
    snapshot = load_serving_snapshot(os.path.join(out, "snapshot"))
    published = load_index_artifact(os.path.join(out, "index"))
    if snapshot.index_version != published.version:
        raise VersionSkewError(snapshot.index_version, published.version)
    data = load_data(cfg, refresh=refresh)
    inverted = build_inverted_index(published, data.world.items, snapshot)
    return snapshot, inverted, data.world


def _occupancy_table(inverted: InvertedIndex) -> Table:
    table = Table(title=f"Inverted index v{inverted.index_version}.{inverted.revision}")
    for column in ("level", "nodes", "max", "mean", "empty"):
        table.add_column(column, justify="right")
    published = inverted.published
    for level in range(published.num_levels):
        counts = occupancy(published.paths, level, published.codebooks[level].shape[0])
        table.add_row(str(level), str(len(counts)), str(int(counts.max())), f"{counts.mean():.1f}",
                      str(int((counts == 0).sum())))
    return table


def cmd_build_index(cfg: RunConfig, args: argparse.Namespace) -> int:
    _, inverted, _ = load_serving(cfg, args.refresh_data)
    path = os.path.join(run_dir(cfg), "postings.tsv")
    with open(path, "w") as f:
        for item_id, p in zip(inverted.published.item_ids, inverted.published.paths):
            f.write("\t".join([str(int(item_id)), *(str(int(k)) for k in p)]) + "\n")
    console.print(_occupancy_table(inverted))
    console.print(f"Wrote {len(inverted)} item paths to {path}")
    return 0


def read_user_ids(path: str, num_users: int) -> List[int]:
    if not os.path.exists(path):
        raise ConfigError("users", f"file not found: {path}")
    ids = []
    with open(path, "r") as f:
        for line_number, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                user_id = int(line)
            except ValueError:
                raise DatasetFormatError(line_number, f"expected a user id, got '{line}'")
            if not 0 <= user_id < num_users:
                raise DatasetFormatError(line_number, f"unknown user id {user_id}")
            ids.append(user_id)
    return ids


def cmd_retrieve(cfg: RunConfig, args: argparse.Namespace) -> int:
    snapshot, inverted, world = load_serving(cfg, args.refresh_data)
    users = read_user_ids(args.users, len(world.users))
    budget = RetrievalBudget(tuple(cfg.serving.beam), cfg.serving.max_items_scored or None, cfg.serving.top_k)
    out = open(args.out, "w") if args.out else sys.stdout
    try:
        for user_id in users:
            result = retrieve_layerwise(snapshot, inverted, user_request(snapshot, world, user_id), budget)
            for uid, rank, item_id, score in result.lines():
                out.write(f"{uid}\t{rank}\t{item_id}\t{score:.6f}\n")
    finally:
        if out is not sys.stdout:
            out.close()
    logger.info(f"Retrieved top-{budget.top_k} for {len(users)} users")
    return 0


# evaluation

def report_table(report: MetricsReport) -> Table:
    table = Table(title=f"{report.mode} seed {report.seed} ({report.config_hash[:12]})")
    table.add_column("metric")
    table.add_column("value", justify="right")
    for name, value in report.flat().items():
        table.add_row(name, f"{value:.6g}")
    table.add_row("brute_force_macs", str(report.brute_force_macs))
    table.add_row("formula_error", f"{report.formula_error:.2e}")
    return table


def cmd_evaluate(cfg: RunConfig, args: argparse.Namespace) -> int:
    out = run_dir(cfg)
    load_data(cfg, refresh=args.refresh_data)
    result = run_experiment(cfg, os.path.join(out, "evaluation"))
    console.print(report_table(result.report))
    if args.plot:
        paths = plot_run(result.run_dir, result.training.trace, result.report.occupancy)
        console.print(f"Plots: {', '.join(paths.values())}")
    console.print(f"Report hash {result.report.report_hash()}")
    return 0


def cmd_ablate(cfg: RunConfig, args: argparse.Namespace) -> int:
    out = os.path.join(cfg.output_dir, "ablation")
    init_database(cfg.database_path or os.path.join(cfg.output_dir, "hsnn_runs.db"))
    df = run_ablation_grid(cfg, toggles=args.toggles, modes=args.modes, seeds=args.seeds, output_dir=out,
                           use_cache=not args.no_cache, refresh=args.refresh_data)
    write_grid(df, out)
    if not df.empty:
        for frame, title in ((win_rates(df), "Baseline wins"), (mode_win_rates(df), "Mode comparison")):
            table = Table(title=title)
            for column in frame.columns:
                table.add_column(column)
            for row in frame.itertuples(index=False):
                table.add_row(*[f"{v:.3f}" if isinstance(v, float) else str(v) for v in row])
            console.print(table)
    console.print(f"{len(df)} runs, tables in {out}")
    return 0


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "build-index": cmd_build_index,
    "retrieve": cmd_retrieve,
    "evaluate": cmd_evaluate,
    "ablate": cmd_ablate,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run config; defaults apply when omitted")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--output-dir", help="override output_dir")
    common.add_argument("--verbose", action="store_true", help="debug logging")
    common.add_argument("--log-file", help="also write logs to this file")
    common.add_argument("--refresh-data", action="store_true",
                        help="regenerate the dataset file and ignore cached runs")

    model_flags = argparse.ArgumentParser(add_help=False)
    model_flags.add_argument("--mode", choices=MODES)
    model_flags.add_argument("--preset", choices=PRESETS, help="reference MoNN preset for cost comparison")
    model_flags.add_argument("--layers", type=lambda v: _csv(v, str), help="layer presets, e.g. M,XS")
    model_flags.add_argument("--layer-sizes", type=lambda v: _csv(v, int), help="codebook sizes, e.g. 20")

    serving_flags = argparse.ArgumentParser(add_help=False)
    serving_flags.add_argument("--beam", type=lambda v: _csv(v, int), help="beam width per index level")
    serving_flags.add_argument("--top-k", type=int)

    parser = argparse.ArgumentParser(prog="hsnn", description="Hierarchical structured retrieval")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("gen-data", parents=[common], help="generate the synthetic world and stream")
    sub.add_parser("train", parents=[common, model_flags], help="train HSNN and its index")
    sub.add_parser("build-index", parents=[common, model_flags], help="build the inverted index")
    retrieve = sub.add_parser("retrieve", parents=[common, model_flags, serving_flags], help="retrieve for users")
    retrieve.add_argument("--users", required=True, help="file with one user id per line")
    retrieve.add_argument("--out", help="output TSV (default stdout)")
    evaluate = sub.add_parser("evaluate", parents=[common, model_flags, serving_flags], help="metrics report")
    evaluate.add_argument("--plot", action="store_true", help="write loss and occupancy PNGs")
    ablate = sub.add_parser("ablate", parents=[common, model_flags], help="ablation grid")
    ablate.add_argument("--toggles", type=lambda v: _csv(v, str), help="subset of scheduler,warmup,balance")
    ablate.add_argument("--modes", type=lambda v: _csv(v, str), help="subset of JOIM,SIL,EM")
    ablate.add_argument("--seeds", type=lambda v: _csv(v, int), help="explicit seeds")
    ablate.add_argument("--no-cache", action="store_true", help="do not read or write the run cache")
    return parser


def run(argv: Optional[List[str]] = None) -> int:
    """Parse ``argv`` and dispatch; returns the process exit code."""
    args = build_parser().parse_args(argv)
    setup_logging("DEBUG" if args.verbose else "INFO", args.log_file)
    try:
        cfg = apply_overrides(load_config(args.config, args.seed), args)
        return COMMANDS[args.command](cfg, args)
    except HSNNError as e:
        _print_error(e)
        return 1
