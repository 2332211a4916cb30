"""Command-line entry for gckd experiments.

Verbs: gen, train, eval, ablate, gradcheck, transfer, sweep-delta. Every
verb reads the settings document (``--config``), applies the flag
overrides, logs to ``<out>/logs/gckd.log`` and writes its outputs under
``<out>``.
"""
import argparse
import json
import logging
import os
from pathlib import Path
import sys
from typing import Callable, Dict, List, Optional

from gckd import __version__
from gckd.data.records import load_dataset, load_ground_truth, save_dataset
from gckd.data.synth import generate
from gckd.errors import GckdError, StructuralError
from gckd.evaluation.ablation import format_table, run_ablation, run_delta_sweep, run_transfer
from gckd.evaluation.evaluator import build_index, evaluate
from gckd.training.checkpoint import load_checkpoint, read_meta, save_checkpoint
from gckd.training.config import MODES
from gckd.training.gradcheck import fill_banks, grad_check
from gckd.training.pipeline import build_setup, checkpoint_meta, dataset_width, init_state, train_mode
from gckd.utils.metrics_stream import MetricsStream, write_report
from gckd.utils.settings import (
    DEFAULT_SETTINGS_PATH,
    SPLITS,
    ExperimentConfig,
    SettingsManager,
    dataset_fingerprint,
    fingerprint,
    with_overrides,
)

DATA_DIR = "data"
CHECKPOINT_FILE = "checkpoint.gckd"
METRICS_FILE = "metrics.jsonl"
EXIT_CODES = {"config": 2, "usage": 2, "io": 3}


def setup_logging(out_dir: Path, verbose: bool = False) -> None:
    os.makedirs(os.path.join(out_dir, "logs"), exist_ok=True)
    level = logging.DEBUG if verbose else logging.INFO
    console = logging.StreamHandler(sys.stderr)
    console.setLevel(level)
    logging.basicConfig(
        level=level,
        format="%(asctime)s %(levelname)s %(name)s %(message)s",
        handlers=[logging.FileHandler(os.path.join(out_dir, "logs", "gckd.log"), encoding="utf-8"), console],
        force=True,
    )


def _emit(document: dict) -> None:
    print(json.dumps(document, sort_keys=True))


def _data_dir(config: ExperimentConfig, args: argparse.Namespace) -> Path:
    return Path(args.data) if args.data else Path(config.experiment.out_dir) / DATA_DIR


def cmd_gen(config: ExperimentConfig, args: argparse.Namespace) -> int:
    dataset, truth = generate(config.dataset)
    counts = save_dataset(_data_dir(config, args), dataset, truth, dataset_fingerprint(config.dataset))
    _emit({"source": counts["source"], "target": counts["target"]})
    return 0


def cmd_train(config: ExperimentConfig, args: argparse.Namespace) -> int:
    out = Path(config.experiment.out_dir)
    data_dir = _data_dir(config, args)
    data_fp, dataset = load_dataset(data_dir)
    if data_fp != dataset_fingerprint(config.dataset):
        logging.warning(f"dataset in {data_dir} was generated from different [dataset] settings")
    mode = config.experiment.mode
    run_fp = fingerprint(config)
    with MetricsStream(out / METRICS_FILE, run_fp) as stream:
        state = train_mode(config, dataset, mode, stream, dump_dir=out / "graphs")
    path = save_checkpoint(out / CHECKPOINT_FILE, state,
                           checkpoint_meta(config, mode, dataset_width(dataset), run_fp))
    _emit({"checkpoint": str(path), "mode": mode, "iterations": state.iteration, "fingerprint": run_fp})
    return 0


def cmd_eval(config: ExperimentConfig, args: argparse.Namespace) -> int:
    out = Path(config.experiment.out_dir)
    checkpoint = Path(args.checkpoint) if args.checkpoint else out / CHECKPOINT_FILE
    meta = read_meta(checkpoint)
    data_dir = _data_dir(config, args)
    data_fingerprint, dataset = load_dataset(data_dir)
    width = dataset_width(dataset)
    if meta.get("d_raw") != width:
        raise StructuralError(f"checkpoint expects {meta.get('d_raw')}-dim inputs, dataset has {width}")
    state, _ = load_checkpoint(checkpoint)
    split = config.experiment.split
    truth = load_ground_truth(data_dir, data_fingerprint) if split == "target" else None
    report = evaluate(build_index(state.pair.student, dataset, truth, split), config.experiment.ks)
    record = report.to_record()
    record.update({"split": split, "mode": meta.get("mode")})
    write_report(out / f"eval_{split}.json", record, meta.get("fingerprint"))
    _emit(record)
    return 0


def cmd_ablate(config: ExperimentConfig, args: argparse.Namespace) -> int:
    out = Path(config.experiment.out_dir)
    rows, results = run_ablation(config)
    fp = results[0].fingerprint if results else None
    table = format_table(rows) + f"fingerprint: {fp}\n"
    document = {
        "rows": [row.to_record() for row in rows],
        "runs": [{"mode": r.mode, "seed": r.seed, "metrics": r.metrics, "source_rank1": r.source_rank1}
                 for r in results],
    }
    write_report(out / "ablation.json", document, fp)
    with open(out / "ablation.txt", "w", encoding="utf-8", newline="\n") as f:
        f.write(table)
    print(table, end="")
    return 0


def cmd_gradcheck(config: ExperimentConfig, args: argparse.Namespace) -> int:
    out = Path(config.experiment.out_dir)
    dataset, _ = generate(config.dataset)
    state = init_state(config, dataset_width(dataset))
    setup = build_setup(config, config.experiment.mode)
    pairs = dataset.source_pairs
    fill_banks(state, pairs, dataset.target_images, dataset.target_texts, config.memory.capacity)
    b = config.train.batch_size
    report = grad_check(state, pairs[:b], dataset.target_images[:b], dataset.target_texts[:b], setup,
                        seed=config.train.seed)
    write_report(out / "gradcheck.json", report.to_record(), fingerprint(config))
    _emit(report.to_record())
    return 0 if report.passed else 1


def cmd_transfer(config: ExperimentConfig, args: argparse.Namespace) -> int:
    rows = run_transfer(config)
    write_report(Path(config.experiment.out_dir) / "transfer.json", {"tasks": rows}, fingerprint(config))
    for row in rows:
        _emit(row)
    return 0


def cmd_sweep_delta(config: ExperimentConfig, args: argparse.Namespace) -> int:
    counts = run_delta_sweep(config)
    write_report(Path(config.experiment.out_dir) / "sweep_delta.json", {"positives": counts}, fingerprint(config))
    _emit(counts)
    return 0


COMMANDS: Dict[str, Callable[[ExperimentConfig, argparse.Namespace], int]] = {
    "gen": cmd_gen,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "gradcheck": cmd_gradcheck,
    "transfer": cmd_transfer,
    "sweep-delta": cmd_sweep_delta,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gckd", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"gckd {__version__}")
    parser.add_argument("command", choices=list(COMMANDS))
    parser.add_argument("--config", default=DEFAULT_SETTINGS_PATH, help="settings document (INI)")
    parser.add_argument("--out", help="output directory, overrides [experiment] out_dir")
    parser.add_argument("--seed", type=int, help="overrides [train] seed")
    parser.add_argument("--mode", choices=MODES, help="overrides [experiment] mode")
    parser.add_argument("--split", choices=SPLITS, help="evaluation split")
    parser.add_argument("--data", help="dataset directory (default <out>/data)")
    parser.add_argument("--checkpoint", help="checkpoint to evaluate (default <out>/checkpoint.gckd)")
    parser.add_argument("--verbose", "-v", action="store_true")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = SettingsManager(args.config).get_settings()
        config = with_overrides(config, seed=args.seed, mode=args.mode, out_dir=args.out, split=args.split)
        setup_logging(Path(config.experiment.out_dir), args.verbose)
        logging.info(f"gckd {args.command} started (out={config.experiment.out_dir})")
        code = COMMANDS[args.command](config, args)
        logging.info(f"gckd {args.command} finished with exit code {code}")
        return code
    except GckdError as e:
        print(f"error {e.category}: {e}", file=sys.stderr)
        return EXIT_CODES.get(e.category, 1)
    except OSError as e:
        print(f"error io: {e}", file=sys.stderr)
        return EXIT_CODES["io"]


if __name__ == "__main__":
    sys.exit(main())
