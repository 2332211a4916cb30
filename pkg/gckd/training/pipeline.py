"""Mode-aware training runs: state setup, warm-up and adaptation.

baseline stops after the source warm-up, cmkd adds the distillation losses
on raw student features, cmkd_gmp propagates target features through the
cross-domain graph first.
"""
import logging
from pathlib import Path
from typing import Optional

from gckd.data.synth import SyntheticDataset
from gckd.errors import ConfigError, ShapeError
from gckd.losses.report import LossReport
from gckd.model.params import init_model
from gckd.training.config import MODES
from gckd.training.trainer import AdaptSetup, TrainState, adapt, new_state, warmup
from gckd.utils.metrics_stream import MetricsStream
from gckd.utils.settings import ExperimentConfig

logger = logging.getLogger(__name__)


def dataset_width(dataset: SyntheticDataset) -> int:
    for group in (dataset.source_images, dataset.target_images):
        if group:
            return int(group[0].raw.shape[0])
    raise ShapeError("dataset holds no samples")


def build_setup(config: ExperimentConfig, mode: str, dump_dir: Optional[Path] = None) -> AdaptSetup:
    if mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}, got {mode!r}")
    return AdaptSetup(
        train=config.train,
        loss=config.loss,
        graph=config.graph,
        memory=config.memory,
        use_graph=mode == "cmkd_gmp",
        dump_dir=dump_dir if config.graph.dump else None,
    )


def init_state(config: ExperimentConfig, d_raw: int) -> TrainState:
    """Fresh student (seeded by ``train.seed``), teacher clone, empty banks."""
    student = init_model(config.train.seed, config.model, d_raw, config.graph.layers)
    return new_state(student, config.train, config.memory, config.model.embed_dim)


def checkpoint_meta(config: ExperimentConfig, mode: str, d_raw: int, fingerprint: str) -> dict:
    return {
        "fingerprint": fingerprint,
        "mode": mode,
        "d_raw": d_raw,
        "embed_dim": config.model.embed_dim,
        "seed": config.train.seed,
    }


def run_warmup(config: ExperimentConfig, dataset: SyntheticDataset, setup: AdaptSetup,
               stream: Optional[MetricsStream] = None) -> TrainState:
    state = init_state(config, dataset_width(dataset))

    def on_epoch(epoch: int, loss: float) -> None:
        if stream is not None:
            stream.write({"phase": "warmup", "epoch": epoch, "loss": loss})

    return warmup(state, dataset.source_pairs, setup, on_epoch)


def run_adaptation(state: TrainState, dataset: SyntheticDataset, setup: AdaptSetup, mode: str,
                   stream: Optional[MetricsStream] = None) -> TrainState:
    if mode == "baseline":
        logger.info("baseline mode: no adaptation steps")
        return state

    def on_step(epoch: int, iteration: int, report: LossReport) -> None:
        if stream is not None:
            record = {"phase": "adapt", "epoch": epoch, "iteration": iteration}
            record.update(report.to_record())
            stream.write(record)

    return adapt(state, dataset.source_pairs, dataset.target_images, dataset.target_texts, setup, on_step)


def train_mode(config: ExperimentConfig, dataset: SyntheticDataset, mode: str,
               stream: Optional[MetricsStream] = None, dump_dir: Optional[Path] = None) -> TrainState:
    """Warm-up followed by the adaptation ``mode`` calls for."""
    setup = build_setup(config, mode, dump_dir)
    logger.info(f"Training mode {mode} with seed {config.train.seed}")
    state = run_warmup(config, dataset, setup, stream)
    return run_adaptation(state, dataset, setup, mode, stream)
