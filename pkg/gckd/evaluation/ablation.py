"""Ablation over the three training modes, transfer sweeps and the positive-threshold sweep.

Each seed shares one warm-up across the modes it runs. Seeds fan out to
worker processes when ``experiment.workers`` > 1; every worker generates
its own copy of the dataset from the same settings.
"""
from concurrent.futures import ProcessPoolExecutor
import copy
from dataclasses import dataclass, replace
import logging
import math
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from gckd.data.synth import GroundTruth, SyntheticDataset, generate, stack_raw
from gckd.errors import StructuralError
from gckd.evaluation.evaluator import build_index, evaluate
from gckd.losses.matching import sweep_delta
from gckd.model.encoder import encode_matrix
from gckd.training.config import MODES
from gckd.training.pipeline import build_setup, run_adaptation, run_warmup
from gckd.utils.settings import ExperimentConfig, comparison_fingerprint, with_overrides

logger = logging.getLogger(__name__)

MODE_LABELS = {"baseline": "Baseline", "cmkd": "CMKD", "cmkd_gmp": "CMKD + GMP"}


@dataclass
class RunResult:
    mode: str
    seed: int
    fingerprint: str
    metrics: Dict[str, float]  # target split record
    source_rank1: float  # warm-up model on the source split


@dataclass
class AblationRow:
    mode: str
    num_seeds: int
    mean: Dict[str, float]
    stderr: Dict[str, float]
    source_rank1: float

    def to_record(self) -> dict:
        return {"mode": self.mode, "num_seeds": self.num_seeds, "mean": self.mean, "stderr": self.stderr,
                "source_rank1": self.source_rank1}


def run_seed(config: ExperimentConfig, seed: int, dataset: Optional[SyntheticDataset] = None,
             truth: Optional[GroundTruth] = None, modes: Sequence[str] = MODES) -> List[RunResult]:
    cfg = with_overrides(config, seed=seed)
    if dataset is None:
        dataset, truth = generate(cfg.dataset)
    ks = cfg.experiment.ks
    warm = run_warmup(cfg, dataset, build_setup(cfg, "baseline"))
    source_rank1 = evaluate(build_index(warm.pair.student, dataset, truth, "source"), (1,)).rank[1]
    results = []
    for mode in modes:
        state = run_adaptation(copy.deepcopy(warm), dataset, build_setup(cfg, mode), mode)
        metrics = evaluate(build_index(state.pair.student, dataset, truth, "target"), ks)
        results.append(RunResult(mode, seed, comparison_fingerprint(cfg), metrics.to_record(), source_rank1))
        logger.info(f"seed {seed} mode {mode}: target rank1 {metrics.rank.get(1, float('nan')):.2f}")
    return results


def _seed_job(args: Tuple[ExperimentConfig, int, Tuple[str, ...]]) -> List[RunResult]:
    config, seed, modes = args
    return run_seed(config, seed, modes=modes)


def run_seeds(config: ExperimentConfig, modes: Sequence[str] = MODES, dataset: Optional[SyntheticDataset] = None,
              truth: Optional[GroundTruth] = None) -> List[RunResult]:
    """All configured seeds, results ordered by seed then mode."""
    base = config.train.seed
    seeds = [base + i for i in range(config.experiment.seeds)]
    workers = config.experiment.workers
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            batches = list(pool.map(_seed_job, [(config, s, tuple(modes)) for s in seeds]))
    else:
        if dataset is None:
            dataset, truth = generate(config.dataset)
        batches = [run_seed(config, s, dataset, truth, modes) for s in seeds]
    return [r for batch in batches for r in batch]


def _stderr(values: np.ndarray) -> float:
    if len(values) < 2:
        return 0.0
    return float(np.std(values, ddof=1) / math.sqrt(len(values)))


def aggregate(results: Sequence[RunResult]) -> List[AblationRow]:
    """Mean and standard error per mode; refuses to mix runs from different settings."""
    fingerprints = {r.fingerprint for r in results}
    if len(fingerprints) > 1:
        raise StructuralError(f"refusing to compare runs with {len(fingerprints)} different fingerprints")
    rows = []
    modes = [m for m in MODES if any(r.mode == m for r in results)]
    for mode in modes:
        runs = [r for r in results if r.mode == mode]
        keys = [k for k in runs[0].metrics if k.startswith("rank") or k == "map"]
        values = {k: np.array([r.metrics[k] for r in runs]) for k in keys}
        rows.append(AblationRow(
            mode=mode,
            num_seeds=len(runs),
            mean={k: float(np.mean(v)) for k, v in values.items()},
            stderr={k: _stderr(v) for k, v in values.items()},
            source_rank1=float(np.mean([r.source_rank1 for r in runs])),
        ))
    return rows


def _column_title(key: str) -> str:
    return "mAP" if key == "map" else f"Rank-{key[len('rank'):]}"


def format_table(rows: Sequence[AblationRow]) -> str:
    """Plain-text comparison table, one row per mode."""
    if not rows:
        return ""
    keys = list(rows[0].mean)
    header = ["Method"] + [_column_title(k) for k in keys] + ["Source Rank-1"]
    body = []
    for row in rows:
        cells = [MODE_LABELS.get(row.mode, row.mode)]
        cells += [f"{row.mean[k]:.2f} ± {row.stderr[k]:.2f}" for k in keys]
        cells.append(f"{row.source_rank1:.2f}")
        body.append(cells)
    widths = [max(len(line[i]) for line in [header] + body) for i in range(len(header))]

    def fmt(line: List[str]) -> str:
        return " | ".join(cell.ljust(w) for cell, w in zip(line, widths)).rstrip()

    rule = "-+-".join("-" * w for w in widths)
    return "\n".join([fmt(header), rule] + [fmt(line) for line in body]) + "\n"


def run_ablation(config: ExperimentConfig) -> Tuple[List[AblationRow], List[RunResult]]:
    results = run_seeds(config)
    return aggregate(results), results


def run_transfer(config: ExperimentConfig, shifts: Optional[Sequence[float]] = None) -> List[dict]:
    """Baseline vs full method on one source with targets of increasing shift."""
    shifts = config.experiment.transfer_shifts if shifts is None else shifts
    rows = []
    for shift in shifts:
        cfg = replace(config, dataset=replace(config.dataset, domain_shift_strength=float(shift)))
        logger.info(f"transfer task with domain shift {shift}")
        for row in aggregate(run_seeds(cfg, modes=("baseline", "cmkd_gmp"))):
            record = {"shift": float(shift), "mode": row.mode, "num_seeds": row.num_seeds}
            for key in ("rank1", "rank5"):
                if key in row.mean:
                    record[key] = row.mean[key]
                    record[f"{key}_stderr"] = row.stderr[key]
            rows.append(record)
    return rows


def run_delta_sweep(config: ExperimentConfig, dataset: Optional[SyntheticDataset] = None,
                    deltas: Optional[Sequence[float]] = None) -> Dict[str, int]:
    """Positive-pair counts per threshold for a warm-up teacher over the whole target set."""
    deltas = config.experiment.delta_sweep if deltas is None else deltas
    if dataset is None:
        dataset, _ = generate(config.dataset)
    warm = run_warmup(config, dataset, build_setup(config, "baseline"))
    teacher = warm.pair.teacher
    img = encode_matrix(teacher, "image", stack_raw(dataset.target_images))
    txt = encode_matrix(teacher, "text", stack_raw(dataset.target_texts))
    counts = sweep_delta(np.einsum("id,jd->ij", img, txt), deltas)
    return {repr(d): n for d, n in counts.items()}
