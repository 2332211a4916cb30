"""Central finite-difference check of the adaptation objective's gradient."""
from dataclasses import dataclass, field
import logging
import math
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from gckd.data.synth import Sample, stack_raw
from gckd.model.encoder import FeatureBatch, encode
from gckd.model.params import Grads
from gckd.training.trainer import AdaptSetup, SourcePair, TrainState, objective

logger = logging.getLogger(__name__)


@dataclass
class GradCheckEntry:
    name: str
    index: Tuple[int, ...]
    analytic: float
    numeric: float
    rel_error: float


@dataclass
class GradCheckReport:
    max_rel_error: float
    tolerance: float
    passed: bool
    num_checked: int
    loss: float
    worst: Optional[GradCheckEntry] = None
    entries: List[GradCheckEntry] = field(default_factory=list)

    def to_record(self) -> dict:
        record = {
            "max_rel_error": self.max_rel_error,
            "tolerance": self.tolerance,
            "passed": self.passed,
            "num_checked": self.num_checked,
            "loss": self.loss,
        }
        if self.worst is not None:
            record["worst"] = {"name": self.worst.name, "index": list(self.worst.index),
                               "analytic": self.worst.analytic, "numeric": self.worst.numeric}
        return record


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-6)


def _sample_indices(state: TrainState, num_params: int, rng: np.random.Generator) -> List[Tuple[str, Tuple[int, ...]]]:
    """``min(num_params, total)`` distinct coordinates touching every array.

    Each array gets an even share; arrays smaller than their share pass the
    remainder on to the larger ones.
    """
    student = state.pair.student
    per_array = max(1, math.ceil(num_params / len(student)))
    quota = {name: min(arr.size, per_array) for name, arr in student.items()}
    short = min(num_params, sum(arr.size for _, arr in student.items())) - sum(quota.values())
    while short > 0:
        for name, arr in student.items():
            if short > 0 and quota[name] < arr.size:
                quota[name] += 1
                short -= 1
    picks = []
    for name, arr in student.items():
        flat = rng.choice(arr.size, size=quota[name], replace=False)
        picks += [(name, np.unravel_index(int(i), arr.shape)) for i in np.sort(flat)]
    return picks


def fill_banks(state: TrainState, source_pairs: Sequence[SourcePair], target_images: Sequence[Sample],
               target_texts: Sequence[Sample], count: int) -> TrainState:
    """Push ``count`` entries into each queue, the way adaptation steps would."""
    pair = state.pair
    pushes = (
        ("TI", pair.teacher, "image", stack_raw(list(target_images[:count])), "target", "teacher", "f_hat_TI"),
        ("TT", pair.teacher, "text", stack_raw(list(target_texts[:count])), "target", "teacher", "f_hat_TT"),
        ("SI", pair.student, "image", stack_raw([p[0] for p in source_pairs[:count]]), "source", "student", "f_SI"),
        ("ST", pair.student, "text", stack_raw([p[1] for p in source_pairs[:count]]), "source", "student", "f_ST"),
    )
    for bank, params, modality, raw, domain, provenance, role in pushes:
        if raw.shape[0] == 0:
            continue
        feats = encode(params, modality, raw)[0]
        state.banks[bank].push_batch(FeatureBatch(feats, domain, modality, provenance, role), state.iteration)
    return state


def grad_check(state: TrainState, source_batch: Sequence[SourcePair], target_img_batch: Sequence[Sample],
               target_txt_batch: Sequence[Sample], setup: AdaptSetup, tolerance: float = 1e-4,
               num_params: int = 200, step: float = 1e-5, seed: int = 0,
               gradient_hook: Optional[Callable[[Grads], Grads]] = None) -> GradCheckReport:
    """Compare the analytic gradient of the total loss with central differences.

    Graph neighbors and matching pairs are frozen at the unperturbed point so
    the objective is smooth around it. ``gradient_hook`` may rewrite the
    analytic gradient before comparison. The state is left unchanged.
    """
    pair = state.pair
    base = objective(pair.student, pair.teacher, state.banks, source_batch, target_img_batch,
                     target_txt_batch, setup)
    grads = base.grads if gradient_hook is None else gradient_hook(base.grads)

    def loss_at() -> float:
        return objective(pair.student, pair.teacher, state.banks, source_batch, target_img_batch,
                         target_txt_batch, setup, frozen=base.selections).report.total

    entries = []
    rng = np.random.default_rng([seed, 11])
    for name, index in _sample_indices(state, num_params, rng):
        param = pair.student[name]
        original = param[index]
        param[index] = original + step
        plus = loss_at()
        param[index] = original - step
        minus = loss_at()
        param[index] = original
        numeric = (plus - minus) / (2.0 * step)
        analytic = float(grads[name][index])
        entries.append(GradCheckEntry(name, tuple(int(i) for i in index), analytic, numeric,
                                      relative_error(analytic, numeric)))

    worst = max(entries, key=lambda e: e.rel_error) if entries else None
    max_err = worst.rel_error if worst is not None else 0.0
    report = GradCheckReport(max_rel_error=max_err, tolerance=tolerance, passed=max_err < tolerance,
                             num_checked=len(entries), loss=base.report.total, worst=worst, entries=entries)
    if report.passed:
        logger.info(f"gradient check passed: max relative error {max_err:.3e} over {len(entries)} parameters")
    else:
        logger.warning(f"gradient check failed: max relative error {max_err:.3e} at {worst.name}{list(worst.index)}")
    return report
