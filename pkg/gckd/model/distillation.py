"""EMA teacher and teacher pseudo-similarity targets."""
from dataclasses import dataclass
import logging
from typing import Optional

import numpy as np

from gckd.errors import StructuralError, UsageError
from gckd.model.encoder import FeatureBatch
from gckd.model.params import ParamSet, clone_params
from gckd.numerics import softmax_rows
from gckd.tags import TEACHER_ROLES
from gckd.utils.validation import ensure_in_range, ensure_positive

logger = logging.getLogger(__name__)


@dataclass
class TeacherStudentPair:
    student: ParamSet
    teacher: ParamSet
    momentum: float = 0.999  # alpha

    def __post_init__(self) -> None:
        ensure_in_range(self.momentum, 0.0, 1.0, "momentum")
        self.student.check_same_structure(self.teacher)

    @classmethod
    def from_student(cls, student: ParamSet, momentum: float = 0.999) -> "TeacherStudentPair":
        return cls(student, clone_params(student), momentum)


def ema_update(pair: TeacherStudentPair) -> ParamSet:
    """teacher <- m * teacher + (1 - m) * student, for every array at once."""
    if pair.student.shapes() != pair.teacher.shapes():
        raise StructuralError("student and teacher parameter sets have drifted apart")
    m = pair.momentum
    updated = {name: m * arr + (1.0 - m) * pair.student[name] for name, arr in pair.teacher.items()}
    for name, arr in updated.items():
        pair.teacher[name] = arr
    return pair.teacher


@dataclass
class PseudoTargets:
    """Row-stochastic teacher targets; a direction is None when its queue was unavailable."""

    s_i2t: Optional[np.ndarray]  # B_img x |Q_TT|
    s_t2i: Optional[np.ndarray]  # B_txt x |Q_TI|
    tau: float


def _targets(feats: FeatureBatch, queue: Optional[np.ndarray], tau: float, delta: Optional[float],
             alpha: float) -> Optional[np.ndarray]:
    if queue is None or queue.shape[0] == 0:
        return None
    if queue.shape[1] != feats.features.shape[1]:
        raise UsageError(f"queue width {queue.shape[1]} does not match feature width {feats.features.shape[1]}")
    sims = feats.features @ queue.T
    soft = softmax_rows(sims / tau)
    if delta is None or alpha >= 1.0:
        return soft
    confident = (sims > delta).astype(np.float64)
    counts = confident.sum(axis=1, keepdims=True)
    has_positive = counts[:, 0] > 0
    # Rows without a confident entry keep the pure soft target
    mixed = soft.copy()
    mixed[has_positive] = alpha * soft[has_positive] + (1.0 - alpha) * confident[has_positive] / counts[has_positive]
    return mixed


def pseudo_targets(teacher_img: FeatureBatch, teacher_txt: FeatureBatch, Q_TT: Optional[np.ndarray],
                   Q_TI: Optional[np.ndarray], tau: float, delta: Optional[float] = None,
                   alpha: float = 1.0) -> PseudoTargets:
    """Teacher softmax over the opposite-modality target queue, per image and per text.

    With ``delta`` set and ``alpha`` < 1, each row becomes
    ``alpha * soft + (1 - alpha) * hard`` where ``hard`` is uniform over the
    queue entries whose teacher similarity exceeds ``delta``.
    """
    tau = ensure_positive(tau, "tau")
    alpha = ensure_in_range(alpha, 0.0, 1.0, "alpha")
    for batch in (teacher_img, teacher_txt):
        if batch.provenance != "teacher" or batch.role not in TEACHER_ROLES:
            raise UsageError(f"pseudo targets need teacher features, got {batch.role} from the {batch.provenance}")
    targets = PseudoTargets(_targets(teacher_img, Q_TT, tau, delta, alpha),
                            _targets(teacher_txt, Q_TI, tau, delta, alpha), tau)
    if targets.s_i2t is None or targets.s_t2i is None:
        logger.debug("pseudo targets skipped for an empty target queue")
    return targets
