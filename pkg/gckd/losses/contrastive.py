"""Queue-denominated cross-domain image-text contrast and in-batch contrast.

cd-itc treats each target image's positives as spread over the text queue
with the teacher weights s_i2t (soft-target cross-entropy), and
symmetrically for texts over the image queue. Each direction is averaged
over its batch; the value is the mean over the directions that ran.
"""
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from gckd.errors import UsageError
from gckd.losses.report import LossConfig
from gckd.model.distillation import PseudoTargets
from gckd.model.encoder import FeatureBatch
from gckd.numerics import log_softmax_rows, softmax_rows


@dataclass
class ItcResult:
    value: Optional[float]  # None when both directions were skipped
    grad_img: np.ndarray
    grad_txt: np.ndarray
    directions: List[str] = field(default_factory=list)
    skipped: List[str] = field(default_factory=list)


def _soft_cross_entropy(feats: np.ndarray, queue: np.ndarray, targets: np.ndarray,
                        tau: float) -> Tuple[float, np.ndarray]:
    """Batch-mean of -sum_q s[i,q] log softmax(f_i . q / tau); returns (value, dL/dfeats)."""
    logits = feats @ queue.T / tau
    log_p = log_softmax_rows(logits)
    n = feats.shape[0]
    value = float(-np.sum(targets * log_p) / n)
    grad_logits = (np.exp(log_p) - targets) / n
    return value, grad_logits @ queue / tau


def _check_alignment(targets: Optional[np.ndarray], queue: Optional[np.ndarray], feats: FeatureBatch,
                     name: str) -> bool:
    if targets is None or queue is None or queue.shape[0] == 0:
        return False
    if targets.shape[1] != queue.shape[0]:
        raise UsageError(f"{name}: targets cover {targets.shape[1]} queue entries, queue has {queue.shape[0]}")
    if targets.shape[0] != len(feats):
        raise UsageError(f"{name}: targets have {targets.shape[0]} rows for a batch of {len(feats)}")
    return len(feats) > 0


def cd_itc(student_img: FeatureBatch, student_txt: FeatureBatch, targets: PseudoTargets,
           Q_TT: Optional[np.ndarray], Q_TI: Optional[np.ndarray], cfg: LossConfig) -> ItcResult:
    """Cross-domain image-text contrast against the teacher pseudo targets."""
    result = ItcResult(None, np.zeros_like(student_img.features), np.zeros_like(student_txt.features))
    values = []
    if _check_alignment(targets.s_i2t, Q_TT, student_img, "i2t"):
        value, grad = _soft_cross_entropy(student_img.features, Q_TT, targets.s_i2t, cfg.tau)
        values.append(value)
        result.grad_img += grad
        result.directions.append("i2t")
    else:
        result.skipped.append("cd_itc_i2t")
    if _check_alignment(targets.s_t2i, Q_TI, student_txt, "t2i"):
        value, grad = _soft_cross_entropy(student_txt.features, Q_TI, targets.s_t2i, cfg.tau)
        values.append(value)
        result.grad_txt += grad
        result.directions.append("t2i")
    else:
        result.skipped.append("cd_itc_t2i")
    if values:
        scale = 1.0 / len(values)
        result.value = float(sum(values) * scale)
        result.grad_img *= scale
        result.grad_txt *= scale
    return result


def in_batch_contrastive(img: np.ndarray, txt: np.ndarray, tau: float) -> Tuple[float, np.ndarray, np.ndarray]:
    """Symmetric InfoNCE over aligned pairs; returns (value, dL/dimg, dL/dtxt)."""
    n = img.shape[0]
    logits = img @ txt.T / tau
    eye = np.eye(n)
    log_rows = log_softmax_rows(logits)
    log_cols = log_softmax_rows(logits.T)
    value = float(-(np.trace(log_rows) + np.trace(log_cols)) / (2 * n))
    grad_logits = ((softmax_rows(logits) - eye) + (softmax_rows(logits.T) - eye).T) / (2 * n)
    return value, grad_logits @ txt / tau, grad_logits.T @ img / tau
