"""Cross-domain fine-grained matching: pair selection, matching head and cd-itm.

Positives pair a target image with every target-text queue entry whose
teacher similarity exceeds delta. Each target image also gets one hard
negative, the source text in the current batch it is most similar to.
Logit index 1 means "match", index 0 "no match".
"""
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np

from gckd.errors import ShapeError
from gckd.model.params import Grads, ParamSet
from gckd.numerics import log_softmax_rows

MATCH = 1
NO_MATCH = 0


@dataclass
class MatchingHead:
    """Two affine layers with tanh between them: 2D -> hidden -> 2 logits."""

    w0: np.ndarray
    b0: np.ndarray
    w1: np.ndarray
    b1: np.ndarray

    @classmethod
    def from_params(cls, params: ParamSet) -> "MatchingHead":
        return cls(params["head.0.weight"], params["head.0.bias"], params["head.1.weight"], params["head.1.bias"])

    def forward(self, pair_inputs: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Return (logits, hidden activations) for rows of concatenated features."""
        if pair_inputs.shape[1] != self.w0.shape[0]:
            raise ShapeError(f"matching head expects width {self.w0.shape[0]}, got {pair_inputs.shape[1]}")
        hidden = np.tanh(pair_inputs @ self.w0 + self.b0)
        return hidden @ self.w1 + self.b1, hidden

    def backward(self, pair_inputs: np.ndarray, hidden: np.ndarray, grad_logits: np.ndarray) -> Tuple[Grads, np.ndarray]:
        grads = {
            "head.1.weight": hidden.T @ grad_logits,
            "head.1.bias": grad_logits.sum(axis=0),
        }
        grad_pre = (grad_logits @ self.w1.T) * (1.0 - hidden * hidden)
        grads["head.0.weight"] = pair_inputs.T @ grad_pre
        grads["head.0.bias"] = grad_pre.sum(axis=0)
        return grads, grad_pre @ self.w0.T


def _cosine_table(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.einsum("id,jd->ij", a, b)


def select_positives(teacher_img: np.ndarray, Q_TT: Optional[np.ndarray], delta: float) -> np.ndarray:
    """(image_idx, queue_idx) pairs whose teacher cosine similarity exceeds delta, row-major order."""
    if Q_TT is None or Q_TT.shape[0] == 0 or teacher_img.shape[0] == 0:
        return np.zeros((0, 2), dtype=np.int64)
    rows, cols = np.nonzero(_cosine_table(teacher_img, Q_TT) > delta)
    return np.stack([rows, cols], axis=1).astype(np.int64)


def mine_hard_negatives(student_img: np.ndarray, source_txt: np.ndarray) -> np.ndarray:
    """For each target image, the most similar source text (lowest index on ties)."""
    if source_txt.shape[0] == 0 or student_img.shape[0] == 0:
        return np.zeros((0, 2), dtype=np.int64)
    best = np.argmax(_cosine_table(student_img, source_txt), axis=1)
    return np.stack([np.arange(student_img.shape[0]), best], axis=1).astype(np.int64)


def sweep_delta(teacher_sim: np.ndarray, deltas: Iterable[float]) -> Dict[float, int]:
    """Number of positive pairs selected at each threshold."""
    return {float(d): int(np.count_nonzero(teacher_sim > d)) for d in deltas}


@dataclass
class ItmResult:
    value: Optional[float]
    grads: Grads = field(default_factory=dict)
    grad_img: Optional[np.ndarray] = None
    grad_source_txt: Optional[np.ndarray] = None
    n_positive: int = 0
    n_negative: int = 0
    n_skipped: int = 0


def cd_itm(positives: np.ndarray, negatives: np.ndarray, head: MatchingHead, img: np.ndarray,
           queue_txt: Optional[np.ndarray], source_txt: np.ndarray) -> ItmResult:
    """Mean binary matching cross-entropy over positive and hard-negative pairs.

    Gradients flow into the head, the target image features and the source
    text features; the queue side of positive pairs is constant.
    """
    result = ItmResult(None, grad_img=np.zeros_like(img), grad_source_txt=np.zeros_like(source_txt),
                       n_positive=len(positives), n_negative=len(negatives))
    covered = set(positives[:, 0].tolist()) | set(negatives[:, 0].tolist())
    result.n_skipped = img.shape[0] - len(covered)
    n_pairs = len(positives) + len(negatives)
    if n_pairs == 0:
        return result
    parts: List[np.ndarray] = []
    if len(positives):
        parts.append(np.concatenate([img[positives[:, 0]], queue_txt[positives[:, 1]]], axis=1))
    if len(negatives):
        parts.append(np.concatenate([img[negatives[:, 0]], source_txt[negatives[:, 1]]], axis=1))
    pair_inputs = np.concatenate(parts, axis=0)
    labels = np.concatenate([np.full(len(positives), MATCH), np.full(len(negatives), NO_MATCH)])

    logits, hidden = head.forward(pair_inputs)
    log_p = log_softmax_rows(logits)
    picked = log_p[np.arange(n_pairs), labels]
    result.value = float(-np.mean(picked))

    grad_logits = np.exp(log_p)
    grad_logits[np.arange(n_pairs), labels] -= 1.0
    grad_logits /= n_pairs
    result.grads, grad_inputs = head.backward(pair_inputs, hidden, grad_logits)

    dim = img.shape[1]
    image_rows = np.concatenate([positives[:, 0], negatives[:, 0]])
    np.add.at(result.grad_img, image_rows, grad_inputs[:, :dim])
    if len(negatives):
        np.add.at(result.grad_source_txt, negatives[:, 1], grad_inputs[len(positives):, dim:])
    return result
