"""Text-to-image retrieval metrics: Rank-K recall and mean average precision."""
from dataclasses import dataclass, field
import logging
from typing import Dict, List, Sequence

import numpy as np

from gckd.data.synth import GroundTruth, SyntheticDataset, stack_raw
from gckd.errors import ShapeError, UsageError
from gckd.model.encoder import encode_matrix
from gckd.model.params import ParamSet
from gckd.utils.validation import ensure_unit_rows

logger = logging.getLogger(__name__)

DEFAULT_KS = (1, 5, 10)


@dataclass
class RetrievalIndex:
    """Gallery of image embeddings and text queries, each row with its identity."""

    gallery: np.ndarray  # G x D
    gallery_ids: np.ndarray
    queries: np.ndarray  # Q x D
    query_ids: np.ndarray

    def __post_init__(self) -> None:
        self.gallery_ids = np.asarray(self.gallery_ids)
        self.query_ids = np.asarray(self.query_ids)
        if self.gallery.ndim != 2 or self.queries.ndim != 2:
            raise ShapeError("gallery and queries must be 2-D")
        if self.gallery.shape[1] != self.queries.shape[1]:
            raise ShapeError(f"gallery width {self.gallery.shape[1]} != query width {self.queries.shape[1]}")
        if len(self.gallery_ids) != self.gallery.shape[0] or len(self.query_ids) != self.queries.shape[0]:
            raise ShapeError("identity arrays must align with their matrices")
        if self.gallery.shape[0] == 0 or self.queries.shape[0] == 0:
            raise UsageError("evaluation needs a non-empty gallery and query set")
        ensure_unit_rows(self.gallery, name="gallery")
        ensure_unit_rows(self.queries, name="queries")


@dataclass
class MetricsReport:
    rank: Dict[int, float]  # K -> percentage of queries with a hit in the top K
    map: float  # percentage
    per_query_ap: List[float] = field(default_factory=list)
    num_queries: int = 0
    num_excluded: int = 0  # queries whose identity is absent from the gallery

    @property
    def rank1(self) -> float:
        return self.rank[1]

    @property
    def rank5(self) -> float:
        return self.rank[5]

    @property
    def rank10(self) -> float:
        return self.rank[10]

    def to_record(self) -> dict:
        record = {f"rank{k}": v for k, v in sorted(self.rank.items())}
        record.update({"map": self.map, "num_queries": self.num_queries, "num_excluded": self.num_excluded})
        return record


def evaluate(index: RetrievalIndex, ks: Sequence[int] = DEFAULT_KS) -> MetricsReport:
    """Rank the gallery for every query by cosine similarity (ties to the lower gallery index)."""
    ks = sorted({int(k) for k in ks})
    if not ks or ks[0] < 1:
        raise UsageError(f"Rank-K cut-offs must be positive, got {ks}")
    scores = np.einsum("qd,gd->qg", index.queries, index.gallery)
    order = np.argsort(-scores, axis=1, kind="stable")
    hits = index.gallery_ids[order] == index.query_ids[:, None]

    valid = hits.any(axis=1)
    excluded = int(np.count_nonzero(~valid))
    if excluded:
        logger.warning(f"{excluded} queries have no matching identity in the gallery; excluded")
    if not valid.any():
        raise UsageError("no query identity appears in the gallery")
    hits = hits[valid]

    first_hit = np.argmax(hits, axis=1)
    rank = {k: float(np.mean(first_hit < k) * 100.0) for k in ks}

    positions = np.arange(1, hits.shape[1] + 1)
    precision_at_hit = np.cumsum(hits, axis=1) / positions
    ap = (precision_at_hit * hits).sum(axis=1) / hits.sum(axis=1)

    return MetricsReport(
        rank=rank,
        map=float(np.mean(ap) * 100.0),
        per_query_ap=[float(a) for a in ap],
        num_queries=int(hits.shape[0]),
        num_excluded=excluded,
    )


def build_index(params: ParamSet, dataset: SyntheticDataset, truth: GroundTruth, split: str = "target") -> RetrievalIndex:
    """Encode a split with the raw student encoders (no graph propagation).

    The target split takes identities from the ground-truth sidecar; the
    source split carries them on its samples.
    """
    if split == "target":
        images, texts = dataset.target_images, dataset.target_texts
        image_ids, text_ids = truth.image_ids, truth.text_ids
    elif split == "source":
        images, texts = dataset.source_images, dataset.source_texts
        image_ids = np.array([s.identity for s in images], dtype=np.int64)
        text_ids = np.array([s.identity for s in texts], dtype=np.int64)
    else:
        raise UsageError(f"unknown split {split!r}")
    return RetrievalIndex(
        gallery=encode_matrix(params, "image", stack_raw(images)),
        gallery_ids=image_ids,
        queries=encode_matrix(params, "text", stack_raw(texts)),
        query_ids=text_ids,
    )
