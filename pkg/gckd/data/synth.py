"""Synthetic paired source / unpaired target bimodal datasets.

Each identity owns a latent prototype. A sample is the prototype pushed
through a modality map (fixed random rotation plus bias, scaled by the
modality gap), then, for the target domain only, through an affine domain
map (per-dimension scaling plus an offset), plus Gaussian noise.
"""
from dataclasses import dataclass
import logging
import math
from typing import Dict, Iterator, List, Optional, Sequence, Tuple, TypeVar

import numpy as np

from gckd.errors import ConfigError, ParameterError
from gckd.tags import Domain, Modality, MODALITIES

logger = logging.getLogger(__name__)

T = TypeVar("T")


@dataclass
class DatasetSpec:
    """Generator settings for one source/target dataset pair."""

    num_identities_source: int = 200
    num_identities_target: int = 200
    samples_per_identity_per_modality: int = 4
    d_raw: int = 32
    domain_shift_strength: float = 1.0
    modality_gap_strength: float = 0.5
    noise_sigma: float = 0.3
    rng_seed: int = 0

    def validate(self) -> None:
        for name in ("num_identities_source", "num_identities_target",
                     "samples_per_identity_per_modality", "d_raw"):
            if getattr(self, name) < 1:
                raise ConfigError(f"dataset.{name} must be >= 1, got {getattr(self, name)}")
        for name in ("domain_shift_strength", "modality_gap_strength", "noise_sigma"):
            if getattr(self, name) < 0:
                raise ConfigError(f"dataset.{name} must be >= 0, got {getattr(self, name)}")

    @property
    def offset_norm(self) -> float:
        """Norm of the target-domain offset (shift strength relative to sqrt(d_raw))."""
        return self.domain_shift_strength * math.sqrt(self.d_raw)


@dataclass(frozen=True)
class Sample:
    raw: np.ndarray
    identity: Optional[int]  # None for target samples handed to training
    modality: Modality
    domain: Domain


@dataclass
class GroundTruth:
    """Target identities, aligned with the shuffled target image/text lists.

    Only the evaluator reads this.
    """

    image_ids: np.ndarray
    text_ids: np.ndarray


@dataclass
class SyntheticDataset:
    source_images: List[Sample]
    source_texts: List[Sample]  # aligned with source_images
    target_images: List[Sample]
    target_texts: List[Sample]

    @property
    def source_pairs(self) -> List[Tuple[Sample, Sample]]:
        return list(zip(self.source_images, self.source_texts))

    @property
    def source_set(self) -> List[Sample]:
        return self.source_images + self.source_texts

    @property
    def target_set(self) -> List[Sample]:
        return self.target_images + self.target_texts


def _random_rotation(rng: np.random.Generator, dim: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((dim, dim)))
    # Sign fix makes the draw uniform over the orthogonal group
    return q * np.sign(np.diag(r))


def _centered_prototypes(rng: np.random.Generator, count: int, dim: int) -> np.ndarray:
    protos = rng.standard_normal((count, dim))
    return protos - protos.mean(axis=0, keepdims=True)


def generate(spec: DatasetSpec) -> Tuple[SyntheticDataset, GroundTruth]:
    """Generate the source and target sets for ``spec``, deterministic in ``rng_seed``."""
    spec.validate()
    rng = np.random.default_rng(spec.rng_seed)
    d = spec.d_raw
    gap = spec.modality_gap_strength
    shift = spec.domain_shift_strength

    modality_maps: Dict[str, Tuple[np.ndarray, np.ndarray]] = {}
    for modality in MODALITIES:
        rotation = _random_rotation(rng, d)
        bias = rng.standard_normal(d) / math.sqrt(d)
        modality_maps[modality] = (rotation, bias)

    direction = rng.standard_normal(d)
    direction /= np.linalg.norm(direction)
    offset = spec.offset_norm * direction
    scale = np.exp(0.5 * shift * rng.standard_normal(d))

    source_protos = _centered_prototypes(rng, spec.num_identities_source, d)
    target_protos = _centered_prototypes(rng, spec.num_identities_target, d)

    def content(protos: np.ndarray, modality: str) -> np.ndarray:
        rotation, bias = modality_maps[modality]
        return protos + gap * (protos @ rotation.T + bias)

    per = spec.samples_per_identity_per_modality
    source_ids = np.repeat(np.arange(spec.num_identities_source), per)
    target_ids = np.repeat(np.arange(spec.num_identities_target), per)

    source: Dict[str, np.ndarray] = {}
    target: Dict[str, np.ndarray] = {}
    for modality in MODALITIES:
        clean = content(source_protos[source_ids], modality)
        source[modality] = clean + spec.noise_sigma * rng.standard_normal(clean.shape)
        clean = content(target_protos[target_ids], modality) * scale + offset
        target[modality] = clean + spec.noise_sigma * rng.standard_normal(clean.shape)

    image_order = rng.permutation(len(target_ids))
    text_order = rng.permutation(len(target_ids))

    dataset = SyntheticDataset(
        source_images=[Sample(row, int(y), "image", "source") for row, y in zip(source["image"], source_ids)],
        source_texts=[Sample(row, int(y), "text", "source") for row, y in zip(source["text"], source_ids)],
        target_images=[Sample(target["image"][i], None, "image", "target") for i in image_order],
        target_texts=[Sample(target["text"][i], None, "text", "target") for i in text_order],
    )
    truth = GroundTruth(image_ids=target_ids[image_order].copy(), text_ids=target_ids[text_order].copy())
    logger.info(
        f"Generated {len(dataset.source_images)} source pairs and "
        f"{len(dataset.target_images)}/{len(dataset.target_texts)} target images/texts"
    )
    return dataset, truth


def batch_iter(items: Sequence[T], batch_size: int, rng_seed: int) -> Iterator[List[T]]:
    """Yield one shuffled epoch of ``items`` in batches; the last batch may be partial."""
    if batch_size < 1:
        raise ParameterError(f"batch_size must be >= 1, got {batch_size}")
    order = np.random.default_rng(rng_seed).permutation(len(items))
    return ([items[i] for i in order[start:start + batch_size]] for start in range(0, len(order), batch_size))


def stack_raw(samples: Sequence[Sample]) -> np.ndarray:
    if not samples:
        return np.zeros((0, 0))
    return np.stack([s.raw for s in samples]).astype(np.float64)
