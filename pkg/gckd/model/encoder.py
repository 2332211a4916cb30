"""Per-modality MLP encoders producing unit-norm embeddings.

Layers are affine with tanh between them; the last layer is linear and is
followed by L2 normalization, whose gradient is part of the backward pass.
"""
from dataclasses import dataclass, field
from typing import Dict, List, Sequence

import numpy as np

from gckd.data.synth import Sample, stack_raw
from gckd.errors import ParameterError, ShapeError, UsageError
from gckd.model.params import Grads, ParamSet, encoder_depth, encoder_layer_names
from gckd.numerics import normalize_rows, normalize_rows_backward
from gckd.tags import Domain, Modality, Provenance, ROLE_TAGS, role_for
from gckd.utils.validation import ensure_unit_rows


@dataclass
class FeatureBatch:
    """Unit-norm embeddings tagged with domain, modality, provenance and role."""

    features: np.ndarray
    domain: Domain
    modality: Modality
    provenance: Provenance
    role: str

    def __post_init__(self) -> None:
        if self.role not in ROLE_TAGS:
            raise UsageError(f"unknown feature role {self.role!r}")
        if ROLE_TAGS[self.role] != (self.domain, self.modality):
            raise UsageError(f"role {self.role} is inconsistent with {self.domain}/{self.modality}")
        if self.role.startswith("f_hat_") != (self.provenance == "teacher"):
            raise UsageError(f"role {self.role} is inconsistent with provenance {self.provenance}")
        if self.features.ndim != 2:
            raise ShapeError(f"features must be 2-D, got shape {self.features.shape}")
        ensure_unit_rows(self.features, name=self.role)

    def __len__(self) -> int:
        return self.features.shape[0]


@dataclass
class EncoderCache:
    inputs: List[np.ndarray] = field(default_factory=list)  # input of each layer
    hidden: List[np.ndarray] = field(default_factory=list)  # tanh outputs
    norms: np.ndarray = None
    output: np.ndarray = None


def encode(params: ParamSet, modality: str, x: np.ndarray):
    """Forward ``x`` (B x d_raw) through the ``modality`` encoder; returns (features, cache)."""
    depth = encoder_depth(params, modality)
    if depth == 0:
        raise ShapeError(f"no encoder layers for modality {modality!r}")
    cache = EncoderCache()
    h = x
    for i in range(depth):
        w_name, b_name = encoder_layer_names(modality, i)
        weight = params[w_name]
        if h.shape[1] != weight.shape[0]:
            raise ShapeError(f"{w_name} expects width {weight.shape[0]}, got {h.shape[1]}")
        cache.inputs.append(h)
        z = h @ weight + params[b_name]
        if i < depth - 1:
            h = np.tanh(z)
            cache.hidden.append(h)
        else:
            h = z
    cache.norms = np.linalg.norm(h, axis=1, keepdims=True)
    cache.output = normalize_rows(h)
    return cache.output, cache


def encode_backward(params: ParamSet, modality: str, cache: EncoderCache, grad_out: np.ndarray) -> Grads:
    """Gradients of the encoder parameters given dL/d(features)."""
    grads: Dict[str, np.ndarray] = {}
    depth = encoder_depth(params, modality)
    grad_z = normalize_rows_backward(cache.output, cache.norms, grad_out)
    for i in reversed(range(depth)):
        w_name, b_name = encoder_layer_names(modality, i)
        grads[w_name] = cache.inputs[i].T @ grad_z
        grads[b_name] = grad_z.sum(axis=0)
        if i > 0:
            h = cache.hidden[i - 1]
            grad_z = (grad_z @ params[w_name].T) * (1.0 - h * h)
    return grads


def forward(params: ParamSet, batch: Sequence[Sample], provenance: Provenance = "student") -> FeatureBatch:
    """Encode a single-modality, single-domain batch of samples."""
    if not batch:
        raise UsageError("cannot encode an empty batch")
    modalities = {s.modality for s in batch}
    domains = {s.domain for s in batch}
    if len(modalities) != 1:
        raise UsageError(f"batch mixes modalities {sorted(modalities)}")
    if len(domains) != 1:
        raise UsageError(f"batch mixes domains {sorted(domains)}")
    modality, domain = modalities.pop(), domains.pop()
    raw = stack_raw(batch)
    if not np.all(np.isfinite(raw)):
        raise ParameterError("sample vectors must be finite")
    feats, _ = encode(params, modality, raw)
    return FeatureBatch(feats, domain, modality, provenance, role_for(domain, modality, provenance))


def encode_matrix(params: ParamSet, modality: str, raw: np.ndarray, chunk: int = 1024) -> np.ndarray:
    """Encode a large raw matrix in chunks (evaluation path, no cache kept)."""
    parts = [encode(params, modality, raw[i:i + chunk])[0] for i in range(0, raw.shape[0], chunk)]
    return np.concatenate(parts, axis=0) if parts else np.zeros((0, 0))
