"""Named parameter sets shared by the student and the teacher."""
from collections import OrderedDict
from dataclasses import dataclass
import math
from typing import Dict, Iterator, List, Tuple

import numpy as np

from gckd.errors import ConfigError, StructuralError
from gckd.tags import MODALITIES

Grads = Dict[str, np.ndarray]


@dataclass
class ModelConfig:
    """Model widths."""

    embed_dim: int = 32  # D
    encoder_layers: int = 2  # affine layers per modality
    encoder_hidden: int = 0  # 0 -> 2 * embed_dim
    head_hidden: int = 0  # 0 -> embed_dim
    gnn_init_noise: float = 0.01  # perturbation around identity GNN weights

    def validate(self) -> None:
        if self.embed_dim < 1:
            raise ConfigError(f"model.embed_dim must be >= 1, got {self.embed_dim}")
        if self.encoder_layers < 1:
            raise ConfigError(f"model.encoder_layers must be >= 1, got {self.encoder_layers}")
        if self.encoder_hidden < 0 or self.head_hidden < 0:
            raise ConfigError("model hidden widths must be >= 0")

    @property
    def hidden_width(self) -> int:
        return self.encoder_hidden or 2 * self.embed_dim

    @property
    def head_width(self) -> int:
        return self.head_hidden or self.embed_dim

    def encoder_dims(self, d_raw: int) -> List[int]:
        """Layer widths from the raw input to the embedding, e.g. [d_raw, 2D, D]."""
        return [d_raw] + [self.hidden_width] * (self.encoder_layers - 1) + [self.embed_dim]


class ParamSet:
    """Ordered mapping of parameter name to float64 array."""

    def __init__(self, arrays=None) -> None:
        self._arrays: "OrderedDict[str, np.ndarray]" = OrderedDict()
        for name, value in (arrays or {}).items():
            self._arrays[name] = np.array(value, dtype=np.float64)

    def __getitem__(self, name: str) -> np.ndarray:
        return self._arrays[name]

    def __setitem__(self, name: str, value: np.ndarray) -> None:
        self._arrays[name] = np.asarray(value, dtype=np.float64)

    def __contains__(self, name: str) -> bool:
        return name in self._arrays

    def __iter__(self) -> Iterator[str]:
        return iter(self._arrays)

    def __len__(self) -> int:
        return len(self._arrays)

    def items(self):
        return self._arrays.items()

    def shapes(self) -> Dict[str, Tuple[int, ...]]:
        return {name: arr.shape for name, arr in self._arrays.items()}

    def update(self, other: "ParamSet") -> "ParamSet":
        for name, arr in other.items():
            self._arrays[name] = arr
        return self

    def zeros_like(self) -> Grads:
        return {name: np.zeros_like(arr) for name, arr in self._arrays.items()}

    def check_same_structure(self, other: "ParamSet") -> None:
        if self.shapes() != other.shapes():
            raise StructuralError("parameter sets differ in names or shapes")

    def equals(self, other: "ParamSet") -> bool:
        return self.shapes() == other.shapes() and all(
            np.array_equal(arr, other[name]) for name, arr in self._arrays.items())


def clone_params(p: ParamSet) -> ParamSet:
    """Deep copy; the two sets share no storage."""
    return ParamSet({name: arr.copy() for name, arr in p.items()})


def encoder_layer_names(modality: str, index: int) -> Tuple[str, str]:
    return f"encoder.{modality}.{index}.weight", f"encoder.{modality}.{index}.bias"


def gnn_layer_names(index: int) -> Tuple[str, str]:
    return f"gnn.{index}.weight", f"gnn.{index}.bias"


def encoder_depth(params: ParamSet, modality: str) -> int:
    depth = 0
    while encoder_layer_names(modality, depth)[0] in params:
        depth += 1
    return depth


def gnn_depth(params: ParamSet) -> int:
    depth = 0
    while gnn_layer_names(depth)[0] in params:
        depth += 1
    return depth


def init_encoder(rng_seed: int, dims: List[int]) -> ParamSet:
    """Per-modality affine stacks; weights ~ U(-1/sqrt(d_in), 1/sqrt(d_in)), zero biases."""
    rng = np.random.default_rng(rng_seed)
    params = ParamSet()
    for modality in MODALITIES:
        for i, (d_in, d_out) in enumerate(zip(dims[:-1], dims[1:])):
            w_name, b_name = encoder_layer_names(modality, i)
            bound = 1.0 / math.sqrt(d_in)
            params[w_name] = rng.uniform(-bound, bound, size=(d_in, d_out))
            params[b_name] = np.zeros(d_out)
    return params


def init_gnn(rng_seed: int, embed_dim: int, num_layers: int, noise: float) -> ParamSet:
    rng = np.random.default_rng([rng_seed, 1])
    params = ParamSet()
    bound = noise / math.sqrt(embed_dim)
    for layer in range(num_layers):
        w_name, b_name = gnn_layer_names(layer)
        params[w_name] = np.eye(embed_dim) + rng.uniform(-bound, bound, size=(embed_dim, embed_dim))
        params[b_name] = np.zeros(embed_dim)
    return params


def init_head(rng_seed: int, embed_dim: int, hidden: int) -> ParamSet:
    """Matching head: concat(image, text) (2D) -> hidden -> 2 logits."""
    rng = np.random.default_rng([rng_seed, 2])
    params = ParamSet()
    for i, (d_in, d_out) in enumerate([(2 * embed_dim, hidden), (hidden, 2)]):
        bound = 1.0 / math.sqrt(d_in)
        params[f"head.{i}.weight"] = rng.uniform(-bound, bound, size=(d_in, d_out))
        params[f"head.{i}.bias"] = np.zeros(d_out)
    return params


def init_model(rng_seed: int, model: ModelConfig, d_raw: int, gnn_layers: int) -> ParamSet:
    """Full student parameter set: encoders, GNN stack and matching head."""
    model.validate()
    params = init_encoder(rng_seed, model.encoder_dims(d_raw))
    params.update(init_gnn(rng_seed, model.embed_dim, gnn_layers, model.gnn_init_noise))
    params.update(init_head(rng_seed, model.embed_dim, model.head_width))
    return params
