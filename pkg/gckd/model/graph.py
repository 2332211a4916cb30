"""Dynamic cross-domain KNN graph and mean-aggregation GNN propagation.

Vertices are stacked as [input batch; source memory; target memory]. Each
vertex keeps its K most cosine-similar other vertices (ties go to the lower
index) and aggregates the mean of itself and those neighbors.
"""
from dataclasses import dataclass, field
import logging
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from gckd.errors import ConfigError, ShapeError, UsageError
from gckd.model.encoder import FeatureBatch
from gckd.model.params import ParamSet, gnn_depth, gnn_layer_names
from gckd.numerics import normalize_rows, normalize_rows_backward
from gckd.tags import role_for

logger = logging.getLogger(__name__)


@dataclass
class GraphConfig:
    """KNN graph and GNN settings."""

    k: int = 10  # neighbors per vertex
    layers: int = 2  # GNN depth L
    dump: bool = False  # write per-iteration edge lists

    def validate(self) -> None:
        if self.k < 1:
            raise ConfigError(f"graph.k must be >= 1, got {self.k}")
        if self.layers < 1:
            raise ConfigError(f"graph.layers must be >= 1, got {self.layers}")


@dataclass
class GnnLayerParams:
    weight: np.ndarray  # D x D
    bias: np.ndarray  # D


@dataclass
class CrossDomainGraph:
    X: np.ndarray  # (B + C_s + C_t) x D
    neighbors: np.ndarray  # V x k vertex indices, row j = j's out-neighbors
    num_input: int
    num_source_memory: int = 0
    num_target_memory: int = 0
    clamped: bool = False

    @property
    def num_vertices(self) -> int:
        return self.X.shape[0]

    @property
    def k(self) -> int:
        return self.neighbors.shape[1]

    def adjacency(self) -> np.ndarray:
        """Dense 0/1 adjacency, A[j, i] = 1 when i is among j's K nearest."""
        adj = np.zeros((self.num_vertices, self.num_vertices))
        rows = np.repeat(np.arange(self.num_vertices), self.k)
        adj[rows, self.neighbors.ravel()] = 1.0
        return adj

    def edges(self) -> List[Tuple[int, int]]:
        return [(int(j), int(i)) for j in range(self.num_vertices) for i in self.neighbors[j]]


@dataclass
class GnnCache:
    aggregated: List[np.ndarray] = field(default_factory=list)
    activations: List[np.ndarray] = field(default_factory=list)
    norms: Optional[np.ndarray] = None
    output: Optional[np.ndarray] = None


def gnn_layers(params: ParamSet) -> List[GnnLayerParams]:
    """View of the GNN stack inside a parameter set (arrays are shared)."""
    layers = []
    for i in range(gnn_depth(params)):
        w_name, b_name = gnn_layer_names(i)
        layers.append(GnnLayerParams(params[w_name], params[b_name]))
    return layers


def knn_neighbors(X: np.ndarray, k: int) -> np.ndarray:
    """Indices of each row's k most cosine-similar other rows, ties to the lower index."""
    unit = normalize_rows(X)
    # einsum keeps one summation order per entry so equal vectors tie exactly
    sims = np.einsum("id,jd->ij", unit, unit)
    np.fill_diagonal(sims, -np.inf)
    order = np.argsort(-sims, axis=1, kind="stable")
    return order[:, :k]


def build_graph(input_batch: FeatureBatch, src_mem: np.ndarray, tgt_mem: np.ndarray, K: int) -> CrossDomainGraph:
    """Stack inputs with both memories and connect each vertex to its K nearest."""
    dim = input_batch.features.shape[1]
    for name, mem in (("source memory", src_mem), ("target memory", tgt_mem)):
        if mem.ndim != 2 or (mem.shape[0] > 0 and mem.shape[1] != dim):
            raise ShapeError(f"{name} width {mem.shape} does not match embedding width {dim}")
    parts = [input_batch.features]
    parts += [m for m in (src_mem, tgt_mem) if m.shape[0] > 0]
    X = np.concatenate(parts, axis=0)
    V = X.shape[0]
    if V < 2:
        raise UsageError(f"graph needs at least 2 vertices, got {V}")
    if K < 1:
        raise UsageError(f"K must be >= 1, got {K}")
    clamped = K >= V
    if clamped:
        # Empty memories are expected while the banks warm up
        log = logger.debug if src_mem.shape[0] == 0 and tgt_mem.shape[0] == 0 else logger.warning
        log(f"K={K} exceeds the {V - 1} available neighbors; clamped to {V - 1}")
        K = V - 1
    return CrossDomainGraph(
        X=X,
        neighbors=knn_neighbors(X, K),
        num_input=input_batch.features.shape[0],
        num_source_memory=src_mem.shape[0],
        num_target_memory=tgt_mem.shape[0],
        clamped=clamped,
    )


def _aggregate(H: np.ndarray, neighbors: np.ndarray) -> np.ndarray:
    return (H + H[neighbors].sum(axis=1)) / (neighbors.shape[1] + 1)


def _aggregate_backward(grad_M: np.ndarray, neighbors: np.ndarray) -> np.ndarray:
    scaled = grad_M / (neighbors.shape[1] + 1)
    grad_H = scaled.copy()
    if neighbors.shape[1] > 0:
        np.add.at(grad_H, neighbors, np.broadcast_to(scaled[:, None, :], neighbors.shape + (scaled.shape[1],)))
    return grad_H


def gnn_forward_cached(g: CrossDomainGraph, layers: List[GnnLayerParams]) -> Tuple[np.ndarray, GnnCache]:
    if not layers:
        raise ShapeError("GNN needs at least one layer")
    cache = GnnCache()
    H = g.X
    for i, layer in enumerate(layers):
        if layer.weight.shape != (H.shape[1], H.shape[1]) or layer.bias.shape != (H.shape[1],):
            raise ShapeError(f"GNN layer {i} has shape {layer.weight.shape}, expected square width {H.shape[1]}")
        M = _aggregate(H, g.neighbors)
        cache.aggregated.append(M)
        Z = M @ layer.weight + layer.bias
        if i < len(layers) - 1:
            H = np.tanh(Z)
            cache.activations.append(H)
        else:
            cache.norms = np.linalg.norm(Z, axis=1, keepdims=True)
            H = normalize_rows(Z)
    cache.output = H
    return H, cache


def gnn_forward(g: CrossDomainGraph, layers: List[GnnLayerParams]) -> np.ndarray:
    return gnn_forward_cached(g, layers)[0]


def gnn_backward(layers: List[GnnLayerParams], g: CrossDomainGraph, cache: GnnCache,
                 grad_out: np.ndarray) -> Tuple[List[Tuple[np.ndarray, np.ndarray]], np.ndarray]:
    """Return ([(dW, db) per layer], dL/dX). Memory rows of dL/dX are discarded by callers."""
    grads: List[Tuple[np.ndarray, np.ndarray]] = [None] * len(layers)
    grad_Z = normalize_rows_backward(cache.output, cache.norms, grad_out)
    for i in reversed(range(len(layers))):
        M = cache.aggregated[i]
        grads[i] = (M.T @ grad_Z, grad_Z.sum(axis=0))
        grad_H = _aggregate_backward(grad_Z @ layers[i].weight.T, g.neighbors)
        if i > 0:
            act = cache.activations[i - 1]
            grad_Z = grad_H * (1.0 - act * act)
    return grads, grad_H


def extract_domain_aware(g_out: np.ndarray, B: int, input_batch: FeatureBatch) -> FeatureBatch:
    """First B propagated rows, tagged like the input batch (student provenance)."""
    if B > g_out.shape[0]:
        raise ShapeError(f"cannot take {B} rows from a {g_out.shape[0]}-row matrix")
    return FeatureBatch(g_out[:B].copy(), input_batch.domain, input_batch.modality, "student",
                        role_for(input_batch.domain, input_batch.modality))


def dump_edges(g: CrossDomainGraph, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for src, dst in g.edges():
            f.write(f"{src} {dst}\n")
