"""Fixed-capacity FIFO embedding queues (source/target x image/text)."""
from dataclasses import dataclass
import logging
from typing import Dict, Optional

import numpy as np

from gckd.errors import ConfigError, ParameterError, UsageError
from gckd.model.encoder import FeatureBatch
from gckd.tags import Domain, Modality

logger = logging.getLogger(__name__)


@dataclass
class MemoryConfig:
    """Queue sizes."""

    capacity: int = 256  # C
    min_fill: int = 0  # entries needed before a bank is used; 0 -> capacity // 4

    def validate(self) -> None:
        if self.capacity < 1:
            raise ConfigError(f"memory.capacity must be >= 1, got {self.capacity}")
        if self.min_fill < 0 or self.min_fill > self.capacity:
            raise ConfigError(f"memory.min_fill must lie in [0, capacity], got {self.min_fill}")

    @property
    def effective_min_fill(self) -> int:
        return self.min_fill or max(1, self.capacity // 4)


# Bank name -> (domain, modality)
BANK_TAGS: Dict[str, tuple] = {
    "SI": ("source", "image"),
    "ST": ("source", "text"),
    "TI": ("target", "image"),
    "TT": ("target", "text"),
}


class MemoryBank:
    """Ring buffer holding the most recent ``capacity`` unit-norm embeddings."""

    def __init__(self, name: str, capacity: int, dim: int) -> None:
        if name not in BANK_TAGS:
            raise UsageError(f"unknown memory bank {name!r}")
        if capacity < 1:
            raise ParameterError(f"memory capacity must be >= 1, got {capacity}")
        self.name = name
        self.domain: Domain
        self.modality: Modality
        self.domain, self.modality = BANK_TAGS[name]
        self.capacity = capacity
        self.dim = dim
        self.data = np.zeros((capacity, dim))
        self.stamps = np.zeros(capacity, dtype=np.int64)
        self.count = 0
        self.write_cursor = 0

    def __len__(self) -> int:
        return self.count

    def push_batch(self, feats: FeatureBatch, iteration: int = 0) -> "MemoryBank":
        """Enqueue rows in order, evicting the oldest entries once full."""
        if (feats.domain, feats.modality) != (self.domain, self.modality):
            raise UsageError(
                f"bank Q_{self.name} holds {self.domain}/{self.modality}, "
                f"got {feats.domain}/{feats.modality}")
        values = feats.features
        if values.shape[1] != self.dim:
            raise UsageError(f"bank Q_{self.name} has width {self.dim}, got {values.shape[1]}")
        n = values.shape[0]
        if n >= self.capacity:
            # Only the newest `capacity` rows survive
            self.data[:] = values[n - self.capacity:]
            self.stamps[:] = iteration
            self.write_cursor = 0
            self.count = self.capacity
            return self
        residual = self.capacity - self.write_cursor
        new_cursor = (self.write_cursor + n) % self.capacity
        if residual < n:
            self.data[self.write_cursor:] = values[:residual]
            self.data[:new_cursor] = values[residual:]
            self.stamps[self.write_cursor:] = iteration
            self.stamps[:new_cursor] = iteration
        else:
            self.data[self.write_cursor:self.write_cursor + n] = values
            self.stamps[self.write_cursor:self.write_cursor + n] = iteration
        self.write_cursor = new_cursor
        self.count = min(self.capacity, self.count + n)
        return self

    def _order(self) -> np.ndarray:
        if self.count < self.capacity:
            return np.arange(self.count)
        return (np.arange(self.capacity) + self.write_cursor) % self.capacity

    def snapshot(self) -> np.ndarray:
        """Copy of the entries, oldest first."""
        return self.data[self._order()].copy()

    def snapshot_stamps(self) -> np.ndarray:
        return self.stamps[self._order()].copy()

    def is_ready(self, min_fill: int) -> bool:
        return self.count > 0 and self.count >= min_fill


class MemoryBanks:
    """The four queues Q_SI, Q_ST, Q_TI, Q_TT."""

    def __init__(self, capacity: int, dim: int) -> None:
        self.banks: Dict[str, MemoryBank] = {name: MemoryBank(name, capacity, dim) for name in BANK_TAGS}

    def __getitem__(self, name: str) -> MemoryBank:
        return self.banks[name]

    def items(self):
        return self.banks.items()

    def ready_snapshot(self, name: str, min_fill: int) -> Optional[np.ndarray]:
        """Snapshot of a bank, or None while it is below ``min_fill``."""
        bank = self.banks[name]
        if not bank.is_ready(min_fill):
            return None
        return bank.snapshot()
