"""Bounded store of rectified training samples.

Admission replaces the current smallest-loss entry once the store is
full, so the buffer keeps the samples the model finds hardest. Stored
losses are refreshed after every training pass.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyBatchError, LengthMismatchError

DEFAULT_CAPACITY = 32


@dataclass
class BatchEntry:
    patch: np.ndarray  # (C, S, S) specialist input
    target: np.ndarray  # (S, S) binary mask at patch resolution
    loss: float
    insert_step: int


@dataclass
class OnlineBatch:
    capacity: int = DEFAULT_CAPACITY
    entries: list[BatchEntry] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.capacity < 1:
            raise ValueError("capacity must be >= 1")

    def __len__(self) -> int:
        return len(self.entries)

    def losses(self) -> list[float]:
        return [e.loss for e in self.entries]

    def admit(self, entry: BatchEntry) -> tuple[bool, BatchEntry | None]:
        """Insert or replace per the smallest-loss policy.

        Below capacity the entry is appended. At capacity the stored
        entry with the smallest loss (ties: oldest insert_step) is
        replaced in place iff the new entry's loss is >= that minimum;
        otherwise the entry is rejected. Returns (admitted, evicted).
        """
        if len(self.entries) < self.capacity:
            self.entries.append(entry)
            return True, None
        min_idx = min(
            range(len(self.entries)),
            key=lambda i: (self.entries[i].loss, self.entries[i].insert_step),
        )
        victim = self.entries[min_idx]
        if entry.loss >= victim.loss:
            self.entries[min_idx] = entry  # slot position preserved
            return True, victim
        return False, None

    def refresh_losses(self, new_losses) -> None:
        """Overwrite each entry's stored loss, order unchanged."""
        new_losses = list(new_losses)
        if len(new_losses) != len(self.entries):
            raise LengthMismatchError(
                f"{len(new_losses)} losses for {len(self.entries)} entries"
            )
        for entry, loss in zip(self.entries, new_losses):
            entry.loss = float(loss)

    def snapshot(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """Stable-order (patch, target) view for a training pass."""
        if not self.entries:
            raise EmptyBatchError("snapshot of an empty batch")
        return [(e.patch, e.target) for e in self.entries]
