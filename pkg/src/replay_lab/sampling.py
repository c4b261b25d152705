"""Fixed-capacity replay buffer with pluggable update strategies.

The buffer is filled from a data stream one example at a time. Four update
strategies are supported:

* ``reservoir``      -- classic reservoir sampling: every stream item ends up
  in the buffer with equal probability capacity/N.
* ``brs``            -- balanced reservoir sampling: same admission rule, but
  the evicted slot is drawn from the most represented class.
* ``lars``           -- loss-aware balanced reservoir sampling: eviction
  probabilities combine per-item class counts with negated stored training
  losses, so well-fit items from crowded classes go first.
* ``ring``           -- class-wise FIFO segments of size capacity // classes.

All randomness flows through an injected ``numpy.random.Generator``; a buffer
is owned by a single training run and mutated sequentially.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

RESERVOIR = "reservoir"
BALANCED_RESERVOIR = "brs"
LOSS_AWARE_RESERVOIR = "lars"
RING = "ring"

STRATEGIES = (RESERVOIR, BALANCED_RESERVOIR, LOSS_AWARE_RESERVOIR, RING)


@dataclass
class StoredExample:
    """One buffered item: a flat feature vector, its class id, and the most
    recent training loss observed for it (used only by the loss-aware
    strategy; refreshed whenever the item is drawn for replay)."""

    features: np.ndarray
    label: int
    loss_score: float = 0.0


@dataclass
class ScoreVectors:
    """Intermediate quantities of the loss-aware eviction rule.

    ``s`` combines the two score vectors after ``alpha`` equalizes their L1
    masses; ``probs`` is the eviction distribution derived from ``s``.
    """

    s_balance: np.ndarray
    s_loss: np.ndarray
    alpha: float
    s: np.ndarray
    probs: np.ndarray


class ReplayBuffer:
    """Fixed-capacity store of past stream examples.

    ``seen_count`` tracks how many stream items have been offered to the
    buffer; the number of filled slots is ``min(seen_count, capacity)`` for
    the reservoir-family strategies. The ring strategy instead keeps one
    FIFO segment of ``capacity // class_count`` slots per class (remainder
    slots stay unused), so its fill pattern is not contiguous.

    Capacity 0 is the degenerate no-rehearsal buffer: updates only advance
    ``seen_count``.
    """

    def __init__(self, capacity: int, strategy: str = RESERVOIR,
                 class_count: int | None = None):
        if capacity < 0:
            raise ValueError(f"capacity must be >= 0, got {capacity}")
        if strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")
        if strategy == RING and not class_count:
            raise ValueError("ring strategy requires a declared class_count")
        self.capacity = capacity
        self.strategy = strategy
        self.class_count = class_count
        self.seen_count = 0
        self.last_insert_slot: int | None = None
        self._counts: dict[int, int] = {}
        if strategy == RING:
            self.slots: list[StoredExample | None] = [None] * capacity
            self._segment = capacity // class_count if class_count else 0
            self._ring_next = [0] * (class_count or 0)
        else:
            self.slots = []

    # -- inspection ---------------------------------------------------------

    @property
    def n_filled(self) -> int:
        if self.strategy == RING:
            return sum(s is not None for s in self.slots)
        return len(self.slots)

    @property
    def is_full(self) -> bool:
        return self.n_filled == self.capacity

    def filled_ids(self) -> list[int]:
        """Slot indices currently holding an example."""
        if self.strategy == RING:
            return [i for i, s in enumerate(self.slots) if s is not None]
        return list(range(len(self.slots)))

    def class_counts(self) -> dict[int, int]:
        """Number of stored items per class id (absent classes omitted)."""
        return dict(self._counts)

    def as_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """Stack stored features and labels into (n, d) / (n,) arrays."""
        items = [self.slots[i] for i in self.filled_ids()]
        if not items:
            raise ValueError("buffer is empty")
        feats = np.stack([it.features for it in items])
        labels = np.array([it.label for it in items], dtype=np.int64)
        return feats, labels

    def audit(self) -> list[tuple[int, int, float]]:
        """(slot id, label, loss_score) triples for run-report serialization."""
        return [(i, self.slots[i].label, float(self.slots[i].loss_score))
                for i in self.filled_ids()]

    # -- updates ------------------------------------------------------------

    def update(self, item: StoredExample, rng: np.random.Generator) -> None:
        """Offer one stream item to the buffer under the configured strategy.

        Always increments ``seen_count`` by exactly 1. Afterwards,
        ``last_insert_slot`` holds the slot the item went into, or None when
        it was not admitted.
        """
        self.last_insert_slot = None
        if self.capacity == 0:
            self.seen_count += 1
            return
        if self.strategy == RESERVOIR:
            self._reservoir_update(item, rng)
        elif self.strategy == BALANCED_RESERVOIR:
            self._balanced_update(item, rng)
        elif self.strategy == LOSS_AWARE_RESERVOIR:
            self._lars_update(item, rng)
        else:
            self._ring_update(item)
        self.seen_count += 1

    def _admission_draw(self, rng: np.random.Generator) -> int:
        # Uniform over {0..seen_count} inclusive: seen_count+1 outcomes, so
        # P(draw < capacity) = capacity / (seen_count + 1), the admission
        # probability shared by all reservoir-family strategies.
        return int(rng.integers(0, self.seen_count + 1))

    def _store(self, index: int, item: StoredExample) -> None:
        old = self.slots[index]
        if old is not None:
            self._counts[old.label] -= 1
            if self._counts[old.label] == 0:
                del self._counts[old.label]
        self.slots[index] = item
        self._counts[item.label] = self._counts.get(item.label, 0) + 1
        self.last_insert_slot = index

    def _append(self, item: StoredExample) -> None:
        self.slots.append(item)
        self._counts[item.label] = self._counts.get(item.label, 0) + 1
        self.last_insert_slot = len(self.slots) - 1

    def _reservoir_update(self, item: StoredExample, rng: np.random.Generator) -> None:
        if self.seen_count < self.capacity:
            self._append(item)
            return
        j = self._admission_draw(rng)
        if j < self.capacity:
            self._store(j, item)

    def _balanced_update(self, item: StoredExample, rng: np.random.Generator) -> None:
        if self.seen_count < self.capacity:
            self._append(item)
            return
        j = self._admission_draw(rng)
        if j < self.capacity:
            # The incoming item is not in the buffer yet, so it contributes
            # nothing to the class counts used for victim selection.
            victim = self._balanced_victim(rng)
            self._store(victim, item)

    def _balanced_victim(self, rng: np.random.Generator) -> int:
        max_count = max(self._counts.values())
        tied = sorted(c for c, n in self._counts.items() if n == max_count)
        cls = tied[int(rng.integers(0, len(tied)))]
        members = [i for i, s in enumerate(self.slots) if s.label == cls]
        return members[int(rng.integers(0, len(members)))]

    def _lars_update(self, item: StoredExample, rng: np.random.Generator) -> None:
        if self.seen_count < self.capacity:
            self._append(item)
            return
        j = self._admission_draw(rng)
        if j < self.capacity:
            probs = lars_scores(self).probs
            victim = int(rng.choice(len(probs), p=probs))
            self._store(victim, item)

    def _ring_update(self, item: StoredExample) -> None:
        if item.label >= (self.class_count or 0):
            raise ValueError(
                f"label {item.label} out of range for declared class_count {self.class_count}")
        if self._segment == 0:
            return
        base = item.label * self._segment
        offset = self._ring_next[item.label] % self._segment
        self._store(base + offset, item)
        self._ring_next[item.label] += 1

    # -- replay -------------------------------------------------------------

    def draw_replay_batch(self, batch_size: int,
                          rng: np.random.Generator) -> tuple[list[int], list[StoredExample]]:
        """Sample ``batch_size`` slots uniformly with replacement.

        Returns slot ids alongside the stored examples so the caller can
        push refreshed loss scores back to the right slots. Stored features
        are returned as-is; any augmentation happens downstream.
        """
        ids = self.filled_ids()
        if not ids:
            raise ValueError("cannot draw from an empty buffer")
        picks = rng.integers(0, len(ids), size=batch_size)
        chosen = [ids[int(p)] for p in picks]
        return chosen, [self.slots[i] for i in chosen]

    def refresh_loss_scores(self, indices, losses) -> None:
        """Overwrite the stored loss of each indexed slot with a fresh value.

        Only the loss scores change; features and labels are untouched.
        """
        losses = np.asarray(losses, dtype=float)
        if len(indices) != len(losses):
            raise ValueError("indices and losses must have the same length")
        filled = set(self.filled_ids())
        for idx, loss in zip(indices, losses):
            if idx not in filled:
                raise IndexError(f"slot {idx} is not a filled buffer slot")
            if loss < 0:
                raise ValueError(f"loss scores must be >= 0, got {loss}")
            self.slots[idx].loss_score = float(loss)


def lars_scores(buffer: ReplayBuffer) -> ScoreVectors:
    """Eviction scores of the loss-aware balanced strategy.

    Per filled slot k: ``s_balance[k]`` is the buffer count of slot k's
    class and ``s_loss[k]`` is its negated stored loss. ``alpha`` rescales
    the loss term so both vectors carry equal L1 mass (``alpha = 0`` when
    every stored loss is zero). The combined score ``s = s_loss * alpha +
    s_balance`` sums to zero whenever losses are non-negative, so a direct
    normalization is undefined; instead the scores are shifted by their
    minimum and normalized, falling back to uniform when all entries tie.
    """
    ids = buffer.filled_ids()
    if not ids:
        raise ValueError("cannot score an empty buffer")
    counts = buffer.class_counts()
    items = [buffer.slots[i] for i in ids]
    s_balance = np.array([counts[it.label] for it in items], dtype=float)
    s_loss = -np.array([it.loss_score for it in items], dtype=float)
    loss_mass = np.abs(s_loss).sum()
    alpha = float(np.abs(s_balance).sum() / loss_mass) if loss_mass > 0 else 0.0
    s = s_loss * alpha + s_balance
    shifted = np.maximum(s - s.min(), 0.0)
    total = shifted.sum()
    if total > 0:
        probs = shifted / total
    else:
        probs = np.full(len(s), 1.0 / len(s))
    return ScoreVectors(s_balance=s_balance, s_loss=s_loss, alpha=alpha, s=s, probs=probs)


def omission_probability(class_count: int, capacity: int) -> float:
    """Probability that a uniform sample of ``capacity`` items from
    ``class_count`` balanced classes leaves a given class out entirely:
    (1 - 1/C)^B. A single class can never be omitted."""
    if class_count < 1:
        raise ValueError(f"class_count must be >= 1, got {class_count}")
    if capacity < 0:
        raise ValueError(f"capacity must be >= 0, got {capacity}")
    if class_count == 1:
        return 0.0
    return float((1.0 - 1.0 / class_count) ** capacity)
