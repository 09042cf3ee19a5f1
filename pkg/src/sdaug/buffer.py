"""Bounded top-k buffer of self-generated sequences ranked by a reference metric."""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import BufferEmpty, ContractError
from .rng import RngStream
from .vocab import TokenSequence


@dataclass
class BufferEntry:
    seq: TokenSequence
    score: float
    counter: int  # insertion order; earlier wins score ties


@dataclass
class AugmentationBuffer:
    """Holds the k highest-scoring distinct sequences ever offered.

    Scores are computed once, when a candidate is offered, and never
    refreshed; ties keep the earlier-inserted entry.  Exact duplicates
    (same ids and termination) are never stored twice.
    """

    capacity: int
    entries: dict[tuple, BufferEntry] = field(default_factory=dict)
    next_counter: int = 0
    metric_failures: int = 0

    def __post_init__(self):
        if self.capacity < 0:
            raise ContractError("buffer capacity must be >= 0")

    def __len__(self) -> int:
        return len(self.entries)

    def ranked(self) -> list[BufferEntry]:
        """Entries best-first; the canonical order for sampling and dumps."""
        return sorted(self.entries.values(), key=lambda e: (-e.score, e.counter))

    @property
    def min_score(self) -> float | None:
        return min((e.score for e in self.entries.values()), default=None)

    @property
    def max_score(self) -> float | None:
        return max((e.score for e in self.entries.values()), default=None)


def buffer_update(buf: AugmentationBuffer, candidates: list[TokenSequence],
                  metric) -> int:
    """Merge scored candidates and keep the top-k; returns how many of this
    call's candidates are in the buffer afterwards.

    Candidates whose metric evaluation raises are skipped and counted in
    `buf.metric_failures`.
    """
    fresh: list[BufferEntry] = []
    seen_now = set()
    for cand in candidates:
        key = cand.key()
        if key in buf.entries or key in seen_now:
            continue
        try:
            score = float(metric.score(cand))
        except Exception:
            buf.metric_failures += 1
            continue
        if not (score == score):  # NaN guard
            buf.metric_failures += 1
            continue
        seen_now.add(key)
        fresh.append(BufferEntry(cand, score, buf.next_counter))
        buf.next_counter += 1
    merged = list(buf.entries.values()) + fresh
    merged.sort(key=lambda e: (-e.score, e.counter))
    kept = merged[: buf.capacity]
    buf.entries = {e.seq.key(): e for e in kept}
    fresh_keys = {e.seq.key() for e in fresh}
    return sum(1 for e in kept if e.seq.key() in fresh_keys)


def buffer_sample(buf: AugmentationBuffer, batch_size: int,
                  rng: RngStream) -> list[TokenSequence]:
    """Uniform sample with replacement over current entries."""
    if len(buf) == 0:
        raise BufferEmpty("augmentation buffer has no entries yet")
    ranked = buf.ranked()
    idx = rng.integers(0, len(ranked), size=batch_size)
    return [ranked[int(i)].seq for i in idx]


def buffer_dump_lines(buf: AugmentationBuffer, vocab) -> list[str]:
    """Buffer contents in corpus text format, best-first."""
    return [" ".join(vocab.decode(e.seq)) for e in buf.ranked()]
