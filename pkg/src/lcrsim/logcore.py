"""Unified log storage, future-index allocation and window lifecycle.

All index arithmetic lives here: a data-leader with id ``s`` and generation
``g`` only ever claims indices congruent to ``s`` modulo ``g``, so two
data-leaders can never collide as long as they agree on the generation.
Windows gate how far ahead of the normal log a future index may be placed.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional


class EntryKind(enum.IntEnum):
    NORMAL = 0
    FUTURE = 1
    SIGNAL = 2
    NOOP_FILL = 3
    CONFIG = 4


class WindowState(enum.IntEnum):
    OPEN = 0
    CLOSED = 1


class StageOutcome(enum.IntEnum):
    STAGED = 0
    DUPLICATE = 1
    STALE_GENERATION = 2
    CONFLICT = 3


class NoOpenWindow(Exception):
    """No open window can host a future index for this allocation."""


@dataclass(slots=True)
class Entry:
    index: int
    term: int
    kind: EntryKind
    origin: int = 0            # data-leader id for future/signal kinds
    generation: int = 0        # meaningful for future/signal kinds
    request_id: str = ""
    payload: bytes = b""

    def same_record(self, other: "Entry") -> bool:
        return (self.index == other.index
                and self.request_id == other.request_id
                and self.generation == other.generation)


@dataclass(slots=True)
class Window:
    generation: int
    start: int
    end: int
    state: WindowState = WindowState.OPEN

    def contains(self, index: int) -> bool:
        return self.start <= index <= self.end


def owner_of(index: int, generation: int) -> int:
    """Which server id a future index belongs to under a given generation."""
    if generation < 1:
        raise ValueError("generation must be >= 1")
    return index % generation


def allocate_future_index(self_id: int, generation: int, future_last_index: int,
                          windows: list[Window]) -> int:
    """Allocate the next future index for a data-leader.

    Starts from ``self_id + generation + L - L % generation`` (with L the
    highest future index the node has seen) and advances in generation-sized
    steps until the candidate lands in an open window, so the residue is
    preserved while closed ranges are skipped.

    Raises NoOpenWindow when no open window can host any candidate.
    """
    if generation <= self_id:
        raise ValueError("generation must exceed every server id")
    lam = self_id + generation + future_last_index - (future_last_index % generation)
    open_windows = [w for w in windows if w.state == WindowState.OPEN]
    if not open_windows:
        raise NoOpenWindow(f"no open window for candidate {lam}")
    limit = max(w.end for w in open_windows)
    while lam <= limit:
        for w in open_windows:
            if w.contains(lam):
                return lam
        lam += generation
    raise NoOpenWindow(f"candidate ran past last open window end {limit}")


def reallocate_index(lam: int, old_gen: int, new_gen: int, self_id: int) -> int:
    """Remap a future index after a generation increase.

    ``floor(lam / old_gen) * new_gen + self_id`` keeps the residue under the
    new generation and never moves the index backwards.
    """
    if lam % old_gen != self_id:
        raise ValueError(
            f"index {lam} is not owned by server {self_id} under generation {old_gen}")
    if new_gen < old_gen:
        raise ValueError("generation never decreases")
    return (lam // old_gen) * new_gen + self_id


def maintain_windows(normal_last_index: int, windows: list[Window], *,
                     window_size: int, open_window_count: int = 2,
                     generation: int = 0) -> list[Window]:
    """Close windows the normal log has reached and top up open ones ahead.

    A window closes permanently once the normal-log last index reaches its
    start; afterwards at least ``open_window_count`` open windows exist ahead
    of the normal log. Windows are aligned so starts are ``1 mod window_size``.
    """
    out = list(windows)
    for w in out:
        if w.state == WindowState.OPEN and w.start <= normal_last_index:
            w.state = WindowState.CLOSED
    open_count = sum(1 for w in out if w.state == WindowState.OPEN)
    if out:
        next_start = out[-1].end + 1
    else:
        next_start = (normal_last_index // window_size) * window_size + 1
        if next_start <= normal_last_index:
            next_start += window_size
    while open_count < open_window_count:
        out.append(Window(generation=generation, start=next_start,
                          end=next_start + window_size - 1))
        next_start += window_size
        open_count += 1
    return out


@dataclass
class FutureStage:
    """Future entries received via future replication, not yet resolved into
    the leader-sequenced log."""

    pending: dict[int, Entry] = field(default_factory=dict)
    max_index_seen: int = 0

    def stage(self, entry: Entry, local_generation: int) -> StageOutcome:
        if entry.kind != EntryKind.FUTURE:
            raise ValueError("only future entries can be staged")
        if entry.generation < local_generation:
            return StageOutcome.STALE_GENERATION
        held = self.pending.get(entry.index)
        if held is not None:
            if held.same_record(entry):
                return StageOutcome.DUPLICATE
            return StageOutcome.CONFLICT
        self.pending[entry.index] = entry
        if entry.index > self.max_index_seen:
            self.max_index_seen = entry.index
        return StageOutcome.STAGED

    def take(self, index: int) -> Optional[Entry]:
        return self.pending.pop(index, None)

    def peek(self, index: int) -> Optional[Entry]:
        return self.pending.get(index)

    def drop(self, index: int) -> None:
        self.pending.pop(index, None)

    def bytes_held(self, entry_header_bytes: int) -> int:
        return sum(entry_header_bytes + len(e.payload) for e in self.pending.values())


class CommittedMutation(Exception):
    """A mutation touched an index at or below the commit point."""


class UnifiedLog:
    """Index-ordered entry store with possible gaps above the contiguous
    prefix (gaps are slots claimed by future entries not yet confirmed)."""

    def __init__(self) -> None:
        self.entries: dict[int, Entry] = {}
        self.last_index = 0
        self.last_contiguous_index = 0

    def get(self, index: int) -> Optional[Entry]:
        return self.entries.get(index)

    def append(self, entry: Entry, commit_index: int = 0) -> None:
        if entry.index <= 0:
            raise ValueError("log indices start at 1")
        if entry.index <= commit_index:
            raise CommittedMutation(f"index {entry.index} already committed")
        self.entries[entry.index] = entry
        if entry.index > self.last_index:
            self.last_index = entry.index
        self._advance_contiguous()

    def truncate_from(self, index: int, commit_index: int = 0) -> None:
        if index <= commit_index:
            raise CommittedMutation(f"truncate at {index} crosses commit {commit_index}")
        for i in [i for i in self.entries if i >= index]:
            del self.entries[i]
        self.last_index = max(self.entries, default=0)
        self.last_contiguous_index = min(self.last_contiguous_index, index - 1)
        self._advance_contiguous()

    def _advance_contiguous(self) -> None:
        i = self.last_contiguous_index
        while (i + 1) in self.entries:
            i += 1
        self.last_contiguous_index = i

    def occupied(self, index: int) -> bool:
        return index in self.entries

    def dump_lines(self):
        """Debug dump: index,term,generation,kind,origin,requestId,payloadHex."""
        for i in sorted(self.entries):
            e = self.entries[i]
            yield (f"{e.index},{e.term},{e.generation},{e.kind.name},"
                   f"{e.origin},{e.request_id},{e.payload.hex()}")
