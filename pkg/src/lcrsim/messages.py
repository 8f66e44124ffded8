"""Wire records exchanged between nodes and clients.

Sizes on the simulated network are derived from these via the size model:
a fixed per-message header plus a per-entry header plus exact payload bytes
(signal and no-op-fill entries are header-only).
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .logcore import Entry, EntryKind


@dataclass(slots=True)
class AppendEntriesRequest:
    term: int
    generation: int
    leader_id: int
    prev_log_index: int
    prev_log_term: int
    entries: list[Entry]
    leader_commit: int
    seq: int = 0  # in-flight bookkeeping at the sender


@dataclass(slots=True)
class AppendEntriesResponse:
    term: int
    generation: int
    success: bool
    # How far the responder's contiguous log extends after processing; also
    # the rollback carrier when a signal could not be resolved locally.
    last_applied_index_report: int
    last_future_index: int
    seq: int = 0
    # True when the prefix check passed, so the reported extent was verified
    # against the leader's stream and may advance the match point.
    prefix_ok: bool = True


@dataclass(slots=True)
class FutureReplicateRequest:
    term: int
    generation: int
    data_leader_id: int
    future_entries: list[Entry]


@dataclass(slots=True)
class FutureReplicateResponse:
    term: int
    generation: int
    accepted: bool
    last_future_index: int
    from_leader: bool
    reason: str = "ok"          # ok | conflict | stale_gen | stale_term
    indices: list[int] = field(default_factory=list)


@dataclass(slots=True)
class VoteRequest:
    term: int
    candidate_id: int
    last_log_index: int
    last_log_term: int


@dataclass(slots=True)
class VoteResponse:
    term: int
    granted: bool


@dataclass(slots=True)
class ClientRequest:
    request_id: str
    kind: str                   # "t" transactional | "nt" non-transactional
    payload: bytes
    client_id: str


@dataclass(slots=True)
class ClientResponse:
    request_id: str
    outcome: str                # Ok | Redirected | Rejected
    leader_hint: int | None = None


@dataclass(slots=True)
class ForwardedRequest:
    """A transactional request relayed by the follower that received it."""
    request: ClientRequest
    via: int


@dataclass(slots=True)
class ForwardedResponse:
    response: ClientResponse
    client_id: str


@dataclass(slots=True)
class ReconcileRequest:
    """New-leader pull of staged future entries it may lack."""
    term: int
    generation: int


@dataclass(slots=True)
class ReconcileResponse:
    term: int
    generation: int
    entries: list[Entry]


def message_bytes(msg, *, message_header: int, entry_header: int) -> int:
    """Byte cost of a message under the size model."""
    size = message_header

    def entry_cost(e: Entry) -> int:
        if e.kind in (EntryKind.SIGNAL, EntryKind.NOOP_FILL):
            return entry_header
        return entry_header + len(e.payload)

    if isinstance(msg, AppendEntriesRequest):
        size += sum(entry_cost(e) for e in msg.entries)
    elif isinstance(msg, FutureReplicateRequest):
        size += sum(entry_cost(e) for e in msg.future_entries)
    elif isinstance(msg, ReconcileResponse):
        size += sum(entry_cost(e) for e in msg.entries)
    elif isinstance(msg, ClientRequest):
        size += len(msg.payload)
    elif isinstance(msg, ForwardedRequest):
        size += len(msg.request.payload)
    return size
