"""Per-node protocol state machine.

One class covers both protocol modes: the baseline leader-only replication
mode ("raft") and the follower-led future-log mode ("lcr"). A node is a pure
event handler: the harness delivers one message or timer at a time and the
node reacts by mutating its own state and emitting messages through the
context. Nothing here touches wall-clock time or global state.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .kv import KvStateMachine
from .logcore import (Entry, EntryKind, FutureStage, NoOpenWindow, StageOutcome,
                      UnifiedLog, Window, WindowState, allocate_future_index,
                      maintain_windows, owner_of, reallocate_index)
from .messages import (AppendEntriesRequest, AppendEntriesResponse, ClientRequest,
                       ClientResponse, ForwardedRequest, ForwardedResponse,
                       FutureReplicateRequest, FutureReplicateResponse,
                       ReconcileRequest, ReconcileResponse, VoteRequest,
                       VoteResponse)

FOLLOWER = "follower"
CANDIDATE = "candidate"
LEADER = "leader"


@dataclass
class NodeConfig:
    protocol: str = "lcr"              # "lcr" | "raft"
    election_timeout_us: int = 5_000_000
    election_jitter: float = 0.2       # timeout drawn from [T, (1+jitter)T]
    heartbeat_us: int = 500_000
    max_await_us: int = 1_000_000
    max_flying: int = 16
    max_entries: int = 5000
    window_size: int = 100
    open_window_count: int = 2
    step_threshold: int = 400          # future-index lead before gap filling
    step_timeout_us: int = 1_000_000
    # never fill around futures integrated more recently than this: their
    # neighbours' replication may still be in flight from slower peers
    step_grace_us: int = 50_000
    reconcile_on_election: bool = True
    housekeeping_us: int = 100_000


@dataclass
class PendingFuture:
    entry: Entry
    client_id: str
    acks: set = field(default_factory=set)
    leader_ack: bool = False
    acked: bool = False
    created: int = 0
    last_sent: int = 0


@dataclass
class PersistentState:
    """What survives a crash: term, vote, both logs, membership view and the
    applied state machine (the paper stores applies in a durable KV store)."""
    current_term: int = 0
    voted_for: Optional[int] = None
    log: UnifiedLog = field(default_factory=UnifiedLog)
    stage: FutureStage = field(default_factory=FutureStage)
    generation: int = 0
    membership: list = field(default_factory=list)
    kv: KvStateMachine = field(default_factory=KvStateMachine)
    last_applied: int = 0
    future_frontier: int = 0


class Node:
    def __init__(self, node_id: int, membership: list[int], cfg: NodeConfig, ctx,
                 persist: PersistentState | None = None, bootstrap_leader: bool = False):
        self.id = node_id
        self.cfg = cfg
        self.ctx = ctx
        p = persist or PersistentState(generation=len(membership) or 1,
                                       membership=list(membership))
        self.persist = p
        self.log = p.log
        self.stage = p.stage
        self.kv = p.kv

        self.role = FOLLOWER
        self.leader_id: Optional[int] = None
        self.commit_index = p.last_applied
        self.votes: set[int] = set()
        self.election_deadline = 0

        # leader volatile state
        self.next_index: dict[int, int] = {}
        self.opt_next: dict[int, int] = {}
        self.match_index: dict[int, int] = {}
        self.last_future_ack: dict[int, int] = {}
        self.inflight: dict[int, list[int]] = {}
        self.last_sent: dict[int, int] = {}
        self.max_sent: dict[int, int] = {}
        self.last_resp: dict[int, int] = {}
        self.force_full: set = set()
        self.integrated_at: dict[int, int] = {}   # future idx -> integration time
        self.normal_cursor = 1
        self._seq = 0

        # data-leader state
        self.pending_futures: dict[int, PendingFuture] = {}
        self.pending_by_rid: dict[str, int] = {}
        self.parked_futures: list[PendingFuture] = []

        self.pending_client: dict[str, tuple[str, Optional[int]]] = {}
        self.windows: list[Window] = []
        self.staged_bytes_peak = 0

        if self.cfg.protocol == "lcr":
            self._refresh_windows()
        if bootstrap_leader:
            self.persist.current_term = max(1, self.persist.current_term)
            self._become_leader()
        else:
            self._reset_election_timer()
        self.ctx.set_timer("housekeeping", cfg.housekeeping_us)

    # -- small helpers -----------------------------------------------------

    @property
    def term(self) -> int:
        return self.persist.current_term

    @property
    def generation(self) -> int:
        return self.persist.generation

    @property
    def membership(self) -> list[int]:
        return self.persist.membership

    def _majority(self) -> int:
        return len(self.membership) // 2 + 1

    def _others(self):
        return [m for m in self.membership if m != self.id]

    def _term_at(self, index: int) -> int:
        if index <= 0:
            return 0
        e = self.log.get(index)
        return e.term if e else 0

    def _frontier_view(self) -> int:
        """Highest future index this node has seen: its own allocations plus
        everything staged on behalf of other data-leaders."""
        return max(self.persist.future_frontier, self.stage.max_index_seen)

    def _normal_last_index(self) -> int:
        # windows close against leader-sequenced progress only
        return self.log.last_contiguous_index

    def _refresh_windows(self) -> None:
        was_open = {w.start for w in self.windows if w.state == WindowState.OPEN}
        self.windows = maintain_windows(
            self._normal_last_index(), self.windows,
            window_size=self.cfg.window_size,
            open_window_count=self.cfg.open_window_count,
            generation=self.generation)
        for w in self.windows:
            if w.state == WindowState.CLOSED and w.start in was_open:
                self.ctx.trace("window_close",
                               detail=f"start={w.start}|end={w.end}|gen={w.generation}")
        # closed windows behind the contiguous log can never matter again
        horizon = self._normal_last_index()
        if self.windows and self.windows[0].end < horizon:
            self.windows = [w for w in self.windows
                            if w.end >= horizon or w.state == WindowState.OPEN]

    def _note_staged_bytes(self) -> None:
        b = self.stage.bytes_held(self.ctx.entry_header_bytes)
        if b > self.staged_bytes_peak:
            self.staged_bytes_peak = b

    # -- timers ------------------------------------------------------------

    def _reset_election_timer(self) -> None:
        base = self.cfg.election_timeout_us
        span = int(base * self.cfg.election_jitter)
        self.election_deadline = self.ctx.now + base + self.ctx.rng.randrange(span + 1)
        self.ctx.set_timer("election", self.election_deadline - self.ctx.now)

    def on_timer(self, name: str) -> None:
        if name == "election":
            if self.role != LEADER and self.ctx.now >= self.election_deadline:
                if self.membership and self.id in self.membership:
                    self._start_election()
                else:
                    self._reset_election_timer()
        elif name == "heartbeat":
            if self.role == LEADER:
                for f in self._others():
                    if (self.inflight.get(f) and self.ctx.now -
                            self.last_resp.get(f, 0) >= self.cfg.max_await_us):
                        # follower went silent with requests outstanding:
                        # restart its stream from the last confirmed point
                        self.inflight[f] = []
                        self.opt_next[f] = self.next_index[f]
                        self.last_resp[f] = self.ctx.now
                        self._try_replicate(f)
                    if self.ctx.now - self.last_sent.get(f, -10**12) >= self.cfg.heartbeat_us:
                        self._send_append(f, heartbeat=True)
                self._step_fill()
                self.ctx.set_timer("heartbeat", self.cfg.heartbeat_us)
        elif name == "housekeeping":
            self._housekeeping()
            self.ctx.set_timer("housekeeping", self.cfg.housekeeping_us)

    def _housekeeping(self) -> None:
        if self.cfg.protocol != "lcr":
            return
        now = self.ctx.now
        for idx, p in list(self.pending_futures.items()):
            if p.acked or idx not in self.stage.pending:
                continue
            if now - p.last_sent >= self.cfg.max_await_us:
                self._broadcast_future(p, retransmit=True,
                                       skip=p.acks)
        if self.parked_futures:
            parked, self.parked_futures = self.parked_futures, []
            for p in parked:
                self._restage_pending(p)
        if self.role == LEADER:
            self._step_fill()

    # -- elections ---------------------------------------------------------

    def _start_election(self) -> None:
        self.role = CANDIDATE
        self.persist.current_term += 1
        self.persist.voted_for = self.id
        self.votes = {self.id}
        self.leader_id = None
        self.ctx.trace("elect", detail=f"candidate|term={self.term}")
        self._reset_election_timer()
        req = VoteRequest(term=self.term, candidate_id=self.id,
                          last_log_index=self.log.last_contiguous_index,
                          last_log_term=self._term_at(self.log.last_contiguous_index))
        for m in self._others():
            self.ctx.send(m, req)
        if len(self.votes) >= self._majority():
            self._become_leader()

    def _step_down(self, term: int, leader: Optional[int] = None,
                   reset_timer: bool = True) -> None:
        if term > self.term:
            self.persist.current_term = term
            self.persist.voted_for = None
        if self.role == LEADER:
            self.integrated_at.clear()
        self.role = FOLLOWER
        if leader is not None:
            self.leader_id = leader
        if reset_timer:
            self._reset_election_timer()

    def _become_leader(self) -> None:
        self.role = LEADER
        self.leader_id = self.id
        self.ctx.trace("elect", detail=f"leader|term={self.term}")
        start = self.log.last_contiguous_index + 1
        for f in self._others():
            self.next_index[f] = start
            self.opt_next[f] = start
            self.match_index[f] = 0
            self.last_future_ack[f] = 0
            self.inflight[f] = []
            self.last_sent[f] = -10**12
            self.max_sent[f] = 0
            self.last_resp[f] = self.ctx.now
        self.force_full = set()
        self.integrated_at = {i: self.ctx.now for i in self.log.entries
                              if i > self.log.last_contiguous_index}
        self.normal_cursor = 1
        if self.cfg.protocol == "lcr":
            for e in list(self.stage.pending.values()):
                self._integrate_future(e)
            if self.cfg.reconcile_on_election:
                for m in self._others():
                    self.ctx.send(m, ReconcileRequest(self.term, self.generation))
        # term barrier so older entries can commit
        self._append_normal(Entry(index=0, term=self.term, kind=EntryKind.NOOP_FILL))
        for f in self._others():
            self._send_append(f, heartbeat=True)
        self.ctx.set_timer("heartbeat", self.cfg.heartbeat_us)

    def handle_vote_request(self, frm: int, req: VoteRequest) -> None:
        if req.term > self.term:
            # a candidate with a stale log must not postpone our own election,
            # so the timer only resets when the vote is actually granted
            self._step_down(req.term, reset_timer=False)
        granted = False
        if req.term == self.term and self.persist.voted_for in (None, req.candidate_id):
            mine = (self._term_at(self.log.last_contiguous_index),
                    self.log.last_contiguous_index)
            theirs = (req.last_log_term, req.last_log_index)
            if theirs >= mine:
                granted = True
                self.persist.voted_for = req.candidate_id
                self._reset_election_timer()
        self.ctx.send(frm, VoteResponse(term=self.term, granted=granted))

    def handle_vote_response(self, frm: int, resp: VoteResponse) -> None:
        if resp.term > self.term:
            self._step_down(resp.term)
            return
        if self.role == CANDIDATE and resp.term == self.term and resp.granted:
            self.votes.add(frm)
            if len(self.votes) >= self._majority():
                self._become_leader()

    # -- client requests ---------------------------------------------------

    def handle_client_request(self, req: ClientRequest, via: Optional[int] = None) -> None:
        if self.kv.applied(req.request_id):
            self._respond_client(req.client_id, via,
                                 ClientResponse(req.request_id, "Ok"))
            return
        if self.role == LEADER:
            self._leader_accept(req, via)
            return
        if (req.kind == "nt" and self.cfg.protocol == "lcr"
                and self.id in self.membership and self.leader_id is not None):
            self._data_leader_accept(req)
            return
        if self.leader_id is not None and self.leader_id != self.id:
            self.ctx.send(self.leader_id, ForwardedRequest(request=req, via=self.id))
        else:
            self._respond_client(req.client_id, via,
                                 ClientResponse(req.request_id, "Rejected",
                                                leader_hint=self.leader_id))

    def _leader_accept(self, req: ClientRequest, via: Optional[int]) -> None:
        if req.request_id in self.pending_client:
            self.pending_client[req.request_id] = (req.client_id, via)
            return
        self.pending_client[req.request_id] = (req.client_id, via)
        self._append_normal(Entry(index=0, term=self.term, kind=EntryKind.NORMAL,
                                  request_id=req.request_id, payload=req.payload))
        for f in self._others():
            self._try_replicate(f)

    def _append_normal(self, entry: Entry) -> None:
        while self.log.occupied(self.normal_cursor):
            self.normal_cursor += 1
        entry.index = self.normal_cursor
        self.log.append(entry, self.commit_index)
        self.normal_cursor += 1
        self._refresh_windows()
        self._advance_commit()

    def next_normal_index(self) -> int:
        cur = self.normal_cursor
        while self.log.occupied(cur):
            cur += 1
        return cur

    def _data_leader_accept(self, req: ClientRequest) -> None:
        if req.request_id in self.pending_by_rid:
            return  # retransmitted request, replication already in flight
        try:
            idx = allocate_future_index(self.id, self.generation,
                                        self._frontier_view(), self.windows)
        except NoOpenWindow:
            self._respond_client(req.client_id, None,
                                 ClientResponse(req.request_id, "Rejected"))
            return
        entry = Entry(index=idx, term=self.term, kind=EntryKind.FUTURE,
                      origin=self.id, generation=self.generation,
                      request_id=req.request_id, payload=req.payload)
        self.persist.future_frontier = max(self.persist.future_frontier, idx)
        self.stage.stage(entry, self.generation)
        self._note_staged_bytes()
        self.ctx.trace("alloc", detail=f"idx={idx}|gen={self.generation}|origin={self.id}")
        p = PendingFuture(entry=entry, client_id=req.client_id,
                          acks={self.id}, created=self.ctx.now)
        self.pending_futures[idx] = p
        self.pending_by_rid[req.request_id] = idx
        self._broadcast_future(p)

    def _broadcast_future(self, p: PendingFuture, retransmit: bool = False,
                          skip: set | None = None) -> None:
        p.last_sent = self.ctx.now
        msg_targets = [m for m in self._others() if not skip or m not in skip]
        for m in msg_targets:
            self.ctx.send(m, FutureReplicateRequest(
                term=self.term, generation=self.generation,
                data_leader_id=self.id, future_entries=[p.entry]),
                retransmit=retransmit)

    def _respond_client(self, client_id: str, via: Optional[int],
                        resp: ClientResponse) -> None:
        if via is None:
            self.ctx.send_client(client_id, resp)
        else:
            self.ctx.send(via, ForwardedResponse(response=resp, client_id=client_id))

    # -- future replication ------------------------------------------------

    def handle_future_replicate(self, frm: int, req: FutureReplicateRequest) -> None:
        if req.term < self.term:
            self.ctx.send(frm, FutureReplicateResponse(
                term=self.term, generation=self.generation, accepted=False,
                last_future_index=self.stage.max_index_seen,
                from_leader=self.role == LEADER, reason="stale_term"))
            return
        if req.term > self.term:
            self._step_down(req.term)
        if req.generation < self.generation:
            self.ctx.send(frm, FutureReplicateResponse(
                term=self.term, generation=self.generation, accepted=False,
                last_future_index=self.stage.max_index_seen,
                from_leader=self.role == LEADER, reason="stale_gen"))
            return
        if req.generation > self.generation:
            self._change_generation(req.generation, None)
        accepted_idx, reason = [], "ok"
        for fe in req.future_entries:
            if self.role == LEADER:
                out = self._integrate_future(fe)
            else:
                out = self.stage.stage(fe, self.generation)
                if out == StageOutcome.STAGED:
                    self._note_staged_bytes()
                    self.ctx.trace("stage", detail=(
                        f"idx={fe.index}|gen={fe.generation}|origin={fe.origin}"))
            if out in (StageOutcome.STAGED, StageOutcome.DUPLICATE):
                accepted_idx.append(fe.index)
            elif out == StageOutcome.CONFLICT:
                reason = "conflict"
            else:
                reason = "stale_gen"
        self.ctx.send(frm, FutureReplicateResponse(
            term=self.term, generation=self.generation,
            accepted=len(accepted_idx) == len(req.future_entries),
            last_future_index=self.stage.max_index_seen,
            from_leader=self.role == LEADER, reason=reason, indices=accepted_idx))

    def _integrate_future(self, fe: Entry) -> StageOutcome:
        """Leader-side: adopt a future entry at its claimed index."""
        if fe.generation < self.generation:
            return StageOutcome.STALE_GENERATION
        existing = self.log.get(fe.index)
        if existing is not None:
            return (StageOutcome.DUPLICATE if existing.same_record(fe)
                    else StageOutcome.CONFLICT)
        if fe.index <= self.commit_index:
            return StageOutcome.CONFLICT
        self.log.append(fe, self.commit_index)
        self.stage.drop(fe.index)
        self.integrated_at[fe.index] = self.ctx.now
        self._refresh_windows()
        if self.log.last_contiguous_index >= fe.index:
            for f in self._others():
                self._try_replicate(f)
        elif fe.index - self.log.last_contiguous_index > self.cfg.step_threshold:
            self._step_fill()
        self._advance_commit()
        return StageOutcome.STAGED

    def handle_future_ack(self, frm: int, resp: FutureReplicateResponse) -> None:
        if resp.term > self.term:
            self._step_down(resp.term)
        if resp.generation > self.generation:
            self._change_generation(resp.generation, None)
            return
        if resp.reason == "conflict":
            for idx in list(self.pending_futures):
                if idx not in resp.indices and resp.from_leader:
                    p = self.pending_futures.get(idx)
                    if p and not p.acked and self.log.get(idx) is None:
                        self._reallocate_pending(idx)
        for idx in resp.indices:
            p = self.pending_futures.get(idx)
            if p is None:
                continue
            p.acks.add(frm)
            if resp.from_leader:
                p.leader_ack = True
            self._check_future_ack(p)

    def _check_future_ack(self, p: PendingFuture) -> None:
        if p.acked or not p.leader_ack:
            return
        if len([a for a in p.acks if a in self.membership]) >= self._majority():
            p.acked = True
            self.ctx.trace("ack", detail=(
                f"rid={p.entry.request_id}|kind=nt|idx={p.entry.index}|origin={self.id}"))
            self.ctx.send_client(p.client_id,
                                 ClientResponse(p.entry.request_id, "Ok"))

    def _reallocate_pending(self, old_idx: int) -> None:
        p = self.pending_futures.pop(old_idx, None)
        if p is None:
            return
        self.stage.drop(old_idx)
        self.pending_by_rid.pop(p.entry.request_id, None)
        self._restage_pending(p)

    def _restage_pending(self, p: PendingFuture) -> None:
        try:
            idx = allocate_future_index(self.id, self.generation,
                                        self._frontier_view(), self.windows)
        except NoOpenWindow:
            self.parked_futures.append(p)
            return
        e = p.entry
        entry = Entry(index=idx, term=self.term, kind=EntryKind.FUTURE,
                      origin=self.id, generation=self.generation,
                      request_id=e.request_id, payload=e.payload)
        self.persist.future_frontier = max(self.persist.future_frontier, idx)
        self.stage.stage(entry, self.generation)
        self._note_staged_bytes()
        self.ctx.trace("alloc", detail=f"idx={idx}|gen={self.generation}|origin={self.id}")
        np = PendingFuture(entry=entry, client_id=p.client_id, acks={self.id},
                           leader_ack=False, acked=p.acked,
                           created=p.created, last_sent=self.ctx.now)
        self.pending_futures[idx] = np
        self.pending_by_rid[entry.request_id] = idx
        self._broadcast_future(np, retransmit=True)

    # -- generation change -------------------------------------------------

    def _change_generation(self, new_gen: int, new_membership: Optional[list[int]]) -> None:
        if new_gen < self.generation:
            return
        if new_gen == self.generation:
            if new_membership is not None:
                self.persist.membership = list(new_membership)
            return
        old_gen = self.generation
        self.persist.generation = new_gen
        if new_membership is not None:
            self.persist.membership = list(new_membership)
        self.ctx.trace("generation", detail=f"old={old_gen}|new={new_gen}")
        if self.cfg.protocol != "lcr":
            return
        # own unconfirmed entries move to fresh indices; foreign staged copies
        # with the old generation are dropped (a later signal miss makes the
        # leader re-send raw content, so this is safe)
        own = []
        for idx, p in list(self.pending_futures.items()):
            if idx > self.log.last_contiguous_index and self.log.get(idx) is None:
                own.append((idx, p))
        for idx, e in list(self.stage.pending.items()):
            if e.generation < new_gen:
                self.stage.drop(idx)
        self.windows = []
        self._refresh_windows()
        for idx, p in own:
            self.pending_futures.pop(idx, None)
            self.pending_by_rid.pop(p.entry.request_id, None)
            new_idx = reallocate_index(idx, old_gen, new_gen, self.id)
            self.persist.future_frontier = max(self.persist.future_frontier, new_idx)
            entry = Entry(index=new_idx, term=self.term, kind=EntryKind.FUTURE,
                          origin=self.id, generation=new_gen,
                          request_id=p.entry.request_id, payload=p.entry.payload)
            self.stage.stage(entry, new_gen)
            self.ctx.trace("alloc", detail=f"idx={new_idx}|gen={new_gen}|origin={self.id}")
            np = PendingFuture(entry=entry, client_id=p.client_id, acks={self.id},
                               acked=p.acked, created=p.created)
            self.pending_futures[new_idx] = np
            self.pending_by_rid[entry.request_id] = new_idx
            self._broadcast_future(np, retransmit=True)
        self._note_staged_bytes()

    def request_membership_change(self, new_size: int) -> None:
        """Leader-side admin entry point: grow the cluster one server at a time."""
        if self.role != LEADER:
            return
        size = len(self.membership)
        while size < new_size:
            size += 1
            self._append_normal(Entry(index=0, term=self.term, kind=EntryKind.CONFIG,
                                      payload=str(size).encode()))
            self._apply_config(size)
        for f in self._others():
            self._try_replicate(f)

    def _apply_config(self, size: int) -> None:
        members = list(range(size))
        for f in members:
            if f != self.id and f not in self.next_index and self.role == LEADER:
                self.next_index[f] = 1
                self.opt_next[f] = 1
                self.match_index[f] = 0
                self.last_future_ack[f] = 0
                self.inflight[f] = []
                self.last_sent[f] = -10**12
                self.max_sent[f] = 0
                self.last_resp[f] = self.ctx.now
        self._change_generation(size, members)

    # -- append-entries: leader side --------------------------------------

    def _try_replicate(self, f: int) -> None:
        if self.role != LEADER or f not in self.next_index:
            return
        while len(self.inflight[f]) < self.cfg.max_flying:
            start = self.opt_next[f]
            end = min(self.log.last_contiguous_index,
                      start + self.cfg.max_entries - 1)
            if start > end:
                break
            self._send_append(f, start=start, end=end)

    def _package(self, f: int, start: int, end: int) -> list[Entry]:
        out = []
        for i in range(start, end + 1):
            e = self.log.entries[i]
            if e.kind == EntryKind.FUTURE:
                if self.last_future_ack.get(f, 0) >= i and (f, i) not in self.force_full:
                    out.append(Entry(index=i, term=e.term, kind=EntryKind.SIGNAL,
                                     origin=e.origin, generation=e.generation))
                    continue
            out.append(e)
        return out

    def _send_append(self, f: int, start: int = 0, end: int = -1,
                     heartbeat: bool = False) -> None:
        if heartbeat:
            start = self.opt_next[f]
            end = min(self.log.last_contiguous_index,
                      start + self.cfg.max_entries - 1)
        entries = self._package(f, start, end) if end >= start else []
        self._seq += 1
        req = AppendEntriesRequest(
            term=self.term, generation=self.generation, leader_id=self.id,
            prev_log_index=start - 1, prev_log_term=self._term_at(start - 1),
            entries=entries, leader_commit=self.commit_index, seq=self._seq)
        retransmit = end >= start and start <= self.max_sent.get(f, 0)
        self.ctx.send(f, req, retransmit=retransmit)
        if len(self.inflight[f]) < self.cfg.max_flying:
            self.inflight[f].append(self._seq)
        if end >= start:
            self.opt_next[f] = end + 1
            self.max_sent[f] = max(self.max_sent.get(f, 0), end)
        self.last_sent[f] = self.ctx.now

    def handle_append_response(self, frm: int, resp: AppendEntriesResponse) -> None:
        if resp.term > self.term:
            self._step_down(resp.term)
            return
        if self.role != LEADER or resp.term < self.term or frm not in self.next_index:
            return
        self.last_resp[frm] = self.ctx.now
        try:
            self.inflight[frm].remove(resp.seq)
        except ValueError:
            if not resp.success:
                if self.inflight[frm] and resp.seq > max(self.inflight[frm]):
                    # a probe sent while the pipe was full got answered: the
                    # follower is reachable again, so restart its stream now
                    self.inflight[frm] = []
                else:
                    return  # stale failure from a stream that was already reset
        self.last_future_ack[frm] = max(self.last_future_ack.get(frm, 0),
                                        resp.last_future_index)
        report = resp.last_applied_index_report
        if resp.success:
            self.match_index[frm] = max(self.match_index[frm], report)
            self.next_index[frm] = report + 1
            self.opt_next[frm] = max(self.opt_next[frm], report + 1)
        else:
            self.next_index[frm] = report + 1
            self.opt_next[frm] = report + 1
            self.inflight[frm].clear()
            nxt = self.log.get(report + 1)
            if nxt is not None and nxt.kind == EntryKind.FUTURE:
                self.force_full.add((frm, report + 1))
            if resp.prefix_ok:
                self.match_index[frm] = max(self.match_index[frm], report)
        self.force_full = {(f, i) for (f, i) in self.force_full
                           if f != frm or i > self.match_index[frm]}
        self._advance_commit()
        self._try_replicate(frm)

    def _advance_commit(self) -> None:
        if self.role != LEADER:
            return
        marks = sorted(self.log.last_contiguous_index if m == self.id
                       else self.match_index.get(m, 0)
                       for m in self.membership)
        n = marks[len(marks) - self._majority()]
        n = min(n, self.log.last_contiguous_index)
        for cand in range(n, self.commit_index, -1):
            e = self.log.get(cand)
            if e is not None and e.term == self.term:
                self._commit_to(cand)
                break

    def _commit_to(self, n: int) -> None:
        if n <= self.commit_index:
            return
        self.commit_index = n
        self._apply_committed()

    # -- step filling ------------------------------------------------------

    def _step_fill(self) -> None:
        if self.role != LEADER or self.cfg.protocol != "lcr":
            return
        filled = False
        while True:
            contig = self.log.last_contiguous_index
            ahead = sorted(i for i in self.integrated_at if i > contig)
            for i in [i for i in self.integrated_at if i <= contig]:
                del self.integrated_at[i]
            if not ahead:
                break
            lead = ahead[-1] - contig
            oldest = min(self.integrated_at[i] for i in ahead)
            if lead <= self.cfg.step_threshold and \
                    self.ctx.now - oldest <= self.cfg.step_timeout_us:
                break
            eligible = [i for i in ahead
                        if self.ctx.now - self.integrated_at[i]
                        >= self.cfg.step_grace_us]
            if not eligible:
                break
            target = max(eligible)
            for j in range(contig + 1, target):
                if not self.log.occupied(j):
                    self.log.append(Entry(index=j, term=self.term,
                                          kind=EntryKind.NOOP_FILL),
                                    self.commit_index)
            self.normal_cursor = max(self.normal_cursor, target + 1)
            filled = True
            if self.log.last_contiguous_index <= contig:
                break
        if filled:
            self._refresh_windows()
            self._advance_commit()
            for f in self._others():
                self._try_replicate(f)

    # -- append-entries: follower side ------------------------------------

    def handle_append_entries(self, frm: int, req: AppendEntriesRequest) -> None:
        if req.term < self.term:
            self.ctx.send(frm, AppendEntriesResponse(
                term=self.term, generation=self.generation, success=False,
                last_applied_index_report=self.log.last_contiguous_index,
                last_future_index=self.stage.max_index_seen,
                seq=req.seq, prefix_ok=False))
            return
        if req.term > self.term or self.role != FOLLOWER:
            self._step_down(req.term, leader=req.leader_id)
        self.leader_id = req.leader_id
        self._reset_election_timer()
        if req.generation > self.generation:
            self._change_generation(req.generation, None)

        prev = req.prev_log_index
        if prev > 0 and (prev > self.log.last_contiguous_index
                         or self._term_at(prev) != req.prev_log_term):
            self.ctx.send(frm, AppendEntriesResponse(
                term=self.term, generation=self.generation, success=False,
                last_applied_index_report=min(self.log.last_contiguous_index,
                                              prev - 1),
                last_future_index=self.stage.max_index_seen,
                seq=req.seq, prefix_ok=False))
            return

        success = True
        for e in req.entries:
            if e.index <= self.commit_index:
                continue
            existing = self.log.get(e.index)
            if existing is not None and existing.term == e.term:
                if e.kind == EntryKind.SIGNAL:
                    # an already-resolved future satisfies its signal
                    if existing.kind == EntryKind.FUTURE \
                            and existing.origin == e.origin \
                            and existing.generation == e.generation:
                        continue
                elif existing.request_id == e.request_id:
                    continue
            if existing is not None:
                self.log.truncate_from(e.index, self.commit_index)
                self.normal_cursor = min(self.normal_cursor, e.index)
            if e.kind == EntryKind.SIGNAL:
                staged = self.stage.peek(e.index)
                if staged is None:
                    success = False  # ask the leader for the raw content
                    break
                resolved = Entry(index=e.index, term=e.term, kind=EntryKind.FUTURE,
                                 origin=staged.origin, generation=staged.generation,
                                 request_id=staged.request_id, payload=staged.payload)
                self.log.append(resolved, self.commit_index)
                self.stage.drop(e.index)
                self._confirm_own_future(e.index)
            else:
                staged = self.stage.peek(e.index)
                if staged is not None and not staged.same_record(e):
                    self._resolve_stage_conflict(staged)
                self.log.append(e, self.commit_index)
                self.stage.drop(e.index)
                self._confirm_own_future(e.index)
                if e.kind == EntryKind.CONFIG:
                    self._apply_config(int(e.payload.decode()))
        self._refresh_windows()
        self._commit_to(min(req.leader_commit, self.log.last_contiguous_index))
        self.ctx.send(frm, AppendEntriesResponse(
            term=self.term, generation=self.generation, success=success,
            last_applied_index_report=self.log.last_contiguous_index,
            last_future_index=self.stage.max_index_seen,
            seq=req.seq, prefix_ok=True))

    def _confirm_own_future(self, index: int) -> None:
        """The leader has sequenced this index; any matching pending record of
        ours is confirmed (the quorum ack may still be owed to the client)."""
        p = self.pending_futures.get(index)
        if p is None:
            return
        logged = self.log.get(index)
        if logged is not None and logged.request_id == p.entry.request_id:
            p.leader_ack = True
            p.acks.add(self.leader_id if self.leader_id is not None else self.id)
            self._check_future_ack(p)

    def _resolve_stage_conflict(self, staged: Entry) -> None:
        """The leader's entry displaces a staged future entry at this index."""
        idx = staged.index
        self.ctx.trace("conflict", detail=(
            f"idx={idx}|origin={staged.origin}|owner={owner_of(idx, self.generation)}"))
        if staged.origin == self.id and idx in self.pending_futures:
            self._reallocate_pending(idx)
        else:
            self.stage.drop(idx)

    # -- reconcile (new leader pulls staged futures) -----------------------

    def handle_reconcile_request(self, frm: int, req: ReconcileRequest) -> None:
        if req.term > self.term:
            self._step_down(req.term, leader=frm)
        self.ctx.send(frm, ReconcileResponse(
            term=self.term, generation=self.generation,
            entries=list(self.stage.pending.values())))

    def handle_reconcile_response(self, frm: int, resp: ReconcileResponse) -> None:
        if resp.term > self.term:
            self._step_down(resp.term)
            return
        if self.role != LEADER:
            return
        for e in resp.entries:
            if e.generation == self.generation and self.log.get(e.index) is None \
                    and e.index > self.commit_index:
                self._integrate_future(e)

    # -- apply -------------------------------------------------------------

    def _apply_committed(self) -> None:
        while self.persist.last_applied < self.commit_index:
            i = self.persist.last_applied + 1
            e = self.log.entries[i]
            self.persist.last_applied = i
            if e.kind in (EntryKind.NOOP_FILL, EntryKind.CONFIG):
                self.ctx.trace("apply", detail=(
                    f"idx={i}|rid=|kind={e.kind.name}|digest=-|dup=0"))
                continue
            dup = self.kv.applied(e.request_id)
            if not dup:
                self.kv.apply(e.request_id, e.payload)
            self.ctx.trace("apply", detail=(
                f"idx={i}|rid={e.request_id}|kind={e.kind.name}"
                f"|digest={KvStateMachine.payload_digest(e.payload)}|dup={int(dup)}"))
            route = self.pending_client.pop(e.request_id, None)
            if route is not None and self.role == LEADER:
                client_id, via = route
                self.ctx.trace("ack", detail=(
                    f"rid={e.request_id}|kind=t|idx={i}|origin={self.id}"))
                self._respond_client(client_id, via,
                                     ClientResponse(e.request_id, "Ok"))
            pidx = self.pending_by_rid.pop(e.request_id, None)
            if pidx is not None:
                p = self.pending_futures.pop(pidx, None)
                if p is not None and not p.acked:
                    p.acked = True
                    self.ctx.trace("ack", detail=(
                        f"rid={e.request_id}|kind=nt|idx={i}|origin={self.id}"))
                    self.ctx.send_client(p.client_id,
                                         ClientResponse(e.request_id, "Ok"))

    # -- dispatch ----------------------------------------------------------

    def on_message(self, frm, msg) -> None:
        if isinstance(msg, ClientRequest):
            self.handle_client_request(msg)
        elif isinstance(msg, ForwardedRequest):
            self.handle_client_request(msg.request, via=msg.via)
        elif isinstance(msg, ForwardedResponse):
            self.ctx.send_client(msg.client_id, msg.response)
        elif isinstance(msg, AppendEntriesRequest):
            self.handle_append_entries(frm, msg)
        elif isinstance(msg, AppendEntriesResponse):
            self.handle_append_response(frm, msg)
        elif isinstance(msg, FutureReplicateRequest):
            self.handle_future_replicate(frm, msg)
        elif isinstance(msg, FutureReplicateResponse):
            self.handle_future_ack(frm, msg)
        elif isinstance(msg, VoteRequest):
            self.handle_vote_request(frm, msg)
        elif isinstance(msg, VoteResponse):
            self.handle_vote_response(frm, msg)
        elif isinstance(msg, ReconcileRequest):
            self.handle_reconcile_request(frm, msg)
        elif isinstance(msg, ReconcileResponse):
            self.handle_reconcile_response(frm, msg)
        else:
            raise TypeError(f"unhandled message {type(msg)!r}")
