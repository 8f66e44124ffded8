"""Deterministic discrete-event network harness.

Virtual time is integer microseconds. The event heap is ordered by
``(time, seq)`` where ``seq`` is a global schedule counter, so a run is a pure
function of (configuration, seed): two runs with the same inputs produce
byte-identical traces.

Latency is ``mean + uniform(0, magnitude)`` with probability ``fluct_prob``,
otherwise exactly ``mean``. Message handling occupies the receiving node for a
per-kind processing cost; a node busy with earlier work queues later arrivals
(single logical worker per node). An optional contention window inflates the
cost of work that arrives on a backlog, modelling worker starvation.
"""

from __future__ import annotations

import heapq
import random
from dataclasses import dataclass, field

from .messages import (AppendEntriesRequest, AppendEntriesResponse, ClientRequest,
                       ClientResponse, ForwardedRequest, ForwardedResponse,
                       FutureReplicateRequest, FutureReplicateResponse,
                       ReconcileRequest, VoteRequest, message_bytes)
from .node import Node, NodeConfig, PersistentState


@dataclass(slots=True)
class LatencyModel:
    mean_us: int = 5000
    fluct_prob: float = 0.0
    fluct_magnitude_us: int = 0

    def sample(self, rng: random.Random) -> int:
        d = self.mean_us
        if self.fluct_prob > 0 and rng.random() < self.fluct_prob:
            d += rng.randrange(self.fluct_magnitude_us + 1)
        return d


@dataclass(slots=True)
class SizeModel:
    message_header_bytes: int = 48
    entry_header_bytes: int = 24


@dataclass(slots=True)
class CostModel:
    client_request_us: int = 50
    repl_request_us: int = 0
    repl_response_us: int = 50
    contention_window_us: int = 0   # 0 disables backlog-dependent inflation

    def cost_of(self, msg) -> int:
        if isinstance(msg, (ClientRequest, ForwardedRequest)):
            return self.client_request_us
        if isinstance(msg, (AppendEntriesRequest, FutureReplicateRequest,
                            ReconcileRequest, VoteRequest)):
            return self.repl_request_us
        if isinstance(msg, (AppendEntriesResponse, FutureReplicateResponse)):
            return self.repl_response_us
        return 0


@dataclass
class NodeStats:
    sent_msgs: int = 0
    sent_bytes: int = 0
    recv_msgs: int = 0
    recv_bytes: int = 0
    retrans_msgs: int = 0
    retrans_bytes: int = 0
    dropped_msgs: int = 0
    dropped_bytes: int = 0
    busy_us: int = 0
    staged_bytes_peak: int = 0


class _NodeCtx:
    """Per-node adapter through which the protocol code touches the world."""

    def __init__(self, sim: "Simulation", node_id: int, incarnation: int):
        self.sim = sim
        self.node_id = node_id
        self.incarnation = incarnation
        self.now = sim.now
        self.rng = random.Random(f"{sim.seed}:node:{node_id}:{incarnation}")
        self.entry_header_bytes = sim.size.entry_header_bytes

    def send(self, to: int, msg, retransmit: bool = False) -> None:
        self.sim.node_send(self.node_id, to, msg, retransmit)

    def send_client(self, client_id: str, resp) -> None:
        self.sim.node_send_client(self.node_id, client_id, resp)

    def set_timer(self, name: str, delay_us: int) -> None:
        self.sim.set_node_timer(self.node_id, self.incarnation, name,
                                self.now + max(0, int(delay_us)))

    def trace(self, kind: str, detail: str = "") -> None:
        self.sim.record(self.now, kind, frm=self.node_id, detail=detail)


class _ClientCtx:
    def __init__(self, sim: "Simulation", client_id: str):
        self.sim = sim
        self.client_id = client_id
        self.now = sim.now
        self.rng = random.Random(f"{sim.seed}:client:{client_id}")

    def send(self, node_id: int, msg) -> None:
        self.sim.client_send(self.client_id, node_id, msg)

    def set_timer(self, name: str, delay_us: int) -> None:
        self.sim.set_client_timer(self.client_id, name,
                                  self.now + max(0, int(delay_us)))


class Simulation:
    def __init__(self, seed: int, node_latency: LatencyModel,
                 client_latency: LatencyModel, size: SizeModel | None = None,
                 cost: CostModel | None = None):
        self.seed = seed
        self.rng = random.Random(f"{seed}:net")
        self.node_latency = node_latency
        self.client_latency = client_latency
        self.size = size or SizeModel()
        self.cost = cost or CostModel()

        self.now = 0
        self._seq = 0
        self._heap: list = []
        self.trace: list[str] = []

        self.nodes: dict[int, Node] = {}
        self.node_ctx: dict[int, _NodeCtx] = {}
        self.incarnation: dict[int, int] = {}
        self.alive: dict[int, bool] = {}
        self.isolated: set[int] = set()
        self.busy_until: dict[int, int] = {}
        self.stats: dict[int, NodeStats] = {}
        self.node_timers: dict[tuple[int, str], int] = {}

        self.clients: dict[str, object] = {}
        self.client_ctx: dict[str, _ClientCtx] = {}
        self.client_timers: dict[tuple[str, str], int] = {}

        self.hooks: list = []   # callables(kind, time, detail dict) for metrics

    # -- construction ------------------------------------------------------

    def add_node(self, node_id: int, membership: list[int], cfg: NodeConfig,
                 bootstrap_leader: bool = False,
                 persist: PersistentState | None = None) -> Node:
        inc = self.incarnation.get(node_id, -1) + 1
        self.incarnation[node_id] = inc
        ctx = _NodeCtx(self, node_id, inc)
        self.node_ctx[node_id] = ctx
        self.alive[node_id] = True
        self.busy_until.setdefault(node_id, self.now)
        self.stats.setdefault(node_id, NodeStats())
        node = Node(node_id, membership, cfg, ctx, persist=persist,
                    bootstrap_leader=bootstrap_leader)
        self.nodes[node_id] = node
        return node

    def add_client(self, client) -> None:
        self.clients[client.client_id] = client
        ctx = _ClientCtx(self, client.client_id)
        self.client_ctx[client.client_id] = ctx
        self._push(self.now, ("client_start", client.client_id))

    # -- event plumbing ----------------------------------------------------

    def _push(self, time: int, item) -> None:
        self._seq += 1
        heapq.heappush(self._heap, (time, self._seq, item))

    def record(self, time: int, kind: str, frm="-", to="-", msg_kind="-",
               nbytes: int = 0, detail: str = "") -> None:
        self.trace.append(f"{time},{kind},{frm},{to},{msg_kind},{nbytes},{detail}")
        for hook in self.hooks:
            hook(kind, time, frm, detail)

    @staticmethod
    def _msg_kind(msg) -> str:
        return type(msg).__name__

    def node_send(self, frm: int, to: int, msg, retransmit: bool) -> None:
        nbytes = message_bytes(msg, message_header=self.size.message_header_bytes,
                               entry_header=self.size.entry_header_bytes)
        st = self.stats[frm]
        st.sent_msgs += 1
        st.sent_bytes += nbytes
        if retransmit:
            st.retrans_msgs += 1
            st.retrans_bytes += nbytes
        if frm in self.isolated or to in self.isolated:
            st.dropped_msgs += 1
            st.dropped_bytes += nbytes
            self.record(self.now, "drop", frm, to, self._msg_kind(msg), nbytes,
                        "partitioned_at_send")
            return
        self.record(self.now, "send", frm, to, self._msg_kind(msg), nbytes)
        delay = self.node_latency.sample(self.rng)
        self._push(self.now + delay, ("deliver", frm, to, msg, nbytes))

    def node_send_client(self, frm: int, client_id: str, resp) -> None:
        nbytes = message_bytes(resp, message_header=self.size.message_header_bytes,
                               entry_header=self.size.entry_header_bytes)
        st = self.stats[frm]
        st.sent_msgs += 1
        st.sent_bytes += nbytes
        if frm in self.isolated:
            st.dropped_msgs += 1
            st.dropped_bytes += nbytes
            return
        delay = self.client_latency.sample(self.rng)
        self._push(self.now + delay, ("client_deliver", client_id, resp))

    def client_send(self, client_id: str, to: int, msg) -> None:
        nbytes = message_bytes(msg, message_header=self.size.message_header_bytes,
                               entry_header=self.size.entry_header_bytes)
        delay = self.client_latency.sample(self.rng)
        self._push(self.now + delay, ("node_deliver_from_client", client_id, to,
                                      msg, nbytes))

    def set_node_timer(self, node_id: int, incarnation: int, name: str,
                       fire_at: int) -> None:
        self.node_timers[(node_id, name)] = fire_at
        self._push(fire_at, ("node_timer", node_id, incarnation, name, fire_at))

    def set_client_timer(self, client_id: str, name: str, fire_at: int) -> None:
        self.client_timers[(client_id, name)] = fire_at
        self._push(fire_at, ("client_timer", client_id, name, fire_at))

    # -- faults and admin --------------------------------------------------

    def schedule(self, time_us: int, fn) -> None:
        """Run an arbitrary callable at a point in virtual time."""
        self._push(time_us, ("call", fn))

    def crash(self, node_id: int) -> None:
        self.alive[node_id] = False
        self.record(self.now, "fault", frm=node_id, detail="crash")

    def restart(self, node_id: int, cfg: NodeConfig) -> None:
        old = self.nodes[node_id]
        self.record(self.now, "fault", frm=node_id, detail="restart")
        self.busy_until[node_id] = self.now
        self.add_node(node_id, old.persist.membership, cfg,
                      persist=old.persist)

    def disconnect(self, node_id: int) -> None:
        self.isolated.add(node_id)
        self.record(self.now, "fault", frm=node_id, detail="disconnect")

    def reconnect(self, node_id: int) -> None:
        self.isolated.discard(node_id)
        self.record(self.now, "fault", frm=node_id, detail="reconnect")

    def current_leader(self):
        best = None
        for n in self.nodes.values():
            if self.alive.get(n.id) and n.role == "leader":
                if best is None or n.term > best.term:
                    best = n
        return best

    # -- execution ---------------------------------------------------------

    def _handle_at_node(self, node_id: int, frm, msg, nbytes: int) -> None:
        if not self.alive.get(node_id):
            self.stats[node_id].dropped_msgs += 1
            self.stats[node_id].dropped_bytes += nbytes
            self.record(self.now, "drop", frm, node_id, self._msg_kind(msg),
                        nbytes, "target_down")
            return
        if node_id in self.isolated or \
                (isinstance(frm, int) and frm in self.isolated):
            self.stats[node_id].dropped_msgs += 1
            self.stats[node_id].dropped_bytes += nbytes
            self.record(self.now, "drop", frm, node_id, self._msg_kind(msg),
                        nbytes, "partitioned_at_delivery")
            return
        st = self.stats[node_id]
        st.recv_msgs += 1
        st.recv_bytes += nbytes
        self.record(self.now, "deliver", frm, node_id, self._msg_kind(msg), nbytes)
        start = max(self.now, self.busy_until[node_id])
        cost = self.cost.cost_of(msg)
        if cost and self.cost.contention_window_us:
            backlog = start - self.now
            cost = int(cost * (1 + backlog / self.cost.contention_window_us))
        done = start + cost
        self.busy_until[node_id] = done
        st.busy_us += cost
        node = self.nodes[node_id]
        ctx = self.node_ctx[node_id]
        ctx.now = done
        if isinstance(frm, str):
            node.handle_client_request(msg)
        else:
            node.on_message(frm, msg)
        st.staged_bytes_peak = max(st.staged_bytes_peak, node.staged_bytes_peak)

    def run(self, until_us: int) -> None:
        while self._heap:
            time, _, item = self._heap[0]
            if time > until_us:
                break
            heapq.heappop(self._heap)
            self.now = time
            kind = item[0]
            if kind == "deliver":
                _, frm, to, msg, nbytes = item
                self._handle_at_node(to, frm, msg, nbytes)
            elif kind == "node_deliver_from_client":
                _, client_id, to, msg, nbytes = item
                self._handle_at_node(to, client_id, msg, nbytes)
            elif kind == "client_deliver":
                _, client_id, resp = item
                ctx = self.client_ctx[client_id]
                ctx.now = time
                self.clients[client_id].on_response(ctx, resp)
            elif kind == "node_timer":
                _, node_id, inc, name, fire_at = item
                if (not self.alive.get(node_id)
                        or self.incarnation.get(node_id) != inc
                        or self.node_timers.get((node_id, name)) != fire_at):
                    continue
                ctx = self.node_ctx[node_id]
                ctx.now = time
                self.nodes[node_id].on_timer(name)
            elif kind == "client_timer":
                _, client_id, name, fire_at = item
                if self.client_timers.get((client_id, name)) != fire_at:
                    continue
                ctx = self.client_ctx[client_id]
                ctx.now = time
                self.clients[client_id].on_timer(ctx, name)
            elif kind == "client_start":
                _, client_id = item
                ctx = self.client_ctx[client_id]
                ctx.now = time
                self.clients[client_id].on_start(ctx)
            elif kind == "call":
                self.now = time
                item[1]()
        self.now = until_us

    def finalize_trace(self) -> None:
        for node_id in sorted(self.nodes):
            n = self.nodes[node_id]
            self.record(self.now, "final_state", frm=node_id, detail=(
                f"alive={int(bool(self.alive.get(node_id)))}"
                f"|term={n.term}|gen={n.generation}"
                f"|commit={n.commit_index}|applied={n.persist.last_applied}"
                f"|contig={n.log.last_contiguous_index}"
                f"|digest={n.kv.digest()}"))
