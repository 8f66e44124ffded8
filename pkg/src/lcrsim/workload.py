"""Closed-loop clients and completion bookkeeping.

Each client keeps exactly one request outstanding. Retries reuse the request
id so the cluster can deduplicate; everything about a request (operation kind,
keys, amounts) is derived deterministically from its request id, which lets an
independent replay reconstruct the state machine from the trace alone.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

from .kv import encode_insert, encode_transfer
from .messages import ClientRequest

ACCOUNT_POOL = 64


def kind_of_rid(rid: str) -> str:
    return rid.rsplit(".", 1)[1]


def payload_for_rid(rid: str, payload_bytes: int = 0) -> bytes:
    """The unique payload a request id stands for."""
    h = hashlib.sha256(rid.encode()).digest()
    if kind_of_rid(rid) == "nt":
        return encode_insert(f"k{h[0]}{h[1]}", h[2] % 1000, payload_bytes)
    src = f"acct{h[0] % ACCOUNT_POOL}"
    dst = f"acct{h[1] % ACCOUNT_POOL}"
    return encode_transfer(src, dst, 1 + h[2] % 50, payload_bytes)


@dataclass(slots=True)
class Completion:
    rid: str
    kind: str
    client_id: str
    target: int
    start_us: int
    end_us: int
    attempts: int


@dataclass
class ClientConfig:
    nt_ratio: float = 0.0
    payload_bytes: int = 80
    request_timeout_us: int = 1_000_000
    blacklist_us: int = 2_000_000
    reject_blacklist_us: int = 500_000
    backoff_min_us: int = 50_000
    backoff_max_us: int = 100_000
    start_spread_us: int = 10_000
    max_requests: int | None = None
    stop_at_us: int | None = None   # quiesce point; set by the runner


class ClosedLoopClient:
    def __init__(self, client_id: str, cfg: ClientConfig, targets: list[int],
                 completions: list[Completion]):
        self.client_id = client_id
        self.cfg = cfg
        self.targets = list(targets)
        self.completions = completions
        self.seq = 0
        self.current_rid: str | None = None
        self.current_kind = ""
        self.current_target = -1
        self.start_us = 0
        self.attempts = 0
        self.blacklist: dict[int, int] = {}
        self.timeout_at = -1

    def on_start(self, ctx) -> None:
        ctx.rng.shuffle(self.targets)
        delay = ctx.rng.randrange(self.cfg.start_spread_us + 1)
        ctx.set_timer("begin", delay)

    def _pick_target(self, ctx) -> int:
        usable = [t for t in self.targets
                  if self.blacklist.get(t, 0) <= ctx.now]
        pool = usable or self.targets
        return pool[(self.seq + self.attempts) % len(pool)]

    def _next_request(self, ctx) -> None:
        if self.cfg.max_requests is not None and self.seq >= self.cfg.max_requests:
            self.current_rid = None
            return
        if self.cfg.stop_at_us is not None and ctx.now >= self.cfg.stop_at_us:
            self.current_rid = None
            return
        self.seq += 1
        kind = "nt" if ctx.rng.random() < self.cfg.nt_ratio else "t"
        self.current_rid = f"{self.client_id}.{self.seq}.{kind}"
        self.current_kind = kind
        self.start_us = ctx.now
        self.attempts = 0
        self._send(ctx)

    def _send(self, ctx) -> None:
        if self.cfg.stop_at_us is not None and ctx.now >= self.cfg.stop_at_us \
                and self.attempts > 0:
            self.current_rid = None
            return
        self.attempts += 1
        self.current_target = self._pick_target(ctx)
        ctx.send(self.current_target, ClientRequest(
            request_id=self.current_rid, kind=self.current_kind,
            payload=payload_for_rid(self.current_rid, self.cfg.payload_bytes),
            client_id=self.client_id))
        self.timeout_at = ctx.now + self.cfg.request_timeout_us
        ctx.set_timer("timeout", self.cfg.request_timeout_us)

    def on_response(self, ctx, resp) -> None:
        if resp.request_id != self.current_rid:
            return
        if resp.outcome == "Ok":
            # the node works again; without this, one bad spell could leave
            # every target blacklisted and the pool stuck on dead nodes
            self.blacklist.pop(self.current_target, None)
            self.completions.append(Completion(
                rid=self.current_rid, kind=self.current_kind,
                client_id=self.client_id, target=self.current_target,
                start_us=self.start_us, end_us=ctx.now, attempts=self.attempts))
            self.timeout_at = -1
            self._next_request(ctx)
        else:
            # overloaded or leaderless target: back off, try another node.
            # A rejection is a fast, explicit signal, so the node is benched
            # only briefly — unlike a timeout, which suggests it is dead.
            self.blacklist[self.current_target] = max(
                self.blacklist.get(self.current_target, 0),
                ctx.now + self.cfg.reject_blacklist_us)
            self.timeout_at = -1
            back = ctx.rng.randrange(self.cfg.backoff_min_us,
                                     self.cfg.backoff_max_us + 1)
            ctx.set_timer("retry", back)

    def on_timer(self, ctx, name: str) -> None:
        if name == "begin":
            self._next_request(ctx)
        elif name == "retry":
            if self.current_rid is not None and self.timeout_at < 0:
                self._send(ctx)
        elif name == "timeout":
            if self.current_rid is None or self.timeout_at < 0 \
                    or ctx.now < self.timeout_at:
                return
            self.blacklist[self.current_target] = ctx.now + self.cfg.blacklist_us
            self._send(ctx)
