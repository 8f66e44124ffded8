"""Deterministic key-value state machine with at-most-once apply semantics.

Payloads encode one of two operations, padded with NUL bytes to the wire size:

    I <key> <value>          insert/overwrite an integer value
    T <src> <dst> <amount>   move balance between accounts

Accounts start with an implicit balance of 100 so a deterministic mix of
transfers succeeds and fails; an insufficient balance is recorded as a
rejection rather than a mutation, which keeps replays byte-for-byte equal.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

INITIAL_BALANCE = 100


def encode_insert(key: str, value: int, size: int = 0) -> bytes:
    return _pad(f"I {key} {value}".encode(), size)


def encode_transfer(src: str, dst: str, amount: int, size: int = 0) -> bytes:
    return _pad(f"T {src} {dst} {amount}".encode(), size)


def _pad(raw: bytes, size: int) -> bytes:
    if size > len(raw):
        return raw + b"\0" * (size - len(raw))
    return raw


@dataclass
class KvStateMachine:
    store: dict[str, int] = field(default_factory=dict)
    applied_rids: set[str] = field(default_factory=set)
    rejected: int = 0

    def applied(self, request_id: str) -> bool:
        return bool(request_id) and request_id in self.applied_rids

    def apply(self, request_id: str, payload: bytes) -> None:
        if request_id:
            self.applied_rids.add(request_id)
        parts = payload.rstrip(b"\0").decode(errors="replace").split()
        if not parts:
            return
        if parts[0] == "I" and len(parts) == 3:
            self.store[parts[1]] = int(parts[2])
        elif parts[0] == "T" and len(parts) == 4:
            src, dst, amount = parts[1], parts[2], int(parts[3])
            bal = self.store.get(src, INITIAL_BALANCE)
            if bal >= amount:
                self.store[src] = bal - amount
                self.store[dst] = self.store.get(dst, INITIAL_BALANCE) + amount
            else:
                self.rejected += 1

    def digest(self) -> str:
        h = hashlib.sha256()
        for k in sorted(self.store):
            h.update(f"{k}={self.store[k]};".encode())
        h.update(f"rejected={self.rejected}".encode())
        return h.hexdigest()[:16]

    @staticmethod
    def payload_digest(payload: bytes) -> str:
        return hashlib.sha256(payload).hexdigest()[:12]
