"""Independent safety checks over a finished run trace.

The verifier only reads the trace text. It replays the committed sequence
through its own state machine (payloads are reconstructable from request ids)
and checks:

  applied_prefix      every node applied a gap-free prefix, and any two nodes
                      agree on (request id, payload digest) at every index
  at_most_once        no node mutated state twice for the same request id
  digest_replay       each node's final state digest equals an independent
                      replay of its applied prefix
  ack_durability      every acknowledged request was applied by some node
  commit_monotone     per-node applied/commit counters never regress
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .kv import KvStateMachine
from .workload import payload_for_rid


@dataclass(slots=True)
class TraceEvent:
    time: int
    kind: str
    frm: str
    to: str
    msg_kind: str
    nbytes: int
    detail: dict


def parse_trace(lines) -> list[TraceEvent]:
    out = []
    for line in lines:
        line = line.strip()
        if not line:
            continue
        time, kind, frm, to, msg_kind, nbytes, detail = line.split(",", 6)
        d = {}
        if detail:
            for part in detail.split("|"):
                if "=" in part:
                    k, v = part.split("=", 1)
                    d[k] = v
                else:
                    d.setdefault("_", part)
        out.append(TraceEvent(int(time), kind, frm, to, msg_kind,
                              int(nbytes), d))
    return out


@dataclass
class VerifyResult:
    checks: dict[str, bool] = field(default_factory=dict)
    errors: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return bool(self.checks) and all(self.checks.values())

    def fail(self, check: str, msg: str) -> None:
        self.checks[check] = False
        if len(self.errors) < 50:
            self.errors.append(f"{check}: {msg}")

    def passed(self, check: str) -> None:
        self.checks.setdefault(check, True)


def verify_trace(lines) -> VerifyResult:
    events = parse_trace(lines)
    res = VerifyResult()
    for name in ("applied_prefix", "at_most_once", "digest_replay",
                 "ack_durability", "commit_monotone"):
        res.passed(name)

    # node -> index -> (rid, kind, digest); and per-node apply order
    applied: dict[str, dict[int, tuple]] = {}
    sm_applied: dict[str, set] = {}
    acked: set[str] = set()
    finals: dict[str, dict] = {}
    last_applied_seen: dict[str, int] = {}

    for ev in events:
        if ev.kind == "apply":
            node = ev.frm
            idx = int(ev.detail["idx"])
            rid = ev.detail["rid"]
            rec = (rid, ev.detail["kind"], ev.detail["digest"])
            book = applied.setdefault(node, {})
            if idx in book and book[idx] != rec:
                res.fail("applied_prefix",
                         f"node {node} re-applied index {idx} differently")
            book[idx] = rec
            prev = last_applied_seen.get(node, 0)
            if idx != prev + 1:
                res.fail("commit_monotone",
                         f"node {node} applied {idx} after {prev}")
            last_applied_seen[node] = idx
            if rid and ev.detail["dup"] == "0":
                seen = sm_applied.setdefault(node, set())
                if rid in seen:
                    res.fail("at_most_once",
                             f"node {node} mutated twice for {rid}")
                seen.add(rid)
        elif ev.kind == "ack":
            acked.add(ev.detail["rid"])
        elif ev.kind == "fault" and ev.detail.get("_") == "restart":
            # the applied counter survives the crash; nothing resets
            pass
        elif ev.kind == "final_state":
            finals[ev.frm] = ev.detail

    # cross-node agreement at each index
    by_index: dict[int, tuple] = {}
    owner: dict[int, str] = {}
    for node, book in applied.items():
        for idx, rec in book.items():
            if idx in by_index:
                if by_index[idx] != rec:
                    res.fail("applied_prefix",
                             f"nodes {owner[idx]} and {node} disagree at "
                             f"index {idx}: {by_index[idx]} vs {rec}")
            else:
                by_index[idx] = rec
                owner[idx] = node

    # gap-free prefixes
    for node, book in applied.items():
        n = len(book)
        if book and (min(book) != 1 or max(book) != n):
            res.fail("applied_prefix", f"node {node} applied a gapped prefix")

    # acknowledged requests must be durably applied somewhere
    ever_applied = {rec[0] for rec in by_index.values() if rec[0]}
    for rid in acked:
        if rid not in ever_applied:
            res.fail("ack_durability", f"acked {rid} never applied")

    # final digests against an independent replay of the common history
    for node, f in finals.items():
        n_applied = int(f.get("applied", 0))
        book = applied.get(node, {})
        if len(book) != n_applied:
            res.fail("commit_monotone",
                     f"node {node} final applied={n_applied} but "
                     f"{len(book)} applies traced")
            continue
        sm = KvStateMachine()
        ok = True
        for idx in range(1, n_applied + 1):
            rec = book.get(idx)
            if rec is None:
                ok = False
                break
            rid = rec[0]
            if rid and not sm.applied(rid):
                sm.apply(rid, payload_for_rid(rid))
        if ok and sm.digest() != f.get("digest"):
            res.fail("digest_replay",
                     f"node {node} final digest {f.get('digest')} != "
                     f"replayed {sm.digest()}")
    return res
