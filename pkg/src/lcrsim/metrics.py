"""Run measurement: response times, throughput windows, traffic and lag.

The collector is attached as a trace hook, so everything reported here is
derivable from the run trace plus the client-side completion records.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

from .workload import Completion


def predict_nt_response_us(dc_us: float, dn_us: float, proc_us: float = 0.0,
                           disk_us: float = 0.0) -> float:
    """Latency floor for a follower-acknowledged request: one client hop each
    way plus one replication round at the follower."""
    return 2 * dc_us + 2 * dn_us + proc_us + disk_us

def predict_t_response_us(dc_us: float, dn_us: float, via_leader: bool,
                          proc_us: float = 0.0, disk_us: float = 0.0) -> float:
    """Latency floor for a leader-committed request: one client hop each way,
    a replication round at the leader, and a relay round trip when the client
    is attached to a follower."""
    hops = 2 if via_leader else 4
    return 2 * dc_us + hops * dn_us + proc_us + disk_us


class TraceCollector:
    """Hook fed by the simulation's trace recorder."""

    def __init__(self) -> None:
        self.ack_time: dict[str, tuple[int, int]] = {}   # rid -> (us, origin)
        self.applies: dict[str, dict[int, int]] = {}     # rid -> node -> us
        self.window_closes = 0
        self.conflicts = 0
        self.generation_changes: list[tuple[int, int, int]] = []
        self.elections = 0

    def __call__(self, kind: str, time: int, frm, detail: str) -> None:
        if kind == "ack":
            f = dict(p.split("=", 1) for p in detail.split("|"))
            self.ack_time.setdefault(f["rid"], (time, int(f["origin"])))
        elif kind == "apply":
            f = dict(p.split("=", 1) for p in detail.split("|"))
            rid = f["rid"]
            if rid and f["dup"] == "0":
                self.applies.setdefault(rid, {})[int(frm)] = time
        elif kind == "window_close":
            self.window_closes += 1
        elif kind == "conflict":
            self.conflicts += 1
        elif kind == "generation":
            f = dict(p.split("=", 1) for p in detail.split("|"))
            self.generation_changes.append((time, int(f["old"]), int(f["new"])))
        elif kind == "elect" and detail.startswith("leader"):
            self.elections += 1


@dataclass
class RunReport:
    duration_s: float
    completions: list[Completion]
    node_stats: dict
    collector: TraceCollector
    window_s: float = 1.0
    committed_requests: int = 0
    rt_mean_us: dict[str, float] = field(default_factory=dict)
    counts: dict[str, int] = field(default_factory=dict)
    tps_windows: dict[float, float] = field(default_factory=dict)
    apply_lag_mean_us: float = 0.0
    mean_attempts: float = 1.0

    @classmethod
    def build(cls, duration_s: float, completions: list[Completion],
              node_stats: dict, collector: TraceCollector,
              window_s: float = 1.0) -> "RunReport":
        r = cls(duration_s, completions, node_stats, collector, window_s)
        sums: dict[str, float] = {"t": 0.0, "nt": 0.0, "all": 0.0}
        counts = {"t": 0, "nt": 0, "all": 0}
        windows: dict[float, int] = {}
        for c in completions:
            rt = c.end_us - c.start_us
            sums[c.kind] += rt
            counts[c.kind] += 1
            sums["all"] += rt
            counts["all"] += 1
            w = (c.end_us // int(window_s * 1_000_000)) * window_s
            windows[w] = windows.get(w, 0) + 1
        r.counts = counts
        r.rt_mean_us = {k: (sums[k] / counts[k] if counts[k] else 0.0)
                        for k in sums}
        r.tps_windows = {w: n / window_s for w, n in sorted(windows.items())}
        r.committed_requests = len(collector.applies)
        lags = []
        for rid, (ack_us, origin) in collector.ack_time.items():
            if rid.endswith(".nt"):
                t = collector.applies.get(rid, {}).get(origin)
                if t is not None and t >= ack_us:
                    lags.append(t - ack_us)
        r.apply_lag_mean_us = sum(lags) / len(lags) if lags else 0.0
        if completions:
            r.mean_attempts = sum(c.attempts for c in completions) / len(completions)
        return r

    def tps(self) -> float:
        return len(self.completions) / self.duration_s if self.duration_s else 0.0

    def sent_bytes_per_commit(self, node_id: int) -> float:
        n = max(1, self.committed_requests)
        return self.node_stats[node_id].sent_bytes / n

    def mean_follower_sent_per_commit(self, leader_id: int) -> float:
        per = [st.sent_bytes for nid, st in self.node_stats.items()
               if nid != leader_id]
        n = max(1, self.committed_requests)
        return (sum(per) / len(per)) / n if per else 0.0

    def csv_rows(self):
        yield ("metric", "kind", "node", "window_start_s", "value")
        for k in ("all", "t", "nt"):
            yield ("rt_mean_ms", k, "-", "-", f"{self.rt_mean_us[k] / 1000:.3f}")
            yield ("completions", k, "-", "-", str(self.counts[k]))
        yield ("tps", "all", "-", "-", f"{self.tps():.2f}")
        for w, v in self.tps_windows.items():
            yield ("tps_window", "all", "-", f"{w:.1f}", f"{v:.2f}")
        yield ("apply_lag_ms", "nt", "-", "-", f"{self.apply_lag_mean_us / 1000:.3f}")
        yield ("mean_attempts", "all", "-", "-", f"{self.mean_attempts:.3f}")
        yield ("committed_requests", "all", "-", "-", str(self.committed_requests))
        yield ("window_closes", "-", "-", "-", str(self.collector.window_closes))
        yield ("index_conflicts", "-", "-", "-", str(self.collector.conflicts))
        yield ("leader_elections", "-", "-", "-", str(self.collector.elections))
        for nid in sorted(self.node_stats):
            st = self.node_stats[nid]
            yield ("bytes_sent", "-", str(nid), "-", str(st.sent_bytes))
            yield ("bytes_recv", "-", str(nid), "-", str(st.recv_bytes))
            yield ("bytes_retransmitted", "-", str(nid), "-", str(st.retrans_bytes))
            yield ("bytes_dropped", "-", str(nid), "-", str(st.dropped_bytes))
            yield ("busy_us", "-", str(nid), "-", str(st.busy_us))
            yield ("staged_bytes_peak", "-", str(nid), "-", str(st.staged_bytes_peak))

    def write_csv(self, path: str) -> None:
        with open(path, "w", newline="") as fh:
            csv.writer(fh).writerows(self.csv_rows())


def compare_runs(a: RunReport, b: RunReport) -> dict[str, float]:
    """Headline ratios of run ``a`` against run ``b`` (b as baseline)."""
    out = {
        "tps_ratio": a.tps() / b.tps() if b.tps() else float("inf"),
        "rt_all_ratio": (a.rt_mean_us["all"] / b.rt_mean_us["all"]
                         if b.rt_mean_us["all"] else float("inf")),
    }
    for k in ("t", "nt"):
        if b.rt_mean_us[k]:
            out[f"rt_{k}_ratio"] = a.rt_mean_us[k] / b.rt_mean_us[k]
    return out
