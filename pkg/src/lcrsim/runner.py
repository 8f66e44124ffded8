"""Scenario execution: build the cluster, drive the clock, collect outputs."""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass

from .metrics import RunReport, TraceCollector
from .scenario import Scenario
from .simnet import Simulation
from .verify import VerifyResult, verify_trace
from .workload import ClosedLoopClient, Completion


@dataclass
class RunResult:
    scenario: Scenario
    seed: int
    sim: Simulation
    report: RunReport
    verdict: VerifyResult
    completions: list[Completion]


def run_scenario(sc: Scenario, seed: int | None = None,
                 protocol: str | None = None, drain_s: float = 2.0) -> RunResult:
    seed = sc.seed if seed is None else seed
    node_cfg = dataclasses.replace(sc.node_cfg)
    if protocol is not None:
        node_cfg.protocol = protocol

    collector = TraceCollector()
    sim = Simulation(seed, sc.node_latency, sc.client_latency, sc.size, sc.cost)
    sim.hooks.append(collector)

    n_members = sc.initial_members if sc.initial_members is not None else sc.nodes
    members = list(range(n_members))
    for nid in range(sc.nodes):
        sim.add_node(nid, members if nid in members else [], node_cfg,
                     bootstrap_leader=(nid == sc.bootstrap_leader))

    duration_us = int(sc.duration_s * 1_000_000)
    client_cfg = dataclasses.replace(sc.client_cfg, stop_at_us=duration_us)
    completions: list[Completion] = []
    for i in range(sc.clients):
        sim.add_client(ClosedLoopClient(f"c{i}", client_cfg, members, completions))

    for f in sc.faults:
        t = int(f.time_s * 1_000_000)
        if f.action == "crash":
            sim.schedule(t, lambda n=f.node: sim.crash(n))
        elif f.action == "restart":
            sim.schedule(t, lambda n=f.node: sim.restart(n, node_cfg))
        elif f.action == "disconnect":
            sim.schedule(t, lambda n=f.node: sim.disconnect(n))
        elif f.action == "reconnect":
            sim.schedule(t, lambda n=f.node: sim.reconnect(n))

    def _membership_change(new_size: int) -> None:
        leader = sim.current_leader()
        if leader is None or len(leader.membership) >= new_size:
            if leader is None:  # no leader yet; try again shortly
                sim.schedule(sim.now + 100_000,
                             lambda: _membership_change(new_size))
            return
        sim.record(sim.now, "admin", detail=f"grow_to={new_size}")
        leader.request_membership_change(new_size)

    for m in sc.membership_changes:
        sim.schedule(int(m.time_s * 1_000_000),
                     lambda s=m.new_size: _membership_change(s))

    sim.run(duration_us + int(drain_s * 1_000_000))
    sim.finalize_trace()

    measured = [c for c in completions if c.end_us <= duration_us]
    report = RunReport.build(sc.duration_s, measured, sim.stats, collector,
                             window_s=sc.metrics_window_s)
    verdict = verify_trace(sim.trace)
    return RunResult(scenario=sc, seed=seed, sim=sim, report=report,
                     verdict=verdict, completions=completions)


def write_outputs(result: RunResult, outdir: str) -> None:
    os.makedirs(outdir, exist_ok=True)
    with open(os.path.join(outdir, "trace.txt"), "w") as fh:
        fh.write("\n".join(result.sim.trace))
        fh.write("\n")
    result.report.write_csv(os.path.join(outdir, "metrics.csv"))
    with open(os.path.join(outdir, "verdict.json"), "w") as fh:
        json.dump({"ok": result.verdict.ok, "checks": result.verdict.checks,
                   "errors": result.verdict.errors}, fh, indent=2)
        fh.write("\n")
    with open(os.path.join(outdir, "summary.json"), "w") as fh:
        json.dump({
            "scenario": result.scenario.name,
            "protocol": result.sim.nodes[0].cfg.protocol,
            "seed": result.seed,
            "tps": round(result.report.tps(), 2),
            "rt_mean_ms": {k: round(v / 1000, 3)
                           for k, v in result.report.rt_mean_us.items()},
            "committed_requests": result.report.committed_requests,
            "verified": result.verdict.ok,
        }, fh, indent=2)
        fh.write("\n")
