"""State machine, client behaviour, metrics and trace verification."""

import pytest

from lcrsim.kv import KvStateMachine, encode_insert, encode_transfer
from lcrsim.metrics import (RunReport, TraceCollector, predict_nt_response_us,
                            predict_t_response_us)
from lcrsim.simnet import NodeStats
from lcrsim.verify import parse_trace, verify_trace
from lcrsim.workload import Completion, kind_of_rid, payload_for_rid


class TestKv:
    def test_insert(self):
        sm = KvStateMachine()
        sm.apply("r1", encode_insert("k1", 42))
        assert sm.store["k1"] == 42

    def test_padding_is_ignored(self):
        sm1, sm2 = KvStateMachine(), KvStateMachine()
        sm1.apply("r1", encode_insert("k1", 42))
        sm2.apply("r1", encode_insert("k1", 42, size=128))
        assert sm1.digest() == sm2.digest()

    def test_transfer_with_implicit_balance(self):
        sm = KvStateMachine()
        sm.apply("r1", encode_transfer("a", "b", 30))
        assert sm.store["a"] == 70
        assert sm.store["b"] == 130

    def test_insufficient_balance_is_deterministic_rejection(self):
        sm = KvStateMachine()
        sm.apply("r1", encode_transfer("a", "b", 500))
        assert sm.rejected == 1
        assert "a" not in sm.store

    def test_dedup_tracking(self):
        sm = KvStateMachine()
        sm.apply("r1", encode_insert("k", 1))
        assert sm.applied("r1")
        assert not sm.applied("r2")
        assert not sm.applied("")

    def test_digest_depends_on_state(self):
        a, b = KvStateMachine(), KvStateMachine()
        a.apply("r1", encode_insert("k", 1))
        b.apply("r1", encode_insert("k", 2))
        assert a.digest() != b.digest()


class TestRequestIdentity:
    def test_kind_parsing(self):
        assert kind_of_rid("c3.17.nt") == "nt"
        assert kind_of_rid("c3.17.t") == "t"

    def test_payload_is_deterministic(self):
        assert payload_for_rid("c1.5.nt", 80) == payload_for_rid("c1.5.nt", 80)
        assert payload_for_rid("c1.5.nt") != payload_for_rid("c1.6.nt")

    def test_payload_matches_kind(self):
        assert payload_for_rid("c1.5.nt").startswith(b"I ")
        assert payload_for_rid("c1.5.t").startswith(b"T ")

    def test_padding_to_size(self):
        assert len(payload_for_rid("c1.5.nt", 200)) == 200


class TestPredictors:
    def test_follower_acknowledged_floor(self):
        assert predict_nt_response_us(0, 5000) == 10_000

    def test_leader_committed_floor(self):
        assert predict_t_response_us(0, 5000, via_leader=False) == 20_000
        assert predict_t_response_us(0, 5000, via_leader=True) == 10_000

    def test_overhead_terms(self):
        assert predict_nt_response_us(100, 5000, proc_us=50, disk_us=20) == 10_270


def _completion(rid, kind, start, end):
    return Completion(rid=rid, kind=kind, client_id="c0", target=0,
                      start_us=start, end_us=end, attempts=1)


class TestRunReport:
    def test_means_and_windows(self):
        comps = [_completion("c0.1.t", "t", 0, 20_000),
                 _completion("c0.2.nt", "nt", 20_000, 30_000),
                 _completion("c0.3.t", "t", 1_000_000, 1_040_000)]
        rep = RunReport.build(2.0, comps, {0: NodeStats()}, TraceCollector())
        assert rep.rt_mean_us["t"] == 30_000
        assert rep.rt_mean_us["nt"] == 10_000
        assert rep.tps() == 1.5
        assert rep.tps_windows == {0.0: 2.0, 1.0: 1.0}

    def test_csv_stable(self):
        rep = RunReport.build(1.0, [], {0: NodeStats()}, TraceCollector())
        assert list(rep.csv_rows()) == list(rep.csv_rows())


GOOD_TRACE = """\
0,ack,1,-,-,0,rid=c0.1.nt|kind=nt|idx=5|origin=1
10,apply,0,-,-,0,idx=1|rid=c0.1.nt|kind=FUTURE|digest=aaa|dup=0
11,apply,1,-,-,0,idx=1|rid=c0.1.nt|kind=FUTURE|digest=aaa|dup=0
20,final_state,0,-,-,0,alive=1|term=1|gen=5|commit=1|applied=1|contig=1|digest={d}
21,final_state,1,-,-,0,alive=1|term=1|gen=5|commit=1|applied=1|contig=1|digest={d}
"""


def _expected_digest():
    sm = KvStateMachine()
    sm.apply("c0.1.nt", payload_for_rid("c0.1.nt"))
    return sm.digest()


class TestVerifier:
    def test_clean_trace_passes(self):
        res = verify_trace(GOOD_TRACE.format(d=_expected_digest()).splitlines())
        assert res.ok, res.errors

    def test_divergent_apply_fails(self):
        bad = GOOD_TRACE.format(d=_expected_digest()).replace(
            "11,apply,1,-,-,0,idx=1|rid=c0.1.nt",
            "11,apply,1,-,-,0,idx=1|rid=c9.9.nt")
        res = verify_trace(bad.splitlines())
        assert not res.checks["applied_prefix"]

    def test_unapplied_ack_fails(self):
        bad = "\n".join(l for l in
                        GOOD_TRACE.format(d=_expected_digest()).splitlines()
                        if ",apply," not in l)
        res = verify_trace(bad.splitlines())
        assert not res.checks["ack_durability"]

    def test_double_mutation_fails(self):
        lines = GOOD_TRACE.format(d=_expected_digest()).splitlines()
        lines.insert(3, "12,apply,1,-,-,0,idx=2|rid=c0.1.nt|kind=FUTURE|digest=aaa|dup=0")
        res = verify_trace(lines)
        assert not res.checks["at_most_once"]

    def test_wrong_digest_fails(self):
        res = verify_trace(GOOD_TRACE.format(d="deadbeef").splitlines())
        assert not res.checks["digest_replay"]

    def test_gapped_prefix_fails(self):
        lines = [l.replace("idx=1", "idx=2") if ",apply,0," in l else l
                 for l in GOOD_TRACE.format(d=_expected_digest()).splitlines()]
        res = verify_trace(lines)
        assert not res.checks["applied_prefix"] or \
            not res.checks["commit_monotone"]

    def test_parse_round_trip(self):
        (ev,) = parse_trace(["5,send,0,1,AppendEntriesRequest,152,"])
        assert (ev.time, ev.kind, ev.frm, ev.to) == (5, "send", "0", "1")
        assert ev.nbytes == 152
