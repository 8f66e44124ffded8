"""Index arithmetic, window lifecycle and log storage."""

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lcrsim.logcore import (CommittedMutation, Entry, EntryKind, FutureStage,
                            NoOpenWindow, StageOutcome, UnifiedLog, Window,
                            WindowState, allocate_future_index, maintain_windows,
                            owner_of, reallocate_index)


def fe(index, gen=5, origin=None, rid="r", term=1):
    if origin is None:
        origin = index % gen
    return Entry(index=index, term=term, kind=EntryKind.FUTURE, origin=origin,
                 generation=gen, request_id=rid)


class TestAllocate:
    def test_mid_log(self):
        w = [Window(5, 11, 110)]
        assert allocate_future_index(2, 5, 13, w) == 17

    def test_empty_log(self):
        w = [Window(3, 1, 100)]
        assert allocate_future_index(1, 3, 0, w) == 4

    def test_skips_closed_window(self):
        w = [Window(5, 6, 10, WindowState.CLOSED), Window(5, 11, 15)]
        assert allocate_future_index(4, 5, 9, w) == 14

    def test_result_keeps_residue(self):
        w = [Window(5, 1, 1000)]
        for last in range(0, 60, 7):
            lam = allocate_future_index(3, 5, last, w)
            assert lam % 5 == 3
            assert lam > last

    def test_no_open_window(self):
        with pytest.raises(NoOpenWindow):
            allocate_future_index(2, 5, 13, [Window(5, 1, 10, WindowState.CLOSED)])
        with pytest.raises(NoOpenWindow):
            # open window entirely below the first candidate
            allocate_future_index(2, 5, 200, [Window(5, 1, 100)])

    def test_generation_must_cover_id(self):
        with pytest.raises(ValueError):
            allocate_future_index(5, 5, 0, [Window(5, 1, 100)])


class TestReallocate:
    def test_growth(self):
        assert reallocate_index(17, 5, 7, 2) == 23

    def test_identity(self):
        assert reallocate_index(17, 5, 5, 2) == 17

    def test_large_remap(self):
        assert reallocate_index(803, 3, 5, 2) == 1337

    def test_wrong_owner(self):
        with pytest.raises(ValueError):
            reallocate_index(18, 5, 7, 2)

    def test_never_shrinks(self):
        with pytest.raises(ValueError):
            reallocate_index(17, 5, 3, 2)

    @given(st.integers(1, 10**6), st.integers(3, 64), st.integers(0, 61),
           st.integers(0, 1000))
    def test_residue_and_monotone(self, base, old_gen, self_id, growth):
        self_id %= old_gen
        new_gen = old_gen + growth
        lam = base * old_gen + self_id
        out = reallocate_index(lam, old_gen, new_gen, self_id)
        assert out % new_gen == self_id
        assert out >= lam


class TestOwner:
    def test_examples(self):
        assert owner_of(17, 5) == 2
        assert owner_of(15, 5) == 0
        assert owner_of(23, 7) == 2

    def test_rejects_bad_generation(self):
        with pytest.raises(ValueError):
            owner_of(10, 0)


class TestMaintainWindows:
    def test_close_and_top_up(self):
        out = maintain_windows(6, [Window(5, 1, 5), Window(5, 6, 10)],
                               window_size=5)
        assert [(w.start, w.end, w.state) for w in out] == [
            (1, 5, WindowState.CLOSED), (6, 10, WindowState.CLOSED),
            (11, 15, WindowState.OPEN), (16, 20, WindowState.OPEN)]

    def test_bootstrap(self):
        out = maintain_windows(0, [], window_size=100)
        assert [(w.start, w.end) for w in out] == [(1, 100), (101, 200)]
        assert all(w.state == WindowState.OPEN for w in out)

    def test_partial_close(self):
        out = maintain_windows(850, [Window(0, 801, 900), Window(0, 901, 1000)],
                               window_size=100)
        assert [(w.start, w.state) for w in out] == [
            (801, WindowState.CLOSED), (901, WindowState.OPEN),
            (1001, WindowState.OPEN)]

    @given(st.integers(0, 5000), st.integers(1, 6))
    @settings(max_examples=200)
    def test_invariants(self, normal_last, rounds):
        windows = []
        for step in range(rounds):
            progress = normal_last + step * 37
            closed_before = {w.start for w in windows
                             if w.state == WindowState.CLOSED}
            windows = maintain_windows(progress, windows, window_size=50)
            opens = [w for w in windows if w.state == WindowState.OPEN]
            assert len(opens) >= 2
            assert all(w.start > progress for w in opens)
            assert all(w.start % 50 == 1 for w in windows)
            # closed is absorbing
            now_closed = {w.start for w in windows
                          if w.state == WindowState.CLOSED}
            assert closed_before <= now_closed
            starts = [w.start for w in windows]
            assert starts == sorted(starts)


class TestFutureStage:
    def test_stage_duplicate_stale(self):
        s = FutureStage()
        e = fe(17)
        assert s.stage(e, 5) == StageOutcome.STAGED
        assert s.stage(fe(17), 5) == StageOutcome.DUPLICATE
        assert s.stage(fe(12, gen=3, origin=0), 5) == StageOutcome.STALE_GENERATION
        assert s.stage(fe(17, rid="other"), 5) == StageOutcome.CONFLICT
        assert s.max_index_seen == 17

    def test_only_futures(self):
        s = FutureStage()
        with pytest.raises(ValueError):
            s.stage(Entry(index=1, term=1, kind=EntryKind.NORMAL), 5)

    def test_bytes_held(self):
        s = FutureStage()
        e = fe(7)
        e.payload = b"x" * 10
        s.stage(e, 5)
        assert s.bytes_held(24) == 34
        s.drop(7)
        assert s.bytes_held(24) == 0


class TestUnifiedLog:
    def test_gap_append(self):
        log = UnifiedLog()
        log.append(fe(5))
        assert log.last_index == 5
        assert log.last_contiguous_index == 0

    def test_contiguous(self):
        log = UnifiedLog()
        for i in range(1, 6):
            log.append(Entry(index=i, term=1, kind=EntryKind.NORMAL))
        assert log.last_contiguous_index == 5

    def test_gap_fills_in(self):
        log = UnifiedLog()
        log.append(fe(2, gen=2, origin=0))
        for i in (1, 3):
            log.append(Entry(index=i, term=1, kind=EntryKind.NORMAL))
        assert log.last_contiguous_index == 3

    def test_truncate(self):
        log = UnifiedLog()
        for i in (5, 6, 7, 8):
            log.append(Entry(index=i, term=1, kind=EntryKind.NORMAL))
        log.truncate_from(7)
        assert sorted(log.entries) == [5, 6]
        assert log.last_index == 6

    def test_committed_guard(self):
        log = UnifiedLog()
        for i in (1, 2, 3):
            log.append(Entry(index=i, term=1, kind=EntryKind.NORMAL))
        with pytest.raises(CommittedMutation):
            log.append(Entry(index=2, term=2, kind=EntryKind.NORMAL),
                       commit_index=2)
        with pytest.raises(CommittedMutation):
            log.truncate_from(2, commit_index=2)

    def test_dump_round_trip_fields(self):
        log = UnifiedLog()
        e = fe(7)
        e.payload = b"\x01\x02"
        log.append(e)
        (line,) = log.dump_lines()
        assert line == "7,1,5,FUTURE,2,r,0102"
