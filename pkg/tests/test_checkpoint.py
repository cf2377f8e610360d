import random
import threading

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from codegreen import checkpoint as ck
from codegreen.checkpoint import (
    CheckpointEvent,
    CheckpointKey,
    CheckpointWriter,
    EventKind,
    InvalidName,
    InvocationTracker,
    NoFiles,
    PairingIssue,
    checkpoint_logs,
    format_event,
    make_key,
    pair_regions,
    parse_checkpoint_log,
    record_checkpoint,
)

B, E = EventKind.BEGIN, EventKind.END


def ev(name, inv, kind, ts, tid=1):
    return CheckpointEvent(CheckpointKey(name, inv, tid), kind, ts)


class TestKeys:
    def test_render(self):
        assert str(make_key("fib", 3, 140233)) == "fib#inv_3_t140233"

    def test_parse_round_trip(self):
        key = make_key("Outer.inner", 12, 7)
        assert CheckpointKey.parse(str(key)) == key

    @pytest.mark.parametrize("name", ["", "a#b", "tab\there", "nl\n"])
    def test_invalid_names(self, name):
        with pytest.raises(InvalidName):
            make_key(name, 1, 1)

    def test_invalid_invocation(self):
        with pytest.raises(InvalidName):
            make_key("f", 0, 1)

    def test_first_call_is_one(self):
        assert InvocationTracker().begin("f", 5).invocation == 1

    def test_recursion_counts_up(self):
        t = InvocationTracker()
        keys = [t.begin("f", 5) for _ in range(3)]
        assert [k.invocation for k in keys] == [1, 2, 3]
        assert [t.end() for _ in range(3)] == keys[::-1]

    def test_threads_isolated(self):
        t = InvocationTracker()
        seen = []

        def work():
            seen.append(t.begin("work"))

        threads = [threading.Thread(target=work) for _ in range(2)]
        for th in threads:
            th.start()
        for th in threads:
            th.join()
        assert {k.function_name for k in seen} == {"work"}
        assert {k.invocation for k in seen} == {1}
        assert len({k.thread_id for k in seen}) == 2


class TestLogFormat:
    def test_lines(self):
        assert format_event(ev("fib", 1, B, 1000, 7)) == "fib#inv_1_t7\tB\t1000\n"
        assert format_event(ev("fib", 1, E, 9000, 7)) == "fib#inv_1_t7\tE\t9000\n"

    def test_parse_two_lines(self, tmp_path):
        p = tmp_path / "ckpt_7.log"
        p.write_text("fib#inv_1_t7\tB\t1000\nfib#inv_1_t7\tE\t9000\n")
        events, diags = parse_checkpoint_log([p])
        assert [e.kind for e in events] == [B, E]
        assert diags == []

    def test_garbage_line(self, tmp_path):
        p = tmp_path / "ckpt_7.log"
        p.write_text("fib#inv_1_t7\tB\t1000\ngarbage\nfib#inv_1_t7\tE\t9000\n")
        events, diags = parse_checkpoint_log([p])
        assert len(events) == 2
        assert [(d.line_no, d.text) for d in diags] == [(2, "garbage")]

    def test_no_files(self):
        with pytest.raises(NoFiles):
            parse_checkpoint_log([])

    def test_write_failure(self, tmp_path):
        w = CheckpointWriter(tmp_path / "missing" / "dir", flush_every=1)
        with pytest.raises(ck.IoFailure):
            w.record(ev("f", 1, B, 1))

    def test_four_threads_merge_in_true_order(self, tmp_path):
        # oracle: a single generator assigns global timestamps, then threads replay their share
        rng = random.Random(11)
        truth = []
        counters = {tid: 0 for tid in range(4)}
        for ts in range(1, 4001):
            tid = rng.randrange(4)
            counters[tid] += 1
            truth.append(ev("step", counters[tid], B if ts % 2 else E, ts * 10, tid + 100))
        writer = CheckpointWriter(tmp_path, flush_every=64)

        def replay(tid):
            for e in truth:
                if e.key.thread_id == tid:
                    record_checkpoint(writer, e)

        threads = [threading.Thread(target=replay, args=(t + 100,)) for t in range(4)]
        for th in threads:
            th.start()
        for th in threads:
            th.join()
        writer.close()
        assert len(checkpoint_logs(tmp_path)) == 4
        events, diags = parse_checkpoint_log(checkpoint_logs(tmp_path))
        assert events == truth and diags == []

    def test_million_events_round_trip(self, tmp_path):
        rng = random.Random(5)
        events, ts = [], 0
        for i in range(500_000):
            key = CheckpointKey("f" + str(i % 7), i // 7 + 1, 1 + i % 3)
            ts += rng.randrange(1, 1000)
            events.append(CheckpointEvent(key, B, ts))
            ts += rng.randrange(1, 1000)
            events.append(CheckpointEvent(key, E, ts))
        with CheckpointWriter(tmp_path) as w:
            for e in events:
                w.record(e)
        parsed, diags = parse_checkpoint_log(checkpoint_logs(tmp_path))
        assert parsed == events and diags == []


class TestPairing:
    def test_nesting(self):
        regions, diags = pair_regions([ev("f", 1, B, 1), ev("g", 1, B, 2), ev("g", 1, E, 3), ev("f", 1, E, 4)])
        by = {r.key.function_name: r for r in regions}
        assert by["g"].parent == by["f"].key
        assert (by["f"].depth, by["g"].depth) == (0, 1)
        assert diags == []

    def test_recursion(self):
        regions, _ = pair_regions([ev("f", 1, B, 1), ev("f", 2, B, 2), ev("f", 2, E, 3), ev("f", 1, E, 4)])
        assert len(regions) == 2
        inner = next(r for r in regions if r.key.invocation == 2)
        assert inner.parent == CheckpointKey("f", 1, 1)

    def test_unmatched_begin(self):
        regions, diags = pair_regions([ev("f", 1, B, 1)])
        assert regions == []
        assert [d.issue for d in diags] == [PairingIssue.UNMATCHED_BEGIN]

    def test_unmatched_end(self):
        regions, diags = pair_regions([ev("f", 1, E, 1)])
        assert regions == [] and [d.issue for d in diags] == [PairingIssue.UNMATCHED_END]

    def test_crossed(self):
        regions, diags = pair_regions([ev("f", 1, B, 1), ev("g", 1, B, 2), ev("f", 1, E, 3), ev("g", 1, E, 4)])
        assert len(regions) == 2
        assert PairingIssue.CROSSED_PAIRING in [d.issue for d in diags]

    def test_duplicate_begin(self):
        _, diags = pair_regions([ev("f", 1, B, 1), ev("f", 1, B, 2), ev("f", 1, E, 3)])
        assert [d.issue for d in diags] == [PairingIssue.DUPLICATE_BEGIN]

    def test_lost_end_keeps_grandparent(self):
        events = [ev("a", 1, B, 1), ev("b", 1, B, 2), ev("c", 1, B, 3), ev("c", 1, E, 4), ev("a", 1, E, 6)]
        regions, diags = pair_regions(events)
        c = next(r for r in regions if r.key.function_name == "c")
        assert c.parent.function_name == "a" and c.depth == 1
        assert PairingIssue.CROSSED_PAIRING in [d.issue for d in diags]

    def test_threads_do_not_nest_across(self):
        regions, diags = pair_regions([ev("f", 1, B, 1, 1), ev("f", 1, B, 2, 2),
                                       ev("f", 1, E, 3, 1), ev("f", 1, E, 4, 2)])
        assert diags == [] and all(r.parent is None for r in regions)


def test_anchors_and_shift(tmp_path):
    (tmp_path / "anchor_42.txt").write_text("1000 500\n")
    (tmp_path / "anchor_bad.txt").write_text("x\n")
    assert ck.read_anchors(tmp_path) == {42: (1000, 500)}
    shifted = ck.shift_events([ev("f", 1, B, 100)], 40)
    assert shifted[0].ts == 60


# -- generated well-formed streams ------------------------------------------------

@st.composite
def event_streams(draw, max_ops=40):
    """Random properly nested call trees over a few threads, strictly increasing ts."""
    names = st.sampled_from(["main", "f", "g", "Cls.m", "loop@3"])
    counters, stacks, out = {}, {}, []
    ts = draw(st.integers(0, 10**12))
    for _ in range(draw(st.integers(0, max_ops))):
        tid = draw(st.integers(1, 3))
        stack = stacks.setdefault(tid, [])
        ts += draw(st.integers(1, 10**6))
        if stack and draw(st.booleans()):
            out.append(CheckpointEvent(stack.pop(), E, ts))
        else:
            name = draw(names)
            counters[(tid, name)] = counters.get((tid, name), 0) + 1
            key = CheckpointKey(name, counters[(tid, name)], tid)
            stack.append(key)
            out.append(CheckpointEvent(key, B, ts))
    for tid, stack in stacks.items():
        while stack:
            ts += 1
            out.append(CheckpointEvent(stack.pop(), E, ts))
    return out


def write_and_parse(events, directory):
    for p in checkpoint_logs(directory):
        p.unlink()
    with CheckpointWriter(directory) as w:
        for e in events:
            w.record(e)
    logs = checkpoint_logs(directory)
    return parse_checkpoint_log(logs) if logs else ([], [])


@given(event_streams())
@settings(max_examples=150, deadline=None)
def test_round_trip_and_pairing_property(tmp_path_factory, events):
    d = tmp_path_factory.mktemp("rt")
    parsed, diags = write_and_parse(events, d)
    assert parsed == events and diags == []
    regions, pdiags = pair_regions(parsed)
    assert pdiags == []
    assert len(regions) * 2 == len(events)
    by_key = {r.key: r for r in regions}
    for r in regions:
        if r.parent is not None:
            p = by_key[r.parent]
            assert p.t_begin <= r.t_begin and r.t_end <= p.t_end
            assert r.depth == p.depth + 1
