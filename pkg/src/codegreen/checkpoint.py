"""Checkpoint events: composite keys, the on-disk log, and region pairing.

Instrumented programs in any language append one line per event to a
per-thread log ``ckpt_<tid>.log`` inside ``$CODEGREEN_CHECKPOINT_DIR``::

    <function>#inv_<N>_t<TID>\\t<B|E>\\t<monotonic ns>\\n

``N`` counts invocations of that function on that thread starting at 1, so
recursive calls and concurrent threads get distinct keys.
"""

from __future__ import annotations

import enum
import os
import re
import threading
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .errors import CodeGreenError

CHECKPOINT_DIR_ENV = "CODEGREEN_CHECKPOINT_DIR"
RUN_ID_ENV = "CODEGREEN_RUN_ID"
LOG_GLOB = "ckpt_*.log"
ANCHOR_GLOB = "anchor_*.txt"

_KEY_RE = re.compile(r"^(?P<name>[^\t\n#]+)#inv_(?P<inv>\d+)_t(?P<tid>\d+)$")
_FORBIDDEN = set("\t\n\r#")


class CheckpointError(CodeGreenError):
    pass


class InvalidName(CheckpointError, ValueError):
    pass


class NoFiles(CheckpointError):
    pass


class IoFailure(CheckpointError, OSError):
    pass


@dataclass(frozen=True, order=True)
class CheckpointKey:
    function_name: str
    invocation: int
    thread_id: int

    def __str__(self):
        return f"{self.function_name}#inv_{self.invocation}_t{self.thread_id}"

    @classmethod
    def parse(cls, text: str) -> "CheckpointKey":
        m = _KEY_RE.match(text)
        if m is None:
            raise InvalidName(f"malformed checkpoint key {text!r}")
        return cls(m["name"], int(m["inv"]), int(m["tid"]))


def make_key(function_name: str, invocation: int, thread_id: int) -> CheckpointKey:
    if not function_name or _FORBIDDEN & set(function_name):
        raise InvalidName(f"invalid function name {function_name!r}")
    if invocation < 1 or thread_id < 0:
        raise InvalidName(f"invalid invocation {invocation} / thread {thread_id}")
    return CheckpointKey(function_name, int(invocation), int(thread_id))


class EventKind(str, enum.Enum):
    BEGIN = "B"
    END = "E"


@dataclass(frozen=True)
class CheckpointEvent:
    key: CheckpointKey
    kind: EventKind
    ts: int


def format_event(event: CheckpointEvent) -> str:
    return f"{event.key}\t{event.kind.value}\t{event.ts}\n"


def parse_line(line: str) -> CheckpointEvent:
    parts = line.rstrip("\n").split("\t")
    if len(parts) != 3:
        raise ValueError("expected 3 tab-separated fields")
    key, kind, ts = parts
    if not ts.isdigit():
        raise ValueError(f"bad timestamp {ts!r}")
    return CheckpointEvent(CheckpointKey.parse(key), EventKind(kind), int(ts))


class InvocationTracker:
    """Per-thread invocation counters and open-invocation stacks.

    ``begin`` mints the next key for (thread, function); ``end`` returns the
    key from the top of that thread's stack.
    """

    def __init__(self):
        self._local = threading.local()

    def _state(self):
        st = getattr(self._local, "state", None)
        if st is None:
            st = self._local.state = (defaultdict(int), [])
        return st

    def begin(self, function_name: str, thread_id: int | None = None) -> CheckpointKey:
        counters, stack = self._state()
        counters[function_name] += 1
        tid = threading.get_native_id() if thread_id is None else thread_id
        key = make_key(function_name, counters[function_name], tid)
        stack.append(key)
        return key

    def end(self) -> CheckpointKey:
        _, stack = self._state()
        return stack.pop()


class CheckpointWriter:
    """Appends events to per-thread log files; no locks on the write path.

    Each thread lazily opens its own ``ckpt_<tid>.log``.  Lines are buffered
    in memory and written at :meth:`close` (or when a thread's buffer fills).
    """

    def __init__(self, directory: str | os.PathLike, flush_every: int = 65536):
        self.directory = Path(directory)
        self.flush_every = flush_every
        self._local = threading.local()
        self._streams: list[tuple[Path, list[str]]] = []

    def _buffer(self, thread_id: int) -> tuple[Path, list[str]]:
        bufs = getattr(self._local, "bufs", None)
        if bufs is None:
            bufs = self._local.bufs = {}
        entry = bufs.get(thread_id)
        if entry is None:
            entry = bufs[thread_id] = (self.directory / f"ckpt_{thread_id}.log", [])
            self._streams.append(entry)
        return entry

    def record(self, event: CheckpointEvent):
        path, lines = self._buffer(event.key.thread_id)
        lines.append(format_event(event))
        if len(lines) >= self.flush_every:
            self._flush(path, lines)

    @staticmethod
    def _flush(path: Path, lines: list[str]):
        try:
            with open(path, "a") as fh:
                fh.write("".join(lines))
        except OSError as exc:
            raise IoFailure(f"cannot write {path}: {exc}") from exc
        lines.clear()

    def close(self):
        for path, lines in self._streams:
            if lines:
                self._flush(path, lines)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def record_checkpoint(writer: CheckpointWriter, event: CheckpointEvent):
    writer.record(event)


@dataclass(frozen=True)
class LogDiagnostic:
    path: str
    line_no: int
    text: str
    reason: str


def checkpoint_logs(directory: str | os.PathLike) -> list[Path]:
    return sorted(Path(directory).glob(LOG_GLOB))


def parse_checkpoint_log(paths: Iterable[str | os.PathLike]) -> tuple[list[CheckpointEvent], list[LogDiagnostic]]:
    """Read and merge logs into one time-sorted event list.

    The sort is stable, so events sharing a timestamp keep their file order.
    Malformed lines are returned as diagnostics.
    """
    paths = [Path(p) for p in paths]
    if not paths:
        raise NoFiles("no checkpoint logs given")
    events: list[CheckpointEvent] = []
    diags: list[LogDiagnostic] = []
    for path in paths:
        with open(path, "r", errors="replace") as fh:
            for n, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    events.append(parse_line(line))
                except ValueError as exc:
                    diags.append(LogDiagnostic(str(path), n, line.rstrip("\n"), str(exc)))
    events.sort(key=lambda e: e.ts)
    return events, diags


# -- pairing ------------------------------------------------------------------

class PairingIssue(str, enum.Enum):
    UNMATCHED_BEGIN = "unmatched_begin"
    UNMATCHED_END = "unmatched_end"
    CROSSED_PAIRING = "crossed_pairing"
    DUPLICATE_BEGIN = "duplicate_begin"


@dataclass(frozen=True)
class PairingDiagnostic:
    issue: PairingIssue
    key: CheckpointKey
    ts: int


@dataclass(frozen=True)
class Region:
    key: CheckpointKey
    t_begin: int
    t_end: int
    parent: CheckpointKey | None = None
    depth: int = 0

    @property
    def duration_ns(self) -> int:
        return self.t_end - self.t_begin


def pair_regions(events: Sequence[CheckpointEvent]) -> tuple[list[Region], list[PairingDiagnostic]]:
    """Match begin/end events per thread into nested regions.

    Ends normally close the innermost open begin.  An end whose key is open
    deeper in the stack is paired anyway and reported as crossed.  Parents
    refer to the nearest enclosing region that was itself closed, so a lost
    end event does not orphan its children.
    """
    diags: list[PairingDiagnostic] = []
    stacks: dict[int, list[tuple[CheckpointKey, int]]] = defaultdict(list)
    opened: dict[CheckpointKey, CheckpointKey | None] = {}
    closed: dict[CheckpointKey, tuple[int, int]] = {}
    for ev in events:
        key = ev.key
        stack = stacks[key.thread_id]
        if ev.kind is EventKind.BEGIN:
            if key in opened:
                diags.append(PairingDiagnostic(PairingIssue.DUPLICATE_BEGIN, key, ev.ts))
                continue
            opened[key] = stack[-1][0] if stack else None
            stack.append((key, ev.ts))
            continue
        if stack and stack[-1][0] == key:
            _, t0 = stack.pop()
        else:
            for i in range(len(stack) - 1, -1, -1):
                if stack[i][0] == key:
                    break
            else:
                diags.append(PairingDiagnostic(PairingIssue.UNMATCHED_END, key, ev.ts))
                continue
            _, t0 = stack.pop(i)
            diags.append(PairingDiagnostic(PairingIssue.CROSSED_PAIRING, key, ev.ts))
        closed[key] = (t0, ev.ts)
    for stack in stacks.values():
        for key, t0 in stack:
            diags.append(PairingDiagnostic(PairingIssue.UNMATCHED_BEGIN, key, t0))

    def closed_parent(key):
        parent = opened[key]
        while parent is not None and parent not in closed:
            parent = opened[parent]
        return parent

    parents = {key: closed_parent(key) for key in closed}
    depths: dict[CheckpointKey, int] = {}

    def depth(key):
        d = depths.get(key)
        if d is None:
            chain = []
            k = key
            while k is not None and k not in depths:
                chain.append(k)
                k = parents[k]
            d = -1 if k is None else depths[k]
            for k in reversed(chain):
                d += 1
                depths[k] = d
            d = depths[key]
        return d

    regions = [Region(key, t0, t1, parents[key], depth(key))
               for key, (t0, t1) in closed.items()]
    regions.sort(key=lambda r: (r.t_begin, r.depth, str(r.key)))
    return regions, diags


def read_anchors(directory: str | os.PathLike) -> dict[int, tuple[int, int]]:
    """Clock anchors written by shims: pid -> (wall ns, monotonic ns)."""
    anchors = {}
    for path in Path(directory).glob(ANCHOR_GLOB):
        try:
            pid = int(path.stem.split("_", 1)[1])
            wall, mono = (int(x) for x in path.read_text().split()[:2])
        except (ValueError, IndexError, OSError):
            continue
        anchors[pid] = (wall, mono)
    return anchors


def shift_events(events: Sequence[CheckpointEvent], offset_ns: int) -> list[CheckpointEvent]:
    """Move events onto another clock: ``ts - offset_ns``."""
    if not offset_ns:
        return list(events)
    return [CheckpointEvent(e.key, e.kind, e.ts - offset_ns) for e in events]
