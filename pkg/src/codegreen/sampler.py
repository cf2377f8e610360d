"""Background polling of energy providers into preallocated buffers.

One polling thread per session reads every enabled domain once per sweep,
stamping the whole sweep with a single monotonic timestamp.  Buffers are
numpy arrays allocated up front; when one fills, new samples are dropped and
counted rather than growing the array or blocking the poller.  A reserved
slot per domain guarantees the closing boundary sample always fits.
"""

from __future__ import annotations

import enum
import logging
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import CodeGreenError
from .providers import EnergyProvider, ReadFailure
from .telemetry import DomainId, EnergySample, EnergySeries, unwrap_counter

logger = logging.getLogger(__name__)

DEFAULT_INTERVAL_NS = 10_000_000
MIN_BUFFER_CAPACITY = 4096
# upper bound on one wait, so a clock that is not wall time still gets polled
_MAX_SLEEP_S = 0.05


class SamplerError(CodeGreenError):
    pass


class ProviderProbeFailed(SamplerError):
    pass


class AlreadyRunning(SamplerError):
    pass


class NotRunning(SamplerError):
    pass


def default_capacity(expected_duration_ns: int, interval_ns: int) -> int:
    return max(MIN_BUFFER_CAPACITY, 4 * (expected_duration_ns // interval_ns + 1))


@dataclass
class SamplingConfig:
    providers: Sequence[tuple[EnergyProvider, Sequence[DomainId]]]
    interval_ns: int = DEFAULT_INTERVAL_NS
    buffer_capacity: int = MIN_BUFFER_CAPACITY

    def __post_init__(self):
        if self.interval_ns <= 0:
            raise ValueError("interval_ns must be positive")
        if self.buffer_capacity < 1:
            raise ValueError("buffer_capacity must be at least 1")
        if not any(domains for _, domains in self.providers):
            raise ValueError("at least one domain must be enabled")

    @classmethod
    def for_providers(cls, providers: Sequence[EnergyProvider], **kwargs) -> "SamplingConfig":
        return cls([(p, p.domains) for p in providers], **kwargs)


class SampleBuffer:
    """Fixed-capacity append-only storage for one domain."""

    __slots__ = ("capacity", "ts", "uj", "size", "dropped")

    def __init__(self, capacity: int):
        self.capacity = capacity
        # one extra slot is held back for the stop-time boundary sample
        self.ts = np.zeros(capacity + 1, dtype=np.int64)
        self.uj = np.zeros(capacity + 1, dtype=np.int64)
        self.size = 0
        self.dropped = 0

    def push(self, ts: int, uj: int, reserved: bool = False) -> bool:
        limit = self.capacity + 1 if reserved else self.capacity
        if self.size >= limit:
            self.dropped += 1
            return False
        if self.size and ts <= self.ts[self.size - 1]:
            return False
        self.ts[self.size] = ts
        self.uj[self.size] = uj
        self.size += 1
        return True

    def raw(self) -> list[tuple[int, int]]:
        n = self.size
        return list(zip(self.ts[:n].tolist(), self.uj[:n].tolist()))


class SessionState(str, enum.Enum):
    IDLE = "idle"
    RUNNING = "running"
    STOPPED = "stopped"


@dataclass
class ReadDiagnostic:
    domain: DomainId
    ts: int
    message: str


@dataclass
class SamplingSession:
    config: SamplingConfig
    clock: Callable[[], int] = time.monotonic_ns
    state: SessionState = SessionState.IDLE
    buffers: dict[DomainId, SampleBuffer] = field(default_factory=dict)
    diagnostics: list[ReadDiagnostic] = field(default_factory=list)
    started_at: int | None = None
    stopped_at: int | None = None

    def __post_init__(self):
        self._targets = [(p, d) for p, domains in self.config.providers for d in domains]
        self._thread: threading.Thread | None = None
        self._stop = threading.Event()

    @property
    def domains(self) -> list[DomainId]:
        return [d for _, d in self._targets]

    @property
    def dropped_count(self) -> dict[DomainId, int]:
        return {d: b.dropped for d, b in self.buffers.items()}

    def _sweep(self, reserved: bool = False) -> int:
        ts = self.clock()
        recorded = 0
        for provider, domain in self._targets:
            try:
                value = provider.read_cumulative(domain, ts)
            except (ReadFailure, OSError) as exc:
                self.diagnostics.append(ReadDiagnostic(domain, ts, str(exc)))
                logger.warning("read failed for %s: %s", domain, exc)
                continue
            if self.buffers[domain].push(ts, value, reserved):
                recorded += 1
        return recorded

    def _run(self):
        interval = self.config.interval_ns
        k = 1
        while not self._stop.is_set():
            deadline = self.started_at + k * interval
            now = self.clock()
            if now < deadline:
                self._stop.wait(min((deadline - now) / 1e9, _MAX_SLEEP_S))
                continue
            self._sweep()
            # skip deadlines already missed instead of bursting to catch up
            k = max(k + 1, (self.clock() - self.started_at) // interval + 1)

    def start(self) -> "SamplingSession":
        if self.state is not SessionState.IDLE:
            raise AlreadyRunning(f"session is {self.state.value}")
        now = self.clock()
        for provider, domain in self._targets:
            try:
                provider.read_cumulative(domain, now)
            except Exception as exc:
                raise ProviderProbeFailed(f"test read of {domain} failed: {exc}") from exc
        self.buffers = {d: SampleBuffer(self.config.buffer_capacity) for _, d in self._targets}
        self.started_at = self.clock()
        ts = self.started_at
        for provider, domain in self._targets:
            self.buffers[domain].push(ts, provider.read_cumulative(domain, ts))
        self.state = SessionState.RUNNING
        self._stop.clear()
        self._thread = threading.Thread(target=self._run, name="codegreen-sampler", daemon=True)
        self._thread.start()
        return self

    def poll_once(self) -> int:
        """Run one sweep on the calling thread.  Returns samples recorded."""
        if self.state is not SessionState.RUNNING:
            raise NotRunning(f"session is {self.state.value}")
        return self._sweep()

    def stop(self) -> dict[DomainId, EnergySeries]:
        if self.state is not SessionState.RUNNING:
            raise NotRunning(f"session is {self.state.value}")
        self._stop.set()
        if self._thread is not None:
            self._thread.join()
            self._thread = None
        last = max((b.ts[b.size - 1] for b in self.buffers.values() if b.size), default=0)
        while self.clock() <= last:
            pass
        self._sweep(reserved=True)
        self.stopped_at = self.clock()
        self.state = SessionState.STOPPED
        return self.series()

    def series(self) -> dict[DomainId, EnergySeries]:
        out = {}
        for provider, domain in self._targets:
            raw = self.buffers[domain].raw()
            wrap = provider.descriptor.wrap_range(domain)
            if wrap:
                out[domain] = unwrap_counter(raw, wrap, domain)
            else:
                out[domain] = EnergySeries(domain, tuple(EnergySample(t, e) for t, e in raw))
        return out


def start_session(config: SamplingConfig, clock: Callable[[], int] = time.monotonic_ns) -> SamplingSession:
    return SamplingSession(config, clock=clock).start()


def stop_session(session: SamplingSession) -> dict[DomainId, EnergySeries]:
    return session.stop()


def poll_once(session: SamplingSession) -> int:
    return session.poll_once()
