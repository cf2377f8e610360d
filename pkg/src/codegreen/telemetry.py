"""Cumulative-energy time series and the arithmetic that runs on them.

Units are fixed throughout the package: energies are integer microjoules and
timestamps are integer nanoseconds on a monotonic clock.  Python integers
are unbounded, so products such as ``delta_uj * delta_ns`` never overflow.
"""

from __future__ import annotations

import enum
import math
from bisect import bisect_right
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, NamedTuple, Sequence

from .errors import CodeGreenError

NS_PER_S = 1_000_000_000
UJ_PER_J = 1_000_000


class TelemetryError(CodeGreenError, ValueError):
    pass


class SeriesTooShort(TelemetryError):
    pass


class NotUnwrapped(TelemetryError):
    pass


class InvertedInterval(TelemetryError):
    pass


class ZeroWrapRange(TelemetryError):
    pass


class NonMonotonicTimestamps(TelemetryError):
    pass


class NegativePower(TelemetryError):
    pass


class TooFewPoints(TelemetryError):
    pass


class DomainKind(str, enum.Enum):
    PACKAGE = "package"
    CORE = "core"
    DRAM = "dram"
    GPU_TOTAL = "gpu_total"
    SYNTHETIC = "synthetic"


@dataclass(frozen=True, order=True)
class DomainId:
    provider: str
    domain: DomainKind

    def __post_init__(self):
        object.__setattr__(self, "domain", DomainKind(self.domain))

    def __str__(self):
        return f"{self.provider}/{self.domain.value}"

    @classmethod
    def parse(cls, text: str) -> "DomainId":
        provider, _, domain = text.rpartition("/")
        if not provider:
            raise ValueError(f"not a domain id: {text!r}")
        return cls(provider, DomainKind(domain))


class EnergySample(NamedTuple):
    ts: int
    cumulative_uj: int


class Reading(NamedTuple):
    """An energy value plus whether it came from outside the sampled window."""

    energy_uj: int
    extrapolated: bool


@dataclass(frozen=True)
class EnergySeries:
    """Timestamped cumulative-energy readings for one domain.

    Timestamps must be strictly increasing; a repeated timestamp would make
    the interpolation slope undefined.  Cumulative values may still contain
    raw counter wraps, in which case :attr:`is_monotone` is false and the
    interpolation helpers refuse the series until it has been unwrapped.
    """

    domain: DomainId
    samples: tuple[EnergySample, ...]
    wrap_range_uj: int | None = None
    _ts: tuple[int, ...] = field(init=False, repr=False, compare=False)
    _uj: tuple[int, ...] = field(init=False, repr=False, compare=False)
    is_monotone: bool = field(init=False, compare=False)

    def __post_init__(self):
        samples = tuple(EnergySample(int(t), int(e)) for t, e in self.samples)
        ts = tuple(s.ts for s in samples)
        uj = tuple(s.cumulative_uj for s in samples)
        for a, b in zip(ts, ts[1:]):
            if b <= a:
                raise NonMonotonicTimestamps(
                    f"{self.domain}: timestamp {b} does not follow {a}")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "_ts", ts)
        object.__setattr__(self, "_uj", uj)
        object.__setattr__(self, "is_monotone",
                           all(b >= a for a, b in zip(uj, uj[1:])))

    def __len__(self):
        return len(self.samples)

    @property
    def timestamps(self) -> tuple[int, ...]:
        return self._ts

    @property
    def energies(self) -> tuple[int, ...]:
        return self._uj

    @property
    def t_first(self) -> int:
        return self._ts[0]

    @property
    def t_last(self) -> int:
        return self._ts[-1]

    def total_uj(self) -> int:
        """Last minus first cumulative value."""
        if not self.samples:
            return 0
        return self._uj[-1] - self._uj[0]

    def max_power_w(self) -> float:
        """Largest average power over any single sampling step."""
        best = 0.0
        for (t0, e0), (t1, e1) in zip(self.samples, self.samples[1:]):
            best = max(best, (e1 - e0) * 1e3 / (t1 - t0))
        return best


def _round_div(num: int, den: int) -> int:
    """Round-half-up integer division for den > 0."""
    return (2 * num + den) // (2 * den)


def interpolate_energy(series: EnergySeries, t_c: int) -> Reading:
    """Cumulative energy at ``t_c`` by linear interpolation between samples.

    Queries outside the sampled window clamp to the nearest endpoint and are
    flagged as extrapolated.
    """
    if len(series) < 2:
        raise SeriesTooShort(f"{series.domain}: need at least 2 samples, have {len(series)}")
    if not series.is_monotone:
        raise NotUnwrapped(f"{series.domain}: cumulative energy decreases; unwrap first")
    ts, uj = series.timestamps, series.energies
    t_c = int(t_c)
    if t_c < ts[0]:
        return Reading(uj[0], True)
    if t_c > ts[-1]:
        return Reading(uj[-1], True)
    i = bisect_right(ts, t_c) - 1
    if ts[i] == t_c:
        return Reading(uj[i], False)
    dt = ts[i + 1] - ts[i]
    de = uj[i + 1] - uj[i]
    return Reading(uj[i] + _round_div(de * (t_c - ts[i]), dt), False)


def energy_between(series: EnergySeries, t_begin: int, t_end: int) -> Reading:
    if t_begin > t_end:
        raise InvertedInterval(f"t_begin {t_begin} > t_end {t_end}")
    a = interpolate_energy(series, t_begin)
    b = interpolate_energy(series, t_end)
    return Reading(b.energy_uj - a.energy_uj, a.extrapolated or b.extrapolated)


def unwrap_counter(raw: Iterable[tuple[int, int]], wrap_range_uj: int,
                   domain: DomainId | None = None) -> EnergySeries:
    """Undo counter wraparound in a raw reading sequence.

    Each decrease between consecutive readings is taken to be exactly one
    wrap.  Two wraps inside a single sampling step cannot be detected.
    """
    if not wrap_range_uj or wrap_range_uj <= 0:
        raise ZeroWrapRange("wrap range must be positive")
    raw = [(int(t), int(e)) for t, e in raw]
    out = []
    offset = 0
    prev_t = prev_e = None
    for t, e in raw:
        if prev_t is not None:
            if t <= prev_t:
                raise NonMonotonicTimestamps(f"timestamp {t} does not follow {prev_t}")
            if e < prev_e:
                offset += wrap_range_uj
        out.append(EnergySample(t, e + offset))
        prev_t, prev_e = t, e
    if domain is None:
        domain = DomainId("unknown", DomainKind.SYNTHETIC)
    return EnergySeries(domain, tuple(out), wrap_range_uj)


def cumulative_from_power(power_trace: Sequence[tuple[int, float]],
                          domain: DomainId | None = None) -> EnergySeries:
    """Integrate a (timestamp ns, watts) trace with the trapezoid rule.

    Accumulation is exact (rational) and each cumulative value is rounded to
    the nearest microjoule on its own, so rounding never accumulates.
    """
    if len(power_trace) < 2:
        raise TooFewPoints("need at least 2 trace points")
    total = Fraction(0)
    out = []
    prev = None
    for t, w in power_trace:
        t = int(t)
        if not math.isfinite(w) or w < 0:
            raise NegativePower(f"power {w} W at t={t} is not a non-negative number")
        w = Fraction(w)
        if prev is not None:
            t0, w0 = prev
            if t <= t0:
                raise NonMonotonicTimestamps(f"timestamp {t} does not follow {t0}")
            # W * ns = 1e-3 uJ
            total += (w0 + w) * (t - t0) / 2000
        out.append(EnergySample(t, round(total)))
        prev = (t, w)
    if domain is None:
        domain = DomainId("trace", DomainKind.SYNTHETIC)
    return EnergySeries(domain, tuple(out))
