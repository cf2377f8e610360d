"""Energy providers: a uniform reading interface over hardware and fakes.

Three drivers ship here:

* ``rapl_sysfs`` reads the Linux powercap tree (``energy_uj`` files).
* ``synthetic`` answers any timestamp from a closed-form power waveform, so
  tests have an exact oracle.
* ``gpu_stub`` is a fixed-power placeholder honoring the interface; a real
  NVML driver would subclass :class:`EnergyProvider` the same way.
"""

from __future__ import annotations

import enum
import logging
import os
import random
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Mapping

from .errors import CodeGreenError
from .telemetry import DomainId, DomainKind

logger = logging.getLogger(__name__)

POWERCAP_ROOT_ENV = "CODEGREEN_POWERCAP_ROOT"
DEFAULT_POWERCAP_ROOT = "/sys/class/powercap"
RAPL_UPDATE_INTERVAL_NS = 1_000_000
ALIASING_FACTOR = 10

_RAPL_NAMES = {
    "package": DomainKind.PACKAGE,
    "core": DomainKind.CORE,
    "dram": DomainKind.DRAM,
}


class ProviderError(CodeGreenError):
    pass


class UnknownDomain(ProviderError, KeyError):
    pass


class ReadFailure(ProviderError, OSError):
    pass


class Unsupported(ProviderError):
    pass


class ProviderKind(str, enum.Enum):
    RAPL_SYSFS = "rapl_sysfs"
    SYNTHETIC = "synthetic"
    GPU_STUB = "gpu_stub"


@dataclass(frozen=True)
class ProviderDescriptor:
    id: str
    kind: ProviderKind
    domains: tuple[DomainId, ...]
    native_update_interval_ns: int
    wrap_ranges_uj: Mapping[DomainId, int | None] = field(default_factory=dict, hash=False)
    requires_privilege: bool = False
    # sysfs directory per domain; empty for non-file providers
    paths: Mapping[DomainId, str] = field(default_factory=dict, hash=False)

    def __post_init__(self):
        if self.native_update_interval_ns <= 0:
            raise ValueError("native_update_interval_ns must be positive")
        if not self.domains:
            raise ValueError(f"provider {self.id!r} has no domains")

    def wrap_range(self, domain: DomainId) -> int | None:
        return self.wrap_ranges_uj.get(domain)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "kind": self.kind.value,
            "domains": [str(d) for d in self.domains],
            "native_update_interval_ns": self.native_update_interval_ns,
            "wrap_ranges_uj": {str(d): w for d, w in self.wrap_ranges_uj.items()},
            "requires_privilege": self.requires_privilege,
            "paths": {str(d): p for d, p in self.paths.items()},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ProviderDescriptor":
        return cls(
            id=data["id"],
            kind=ProviderKind(data["kind"]),
            domains=tuple(DomainId.parse(d) for d in data["domains"]),
            native_update_interval_ns=int(data["native_update_interval_ns"]),
            wrap_ranges_uj={DomainId.parse(k): v for k, v in data.get("wrap_ranges_uj", {}).items()},
            requires_privilege=bool(data.get("requires_privilege", False)),
            paths={DomainId.parse(k): v for k, v in data.get("paths", {}).items()},
        )


class ProbeStatus(str, enum.Enum):
    NOT_PRESENT = "not_present"
    PERMISSION_DENIED = "permission_denied"
    UNREADABLE = "unreadable"


@dataclass(frozen=True)
class ProbeDiagnostic:
    provider: str
    status: ProbeStatus
    path: str
    message: str = ""

    def __str__(self):
        return f"{self.provider}: {self.status.value} ({self.path}) {self.message}".rstrip()


class EnergyProvider(ABC):
    """A source of cumulative energy readings for a fixed set of domains."""

    def __init__(self, descriptor: ProviderDescriptor):
        self.descriptor = descriptor

    @property
    def domains(self) -> tuple[DomainId, ...]:
        return self.descriptor.domains

    def _check(self, domain: DomainId):
        if domain not in self.descriptor.domains:
            raise UnknownDomain(f"{domain} is not served by provider {self.descriptor.id!r}")

    @abstractmethod
    def read_cumulative(self, domain: DomainId, at: int) -> int:
        """Raw cumulative microjoules for ``domain`` at monotonic time ``at``."""


# -- synthetic ---------------------------------------------------------------

class WaveShape(str, enum.Enum):
    CONSTANT = "constant"
    RAMP = "ramp"
    SQUARE = "square"
    BURST = "burst"


@dataclass(frozen=True)
class SyntheticWaveform:
    """Deterministic power signal with an exact cumulative integral.

    ``constant``: base.  ``ramp``: sawtooth rising from base to
    base + amplitude over each period.  ``square``: base + amplitude for the
    first half of each period, base for the second half.  ``burst``: base,
    plus one pulse of base + amplitude lasting a quarter period at a
    seeded pseudo-random offset within each period.
    """

    shape: WaveShape = WaveShape.CONSTANT
    base_watts: float = 10.0
    amplitude_watts: float = 0.0
    period_ns: int = 1_000_000
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "shape", WaveShape(self.shape))
        if self.base_watts < 0 or self.amplitude_watts < 0:
            raise ValueError("waveform powers must be non-negative")
        if self.shape is not WaveShape.CONSTANT and self.period_ns <= 0:
            raise ValueError("period_ns must be positive")

    def power(self, t: float) -> float:
        """Instantaneous watts at ``t`` ns (used by oracles and plots)."""
        base, amp, p = self.base_watts, self.amplitude_watts, self.period_ns
        if self.shape is WaveShape.CONSTANT:
            return base
        k, phase = divmod(t, p)
        if self.shape is WaveShape.RAMP:
            return base + amp * phase / p
        if self.shape is WaveShape.SQUARE:
            return base + amp if 2 * phase < p else base
        start = self._burst_offset(int(k))
        return base + amp if start <= phase < start + p / 4 else base

    def _burst_offset(self, k: int) -> Fraction:
        # max offset 3p/4 keeps the pulse inside its period
        rng = random.Random((self.seed << 40) ^ k)
        return Fraction(rng.randrange(0, 3 * self.period_ns // 4 + 1))

    def energy_uj(self, t: int) -> Fraction:
        """Exact integral of power from 0 to ``t`` ns, in microjoules."""
        base = Fraction(self.base_watts)
        amp = Fraction(self.amplitude_watts)
        if self.shape is WaveShape.CONSTANT or amp == 0:
            return base * t / 1000
        p = self.period_ns
        k, phase = divmod(int(t), p)
        if self.shape is WaveShape.RAMP:
            per_period = (base + amp / 2) * p
            partial = base * phase + amp * Fraction(phase * phase, 2 * p)
        elif self.shape is WaveShape.SQUARE:
            half = Fraction(p, 2)
            per_period = base * p + amp * half
            partial = base * phase + amp * min(Fraction(phase), half)
        else:
            width = Fraction(p, 4)
            start = self._burst_offset(k)
            per_period = base * p + amp * width
            on = min(max(Fraction(phase) - start, Fraction(0)), width)
            partial = base * phase + amp * on
        return (k * per_period + partial) / 1000


class SyntheticProvider(EnergyProvider):
    def __init__(self, waveform: SyntheticWaveform | None = None, epoch_ns: int = 0,
                 provider_id: str = "synthetic"):
        domain = DomainId(provider_id, DomainKind.SYNTHETIC)
        super().__init__(ProviderDescriptor(
            id=provider_id, kind=ProviderKind.SYNTHETIC, domains=(domain,),
            native_update_interval_ns=RAPL_UPDATE_INTERVAL_NS,
            wrap_ranges_uj={domain: None},
        ))
        self.waveform = waveform or SyntheticWaveform()
        self.epoch_ns = epoch_ns

    def read_cumulative(self, domain: DomainId, at: int) -> int:
        self._check(domain)
        t = max(int(at) - self.epoch_ns, 0)
        # floor keeps readings non-decreasing in t
        return int(self.waveform.energy_uj(t))


# -- GPU stub ----------------------------------------------------------------

GPU_STUB_WATTS = 50


class GpuStubProvider(EnergyProvider):
    """Constant-power placeholder for a GPU driver.  Disabled by default."""

    def __init__(self, enabled: bool = False, watts: int = GPU_STUB_WATTS):
        domain = DomainId("gpu_stub", DomainKind.GPU_TOTAL)
        super().__init__(ProviderDescriptor(
            id="gpu_stub", kind=ProviderKind.GPU_STUB, domains=(domain,),
            native_update_interval_ns=10_000_000, wrap_ranges_uj={domain: None},
        ))
        self.enabled = enabled
        self.watts = watts

    def read_cumulative(self, domain: DomainId, at: int) -> int:
        self._check(domain)
        if not self.enabled:
            raise Unsupported("gpu_stub provider is disabled")
        return self.watts * max(int(at), 0) // 1000


# -- RAPL via powercap sysfs ---------------------------------------------------

def powercap_root(override: str | os.PathLike | None = None) -> Path:
    return Path(override or os.environ.get(POWERCAP_ROOT_ENV) or DEFAULT_POWERCAP_ROOT)


def _read_sysfs(path: Path) -> str:
    with open(path, "r") as fh:
        return fh.read()


def _parse_uj(text: str, path) -> int:
    try:
        return int(text.strip())
    except ValueError:
        raise ReadFailure(f"cannot parse {path}: {text!r}") from None


class RaplSysfsProvider(EnergyProvider):
    def read_cumulative(self, domain: DomainId, at: int) -> int:
        self._check(domain)
        path = Path(self.descriptor.paths[domain]) / "energy_uj"
        try:
            text = _read_sysfs(path)
        except OSError as exc:
            raise ReadFailure(f"cannot read {path}: {exc}") from exc
        return _parse_uj(text, path)


def _rapl_kind(name: str) -> DomainKind | None:
    name = name.strip()
    if name.startswith("package"):
        return DomainKind.PACKAGE
    return _RAPL_NAMES.get(name)


def _zone_dirs(root: Path) -> dict[str, Path]:
    """All ``intel-rapl:N[:M]`` zones, flat or nested, keyed by zone name."""
    zones = {}
    for top in sorted(root.glob("intel-rapl:*")):
        zones.setdefault(top.name, top)
        for sub in sorted(top.glob("intel-rapl:*")):
            zones.setdefault(sub.name, sub)
    return zones


def _discover_rapl(root: Path) -> tuple[list[ProviderDescriptor], list[ProbeDiagnostic]]:
    diags: list[ProbeDiagnostic] = []
    if not root.is_dir():
        return [], [ProbeDiagnostic("rapl_sysfs", ProbeStatus.NOT_PRESENT, str(root))]
    zones = _zone_dirs(root)
    if not zones:
        return [], [ProbeDiagnostic("rapl_sysfs", ProbeStatus.NOT_PRESENT, str(root),
                                    "no intel-rapl zones")]
    # group by socket: intel-rapl:<n>[:<m>]
    sockets: dict[int, list[tuple[DomainKind, Path, int | None]]] = {}
    for zone_name, zone in sorted(zones.items()):
        parts = zone_name.split(":")
        try:
            socket = int(parts[1])
        except (IndexError, ValueError):
            continue
        try:
            kind = _rapl_kind(_read_sysfs(zone / "name"))
        except PermissionError as exc:
            diags.append(ProbeDiagnostic("rapl_sysfs", ProbeStatus.PERMISSION_DENIED,
                                         str(zone / "name"), str(exc)))
            continue
        except OSError as exc:
            diags.append(ProbeDiagnostic("rapl_sysfs", ProbeStatus.UNREADABLE,
                                         str(zone / "name"), str(exc)))
            continue
        if kind is None:
            logger.debug("skipping unsupported RAPL zone %s", zone)
            continue
        energy = zone / "energy_uj"
        try:
            _parse_uj(_read_sysfs(energy), energy)
        except PermissionError as exc:
            diags.append(ProbeDiagnostic("rapl_sysfs", ProbeStatus.PERMISSION_DENIED,
                                         str(energy), str(exc)))
            continue
        except (OSError, ReadFailure) as exc:
            diags.append(ProbeDiagnostic("rapl_sysfs", ProbeStatus.UNREADABLE,
                                         str(energy), str(exc)))
            continue
        try:
            wrap = _parse_uj(_read_sysfs(zone / "max_energy_range_uj"), zone)
        except (OSError, ReadFailure):
            wrap = None
        sockets.setdefault(socket, []).append((kind, zone, wrap))

    descriptors = []
    for socket, entries in sorted(sockets.items()):
        pid = f"rapl{socket}"
        domains, wraps, paths = [], {}, {}
        for kind, zone, wrap in entries:
            d = DomainId(pid, kind)
            if d in wraps:
                logger.debug("duplicate %s zone at %s ignored", kind.value, zone)
                continue
            domains.append(d)
            wraps[d] = wrap
            paths[d] = str(zone)
        descriptors.append(ProviderDescriptor(
            id=pid, kind=ProviderKind.RAPL_SYSFS, domains=tuple(domains),
            native_update_interval_ns=RAPL_UPDATE_INTERVAL_NS,
            wrap_ranges_uj=wraps, requires_privilege=True, paths=paths,
        ))
    return descriptors, diags


@dataclass
class Discovery:
    descriptors: list[ProviderDescriptor]
    diagnostics: list[ProbeDiagnostic]


def discover_providers(powercap: str | os.PathLike | None = None,
                       enable_gpu_stub: bool = False) -> Discovery:
    """Probe the host for energy providers.  Never raises for missing hardware."""
    descriptors, diags = _discover_rapl(powercap_root(powercap))
    descriptors.append(SyntheticProvider().descriptor)
    if enable_gpu_stub:
        descriptors.append(GpuStubProvider(enabled=True).descriptor)
    return Discovery(descriptors, diags)


def open_provider(descriptor: ProviderDescriptor,
                  waveform: SyntheticWaveform | None = None) -> EnergyProvider:
    if descriptor.kind is ProviderKind.RAPL_SYSFS:
        return RaplSysfsProvider(descriptor)
    if descriptor.kind is ProviderKind.SYNTHETIC:
        return SyntheticProvider(waveform, provider_id=descriptor.id)
    if descriptor.kind is ProviderKind.GPU_STUB:
        return GpuStubProvider(enabled=True)
    raise Unsupported(f"no driver for provider kind {descriptor.kind}")


def read_cumulative(provider: EnergyProvider, domain: DomainId, at: int) -> int:
    return provider.read_cumulative(domain, at)


# -- sampling adequacy ---------------------------------------------------------

class Adequacy(str, enum.Enum):
    OK = "ok"
    OVERSAMPLING = "oversampling"
    ALIASING_RISK = "aliasing_risk"


def check_sampling_adequacy(descriptor: ProviderDescriptor,
                            requested_interval_ns: int) -> tuple[Adequacy, str]:
    """Compare a polling interval against the sensor's own update rate.

    The sensor cannot resolve content above half its update rate, so that
    is the highest frequency worth reconstructing.  Polling faster than the
    sensor updates just repeats values; polling more than
    ``ALIASING_FACTOR`` times slower than it updates is flagged as an
    aliasing risk for bursty workloads.
    """
    if requested_interval_ns <= 0:
        raise ValueError("requested interval must be positive")
    native = descriptor.native_update_interval_ns
    fs = 1e9 / requested_interval_ns
    fmax = 1e9 / (2 * native)
    if requested_interval_ns < native:
        return Adequacy.OVERSAMPLING, (
            f"{descriptor.id}: interval {requested_interval_ns} ns is below the sensor "
            f"update interval {native} ns; consecutive reads will repeat")
    if requested_interval_ns > ALIASING_FACTOR * native:
        return Adequacy.ALIASING_RISK, (
            f"{descriptor.id}: sampling at {fs:.3g} Hz cannot reconstruct power content up "
            f"to {fmax:.3g} Hz (needs > {2 * fmax:.3g} Hz); short bursts will alias")
    return Adequacy.OK, f"{descriptor.id}: sampling at {fs:.3g} Hz is adequate"
