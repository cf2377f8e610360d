"""Attribute energy to regions, model instrumentation overhead, build reports."""

from __future__ import annotations

import json
import logging
import math
import statistics
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from importlib import resources
from typing import Callable, Mapping, Sequence

import numpy as np

from .checkpoint import CheckpointKey, Region
from .errors import CodeGreenError
from .telemetry import DomainId, DomainKind, EnergySeries, SeriesTooShort, energy_between

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
MIN_CALIBRATION_SAMPLES = 10
MIN_CALIBRATION_R2 = 0.95

# core (PP0) is a subset of package, so it is excluded from totals
CPU_KINDS = (DomainKind.PACKAGE, DomainKind.DRAM)
_TOTAL_KINDS = (DomainKind.PACKAGE, DomainKind.DRAM, DomainKind.GPU_TOTAL, DomainKind.SYNTHETIC)


class CorrelatorError(CodeGreenError):
    pass


class CalibrationError(CorrelatorError, ValueError):
    pass


class FixtureMissing(CorrelatorError):
    pass


class NonLinearCalibration(CorrelatorError):
    def __init__(self, message: str, model: "OverheadModel"):
        super().__init__(message)
        self.model = model


class ZeroNativeTime(CorrelatorError, ValueError):
    pass


def total_energy(energies: Mapping[DomainId, int]) -> int:
    return sum(e for d, e in energies.items() if d.domain in _TOTAL_KINDS)


def cpu_total(energies: Mapping[DomainId, int]) -> int:
    return sum(e for d, e in energies.items() if d.domain in CPU_KINDS)


@dataclass
class AttributedRegion:
    region: Region
    energy_uj: dict[DomainId, int]
    duration_ns: int
    avg_power_w: float
    extrapolated: bool = False
    zero_duration: bool = False
    children: list["AttributedRegion"] = field(default_factory=list)

    @property
    def key(self) -> CheckpointKey:
        return self.region.key

    @property
    def total_uj(self) -> int:
        return total_energy(self.energy_uj)

    def walk(self):
        yield self
        for child in self.children:
            yield from child.walk()


def attribute(regions: Sequence[Region], series: Mapping[DomainId, EnergySeries]) -> list[AttributedRegion]:
    """Energy per region and domain, arranged as a forest mirroring ``parent``."""
    for d, s in series.items():
        if len(s) < 2:
            raise SeriesTooShort(f"{d}: need at least 2 samples")
    nodes: dict[CheckpointKey, AttributedRegion] = {}
    for r in regions:
        energies = {}
        extrapolated = False
        for d, s in series.items():
            reading = energy_between(s, r.t_begin, r.t_end)
            energies[d] = reading.energy_uj
            extrapolated |= reading.extrapolated
        dur = r.t_end - r.t_begin
        total = total_energy(energies)
        power = total * 1e3 / dur if dur > 0 else 0.0
        nodes[r.key] = AttributedRegion(r, energies, dur, power, extrapolated, dur == 0)
    roots = []
    for r in regions:
        node = nodes[r.key]
        parent = nodes.get(r.parent) if r.parent is not None else None
        (parent.children if parent is not None else roots).append(node)
    order = lambda n: (n.region.t_begin, str(n.region.key))
    for node in nodes.values():
        node.children.sort(key=order)
    roots.sort(key=order)
    if any(n.extrapolated for n in nodes.values()):
        logger.warning("some regions fall outside the sampled window; energies clamped")
    return roots


# -- overhead model ------------------------------------------------------------

@dataclass
class OverheadModel:
    runtime_id: str
    t_base_ns: float
    t_checkpoint_ns: float
    calibration_samples: int
    calibration_stddev_ns: float
    r_squared: float = 1.0
    t_native_ns: float | None = None
    rejected: bool = False

    def predict_ns(self, n_checkpoints: int, t_native_ns: float | None = None) -> float:
        """Expected instrumented elapsed time for ``n_checkpoints`` events."""
        native = self.t_native_ns if t_native_ns is None else t_native_ns
        return (native or 0.0) + self.t_base_ns + n_checkpoints * self.t_checkpoint_ns

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "OverheadModel":
        return cls(**data)


def fit_line(x: Sequence[float], y: Sequence[float]) -> tuple[float, float, float, float]:
    """Least-squares ``y = a + b x``; returns (a, b, r_squared, residual stddev)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    b, a = np.polyfit(x, y, 1)
    resid = y - (a + b * x)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    ss_res = float(np.sum(resid ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    dof = max(len(x) - 2, 1)
    return float(a), float(b), r2, math.sqrt(ss_res / dof)


def calibrate(runtime_id: str, checkpoint_counts: Sequence[int], repetitions: int,
              runner: Callable[[int], float] | None = None,
              native_runner: Callable[[], float] | None = None) -> OverheadModel:
    """Fit instrumented elapsed time as ``t_base + N * t_checkpoint``.

    ``runner(N)`` returns the elapsed nanoseconds of one run of the runtime's
    no-op program emitting N checkpoints.  When ``native_runner`` is given,
    the median native (uninstrumented) time is subtracted first so that
    ``t_base`` is the instrumentation's own fixed cost.  The fit is over the
    per-count medians.  Duplicate counts share one bucket.
    """
    counts = [int(c) for c in checkpoint_counts]
    if len(set(counts)) < 2:
        raise CalibrationError("need at least 2 distinct checkpoint counts for a line fit")
    if repetitions < 1 or len(counts) * repetitions < MIN_CALIBRATION_SAMPLES:
        raise CalibrationError(
            f"need at least {MIN_CALIBRATION_SAMPLES} calibration runs, "
            f"got {len(counts)} counts x {repetitions} repetitions")
    if runner is None:
        from .instrument.calibration import fixture_runners
        runner, native_runner = fixture_runners(runtime_id)
    # sweep all counts once per repetition so a transient slowdown hits every
    # count alike instead of tilting the slope
    native_times, elapsed = [], {n: [] for n in counts}
    for _ in range(repetitions):
        if native_runner is not None:
            native_times.append(native_runner())
        for n in counts:
            elapsed[n].append(runner(n))
    native = statistics.median(native_times) if native_times else None
    medians = [statistics.median(elapsed[n]) - (native or 0.0) for n in counts]
    a, b, r2, sd = fit_line(counts, medians)
    if a < 0 or b < 0:
        logger.warning("calibration produced negative cost (base=%.0f ns, per=%.1f ns); clamping", a, b)
    model = OverheadModel(runtime_id, max(a, 0.0), max(b, 0.0), len(counts) * repetitions,
                          sd, r2, native)
    if r2 < MIN_CALIBRATION_R2:
        model.rejected = True
        raise NonLinearCalibration(f"calibration fit R^2 = {r2:.4f} < {MIN_CALIBRATION_R2}", model)
    return model


def raw_overhead(t_inst_ns: float, t_native_ns: float) -> float:
    if t_native_ns <= 0:
        raise ZeroNativeTime("native time must be positive")
    return (t_inst_ns - t_native_ns) / t_native_ns * 100.0


def normalize_overhead(t_inst_ns: float, t_native_ns: float, n_checkpoints: int,
                       model: OverheadModel) -> float:
    """Overhead left after removing fixed and per-checkpoint instrumentation cost, in percent.

    May be negative when the calibrated costs overshoot this run.
    """
    if t_native_ns <= 0:
        raise ZeroNativeTime("native time must be positive")
    residual = t_inst_ns - t_native_ns - model.t_base_ns - n_checkpoints * model.t_checkpoint_ns
    return residual / t_native_ns * 100.0


# -- report --------------------------------------------------------------------

def _energies_json(energies: Mapping[DomainId, int]) -> dict:
    out = {str(d): e for d, e in sorted(energies.items())}
    out["cpu_total"] = cpu_total(energies)
    return out


def _region_json(node: AttributedRegion) -> dict:
    r = node.region
    return {
        "key": str(r.key),
        "function": r.key.function_name,
        "t_begin_ns": r.t_begin,
        "t_end_ns": r.t_end,
        "duration_ns": node.duration_ns,
        "domain_energies_uj": _energies_json(node.energy_uj),
        "total_energy_uj": node.total_uj,
        "avg_power_w": node.avg_power_w,
        "extrapolated": node.extrapolated,
        "zero_duration": node.zero_duration,
        "children": [_region_json(c) for c in node.children],
    }


def aggregate(forest: Sequence[AttributedRegion]) -> list[dict]:
    """Per-function rollups across invocations and threads."""
    groups: dict[str, list[AttributedRegion]] = defaultdict(list)
    for root in forest:
        for node in root.walk():
            groups[node.key.function_name].append(node)
    out = []
    for name in sorted(groups):
        nodes = groups[name]
        totals = [n.total_uj for n in nodes]
        per_domain: dict[DomainId, int] = defaultdict(int)
        for n in nodes:
            for d, e in n.energy_uj.items():
                per_domain[d] += e
        out.append({
            "function": name,
            "invocations": len(nodes),
            "threads": len({n.key.thread_id for n in nodes}),
            "total_energy_uj": sum(totals),
            "domain_energies_uj": _energies_json(per_domain),
            "min_energy_uj": min(totals),
            "mean_energy_uj": sum(totals) / len(totals),
            "max_energy_uj": max(totals),
            "total_duration_ns": sum(n.duration_ns for n in nodes),
        })
    return out


def overhead_section(model: OverheadModel | None, n_checkpoints: int,
                     t_inst_ns: float | None = None, t_native_ns: float | None = None) -> dict:
    section = {
        "raw_pct": None,
        "normalized_pct": None,
        "t_base_ns": model.t_base_ns if model else None,
        "t_checkpoint_ns": model.t_checkpoint_ns if model else None,
        "n_checkpoints": n_checkpoints,
        "t_inst_ns": t_inst_ns,
        "t_native_ns": t_native_ns,
        "model_rejected": bool(model and model.rejected),
    }
    if t_inst_ns is not None and t_native_ns:
        section["raw_pct"] = raw_overhead(t_inst_ns, t_native_ns)
        if model is not None:
            norm = normalize_overhead(t_inst_ns, t_native_ns, n_checkpoints, model)
            section["normalized_pct"] = norm
            if norm < 0:
                section["note"] = "negative: calibrated costs exceed the observed overhead"
    return section


def build_report(forest: Sequence[AttributedRegion], series: Mapping[DomainId, EnergySeries],
                 model: OverheadModel | None = None, metadata: Mapping | None = None,
                 *, run_id: str = "", n_checkpoints: int = 0, t_inst_ns: float | None = None,
                 t_native_ns: float | None = None, include_series: bool = False,
                 per_invocation: bool = True) -> dict:
    """Assemble the JSON-ready report.  Key order is fixed."""
    totals = {str(d): s.total_uj() for d, s in sorted(series.items())}
    totals["cpu_total"] = cpu_total({d: s.total_uj() for d, s in series.items()})
    report = {
        "schema_version": SCHEMA_VERSION,
        "run_id": run_id,
        "manifest": dict(metadata or {}),
        "totals": totals,
        "overhead": overhead_section(model, n_checkpoints, t_inst_ns, t_native_ns),
        "regions": [_region_json(n) for n in forest] if per_invocation else [],
        "aggregates": aggregate(forest),
    }
    if include_series:
        report["series"] = {
            str(d): {"wrap_range_uj": s.wrap_range_uj,
                     "samples": [[t, e] for t, e in s.samples]}
            for d, s in sorted(series.items())
        }
    return report


def report_schema() -> dict:
    text = resources.files("codegreen").joinpath("report.schema.json").read_text()
    return json.loads(text)


def validate_report(report: dict):
    """Raise ``jsonschema.ValidationError`` if ``report`` breaks the schema."""
    import jsonschema
    jsonschema.validate(report, report_schema())


def dump_report(report: dict, indent: int | None = 2) -> str:
    return json.dumps(report, indent=indent)


def load_report(text: str) -> dict:
    return json.loads(text)
