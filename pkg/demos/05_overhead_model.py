"""Calibrating per-checkpoint cost and normalizing a run's overhead."""

# %%
import statistics
import tempfile

from codegreen.correlator import calibrate, normalize_overhead, raw_overhead
from codegreen.instrument.calibration import cleanup, fixture_runners

work = tempfile.mkdtemp(prefix="cg-cal-")
runner, native = fixture_runners("python", work)
model = calibrate("python", [0, 1_000, 10_000, 100_000], 5, runner=runner, native_runner=native)
print(f"native {model.t_native_ns / 1e6:.2f} ms, fixed {model.t_base_ns / 1e6:.2f} ms, "
      f"{model.t_checkpoint_ns:.0f} ns per event, R^2 {model.r_squared:.4f}")

# %% [markdown]
# Raw overhead blames the tool for everything; the normalized figure removes the
# calibrated fixed and per-event costs, leaving only what the model cannot explain.

# %%
n = 50_000
t_inst = statistics.median(runner(n) for _ in range(5))
print(f"N={n}: raw {raw_overhead(t_inst, model.t_native_ns):.0f}%, "
      f"normalized {normalize_overhead(t_inst, model.t_native_ns, n, model):+.1f}%")
cleanup(work)
