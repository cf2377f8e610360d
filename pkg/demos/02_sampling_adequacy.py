"""When is a sampling interval too coarse for the sensor?"""

# %%
from codegreen.providers import (
    SyntheticProvider, SyntheticWaveform, WaveShape, check_sampling_adequacy,
)
from codegreen.telemetry import EnergySample, EnergySeries, energy_between

MS = 1_000_000

desc = SyntheticProvider().descriptor
print("native update interval:", desc.native_update_interval_ns / MS, "ms")
for interval in (MS // 2, MS, 10 * MS, 100 * MS, 15_000 * MS):
    verdict, msg = check_sampling_adequacy(desc, interval)
    print(f"{interval / MS:>8.1f} ms  {verdict.value:<14} {msg}")

# %% [markdown]
# Short bursts are where coarse sampling hurts.  A 4 ms region placed inside a
# bursty signal gets a very different estimate depending on the grid.

# %%
wave = SyntheticWaveform(WaveShape.BURST, base_watts=5, amplitude_watts=60, period_ns=8 * MS, seed=3)
prov = SyntheticProvider(wave)
d = prov.domains[0]
t0, t1 = 41 * MS, 45 * MS
truth = float(wave.energy_uj(t1) - wave.energy_uj(t0))
print(f"true energy in region: {truth:.0f} uJ")
for step in (MS, 5 * MS, 20 * MS):
    s = EnergySeries(d, tuple(EnergySample(t, prov.read_cumulative(d, t)) for t in range(0, 201 * MS, step)))
    est = energy_between(s, t0, t1).energy_uj
    print(f"  every {step // MS:>2} ms -> {est:>7} uJ ({(est - truth) / truth:+.1%})")
