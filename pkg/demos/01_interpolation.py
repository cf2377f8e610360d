"""Interpolating a sampled energy counter at checkpoint timestamps."""

# %% [markdown]
# A sampler only sees the cumulative counter every few milliseconds; checkpoints
# land in between.  Linear interpolation of the cumulative series recovers the
# energy at any instant exactly when power is constant between samples.

# %%
from fractions import Fraction

from codegreen.providers import SyntheticProvider, SyntheticWaveform, WaveShape
from codegreen.telemetry import EnergySample, EnergySeries, energy_between, interpolate_energy

MS = 1_000_000

prov = SyntheticProvider(SyntheticWaveform(base_watts=12.0))
dom = prov.domains[0]
series = EnergySeries(dom, tuple(EnergySample(t, prov.read_cumulative(dom, t))
                                 for t in range(0, 101 * MS, 10 * MS)))
print(f"{len(series.samples)} samples, total {series.total_uj()} uJ")

# %% A region from 13.7 ms to 58.2 ms at 12 W should cost 12 * 44.5 ms = 534 000 uJ.
r = energy_between(series, 13_700_000, 58_200_000)
print("region energy:", r.energy_uj, "uJ  (closed form 534000)")

# %% [markdown]
# With a varying signal the estimate is only as good as the sampling grid.
# A square wave at 10 + 20 W with a 14 ms period, sampled every 10 ms vs every 1 ms:

# %%
wave = SyntheticWaveform(WaveShape.SQUARE, base_watts=10, amplitude_watts=20, period_ns=14 * MS)
sq = SyntheticProvider(wave)
d = sq.domains[0]
exact = float(wave.energy_uj(52 * MS) - wave.energy_uj(3 * MS))
for step in (10 * MS, MS):
    s = EnergySeries(d, tuple(EnergySample(t, sq.read_cumulative(d, t)) for t in range(0, 81 * MS, step)))
    got = energy_between(s, 3 * MS, 52 * MS).energy_uj
    print(f"step {step // MS:>2} ms: {got} uJ vs exact {exact:.0f} uJ "
          f"({(got - exact) / exact:+.2%})")

# %% Interpolating at a single instant
print(interpolate_energy(series, 42 * MS + 123))
print("exact:", float(Fraction(12) * (42 * MS + 123) / 1000))
