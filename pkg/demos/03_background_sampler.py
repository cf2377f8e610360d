"""Running the background sampler against a synthetic provider."""

# %%
import time

from codegreen.providers import SyntheticProvider, SyntheticWaveform
from codegreen.sampler import SamplingConfig, start_session, stop_session

MS = 1_000_000

prov = SyntheticProvider(SyntheticWaveform(base_watts=10.0), epoch_ns=time.monotonic_ns())
session = start_session(SamplingConfig.for_providers([prov], interval_ns=10 * MS))
time.sleep(0.25)
series = stop_session(session)
print("dropped:", session.dropped_count)

# %%
for dom, s in series.items():
    gaps = [b.ts - a.ts for a, b in zip(s.samples, s.samples[1:])]
    span = (s.samples[-1].ts - s.samples[0].ts) / 1e9
    print(f"{dom}: {len(s.samples)} samples, median gap {sorted(gaps)[len(gaps) // 2] / MS:.2f} ms")
    print(f"  {s.total_uj()} uJ over {span:.3f} s = {s.total_uj() / 1e6 / span:.2f} W")
