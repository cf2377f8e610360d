"""Inject checkpoints into a small program, run it, and rebuild the call tree."""

# %%
import os
import subprocess
import sys
import tempfile
from pathlib import Path

from codegreen.checkpoint import checkpoint_logs, pair_regions, parse_checkpoint_log
from codegreen.instrument import GranularityConfig, LoopMode, analyze_source, instrument_file

SOURCE = '''\
def fib(n):
    return n if n < 2 else fib(n - 1) + fib(n - 2)


def main():
    for k in range(3):
        fib(k + 2)


main()
'''

work = Path(tempfile.mkdtemp(prefix="cg-demo-"))
src = work / "prog.py"
src.write_text(SOURCE)
cfg = GranularityConfig.uniform({"function", "loop"}, loop_mode=LoopMode.PER_ITERATION)

# %% What would be instrumented
for t in analyze_source(src, "python", cfg):
    print(f"{t.kind:<9} {t.name:<14} bytes {t.node_range}")

# %% Instrument and run with a checkpoint directory
shadow, plan = instrument_file(src, work / "out", cfg)
ckpt = work / "ckpt"
ckpt.mkdir()
env = dict(os.environ, CODEGREEN_CHECKPOINT_DIR=str(ckpt))
subprocess.run([sys.executable, str(shadow)], env=env, check=True)

events, diags = parse_checkpoint_log(checkpoint_logs(ckpt))
regions, pdiags = pair_regions(events)
print(f"{len(events)} events, {len(regions)} regions, diagnostics: {diags + pdiags}")

# %% The rebuilt tree
for r in sorted(regions, key=lambda r: r.t_begin):
    print("  " * r.depth + f"{r.key}  {(r.t_end - r.t_begin) / 1000:.1f} us")
