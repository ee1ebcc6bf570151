"""
Scaling with the node count
===========================

Sweeps the dissemination barrier from 2 to 64 nodes on the Quadrics-like
preset, fits the logarithmic latency model to the small sizes and checks
how well it extrapolates.  The chart lands in ``scaling.svg`` in the
current directory.
"""

import io
from pathlib import Path

from nicsim import ExperimentConfig, run_sweep
from nicsim.analytic import builtin_params, fit_constants, predict_latency
from nicsim.harness import csv_text, read_csv
from nicsim.plot import emit_plot

# %%
# Two implementations across powers of two.
ns = [2, 4, 8, 16, 32, 64]
configs = [
    ExperimentConfig(platform="quadrics-elan3", mode=mode, n=n, warmup=20, iterations=200)
    for mode in ("host", "nic-collective")
    for n in ns
]
results = run_sweep(configs)
for m in results:
    print(f"{m.config.mode:15s} n={m.config.n:3d} {m.mean_us:7.2f} us")

# %%
# Fit on n <= 8 only, then compare the prediction at the larger sizes.
coll = {m.config.n: m.mean_us for m in results if m.config.mode == "nic-collective"}
fit = fit_constants([(n, coll[n]) for n in (2, 4, 8)], label="fitted")
print("\nfit:", {k: round(v, 3) if isinstance(v, float) else v for k, v in fit.as_dict().items()})
for n in (16, 32, 64):
    pred = predict_latency(fit.params, n)
    print(f"n={n:3d} simulated {coll[n]:6.2f}  predicted {pred:6.2f}  ({100 * (pred - coll[n]) / coll[n]:+.1f}%)")

# %%
# The published constants for this platform describe measured hardware,
# not this simulator, so expect an offset rather than a match.
pub = builtin_params("quadrics-elan3")
print("\npublished model at n=64:", round(predict_latency(pub, 64), 2), "us")

# %%
# Render through the same path the CLI uses: CSV text, then SVG.
rows = read_csv(io.StringIO(csv_text(results)))
Path("scaling.svg").write_text(emit_plot(rows, model=fit.params, title="quadrics-elan3, dissemination"))
print("wrote scaling.svg")
