"""
Where the time goes in a barrier
================================

Runs one 8-node dissemination barrier configuration under every barrier
implementation on each platform preset and prints the mean latency and
the speed-up over the host-based version.
"""

from nicsim import ExperimentConfig, compare_modes

# %%
# A short measurement is enough here: without loss or entry skew the
# simulated loop settles after a few dozen barriers.
for platform in ("myrinet-lanai-xp", "myrinet-lanai-9.1", "quadrics-elan3"):
    cfg = ExperimentConfig(platform=platform, n=8, warmup=50, iterations=500)
    cmp = compare_modes(cfg)
    print(f"\n{platform}, n={cfg.n}")
    for mode, m in cmp.measurements.items():
        speedup = cmp.ratios.get(f"host/{mode}")
        extra = f"  x{speedup:.2f} vs host" if speedup else ""
        print(f"  {mode:15s} {m.mean_us:8.2f} us{extra}")

# %%
# Packet counts for a single lossless barrier show where the collective
# protocol saves: no acknowledgements, so half the traffic.
from nicsim import run_experiment  # noqa: E402

for mode in ("host", "nic-pt2pt", "nic-collective"):
    m = run_experiment(ExperimentConfig(platform="myrinet-lanai-xp", mode=mode, n=8, warmup=0, iterations=1))
    print(mode, {k: v for k, v in m.packets.items() if v})
