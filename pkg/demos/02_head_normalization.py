"""Removing head motion with the three reference coils.

The synthetic corpus scripts a known head motion on top of known tongue
trajectories, so we can check the normalization exactly: after aligning
every frame's reference triplet back onto the first frame, the reference
coils freeze and the tongue trajectories equal their head-fixed ground
truth to machine precision.
"""

import numpy as np

from emarig import normalize_head
from emarig.fixture import FixtureSpec, synthetic_motion

data = synthetic_motion(FixtureSpec(n_sweeps=1, frames_per_sweep=500))
sweep = data.sweeps[0]
truth = data.truth_sweeps[0]

ref_idx = [data.layout.channels.index(n) for n in data.roles.reference]
tongue_idx = [data.layout.channels.index(n) for n in data.roles.tongue]

print("before normalization:")
print("  reference-coil std dev:", sweep.positions[:, ref_idx, :].std(axis=0).max())

normalized = normalize_head(sweep, data.roles)

print("after normalization:")
print("  reference-coil std dev:", normalized.positions[:, ref_idx, :].std(axis=0).max())
err = np.abs(normalized.positions[:, tongue_idx, :] - truth.positions[:, tongue_idx, :])
print("  max deviation from ground truth:", err.max(), "cm")

try:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    import tempfile
    from pathlib import Path

    t = np.arange(sweep.n_frames) / sweep.rate_hz
    tip = data.layout.channels.index("TTipC")
    fig, axes = plt.subplots(2, 1, figsize=(8, 6), sharex=True)
    axes[0].plot(t, sweep.positions[:, tip, 2], label="measured")
    axes[0].set_ylabel("tongue tip z (cm)")
    axes[0].legend()
    axes[1].plot(t, normalized.positions[:, tip, 2], label="normalized")
    axes[1].plot(t, truth.positions[:, tip, 2], "--", label="ground truth")
    axes[1].set_xlabel("time (s)")
    axes[1].set_ylabel("tongue tip z (cm)")
    axes[1].legend()
    fig.tight_layout()
    out = Path(tempfile.mkdtemp(prefix="emarig-demo-")) / "head_normalization.png"
    fig.savefig(out, dpi=100)
    print("plot saved to", out)
except ImportError:
    print("(matplotlib not installed; skipping the plot)")
