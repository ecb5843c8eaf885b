"""Reading and writing Carstens-style .pos sweeps.

A .pos stream is headerless binary: per frame, per channel, seven
little-endian float32 values (x, y, z in mm; azimuth/elevation in degrees;
an rms fit residual; one spare). A text sidecar names the channels and the
sample rate. This demo builds a tiny sweep, round-trips it through bytes,
and shows the coil-axis convention.
"""

import numpy as np

from emarig import (
    EmaSweep,
    PosLayout,
    format_layout,
    orientation_vector,
    parse_layout,
    read_pos,
    write_pos,
)

layout = PosLayout(channels=("TTipC", "TBackC"), rate_hz=200.0)
print("layout sidecar:")
print(format_layout(layout))

# Two channels, three frames. Positions are centimeters in memory.
positions = np.array(
    [
        [[2.2, 0.0, 1.2], [-1.8, 0.0, 1.4]],
        [[2.3, 0.0, 1.1], [-1.8, 0.0, 1.4]],
        [[2.4, 0.1, 1.0], [-1.8, 0.0, 1.4]],
    ]
)
zeros = np.zeros((3, 2))
sweep = EmaSweep(
    rate_hz=layout.rate_hz,
    channels=layout.channels,
    positions=positions,
    phi=zeros,
    theta=zeros + 0.3,
    rms=np.full((3, 2), 0.02, np.float32),
    extra=np.zeros((3, 2), np.float32),
)

data = write_pos(sweep, layout)
print(f"{sweep.n_frames} frames x {len(sweep.channels)} channels -> {len(data)} bytes")
print("first on-disk values (mm/deg):", np.frombuffer(data, "<f4")[:7])

again = read_pos(data, layout)
print("byte round trip exact:", write_pos(again, layout) == data)

print("\ncoil axis convention (azimuth from +x, elevation toward +z):")
for phi, theta in [(0.0, 0.0), (np.pi / 2, 0.0), (0.0, np.pi / 2)]:
    print(f"  phi={phi:5.2f} theta={theta:5.2f} ->", orientation_vector(phi, theta))

print("\nsidecar parsing:", parse_layout(format_layout(layout)) == layout)
