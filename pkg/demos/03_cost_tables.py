"""Size, capacity, and power-performance accounting.

Reproduces the closed-form cost rows for the classic schemes, shows how
capacity explodes exponentially with residual levels while blocked scaling
factors only add linearly, and evaluates the headline reduction ratios.
"""

import numpy as np

from ternres import (
    enumerate_capacity,
    mult_reduction,
    power_perf_gain,
    size_reduction_vs_88,
    table2_stats,
    throughput_gains,
)

n = 64
print(f"cost rows for one vector of n={n} weights (8-bit scaling factors):\n")
print(f"{'scheme':<34} {'size bits':>9} {'capacity':>9} {'#alpha':>7}")
rows = [
    ("plain ternary (1 block)", table2_stats(n, 1, [0])),
    ("blocked ternary (k=4)", table2_stats(n, 4, [0] * 4)),
    ("ternary + 1 residual", table2_stats(n, 1, [1])),
    ("ternary + 2 residuals", table2_stats(n, 1, [2])),
    ("4 blocks, residuals [2,1,0,0]", table2_stats(n, 4, [2, 1, 0, 0])),
]
for name, (size, cap, alphas) in rows:
    print(f"{name:<34} {size:>9.0f} {cap:>9} {alphas:>7}")

print("\ncapacity by brute-force enumeration (generic alphas):")
for levels in ([1.0], [1.0, 0.31], [1.0, 0.31, 0.094]):
    print(f"  {len(levels)} level(s): {enumerate_capacity([levels])} distinct values")

print("\nheadline ratios against the 8-8 baseline (N=64):")
for factor in (1.0, 2.0, 2.4):
    mult = mult_reduction(64, factor)
    size = size_reduction_vs_88(64, factor)
    print(f"  {factor:.1f}x levels: {mult:5.1f}x fewer multiplies, "
          f"{size:.2f}x smaller model")

print("\npower-performance estimate X/(C(X/N+1)) with X=5.5:")
for comp in (2.2, 2.5):
    print(f"  compute factor {comp}: {power_perf_gain(5.5, comp, 64):.2f}x vs 8-8")

print("\nthroughput gains with an 8-8 op costing c=5 ternary ops:")
pi_c, pi_m = throughput_gains(5.0, 64, 2.4)
print(f"  2.4x levels: compute-bound {pi_c:.2f}x, bandwidth-bound {pi_m:.2f}x")

# The closed formula and the measured bookkeeping agree whenever blocks
# divide evenly; remainder blocks are charged their true length.
size, _, alphas = table2_stats(130, 3, [0, 0, 0])
print(f"\nformula for n=130, k=3: {size:.1f} bits ({alphas} alphas); a real")
print("conversion charges the 2-weight remainder block exactly 8+4 bits.")
