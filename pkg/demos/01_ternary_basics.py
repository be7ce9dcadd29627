"""A first look at single-block ternarization and residual stacking.

A ternary level replaces a block of weights by alpha * s with s in
{-1, 0, +1}: one real multiply per block, sign-gated adds for the rest.
This script ternarizes one small vector, shows why the chosen threshold is
optimal, and then stacks residual levels until the block is essentially
reproduced.
"""

import numpy as np

from ternres import Tensor, level_error, ternarize, ternary_residual

rng = np.random.default_rng(42)
w = rng.normal(size=12)
print("weights:", np.round(w, 3))

level = ternarize(w)
print(f"\nbest single level: alpha={level.alpha:.4f}, threshold={level.threshold:.4f}")
print("signs:            ", level.signs)
print(f"squared error:     {level_error(w, level):.4f}  (||w||^2 = {w @ w:.4f})")

# The optimum is found by scanning magnitude prefixes: keeping the top-m
# entries scores (sum of kept magnitudes)^2 / m, and the best m wins.
mags = np.sort(np.abs(w))[::-1]
scores = np.cumsum(mags) ** 2 / np.arange(1, len(w) + 1)
print("\nprefix scores (top-m):", np.round(scores, 3))
print("chosen support size:  ", level.nnz, "= argmax of the scan")

# The fitted level is orthogonal to what it leaves behind, so stacking a
# fresh ternary level on the residual strictly shrinks the error.
dense = level.alpha * level.signs.astype(np.float64)
residual = w - dense
print(f"\n<level, residual> = {dense @ residual:+.2e}  (orthogonal)")

print("\nstacking residual levels (squared relative error per step):")
t = Tensor("demo", w.astype(np.float32))
layer = ternary_residual(t, block_size=12, epsilon_sq=1e-4)
for i, d in enumerate(layer.delta_sequence):
    print(f"  levels={i + 1}: delta = {d:.6f}")
print(f"\n{layer.num_levels} levels reach delta <= 1e-4: every appended level")
print("is fitted to the remaining residual, so the error strictly decreases.")
