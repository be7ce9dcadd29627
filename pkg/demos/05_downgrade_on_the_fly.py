"""Trading accuracy for compute after deployment.

A converted model carries independent residual levels, so the least
important ones can be disabled in place: no reconversion, no access to the
original weights. This script converts a layer tightly, then walks the
budget down and watches the error climb level by level.
"""

import numpy as np

from ternres import (
    LayerDecl,
    ModelManifest,
    Tensor,
    convert_model,
    cost_report,
    downgrade,
    forward_quantized,
    make_schedule,
)

rng = np.random.default_rng(11)

manifest = ModelManifest(
    (
        LayerDecl("fc1", "fc", weight_ref="w"),
        LayerDecl("relu1", "relu"),
        LayerDecl("fc2", "fc", weight_ref="w"),
    ),
    input_shape=(64,),
)
weights = {
    "fc1": (Tensor("fc1", rng.normal(size=(48, 64)).astype(np.float32)), None),
    "fc2": (Tensor("fc2", rng.normal(size=(10, 48)).astype(np.float32)), None),
}
schedule = make_schedule(manifest, "uniform", epsilon_sq=0.005)
model, report = convert_model(manifest, weights, block_size=64, schedule=schedule)
x = rng.normal(size=(8, 64)).astype(np.float32)

print(f"tight conversion: {model.num_levels} levels over {model.num_blocks} "
      f"blocks (factor {report.blocks_factor:.2f})")

print(f"\n{'kept levels':>11} {'factor':>7} {'mean delta':>11} "
      f"{'final drift':>11} {'mults saved':>11}")
current = model
budgets = list(range(model.num_levels, model.num_blocks - 1, -4))
for budget in budgets:
    current = downgrade(model, keep_levels=budget)
    rep = cost_report(current)
    _, _, trace = forward_quantized(manifest, weights, current, x)
    mean_delta = float(np.mean([l.delta for l in current.layers]))
    print(f"{budget:>11} {rep.blocks_factor:>7.2f} {mean_delta:>11.5f} "
          f"{trace.final_delta:>11.5f} {rep.mult_reduction_vs_88:>10.1f}x")

print("\neach removed level costs exactly its energy share of the layer;")
print("removal order is least-important-first across the whole model.")
print("downgrading to the base budget reproduces the plain blocked-ternary")
print("model, so the whole range between 'fast' and 'accurate' is reachable")
print("from one deployed artifact.")
