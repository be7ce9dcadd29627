"""Toy forward-pass engine running paired FP32/quantized inference.

The engine supports fully-connected, direct 2-D convolution, ReLU, max/avg
pooling, and folded batch-norm+scale (an affine ``a*y + b`` per channel).
A paired run measures, per layer, the relative output perturbation, the
activation-quantization perturbation, and the weight perturbation, and
cross-checks that accumulating the per-level ternary contributions matches
a dense multiply with the reconstructed weights.

Everything computes in float32 (the toolkit's native precision) while norms
and ratios accumulate in float64.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .manifest import LayerDecl, ModelManifest
from .residual import QuantizedLayer, QuantizedModel, reconstruct
from .tensors import Tensor

DECOMPOSITION_RTOL = 1e-5


@dataclass(frozen=True)
class ActQuantSpec:
    """Dynamic fixed point: 8-bit integers scaled by a power-of-two step."""

    exponent: int
    bits: int = 8


def quantize_activations(x: np.ndarray) -> tuple[np.ndarray, ActQuantSpec]:
    """Round ``x`` onto an 8-bit grid whose step covers the value range.

    The exponent e is the smallest integer with ``max|x| <= 127 * 2^e``, so
    every element is off by at most ``2^(e-1)``.
    """
    x = np.asarray(x, dtype=np.float32)
    if not np.all(np.isfinite(x)):
        raise ValueError("cannot quantize non-finite activations")
    peak = float(np.max(np.abs(x))) if x.size else 0.0
    if peak == 0.0:
        return x.copy(), ActQuantSpec(exponent=0)
    e = int(np.ceil(np.log2(peak / 127.0)))
    while peak > 127.0 * 2.0 ** e:
        e += 1
    while peak <= 127.0 * 2.0 ** (e - 1):
        e -= 1
    step = np.float32(2.0 ** e)
    q = np.clip(np.round(x / step), -128, 127).astype(np.float32)
    return q * step, ActQuantSpec(exponent=e)


# ---------------------------------------------------------------------------
# layer primitives (batch-first, float32)
# ---------------------------------------------------------------------------


def _fc(w: np.ndarray, b: np.ndarray | None, x: np.ndarray) -> np.ndarray:
    flat = x.reshape(x.shape[0], -1)
    if flat.shape[1] != w.shape[1]:
        raise ValueError(f"fc expects {w.shape[1]} inputs, got {flat.shape[1]}")
    y = flat @ w.T
    if b is not None:
        y = y + b
    return y.astype(np.float32, copy=False)


def _conv2d(w: np.ndarray, b: np.ndarray | None, x: np.ndarray,
            stride: int, pad: int) -> np.ndarray:
    if x.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ValueError(f"conv2d expects (B,{w.shape[1]},H,W), got {x.shape}")
    c_out, _, kh, kw = w.shape
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    oh = (x.shape[2] - kh) // stride + 1
    ow = (x.shape[3] - kw) // stride + 1
    if oh < 1 or ow < 1:
        raise ValueError("conv2d kernel larger than padded input")
    y = np.zeros((x.shape[0], c_out, oh, ow), dtype=np.float32)
    for u in range(kh):
        for v in range(kw):
            patch = x[:, :, u : u + stride * oh : stride, v : v + stride * ow : stride]
            y += np.einsum("oc,bchw->bohw", w[:, :, u, v], patch)
    if b is not None:
        y = y + b.reshape(1, c_out, 1, 1)
    return y.astype(np.float32, copy=False)


def _pool_windows(x: np.ndarray, window: int, stride: int) -> np.ndarray:
    """(B, C, OH, OW, window*window) view of the pooling regions."""
    if x.ndim != 4:
        raise ValueError(f"pooling expects (B,C,H,W), got {x.shape}")
    oh = (x.shape[2] - window) // stride + 1
    ow = (x.shape[3] - window) // stride + 1
    if oh < 1 or ow < 1:
        raise ValueError("pooling window larger than input")
    cols = []
    for u in range(window):
        for v in range(window):
            cols.append(x[:, :, u : u + stride * oh : stride, v : v + stride * ow : stride])
    return np.stack(cols, axis=-1)


def _maxpool(x: np.ndarray, window: int, stride: int) -> np.ndarray:
    return _pool_windows(x, window, stride).max(axis=-1)


def _avgpool(x: np.ndarray, window: int, stride: int) -> np.ndarray:
    return _pool_windows(x, window, stride).mean(axis=-1, dtype=np.float32)


def _relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, np.float32(0.0))


def _bn_scale(a: np.ndarray, b: np.ndarray | None, x: np.ndarray) -> np.ndarray:
    if x.ndim < 2 or x.shape[1] != a.shape[0]:
        raise ValueError(f"bn_scale over {a.shape[0]} channels cannot apply to {x.shape}")
    shape = (1, a.shape[0]) + (1,) * (x.ndim - 2)
    y = x * a.reshape(shape)
    if b is not None:
        y = y + b.reshape(shape)
    return y.astype(np.float32, copy=False)


def apply_layer(layer: LayerDecl, weight: np.ndarray | None,
                bias: np.ndarray | None, x: np.ndarray) -> np.ndarray:
    if layer.kind == "fc":
        return _fc(weight, bias, x)
    if layer.kind == "conv2d":
        return _conv2d(weight, bias, x, layer.hp("stride", 1), layer.hp("pad", 0))
    if layer.kind == "relu":
        return _relu(x)
    if layer.kind == "maxpool":
        window = layer.hp("window")
        return _maxpool(x, window, layer.hp("stride", window))
    if layer.kind == "avgpool":
        window = layer.hp("window")
        return _avgpool(x, window, layer.hp("stride", window))
    if layer.kind == "bn_scale":
        return _bn_scale(weight, bias, x)
    raise ValueError(f"unknown layer kind {layer.kind!r}")


# ---------------------------------------------------------------------------
# forward passes
# ---------------------------------------------------------------------------


def _as_batch(x) -> np.ndarray:
    arr = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float32)
    return arr.astype(np.float32, copy=False)


def forward(
    manifest: ModelManifest,
    weights: dict[str, tuple[Tensor, Tensor | None]],
    x,
) -> list[np.ndarray]:
    """Reference FP32 pass over batch-first input; returns every layer's output."""
    cur = _as_batch(x)
    acts = []
    for layer in manifest.layers:
        w, b = _weight_arrays(weights, layer)
        cur = apply_layer(layer, w, b, cur)
        acts.append(cur)
    return acts


def _weight_arrays(weights, layer: LayerDecl):
    if layer.weight_ref is None:
        return None, None
    w, b = weights[layer.name]
    return w.data, None if b is None else b.data


def _rel_norm(diff: np.ndarray, ref: np.ndarray) -> float:
    d = float(np.linalg.norm(diff.astype(np.float64).reshape(-1)))
    r = float(np.linalg.norm(ref.astype(np.float64).reshape(-1)))
    if r == 0.0:
        return 0.0 if d == 0.0 else np.inf
    return d / r


def _level_slices(qlayer: QuantizedLayer) -> list[np.ndarray]:
    """Per-level-index dense weight arrays: slice t holds alpha_t * signs_t
    of every block that has at least t+1 levels."""
    depth = max(len(s.levels) for s in qlayer.stacks)
    size = qlayer.num_weights
    slices = []
    for t in range(depth):
        flat = np.zeros(size, dtype=np.float32)
        for stack in qlayer.stacks:
            if t < len(stack.levels):
                bv = stack.block
                flat[bv.start:bv.stop] = stack.levels[t].dense()
        slices.append(flat.reshape(qlayer.shape))
    return slices


def _apply_quantized(layer: LayerDecl, qlayer: QuantizedLayer,
                     bias: np.ndarray | None, x: np.ndarray) -> np.ndarray:
    """Dense pass with reconstructed weights, cross-checked against the
    level-decomposed accumulation."""
    dense_w = reconstruct(qlayer).data
    y_dense = apply_layer(layer, dense_w, bias, x)

    y_dec = None
    for level_w in _level_slices(qlayer):
        part = apply_layer(layer, level_w, None, x)
        y_dec = part if y_dec is None else y_dec + part
    if bias is not None:
        if layer.kind == "fc":
            y_dec = y_dec + bias
        else:
            y_dec = y_dec + bias.reshape((1, bias.shape[0]) + (1,) * (y_dec.ndim - 2))
    rel = _rel_norm(y_dense - y_dec, y_dense)
    if rel > DECOMPOSITION_RTOL:
        raise RuntimeError(
            f"layer {layer.name!r}: level-decomposed accumulation deviates from "
            f"the dense reconstruction by {rel:.3g} relative"
        )
    return y_dense


@dataclass(frozen=True)
class TraceEntry:
    index: int
    name: str
    kind: str
    delta: float
    gamma: float
    epsilon: float


@dataclass(frozen=True)
class PerturbationTrace:
    """Measured relative perturbations of one paired FP32/quantized run.

    Entry 0 describes the shared input (delta 0 by construction); entry i
    describes layer i. ``gamma`` of entry i is the quantization error of the
    activation handed to layer i+1, scaled by the clean activation norm.
    """

    entries: tuple[TraceEntry, ...]
    logits: np.ndarray
    logits_quantized: np.ndarray

    @property
    def final_delta(self) -> float:
        return self.entries[-1].delta

    def deltas(self) -> list[float]:
        return [e.delta for e in self.entries]

    def to_rows(self) -> list[dict]:
        return [
            {"layer": e.index, "name": e.name, "kind": e.kind,
             "delta": e.delta, "gamma": e.gamma, "epsilon": e.epsilon}
            for e in self.entries
        ]

    def to_csv(self, path) -> None:
        with open(str(path), "w", newline="", encoding="utf-8") as fp:
            writer = csv.writer(fp)
            writer.writerow(["layer", "name", "kind", "delta", "gamma", "epsilon"])
            for e in self.entries:
                writer.writerow([
                    e.index, e.name, e.kind,
                    f"{e.delta:.17g}", f"{e.gamma:.17g}", f"{e.epsilon:.17g}",
                ])

    def to_json(self) -> str:
        return json.dumps({"trace": self.to_rows()}, indent=2, sort_keys=True)


def forward_quantized(
    manifest: ModelManifest,
    weights: dict[str, tuple[Tensor, Tensor | None]],
    qmodel: QuantizedModel,
    x,
    act_quant: bool = False,
) -> tuple[list[np.ndarray], np.ndarray, PerturbationTrace]:
    """Paired FP32/quantized pass measuring per-layer perturbations.

    Returns the quantized activations, the quantized logits, and the trace.
    Biases stay at full precision; activation quantization, when enabled,
    applies to every layer input including the network input.
    """
    clean = forward(manifest, weights, x)
    cur = _as_batch(x)
    x0 = cur

    qlayers = {l.layer: l for l in qmodel.layers}
    for layer in manifest.parametric_layers():
        q = qlayers.get(layer.name)
        if q is None:
            continue
        w, _ = weights[layer.name]
        if q.shape != w.shape:
            raise ValueError(
                f"layer {layer.name!r}: quantized shape {q.shape} does not match "
                f"weight shape {w.shape}"
            )

    entries = [TraceEntry(0, "input", "input", 0.0, 0.0, 0.0)]
    acts = []
    gamma_pending: dict[int, float] = {}
    for li, layer in enumerate(manifest.layers):
        if act_quant:
            x_in, _ = quantize_activations(cur)
            ref = x0 if li == 0 else clean[li - 1]
            gamma_pending[li] = _rel_norm(cur - x_in, ref)
        else:
            x_in = cur

        w, b = _weight_arrays(weights, layer)
        epsilon = 0.0
        if layer.weight_ref is not None and layer.name in qlayers:
            qlayer = qlayers[layer.name]
            cur = _apply_quantized(layer, qlayer, b, x_in)
            epsilon = _rel_norm(
                weights[layer.name][0].data - reconstruct(qlayer).data,
                weights[layer.name][0].data,
            )
        else:
            cur = apply_layer(layer, w, b, x_in)
        acts.append(cur)
        delta = _rel_norm(clean[li] - cur, clean[li])
        entries.append(TraceEntry(li + 1, layer.name, layer.kind, delta, 0.0, epsilon))

    # gamma of entry i is the quantization error of layer i's output, i.e.
    # what was measured while preparing the input of layer i+1.
    final = []
    for e in entries:
        gamma = gamma_pending.get(e.index, 0.0)
        final.append(TraceEntry(e.index, e.name, e.kind, e.delta, gamma, e.epsilon))

    trace = PerturbationTrace(tuple(final), clean[-1].copy(), acts[-1].copy())
    return acts, acts[-1], trace


# ---------------------------------------------------------------------------
# margin check
# ---------------------------------------------------------------------------

SQRT2 = float(np.sqrt(2.0))


def margin_check(y: np.ndarray, delta: float) -> str:
    """'safe' when no l2 perturbation of size ``delta`` can flip the argmax.

    Splitting the perturbation into a drop ``a`` on the leader and a rise
    ``b`` on the runner-up, ``a^2 + b^2 <= delta^2`` caps ``a + b`` at
    ``sqrt(2)*delta``; a score gap above that leaves the argmax unchanged.
    """
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if y.size < 2:
        raise ValueError("margin check needs at least two class scores")
    if delta < 0:
        raise ValueError("delta must be non-negative")
    if delta == 0.0:
        return "safe"
    order = np.argsort(-y)
    gap = y[order[0]] - y[order[1]]
    return "safe" if gap > SQRT2 * delta else "unsafe"


# ---------------------------------------------------------------------------
# per-layer perturbation bounds (executable lemmas)
# ---------------------------------------------------------------------------

_SLACK = 1e-9  # multiplicative float slack for bounds that hold with equality


@dataclass(frozen=True)
class BoundCheck:
    name: str
    measured: float
    bound: float

    @property
    def ok(self) -> bool:
        return self.measured <= self.bound * (1.0 + _SLACK) + 1e-12


def relu_bound(x: np.ndarray, xh: np.ndarray) -> BoundCheck:
    """ReLU is 1-Lipschitz: the output gap never exceeds the input gap."""
    lhs = np.linalg.norm((_relu(x) - _relu(xh)).astype(np.float64).reshape(-1))
    rhs = np.linalg.norm((x - xh).astype(np.float64).reshape(-1))
    return BoundCheck("relu_lipschitz", float(lhs), float(rhs))


def maxpool_bound(x: np.ndarray, xh: np.ndarray, window: int, stride: int) -> BoundCheck:
    """Each pooled output moves at most the max-norm of its window's change."""
    wins = _pool_windows(x, window, stride).astype(np.float64)
    wins_h = _pool_windows(xh, window, stride).astype(np.float64)
    lhs = np.abs(wins.max(axis=-1) - wins_h.max(axis=-1))
    rhs = np.abs(wins - wins_h).max(axis=-1)
    worst = int(np.argmax(lhs - rhs))
    return BoundCheck("maxpool_window", float(lhs.reshape(-1)[worst]),
                      float(rhs.reshape(-1)[worst]))


def avgpool_bound(x: np.ndarray, xh: np.ndarray, window: int, stride: int) -> BoundCheck:
    """Averaging contracts: |mean gap| <= l1/n <= l2/sqrt(n) per window."""
    wins = _pool_windows(x, window, stride).astype(np.float64)
    wins_h = _pool_windows(xh, window, stride).astype(np.float64)
    n = wins.shape[-1]
    lhs = np.abs(wins.mean(axis=-1) - wins_h.mean(axis=-1))
    l1 = np.abs(wins - wins_h).sum(axis=-1) / n
    l2 = np.linalg.norm(wins - wins_h, axis=-1) / np.sqrt(n)
    worst = int(np.argmax(lhs - l1))
    if np.any(l1 > l2 * (1.0 + _SLACK) + 1e-12):
        bad = int(np.argmax(l1 - l2))
        return BoundCheck("avgpool_l1_vs_l2", float(l1.reshape(-1)[bad]),
                          float(l2.reshape(-1)[bad]))
    return BoundCheck("avgpool_window", float(lhs.reshape(-1)[worst]),
                      float(l1.reshape(-1)[worst]))


def matmul_bound(w: np.ndarray, wh: np.ndarray,
                 x: np.ndarray, xh: np.ndarray) -> BoundCheck:
    """Product perturbation: ||Wx - W'x'|| <= ||W||_F ||x-x'|| + ||x'|| ||W-W'||_F."""
    w64 = w.astype(np.float64)
    wh64 = wh.astype(np.float64)
    x64 = x.astype(np.float64).reshape(x.shape[0], -1)
    xh64 = xh.astype(np.float64).reshape(xh.shape[0], -1)
    lhs = np.linalg.norm(x64 @ w64.T - xh64 @ wh64.T)
    rhs = (
        np.linalg.norm(w64) * np.linalg.norm(x64 - xh64)
        + np.linalg.norm(xh64) * np.linalg.norm(w64 - wh64)
    )
    return BoundCheck("matmul_triangle", float(lhs), float(rhs))


def layer_lemma_checks(
    manifest: ModelManifest,
    weights: dict[str, tuple[Tensor, Tensor | None]],
    clean_inputs: list[np.ndarray],
    perturbed_inputs: list[np.ndarray],
    quantized: dict[str, np.ndarray] | None = None,
) -> list[BoundCheck]:
    """Evaluate the per-layer bounds on measured activation pairs.

    ``clean_inputs``/``perturbed_inputs`` hold each layer's input (clean and
    perturbed run); ``quantized`` maps fc layer names to their perturbed
    weight matrices.
    """
    checks = []
    for li, layer in enumerate(manifest.layers):
        x, xh = clean_inputs[li], perturbed_inputs[li]
        if layer.kind == "relu":
            checks.append(relu_bound(x, xh))
        elif layer.kind == "maxpool":
            window = layer.hp("window")
            checks.append(maxpool_bound(x, xh, window, layer.hp("stride", window)))
        elif layer.kind == "avgpool":
            window = layer.hp("window")
            checks.append(avgpool_bound(x, xh, window, layer.hp("stride", window)))
        elif layer.kind == "fc":
            w = weights[layer.name][0].data
            wh = quantized.get(layer.name, w) if quantized else w
            checks.append(matmul_bound(
                w, wh, x.reshape(x.shape[0], -1), xh.reshape(xh.shape[0], -1)))
    return checks
