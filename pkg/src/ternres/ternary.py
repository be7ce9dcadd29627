"""Optimal single-scale ternarization of a real vector.

A ternary level approximates a vector w by alpha * s with s in {-1, 0, +1}.
Only the retained set matters: for a fixed support the best alpha is the
mean magnitude over the support, and the squared error becomes
``||w||^2 - S^2/m`` where S is the magnitude sum and m the support size.
Scanning the sorted top-m prefixes therefore finds the exact optimum over
all thresholds in O(n log n).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class TernaryLevel:
    """One scaling factor plus a sign vector for a single block.

    ``threshold`` is the magnitude cut that produced the level: entries with
    ``|w| > threshold`` are retained with their sign.
    """

    alpha: float
    signs: np.ndarray  # int8, values in {-1, 0, +1}
    threshold: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "signs", np.asarray(self.signs, dtype=np.int8))
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")
        if (self.alpha == 0.0) != (not self.signs.any()):
            raise ValueError("alpha must be zero exactly when all signs are zero")

    @property
    def nnz(self) -> int:
        return int(np.count_nonzero(self.signs))

    def dense(self) -> np.ndarray:
        """alpha * signs as float32."""
        return (np.float32(self.alpha) * self.signs.astype(np.float32))


def ternarize(w: np.ndarray) -> TernaryLevel:
    """Best ternary level for ``w`` over the threshold family.

    Maximizes ``(sum of retained |w_i|)^2 / count`` over all distinct
    candidate thresholds (equivalently all top-m magnitude prefixes with
    ties kept together). Equal scores break toward the larger threshold,
    i.e. the sparser level. Prefix sums accumulate in float64; the returned
    alpha is rounded to float32.
    """
    w = np.asarray(w, dtype=np.float64).reshape(-1)
    if w.size == 0:
        raise ValueError("cannot ternarize an empty vector")
    if not np.all(np.isfinite(w)):
        raise ValueError("cannot ternarize non-finite values")

    mags = np.abs(w)
    order = np.argsort(-mags, kind="stable")
    sorted_mags = mags[order]
    nnz = int(np.count_nonzero(sorted_mags))
    if nnz == 0:
        return TernaryLevel(0.0, np.zeros(w.size, dtype=np.int8), 0.0)

    prefix = np.cumsum(sorted_mags[:nnz])
    counts = np.arange(1, nnz + 1, dtype=np.float64)
    scores = prefix * prefix / counts

    # A cut after position m is a real threshold only if it separates two
    # distinct magnitudes (ties are kept or dropped together).
    valid = np.empty(nnz, dtype=bool)
    valid[-1] = True
    if nnz > 1:
        valid[:-1] = sorted_mags[:nnz - 1] > sorted_mags[1:nnz]
    scores = np.where(valid, scores, -np.inf)

    m = int(np.argmax(scores)) + 1  # first max = smallest support = largest T
    alpha = float(np.float32(prefix[m - 1] / m))
    if alpha == 0.0:  # magnitudes below float32 denormal range
        return TernaryLevel(0.0, np.zeros(w.size, dtype=np.int8), 0.0)
    threshold = float(sorted_mags[m]) if m < w.size else 0.0

    signs = np.zeros(w.size, dtype=np.int8)
    kept = order[:m]
    signs[kept] = np.sign(w[kept]).astype(np.int8)
    return TernaryLevel(alpha, signs, threshold)


def level_error(w: np.ndarray, level: TernaryLevel) -> float:
    """Squared l2 error ``sum (w_i - alpha*s_i)^2``."""
    w = np.asarray(w, dtype=np.float64).reshape(-1)
    if w.size != level.signs.size:
        raise ValueError(
            f"length mismatch: vector has {w.size}, level has {level.signs.size}"
        )
    diff = w - level.alpha * level.signs.astype(np.float64)
    return float(diff @ diff)


def oracle_best_support(w: np.ndarray, max_n: int = 12) -> tuple[float, np.ndarray]:
    """Exhaustive 2^n search over retained sets; test oracle for ternarize.

    For every support S the candidate uses sign(w_i) on S and alpha equal to
    the mean magnitude over S; returns (alpha, signs) of the global error
    minimizer. Error is evaluated directly, independent of the prefix-scan
    path.
    """
    w = np.asarray(w, dtype=np.float64).reshape(-1)
    n = w.size
    if n == 0:
        raise ValueError("empty vector")
    if n > max_n:
        raise ValueError(f"oracle limited to n <= {max_n}, got {n}")

    base_signs = np.sign(w)
    best_err = np.inf
    best = (0.0, np.zeros(n, dtype=np.int8))
    for mask in range(1 << n):
        keep = np.array([(mask >> i) & 1 for i in range(n)], dtype=bool)
        m = int(keep.sum())
        if m == 0:
            alpha = 0.0
            signs = np.zeros(n)
        else:
            alpha = float(np.abs(w)[keep].mean())
            signs = np.where(keep, base_signs, 0.0)
        err = float(np.sum((w - alpha * signs) ** 2))
        if err < best_err:
            best_err = err
            best = (alpha, signs.astype(np.int8))
    return best
