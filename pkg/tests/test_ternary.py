"""Single-level ternarization: optimality, orthogonality, equivariance."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ternres import TernaryLevel, level_error, oracle_best_support, ternarize


def scan_all_prefixes(w, float32_alpha=True):
    """Independent threshold-scan oracle: error of the best top-m prefix,
    evaluated directly for every m with ties kept together. Rounds alpha
    to float32 by default, matching the library's storage convention."""
    w = np.asarray(w, dtype=np.float64)
    mags = np.abs(w)
    order = np.argsort(-mags, kind="stable")
    best = np.sum(w * w)  # empty support
    for m in range(1, len(w) + 1):
        if m < len(w) and mags[order[m - 1]] == mags[order[m]]:
            continue  # not a threshold cut
        kept = order[:m]
        if mags[kept[-1]] == 0.0:
            continue
        alpha = mags[kept].mean()
        if float32_alpha:
            alpha = float(np.float32(alpha))
        approx = np.zeros_like(w)
        approx[kept] = alpha * np.sign(w[kept])
        best = min(best, float(np.sum((w - approx) ** 2)))
    return best


class TestTernarize:
    def test_exactly_representable(self):
        level = ternarize([2.0, -2.0, 2.0])
        assert level.alpha == 2.0
        assert level.signs.tolist() == [1, -1, 1]
        assert level_error([2.0, -2.0, 2.0], level) == 0.0

    def test_worked_example(self):
        # Prefix scores m=1..4 are 9, 12.5, 12, 10.5625: the optimum keeps
        # {3, -2} with alpha 2.5 and leaves squared error 14.25 - 12.5.
        w = [3.0, 1.0, 0.5, -2.0]
        level = ternarize(w)
        assert level.alpha == 2.5
        assert level.signs.tolist() == [1, 0, 0, -1]
        assert level_error(w, level) == pytest.approx(1.75, rel=1e-12)
        assert level.threshold == 1.0

    def test_all_zero_vector(self):
        level = ternarize([0.0, 0.0, 0.0])
        assert level.alpha == 0.0
        assert level.signs.tolist() == [0, 0, 0]

    def test_empty_vector_rejected(self):
        with pytest.raises(ValueError):
            ternarize([])

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            ternarize([1.0, np.nan])

    def test_tie_break_prefers_sparser(self):
        # Dyadic values make the m=1 and m=4 prefix scores exactly 4.0:
        # 2^2/1 == (2 + 0.75 + 0.6875 + 0.5625)^2/4, intermediate scores
        # stay below. Equal objective must resolve to the sparser level.
        level = ternarize([2.0, 0.75, 0.6875, 0.5625])
        assert level.nnz == 1
        assert level.alpha == 2.0

    def test_ties_kept_together(self):
        # Equal magnitudes cannot be split by any threshold: either all
        # three unit entries are retained or none of them.
        level = ternarize([1.0, -1.0, 1.0, 0.2])
        kept = (level.signs != 0).tolist()
        assert kept in ([True, True, True, False], [True, True, True, True])

    def test_matches_prefix_scan_oracle(self):
        rng = np.random.default_rng(21)
        for _ in range(300):
            n = int(rng.integers(1, 64))
            w = rng.normal(size=n) * rng.choice([0.01, 1.0, 100.0])
            level = ternarize(w)
            assert level_error(w, level) == pytest.approx(
                scan_all_prefixes(w), rel=1e-9, abs=1e-12
            )

    def test_scale_equivariance(self):
        rng = np.random.default_rng(22)
        for _ in range(50):
            w = rng.normal(size=int(rng.integers(1, 40)))
            c = float(rng.uniform(0.1, 10.0))
            base = ternarize(w)
            scaled = ternarize(c * w)
            assert np.array_equal(base.signs, scaled.signs)
            assert scaled.alpha == pytest.approx(c * base.alpha, rel=1e-6)

    def test_orthogonality_identity(self):
        # The fitted level is orthogonal to its residual up to the float32
        # rounding of alpha, which perturbs the identity by O(1e-7)*||w||^2.
        rng = np.random.default_rng(23)
        for _ in range(200):
            w = rng.normal(size=int(rng.integers(1, 80)))
            level = ternarize(w)
            dense = level.alpha * level.signs.astype(np.float64)
            residual = w - dense
            norm_sq = float(w @ w)
            assert abs(float(dense @ residual)) <= 1e-5 * norm_sq
            pythagoras = float(dense @ dense) + float(residual @ residual)
            assert abs(pythagoras - norm_sq) <= 1e-5 * norm_sq

    @given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=1, max_size=32))
    @settings(max_examples=150, deadline=None)
    def test_no_prefix_beats_choice_property(self, values):
        w = np.array(values)
        level = ternarize(w)
        err = level_error(w, level)
        norm_sq = float(w @ w)
        # Slack covers float64-score vs float32-alpha selection flips.
        assert err <= scan_all_prefixes(w) + 1e-12 * (1.0 + norm_sq)

    def test_sign_invariant(self):
        rng = np.random.default_rng(24)
        for _ in range(50):
            w = rng.normal(size=20)
            level = ternarize(w)
            kept = level.signs != 0
            assert np.array_equal(
                level.signs[kept], np.sign(w[kept]).astype(np.int8)
            )
            assert np.all(np.abs(w[kept]) > level.threshold)
            assert np.all(np.abs(w[~kept]) <= level.threshold)


class TestOracle:
    def test_single_element(self):
        alpha, signs = oracle_best_support([1.0])
        assert alpha == 1.0 and signs.tolist() == [1]

    def test_symmetric_pair(self):
        alpha, signs = oracle_best_support([-5.0, 5.0])
        assert alpha == 5.0 and signs.tolist() == [-1, 1]
        w = np.array([-5.0, 5.0])
        assert np.sum((w - alpha * signs) ** 2) == 0.0

    def test_too_long_rejected(self):
        with pytest.raises(ValueError):
            oracle_best_support(np.zeros(13))

    def test_agrees_with_ternarize(self):
        rng = np.random.default_rng(25)
        for _ in range(250):
            n = int(rng.integers(1, 13))
            w = rng.normal(size=n)
            alpha, signs = oracle_best_support(w)
            oracle_err = float(np.sum((w - alpha * signs) ** 2))
            fast_err = level_error(w, ternarize(w))
            assert fast_err <= oracle_err * (1 + 1e-6) + 1e-12
            assert oracle_err <= fast_err * (1 + 1e-6) + 1e-12


class TestLevelError:
    def test_zero_for_exact(self):
        level = ternarize([1.0, -1.0])
        assert level_error([1.0, -1.0], level) == 0.0

    def test_alpha_zero_gives_norm(self):
        level = TernaryLevel(0.0, np.zeros(3, dtype=np.int8))
        assert level_error([1.0, 2.0, 2.0], level) == pytest.approx(9.0)

    def test_length_mismatch_rejected(self):
        level = ternarize([1.0, 2.0])
        with pytest.raises(ValueError, match="mismatch"):
            level_error([1.0], level)


class TestTernaryLevelInvariants:
    def test_alpha_zero_needs_zero_signs(self):
        with pytest.raises(ValueError):
            TernaryLevel(0.0, np.array([1], dtype=np.int8))

    def test_positive_alpha_needs_support(self):
        with pytest.raises(ValueError):
            TernaryLevel(1.0, np.zeros(2, dtype=np.int8))

    def test_negative_alpha_rejected(self):
        with pytest.raises(ValueError):
            TernaryLevel(-1.0, np.array([1], dtype=np.int8))
