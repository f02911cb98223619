import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dpxlab.errors import ConfigError, ShapeError, UndefinedError
from dpxlab.metrics import (
    MetricConfig,
    PairEvaluation,
    accuracy_ratio,
    agreement,
    disagreement_score,
    evaluate_localization,
    evaluate_pair,
    kendall_tau,
    pis,
)

from oracles import kendall_tau_enumeration


class TestKendallTau:
    def test_identity_ordering(self):
        assert kendall_tau([1, 2, 3], [1, 2, 3]) == 1.0

    def test_single_swap(self):
        assert kendall_tau([1, 3, 2, 4], [1, 2, 3, 4]) == pytest.approx(0.6667, abs=5e-5)

    def test_reversal(self):
        assert kendall_tau([3, 2, 1], [1, 2, 3]) == -1.0

    def test_constant_sequence_undefined(self):
        with pytest.raises(UndefinedError):
            kendall_tau([1, 1, 1], [1, 2, 3])
        with pytest.raises(UndefinedError):
            kendall_tau([1, 2, 3], [5, 5, 5])

    def test_too_short_undefined(self):
        with pytest.raises(UndefinedError):
            kendall_tau([1], [2])
        with pytest.raises(UndefinedError):
            kendall_tau([], [])

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            kendall_tau([1, 2], [1, 2, 3])

    def test_nonfinite_undefined(self):
        with pytest.raises(UndefinedError):
            kendall_tau([1.0, np.nan, 2.0], [1.0, 2.0, 3.0])

    def test_matches_enumeration_small(self):
        rng = np.random.default_rng(7)
        for _ in range(400):
            n = int(rng.integers(2, 7))
            a = rng.integers(0, 4, size=n).astype(float)
            b = rng.integers(0, 4, size=n).astype(float)
            try:
                got = kendall_tau(a, b)
            except UndefinedError:
                n0 = n * (n - 1) // 2
                ties_a = sum(
                    1 for i in range(n) for j in range(i + 1, n) if a[i] == a[j]
                )
                ties_b = sum(
                    1 for i in range(n) for j in range(i + 1, n) if b[i] == b[j]
                )
                assert ties_a == n0 or ties_b == n0
                continue
            assert got == kendall_tau_enumeration(a, b)

    def test_matches_enumeration_larger_with_ties(self):
        rng = np.random.default_rng(11)
        for _ in range(25):
            n = int(rng.integers(20, 60))
            a = np.round(rng.standard_normal(n), 1)
            b = np.round(rng.standard_normal(n) + 0.3 * a, 1)
            assert kendall_tau(a, b) == kendall_tau_enumeration(a, b)

    @settings(max_examples=150, deadline=None)
    @given(
        st.lists(st.integers(min_value=-3, max_value=3), min_size=2, max_size=8),
        st.data(),
    )
    def test_symmetry_property(self, a, data):
        b = data.draw(
            st.lists(
                st.integers(min_value=-3, max_value=3), min_size=len(a), max_size=len(a)
            )
        )
        try:
            t1 = kendall_tau(a, b)
        except UndefinedError:
            return
        assert t1 == kendall_tau(b, a)
        assert -1.0 <= t1 <= 1.0


class TestDisagreementScore:
    def test_identical_maps(self):
        s = np.array([[0.5, -1.0], [0.0, 2.0]])
        assert disagreement_score(s, s) == 0.0

    def test_quarter_disagreement(self):
        assert disagreement_score([1, -1, 1, -1], [1, 1, 1, -1]) == 25.0

    def test_zero_counts_as_nonpositive(self):
        assert disagreement_score([0.0, 1.0], [1.0, 1.0]) == 50.0

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            disagreement_score(np.ones((2, 2)), np.ones(4))

    def test_empty_undefined(self):
        with pytest.raises(UndefinedError):
            disagreement_score(np.empty(0), np.empty(0))

    def test_symmetric(self):
        rng = np.random.default_rng(1)
        a, b = rng.standard_normal(30), rng.standard_normal(30)
        assert disagreement_score(a, b) == disagreement_score(b, a)


class TestPis:
    def test_spec_style_example(self):
        s = [0.2, -0.1, 0.3, 0.4]
        s2 = [0.1, 0.5, 0.6, -0.2]
        assert pis(s, s2) == 1.0

    def test_self_similarity_is_one(self):
        rng = np.random.default_rng(3)
        s = rng.standard_normal((8, 8))
        assert pis(s, s) == 1.0

    def test_too_few_common_positives(self):
        with pytest.raises(UndefinedError):
            pis([1.0, -1.0, -1.0], [1.0, -1.0, 2.0])

    def test_all_tied_support_undefined(self):
        with pytest.raises(UndefinedError):
            pis([1.0, 1.0, -1.0], [2.0, 3.0, 1.0])


class TestAgreementAndRatio:
    def test_agreement_fraction(self):
        assert agreement([1, 2, 3], [1, 2, 4]) == pytest.approx(2 / 3)

    def test_agreement_empty_undefined(self):
        with pytest.raises(UndefinedError):
            agreement([], [])

    def test_agreement_length_mismatch(self):
        with pytest.raises(ShapeError):
            agreement([1], [1, 2])

    def test_accuracy_ratio(self):
        assert accuracy_ratio(0.9, 0.95) == pytest.approx(0.9 / 0.95)

    def test_accuracy_ratio_zero_denominator(self):
        with pytest.raises(UndefinedError):
            accuracy_ratio(0.5, 0.0)


class TestPolicy:
    def test_config_validation(self):
        with pytest.raises(ConfigError):
            MetricConfig(ds_threshold=1.5)
        with pytest.raises(ConfigError):
            MetricConfig(tie_policy="first_wins")

    def test_pair_passing(self):
        rng = np.random.default_rng(5)
        s = np.abs(rng.standard_normal(50)) + 0.1
        ev = evaluate_pair(s, s)
        assert ev.ds == 0.0 and ev.passed_ds and ev.pis == 1.0
        assert ev.n_pos_common == 50

    def test_pair_failing_ds_has_no_pis(self):
        s = np.array([1.0, 1.0, 1.0, 1.0])
        s2 = np.array([-1.0, -1.0, 2.0, 3.0])  # DS = 50%
        ev = evaluate_pair(s, s2)
        assert ev.ds == 50.0 and not ev.passed_ds and ev.pis is None

    def test_pair_with_undefined_rank_reported_none(self):
        s = np.array([1.0, 1.0, 1.0])
        ev = evaluate_pair(s, s)  # support all tied
        assert ev.passed_ds and ev.pis is None and ev.n_pos_common == 3

    def test_localization_aggregate(self):
        pairs = [
            PairEvaluation(ds=5.0, pis=0.8, n_pos_common=10, passed_ds=True),
            PairEvaluation(ds=10.0, pis=0.4, n_pos_common=12, passed_ds=True),
            PairEvaluation(ds=50.0, pis=None, n_pos_common=3, passed_ds=False),
        ]
        res = evaluate_localization(pairs)
        assert res.pis_avg == pytest.approx(0.6)
        assert res.ds_pass_fraction == pytest.approx(2 / 3)
        assert not res.eliminated and res.la_satisfied
        assert res.n_pairs == 3 and res.n_scored == 2

    def test_high_disagreement_eliminates(self):
        # every pair far above the 15% default threshold, like a DS > 45% explainer
        rng = np.random.default_rng(9)
        pairs = []
        for _ in range(10):
            s = rng.standard_normal(100)
            s2 = s.copy()
            flip = rng.choice(100, size=60, replace=False)
            s2[flip] = -s2[flip] - 0.1  # force sign changes on 60% of positions
            pairs.append(evaluate_pair(s, s2))
        res = evaluate_localization(pairs)
        assert all(p.ds > 45.0 for p in pairs)
        assert res.eliminated and res.pis_avg is None and not res.la_satisfied

    def test_localization_needs_pairs(self):
        with pytest.raises(UndefinedError):
            evaluate_localization([])

    def test_threshold_boundary_inclusive(self):
        # exactly at 100*ds_threshold percent still passes
        s = np.ones(20)
        s2 = np.ones(20)
        s2[:3] = -1.0  # 15%
        ev = evaluate_pair(s, s2, MetricConfig(ds_threshold=0.15))
        assert ev.ds == 15.0 and ev.passed_ds
