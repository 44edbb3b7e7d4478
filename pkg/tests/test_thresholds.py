import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import clustered_kb, make_matrix, make_template
from memekit.thresholds import (
    INSTANCE,
    METHODS,
    NON_TEMPLATIC,
    EmptyDistancesError,
    GlobalThreshold,
    ThresholdProfile,
    build_ood_filter,
    build_profiles,
    classify_item,
    global_threshold,
    load_thresholds,
    ood_keep,
    save_thresholds,
    template_threshold,
)
from oracles import stat_threshold

dist_lists = st.lists(
    st.floats(min_value=0.0, max_value=1e6, allow_nan=False), min_size=1, max_size=40
)


class TestTemplateThreshold:
    def test_hand_arithmetic_1234(self):
        dists = [1.0, 2.0, 3.0, 4.0]
        assert template_threshold(dists, "median") == 2.5
        assert template_threshold(dists, "mean") == 2.5
        assert template_threshold(dists, "max") == 4.0
        assert template_threshold(dists, "p25") == 1.75

    def test_singleton(self):
        for method in METHODS:
            assert template_threshold([5.0], method) == 5.0

    def test_empty_signals_fallback(self):
        with pytest.raises(EmptyDistancesError):
            template_threshold([], "max")

    def test_negative_distance_rejected(self):
        with pytest.raises(ValueError):
            template_threshold([1.0, -0.1], "mean")

    def test_unknown_method(self):
        with pytest.raises(ValueError):
            template_threshold([1.0], "p75")

    def test_matches_independent_statistics_oracle(self):
        rng = np.random.default_rng(10)
        for _ in range(100):
            dists = rng.uniform(0, 100, size=rng.integers(1, 40)).tolist()
            for method in METHODS:
                got = template_threshold(dists, method)
                assert got == pytest.approx(stat_threshold(dists, method), abs=1e-9)

    @given(dist_lists)
    def test_monotonicity(self, dists):
        p25 = template_threshold(dists, "p25")
        med = template_threshold(dists, "median")
        mx = template_threshold(dists, "max")
        mean = template_threshold(dists, "mean")
        assert p25 <= med <= mx
        assert mean <= mx

    def test_mean_never_exceeds_max_on_constant_lists(self):
        # 3x is not exactly representable; an unclamped mean rounds above x
        x = 699050.7598420812
        assert template_threshold([x, x, x], "mean") <= x


def profile(tid, dists, method="max", fallback=False):
    return ThresholdProfile(
        template_id=tid,
        dists=tuple(dists),
        threshold=template_threshold(dists, method) if dists else 0.0,
        method=method,
        fallback=fallback,
    )


class TestGlobalThreshold:
    def test_max_and_mean_of_two(self):
        profs = [profile("a", [2.0]), profile("b", [4.0])]
        assert global_threshold(profs, "max").value == 4.0
        assert global_threshold(profs, "mean").value == 3.0

    def test_counts_only_templates_with_examples(self):
        profs = [profile("a", [2.0]), profile("b", [])]
        g = global_threshold(profs, "max")
        assert g.n_contributing_templates == 1

    def test_no_examples_anywhere(self):
        with pytest.raises(EmptyDistancesError):
            global_threshold([profile("a", [])], "max")

    def test_matches_scratch_recomputation(self):
        rng = np.random.default_rng(11)
        for method in METHODS:
            profs = [
                profile(f"t{i}", rng.uniform(0, 50, size=rng.integers(1, 10)).tolist(), method)
                for i in range(50)
            ]
            got = global_threshold(profs, method)
            want = stat_threshold([stat_threshold(p.dists, method) for p in profs], method)
            assert got.value == pytest.approx(want, abs=1e-9)


class TestClassifyItem:
    def test_zero_distance_is_instance(self):
        assert classify_item(0.0, profile("t", [0.0])) == INSTANCE
        assert classify_item(0.0, 0.0) == INSTANCE

    def test_boundary_counts_as_instance(self):
        p = profile("t", [1.0, 3.0], method="max")
        assert classify_item(3.0, p) == INSTANCE

    def test_just_past_boundary_is_non_templatic(self):
        p = profile("t", [1.0, 3.0], method="max")
        assert classify_item(np.nextafter(3.0, 4.0), p) == NON_TEMPLATIC

    def test_accepts_global_threshold(self):
        g = GlobalThreshold(method="max", value=2.0, n_contributing_templates=3)
        assert classify_item(2.0, g) == INSTANCE
        assert classify_item(2.1, g) == NON_TEMPLATIC

    def test_negative_distance_rejected(self):
        with pytest.raises(ValueError):
            classify_item(-1.0, 1.0)


class TestOODFilters:
    def test_max_boundary_keeps(self):
        f = build_ood_filter([1.0, 2.0, 3.0, 4.0], "max")
        assert ood_keep(4.0, f)
        assert not ood_keep(4.0001, f)

    def test_iqr_hand_arithmetic(self):
        # Q1 = 1.75, Q3 = 3.25, bound = 3.25 + 1.5 * 1.5 = 5.5
        f = build_ood_filter([1.0, 2.0, 3.0, 4.0], "iqr")
        assert f.bound == pytest.approx(5.5)
        assert ood_keep(5.0, f)
        assert not ood_keep(5.6, f)

    def test_three_sigma_and_mad_bounds(self):
        dists = [1.0, 2.0, 3.0, 4.0]
        f3 = build_ood_filter(dists, "three_sigma")
        assert f3.bound == pytest.approx(2.5 + 3 * np.std(dists))
        fm = build_ood_filter(dists, "mad")
        # median 2.5, |d - 2.5| = [1.5, 0.5, 0.5, 1.5], MAD = 1.0
        assert fm.bound == pytest.approx(2.5 + 3.0)

    def test_huge_distance_discarded_under_every_kind(self):
        for kind in ("iqr", "three_sigma", "mad", "max"):
            f = build_ood_filter([1.0, 2.0, 3.0, 4.0], kind)
            assert not ood_keep(1e9, f)

    def test_single_example_falls_back_to_max(self):
        for kind in ("iqr", "three_sigma", "mad"):
            f = build_ood_filter([2.0], kind)
            assert f.kind == "max"
            assert f.requested_kind == kind
            assert f.bound == 2.0

    def test_max_kind_equals_classify_with_max_method(self):
        rng = np.random.default_rng(12)
        dists = rng.uniform(0, 10, size=8).tolist()
        f = build_ood_filter(dists, "max")
        p = profile("t", dists, method="max")
        for d in rng.uniform(0, 15, size=50):
            assert ood_keep(float(d), f) == (classify_item(float(d), p) == INSTANCE)

    def test_empty_distances_rejected(self):
        with pytest.raises(EmptyDistancesError):
            build_ood_filter([], "max")


class TestBuildProfiles:
    def test_templates_without_examples_use_global_fallback(self):
        matrix = make_matrix([[0.0, 0.0], [1.0, 0.0], [5.0, 0.0]])
        templates = [
            make_template("a", image_row=0, example_rows=[1]),  # dist 1
            make_template("b", image_row=2, example_rows=[]),
        ]
        profiles, glob = build_profiles(templates, matrix, "max")
        assert profiles["a"].threshold == 1.0
        assert not profiles["a"].fallback
        assert profiles["b"].fallback
        assert profiles["b"].threshold == glob.value == 1.0
        assert glob.n_contributing_templates == 1

    def test_method_ordering_nests_instance_sets(self):
        rng = np.random.default_rng(13)
        templates, matrix, centers = clustered_kb(6, 5, 8, spread=1.0, rng=rng)
        by_method = {m: build_profiles(templates, matrix, m)[0] for m in METHODS}
        for t in templates:
            for d in rng.uniform(0, 6, size=20):
                inst = {
                    m: classify_item(float(d), by_method[m][t.template_id]) == INSTANCE
                    for m in METHODS
                }
                if inst["p25"]:
                    assert inst["median"]
                if inst["p25"] or inst["median"] or inst["mean"]:
                    assert inst["max"]

    def test_save_load_round_trip(self, tmp_path):
        matrix = make_matrix([[0.0, 0.0], [1.0, 0.0], [5.0, 0.0]])
        templates = [
            make_template("a", image_row=0, example_rows=[1]),
            make_template("b", image_row=2, example_rows=[]),
        ]
        profiles, glob = build_profiles(templates, matrix, "median")
        path = tmp_path / "thresholds.json"
        save_thresholds(profiles, glob, path)
        loaded, loaded_glob = load_thresholds(path)
        assert loaded_glob == glob
        for tid, prof in profiles.items():
            assert loaded[tid].threshold == prof.threshold
            assert loaded[tid].n_examples == prof.n_examples
            assert loaded[tid].fallback == prof.fallback
