import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spqn.builders import (
    ConvLayerSpec,
    ConvNetSpec,
    SPQNBuilder,
    build_conv_spqn,
    build_leaf_cmo,
    build_trianglefree_spqn,
    edge_index,
    random_cmo_network,
)
from spqn.graph import STAR, NetworkBuilder
from spqn.validate import (
    CmoAnnotation,
    ValidationReport,
    check_complete,
    check_conditional_dnc,
    check_decomposable,
    check_dnc,
    check_root_unconditional,
    check_soundness_bruteforce,
    check_star_pattern,
    check_valid_cmo,
    infer_cmo_annotations,
    star_pattern_ok,
)

SMALL_CONV = ConvNetSpec(8, [ConvLayerSpec(2, 4, 2), ConvLayerSpec(4, 4, 1)], leaf_channels=2)


def naive_triangle_network(m):
    """Product over every triangle of 1[e1=0] + 1[e2=0] + 1[e3=0]."""
    b = NetworkBuilder(m * (m - 1) // 2)
    e = lambda i, j: edge_index(i, j, m)  # noqa: E731
    terms = [b.sum([b.indicator(e(i, j), 0), b.indicator(e(j, k), 0), b.indicator(e(i, k), 0)])
             for i, j, k in itertools.combinations(range(1, m + 1), 3)]
    return b.build(terms[0] if len(terms) == 1 else b.product(terms))


def conditional_on(b, eff_var, cond_var):
    """A CMO for P(x_eff | x_cond)."""
    a = [[b.leaf_cmo(cond_var, (1.0, -1.0))], [b.leaf_cmo(cond_var, (-1.0, 1.0))]]
    bb = [[b.leaf_cmo(eff_var, (0.5, 0.0))], [b.leaf_cmo(eff_var, (0.0, 0.7))]]
    return b.cmo(a, bb, [0.2, -0.1])


class TestReport:
    def test_passed_iff_no_violations(self):
        r = ValidationReport()
        assert r.passed and bool(r) and r.lines() == ["PASS"]
        r.add(4, "cond-complete", "children differ")
        assert not r.passed and r.rules == {"cond-complete"}
        assert r.lines() == ["cond-complete\tnode=4\tchildren differ", "FAIL"]


class TestCompleteness:
    def test_same_variable_passes(self):
        b = NetworkBuilder(2)
        net, _ = b.build(b.sum([b.indicator(1, 0), b.indicator(1, 1)]))
        assert check_complete(net).passed
        assert check_complete(net, conditional=True).passed

    def test_different_variables_fail(self):
        b = NetworkBuilder(3)
        net, _ = b.build(b.sum([b.indicator(1, 1), b.indicator(2, 1)]))
        assert check_complete(net).rules == {"complete"}
        assert check_complete(net, conditional=True).rules == {"cond-complete"}

    def test_naive_triangle_sum(self):
        net, _ = naive_triangle_network(3)
        assert "complete" in check_complete(net).rules


class TestDecomposability:
    def test_independent_leaves(self):
        b = SPQNBuilder(2)
        net, _ = b.build(b.product([b.leaf_cmo(0), b.leaf_cmo(1)]))
        assert check_decomposable(net).passed
        assert check_decomposable(net, conditional=True).passed

    def test_naive_triangle_product(self):
        net, _ = naive_triangle_network(4)
        assert "decomp-disjoint" in check_decomposable(net).rules

    def test_two_cycle(self):
        b = SPQNBuilder(2)
        root = b.product([conditional_on(b, 0, 1), conditional_on(b, 1, 0)])
        net, _ = b.build(root)
        report = check_decomposable(net, conditional=True)
        assert report.rules == {"cond-decomp-acyclic"}
        assert [v.node for v in report.violations] == [root]

    @settings(max_examples=20, deadline=None)
    @given(st.integers(1, 5), st.integers(0, 10_000))
    def test_modes_agree_without_quotients(self, n, seed):
        rng = np.random.default_rng(seed)
        leaves = [(int(rng.integers(n)), int(rng.integers(2))) for _ in range(3)]
        for kind in ("product", "sum"):
            b = NetworkBuilder(n)
            kids = [b.indicator(v, x) for v, x in leaves]
            net, _ = b.build(getattr(b, kind)(kids))
            for check in (check_complete, check_decomposable):
                assert check(net).passed == check(net, conditional=True).passed

    def test_strict_dnc_rejects_quotients(self, pair):
        net, _, _ = pair
        assert "dnc-quotient" in check_dnc(net).rules
        assert check_conditional_dnc(net).passed


class TestValidCmo:
    def test_leaf(self):
        net, _, anns = build_leaf_cmo(0, (np.log(0.3), np.log(0.7)))
        assert check_valid_cmo(net, None, anns).passed

    def test_conditional_pair(self, pair):
        net, _, anns = pair
        assert check_valid_cmo(net, None, anns).passed
        assert check_valid_cmo(net, None, infer_cmo_annotations(net)).passed

    def test_conv(self):
        net, _, anns = build_conv_spqn(SMALL_CONV, seed=0)
        assert check_valid_cmo(net, None, anns).passed
        assert check_valid_cmo(net, None, infer_cmo_annotations(net)).passed

    def test_unequal_b_scopes(self):
        b = SPQNBuilder(3)
        root = b.cmo([[]] * 2, [[b.leaf_cmo(1)], [b.leaf_cmo(2)]])
        net, _, anns = b.finish(root)
        assert "cmo-b-scope" in check_valid_cmo(net, None, anns).rules

    def test_b_to_a_arrow(self):
        b = SPQNBuilder(2)
        a_child = conditional_on(b, 0, 1)
        root = b.cmo([[a_child]], [[b.leaf_cmo(1)]])
        net, _, anns = b.finish(root)
        assert "cmo-b-to-a" in check_valid_cmo(net, None, anns).rules

    def test_indicator_outside_base_case(self):
        b = SPQNBuilder(2)
        root = b.cmo([[]] * 2, [[b.indicator(0, 0), b.leaf_cmo(1)], [b.indicator(0, 1), b.leaf_cmo(1)]])
        net, _, anns = b.finish(root)
        assert "cmo-base" in check_valid_cmo(net, None, anns).rules

    def test_missing_annotation_is_an_input_error(self, pair):
        net, _, anns = pair
        with pytest.raises(ValueError, match="annotation"):
            check_valid_cmo(net, None, [a for a in anns if a.denominator is None])

    def test_foreign_node(self):
        b = SPQNBuilder(2)
        net, _, anns = b.finish(b.product([b.leaf_cmo(0), b.leaf_cmo(1)]))
        assert "cmo-foreign" in check_valid_cmo(net, None, anns).rules

    def test_broken_structure(self):
        net, _, anns = build_leaf_cmo(0)
        bad = CmoAnnotation(anns[0].root, 3, 0, 1, ((),) * 3, ((0,), (1,), (0,)), 0, anns[0].root)
        assert "cmo-structure" in check_valid_cmo(net, None, [bad]).rules

    @settings(max_examples=25, deadline=None)
    @given(st.integers(2, 8), st.integers(1, 4), st.integers(0, 100_000))
    def test_valid_cmo_implies_sound(self, n, depth, seed):
        net, params, anns = random_cmo_network(n, depth=depth, seed=seed)
        assert check_valid_cmo(net, None, anns).passed
        assert check_conditional_dnc(net).passed
        assert check_soundness_bruteforce(net, None, params).passed


class TestSoundness:
    def test_leaf(self, leaf):
        net, params, _ = leaf
        assert check_soundness_bruteforce(net, None, params).passed

    def test_trianglefree(self):
        net, params = build_trianglefree_spqn(3)
        assert net.quotients
        assert check_soundness_bruteforce(net, None, params).passed

    def test_unrelated_denominator(self):
        b = SPQNBuilder(2)
        root = b.quotient(b.leaf_cmo(0, (0.2, 0.1)), b.leaf_cmo(1, (1.0, -1.0)))
        net, params = b.build(root)
        assert check_soundness_bruteforce(net, None, params).rules == {"sound-marginal", "sound-strong"}

    def test_vanishing_denominator(self):
        b = SPQNBuilder(2)
        num = b.product([b.leaf_cmo(0), b.indicator(1, 1)])
        net, params = b.build(b.quotient(num, b.indicator(1, 1)))
        report = check_soundness_bruteforce(net, None, params)
        assert report.rules == {"sound-positive"}

    def test_enumeration_bound(self):
        b = SPQNBuilder(25)
        net, params = b.build(b.product([b.leaf_cmo(v) for v in range(25)]))
        with pytest.raises(ValueError, match="at most 20"):
            check_soundness_bruteforce(net, None, params)


class TestRootUnconditional:
    def test_trianglefree(self):
        net, _ = build_trianglefree_spqn(3)
        assert check_root_unconditional(net).passed

    def test_bare_factor(self):
        net, _ = build_trianglefree_spqn(3, root_pair=(2, 3))
        assert check_root_unconditional(net).rules == {"root-unconditional"}

    def test_conv(self):
        net, _, _ = build_conv_spqn(SMALL_CONV)
        assert check_root_unconditional(net).passed

    def test_missing_variable(self):
        b = SPQNBuilder(3)
        net, _ = b.build(b.product([b.leaf_cmo(0), b.leaf_cmo(1)]))
        assert check_root_unconditional(net).rules == {"root-unconditional"}


class TestStarPattern:
    def test_extremes(self, pair):
        net, _, _ = pair
        assert check_star_pattern(net, None, [STAR, STAR])
        assert check_star_pattern(net, None, [0, 1])

    def test_pair(self, pair):
        net, _, _ = pair
        # marginalizing the child keeps the rule; marginalizing the parent alone does not
        assert check_star_pattern(net, None, [1, STAR])
        assert not check_star_pattern(net, None, [STAR, 1])

    def test_conv_early_pixel(self):
        net, _, _ = build_conv_spqn(SMALL_CONV)
        x = np.zeros(8, dtype=np.int8)
        x[1] = STAR
        assert not check_star_pattern(net, None, x)
        x[2:] = STAR
        assert check_star_pattern(net, None, x)

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.sampled_from([0, 1, STAR]), min_size=8, max_size=8))
    def test_vectorized_agrees(self, x):
        net, _, _ = build_conv_spqn(SMALL_CONV)
        assert bool(star_pattern_ok(net, np.array([x]))[0]) == check_star_pattern(net, None, x)
