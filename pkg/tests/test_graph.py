import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spqn.builders import build_leaf_cmo, random_cmo_network
from spqn.graph import (
    STAR,
    Block,
    Indicator,
    Network,
    NetworkBuilder,
    Product,
    Quotient,
    StructuralError,
    Sum,
    as_evidence_batch,
    bits,
    child_dependency_graph,
    compute_scopes,
    format_evidence,
    members,
    parse_evidence,
    star_mask,
    topological_order,
)


def quotient_example():
    """P(X1, X2 | X3) / P(X2 | X3) built from indicators over variables 1..3."""
    b = NetworkBuilder(4)
    i1, i2, i3 = (b.indicator(v, 1) for v in (1, 2, 3))
    num = b.quotient(b.product([i1, i2, i3]), i3)
    den = b.quotient(b.product([i2, i3]), i3)
    root = b.quotient(num, den)
    net, _ = b.build(root)
    return net, num, den, root


class TestBitsets:
    def test_round_trip(self):
        assert members(bits([0, 3, 5])) == [0, 3, 5]
        assert bits([]) == 0

    @given(st.sets(st.integers(0, 200)))
    def test_members_inverts_bits(self, s):
        assert members(bits(s)) == sorted(s)


class TestScopes:
    def test_indicator(self):
        b = NetworkBuilder(5)
        net, _ = b.build(b.indicator(3, 1))
        assert net.scopes.sets(net.root) == ({3}, {3}, set())

    def test_quotient_effective_scope(self):
        net, num, den, root = quotient_example()
        s = net.scopes
        assert s.sets(num) == ({1, 2, 3}, {1, 2}, {3})
        assert s.sets(den) == ({2, 3}, {2}, {3})
        assert s.sets(root) == ({1, 2, 3}, {1}, {2, 3})

    def test_product_of_indicators(self):
        b = NetworkBuilder(3)
        net, _ = b.build(b.product([b.indicator(1, 0), b.indicator(2, 1)]))
        assert net.scopes.sets(net.root) == ({1, 2}, {1, 2}, set())

    def test_scopes_are_cached(self):
        net, *_ = quotient_example()
        assert net.scopes is net.scopes
        assert compute_scopes(net).effective == net.scopes.effective

    @settings(max_examples=15, deadline=None)
    @given(st.integers(2, 7), st.integers(0, 10_000))
    def test_conditional_is_scope_minus_effective(self, n, seed):
        net, _, _ = random_cmo_network(n, depth=3, seed=seed)
        s = net.scopes
        for v in range(len(net)):
            assert s.conditional[v] == s.scope[v] & ~s.effective[v]
            assert s.effective[v] & ~s.scope[v] == 0

    @settings(max_examples=15, deadline=None)
    @given(st.integers(2, 6), st.integers(0, 10_000))
    def test_no_quotients_means_no_conditioning(self, n, seed):
        b = NetworkBuilder(n)
        rng = np.random.default_rng(seed)
        prods = [b.product([b.indicator(v, int(rng.integers(2))) for v in range(n)]) for _ in range(3)]
        net, _ = b.build(b.sum(prods))
        assert net.scopes.effective == net.scopes.scope


class TestTopologicalOrder:
    def test_single_indicator(self):
        assert topological_order((Indicator(0, 1),), 0) == [0]

    def test_leaf_cmo(self):
        net, _, _ = build_leaf_cmo(0)
        order = net.order
        assert order[-1] == net.root and sorted(order[:2]) == [0, 1]

    def test_shared_children_appear_once(self):
        net, *_ = quotient_example()
        assert sorted(net.order) == list(range(len(net)))
        position = {v: k for k, v in enumerate(net.order)}
        for v, node in enumerate(net.nodes):
            if not isinstance(node, Indicator):
                assert all(position[c] < position[v] for c in node.children)

    def test_ties_broken_by_node_id(self):
        nodes = (Indicator(0, 0), Indicator(0, 1), Sum((1, 0), 0))
        assert topological_order(nodes, 2) == [0, 1, 2]

    def test_cycle_names_a_node(self):
        nodes = (Indicator(0, 1), Product((0, 2)), Product((1,)))
        with pytest.raises(StructuralError) as err:
            topological_order(nodes, 1)
        assert err.value.node in (1, 2)


class TestNetworkInvariants:
    def test_unreachable_node_rejected(self):
        with pytest.raises(StructuralError, match="unreachable"):
            Network(1, (Indicator(0, 0), Indicator(0, 1)), 0)

    def test_cycle_rejected(self):
        with pytest.raises(StructuralError):
            Network(1, (Indicator(0, 0), Product((0, 2)), Product((1,))), 1)

    def test_indicator_variable_range(self):
        with pytest.raises(StructuralError):
            Network(1, (Indicator(1, 0),), 0)
        with pytest.raises(StructuralError):
            Network(1, (Indicator(0, 2),), 0)

    def test_empty_children_rejected(self):
        with pytest.raises(StructuralError):
            Network(1, (Product(()),), 0)

    def test_block_size_must_match(self):
        nodes = (Indicator(0, 0), Indicator(0, 1), Sum((0, 1), 0))
        with pytest.raises(StructuralError, match="logits"):
            Network(1, nodes, 2, (Block(0, 3),))
        with pytest.raises(StructuralError, match="missing block"):
            Network(1, nodes, 2, ())

    def test_dangling_reference(self):
        with pytest.raises(StructuralError):
            Network(1, (Indicator(0, 0), Quotient(0, 7)), 1)

    def test_count_kinds(self):
        net, *_ = quotient_example()
        assert net.count_kinds() == {"indicator": 3, "sum": 0, "product": 2, "quotient": 3}

    def test_subnetwork(self):
        net, num, _, _ = quotient_example()
        sub = net.subnetwork(num)
        assert len(sub) == 5
        assert sub.scopes.sets(sub.root) == ({1, 2, 3}, {1, 2}, {3})


class TestDependencyGraph:
    def _product(self, children_spec):
        """Product over quotient children; each given as (effective var, conditioning var or None)."""
        b = NetworkBuilder(3)
        kids = []
        for eff, cond in children_spec:
            if cond is None:
                kids.append(b.indicator(eff, 1))
            else:
                c = b.indicator(cond, 1)
                kids.append(b.quotient(b.product([b.indicator(eff, 1), c]), c))
        net, _ = b.build(b.product(kids))
        return net, kids

    def test_independent_children(self):
        net, _ = self._product([(0, None), (1, None)])
        g = child_dependency_graph(net, net.scopes, net.root)
        assert g.edges == frozenset()
        assert not g.has_cycle()

    def test_single_edge(self):
        net, (c1, c2) = self._product([(1, None), (2, 1)])
        g = child_dependency_graph(net, net.scopes, net.root)
        assert set(g.edges) == {(c1, c2)}
        assert net.product_child_order(net.root) == [c1, c2]

    def test_two_cycle(self):
        net, (c1, c2) = self._product([(1, 2), (2, 1)])
        g = child_dependency_graph(net, net.scopes, net.root)
        assert set(g.edges) == {(c1, c2), (c2, c1)}
        assert g.has_cycle()
        assert net.product_child_order(net.root) is None


class TestEvidence:
    def test_parse_and_format(self):
        x = parse_evidence("01*1")
        assert x.tolist() == [0, 1, STAR, 1]
        assert format_evidence(x) == "01*1"
        assert star_mask(x) == 0b100

    def test_bad_character(self):
        with pytest.raises(ValueError, match="'2'"):
            parse_evidence("0120")

    @given(st.text(alphabet="01*", min_size=1, max_size=40))
    def test_round_trip(self, text):
        assert format_evidence(parse_evidence(text)) == text

    def test_batch_coercion(self):
        assert as_evidence_batch(["01", "1*"], 2).shape == (2, 2)
        assert as_evidence_batch("01", 2).shape == (1, 2)
        with pytest.raises(ValueError, match="length 3"):
            as_evidence_batch("01", 3)
        with pytest.raises(ValueError):
            as_evidence_batch([[0, 5]], 2)


class TestBuilder:
    def test_indicators_are_shared(self):
        b = NetworkBuilder(2)
        assert b.indicator(1, 0) == b.indicator(1, 0)
        assert b.indicator(1, 0) != b.indicator(1, 1)

    def test_shared_block_and_fresh_logits_conflict(self):
        b = NetworkBuilder(1)
        blk = b.new_block([0.0, 0.0])
        with pytest.raises(ValueError):
            b.sum([b.indicator(0, 0), b.indicator(0, 1)], block=blk, logits=[1.0, 2.0])

    def test_build_returns_initial_logits(self):
        b = NetworkBuilder(1)
        root = b.sum([b.indicator(0, 0), b.indicator(0, 1)], logits=[1.0, 2.0])
        net, params = b.build(root)
        assert params.logits.tolist() == [1.0, 2.0]
        assert net.num_params == 2
