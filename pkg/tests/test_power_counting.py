import itertools
from fractions import Fraction

import pytest

from kpzlab.graphs import (
    LabelValue,
    edge_sets,
    enumerate_contractions,
    merge_multiedges,
    parse_partial_graph,
)
from kpzlab.power_counting import (
    KPZAllocationRule,
    Scaling,
    UnsupportedConfigurationError,
    allocation_assignment,
    c_e_weight_raw_infimum,
    c_e_weight_value,
    c_e_weights,
    check_admissible,
    check_condition_A,
    check_condition_B,
    check_contracted,
    homogeneity_exponent,
    kpz_allocation,
)

PAIR_SOURCE = """\
graph pair
vertex 0 origin
vertex u star
vertex v1 external
vertex v2 external
star-edge 0 u
edge u v1 label 2+1d
edge u v2 label 2+1d
"""

CHAIN_SOURCE = """\
graph chain
vertex 0 origin
vertex u star
vertex w internal
vertex a1 external
vertex a2 external
vertex a3 external
star-edge 0 u
edge u w label 2+1d
edge u a1 label 2+1d
edge w a2 label 2+1d
edge w a3 label 2+1d
"""

MARGINAL_SOURCE = """\
graph marginal
vertex 0 origin
vertex u star
vertex v1 external
vertex v2 external
star-edge 0 u
edge u v1 label 3/2
edge u v2 label 2+1d
"""


@pytest.fixture
def pair():
    return parse_partial_graph(PAIR_SOURCE)


@pytest.fixture
def chain():
    return parse_partial_graph(CHAIN_SOURCE)


class BrokenRule(KPZAllocationRule):
    """Deliberately bad: dumps the whole budget on the first edge group."""

    def group_values(self, multiplicities):
        mults = tuple(multiplicities)
        deg = sum(mults)
        if deg == 2:
            return tuple(Fraction(0) for _ in mults)
        budget = Fraction(deg - 2, 2) * self.scaling.total
        values = [Fraction(0)] * len(mults)
        values[0] = budget / mults[0]
        return tuple(values)


class TestAllocation:
    def test_even_allocation_degree_four(self, pair):
        full = [c for c in enumerate_contractions(pair, 2) if len(c.classes) == 1][0]
        values = kpz_allocation(full, full.ex_vertices[0])
        assert sorted(values.values()) == [Fraction(3, 4)] * 4

    def test_degree_two_zero(self, pair):
        cons = enumerate_contractions(pair, 2)
        cross = [c for c in cons if len(c.classes) == 2][0]
        for v in cross.ex_vertices:
            assert set(kpz_allocation(cross, v).values()) == {Fraction(0)}

    def test_divergence_priority(self, chain):
        # glue copy-1 a2,a3 (same internal neighbour) with one external of copy 2
        cons = enumerate_contractions(chain, 2)
        target = None
        for c in cons:
            for i, cls in enumerate(c.classes):
                if (1, "a2") in cls and (1, "a3") in cls and len(cls) == 3:
                    target = (c, c.ex_vertex(i), cls)
        assert target is not None
        G, v, cls = target
        values = kpz_allocation(G, v)
        by_value = sorted(values.values())
        assert by_value == [Fraction(0), Fraction(3, 4), Fraction(3, 4)]
        # the zero sits on the single edge, the 3/4 on the double pair
        edges = G.edge_list()
        doubles = [i for i in values
                   if sum(1 for j in values if edges[j].endpoints() == edges[i].endpoints()) == 2]
        assert all(values[i] == Fraction(3, 4) for i in doubles)

    def test_triple_edge_unsupported(self):
        rule = KPZAllocationRule()
        with pytest.raises(UnsupportedConfigurationError):
            rule.group_values((3,))

    def test_budget_identity(self):
        rule = KPZAllocationRule()
        for mults in [(1, 1), (2,), (1, 1, 1), (2, 1), (2, 2), (1, 1, 1, 1),
                      (3, 2), (2, 2, 2), (4, 3, 1)]:
            deg = sum(mults)
            values = rule.group_values(mults)
            total = sum(m * v for m, v in zip(mults, values))
            assert total == Fraction(deg - 2, 2) * 3


class TestSubgraphWeights:
    def test_pair_full_subset(self, pair):
        weights = c_e_weights(pair, {"u", "v1", "v2"})
        ext_edges = [i for i, e in enumerate(pair.edges) if not e.distinguished]
        assert all(weights[i] == Fraction(3, 4) for i in ext_edges)

    def test_chain_three_externals(self, chain):
        weights = c_e_weights(chain, {"u", "w", "a1", "a2", "a3"})
        nonzero = sorted(v for v in weights.values() if v)
        assert nonzero == [Fraction(3, 4)] * 3  # 3/2 - 3/4

    def test_origin_subset(self, pair):
        weights = c_e_weights(pair, {"0", "u", "v1"})
        assert max(weights.values()) == Fraction(3, 2)

    def test_two_distinct_neighbours(self, chain):
        weights = c_e_weights(chain, {"a1", "a2"})
        nonzero = {v for v in weights.values() if v}
        assert nonzero == {Fraction(1, 2)}

    def test_single_external_zero(self, chain):
        weights = c_e_weights(chain, {"a1", "u"})
        assert set(weights.values()) == {Fraction(0)}

    def test_closed_form_matches_min_formula(self):
        s = Fraction(3)
        for n in range(3, 7):
            closed = c_e_weight_value(n, False, False)
            candidates = [Fraction(n + k - 2, 2) * s / (n + k) for k in range(1, 30)]
            assert closed == min(candidates)

    def test_raw_infimum_agrees(self, pair, chain):
        for H, subset in [(pair, {"u", "v1", "v2"}), (chain, {"a2", "a3"}),
                          (chain, {"a1", "a2", "a3"}), (chain, {"a1"})]:
            ext = [v for v in H.external_ids if v in subset]
            n = len(ext)
            neighbours = {H.incident(v)[0].other(v) for v in ext}
            same = n == 2 and len(neighbours) == 1
            closed = c_e_weight_value(n, same, False)
            raw = c_e_weight_raw_infimum(H, subset, p_cap=3)
            assert raw == closed


class TestConditionsOnPartialGraphs:
    def test_pair_condition_A_values(self, pair):
        report = check_condition_A(pair, collect_checks=True)
        assert report.verdict
        by_subset = {w.subset: w for w in report.checks}
        w = by_subset[("u", "v1")]
        assert (w.lhs, w.rhs) == (LabelValue(2, 1), LabelValue(3, 0))
        w = by_subset[("u", "v1", "v2")]
        assert (w.lhs, w.rhs) == (LabelValue(Fraction(5, 2), 2), LabelValue(3, 0))

    def test_pair_condition_B_values(self, pair):
        report = check_condition_B(pair, collect_checks=True)
        assert report.verdict
        by_subset = {w.subset: w for w in report.checks}
        assert by_subset[("v1",)].lhs == LabelValue(2, 1)
        assert by_subset[("v1",)].rhs == LabelValue(Fraction(3, 2), 0)
        assert by_subset[("v1", "v2")].lhs == LabelValue(4, 2)
        assert by_subset[("v1", "v2")].rhs == LabelValue(3, 0)

    def test_chain_condition_A_full_subset(self, chain):
        report = check_condition_A(chain, collect_checks=True)
        assert report.verdict
        by_subset = {w.subset: w for w in report.checks}
        w = by_subset[("a1", "a2", "a3", "u", "w")]
        assert w.lhs == LabelValue(Fraction(23, 4), 4)  # 8 + 4d - (3/4)*3
        assert w.rhs == LabelValue(6, 0)

    def test_strictness_failure(self):
        g = parse_partial_graph(MARGINAL_SOURCE)
        report = check_condition_B(g)
        assert not report.verdict
        assert report.witnesses[0].subset == ("v1",)
        assert report.witnesses[0].lhs == LabelValue(Fraction(3, 2), 0)

    def test_origin_fast_path_agrees(self, pair, chain):
        for g in (pair, chain):
            full = check_condition_A(g, origin_fast_path=False)
            fast = check_condition_A(g, origin_fast_path=True)
            assert full.verdict == fast.verdict

    def test_exponents(self, pair, chain):
        assert homogeneity_exponent(pair) == LabelValue(-1, -2)
        assert homogeneity_exponent(chain) == LabelValue(Fraction(-1, 2), -4)

    def test_reduced_graph_exponent(self):
        src = """\
graph reduced
vertex 0 origin
vertex u star
vertex a1 external
star-edge 0 u
edge u a1 label 2+1d
"""
        g = parse_partial_graph(src)
        assert homogeneity_exponent(g) == LabelValue(Fraction(-1, 2), -1)


def reference_contracted_check(G, rule):
    """Slow exact reference for check_contracted (pure Fractions)."""
    edges = G.edge_list()
    if rule is not None:
        alloc = allocation_assignment(G, rule)
        weights = [e.label - LabelValue.coerce(
            sum((alloc.get((v, i), Fraction(0)) for v in (e.u, e.v)), Fraction(0))
        ) for i, e in enumerate(edges)]
    else:
        weights = [e.label for e in edges]
    merged = merge_multiedges(G, weights)
    vertices = merged.vertex_ids
    s = Fraction(3)
    ok = True
    for r in range(2, len(vertices) + 1):
        for sub in itertools.combinations(vertices, r):
            inside, _ = edge_sets(merged, sub)
            lhs = sum((e.label for e in inside), LabelValue())
            if not (lhs < LabelValue.coerce(s * (len(sub) - 1))):
                ok = False
    allowed = [v for v in vertices if v not in merged.star_set]
    for r in range(1, len(allowed) + 1):
        for sub in itertools.combinations(allowed, r):
            _, meeting = edge_sets(merged, sub)
            lhs = sum((e.label for e in meeting), LabelValue())
            if not (lhs > LabelValue.coerce(s * len(sub))):
                ok = False
    return ok


class TestContractedChecker:
    def test_full_gluing_passes_with_rule(self, pair):
        full = [c for c in enumerate_contractions(pair, 2) if len(c.classes) == 1][0]
        report = check_contracted(full, KPZAllocationRule())
        assert report.verdict
        # alpha = p * alpha_bar(H)
        assert report.exponent == LabelValue(-2, -4)

    def test_full_gluing_fails_without_rule(self, pair):
        full = [c for c in enumerate_contractions(pair, 2) if len(c.classes) == 1][0]
        report = check_contracted(full, None)
        assert not report.verdict
        w = report.witnesses[0]
        assert w.lhs == LabelValue(4, 2)
        assert w.rhs == LabelValue(3, 0)
        assert len(w.subset) == 2

    def test_chain_full_gluing_fails_without_rule(self, chain):
        full = [c for c in enumerate_contractions(chain, 2) if len(c.classes) == 1][0]
        assert not check_contracted(full, None).verdict
        assert check_contracted(full, KPZAllocationRule()).verdict

    def test_alpha_scales_with_p(self, pair, chain):
        for H in (pair, chain):
            alpha_bar = homogeneity_exponent(H)
            for p in (2, 3):
                for G in enumerate_contractions(H, p):
                    report = check_contracted(G, KPZAllocationRule())
                    assert report.exponent == p * alpha_bar

    def test_matches_reference_implementation(self, pair, chain):
        for H in (pair, chain):
            for G in enumerate_contractions(H, 2):
                for rule in (KPZAllocationRule(), None):
                    fast = check_contracted(G, rule).verdict
                    slow = reference_contracted_check(G, rule)
                    assert fast == slow

    def test_all_small_contractions_pass(self, pair, chain):
        for H in (pair, chain):
            for p in (2, 3):
                for G in enumerate_contractions(H, p):
                    assert check_contracted(G, KPZAllocationRule()).verdict


class TestAdmissibility:
    def test_kpz_rule_admissible(self, pair, chain):
        for H in (pair, chain):
            report = check_admissible(KPZAllocationRule(), H, p_max=3)
            assert report.verdict, [str(w.subset) for w in report.witnesses]

    def test_broken_rule_fails_subset_floor(self, pair):
        report = check_admissible(BrokenRule(), pair, p_max=3)
        assert not report.verdict
        assert any("subset floor" in w.subset[0] for w in report.witnesses)

    def test_transfer_bound_tight_for_two_pairs(self, chain):
        # merging two degree-2 glued vertices transfers exactly |s|
        rule = KPZAllocationRule()
        counts = [(1, 0), (1, 0), (0, 1), (0, 1)]
        v1 = rule.group_values((1, 1))
        v2 = rule.group_values((1, 1))
        vm = rule.group_values((1, 1, 1, 1))
        transfer = sum(vm) - sum(v1) - sum(v2)
        assert transfer == Fraction(3)

    def test_rule_respects_decay_cap(self):
        rule = KPZAllocationRule()
        for mults in [(1, 1), (2, 1), (1, 1, 1), (2, 2), (1, 1, 1, 1, 1), (6, 6)]:
            assert all(v <= rule.max_value() for v in rule.group_values(mults))
