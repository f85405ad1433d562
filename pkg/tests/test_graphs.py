import random
from fractions import Fraction

import pytest

from kpzlab.cumulants import enumerate_wick_partitions
from kpzlab.graphs import (
    ContractedGraph,
    GraphParseError,
    LabelValue,
    automorphisms,
    canonical_key,
    edge_sets,
    enumerate_contractions,
    merge_multiedges,
    parse_partial_graph,
    serialize_partial_graph,
)

PAIR_SOURCE = """\
# two kernel legs from one internal vertex
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


@pytest.fixture
def pair_graph():
    return parse_partial_graph(PAIR_SOURCE)


@pytest.fixture
def chain_graph():
    return parse_partial_graph(CHAIN_SOURCE)


class TestLabelValue:
    def test_parse_forms(self):
        assert LabelValue.parse("2") == LabelValue(2, 0)
        assert LabelValue.parse("2+1d") == LabelValue(2, 1)
        assert LabelValue.parse("5/2-1d") == LabelValue(Fraction(5, 2), -1)
        assert LabelValue.parse("12/5") == LabelValue(Fraction(12, 5), 0)
        assert LabelValue.parse("1d") == LabelValue(0, 1)
        assert LabelValue.parse("0") == LabelValue(0, 0)
        assert LabelValue.parse("3+2d") == LabelValue(3, 2)

    def test_str_round_trip(self):
        rng = random.Random(2)
        for _ in range(50):
            val = LabelValue(Fraction(rng.randint(-9, 9), rng.randint(1, 6)),
                             Fraction(rng.randint(-5, 5)))
            assert LabelValue.parse(str(val)) == val

    def test_ordering(self):
        # 2 + delta < 3 for all small delta, but 2 + delta > 2
        assert LabelValue(2, 1) < LabelValue(3, 0)
        assert not (LabelValue(2, 1) < LabelValue(2, 0))
        assert LabelValue(2, 0) < LabelValue(2, 1)
        assert LabelValue(2, -1) < LabelValue(2, 0)

    def test_arithmetic(self):
        a = LabelValue(2, 1)
        assert a + a == LabelValue(4, 2)
        assert a - LabelValue(Fraction(3, 4), 0) == LabelValue(Fraction(5, 4), 1)
        assert 2 * a == LabelValue(4, 2)
        assert (a + 1).q == 3

    def test_eval(self):
        assert LabelValue(2, 1).eval_at(Fraction(1, 800)) == Fraction(1601, 800)


class TestParser:
    def test_pair_graph_shape(self, pair_graph):
        assert len(pair_graph.external_ids) == 2
        assert len(pair_graph.internal_ids) == 1
        assert pair_graph.star == "u"
        assert pair_graph.degree("u") == 3

    def test_chain_graph_shape(self, chain_graph):
        assert len(chain_graph.external_ids) == 3
        assert len(chain_graph.internal_ids) == 2

    def test_zero_label_rejected(self):
        bad = PAIR_SOURCE.replace("edge u v2 label 2+1d", "edge u v2 label 0")
        with pytest.raises(GraphParseError, match="label 0"):
            parse_partial_graph(bad)

    def test_syntax_error_carries_line(self):
        bad = "graph g\nvertex 0 origin\nvertex u star\nedgy u 0\n"
        with pytest.raises(GraphParseError, match="line 4"):
            parse_partial_graph(bad)

    def test_external_degree_enforced(self):
        bad = PAIR_SOURCE + "edge v1 v2 label 1+1d\n"
        with pytest.raises(GraphParseError, match="degree 1"):
            parse_partial_graph(bad)

    def test_missing_star_edge(self):
        bad = "graph g\nvertex 0 origin\nvertex u star\nedge 0 u label 2\n"
        with pytest.raises(GraphParseError, match="star-edge"):
            parse_partial_graph(bad)

    def test_disconnected_rejected(self):
        bad = """\
graph g
vertex 0 origin
vertex u star
vertex a internal
vertex b internal
star-edge 0 u
edge 0 u label 1+0d
"""
        # a, b unreachable and degree-0; degree error fires first
        with pytest.raises(GraphParseError):
            parse_partial_graph(bad)

    def test_round_trip_isomorphic(self, pair_graph, chain_graph):
        for g in (pair_graph, chain_graph):
            again = parse_partial_graph(serialize_partial_graph(g))
            assert canonical_key(again) == canonical_key(g)

    def test_round_trip_after_renaming(self, chain_graph):
        text = serialize_partial_graph(chain_graph)
        renamed = (text.replace("a1", "zz1").replace("a2", "qq")
                   .replace("w", "mid"))
        assert canonical_key(parse_partial_graph(renamed)) == canonical_key(chain_graph)


class TestContractions:
    def test_pair_p2_count(self, pair_graph):
        cons = enumerate_contractions(pair_graph, 2)
        assert len(cons) == len(enumerate_wick_partitions(2, 2)) == 3

    def test_counts_match_partitions(self, pair_graph, chain_graph):
        for g, m in [(pair_graph, 2), (chain_graph, 3)]:
            for p in (2, 3):
                assert len(enumerate_contractions(g, p)) == \
                    len(enumerate_wick_partitions(m, p))

    def test_single_external_graph(self):
        src = """\
graph reduced
vertex 0 origin
vertex u star
vertex a1 external
star-edge 0 u
edge u a1 label 2+1d
"""
        g = parse_partial_graph(src)
        cons = enumerate_contractions(g, 2)
        assert len(cons) == 1
        assert cons[0].classes == (frozenset({(1, "a1"), (2, "a1")}),)

    def test_full_identification_multigraph(self, pair_graph):
        cons = enumerate_contractions(pair_graph, 2)
        full = [c for c in cons if len(c.classes) == 1][0]
        ex = full.ex_vertices[0]
        assert full.degree(ex) == 4
        # in-vertex degrees match the source internal degrees
        for v in full.in_vertices:
            assert full.degree(v) == 3

    def test_degrees_equal_class_sizes(self, chain_graph):
        for c in enumerate_contractions(chain_graph, 2):
            for i, cls in enumerate(c.classes):
                assert c.degree(c.ex_vertex(i)) == len(cls)

    def test_no_edge_between_ex_vertices(self, chain_graph):
        for c in enumerate_contractions(chain_graph, 3):
            ex = set(c.ex_vertices)
            for e in c.edge_list():
                assert not (e.u in ex and e.v in ex)


class TestEdgeSets:
    def test_inside_and_meeting(self, pair_graph):
        e0, e = edge_sets(pair_graph, {"u", "v1"})
        assert {frozenset((x.u, x.v)) for x in e0} == {frozenset(("u", "v1"))}
        assert len(e) == 3

    def test_empty_subset(self, pair_graph):
        assert edge_sets(pair_graph, set()) == ((), ())

    def test_chain_externals(self, chain_graph):
        e0, e = edge_sets(chain_graph, {"a1", "a2", "a3"})
        assert e0 == ()
        assert len(e) == 3

    def test_unknown_vertex(self, pair_graph):
        with pytest.raises(KeyError):
            edge_sets(pair_graph, {"nope"})


class TestMerge:
    def test_double_edge_merges(self, pair_graph):
        cons = enumerate_contractions(pair_graph, 2)
        full = [c for c in cons if len(c.classes) == 1][0]
        merged = merge_multiedges(full)
        labels = sorted(str(e.label) for e in merged.edges if not e.distinguished)
        assert labels == ["4+2d", "4+2d"]
        # two distinguished edges 0-star remain separate from each other?
        # they join distinct star copies, so there is one per copy
        assert sum(1 for e in merged.edges if e.distinguished) == 2

    def test_no_multiedges_identity(self, chain_graph):
        # cross pairing without multi-edges: merged graph has same edge count
        cons = enumerate_contractions(chain_graph, 2)
        plain = [c for c in cons if all(len(cls) == 2 for cls in c.classes)][0]
        merged = merge_multiedges(plain)
        assert len(merged.edges) == len(plain.edge_list())

    def test_chain_full_identification_pattern(self, chain_graph):
        cons = enumerate_contractions(chain_graph, 2)
        full = [c for c in cons if len(c.classes) == 1][0]
        merged = merge_multiedges(full)
        labels = sorted(str(e.label) for e in merged.edges if not e.distinguished)
        # per copy: a double external edge 4+2d, a single external edge 2+1d,
        # and the internal edge 2+1d
        assert labels == ["2+1d", "2+1d", "2+1d", "2+1d", "4+2d", "4+2d"]

    def test_custom_weights(self, pair_graph):
        cons = enumerate_contractions(pair_graph, 2)
        full = [c for c in cons if len(c.classes) == 1][0]
        edges = full.edge_list()
        weights = [e.label - LabelValue(Fraction(3, 4), 0) if e.kind == "external"
                   else e.label for e in edges]
        merged = merge_multiedges(full, weights)
        labels = sorted(str(e.label) for e in merged.edges if not e.distinguished)
        assert labels == ["5/2+2d", "5/2+2d"]


class TestIsomorphism:
    def test_automorphisms_pair(self, pair_graph):
        # swapping the two externals is the only non-trivial symmetry
        assert len(automorphisms(pair_graph)) == 2

    def test_automorphisms_chain(self, chain_graph):
        # swap a2 and a3 only
        assert len(automorphisms(chain_graph)) == 2

    def test_canonical_separates(self, pair_graph, chain_graph):
        assert canonical_key(pair_graph) != canonical_key(chain_graph)

    def test_canonical_on_contractions(self, pair_graph):
        cons = enumerate_contractions(pair_graph, 2)
        keys = [canonical_key(c) for c in cons]
        # the two cross pairings are isomorphic; the full gluing is not
        assert len(set(keys)) == 2
