import networkx as nx
import numpy as np
import pytest

from multirm.metrics import kendall_tau
from multirm.pged import (PairwiseJudgment, PreferenceGraph, build_graphs, denoise, ensemble, find_cycle,
                          is_acyclic, rank, read_judgments, run_pged, sample_subset, write_judgments)
from multirm.synth import judgments_for_ranking


def J(a, b, w, ann="x", q="q"):
    return PairwiseJudgment(q, a, b, w, ann)


def graph(edges, nodes=()):
    g = PreferenceGraph("q")
    g.nodes.update(nodes)
    for u, v, w in edges:
        g.add_edge(u, v, w)
    return g


def test_single_judgment():
    gs, _ = build_graphs([J("a", "b", "a")])
    assert list(gs) == [("x", "q")] and gs[("x", "q")].edges == {("a", "b"): 1}


def test_tie_has_no_edge():
    g = build_graphs([J("a", "b", "tie")])[0][("x", "q")]
    assert g.edges == {} and g.nodes == {"a", "b"}


def test_contradictory_annotator_keeps_both():
    g = build_graphs([J("a", "b", "a"), J("a", "b", "b")])[0][("x", "q")]
    assert g.edges == {("a", "b"): 1, ("b", "a"): 1}


def test_malformed_records_counted():
    recs = [J("a", "b", "a").to_json(), {"question_id": "q"}, {**J("a", "b", "a").to_json(), "winner": "c"}]
    assert build_graphs(recs)[1] == 2


def test_ensemble_weights():
    gs = build_graphs([J("a", "b", "a", "1"), J("a", "b", "a", "2"), J("b", "a", "a", "3")])[0]
    assert ensemble(gs.values()).edges == {("a", "b"): 2, ("b", "a"): 1}


def test_ensemble_union_and_mixed_rejected():
    e = ensemble([graph([("a", "b", 1)]), graph([("c", "d", 1)])])
    assert e.nodes == {"a", "b", "c", "d"}
    other = PreferenceGraph("r")
    with pytest.raises(ValueError):
        ensemble([graph([]), other])


def test_three_cycle():
    d = denoise(graph([("a", "b", 2), ("b", "c", 2), ("c", "a", 1)]))
    assert d.removed == [("c", "a", 1)]
    assert rank(d) == ["a", "b", "c"]


def test_acyclic_unchanged():
    g = graph([("a", "b", 1), ("b", "c", 3)])
    d = denoise(g)
    assert d.edges == g.edges and d.removed == []


def test_mutual_pair():
    assert denoise(graph([("a", "b", 5), ("b", "a", 2)])).edges == {("a", "b"): 5}


def test_chain_and_isolated():
    assert rank(graph([("a", "b", 1), ("b", "c", 1)])) == ["a", "b", "c"]
    assert rank(graph([], nodes=["z", "m", "a"])) == ["a", "m", "z"]


def test_diamond():
    order = rank(graph([("a", "b", 1), ("a", "c", 3), ("b", "d", 1), ("c", "d", 1)]))
    # net weight: b = 0, c = -2
    assert order == ["a", "b", "c", "d"]
    assert rank(graph([("a", "c", 1), ("a", "b", 1), ("b", "d", 1), ("c", "d", 1)])) == ["a", "b", "c", "d"]


def test_rank_rejects_cycle():
    with pytest.raises(ValueError):
        rank(graph([("a", "b", 1), ("b", "a", 1)]))


def test_subset():
    r = list("abcdef")
    assert sample_subset(r, 6, 0) == r
    sub = sample_subset(r, 3, 1)
    assert len(sub) == 3 and sub == sorted(sub, key=r.index)
    with pytest.raises(ValueError):
        sample_subset(r, 7, 0)


def random_graph(rng, n, m):
    g = PreferenceGraph("q")
    g.nodes.update(f"n{i:02d}" for i in range(n))
    for _ in range(m):
        u, v = rng.choice(n, 2, replace=False)
        g.add_edge(f"n{u:02d}", f"n{v:02d}", int(rng.integers(1, 5)))
    return g


def test_find_cycle_agrees_with_networkx():
    rng = np.random.default_rng(0)
    for _ in range(300):
        g = random_graph(rng, int(rng.integers(2, 9)), int(rng.integers(0, 12)))
        G = nx.DiGraph(list(g.edges))
        G.add_nodes_from(g.nodes)
        cyc = find_cycle(g.nodes, g.edges)
        assert (cyc is None) == nx.is_directed_acyclic_graph(G)
        if cyc:
            assert all(e in g.edges for e in cyc) and cyc[0][0] == cyc[-1][1]


def test_denoise_properties_on_random_graphs():
    rng = np.random.default_rng(1)
    for _ in range(200):
        g = random_graph(rng, int(rng.integers(2, 12)), int(rng.integers(0, 60)))
        d = denoise(g)
        G = nx.DiGraph(list(d.edges))
        assert nx.is_directed_acyclic_graph(G)
        assert len(d.edges) <= len(g.edges)
        assert (len(d.edges) == len(g.edges)) == is_acyclic(g)
        assert len(d.edges) + len(d.removed) == len(g.edges)
        pos = {n: k for k, n in enumerate(rank(d))}
        assert all(pos[u] < pos[v] for u, v in d.edges)


def test_denoise_deterministic():
    g = random_graph(np.random.default_rng(5), 10, 50)
    assert denoise(g).removed == denoise(g.copy()).removed


def test_flip_zero_removes_nothing_and_recovers():
    rng = np.random.default_rng(0)
    truth = [f"c{i}" for i in rng.permutation(8)]
    recs, skipped = run_pged(judgments_for_ranking("q", truth, 5, 0.0, 0.0, rng))
    assert skipped == 0 and recs[0]["removed_edges"] == 0 and recs[0]["ranking"] == truth


def test_flip_half_uninformative():
    taus = []
    for t in range(200):
        rng = np.random.default_rng(t)
        truth = [f"c{i}" for i in rng.permutation(8)]
        recs, _ = run_pged(judgments_for_ranking("q", truth, 5, 0.5, 0.0, rng))
        taus.append(kendall_tau(recs[0]["ranking"], truth))
    assert abs(np.mean(taus)) <= 0.1


def test_judgment_file_round_trip(tmp_path):
    js = [J("a", "b", "a"), J("b", "c", "tie", "y")]
    write_judgments(js, tmp_path / "j.jsonl")
    assert [PairwiseJudgment.from_json(r) for r in read_judgments(tmp_path / "j.jsonl")] == js
