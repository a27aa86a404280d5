"""Preference-graph ensembling and denoising.

Pairwise judgments become per-annotator weighted digraphs, which are summed
into one ensemble graph per question. Cycles are broken greedily by deleting the
lightest edge of a cycle until the graph is acyclic; a topological sort of the
remaining DAG gives the ranking.
"""

from __future__ import annotations

import heapq
import json
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

log = logging.getLogger(__name__)

WINNERS = ("a", "b", "tie")


@dataclass(frozen=True)
class PairwiseJudgment:
    question_id: str
    a: str
    b: str
    winner: str  # "a" | "b" | "tie"
    annotator: str

    def __post_init__(self):
        if self.a == self.b:
            raise ValueError("a judgment needs two distinct candidates")
        if self.winner not in WINNERS:
            raise ValueError(f"winner must be one of {WINNERS}, got {self.winner!r}")

    def to_json(self) -> dict:
        return {"question_id": self.question_id, "a": self.a, "b": self.b,
                "winner": self.winner, "annotator": self.annotator}

    @classmethod
    def from_json(cls, rec: dict) -> "PairwiseJudgment":
        return cls(str(rec["question_id"]), str(rec["a"]), str(rec["b"]), str(rec["winner"]),
                   str(rec["annotator"]))


@dataclass
class PreferenceGraph:
    question_id: str
    nodes: set[str] = field(default_factory=set)
    edges: dict[tuple[str, str], int] = field(default_factory=dict)
    removed: list[tuple[str, str, int]] = field(default_factory=list)

    def add_edge(self, u: str, v: str, w: int = 1) -> None:
        if u == v:
            raise ValueError("self-loops are not allowed")
        self.nodes.update((u, v))
        self.edges[(u, v)] = self.edges.get((u, v), 0) + w

    def copy(self) -> "PreferenceGraph":
        return PreferenceGraph(self.question_id, set(self.nodes), dict(self.edges), list(self.removed))

    def successors(self) -> dict[str, list[str]]:
        succ = {n: [] for n in self.nodes}
        for u, v in self.edges:
            succ[u].append(v)
        for n in succ:
            succ[n].sort()
        return succ

    def net_weight(self) -> dict[str, int]:
        """Out-weight minus in-weight per node."""
        net = {n: 0 for n in self.nodes}
        for (u, v), w in self.edges.items():
            net[u] += w
            net[v] -= w
        return net


def build_graphs(judgments: Iterable) -> tuple[dict[tuple[str, str], PreferenceGraph], int]:
    """One graph per (annotator, question). Returns the graphs and a count of skipped records.

    Records may be :class:`PairwiseJudgment` objects or raw dicts; malformed ones
    are skipped. Ties add both nodes but no edge.
    """
    graphs: dict[tuple[str, str], PreferenceGraph] = {}
    skipped = 0
    for rec in judgments:
        try:
            j = rec if isinstance(rec, PairwiseJudgment) else PairwiseJudgment.from_json(rec)
        except (KeyError, TypeError, ValueError):
            skipped += 1
            continue
        g = graphs.setdefault((j.annotator, j.question_id), PreferenceGraph(j.question_id))
        g.nodes.update((j.a, j.b))
        if j.winner == "a":
            g.add_edge(j.a, j.b)
        elif j.winner == "b":
            g.add_edge(j.b, j.a)
    if skipped:
        log.warning("skipped %d malformed judgment records", skipped)
    return graphs, skipped


def ensemble(graphs: Iterable[PreferenceGraph]) -> PreferenceGraph:
    """Sum edge weights across graphs of the same question."""
    graphs = list(graphs)
    if not graphs:
        raise ValueError("nothing to ensemble")
    qids = {g.question_id for g in graphs}
    if len(qids) != 1:
        raise ValueError(f"cannot ensemble graphs from different questions: {sorted(qids)}")
    out = PreferenceGraph(graphs[0].question_id)
    for g in graphs:
        out.nodes |= g.nodes
        for (u, v), w in g.edges.items():
            out.add_edge(u, v, w)
    return out


def find_cycle(nodes, edges) -> list[tuple[str, str]] | None:
    """Return the edges of some directed cycle, or None.

    DFS visits roots and successors in sorted node order, so the cycle found is
    a deterministic function of the graph.
    """
    succ = defaultdict(list)
    for u, v in edges:
        succ[u].append(v)
    for n in succ:
        succ[n].sort()
    state = {}  # 1 = on stack, 2 = done
    for root in sorted(nodes):
        if root in state:
            continue
        path = [root]
        iters = [iter(succ[root])]
        state[root] = 1
        while iters:
            nxt = next(iters[-1], None)
            if nxt is None:
                state[path.pop()] = 2
                iters.pop()
                continue
            s = state.get(nxt)
            if s == 1:
                k = path.index(nxt)
                cyc = path[k:] + [nxt]
                return list(zip(cyc[:-1], cyc[1:]))
            if s is None:
                state[nxt] = 1
                path.append(nxt)
                iters.append(iter(succ[nxt]))
    return None


def denoise(graph: PreferenceGraph) -> PreferenceGraph:
    """Greedy cycle removal: repeatedly drop the lightest edge of a found cycle.

    Weight ties go to the lexicographically smallest (source, target). Removed
    edges are recorded in ``removed`` in removal order.
    """
    out = graph.copy()
    out.removed = []
    while True:
        cyc = find_cycle(out.nodes, out.edges)
        if cyc is None:
            return out
        u, v = min(cyc, key=lambda e: (out.edges[e], e))
        out.removed.append((u, v, out.edges.pop((u, v))))


def is_acyclic(graph: PreferenceGraph) -> bool:
    return find_cycle(graph.nodes, graph.edges) is None


def rank(dag: PreferenceGraph) -> list[str]:
    """Topological order, best first.

    Among nodes whose predecessors are all placed, pick the largest
    out-weight minus in-weight, then the smallest node id.
    """
    indeg = {n: 0 for n in dag.nodes}
    for _, v in dag.edges:
        indeg[v] += 1
    net = dag.net_weight()
    succ = dag.successors()
    heap = [(-net[n], n) for n in dag.nodes if indeg[n] == 0]
    heapq.heapify(heap)
    order = []
    while heap:
        _, n = heapq.heappop(heap)
        order.append(n)
        for m in succ[n]:
            indeg[m] -= 1
            if indeg[m] == 0:
                heapq.heappush(heap, (-net[m], m))
    if len(order) != len(dag.nodes):
        raise ValueError(f"question {dag.question_id}: graph has a cycle; denoise it first")
    return order


def sample_subset(ranking: list, k: int, seed) -> list:
    """Uniform random k-subset of a ranking, kept in ranking order."""
    if not 0 <= k <= len(ranking):
        raise ValueError(f"cannot draw {k} of {len(ranking)} candidates")
    idx = np.sort(np.random.default_rng(seed).choice(len(ranking), k, replace=False))
    return [ranking[i] for i in idx]


def run_pged(judgments: Iterable) -> tuple[list[dict], int]:
    """Full pipeline per question. Returns output records and the malformed-record count."""
    graphs, skipped = build_graphs(judgments)
    per_q: dict[str, list[PreferenceGraph]] = defaultdict(list)
    for (_, qid), g in sorted(graphs.items()):
        per_q[qid].append(g)
    results = []
    for qid in sorted(per_q):
        dag = denoise(ensemble(per_q[qid]))
        if not is_acyclic(dag):
            raise AssertionError(f"question {qid}: denoised graph still has a cycle")
        results.append({"question_id": qid, "ranking": rank(dag), "removed_edges": len(dag.removed),
                        "kept_edges": len(dag.edges)})
    return results, skipped


def read_judgments(path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def write_judgments(judgments: Iterable[PairwiseJudgment], path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for j in judgments:
            fh.write(json.dumps(j.to_json(), separators=(",", ":")) + "\n")
