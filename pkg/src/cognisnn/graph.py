"""Random DAG topologies, pathway enumeration and betweenness ranking.

Graphs are always numbered so that every edge points from a lower to a
higher node index; ``range(node_count)`` is therefore a topological order.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    CorruptFile,
    DegenerateGraph,
    InvalidSpec,
    KOutOfRange,
    MismatchedGraph,
    PathwayExplosion,
)

Edge = tuple[int, int]

DEFAULT_PATHWAY_CAP = 1_000_000


@dataclass(frozen=True)
class DirectedAcyclicGraph:
    node_count: int
    edges: tuple[Edge, ...]
    generator: str = "custom"
    seed: int = 0

    def __post_init__(self):
        edges = tuple(sorted(set((int(u), int(v)) for u, v in self.edges)))
        object.__setattr__(self, "edges", edges)
        if self.node_count < 1:
            raise InvalidSpec("graph needs at least one node")
        for u, v in edges:
            if not (0 <= u < v < self.node_count):
                raise InvalidSpec(f"edge {(u, v)} is not oriented low->high inside the graph")
        if not edges:
            raise DegenerateGraph("graph has no edges")
        touched = {u for e in edges for u in e}
        if len(touched) != self.node_count:
            raise DegenerateGraph("graph has isolated nodes")

    @classmethod
    def from_edges(cls, edges, node_count=None, generator="custom", seed=0):
        edges = list(edges)
        if node_count is None:
            node_count = 1 + max(max(e) for e in edges) if edges else 0
        return cls(node_count, tuple(edges), generator, seed)

    @property
    def nodes(self) -> range:
        return range(self.node_count)

    @property
    def edge_set(self) -> frozenset[Edge]:
        return frozenset(self.edges)

    def predecessors(self, v: int) -> list[int]:
        return self._preds[v]

    def successors(self, v: int) -> list[int]:
        return self._succs[v]

    @property
    def _preds(self) -> list[list[int]]:
        cached = self.__dict__.get("_pred_cache")
        if cached is None:
            cached = [[] for _ in self.nodes]
            for u, v in self.edges:
                cached[v].append(u)
            object.__setattr__(self, "_pred_cache", cached)
        return cached

    @property
    def _succs(self) -> list[list[int]]:
        cached = self.__dict__.get("_succ_cache")
        if cached is None:
            cached = [[] for _ in self.nodes]
            for u, v in self.edges:
                cached[u].append(v)
            object.__setattr__(self, "_succ_cache", cached)
        return cached

    @property
    def input_nodes(self) -> list[int]:
        return [v for v in self.nodes if not self._preds[v]]

    @property
    def output_nodes(self) -> list[int]:
        return [v for v in self.nodes if not self._succs[v]]

    def depths(self) -> list[int]:
        """Longest-path distance of every node from the input layer."""
        depth = [0] * self.node_count
        for u, v in self.edges:  # sorted by u, so u is final when read
            depth[v] = max(depth[v], depth[u] + 1)
        return depth

    # serialization ---------------------------------------------------

    def to_text(self) -> str:
        lines = [f"rga {self.generator} {self.node_count} {self.seed}"]
        lines += [f"edge {u} {v}" for u, v in self.edges]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "DirectedAcyclicGraph":
        lines = [ln.split() for ln in text.splitlines() if ln.strip()]
        if not lines or len(lines[0]) != 4 or lines[0][0] != "rga":
            raise CorruptFile("graph file must start with 'rga <generator> <n> <seed>'")
        try:
            _, generator, n, seed = lines[0]
            edges = []
            for parts in lines[1:]:
                if len(parts) != 3 or parts[0] != "edge":
                    raise CorruptFile(f"bad graph line: {' '.join(parts)}")
                edges.append((int(parts[1]), int(parts[2])))
            return cls(int(n), tuple(edges), generator, int(seed))
        except ValueError as exc:
            raise CorruptFile(str(exc)) from exc

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def load(cls, path) -> "DirectedAcyclicGraph":
        return cls.from_text(Path(path).read_text())

    def to_dot(self, highlight_edges=()) -> str:
        highlight = set(highlight_edges)
        out = ["digraph rga {", "  rankdir=LR;"]
        inputs, outputs = set(self.input_nodes), set(self.output_nodes)
        for v in self.nodes:
            shape = "box" if v in inputs or v in outputs else "circle"
            out.append(f"  n{v} [label=\"{v}\", shape={shape}];")
        for u, v in self.edges:
            style = " [color=orange, penwidth=2]" if (u, v) in highlight else ""
            out.append(f"  n{u} -> n{v}{style};")
        out.append("}")
        return "\n".join(out) + "\n"


@dataclass(frozen=True)
class RandomGraphSpec:
    generator: str = "er"
    node_count: int = 7
    ws_neighbors: int = 4
    ws_rewire_prob: float = 0.75
    er_edge_prob: float = 0.6
    seed: int = 0

    def validate(self) -> None:
        gen = self.generator.lower()
        if gen not in ("ws", "er"):
            raise InvalidSpec(f"unknown generator {self.generator!r}")
        if self.node_count < 3:
            raise InvalidSpec("node_count must be >= 3")
        if gen == "ws":
            k = self.ws_neighbors
            if k < 2 or k % 2 or k >= self.node_count:
                raise InvalidSpec("WS needs an even neighbour count 2 <= k < n")
            if not 0.0 <= self.ws_rewire_prob <= 1.0:
                raise InvalidSpec("rewire probability outside [0, 1]")
        elif not 0.0 <= self.er_edge_prob <= 1.0:
            raise InvalidSpec("edge probability outside [0, 1]")


def _watts_strogatz(n: int, k: int, p: float, rng: np.random.Generator) -> set[frozenset]:
    edges = set()
    for j in range(1, k // 2 + 1):
        for u in range(n):
            edges.add(frozenset((u, (u + j) % n)))
    for j in range(1, k // 2 + 1):
        for u in range(n):
            v = (u + j) % n
            draw = rng.random()
            if draw >= p or frozenset((u, v)) not in edges:
                continue
            degree = sum(1 for e in edges if u in e)
            if degree >= n - 1:
                continue
            w = int(rng.integers(n))
            while w == u or frozenset((u, w)) in edges:
                w = int(rng.integers(n))
            edges.remove(frozenset((u, v)))
            edges.add(frozenset((u, w)))
    return edges


def _erdos_renyi(n: int, p: float, rng: np.random.Generator) -> set[frozenset]:
    edges = set()
    for u in range(n):
        for v in range(u + 1, n):
            if rng.random() < p:
                edges.add(frozenset((u, v)))
    return edges


def generate_graph(spec: RandomGraphSpec) -> DirectedAcyclicGraph:
    """Draw an undirected WS/ER graph and orient it into a DAG.

    Edges point from the lower to the higher index. Isolated nodes are
    dropped and the survivors renumbered in their original order.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    gen = spec.generator.lower()
    if gen == "ws":
        undirected = _watts_strogatz(spec.node_count, spec.ws_neighbors, spec.ws_rewire_prob, rng)
    else:
        undirected = _erdos_renyi(spec.node_count, spec.er_edge_prob, rng)
    oriented = sorted(tuple(sorted(e)) for e in undirected)
    if not oriented:
        raise DegenerateGraph(f"{gen.upper()} draw produced no edges; no input->output path exists")
    kept = sorted({u for e in oriented for u in e})
    relabel = {old: new for new, old in enumerate(kept)}
    edges = tuple((relabel[u], relabel[v]) for u, v in oriented)
    return DirectedAcyclicGraph(len(kept), edges, gen, spec.seed)


# pathways ------------------------------------------------------------


@dataclass(frozen=True, order=True)
class Pathway:
    nodes: tuple[int, ...]

    @property
    def edges(self) -> tuple[Edge, ...]:
        return tuple(zip(self.nodes[:-1], self.nodes[1:]))

    @property
    def length(self) -> int:
        return len(self.nodes) - 1

    def __str__(self):
        return "-".join(map(str, self.nodes))


def count_pathways(dag: DirectedAcyclicGraph) -> int:
    counts = [0] * dag.node_count
    for v in reversed(dag.nodes):
        succ = dag.successors(v)
        counts[v] = sum(counts[w] for w in succ) if succ else 1
    return sum(counts[v] for v in dag.input_nodes)


def enumerate_pathways(dag: DirectedAcyclicGraph, cap: int = DEFAULT_PATHWAY_CAP) -> list[Pathway]:
    """All input->output paths, in lexicographic node order."""
    if cap < 1:
        raise ValueError("cap must be >= 1")
    total = count_pathways(dag)
    if total > cap:
        raise PathwayExplosion(f"{total} pathways exceed the cap of {cap}")
    found = []
    for src in dag.input_nodes:
        stack = [(src,)]
        while stack:
            path = stack.pop()
            succ = dag.successors(path[-1])
            if not succ:
                found.append(Pathway(path))
                continue
            # reversed push keeps the smallest successor on top
            for w in reversed(succ):
                stack.append(path + (w,))
    return found


def _brandes(dag: DirectedAcyclicGraph):
    node_bc = [0.0] * dag.node_count
    edge_bc = {e: 0.0 for e in dag.edges}
    for s in dag.nodes:
        dist = {s: 0}
        sigma = {s: 1}
        preds: dict[int, list[int]] = {s: []}
        order = []
        queue = deque([s])
        while queue:
            v = queue.popleft()
            order.append(v)
            for w in dag.successors(v):
                if w not in dist:
                    dist[w] = dist[v] + 1
                    sigma[w] = 0
                    preds[w] = []
                    queue.append(w)
                if dist[w] == dist[v] + 1:
                    sigma[w] += sigma[v]
                    preds[w].append(v)
        delta = dict.fromkeys(order, 0.0)
        for w in reversed(order):
            for v in preds[w]:
                share = sigma[v] / sigma[w] * (1.0 + delta[w])
                edge_bc[(v, w)] += share
                delta[v] += share
            if w != s:
                node_bc[w] += delta[w]
    return node_bc, edge_bc


def node_betweenness(dag: DirectedAcyclicGraph) -> dict[int, float]:
    """Raw (unnormalised) betweenness over ordered reachable pairs."""
    node_bc, _ = _brandes(dag)
    return dict(enumerate(node_bc))


def edge_betweenness(dag: DirectedAcyclicGraph) -> dict[Edge, float]:
    _, edge_bc = _brandes(dag)
    return edge_bc


def pathway_betweenness(p: Pathway, node_bc: dict, edge_bc: dict) -> float:
    try:
        terms = [node_bc[v] for v in p.nodes] + [edge_bc[e] for e in p.edges]
    except KeyError as exc:
        raise MismatchedGraph(f"pathway {p} references {exc.args[0]!r} not in the graph") from exc
    # fsum is correctly rounded, so equal multisets tie exactly
    return math.fsum(terms)


@dataclass(frozen=True)
class PathwayRanking:
    pathways: tuple[tuple[Pathway, float], ...]
    graph_edges: frozenset[Edge] = frozenset()

    @property
    def total(self) -> int:
        return len(self.pathways)

    def __len__(self):
        return len(self.pathways)

    def __getitem__(self, i) -> Pathway:
        return self.pathways[i][0]

    @property
    def bc_values(self) -> list[float]:
        return [bc for _, bc in self.pathways]


def rank_pathways(dag: DirectedAcyclicGraph, cap: int = DEFAULT_PATHWAY_CAP) -> PathwayRanking:
    paths = enumerate_pathways(dag, cap)
    node_bc, edge_bc = _brandes(dag)
    scored = [(p, pathway_betweenness(p, dict(enumerate(node_bc)), edge_bc)) for p in paths]
    scored.sort(key=lambda item: (-item[1], item[0].nodes))
    return PathwayRanking(tuple(scored), dag.edge_set)


@dataclass(frozen=True)
class NodeActivityMask:
    """Active vertices and edges of a subgraph."""

    nodes: frozenset[int]
    edges: frozenset[Edge]

    @classmethod
    def from_pathways(cls, pathways) -> "NodeActivityMask":
        nodes, edges = set(), set()
        for p in pathways:
            nodes.update(p.nodes)
            edges.update(p.edges)
        return cls(frozenset(nodes), frozenset(edges))

    @classmethod
    def full(cls, dag: DirectedAcyclicGraph) -> "NodeActivityMask":
        return cls(frozenset(dag.nodes), dag.edge_set)

    def __le__(self, other: "NodeActivityMask") -> bool:
        return self.nodes <= other.nodes and self.edges <= other.edges


@dataclass(frozen=True)
class KeyPathwaySelection:
    scenario: str
    k: int
    selected: tuple[Pathway, ...]
    mask: NodeActivityMask
    # every graph edge whose endpoints both lie on selected pathways
    induced_edges: frozenset[Edge] = frozenset()

    @property
    def trainable_nodes(self) -> frozenset[int]:
        return self.mask.nodes

    @property
    def trainable_edges(self) -> frozenset[Edge]:
        return self.mask.edges | self.induced_edges


def select_key_pathways(ranking: PathwayRanking, k: int = 1, scenario: str = "similar") -> KeyPathwaySelection:
    """Top-k pathways for a similar task, bottom-k for a dissimilar one."""
    if scenario not in ("similar", "dissimilar"):
        raise InvalidSpec(f"scenario must be 'similar' or 'dissimilar', got {scenario!r}")
    if not 1 <= k <= ranking.total:
        raise KOutOfRange(f"K={k} outside [1, {ranking.total}]")
    paths = [p for p, _ in ranking.pathways]
    chosen = paths[:k] if scenario == "similar" else paths[ranking.total - k:]
    mask = NodeActivityMask.from_pathways(chosen)
    induced = frozenset(e for e in ranking.graph_edges if e[0] in mask.nodes and e[1] in mask.nodes)
    return KeyPathwaySelection(scenario, k, tuple(chosen), mask, induced)


def growth_counts(total: int, timesteps: int) -> list[int]:
    """Cumulative active-pathway count per timestep.

    ``t * (total // timesteps)`` before the last step and ``total`` at it,
    clamped to at least one pathway so the network never goes dark.
    """
    if timesteps < 1 or total < 1:
        raise ValueError("timesteps and pathway count must be >= 1")
    step = total // timesteps
    return [max(1, t * step) for t in range(1, timesteps)] + [total]


@dataclass(frozen=True)
class GrowthSchedule:
    timesteps: int
    active_counts: tuple[int, ...]
    masks: tuple[NodeActivityMask, ...] = field(repr=False)

    def mask(self, t: int) -> NodeActivityMask:
        """Mask for 1-based timestep ``t``."""
        return self.masks[t - 1]


def build_growth_schedule(ranking: PathwayRanking, timesteps: int) -> GrowthSchedule:
    q = growth_counts(ranking.total, timesteps)
    paths = [p for p, _ in ranking.pathways]
    masks = tuple(NodeActivityMask.from_pathways(paths[:n]) for n in q)
    return GrowthSchedule(timesteps, tuple(q), masks)
