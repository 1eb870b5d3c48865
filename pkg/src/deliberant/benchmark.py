"""Synthetic multi-hop benchmark generator.

Builds entity chains with relation edges plus distractor branches,
and emits one knowledge item per edge together with one traversal
question per chain. Every artifact is a pure function of the seed, so
repeated generation is byte-identical.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DisconnectedGraph

# Tokens that appear in question or answer templates; the name generator
# must never hand these out as entity or relation names.
_RESERVED = {
    "starting", "from", "follow", "then", "which", "entity", "do", "you",
    "reach", "answer", "question", "context", "the", "is", "viewpoint",
}

_QUESTION_TEMPLATE = "Starting from {source}, follow {path}. Which entity do you reach?"
_QUESTION_RE = re.compile(r"Starting from (\S+), follow (.+?)\. Which entity do you reach\?")

_CONSONANTS = "bdfgklmnprstvz"
_VOWELS = "aeiou"


@dataclass(frozen=True)
class Edge:
    source: str
    relation: str
    target: str

    @property
    def text(self) -> str:
        return f"{self.source} {self.relation} {self.target}"


@dataclass(frozen=True)
class Chain:
    """One gold reasoning path: start entity, hop relations, final answer."""

    source: str
    relations: tuple[str, ...]
    answer: str

    @property
    def hops(self) -> int:
        return len(self.relations)


@dataclass
class SyntheticGraph:
    """Entity graph whose edges double as the knowledge corpus."""

    entities: list[str]
    edges: list[Edge]
    chains: list[Chain]
    distractors_per_hop: int = 0
    _adjacency: dict[str, list[Edge]] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not self._adjacency:
            for edge in self.edges:
                self._adjacency.setdefault(edge.source, []).append(edge)

    @property
    def adjacency(self) -> dict[str, list[Edge]]:
        return self._adjacency

    def outgoing(self, entity: str) -> list[Edge]:
        return self._adjacency.get(entity, [])

    def follow(self, source: str, relations) -> str:
        """Walk the named relations from source; the independent path oracle."""
        current = source
        for relation in relations:
            step = None
            for edge in self.outgoing(current):
                if edge.relation == relation:
                    step = edge
                    break
            if step is None:
                raise DisconnectedGraph(f"no edge {relation!r} out of {current!r}")
            current = step.target
        return current

    def validate(self):
        """Every declared chain must be traversable to its stated answer."""
        for chain in self.chains:
            reached = self.follow(chain.source, chain.relations)
            if reached != chain.answer:
                raise DisconnectedGraph(
                    f"chain from {chain.source} reaches {reached}, declared {chain.answer}"
                )


@dataclass
class Benchmark:
    """A generated graph plus its serializable task and knowledge records."""

    graph: SyntheticGraph
    tasks: list[dict]
    kb_items: list[dict]


def question_for_chain(chain: Chain) -> str:
    path = " then ".join(chain.relations)
    return _QUESTION_TEMPLATE.format(source=chain.source, path=path)


def parse_traversal_question(text: str) -> tuple[str, list[str]] | None:
    """Extract (source entity, hop relations) from a traversal question."""
    m = _QUESTION_RE.search(text)
    if m is None:
        return None
    return m.group(1), m.group(2).split(" then ")


def _fresh_word(rng: np.random.Generator, used: set[str]) -> str:
    while True:
        syllables = int(rng.integers(2, 4))
        word = "".join(
            _CONSONANTS[rng.integers(len(_CONSONANTS))] + _VOWELS[rng.integers(len(_VOWELS))]
            for _ in range(syllables)
        )
        if word not in used:
            used.add(word)
            return word


def generate_benchmark(
    n_chains: int,
    hops: int | tuple[int, int],
    distractors_per_hop: int,
    seed: int,
) -> Benchmark:
    """Build a deterministic multi-hop benchmark.

    Each chain contributes its gold edges, plus `distractors_per_hop`
    branch edges out of every gold node, each continued linearly so a
    traversal that goes wrong still completes the full hop count
    (stranding would otherwise abort the pipeline mid-path).
    """
    if isinstance(hops, int):
        hop_range = (hops, hops)
    else:
        hop_range = (int(hops[0]), int(hops[1]))
    if hop_range[0] < 1:
        raise ValueError("hops must be >= 1")
    if distractors_per_hop < 0:
        raise ValueError("distractors_per_hop must be >= 0")

    rng = np.random.default_rng(seed)
    used = set(_RESERVED)
    entities: list[str] = []
    edges: list[Edge] = []
    chains: list[Chain] = []

    def new_entity() -> str:
        name = _fresh_word(rng, used)
        entities.append(name)
        return name

    for _ in range(n_chains):
        n_hops = int(rng.integers(hop_range[0], hop_range[1] + 1))
        nodes = [new_entity() for _ in range(n_hops + 1)]
        relations = []
        for h in range(n_hops):
            relation = _fresh_word(rng, used)
            relations.append(relation)
            edges.append(Edge(nodes[h], relation, nodes[h + 1]))
            for _ in range(distractors_per_hop):
                branch = new_entity()
                edges.append(Edge(nodes[h], _fresh_word(rng, used), branch))
                # Linear continuation so wrong turns still run out the clock.
                current = branch
                for _ in range(n_hops - h - 1):
                    nxt = new_entity()
                    edges.append(Edge(current, _fresh_word(rng, used), nxt))
                    current = nxt
        chains.append(Chain(nodes[0], tuple(relations), nodes[-1]))

    graph = SyntheticGraph(
        entities=entities,
        edges=edges,
        chains=chains,
        distractors_per_hop=distractors_per_hop,
    )
    graph.validate()

    tasks = [
        {"id": f"task-{i:04d}", "question": question_for_chain(chain), "answer": chain.answer}
        for i, chain in enumerate(graph.chains)
    ]
    kb_items = [
        {"id": f"edge-{i:04d}", "text": edge.text} for i, edge in enumerate(graph.edges)
    ]
    return Benchmark(graph=graph, tasks=tasks, kb_items=kb_items)


def graph_from_knowledge_texts(texts) -> SyntheticGraph:
    """Rebuild the traversal graph from three-token knowledge lines.

    The benchmark emits exactly one knowledge item per edge, so the
    corpus is a complete edge list and no separate graph file is needed.
    Lines that are not three whitespace-separated tokens are skipped.
    """
    edges = []
    entities: list[str] = []
    seen = set()
    for text in texts:
        parts = text.split()
        if len(parts) != 3:
            continue
        source, relation, target = parts
        edges.append(Edge(source, relation, target))
        for name in (source, target):
            if name not in seen:
                seen.add(name)
                entities.append(name)
    return SyntheticGraph(entities=entities, edges=edges, chains=[])


def write_benchmark(bench: Benchmark, out_dir) -> tuple[Path, Path]:
    """Write kb.jsonl and tasks.jsonl under out_dir; returns both paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    kb_path = out / "kb.jsonl"
    tasks_path = out / "tasks.jsonl"
    with open(kb_path, "w", encoding="utf-8") as fh:
        for item in bench.kb_items:
            fh.write(json.dumps(item) + "\n")
    with open(tasks_path, "w", encoding="utf-8") as fh:
        for task in bench.tasks:
            fh.write(json.dumps(task) + "\n")
    return kb_path, tasks_path
