"""Tests for the synthetic multi-hop benchmark generator."""

import json

import pytest

from deliberant.benchmark import (
    Chain,
    Edge,
    SyntheticGraph,
    generate_benchmark,
    graph_from_knowledge_texts,
    parse_traversal_question,
    question_for_chain,
    write_benchmark,
)
from deliberant.errors import DisconnectedGraph


def test_counts_without_distractors():
    bench = generate_benchmark(n_chains=10, hops=2, distractors_per_hop=0, seed=3)
    assert len(bench.kb_items) == 20
    assert len(bench.tasks) == 10
    assert len(bench.graph.edges) == 20


def test_gold_answers_reachable_by_relation_walk():
    # Independent oracle: follow the declared relations edge by edge.
    bench = generate_benchmark(n_chains=25, hops=(2, 3), distractors_per_hop=3, seed=11)
    for chain, task in zip(bench.graph.chains, bench.tasks):
        assert bench.graph.follow(chain.source, chain.relations) == task["answer"]


def test_wrong_turns_never_strand_traversal():
    # Any choice sequence of the declared hop count must stay on edges
    # with outgoing continuations until the final hop.
    bench = generate_benchmark(n_chains=5, hops=3, distractors_per_hop=2, seed=7)
    graph = bench.graph
    for chain in graph.chains:
        frontier = {chain.source}
        for depth in range(chain.hops):
            nxt = set()
            for node in frontier:
                edges = graph.outgoing(node)
                assert edges, f"stranded at {node} after {depth} hops"
                nxt.update(e.target for e in edges)
            frontier = nxt


def test_same_seed_byte_identical(tmp_path):
    a = generate_benchmark(n_chains=5, hops=2, distractors_per_hop=2, seed=7)
    b = generate_benchmark(n_chains=5, hops=2, distractors_per_hop=2, seed=7)
    dir_a, dir_b = tmp_path / "a", tmp_path / "b"
    write_benchmark(a, dir_a)
    write_benchmark(b, dir_b)
    assert (dir_a / "kb.jsonl").read_bytes() == (dir_b / "kb.jsonl").read_bytes()
    assert (dir_a / "tasks.jsonl").read_bytes() == (dir_b / "tasks.jsonl").read_bytes()


def test_different_seeds_differ():
    a = generate_benchmark(n_chains=5, hops=2, distractors_per_hop=0, seed=1)
    b = generate_benchmark(n_chains=5, hops=2, distractors_per_hop=0, seed=2)
    assert [t["question"] for t in a.tasks] != [t["question"] for t in b.tasks]


def test_question_round_trip():
    chain = Chain(source="varek", relations=("tossin", "relbu"), answer="pelim")
    question = question_for_chain(chain)
    parsed = parse_traversal_question(question)
    assert parsed == ("varek", ["tossin", "relbu"])


def test_parse_rejects_free_text():
    assert parse_traversal_question("Who wrote the letter?") is None


def test_graph_rebuilt_from_knowledge_texts():
    bench = generate_benchmark(n_chains=4, hops=2, distractors_per_hop=1, seed=5)
    texts = [item["text"] for item in bench.kb_items]
    rebuilt = graph_from_knowledge_texts(texts)
    assert len(rebuilt.edges) == len(bench.graph.edges)
    for chain in bench.graph.chains:
        assert rebuilt.follow(chain.source, chain.relations) == chain.answer


def test_validate_rejects_broken_chain():
    graph = SyntheticGraph(
        entities=["a", "b"],
        edges=[Edge("a", "r", "b")],
        chains=[Chain("a", ("missing",), "b")],
    )
    with pytest.raises(DisconnectedGraph):
        graph.validate()


def test_kb_jsonl_entries_are_edge_triples(tmp_path):
    bench = generate_benchmark(n_chains=3, hops=2, distractors_per_hop=1, seed=9)
    kb_path, tasks_path = write_benchmark(bench, tmp_path)
    with open(kb_path, encoding="utf-8") as fh:
        for line in fh:
            record = json.loads(line)
            assert set(record) == {"id", "text"}
            assert len(record["text"].split()) == 3
    with open(tasks_path, encoding="utf-8") as fh:
        for line in fh:
            record = json.loads(line)
            assert set(record) == {"id", "question", "answer"}
