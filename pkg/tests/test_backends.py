"""Tests for the deterministic synthetic backend."""

import numpy as np
import pytest

from deliberant.backends import (
    BackendRequest,
    BackendResponse,
    EndpointConfig,
    Role,
    SyntheticBackend,
    soft_path_embedding,
    synthetic_generate_viewpoint,
    validate_response,
)
from deliberant.benchmark import generate_benchmark
from deliberant.core_math import frobenius_cosine
from deliberant.errors import DisconnectedGraph, EmptyText


@pytest.fixture(scope="module")
def backend():
    return SyntheticBackend(dim=64)


class TestHashEmbedder:
    def test_deterministic(self, backend):
        np.testing.assert_array_equal(backend.embed("alpha"), backend.embed("alpha"))

    def test_unit_norm(self, backend):
        for text in ("alpha", "alpha beta gamma", "x" * 500, "Answer: pelim"):
            assert np.linalg.norm(backend.embed(text)) == pytest.approx(1.0, abs=1e-9)

    def test_bag_of_tokens_reorder_invariance(self, backend):
        cos = frobenius_cosine([backend.embed("a b")], [backend.embed("b a")])
        assert cos == pytest.approx(1.0, abs=1e-9)

    def test_shared_token_raises_similarity(self, backend):
        anchor = backend.embed("alpha")
        shared = frobenius_cosine([backend.embed("alpha beta")], [anchor])
        unrelated = frobenius_cosine([backend.embed("gamma delta")], [anchor])
        assert shared > unrelated

    def test_punctuation_and_case_normalized(self, backend):
        cos = frobenius_cosine([backend.embed("Pelim.")], [backend.embed("pelim")])
        assert cos == pytest.approx(1.0, abs=1e-9)

    def test_empty_text_rejected(self, backend):
        with pytest.raises(EmptyText):
            backend.embed("   ")


class TestRequestContracts:
    def test_modulation_required_for_generation(self):
        with pytest.raises(ValueError):
            BackendRequest(role=Role.VIEWPOINT_GENERATION, prompt_text="q", seed=0)

    def test_modulation_forbidden_elsewhere(self):
        with pytest.raises(ValueError):
            BackendRequest(
                role=Role.ARBITRATION, prompt_text="q", modulation=np.ones(4), seed=0
            )

    def test_scalar_presence_enforced(self):
        validate_response(Role.COHERENCE_JUDGE, BackendResponse(text="", scalar=0.5))
        with pytest.raises(ValueError):
            validate_response(Role.ARBITRATION, BackendResponse(text="", scalar=0.5))
        with pytest.raises(ValueError):
            validate_response(Role.COHERENCE_JUDGE, BackendResponse(text=""))

    def test_endpoint_config_bounds(self):
        with pytest.raises(ValueError):
            EndpointConfig(max_retries=6)
        with pytest.raises(ValueError):
            EndpointConfig(timeout=0.0)


class TestCompletionDeterminism:
    def test_same_inputs_byte_identical(self):
        bench = generate_benchmark(n_chains=2, hops=2, distractors_per_hop=2, seed=0)
        backend = SyntheticBackend(dim=64, graph=bench.graph)
        prompt = f"Question: {bench.tasks[0]['question']}\nRespond with reasoning."
        mod = backend.embed("varek tossin")
        req = lambda: BackendRequest(
            role=Role.VIEWPOINT_GENERATION, prompt_text=prompt, modulation=mod, seed=123
        )
        assert backend.complete(req()).text == backend.complete(req()).text

    def test_generic_mode_without_graph(self, backend):
        req = BackendRequest(
            role=Role.VIEWPOINT_GENERATION,
            prompt_text="Question: what color is the sky at dusk",
            modulation=np.zeros(64),
            seed=9,
        )
        first = backend.complete(req).text
        assert first == backend.complete(req).text
        assert "Answer:" in first


class TestSyntheticJudge:
    def test_restated_fact_beats_contradiction(self, backend):
        agreeing = "varek guards pelim\nvarek guards pelim\nvarek guards pelim"
        contradicting = "varek guards pelim\nvarek guards tosul"
        high = backend.judge_conclusion(agreeing)
        low = backend.judge_conclusion(contradicting)
        assert high > low

    def test_answer_claim_contradiction_penalized(self, backend):
        agree = (
            "The panel holds that the answer is pelim.\n"
            "The panel holds that the answer is pelim.\nAnswer: pelim"
        )
        clash = (
            "The panel holds that the answer is pelim.\n"
            "The panel holds that the answer is tosul.\nAnswer: pelim"
        )
        assert backend.judge_conclusion(agree) > backend.judge_conclusion(clash)

    def test_judge_response_carries_scalar(self, backend):
        req = BackendRequest(
            role=Role.COHERENCE_JUDGE,
            prompt_text="Rate this.\n\nConclusion:\nvarek guards pelim\nAnswer: pelim",
            seed=0,
        )
        resp = backend.complete(req)
        validate_response(Role.COHERENCE_JUDGE, resp)
        assert resp.scalar is not None


class TestSyntheticArbitration:
    def test_modal_answer_wins(self, backend):
        prompt = (
            "Question: q\n\nViewpoints:\nAnswer: left\nAnswer: right\nAnswer: right\n"
        )
        resp = backend.complete(
            BackendRequest(role=Role.ARBITRATION, prompt_text=prompt, seed=0)
        )
        assert resp.text.splitlines()[-1] == "Answer: right"

    def test_tie_breaks_lexicographically(self, backend):
        prompt = "Viewpoints:\nAnswer: zeta\nAnswer: alpha\n"
        resp = backend.complete(
            BackendRequest(role=Role.ARBITRATION, prompt_text=prompt, seed=0)
        )
        assert resp.text.splitlines()[-1] == "Answer: alpha"


class TestTraversal:
    def test_single_hop_no_distractors_always_correct(self):
        bench = generate_benchmark(n_chains=1, hops=1, distractors_per_hop=0, seed=4)
        backend = SyntheticBackend(dim=64, graph=bench.graph)
        chain = bench.graph.chains[0]
        for seed in range(50):
            _, answer = synthetic_generate_viewpoint(
                np.zeros(64),
                backend.graph_index,
                chain.source,
                list(chain.relations),
                seed,
            )
            assert answer == chain.answer

    def test_aligned_modulation_concentrates_on_gold_path(self):
        bench = generate_benchmark(n_chains=1, hops=2, distractors_per_hop=3, seed=8)
        backend = SyntheticBackend(dim=64, graph=bench.graph)
        chain = bench.graph.chains[0]
        gold_edges = [
            e for e in bench.graph.edges
            if e.relation in chain.relations
        ]
        mod = np.sum([backend.embed(e.text) for e in gold_edges], axis=0)
        mod /= np.linalg.norm(mod)
        hits = 0
        for seed in range(1000):
            _, answer = synthetic_generate_viewpoint(
                mod, backend.graph_index, chain.source, list(chain.relations),
                seed, alpha=60.0,
            )
            hits += answer == chain.answer
        assert hits == 1000

    def test_zero_modulation_matches_uniform_brute_force(self):
        # Two hops with 1 gold + 3 distractor edges each: uniform softmax
        # gives (1/4)^2 = 0.0625 correct-answer probability.
        bench = generate_benchmark(n_chains=1, hops=2, distractors_per_hop=3, seed=2)
        backend = SyntheticBackend(dim=64, graph=bench.graph)
        chain = bench.graph.chains[0]
        hits = 0
        for seed in range(10000):
            _, answer = synthetic_generate_viewpoint(
                np.zeros(64), backend.graph_index, chain.source,
                list(chain.relations), seed,
            )
            hits += answer == chain.answer
        assert hits / 10000 == pytest.approx(0.0625, abs=0.01)

    def test_question_embedding_modulation_beats_uniform(self):
        # The question names the gold relations, so modulating by its
        # embedding must tilt traversal toward the gold path. This is the
        # signal the trainable policy exploits.
        bench = generate_benchmark(n_chains=1, hops=2, distractors_per_hop=3, seed=6)
        backend = SyntheticBackend(dim=64, graph=bench.graph)
        chain = bench.graph.chains[0]
        mod = backend.embed(bench.tasks[0]["question"])
        hits = 0
        for seed in range(2000):
            _, answer = synthetic_generate_viewpoint(
                mod, backend.graph_index, chain.source, list(chain.relations), seed
            )
            hits += answer == chain.answer
        assert hits / 2000 > 0.10

    def test_disconnected_graph_raises(self):
        bench = generate_benchmark(n_chains=1, hops=1, distractors_per_hop=0, seed=1)
        backend = SyntheticBackend(dim=64, graph=bench.graph)
        chain = bench.graph.chains[0]
        with pytest.raises(DisconnectedGraph):
            synthetic_generate_viewpoint(
                np.zeros(64), backend.graph_index, chain.source,
                [chain.relations[0], "onward"], seed=0,
            )


class TestSoftPathEmbedding:
    def test_deterministic_unit_vector(self):
        bench = generate_benchmark(n_chains=1, hops=2, distractors_per_hop=2, seed=3)
        backend = SyntheticBackend(dim=64, graph=bench.graph)
        chain = bench.graph.chains[0]
        mod = backend.embed(bench.tasks[0]["question"])
        a = soft_path_embedding(mod, backend.graph_index, chain.source, list(chain.relations))
        b = soft_path_embedding(mod, backend.graph_index, chain.source, list(chain.relations))
        np.testing.assert_array_equal(a, b)
        assert np.linalg.norm(a) == pytest.approx(1.0, abs=1e-9)

    def test_smooth_in_modulation(self):
        bench = generate_benchmark(n_chains=1, hops=2, distractors_per_hop=2, seed=3)
        backend = SyntheticBackend(dim=64, graph=bench.graph)
        chain = bench.graph.chains[0]
        mod = backend.embed(bench.tasks[0]["question"])
        base = soft_path_embedding(mod, backend.graph_index, chain.source, list(chain.relations))
        nudged = soft_path_embedding(
            mod + 1e-5, backend.graph_index, chain.source, list(chain.relations)
        )
        assert float(np.linalg.norm(base - nudged)) < 1e-3
