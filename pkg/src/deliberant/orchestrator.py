"""The closed deliberation loop and its evaluation harness.

One deliberation wires the stages together: generate viewpoints, run
self-game rounds, regenerate with the updated weights, verify each
viewpoint against the knowledge base, arbitrate the survivors (or fall
back to the best-supported viewpoint), and score the composite reward.
Every intermediate value lands in a schema-versioned trace.

Also provides the accuracy/consistency/time metrics, the dataset
loader, and the episode environment the trainer rolls out against.
"""

from __future__ import annotations

import json
import logging
import string
import threading
import time
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .agents import (
    Conclusion,
    PromptTemplates,
    TaskInput,
    VerificationState,
    Viewpoint,
    arbitrate,
    extract_answer,
    generate_viewpoints,
    make_task,
    verify_viewpoint,
)
from .backends.base import Backend
from .backends.synthetic import SyntheticBackend, soft_path_embedding
from .benchmark import parse_traversal_question
from .config import Config
from .core_math import GaussianPolicy, fact_score
from .errors import MissingGoldAnswers, TooFewRuns, TotalBackendFailure
from .retrieval import KnowledgeBase, retrieve_top_m
from .selfgame import run_selfgame
from .training import RewardBreakdown, Transition, action_log_prob, composite_reward

logger = logging.getLogger(__name__)

TRACE_SCHEMA_VERSION = 1

_PUNCT_TABLE = str.maketrans("", "", string.punctuation)


@dataclass
class DeliberationOutcome:
    conclusion: Conclusion
    trace: dict
    reward: RewardBreakdown
    viewpoints: list[Viewpoint]
    initial_omegas: np.ndarray
    final_omegas: np.ndarray
    elapsed: float


def _viewpoint_record(v: Viewpoint) -> dict:
    return {
        "index": v.index,
        "omega": [float(x) for x in v.omega],
        "text": v.text,
        "failure": v.failure,
    }


def _gate_record(v: Viewpoint) -> dict:
    return {
        "index": v.index,
        "state": v.verified.value,
        "fact_score": None if v.fact_score is None else float(v.fact_score),
        "failure": v.failure,
        "evidence": [
            {"id": r.item.id, "similarity": r.similarity, "probability": r.probability}
            for r in (v.evidence or [])
        ],
    }


def _surrogate_score_fn(
    task: TaskInput, base: KnowledgeBase, backend: Backend, config: Config, viewpoints
):
    """Frozen, smooth evaluation context for self-game gradient probes.

    Each viewpoint's evidence set is retrieved once from its initial
    surrogate embedding and then held fixed; probes only move the
    embedding. The surrogate is the probability-weighted soft path
    embedding when the backend can traverse, otherwise the modulated
    task embedding itself.
    """
    graph_index = backend.graph_index if isinstance(backend, SyntheticBackend) else None
    parsed = parse_traversal_question(task.question)
    use_graph = (
        graph_index is not None
        and parsed is not None
        and bool(graph_index.graph.outgoing(parsed[0]))
    )
    alpha = backend.traversal_alpha if isinstance(backend, SyntheticBackend) else 1.0

    def surrogate_embedding(omega: np.ndarray) -> np.ndarray:
        modulation = omega * task.embedding
        if use_graph:
            return soft_path_embedding(modulation, graph_index, parsed[0], parsed[1], alpha)
        norm = float(np.linalg.norm(modulation))
        if norm < 1e-12:
            return task.embedding
        return modulation / norm

    frozen_evidence = {}
    for v in viewpoints:
        emb = surrogate_embedding(v.omega)
        results = retrieve_top_m(base, emb)
        frozen_evidence[v.index] = np.stack([r.item.embedding for r in results])

    rescale = config.fact_score_mode == "rescale"

    def score_fn(k: int, omega: np.ndarray) -> float:
        # Fast equivalent of fact_score against unit evidence rows; the
        # agreement with the shared kernel is pinned by a test.
        emb = surrogate_embedding(omega)
        sims = frozen_evidence[k] @ (emb / np.linalg.norm(emb))
        if rescale:
            return float(np.mean((1.0 + sims) / 2.0))
        return float(np.mean(np.maximum(sims, 0.0)))

    return score_fn


def deliberate(
    task: TaskInput,
    base: KnowledgeBase | None,
    policy: GaussianPolicy,
    config: Config,
    seed: int,
    backend: Backend,
    reference_policy: GaussianPolicy | None = None,
    templates: PromptTemplates | None = None,
) -> DeliberationOutcome:
    """Run one full deliberation; returns conclusion, trace, and reward.

    A missing knowledge base forces the retrieval bypass (gate
    disabled). Everything except wall-clock timings is a pure function
    of (task, base, policy, config, seed).
    """
    start = time.perf_counter()
    templates = templates or config.templates()
    reference = reference_policy or policy
    retrieval_on = config.ablation.retrieval and base is not None
    k_count = config.effective_k()
    fingerprint_before = task.fingerprint()
    timings: dict[str, float] = {}
    stages: dict = {}

    # Stage 1: viewpoint generation.
    t0 = time.perf_counter()
    viewpoints = generate_viewpoints(
        task, policy, k_count, backend, seed,
        templates=templates, max_workers=config.parallel,
    )
    timings["generation"] = time.perf_counter() - t0
    initial_omegas = np.stack([v.omega for v in viewpoints])
    stages["generation"] = {"viewpoints": [_viewpoint_record(v) for v in viewpoints]}
    healthy = [v for v in viewpoints if v.failure is None]
    if not healthy:
        raise TotalBackendFailure(f"all {k_count} generations failed for task {task.id}")

    # Stage 2: self-game rounds on a frozen evaluation context, then
    # regeneration with the updated weights. Skipped when disabled, when
    # fewer than two viewpoints exist, or after a partial backend outage
    # (the frozen context would be incomplete).
    t0 = time.perf_counter()
    selfgame_cfg = config.selfgame()
    final_omegas = initial_omegas
    selfgame_log: list[dict] = []
    ran_selfgame = (
        selfgame_cfg.rounds > 0
        and k_count >= 2
        and len(healthy) == k_count
        and base is not None
    )
    if ran_selfgame:
        score_fn = _surrogate_score_fn(task, base, backend, config, viewpoints)
        final_omegas, selfgame_log = run_selfgame(initial_omegas, score_fn, selfgame_cfg)
        viewpoints = generate_viewpoints(
            task, policy, k_count, backend, seed,
            templates=templates, max_workers=config.parallel, omegas=final_omegas,
        )
    timings["selfgame"] = time.perf_counter() - t0
    stages["selfgame"] = {
        "ran": ran_selfgame,
        "rounds": selfgame_log,
        "regenerated": [_viewpoint_record(v) for v in viewpoints] if ran_selfgame else None,
    }

    # Stage 3: evidence verification with the inclusive threshold gate.
    t0 = time.perf_counter()
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0xE51DE)).generate_state(1)[0])
    resolved: list[Viewpoint] = []
    for v in viewpoints:
        if v.failure is not None:
            resolved.append(v)
        elif retrieval_on:
            resolved.append(
                verify_viewpoint(
                    v, base, config.tau,
                    fact_mode=config.fact_score_mode,
                    sample=config.sample_evidence, rng=rng,
                )
            )
        else:
            # Gate bypass: full trust, no evidence. The constant 1.0
            # keeps the accepted-implies-threshold invariant intact.
            resolved.append(
                replace(v, fact_score=1.0, evidence=[], verified=VerificationState.ACCEPTED)
            )
    viewpoints = resolved
    timings["verification"] = time.perf_counter() - t0
    stages["verification"] = {
        "tau": config.tau,
        "retrieval_enabled": retrieval_on,
        "decisions": [_gate_record(v) for v in viewpoints],
    }

    # Stage 4: arbitration, or the best-supported fallback when the gate
    # rejected everything.
    t0 = time.perf_counter()
    accepted = [v for v in viewpoints if v.verified is VerificationState.ACCEPTED]
    if config.ablation.single_agent:
        only = next(v for v in viewpoints if v.failure is None)
        conclusion = Conclusion(
            text=only.text,
            answer=extract_answer(only.text),
            coherence=0.5,  # neutral: no arbitration judge in this arm
            contributing=[only.index],
            degraded=False,
        )
    elif accepted:
        conclusion = arbitrate(
            accepted, task, backend,
            w_cohe=config.w_cohe, b_cohe=config.b_cohe,
            seed=seed, templates=templates,
        )
    else:
        scored = [v for v in viewpoints if v.fact_score is not None]
        best = max(scored, key=lambda v: v.fact_score)
        conclusion = arbitrate(
            [best], task, backend,
            w_cohe=config.w_cohe, b_cohe=config.b_cohe,
            seed=seed, templates=templates, degraded=True,
        )
    timings["arbitration"] = time.perf_counter() - t0
    stages["arbitration"] = {
        "conclusion": conclusion.text,
        "answer": conclusion.answer,
        "coherence": conclusion.coherence,
        "contributing": conclusion.contributing,
        "degraded": conclusion.degraded,
    }

    # Stage 5: composite reward for the episode.
    t0 = time.perf_counter()
    contributing = [v for v in viewpoints if v.index in conclusion.contributing]
    s_fact = float(np.mean([v.fact_score for v in contributing]))
    reward = composite_reward(
        s_fact, conclusion.coherence, policy, reference,
        lambda_reward=config.lambda_reward, gamma_kl=config.gamma_kl,
    )
    timings["reward"] = time.perf_counter() - t0
    stages["reward"] = {
        "s_fact": reward.s_fact,
        "s_cohe": reward.s_cohe,
        "kl": reward.kl,
        "total": reward.total,
    }

    if task.fingerprint() != fingerprint_before:
        raise AssertionError("task input mutated during deliberation")

    elapsed = time.perf_counter() - start
    trace = {
        "schema_version": TRACE_SCHEMA_VERSION,
        "task_id": task.id,
        "seed": seed,
        "degraded": conclusion.degraded,
        "stages": stages,
        "timings": {**timings, "total": elapsed},
    }
    return DeliberationOutcome(
        conclusion=conclusion,
        trace=trace,
        reward=reward,
        viewpoints=viewpoints,
        initial_omegas=initial_omegas,
        final_omegas=final_omegas,
        elapsed=elapsed,
    )


def strip_timings(trace: dict) -> dict:
    """Copy of a trace without wall-clock fields, for replay comparison."""
    clone = json.loads(json.dumps(trace))
    clone.pop("timings", None)
    return clone


class TraceWriter:
    """Append-only JSONL trace sink; whole-line writes under a lock."""

    def __init__(self, path):
        self._path = path
        self._lock = threading.Lock()

    def append(self, trace: dict):
        line = json.dumps(trace)
        with self._lock:
            with open(self._path, "a", encoding="utf-8") as fh:
                fh.write(line + "\n")


# -- metrics --------------------------------------------------------------------


def normalize_answer(answer: str) -> str:
    """Case-fold, strip punctuation, and collapse whitespace."""
    return " ".join(answer.translate(_PUNCT_TABLE).casefold().split())


def consistency_metric(answers) -> float:
    """Modal-answer fraction; ties go to the lexicographically smallest."""
    answers = [normalize_answer(a) for a in answers]
    if len(answers) < 2:
        raise TooFewRuns("consistency needs at least two runs")
    counts = Counter(answers)
    best = max(counts.values())
    modal = min(a for a, c in counts.items() if c == best)
    return counts[modal] / len(answers)


@dataclass
class EvalReport:
    accuracy: float
    consistency: float
    mean_time: float
    per_task: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "consistency": self.consistency,
            "mean_time": self.mean_time,
            "per_task": self.per_task,
        }

    def comparable(self) -> dict:
        """Everything except wall-clock fields, for determinism checks."""
        return {
            "accuracy": self.accuracy,
            "consistency": self.consistency,
            "per_task": [
                {k: v for k, v in row.items() if k != "mean_time"} for row in self.per_task
            ],
        }


def _run_seed(root_seed: int, task_index: int, run_index: int) -> int:
    return int(
        np.random.SeedSequence((root_seed, task_index, run_index)).generate_state(1)[0]
    )


def evaluate(
    dataset: list[TaskInput],
    base: KnowledgeBase | None,
    policy: GaussianPolicy,
    config: Config,
    backend: Backend,
    runs_per_task: int | None = None,
    seed: int | None = None,
    trace_writer: TraceWriter | None = None,
    templates: PromptTemplates | None = None,
) -> EvalReport:
    """Accuracy on first runs, consistency across repeated runs, mean time.

    Accuracy is exact match after normalization, which requires gold
    answers on every task. Per-(task, run) seeds derive from the root
    seed, so a repeated invocation reproduces every answer.
    """
    if not dataset:
        raise ValueError("evaluate needs a nonempty dataset")
    runs = runs_per_task if runs_per_task is not None else config.runs_per_task
    root_seed = config.seed if seed is None else seed
    missing = [t.id for t in dataset if t.gold_answer is None]
    if missing:
        raise MissingGoldAnswers(f"tasks without gold answers: {missing[:5]}")
    templates = templates or config.templates()

    jobs = [(i, r) for i in range(len(dataset)) for r in range(runs)]

    def _run(job):
        i, r = job
        outcome = deliberate(
            dataset[i], base, policy, config, _run_seed(root_seed, i, r), backend,
            templates=templates,
        )
        if trace_writer is not None:
            trace_writer.append(outcome.trace)
        return i, r, outcome

    results: dict[tuple[int, int], DeliberationOutcome] = {}
    if config.parallel > 1:
        with ThreadPoolExecutor(max_workers=config.parallel) as pool:
            for i, r, outcome in pool.map(_run, jobs):
                results[(i, r)] = outcome
    else:
        for job in jobs:
            i, r, outcome = _run(job)
            results[(i, r)] = outcome

    per_task = []
    correct = 0
    consistencies = []
    times = []
    for i, task in enumerate(dataset):
        answers = [results[(i, r)].conclusion.answer for r in range(runs)]
        times.extend(results[(i, r)].elapsed for r in range(runs))
        first_correct = normalize_answer(answers[0]) == normalize_answer(task.gold_answer)
        correct += first_correct
        cons = consistency_metric(answers) if runs >= 2 else 1.0
        consistencies.append(cons)
        per_task.append(
            {
                "task_id": task.id,
                "gold": task.gold_answer,
                "answers": answers,
                "first_correct": bool(first_correct),
                "consistency": cons,
                "degraded_runs": sum(results[(i, r)].conclusion.degraded for r in range(runs)),
                "mean_time": float(np.mean([results[(i, r)].elapsed for r in range(runs)])),
            }
        )
    return EvalReport(
        accuracy=correct / len(dataset),
        consistency=float(np.mean(consistencies)),
        mean_time=float(np.mean(times)),
        per_task=per_task,
    )


def load_tasks_jsonl(path, embedder) -> list[TaskInput]:
    """Dataset records {"id", "question", "answer"?, "context"?} to tasks."""
    tasks = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            tasks.append(
                make_task(
                    embedder,
                    record["id"],
                    record["question"],
                    context=record.get("context"),
                    gold_answer=record.get("answer"),
                )
            )
    return tasks


class DeliberationEnvironment:
    """Episode runner for the trainer: one deliberation per episode.

    The state is the task embedding, the action is the initial weight
    draws (what the policy actually produced), and the reward is the
    composite total, or a constant when the reward model is ablated.
    """

    def __init__(
        self,
        tasks: list[TaskInput],
        base: KnowledgeBase | None,
        config: Config,
        backend: Backend,
        reference_policy: GaussianPolicy,
        templates: PromptTemplates | None = None,
    ):
        if not tasks:
            raise ValueError("environment needs at least one task")
        self.tasks = tasks
        self.base = base
        self.config = config
        self.backend = backend
        self.reference = reference_policy
        self.templates = templates or config.templates()

    def __call__(self, policy: GaussianPolicy, seed: int) -> Transition:
        rng = np.random.default_rng(seed)
        task = self.tasks[int(rng.integers(len(self.tasks)))]
        outcome = deliberate(
            task, self.base, policy, self.config, seed, self.backend,
            reference_policy=self.reference, templates=self.templates,
        )
        action = outcome.initial_omegas.reshape(-1)
        reward = outcome.reward.total if self.config.ablation.reward else 0.0
        return Transition(
            state=task.embedding,
            action=action,
            log_prob_old=action_log_prob(policy, action),
            reward=float(reward),
        )
