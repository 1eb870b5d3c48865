"""The three deliberation roles: generate viewpoints, verify them against
evidence, and arbitrate the survivors into one conclusion.

Every agent holds read-only access to the full task input; nothing here
mutates a TaskInput or a KnowledgeBase.
"""

from __future__ import annotations

import enum
import hashlib
import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from importlib import resources

import numpy as np

from .backends.base import Backend, BackendRequest, Role
from .core_math import GaussianPolicy, fact_score, squash_coherence
from .errors import MalformedResponse
from .retrieval import KnowledgeBase, RetrievalResult, retrieve_top_m

logger = logging.getLogger(__name__)

_ANSWER_LINE_RE = re.compile(r"^Answer:\s*(.+)$", re.MULTILINE)

DEFAULT_W_COHE = 4.0
DEFAULT_B_COHE = -2.0


class VerificationState(enum.Enum):
    PENDING = "pending"
    ACCEPTED = "accepted"
    REJECTED = "rejected"


@dataclass(frozen=True)
class TaskInput:
    """One task: question, optional context and gold answer, cached embedding."""

    id: str
    question: str
    embedding: np.ndarray
    context: str | None = None
    gold_answer: str | None = None

    def fingerprint(self) -> str:
        """Content hash used to assert the read-only contract."""
        h = hashlib.sha256()
        h.update(
            json.dumps(
                [self.id, self.question, self.context, self.gold_answer]
            ).encode("utf-8")
        )
        h.update(np.ascontiguousarray(self.embedding).tobytes())
        return h.hexdigest()


def make_task(
    embedder,
    task_id: str,
    question: str,
    context: str | None = None,
    gold_answer: str | None = None,
) -> TaskInput:
    if not question or not question.strip():
        raise ValueError("task question must be nonempty")
    embedding = np.asarray(embedder.embed(question), dtype=np.float64)
    embedding.setflags(write=False)
    return TaskInput(
        id=task_id,
        question=question,
        embedding=embedding,
        context=context,
        gold_answer=gold_answer,
    )


@dataclass(frozen=True)
class Viewpoint:
    """One candidate reasoning output with its weight vector and gate state."""

    index: int
    omega: np.ndarray
    text: str
    embedding: np.ndarray | None  # rows of per-line embeddings
    fact_score: float | None = None
    evidence: list[RetrievalResult] | None = None
    verified: VerificationState = VerificationState.PENDING
    failure: str | None = None


@dataclass(frozen=True)
class Conclusion:
    text: str
    answer: str
    coherence: float
    contributing: list[int]
    degraded: bool = False


@dataclass(frozen=True)
class PromptTemplates:
    viewpoint: str
    arbitration: str
    judge: str


def load_templates(
    viewpoint_path=None, arbitration_path=None, judge_path=None
) -> PromptTemplates:
    """Load the packaged templates, overriding any of them by file path."""

    def _load(override, name):
        if override is not None:
            with open(override, encoding="utf-8") as fh:
                return fh.read()
        return (resources.files("deliberant") / "prompts" / name).read_text(encoding="utf-8")

    return PromptTemplates(
        viewpoint=_load(viewpoint_path, "viewpoint_generation.txt"),
        arbitration=_load(arbitration_path, "arbitration.txt"),
        judge=_load(judge_path, "coherence_judge.txt"),
    )


def extract_answer(text: str) -> str:
    """Short answer from the mandated final "Answer:" marker line.

    Falls back to the last nonempty line when a backend ignored the
    template instruction.
    """
    matches = _ANSWER_LINE_RE.findall(text)
    if matches:
        return matches[-1].strip()
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    return lines[-1] if lines else ""


def embed_text_matrix(embedder, text: str) -> np.ndarray:
    """Per-line embedding matrix of a viewpoint or conclusion text."""
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines:
        lines = [text]
    return np.stack([embedder.embed(line) for line in lines])


def build_viewpoint_prompt(templates: PromptTemplates, task: TaskInput) -> str:
    context_block = f"Context: {task.context}\n" if task.context else ""
    return templates.viewpoint.format(question=task.question, context_block=context_block)


def generate_viewpoints(
    task: TaskInput,
    policy: GaussianPolicy,
    k_count: int,
    backend: Backend,
    seed: int,
    templates: PromptTemplates | None = None,
    max_workers: int = 1,
    omegas: np.ndarray | None = None,
) -> list[Viewpoint]:
    """Draw K weight vectors and generate one viewpoint per draw.

    All weight vectors are drawn up front from one seeded stream; each
    backend call gets its own sub-seed derived from (seed, k), so
    viewpoints diversify through both their weights and their sampling
    streams. Generation for distinct indices may run concurrently;
    results always come back in index order. A failed backend call
    rejects just that viewpoint, the rest proceed.
    """
    if k_count < 1:
        raise ValueError("need at least one viewpoint")
    if policy.dim != task.embedding.shape[0]:
        raise ValueError(
            f"policy dim {policy.dim} != task embedding dim {task.embedding.shape[0]}"
        )
    templates = templates or load_templates()
    rng = np.random.default_rng(seed)
    if omegas is None:
        omegas = policy.sample(rng, count=k_count)
    else:
        omegas = np.asarray(omegas, dtype=np.float64)
        if omegas.shape != (k_count, policy.dim):
            raise ValueError("supplied omegas have the wrong shape")
    prompt = build_viewpoint_prompt(templates, task)

    def _one(k: int) -> Viewpoint:
        omega = omegas[k]
        modulation = omega * task.embedding
        sub_seed = int(np.random.SeedSequence((seed, k)).generate_state(1)[0])
        request = BackendRequest(
            role=Role.VIEWPOINT_GENERATION,
            prompt_text=prompt,
            modulation=modulation,
            seed=sub_seed,
        )
        try:
            response = backend.complete(request)
        except Exception as exc:  # noqa: BLE001 - partial failure tolerance
            logger.warning("viewpoint %d generation failed: %s", k, exc)
            return Viewpoint(
                index=k,
                omega=omega,
                text="",
                embedding=None,
                verified=VerificationState.REJECTED,
                failure=str(exc),
            )
        matrix = embed_text_matrix(backend, response.text)
        return Viewpoint(index=k, omega=omega, text=response.text, embedding=matrix)

    if max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            results = list(pool.map(_one, range(k_count)))
    else:
        results = [_one(k) for k in range(k_count)]
    return results


def verify_viewpoint(
    viewpoint: Viewpoint,
    base: KnowledgeBase,
    tau: float,
    fact_mode: str = "clamp",
    sample: bool = False,
    rng: np.random.Generator | None = None,
) -> Viewpoint:
    """Retrieve evidence for a pending viewpoint and resolve the gate.

    Accepted exactly when the fact score reaches the threshold
    (inclusive); anything below is rejected.
    """
    if viewpoint.verified is not VerificationState.PENDING:
        raise ValueError(f"viewpoint {viewpoint.index} already resolved")
    pooled = viewpoint.embedding.mean(axis=0)
    evidence = retrieve_top_m(base, pooled, rng=rng, sample=sample)
    score = fact_score(
        viewpoint.embedding, [r.item.embedding[np.newaxis, :] for r in evidence], mode=fact_mode
    )
    state = VerificationState.ACCEPTED if score >= tau else VerificationState.REJECTED
    return replace(viewpoint, fact_score=score, evidence=evidence, verified=state)


def build_arbitration_prompt(
    templates: PromptTemplates, task: TaskInput, accepted: list[Viewpoint]
) -> str:
    blocks = []
    for v in accepted:
        snippet = ""
        if v.evidence:
            snippet = "\nEvidence: " + "; ".join(r.item.text for r in v.evidence[:3])
        blocks.append(f"[Viewpoint {v.index}]\n{v.text}{snippet}")
    return templates.arbitration.format(question=task.question, viewpoints="\n\n".join(blocks))


def arbitrate(
    accepted: list[Viewpoint],
    task: TaskInput,
    backend: Backend,
    w_cohe: float = DEFAULT_W_COHE,
    b_cohe: float = DEFAULT_B_COHE,
    seed: int = 0,
    templates: PromptTemplates | None = None,
    degraded: bool = False,
) -> Conclusion:
    """Integrate accepted viewpoints and score the result's coherence.

    The judge gets one retry on a malformed reply, then the failure
    propagates.
    """
    if not accepted:
        raise ValueError("arbitrate requires at least one accepted viewpoint")
    templates = templates or load_templates()
    prompt = build_arbitration_prompt(templates, task, accepted)
    integrated = backend.complete(
        BackendRequest(role=Role.ARBITRATION, prompt_text=prompt, seed=seed)
    )
    judge_prompt = templates.judge.format(conclusion=integrated.text)
    raw = None
    for attempt in range(2):
        try:
            judged = backend.complete(
                BackendRequest(role=Role.COHERENCE_JUDGE, prompt_text=judge_prompt, seed=seed)
            )
            raw = judged.scalar
            break
        except MalformedResponse:
            if attempt == 1:
                raise
            logger.warning("judge reply malformed, retrying once")
    if raw is None:
        raise MalformedResponse("judge returned no scalar")
    return Conclusion(
        text=integrated.text,
        answer=extract_answer(integrated.text),
        coherence=squash_coherence(raw, w_cohe, b_cohe),
        contributing=[v.index for v in accepted],
        degraded=degraded,
    )
