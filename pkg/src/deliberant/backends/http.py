"""HTTP client for OpenAI-compatible chat-completion and embedding endpoints."""

from __future__ import annotations

import logging
import os
import re
import threading
import time

import numpy as np
import requests

from ..errors import EndpointTimeout, EndpointUnavailable, MalformedResponse
from .base import Backend, BackendRequest, BackendResponse, EndpointConfig, Role

logger = logging.getLogger(__name__)

API_KEY_ENV = "DELIBERANT_API_KEY"

# Modulated task embeddings cannot enter a text API directly, so the
# weight vector is projected onto the nearest of these perspective
# instructions (in embedding space) and that instruction is prepended.
PERSONAS = [
    "Reason step by step from first principles and commit to one answer.",
    "Play devil's advocate: challenge the obvious reading before answering.",
    "Focus on named entities and their relations; trace them explicitly.",
    "Prioritize verifiable facts over plausibility when choosing an answer.",
    "Take the long view: consider indirect connections across several hops.",
    "Be conservative: prefer the answer with the strongest direct evidence.",
    "Be exploratory: consider an unusual but defensible interpretation.",
    "Summarize the key constraints first, then derive the answer from them.",
]

_NUMBER_RE = re.compile(r"-?\d+(?:\.\d+)?")


class HttpBackend(Backend):
    """Chat + embeddings client with bounded retries and exponential backoff.

    The API key is read from the DELIBERANT_API_KEY environment variable.
    In-flight requests are bounded by the configured concurrency limit.
    """

    def __init__(
        self,
        config: EndpointConfig,
        dim: int | None = None,
        session: requests.Session | None = None,
        sleep=time.sleep,
        backoff_base: float = 0.5,
    ):
        self._config = config
        self._session = session or requests.Session()
        self._sleep = sleep
        self._backoff_base = backoff_base
        self._semaphore = threading.Semaphore(config.max_concurrency)
        self._dim = dim
        self._persona_vectors: np.ndarray | None = None

    @property
    def dim(self) -> int:
        if self._dim is None:
            # Provider-defined: probe once and cache.
            self._dim = self.embed("dimension probe").shape[0]
        return self._dim

    # -- transport -------------------------------------------------------------

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        api_key = os.environ.get(API_KEY_ENV)
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        return headers

    def _post(self, path: str, payload: dict) -> dict:
        """POST with retries; backoff delays are strictly increasing."""
        url = self._config.base_url.rstrip("/") + path
        last_error: Exception | None = None
        for attempt in range(self._config.max_retries + 1):
            if attempt > 0:
                delay = self._backoff_base * (2 ** (attempt - 1))
                logger.debug("retry %d for %s after %.2fs", attempt, path, delay)
                self._sleep(delay)
            try:
                with self._semaphore:
                    response = self._session.post(
                        url,
                        json=payload,
                        headers=self._headers(),
                        timeout=self._config.timeout,
                    )
            except requests.Timeout as exc:
                last_error = EndpointTimeout(f"timeout after {self._config.timeout}s: {url}")
                logger.warning("timeout on %s (attempt %d)", url, attempt)
                continue
            except requests.RequestException as exc:
                last_error = exc
                logger.warning("transport error on %s (attempt %d): %s", url, attempt, exc)
                continue
            if response.status_code >= 500:
                last_error = EndpointUnavailable(f"{url} returned {response.status_code}")
                continue
            if response.status_code != 200:
                raise MalformedResponse(f"{url} returned {response.status_code}: {response.text[:200]}")
            try:
                return response.json()
            except ValueError as exc:
                raise MalformedResponse(f"non-JSON body from {url}") from exc
        if isinstance(last_error, EndpointTimeout):
            raise last_error
        raise EndpointUnavailable(
            f"{url} unavailable after {self._config.max_retries + 1} attempts"
        ) from last_error

    # -- embeddings ------------------------------------------------------------

    def embed(self, text: str) -> np.ndarray:
        if not text:
            raise MalformedResponse("refusing to embed empty text")
        body = self._post(
            self._config.embeddings_path,
            {"model": self._config.model_name, "input": text},
        )
        try:
            values = body["data"][0]["embedding"]
        except (KeyError, IndexError, TypeError) as exc:
            raise MalformedResponse("embeddings response missing data[0].embedding") from exc
        vec = np.asarray(values, dtype=np.float64)
        norm = float(np.linalg.norm(vec))
        if vec.ndim != 1 or vec.size == 0 or norm == 0.0:
            raise MalformedResponse("embeddings response is not a usable vector")
        return vec / norm

    # -- completions -----------------------------------------------------------

    def _persona_for(self, modulation: np.ndarray) -> str:
        if self._persona_vectors is None:
            self._persona_vectors = np.stack([self.embed(p) for p in PERSONAS])
        norm = float(np.linalg.norm(modulation))
        if norm < 1e-12:
            return PERSONAS[0]
        sims = self._persona_vectors @ (modulation / norm)
        return PERSONAS[int(np.argmax(sims))]

    def _chat(self, prompt: str, seed: int, max_tokens: int) -> str:
        body = self._post(
            self._config.chat_path,
            {
                "model": self._config.model_name,
                "messages": [{"role": "user", "content": prompt}],
                "max_tokens": max_tokens,
                "seed": seed,
            },
        )
        try:
            content = body["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise MalformedResponse("chat response missing choices[0].message.content") from exc
        if not isinstance(content, str):
            raise MalformedResponse("chat message content is not a string")
        return content

    def complete(self, request: BackendRequest) -> BackendResponse:
        start = time.perf_counter()
        prompt = request.prompt_text
        if request.role is Role.VIEWPOINT_GENERATION:
            persona = self._persona_for(request.modulation)
            prompt = f"{persona}\n\n{prompt}"
        text = self._chat(prompt, request.seed, request.max_tokens)
        latency = time.perf_counter() - start
        if request.role is Role.COHERENCE_JUDGE:
            return BackendResponse(
                text=text, scalar=self._parse_judge_scalar(text), latency=latency
            )
        return BackendResponse(text=text, latency=latency)

    @staticmethod
    def _parse_judge_scalar(text: str) -> float:
        """The judge is prompted for a single 0-10 number; map it to [0, 1]."""
        m = _NUMBER_RE.search(text)
        if m is None:
            raise MalformedResponse(f"judge reply has no numeric score: {text[:120]!r}")
        value = float(m.group(0))
        if not (0.0 <= value <= 10.0):
            raise MalformedResponse(f"judge score {value} outside 0-10")
        return value / 10.0
