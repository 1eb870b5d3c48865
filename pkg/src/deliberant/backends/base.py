"""Backend abstraction: request/response types and the provider interface."""

from __future__ import annotations

import enum
from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np


class Role(enum.Enum):
    """Which agent a completion request serves."""

    VIEWPOINT_GENERATION = "viewpoint_generation"
    ARBITRATION = "arbitration"
    COHERENCE_JUDGE = "coherence_judge"


@dataclass
class BackendRequest:
    role: Role
    prompt_text: str
    modulation: np.ndarray | None = None  # weight-modulated task embedding
    seed: int = 0
    max_tokens: int = 256

    def __post_init__(self):
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be positive")
        has_mod = self.modulation is not None
        needs_mod = self.role is Role.VIEWPOINT_GENERATION
        if has_mod != needs_mod:
            raise ValueError(
                "modulation must be present exactly for viewpoint-generation requests"
            )
        if has_mod:
            self.modulation = np.asarray(self.modulation, dtype=np.float64).reshape(-1)


@dataclass
class BackendResponse:
    text: str
    scalar: float | None = None  # raw coherence judgment, judge role only
    latency: float = 0.0

    def __post_init__(self):
        if self.latency < 0:
            raise ValueError("latency must be nonnegative")


def validate_response(role: Role, response: BackendResponse):
    """Enforce the scalar-presence contract: judge responses carry one, others do not."""
    has_scalar = response.scalar is not None
    if has_scalar != (role is Role.COHERENCE_JUDGE):
        raise ValueError(f"scalar presence inconsistent with role {role.value}")


@dataclass
class EndpointConfig:
    """Connection settings for an OpenAI-compatible endpoint."""

    base_url: str = "http://localhost:8080"
    chat_path: str = "/v1/chat/completions"
    embeddings_path: str = "/v1/embeddings"
    model_name: str = "default"
    timeout: float = 30.0
    max_retries: int = 3
    max_concurrency: int = 4

    def __post_init__(self):
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")
        if not (0 <= self.max_retries <= 5):
            raise ValueError("max_retries must be between 0 and 5")
        if self.max_concurrency < 1:
            raise ValueError("max_concurrency must be positive")


class Backend(ABC):
    """Model provider: one text-completion surface plus one embedder."""

    @abstractmethod
    def complete(self, request: BackendRequest) -> BackendResponse:
        """One completion round trip for the requested role."""

    @abstractmethod
    def embed(self, text: str) -> np.ndarray:
        """Unit-norm embedding of the given nonempty text."""

    @property
    @abstractmethod
    def dim(self) -> int:
        """Embedding dimension this backend produces."""
