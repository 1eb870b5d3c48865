"""Run configuration: defaults, JSON loading, strict validation.

Every hyperparameter lives here with its standard default. Config files
are JSON with a top-level version field; defaults are merged in before
validation and unknown keys are rejected outright, naming the offender.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .agents import PromptTemplates, load_templates
from .backends import EndpointConfig, HttpBackend, SyntheticBackend
from .errors import ConfigError
from .selfgame import SelfGameConfig
from .training import PPOConfig


@dataclass
class EndpointSettings:
    base_url: str = "http://localhost:8080"
    chat_path: str = "/v1/chat/completions"
    embeddings_path: str = "/v1/embeddings"
    model_name: str = "default"
    timeout: float = 30.0
    max_retries: int = 3
    max_concurrency: int = 4


@dataclass
class PromptPaths:
    viewpoint: str | None = None
    arbitration: str | None = None
    judge: str | None = None


@dataclass
class AblationFlags:
    selfgame: bool = True
    retrieval: bool = True
    reward: bool = True
    single_agent: bool = False


@dataclass
class Config:
    version: int = 1
    seed: int = 0
    dim: int = 64
    k_viewpoints: int = 3          # opinion generation agents
    evidence_m: int = 5            # evidence retrievals per viewpoint
    tau: float = 0.75              # fact matching threshold
    retrieval_alpha: float = 1.5   # retrieval softmax temperature
    lambda_reward: float = 0.6     # fact weight in the composite reward
    gamma_kl: float = 0.1          # KL regularization coefficient
    epsilon_clip: float = 0.2      # surrogate clip range
    entropy_beta: float = 0.05     # entropy regularization coefficient
    selfgame_eta: float = 0.01     # self-game ascent step
    selfgame_rounds: int = 3
    selfgame_fd_step: float = 1e-3
    learning_rate: float = 3e-3
    epochs_per_batch: int = 4
    batch_size: int = 64
    w_cohe: float = 4.0
    b_cohe: float = -2.0
    fact_score_mode: str = "clamp"  # or "rescale"
    sample_evidence: bool = False
    backend: str = "synthetic"      # or "http"
    traversal_alpha: float = 6.0    # synthetic generation temperature
    runs_per_task: int = 5
    parallel: int = 1
    endpoint: EndpointSettings = field(default_factory=EndpointSettings)
    prompts: PromptPaths = field(default_factory=PromptPaths)
    ablation: AblationFlags = field(default_factory=AblationFlags)

    def __post_init__(self):
        if self.k_viewpoints < 1:
            raise ConfigError("k_viewpoints must be at least 1")
        if self.evidence_m < 1:
            raise ConfigError("evidence_m must be at least 1")
        if self.tau < 0:
            raise ConfigError("tau must be nonnegative")
        if self.retrieval_alpha <= 0:
            raise ConfigError("retrieval_alpha must be positive")
        if not (0.0 <= self.lambda_reward <= 1.0):
            raise ConfigError("lambda_reward must lie in [0, 1]")
        if not (0.0 < self.epsilon_clip < 1.0):
            raise ConfigError("epsilon_clip must lie in (0, 1)")
        if self.entropy_beta < 0:
            raise ConfigError("entropy_beta must be nonnegative")
        if self.fact_score_mode not in ("clamp", "rescale"):
            raise ConfigError("fact_score_mode must be 'clamp' or 'rescale'")
        if self.backend not in ("synthetic", "http"):
            raise ConfigError("backend must be 'synthetic' or 'http'")
        if self.dim < 2:
            raise ConfigError("dim must be at least 2")
        if self.runs_per_task < 1:
            raise ConfigError("runs_per_task must be at least 1")
        if self.parallel < 1:
            raise ConfigError("parallel must be at least 1")

    # -- derived views ---------------------------------------------------------

    def ppo(self) -> PPOConfig:
        return PPOConfig(
            epsilon=self.epsilon_clip,
            beta=self.entropy_beta,
            learning_rate=self.learning_rate,
            epochs_per_batch=self.epochs_per_batch,
            batch_size=self.batch_size,
            lambda_reward=self.lambda_reward,
            gamma_kl=self.gamma_kl,
        )

    def selfgame(self) -> SelfGameConfig:
        rounds = self.selfgame_rounds if self.ablation.selfgame else 0
        return SelfGameConfig(
            eta=self.selfgame_eta, rounds=rounds, fd_step=self.selfgame_fd_step
        )

    def templates(self) -> PromptTemplates:
        return load_templates(
            viewpoint_path=self.prompts.viewpoint,
            arbitration_path=self.prompts.arbitration,
            judge_path=self.prompts.judge,
        )

    def endpoint_config(self) -> EndpointConfig:
        return EndpointConfig(
            base_url=self.endpoint.base_url,
            chat_path=self.endpoint.chat_path,
            embeddings_path=self.endpoint.embeddings_path,
            model_name=self.endpoint.model_name,
            timeout=self.endpoint.timeout,
            max_retries=self.endpoint.max_retries,
            max_concurrency=self.endpoint.max_concurrency,
        )

    def make_backend(self, graph=None):
        if self.backend == "http":
            return HttpBackend(self.endpoint_config())
        return SyntheticBackend(
            dim=self.dim, graph=graph, traversal_alpha=self.traversal_alpha
        )

    def effective_k(self) -> int:
        return 1 if self.ablation.single_agent else self.k_viewpoints

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_NESTED = {"endpoint": EndpointSettings, "prompts": PromptPaths, "ablation": AblationFlags}


def _build_section(cls, payload: dict, prefix: str):
    known = {f.name for f in dataclasses.fields(cls)}
    for key in payload:
        if key not in known:
            raise ConfigError(f"unknown config key: {prefix}{key}")
    return cls(**payload)


def config_from_dict(payload: dict) -> Config:
    """Merge a raw mapping over the defaults; unknown keys fail fast."""
    if not isinstance(payload, dict):
        raise ConfigError("config root must be a JSON object")
    known = {f.name for f in dataclasses.fields(Config)}
    kwargs = {}
    for key, value in payload.items():
        if key not in known:
            raise ConfigError(f"unknown config key: {key}")
        if key in _NESTED:
            if not isinstance(value, dict):
                raise ConfigError(f"config key {key} must be an object")
            kwargs[key] = _build_section(_NESTED[key], value, f"{key}.")
        else:
            kwargs[key] = value
    try:
        return Config(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path) -> Config:
    with open(path, encoding="utf-8") as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    return config_from_dict(payload)


def save_config(config: Config, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(config.to_dict(), fh, indent=2)
        fh.write("\n")
