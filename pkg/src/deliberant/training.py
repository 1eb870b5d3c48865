"""Composite reward and the clipped-surrogate policy trainer.

The trainable object is the diagonal Gaussian that generates viewpoint
weight vectors. One deliberation is one single-step episode: the state
is the task embedding, the action is the K concatenated weight draws,
and the reward blends fact support and coherence minus a KL penalty to
a frozen reference policy. Updates are plain gradient descent on the
mean and log-variance of the clipped surrogate loss with an entropy
bonus; analytic gradients are verified against finite differences in
the test suite.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core_math import (
    GaussianPolicy,
    VARIANCE_FLOOR,
    gaussian_entropy,
    gaussian_kl,
    gaussian_log_prob,
)
from .errors import DimensionMismatch, TrainingDiverged

logger = logging.getLogger(__name__)

CURVE_HEADER = ["step", "mean_reward", "entropy", "clip_fraction", "kl_to_ref"]

_DEGENERATE_ADVANTAGE = 1e-12


@dataclass(frozen=True)
class RewardBreakdown:
    """Episode reward and its components; the blend identity is enforced."""

    s_fact: float
    s_cohe: float
    kl: float
    total: float
    lambda_reward: float
    gamma_kl: float

    def __post_init__(self):
        expected = (
            self.lambda_reward * self.s_fact
            + (1.0 - self.lambda_reward) * self.s_cohe
            - self.gamma_kl * self.kl
        )
        if abs(expected - self.total) > 1e-12:
            raise ValueError(f"reward decomposition broken: {self.total} != {expected}")


def composite_reward(
    s_fact: float,
    s_cohe: float,
    policy: GaussianPolicy,
    reference: GaussianPolicy,
    lambda_reward: float = 0.6,
    gamma_kl: float = 0.1,
) -> RewardBreakdown:
    """Blend fact and coherence scores, penalized by policy drift."""
    if not (0.0 <= s_fact <= 1.0 and 0.0 <= s_cohe <= 1.0):
        raise ValueError("component scores must lie in [0, 1]")
    if not (0.0 <= lambda_reward <= 1.0):
        raise ValueError("lambda_reward must lie in [0, 1]")
    kl = gaussian_kl(policy, reference)
    total = lambda_reward * s_fact + (1.0 - lambda_reward) * s_cohe - gamma_kl * kl
    return RewardBreakdown(
        s_fact=float(s_fact),
        s_cohe=float(s_cohe),
        kl=kl,
        total=float(total),
        lambda_reward=float(lambda_reward),
        gamma_kl=float(gamma_kl),
    )


@dataclass
class Transition:
    """One single-step episode as seen by the trainer."""

    state: np.ndarray
    action: np.ndarray  # K weight draws, concatenated
    log_prob_old: float  # behavior-policy density recorded at collection
    reward: float
    advantage: float = float("nan")


@dataclass
class PPOConfig:
    epsilon: float = 0.2        # clip range
    beta: float = 0.05          # entropy coefficient
    learning_rate: float = 3e-3
    epochs_per_batch: int = 4
    batch_size: int = 64
    lambda_reward: float = 0.6
    gamma_kl: float = 0.1

    def __post_init__(self):
        if not (0.0 < self.epsilon < 1.0):
            raise ValueError("epsilon must lie in (0, 1)")
        if self.beta < 0:
            raise ValueError("beta must be nonnegative")
        if not (0.0 <= self.lambda_reward <= 1.0):
            raise ValueError("lambda_reward must lie in [0, 1]")
        if self.batch_size < 2:
            raise ValueError("batch_size must be at least 2")
        if self.epochs_per_batch < 1:
            raise ValueError("epochs_per_batch must be positive")


def compute_advantages(rewards) -> np.ndarray:
    """Batch-mean baseline, standardized to unit variance when possible."""
    r = np.asarray(rewards, dtype=np.float64).reshape(-1)
    if r.shape[0] < 2:
        raise ValueError("advantages need at least two episodes")
    centered = r - r.mean()
    std = float(centered.std())
    if std > 1e-8:
        return centered / std
    # Below the standardization threshold the residue is float noise.
    return np.zeros_like(centered)


def action_log_prob(policy: GaussianPolicy, action) -> float:
    """Log density of K independent draws stored as one concatenated vector."""
    a = np.asarray(action, dtype=np.float64).reshape(-1)
    if a.shape[0] % policy.dim != 0:
        raise DimensionMismatch(
            f"action length {a.shape[0]} is not a multiple of policy dim {policy.dim}"
        )
    blocks = a.reshape(-1, policy.dim)
    return float(sum(gaussian_log_prob(policy, block) for block in blocks))


def _stack_actions(batch: list[Transition], dim: int) -> np.ndarray:
    actions = np.stack([np.asarray(t.action, dtype=np.float64).reshape(-1) for t in batch])
    if actions.shape[1] % dim != 0:
        raise DimensionMismatch("batch actions inconsistent with policy dim")
    return actions


def _loss_terms(batch: list[Transition], policy: GaussianPolicy, config: PPOConfig):
    """Shared forward pass: ratios, surrogate pieces, diagnostics."""
    if not batch:
        raise ValueError("empty batch")
    advantages = np.array([t.advantage for t in batch], dtype=np.float64)
    if np.any(np.isnan(advantages)):
        raise ValueError("advantages not computed for this batch")
    log_old = np.array([t.log_prob_old for t in batch], dtype=np.float64)
    log_new = np.array([action_log_prob(policy, t.action) for t in batch])
    ratios = np.exp(log_new - log_old)
    lo, hi = 1.0 - config.epsilon, 1.0 + config.epsilon
    unclipped = ratios * advantages
    clipped = np.clip(ratios, lo, hi) * advantages
    surrogate = np.minimum(unclipped, clipped)
    entropy = gaussian_entropy(policy)
    degenerate = bool(np.all(np.abs(advantages) < _DEGENERATE_ADVANTAGE))
    if degenerate:
        logger.warning("degenerate batch: all advantages are zero, entropy-only update")
        loss = -config.beta * entropy
    else:
        loss = -float(surrogate.mean()) - config.beta * entropy
    clip_fraction = float(np.mean((ratios < lo) | (ratios > hi)))
    diagnostics = {
        "mean_ratio": float(ratios.mean()),
        "clip_fraction": clip_fraction,
        "entropy": entropy,
        "degenerate": degenerate,
    }
    return loss, diagnostics, advantages, ratios, unclipped, clipped


def ppo_loss(batch: list[Transition], policy: GaussianPolicy, config: PPOConfig):
    """Clipped-surrogate loss with entropy bonus, plus diagnostics."""
    loss, diagnostics, *_ = _loss_terms(batch, policy, config)
    return loss, diagnostics


def ppo_loss_and_grad(batch: list[Transition], policy: GaussianPolicy, config: PPOConfig):
    """Loss plus analytic gradients with respect to (mean, log variance).

    The surrogate gradient flows only through samples whose active
    min-branch still depends on the ratio; samples pinned at the clip
    boundary contribute zero.
    """
    loss, diagnostics, advantages, ratios, unclipped, clipped = _loss_terms(
        batch, policy, config
    )
    d = policy.dim
    actions = _stack_actions(batch, d)
    blocks = actions.reshape(len(batch), -1, d)  # (n, K, d)
    centered = blocks - policy.mean  # broadcast over samples and draws
    inv_var = 1.0 / policy.variance
    # d logpi / d mean and d logpi / d logvar, summed over the K draws.
    dlogp_dmean = (centered * inv_var).sum(axis=1)  # (n, d)
    dlogp_dlogvar = 0.5 * ((centered**2) * inv_var - 1.0).sum(axis=1)  # (n, d)

    grad_mean = np.zeros(d)
    grad_logvar = np.zeros(d)
    if not diagnostics["degenerate"]:
        active = unclipped <= clipped  # min picks the ratio-dependent branch
        weight = np.where(active, advantages * ratios, 0.0)
        grad_mean = -(weight[:, None] * dlogp_dmean).mean(axis=0)
        grad_logvar = -(weight[:, None] * dlogp_dlogvar).mean(axis=0)
    # Entropy bonus: dH/dlogvar = 1/2 per dimension, dH/dmean = 0.
    grad_logvar = grad_logvar - config.beta * 0.5
    return loss, grad_mean, grad_logvar, diagnostics


@dataclass
class TrainResult:
    policy: GaussianPolicy
    curve: list[dict] = field(default_factory=list)
    episode_rewards: list[float] = field(default_factory=list)


def train(
    environment,
    config: PPOConfig,
    steps: int,
    initial_policy: GaussianPolicy,
    seed: int = 0,
    reference: GaussianPolicy | None = None,
    curve_path=None,
) -> TrainResult:
    """Alternate rollout collection and clipped-surrogate updates.

    `environment` is a callable (policy, episode_seed) -> Transition and
    must be deterministic per seed. Each step collects batch_size
    episodes, computes standardized advantages, and applies
    epochs_per_batch gradient-descent passes on the loss; variances are
    re-clamped at the floor after every pass. Emits one learning-curve
    row per step. steps=0 returns the initial policy bit for bit.
    """
    policy = initial_policy.copy()
    reference = reference or initial_policy.copy()
    result = TrainResult(policy=policy)
    for step in range(steps):
        episode_seeds = [
            int(s.generate_state(1)[0])
            for s in np.random.SeedSequence((seed, step)).spawn(config.batch_size)
        ]
        batch = [environment(policy, ep_seed) for ep_seed in episode_seeds]
        advantages = compute_advantages([t.reward for t in batch])
        for transition, advantage in zip(batch, advantages):
            transition.advantage = float(advantage)
        result.episode_rewards.extend(float(t.reward) for t in batch)

        diagnostics = None
        for _ in range(config.epochs_per_batch):
            loss, grad_mean, grad_logvar, diagnostics = ppo_loss_and_grad(
                batch, policy, config
            )
            if not np.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss at step {step}")
            new_mean = policy.mean - config.learning_rate * grad_mean
            new_logvar = np.log(policy.variance) - config.learning_rate * grad_logvar
            policy = GaussianPolicy(new_mean, np.exp(new_logvar))  # floor re-applied

        row = {
            "step": step,
            "mean_reward": float(np.mean([t.reward for t in batch])),
            "entropy": diagnostics["entropy"],
            "clip_fraction": diagnostics["clip_fraction"],
            "kl_to_ref": gaussian_kl(policy, reference),
        }
        result.curve.append(row)
    result.policy = policy
    if curve_path is not None:
        write_curve_csv(result.curve, curve_path)
    return result


def write_curve_csv(rows: list[dict], path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CURVE_HEADER)
        writer.writeheader()
        for row in rows:
            writer.writerow({key: row[key] for key in CURVE_HEADER})


def save_checkpoint(policy: GaussianPolicy, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(policy.to_dict(), fh)


def load_checkpoint(path) -> GaussianPolicy:
    with open(path, encoding="utf-8") as fh:
        return GaussianPolicy.from_dict(json.load(fh))


class OracleEnvironment:
    """Convex test environment: reward is the negated squared distance
    between the drawn weight vector and a hidden target."""

    def __init__(self, omega_star, k_count: int = 1):
        self.omega_star = np.asarray(omega_star, dtype=np.float64)
        self.k_count = k_count
        self.state = np.zeros_like(self.omega_star)

    def __call__(self, policy: GaussianPolicy, seed: int) -> Transition:
        rng = np.random.default_rng(seed)
        draws = policy.sample(rng, count=self.k_count)
        action = draws.reshape(-1)
        reward = -float(np.mean(np.sum((draws - self.omega_star) ** 2, axis=1)))
        return Transition(
            state=self.state,
            action=action,
            log_prob_old=action_log_prob(policy, action),
            reward=reward,
        )
