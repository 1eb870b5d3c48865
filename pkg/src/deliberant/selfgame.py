"""Self-game diversification of viewpoint weight vectors.

Each viewpoint ascends the squared difference between its own fact
score and the mean fact score of its peers, estimated by central
finite differences in weight space against a frozen, deterministic
evaluation context. Updates for all viewpoints within one round are
computed first and applied together at a barrier.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NonDeterministicEvaluator, SingleViewpoint


@dataclass
class SelfGameConfig:
    eta: float = 0.01        # ascent step
    rounds: int = 3
    fd_step: float = 1e-3

    def __post_init__(self):
        if self.eta < 0:
            raise ValueError("eta must be nonnegative")
        if self.fd_step <= 0:
            raise ValueError("fd_step must be positive")
        if self.rounds < 0:
            raise ValueError("rounds must be nonnegative")


def selfgame_objective(k: int, fact_scores) -> float:
    """Squared gap between score k and the mean of the other scores."""
    scores = np.asarray(fact_scores, dtype=np.float64).reshape(-1)
    if scores.shape[0] < 2:
        raise SingleViewpoint("diversity objective needs at least two viewpoints")
    if not (0 <= k < scores.shape[0]):
        raise IndexError(f"viewpoint index {k} out of range")
    others = np.delete(scores, k)
    return float((scores[k] - others.mean()) ** 2)


def central_difference_gradient(f, x, step: float) -> np.ndarray:
    """Two-sided finite differences per coordinate: exactly 2d evaluations."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for i in range(x.shape[0]):
        basis = np.zeros_like(x)
        basis[i] = step
        grad[i] = (f(x + basis) - f(x - basis)) / (2.0 * step)
    return grad


def five_point_gradient(f, x, step: float) -> np.ndarray:
    """Fourth-order stencil, used as an independent oracle in tests."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for i in range(x.shape[0]):
        basis = np.zeros_like(x)
        basis[i] = step
        grad[i] = (
            -f(x + 2 * basis) + 8 * f(x + basis) - 8 * f(x - basis) + f(x - 2 * basis)
        ) / (12.0 * step)
    return grad


def estimate_gradient(
    k: int,
    omega_k,
    evaluate,
    fd_step: float,
    probe_determinism: bool = False,
) -> np.ndarray:
    """Finite-difference gradient of the diversity objective at omega_k.

    `evaluate` maps a candidate weight vector for viewpoint k to the
    full score vector (peers held fixed). It must be deterministic;
    with probe_determinism=True the same point is evaluated twice first
    and any disagreement aborts, since finite differences of a noisy
    function are meaningless.
    """
    omega_k = np.asarray(omega_k, dtype=np.float64)
    if probe_determinism:
        first = np.asarray(evaluate(omega_k), dtype=np.float64)
        second = np.asarray(evaluate(omega_k), dtype=np.float64)
        if not np.array_equal(first, second):
            raise NonDeterministicEvaluator(
                "two identical probes disagreed; freeze the evaluation context"
            )
    return central_difference_gradient(
        lambda omega: selfgame_objective(k, evaluate(omega)), omega_k, fd_step
    )


def run_selfgame(omegas, score_fn, config: SelfGameConfig):
    """Run the configured rounds of barrier-synchronized ascent.

    omegas is the (K, d) stack of weight vectors; score_fn(k, omega)
    returns viewpoint k's fact score under a candidate weight with all
    peers frozen at their round-start weights. Returns the updated
    stack and a per-round log of scores and objectives. K < 2 or zero
    rounds returns the input unchanged.
    """
    omegas = np.asarray(omegas, dtype=np.float64).copy()
    k_count = omegas.shape[0]
    log: list[dict] = []
    if config.rounds == 0 or k_count < 2:
        return omegas, log
    for _ in range(config.rounds):
        scores = np.array([score_fn(k, omegas[k]) for k in range(k_count)])

        def make_evaluate(k):
            def evaluate(candidate):
                probe = scores.copy()
                probe[k] = score_fn(k, candidate)
                return probe

            return evaluate

        gradients = np.stack(
            [
                estimate_gradient(
                    k,
                    omegas[k],
                    make_evaluate(k),
                    config.fd_step,
                    probe_determinism=(k == 0),
                )
                for k in range(k_count)
            ]
        )
        log.append(
            {
                "scores": [float(s) for s in scores],
                "objectives": [float(selfgame_objective(k, scores)) for k in range(k_count)],
                "gradient_norms": [float(np.linalg.norm(g)) for g in gradients],
            }
        )
        if config.eta != 0.0:
            omegas = omegas + config.eta * gradients
    return omegas, log
