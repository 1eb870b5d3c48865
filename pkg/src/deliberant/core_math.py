"""Stateless scoring and probability kernels shared by every other module.

Covers the trace-form cosine similarity and its evidence average, the
sigmoid coherence squash, the temperature softmax used for retrieval,
and closed-form diagonal-Gaussian quantities (KL divergence, entropy,
log density). All functions are pure and operate on plain numpy arrays,
so they are safe to call from any number of concurrent contexts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, EmptyEvidence, ZeroNormInput

# Diagonal variances are clamped here to keep log-densities and KL finite.
VARIANCE_FLOOR = 1e-6

LOG_TWO_PI = float(np.log(2.0 * np.pi))


def as_matrix(values) -> np.ndarray:
    """Coerce input to a 2-D float64 array of embedding rows.

    A 1-D vector becomes the single-row special case. Raises
    DimensionMismatch for empty or >2-D input and ValueError for
    non-finite entries.
    """
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[np.newaxis, :]
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise DimensionMismatch(f"expected a vector or matrix of embeddings, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("embedding contains non-finite entries")
    return arr


def as_unit_vector(values) -> np.ndarray:
    """Coerce to a 1-D float64 vector normalized to unit L2 norm."""
    arr = np.asarray(values, dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(arr)):
        raise ValueError("embedding contains non-finite entries")
    norm = float(np.linalg.norm(arr))
    if norm == 0.0:
        raise ZeroNormInput("cannot normalize a zero vector")
    return arr / norm


def as_score(value: float) -> float:
    """Validate a unit-interval score at construction time."""
    v = float(value)
    if not (0.0 <= v <= 1.0):
        raise ValueError(f"score {v} outside [0, 1]")
    return v


def frobenius_cosine(a, b) -> float:
    """Trace-form cosine between two embedding matrices.

    Computes Tr(A @ B.T) / (||A||_F * ||B||_F) when the row counts
    match. When they differ the matrices are first mean-pooled to a
    single row each, the only shape-correct reading. The result is
    clipped to [-1, 1] to absorb float round-off.
    """
    am = as_matrix(a)
    bm = as_matrix(b)
    if am.shape[1] != bm.shape[1]:
        raise DimensionMismatch(f"column counts differ: {am.shape[1]} vs {bm.shape[1]}")
    if am.shape[0] != bm.shape[0]:
        am = am.mean(axis=0, keepdims=True)
        bm = bm.mean(axis=0, keepdims=True)
    norm_a = float(np.linalg.norm(am))
    norm_b = float(np.linalg.norm(bm))
    if norm_a == 0.0 or norm_b == 0.0:
        raise ZeroNormInput("zero Frobenius norm signals a degenerate embedding upstream")
    value = float(np.sum(am * bm)) / (norm_a * norm_b)
    return float(np.clip(value, -1.0, 1.0))


def fact_score(viewpoint, evidence, mode: str = "clamp") -> float:
    """Average cosine support of a viewpoint over its evidence set.

    Each per-evidence similarity is mapped into [0, 1] before averaging:
    "clamp" zeroes negative similarities (contradictory evidence
    contributes no support), "rescale" applies (1 + cos) / 2. Both keep
    the result in the unit interval.
    """
    if not evidence:
        raise EmptyEvidence("fact score over an empty evidence set is meaningless")
    if mode not in ("clamp", "rescale"):
        raise ValueError(f"unknown fact score mode {mode!r}")
    sims = [frobenius_cosine(viewpoint, e) for e in evidence]
    if mode == "clamp":
        vals = [max(0.0, s) for s in sims]
    else:
        vals = [(1.0 + s) / 2.0 for s in sims]
    return as_score(sum(vals) / len(vals))


def sigmoid(x: float) -> float:
    """Numerically stable logistic function."""
    if x >= 0:
        return 1.0 / (1.0 + np.exp(-x))
    z = np.exp(x)
    return float(z / (1.0 + z))


def squash_coherence(raw: float, w_cohe: float, b_cohe: float) -> float:
    """Map a raw judge output onto [0, 1] via sigmoid(raw * w + b)."""
    raw = float(raw)
    if not np.isfinite(raw):
        raise ValueError("raw coherence judgment must be finite")
    return as_score(sigmoid(raw * float(w_cohe) + float(b_cohe)))


def softmax_with_temperature(similarities, alpha: float) -> np.ndarray:
    """Temperature-scaled softmax, exp(alpha * s_i) / sum_j exp(alpha * s_j).

    Uses max-subtraction for stability; the output sums to 1 and
    preserves the rank order of the inputs for any alpha > 0.
    """
    sims = np.asarray(similarities, dtype=np.float64).reshape(-1)
    if sims.size < 1:
        raise ValueError("softmax needs at least one similarity")
    if not np.all(np.isfinite(sims)):
        raise ValueError("similarities must be finite")
    if not (alpha > 0):
        raise ValueError(f"temperature alpha must be positive, got {alpha}")
    z = alpha * sims
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


@dataclass
class GaussianPolicy:
    """Diagonal Gaussian over weight vectors: mean and per-dimension variance.

    Doubles as the sampling distribution for viewpoint weight draws and
    as the trainable policy. Variances are clamped to VARIANCE_FLOOR at
    construction so downstream log-densities stay finite.
    """

    mean: np.ndarray
    variance: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64).reshape(-1)
        self.variance = np.asarray(self.variance, dtype=np.float64).reshape(-1)
        if self.mean.shape != self.variance.shape:
            raise DimensionMismatch(
                f"mean dim {self.mean.shape[0]} != variance dim {self.variance.shape[0]}"
            )
        if not (np.all(np.isfinite(self.mean)) and np.all(np.isfinite(self.variance))):
            raise ValueError("policy parameters must be finite")
        self.variance = np.maximum(self.variance, VARIANCE_FLOOR)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def sample(self, rng: np.random.Generator, count: int | None = None) -> np.ndarray:
        """Draw one (d,) sample or a (count, d) batch."""
        std = np.sqrt(self.variance)
        if count is None:
            return rng.normal(self.mean, std)
        return rng.normal(self.mean, std, size=(count, self.dim))

    def copy(self) -> "GaussianPolicy":
        return GaussianPolicy(self.mean.copy(), self.variance.copy())

    def to_dict(self) -> dict:
        return {
            "format_version": 1,
            "dim": self.dim,
            "mean": [float(v) for v in self.mean],
            "variance": [float(v) for v in self.variance],
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "GaussianPolicy":
        mean = np.asarray(payload["mean"], dtype=np.float64)
        variance = np.asarray(payload["variance"], dtype=np.float64)
        if "dim" in payload and int(payload["dim"]) != mean.shape[0]:
            raise DimensionMismatch("checkpoint dim field disagrees with mean length")
        return cls(mean, variance)


def _check_same_dim(p: GaussianPolicy, q: GaussianPolicy):
    if p.dim != q.dim:
        raise DimensionMismatch(f"policy dims differ: {p.dim} vs {q.dim}")


def gaussian_kl(p: GaussianPolicy, q: GaussianPolicy) -> float:
    """Closed-form KL(p || q) between diagonal Gaussians; >= 0, zero iff equal."""
    _check_same_dim(p, q)
    ratio = p.variance / q.variance
    mean_term = (p.mean - q.mean) ** 2 / q.variance
    kl = 0.5 * float(np.sum(np.log(1.0 / ratio) + ratio + mean_term - 1.0))
    # Exact-equality round-off can land a hair below zero.
    return max(kl, 0.0)


def gaussian_entropy(p: GaussianPolicy) -> float:
    """Differential entropy of a diagonal Gaussian, 0.5 * sum(ln(2*pi*e*var))."""
    return 0.5 * float(np.sum(LOG_TWO_PI + 1.0 + np.log(p.variance)))


def gaussian_log_prob(p: GaussianPolicy, x) -> float:
    """Log density of a diagonal Gaussian at x; maximized at x == mean."""
    xv = np.asarray(x, dtype=np.float64).reshape(-1)
    if xv.shape[0] != p.dim:
        raise DimensionMismatch(f"point dim {xv.shape[0]} != policy dim {p.dim}")
    quad = (xv - p.mean) ** 2 / p.variance
    return -0.5 * float(np.sum(LOG_TWO_PI + np.log(p.variance) + quad))
