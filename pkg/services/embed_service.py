"""
Embedding Service
Exact t-SNE for laying out per-bucket topic mixtures and topic centroids in 2-D
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
import pandas as pd

from services.errors import (
    ConfigurationError,
    ConvergenceError,
    InsufficientDataError,
    NumericError,
)

logger = logging.getLogger(__name__)

DEFAULT_PERPLEXITY = 30.0
SEARCH_STEPS = 64
SEARCH_TOL = 1e-5
REPORT_TOL = 1e-3
EXAGGERATION = 12.0
EXAGGERATION_ITERS = 250
MOMENTUM_SWITCH = 250
KL_EVERY = 50


@dataclass
class AffinityMatrix:
    P: np.ndarray
    perplexity: float
    sigmas: np.ndarray
    achieved: np.ndarray = field(default=None)  # perplexity reached per point

    @property
    def converged(self) -> np.ndarray:
        return np.abs(self.achieved - self.perplexity) <= REPORT_TOL


@dataclass
class Embedding2D:
    Y: np.ndarray
    kl_final: float
    iterations_run: int
    kl_trace: List[tuple] = field(default_factory=list)  # (iteration, KL)


def effective_perplexity(n_points: int, requested: float = DEFAULT_PERPLEXITY) -> float:
    """Clamp the requested perplexity to (N - 1) / 3 for small N, never below 1.5"""
    return float(min(requested, max((n_points - 1) / 3.0, 1.5)))


def hellinger(X: np.ndarray) -> np.ndarray:
    """Elementwise square root so Euclidean distance on rows is the Hellinger geometry"""
    X = np.asarray(X, dtype=float)
    if (X < 0).any():
        raise ConfigurationError('Hellinger transform needs nonnegative rows')
    return np.sqrt(X)


def _squared_distances(X: np.ndarray) -> np.ndarray:
    sum_x = np.sum(X * X, axis=1)
    D = sum_x[:, None] + sum_x[None, :] - 2.0 * X @ X.T
    np.maximum(D, 0.0, out=D)
    np.fill_diagonal(D, 0.0)
    return D


def _row_entropy(distances: np.ndarray, beta: float):
    """Shannon entropy (nats) and conditional probabilities for precision beta"""
    shifted = distances - distances.min()
    weights = np.exp(-shifted * beta)
    total = weights.sum()
    probs = weights / total
    H = np.log(total) + beta * np.sum(shifted * probs)
    return H, probs


def conditional_probabilities(X: np.ndarray, perplexity: float):
    """
    Row-normalized p_{j|i} with per-point bandwidths found by bisection on the
    precision so that 2^H (H in bits) equals the target perplexity.

    Returns:
        (conditional matrix, sigmas, achieved perplexities)
    """
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    if n < 3:
        raise InsufficientDataError(f't-SNE needs at least 3 points, got {n}', points=n)
    if not 1.0 < perplexity < n:
        raise ConfigurationError(
            f'Perplexity {perplexity} must be in (1, N={n})', perplexity=perplexity, points=n
        )

    D = _squared_distances(X)
    target = np.log(perplexity)
    cond = np.zeros((n, n))
    betas = np.ones(n)
    achieved = np.zeros(n)

    for i in range(n):
        others = np.r_[0:i, i + 1:n]
        Di = D[i, others]
        beta, lo, hi = 1.0, 0.0, np.inf
        H, probs = _row_entropy(Di, beta)
        for _ in range(SEARCH_STEPS):
            diff = H - target
            if abs(diff) <= SEARCH_TOL:
                break
            if diff > 0:
                lo = beta
                beta = beta * 2.0 if hi == np.inf else (beta + hi) / 2.0
            else:
                hi = beta
                beta = (beta + lo) / 2.0
            H, probs = _row_entropy(Di, beta)
        cond[i, others] = probs
        betas[i] = beta
        achieved[i] = np.exp(H)

    sigmas = np.sqrt(1.0 / (2.0 * betas))
    missed = np.abs(achieved - perplexity) > REPORT_TOL
    if missed.any():
        logger.warning('Warning: %d points missed perplexity %.3f (worst achieved %.4f)',
                       int(missed.sum()), perplexity,
                       float(achieved[np.argmax(np.abs(achieved - perplexity))]))
    return cond, sigmas, achieved


def pairwise_affinities(X: np.ndarray, perplexity: float) -> AffinityMatrix:
    """Symmetric joint affinities P_ij = (p_{j|i} + p_{i|j}) / 2N"""
    cond, sigmas, achieved = conditional_probabilities(X, perplexity)
    n = cond.shape[0]
    P = (cond + cond.T) / (2.0 * n)
    np.fill_diagonal(P, 0.0)
    return AffinityMatrix(P=P, perplexity=perplexity, sigmas=sigmas, achieved=achieved)


def _student_t(Y: np.ndarray):
    num = 1.0 / (1.0 + _squared_distances(Y))
    np.fill_diagonal(num, 0.0)
    return num, num / num.sum()


def kl_divergence(P, Y: np.ndarray) -> float:
    """KL(P || Q) over off-diagonal pairs, with 0 log 0 = 0"""
    P = P.P if isinstance(P, AffinityMatrix) else np.asarray(P, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if P.shape[0] != Y.shape[0]:
        raise ConfigurationError(f'P is {P.shape[0]} points but Y has {Y.shape[0]}')
    _, Q = _student_t(Y)
    mask = P > 0
    return float(max(0.0, np.sum(P[mask] * np.log(P[mask] / Q[mask]))))


def kl_gradient(P: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """dC/dy_i = 4 sum_j (P_ij - Q_ij)(y_i - y_j)(1 + |y_i - y_j|^2)^-1"""
    num, Q = _student_t(Y)
    W = (P - Q) * num
    return 4.0 * (np.diag(W.sum(axis=1)) - W) @ Y


def tsne(
    X: np.ndarray,
    perplexity: float = DEFAULT_PERPLEXITY,
    iterations: int = 1000,
    seed: int = 20,
    learning_rate: float = 200.0,
    affinities: Optional[AffinityMatrix] = None
) -> Embedding2D:
    """
    Exact t-SNE by gradient descent with momentum.

    Early exaggeration x12 and momentum 0.5 for the first 250 iterations, then
    momentum 0.8. Initial points are N(0, 1e-4^2) from a seeded PCG64 stream; the
    result is recentered to zero mean.
    """
    X = np.asarray(X, dtype=float)
    aff = affinities or pairwise_affinities(X, perplexity)
    P = aff.P
    n = P.shape[0]

    rng = np.random.Generator(np.random.PCG64(seed))
    Y = rng.normal(0.0, 1e-4, size=(n, 2))
    update = np.zeros_like(Y)
    trace = []

    for it in range(iterations):
        exaggerated = it < EXAGGERATION_ITERS
        momentum = 0.5 if it < MOMENTUM_SWITCH else 0.8
        grad = kl_gradient(P * EXAGGERATION if exaggerated else P, Y)
        if not np.isfinite(grad).all():
            raise NumericError(f'Non-finite t-SNE gradient at iteration {it}', iteration=it)
        update = momentum * update - learning_rate * grad
        Y = Y + update
        Y = Y - Y.mean(axis=0)
        if (it + 1) % KL_EVERY == 0:
            trace.append((it + 1, kl_divergence(P, Y)))

    if not np.isfinite(Y).all():
        raise ConvergenceError('t-SNE produced non-finite coordinates')
    kl_final = kl_divergence(P, Y)
    logger.info('t-SNE on %d points: KL %.5f after %d iterations', n, kl_final, iterations)
    return Embedding2D(Y=Y, kl_final=kl_final, iterations_run=iterations, kl_trace=trace)


def embedding_frame(ids, embedding: Embedding2D, weights) -> pd.DataFrame:
    return pd.DataFrame({
        'id': list(ids),
        'x': embedding.Y[:, 0],
        'y': embedding.Y[:, 1],
        'weight': np.asarray(weights, dtype=float),
    })
