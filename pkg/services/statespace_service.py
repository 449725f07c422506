"""
State Space Service
Building blocks for regression with seasonal ARMA errors: differencing, lag
polynomials, the stationarity-preserving parameter transform and the Kalman filter
that yields the exact Gaussian likelihood
"""

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from numba import njit
from scipy.linalg import solve_discrete_lyapunov

from services.errors import ConfigurationError, InsufficientDataError, NumericError

LOG_2PI = math.log(2.0 * math.pi)
STEADY_STATE_TOL = 1e-14


@dataclass(frozen=True)
class OrderSpec:
    p: int = 0
    d: int = 0
    q: int = 0
    P: int = 0
    D: int = 0
    Q: int = 0
    s: int = 1

    def __post_init__(self):
        for name in ('p', 'd', 'q', 'P', 'D', 'Q'):
            if getattr(self, name) < 0:
                raise ConfigurationError(f'Order {name} must be nonnegative',
                                         **{name: getattr(self, name)})
        if self.s < 1:
            raise ConfigurationError('Seasonal period s must be at least 1', s=self.s)
        if self.s < 2 and (self.P or self.D or self.Q):
            raise ConfigurationError('Seasonal terms need s >= 2', P=self.P, D=self.D, Q=self.Q)

    @property
    def n_diff(self) -> int:
        """Observations consumed by differencing"""
        return self.d + self.D * self.s

    @property
    def n_arma(self) -> int:
        return self.p + self.q + self.P + self.Q

    @property
    def state_dim(self) -> int:
        return max(self.p + self.P * self.s, self.q + self.Q * self.s + 1)

    def label(self) -> str:
        return f'({self.p},{self.d},{self.q})({self.P},{self.D},{self.Q},{self.s})'

    def as_tuple(self) -> Tuple[int, ...]:
        return (self.p, self.d, self.q, self.P, self.D, self.Q, self.s)


# ---------------------------------------------------------------------------
# Differencing
# ---------------------------------------------------------------------------

def differencing_polynomial(d: int, D: int, s: int) -> np.ndarray:
    """Coefficients of (1 - B)^d (1 - B^s)^D, lowest power first"""
    poly = np.array([1.0])
    for _ in range(d):
        poly = np.convolve(poly, [1.0, -1.0])
    seasonal = np.zeros(s + 1)
    seasonal[0], seasonal[s] = 1.0, -1.0
    for _ in range(D):
        poly = np.convolve(poly, seasonal)
    return poly


def difference(series: Sequence[float], d: int = 0, D: int = 0,
               s: int = 1) -> Tuple[np.ndarray, np.ndarray]:
    """
    Apply (1 - B)^d (1 - B^s)^D.

    Returns:
        (differenced series of length n - d - D*s, the first d + D*s values as anchors)
    """
    if d < 0 or D < 0 or s < 1:
        raise ConfigurationError('Differencing orders must be nonnegative and s >= 1')
    x = np.asarray(series, dtype=float)
    m = d + D * s
    if x.ndim != 1 or x.shape[0] <= m:
        raise InsufficientDataError(
            f'Series of length {x.shape[0]} too short for d={d}, D={D}, s={s}',
            length=int(x.shape[0]), d=d, D=D, s=s,
        )
    delta = differencing_polynomial(d, D, s)
    return np.convolve(x, delta, mode='valid'), x[:m].copy()


def difference_columns(X: np.ndarray, d: int, D: int, s: int) -> np.ndarray:
    if X.shape[1] == 0:
        return X[d + D * s:]
    return np.column_stack([difference(X[:, j], d, D, s)[0] for j in range(X.shape[1])])


def integrate(differenced: Sequence[float], anchors: Sequence[float], d: int = 0, D: int = 0,
              s: int = 1) -> np.ndarray:
    """Inverse of difference: rebuild the original series from its anchors"""
    w = np.asarray(differenced, dtype=float)
    delta = differencing_polynomial(d, D, s)
    m = delta.shape[0] - 1
    anchors = np.asarray(anchors, dtype=float)
    if anchors.shape[0] != m:
        raise ConfigurationError(f'Expected {m} anchors, got {anchors.shape[0]}')
    y = np.empty(m + w.shape[0])
    y[:m] = anchors
    for t in range(m, y.shape[0]):
        y[t] = w[t - m] - np.dot(delta[1:], y[t - 1::-1][:m]) if m else w[t]
    return y


def integration_weights(d: int, D: int, s: int, horizon: int) -> np.ndarray:
    """Power-series coefficients of 1 / ((1 - B)^d (1 - B^s)^D) up to horizon - 1"""
    delta = differencing_polynomial(d, D, s)
    psi = np.zeros(max(horizon, 1))
    psi[0] = 1.0
    for j in range(1, horizon):
        k = np.arange(1, min(j, delta.shape[0] - 1) + 1)
        psi[j] = -np.dot(delta[k], psi[j - k]) if k.size else 0.0
    return psi[:horizon]


# ---------------------------------------------------------------------------
# Lag polynomials and the stationarity transform
# ---------------------------------------------------------------------------

def reduced_ar(phi: np.ndarray, Phi: np.ndarray, s: int) -> np.ndarray:
    """a_k in (1 - sum phi_i B^i)(1 - sum Phi_j B^js) = 1 - sum a_k B^k"""
    nonseasonal = np.r_[1.0, -np.asarray(phi, dtype=float)]
    seasonal = np.zeros(len(Phi) * s + 1)
    seasonal[0] = 1.0
    if len(Phi):
        seasonal[s::s] = -np.asarray(Phi, dtype=float)
    return -np.convolve(nonseasonal, seasonal)[1:]


def reduced_ma(theta: np.ndarray, Theta: np.ndarray, s: int) -> np.ndarray:
    """b_k in (1 + sum theta_i B^i)(1 + sum Theta_j B^js) = 1 + sum b_k B^k"""
    nonseasonal = np.r_[1.0, np.asarray(theta, dtype=float)]
    seasonal = np.zeros(len(Theta) * s + 1)
    seasonal[0] = 1.0
    if len(Theta):
        seasonal[s::s] = np.asarray(Theta, dtype=float)
    return np.convolve(nonseasonal, seasonal)[1:]


def constrain_stationary(unconstrained: Sequence[float]) -> np.ndarray:
    """
    Map any real vector to coefficients c with 1 - sum c_i B^i stationary, through
    partial autocorrelations r = x / sqrt(1 + x^2) and the Durbin-Levinson recursion.
    """
    x = np.asarray(unconstrained, dtype=float)
    n = x.shape[0]
    if n == 0:
        return x.copy()
    r = x / np.sqrt(1.0 + x * x)
    y = np.zeros((n, n))
    for k in range(n):
        for i in range(k):
            y[k, i] = y[k - 1, i] + r[k] * y[k - 1, k - i - 1]
        y[k, k] = r[k]
    return -y[n - 1, :]


def unconstrain_stationary(constrained: Sequence[float]) -> np.ndarray:
    """Inverse of constrain_stationary for coefficients of a stationary polynomial"""
    c = np.asarray(constrained, dtype=float)
    n = c.shape[0]
    if n == 0:
        return c.copy()
    y = np.zeros((n, n))
    y[n - 1, :] = -c
    for k in range(n - 1, 0, -1):
        for i in range(k):
            y[k - 1, i] = (y[k, i] - y[k, k] * y[k, k - i - 1]) / (1.0 - y[k, k] ** 2)
    r = np.clip(y.diagonal(), -0.999999, 0.999999)
    return r / np.sqrt(1.0 - r * r)


def is_stationary(coefficients: Sequence[float]) -> bool:
    """True when 1 - sum c_i z^i has every root strictly outside the unit circle"""
    c = np.asarray(coefficients, dtype=float)
    if c.shape[0] == 0 or not np.any(c):
        return True
    poly = np.r_[1.0, -c]
    roots = np.roots(poly[::-1])
    return bool(np.all(np.abs(roots) > 1.0))


def is_invertible(coefficients: Sequence[float]) -> bool:
    """True when 1 + sum c_i z^i has every root strictly outside the unit circle"""
    return is_stationary(-np.asarray(coefficients, dtype=float))


# ---------------------------------------------------------------------------
# Kalman filter
# ---------------------------------------------------------------------------

@njit(cache=True, nogil=True)
def _kalman_filter(Y, ar, ma, P0):  # pragma: no cover
    """
    Filter every column of Y through the ARMA state space model with unit innovation
    variance. State: alpha_{t+1} = T alpha_t + R eps, y_t = alpha_t[0], with
    T[i, 0] = ar[i], T[i, i + 1] = 1 and R = (1, ma_1, ..., ma_{r-1}).

    Returns innovations (n x m), their variances F (n), and the prior state mean
    (r x m) and covariance (r x r) for the step after the last observation.
    """
    n, m = Y.shape
    r = ar.shape[0]
    a = np.zeros((r, m))
    P = P0.copy()
    V = np.zeros((n, m))
    F = np.zeros(n)
    RR = np.outer(ma, ma)
    M = np.zeros((r, r))
    Pn = np.zeros((r, r))
    steady = False
    bad = False

    for t in range(n):
        f = P[0, 0]
        if not (f > 0.0):
            bad = True
            break
        F[t] = f
        for j in range(m):
            V[t, j] = Y[t, j] - a[0, j]
        # update
        for j in range(m):
            scale = V[t, j] / f
            for i in range(r):
                a[i, j] += P[i, 0] * scale
        # predict the state mean
        for j in range(m):
            head = a[0, j]
            for i in range(r - 1):
                a[i, j] = ar[i] * head + a[i + 1, j]
            a[r - 1, j] = ar[r - 1] * head
        if steady:
            continue
        # filtered covariance, then T P T' + R R'
        for i in range(r):
            for k in range(r):
                Pn[i, k] = P[i, k] - P[i, 0] * P[0, k] / f
        for i in range(r):
            for k in range(r):
                val = ar[i] * Pn[0, k]
                if i < r - 1:
                    val += Pn[i + 1, k]
                M[i, k] = val
        diff = 0.0
        for i in range(r):
            for k in range(r):
                val = ar[k] * M[i, 0] + RR[i, k]
                if k < r - 1:
                    val += M[i, k + 1]
                delta = abs(val - P[i, k])
                if delta > diff:
                    diff = delta
                P[i, k] = val
        if diff < STEADY_STATE_TOL:
            steady = True

    return V, F, a, P, bad


@dataclass
class FilterOutput:
    innovations: np.ndarray   # n x m, unit-variance scale
    variances: np.ndarray     # F_t, to be multiplied by sigma2
    state_mean: np.ndarray    # r x m prior for the next step
    state_cov: np.ndarray     # r x r prior for the next step (unit scale)


@dataclass(frozen=True)
class ArmaStructure:
    """Companion-form pieces for a (reduced) ARMA polynomial pair"""

    ar: np.ndarray
    ma: np.ndarray           # R vector, ma[0] == 1

    @property
    def dim(self) -> int:
        return self.ar.shape[0]


def arma_structure(ar_coeffs: np.ndarray, ma_coeffs: np.ndarray,
                   dim: Optional[int] = None) -> ArmaStructure:
    r = dim or max(ar_coeffs.shape[0], ma_coeffs.shape[0] + 1)
    ar = np.zeros(r)
    ar[:ar_coeffs.shape[0]] = ar_coeffs
    ma = np.zeros(r)
    ma[0] = 1.0
    ma[1:ma_coeffs.shape[0] + 1] = ma_coeffs
    return ArmaStructure(ar=ar, ma=ma)


def transition_matrix(structure: ArmaStructure) -> np.ndarray:
    r = structure.dim
    T = np.zeros((r, r))
    T[:, 0] = structure.ar
    T[np.arange(r - 1), np.arange(1, r)] = 1.0
    return T


def initial_covariance(structure: ArmaStructure) -> np.ndarray:
    """Unconditional state covariance (unit innovation variance) from the Lyapunov equation"""
    T = transition_matrix(structure)
    Q = np.outer(structure.ma, structure.ma)
    try:
        P0 = solve_discrete_lyapunov(T, Q)
    except np.linalg.LinAlgError as exc:
        raise NumericError('Lyapunov equation has no solution; AR part is not stationary') from exc
    if not np.isfinite(P0).all():
        raise NumericError('Initial state covariance is not finite')
    return (P0 + P0.T) / 2.0


def kalman_filter(Y: np.ndarray, structure: ArmaStructure) -> FilterOutput:
    """Run the filter over one series (1-D) or several columns sharing the model"""
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    P0 = initial_covariance(structure)
    V, F, a, P, bad = _kalman_filter(np.ascontiguousarray(Y), structure.ar, structure.ma, P0)
    if bad:
        raise NumericError('Kalman filter hit a non-positive innovation variance')
    return FilterOutput(innovations=V, variances=F, state_mean=a, state_cov=P)


def gaussian_loglik(innovations: np.ndarray, variances: np.ndarray, sigma2: float) -> float:
    """Prediction-error decomposition of the Gaussian log-likelihood"""
    v = np.asarray(innovations, dtype=float)
    f = sigma2 * np.asarray(variances, dtype=float)
    return float(-0.5 * np.sum(LOG_2PI + np.log(f) + v * v / f))
