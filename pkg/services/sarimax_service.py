"""
SARIMAX Service
Regression with seasonal ARIMA errors: exact-likelihood fitting, AIC grid search,
one-step prediction, multi-step forecasts, residual diagnostics and backtesting
"""

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from itertools import product
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import stats
from scipy.optimize import minimize

from services.errors import (
    AlignmentError,
    ConfigurationError,
    FitFailureError,
    GridSearchError,
    InsufficientDataError,
    MissingExogError,
    NumericError,
    PipelineError,
    RegressionError,
    StandardizationError,
)
from services.statespace_service import (
    ArmaStructure,
    OrderSpec,
    arma_structure,
    constrain_stationary,
    difference,
    difference_columns,
    gaussian_loglik,
    integrate,
    integration_weights,
    is_invertible,
    is_stationary,
    kalman_filter,
    reduced_ar,
    reduced_ma,
    unconstrain_stationary,
)

logger = logging.getLogger(__name__)

DEFAULT_SEED = 20
MAX_EVALUATIONS = 2000
LOGLIK_TOL = 1e-8
RESTARTS = 3
RESTART_SCALE = 0.5
PENALTY = 1e10
DEFAULT_SPLIT = 0.7
DEFAULT_SEASONAL_PERIOD = 24
HIST_BINS = 20
ACF_LAGS = 40
LJUNG_BOX_LAG = 10
MIN_DIAGNOSTIC_OBS = 20
Z_95 = 1.959963984540054


@dataclass(frozen=True)
class SarimaxParams:
    phi: Tuple[float, ...] = ()
    theta: Tuple[float, ...] = ()
    Phi: Tuple[float, ...] = ()
    Theta: Tuple[float, ...] = ()
    beta_exog: Tuple[float, ...] = ()
    intercept: float = 0.0
    sigma2: float = 1.0

    def validate(self) -> None:
        if not self.sigma2 > 0:
            raise ConfigurationError('sigma2 must be positive', sigma2=self.sigma2)
        if not (is_stationary(self.phi) and is_stationary(self.Phi)):
            raise ConfigurationError('AR polynomials are not stationary',
                                     phi=self.phi, Phi=self.Phi)
        if not (is_invertible(self.theta) and is_invertible(self.Theta)):
            raise ConfigurationError('MA polynomials are not invertible',
                                     theta=self.theta, Theta=self.Theta)

    def structure(self, order: OrderSpec) -> ArmaStructure:
        return arma_structure(
            reduced_ar(np.asarray(self.phi), np.asarray(self.Phi), order.s),
            reduced_ma(np.asarray(self.theta), np.asarray(self.Theta), order.s),
            dim=order.state_dim,
        )


@dataclass
class SarimaxFit:
    order: OrderSpec
    params: SarimaxParams
    loglik: float
    aic: float
    residuals: np.ndarray          # standardized one-step innovations
    n_obs_effective: int
    converged: bool
    exog_names: Tuple[str, ...] = ()
    # forecast origin: prior state for the step after the sample, and the raw tails
    # needed to difference future exog and integrate forecasts
    state_mean: np.ndarray = field(default=None)
    state_cov: np.ndarray = field(default=None)
    endog_tail: np.ndarray = field(default=None)
    exog_tail: np.ndarray = field(default=None)

    @property
    def n_params(self) -> int:
        """AR/MA coefficients, exog betas, intercept and sigma2"""
        return self.order.n_arma + len(self.exog_names) + 2


@dataclass
class ForecastResult:
    horizon: int
    mean: np.ndarray
    variance: np.ndarray
    interval_95: np.ndarray        # horizon x 2 (lo, hi)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            'step': np.arange(1, self.horizon + 1),
            'mean': self.mean,
            'variance': self.variance,
            'lo95': self.interval_95[:, 0],
            'hi95': self.interval_95[:, 1],
        })


@dataclass
class DiagnosticReport:
    standardized: np.ndarray
    histogram: pd.DataFrame        # bin_left, bin_right, density
    normal_mean: float
    normal_std: float
    qq: pd.DataFrame               # theoretical, sample
    acf: pd.DataFrame              # lag, acf, band
    ljung_box: float
    ljung_box_pvalue: float
    ljung_box_lag: int = LJUNG_BOX_LAG

    def summary_frame(self) -> pd.DataFrame:
        return pd.DataFrame([{
            'n': int(self.standardized.shape[0]),
            'normal_mean': self.normal_mean,
            'normal_std': self.normal_std,
            'ljung_box_lag': self.ljung_box_lag,
            'ljung_box': self.ljung_box,
            'ljung_box_pvalue': self.ljung_box_pvalue,
        }])


@dataclass
class EvalReport:
    split_ratio: float
    split_index: int
    rmse_train: float
    rmse_test: float
    fit: SarimaxFit
    predictions: np.ndarray        # aligned with the full series, NaN before n_diff


# ---------------------------------------------------------------------------
# Input handling
# ---------------------------------------------------------------------------

def _as_endog(endog) -> np.ndarray:
    y = np.asarray(endog, dtype=float).ravel()
    if not np.isfinite(y).all():
        raise InsufficientDataError('Endogenous series has missing or non-finite values')
    return y


def _as_exog(exog, n: int) -> Tuple[np.ndarray, Tuple[str, ...]]:
    if exog is None:
        return np.zeros((n, 0)), ()
    if isinstance(exog, pd.Series):
        exog = exog.to_frame()
    if isinstance(exog, pd.DataFrame):
        names = tuple(str(c) for c in exog.columns)
        X = exog.to_numpy(dtype=float)
    else:
        X = np.asarray(exog, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        names = tuple(f'x{j}' for j in range(X.shape[1]))
    if X.shape[0] != n:
        raise AlignmentError(f'Exog has {X.shape[0]} rows but endog has {n}',
                             exog_rows=int(X.shape[0]), endog_rows=n)
    if not np.isfinite(X).all():
        raise InsufficientDataError('Exogenous columns have missing or non-finite values')
    return X, names


def _design(X: np.ndarray, order: OrderSpec) -> np.ndarray:
    """Intercept column plus differenced exog"""
    dX = difference_columns(X, order.d, order.D, order.s)
    return np.column_stack([np.ones(dX.shape[0]), dX])


def _check_rank(design: np.ndarray, names: Tuple[str, ...]) -> None:
    labels = ('intercept',) + names
    kept: List[int] = []
    dependent: List[str] = []
    for j in range(design.shape[1]):
        candidate = kept + [j]
        if np.linalg.matrix_rank(design[:, candidate]) == len(candidate):
            kept = candidate
        else:
            dependent.append(labels[j])
    if dependent:
        raise RegressionError(
            f'Exogenous design is rank deficient; collinear columns: {", ".join(dependent)}',
            columns=dependent,
        )


# ---------------------------------------------------------------------------
# Parameter packing
# ---------------------------------------------------------------------------

def _unpack(x: np.ndarray, order: OrderSpec) -> Tuple[np.ndarray, ...]:
    p, q, P, Q = order.p, order.q, order.P, order.Q
    phi = constrain_stationary(x[:p])
    Phi = constrain_stationary(x[p:p + P])
    theta = -constrain_stationary(x[p + P:p + P + q])
    Theta = -constrain_stationary(x[p + P + q:p + P + q + Q])
    return phi, theta, Phi, Theta


def _pack(phi, theta, Phi, Theta) -> np.ndarray:
    return np.r_[
        unconstrain_stationary(phi),
        unconstrain_stationary(Phi),
        unconstrain_stationary(-np.asarray(theta, dtype=float)),
        unconstrain_stationary(-np.asarray(Theta, dtype=float)),
    ]


def _lagged(series: np.ndarray, lags: int, start: int) -> np.ndarray:
    return np.column_stack([series[start - k:series.shape[0] - k] for k in range(1, lags + 1)])


def _hannan_rissanen(u: np.ndarray, p: int, q: int) -> Tuple[np.ndarray, np.ndarray]:
    """Nonseasonal starting values: long AR for innovations, then OLS on lags"""
    zeros = (np.zeros(p), np.zeros(q))
    n = u.shape[0]
    if p == 0 and q == 0:
        return zeros
    if q == 0:
        if n <= 2 * p + 1:
            return zeros
        coef = np.linalg.lstsq(_lagged(u, p, p), u[p:], rcond=None)[0]
        phi = coef
        return (phi, np.zeros(0)) if is_stationary(phi) else zeros

    long_order = int(max(np.floor(np.log(n) ** 2), 2 * max(p, q)))
    long_order = min(long_order, n // 3)
    start = long_order + max(p, q)
    if long_order < 1 or n - start <= p + q + 1:
        return zeros
    long_coef = np.linalg.lstsq(_lagged(u, long_order, long_order), u[long_order:], rcond=None)[0]
    eps = np.zeros(n)
    eps[long_order:] = u[long_order:] - _lagged(u, long_order, long_order) @ long_coef

    columns = []
    if p:
        columns.append(_lagged(u, p, start))
    columns.append(_lagged(eps, q, start))
    coef = np.linalg.lstsq(np.column_stack(columns), u[start:], rcond=None)[0]
    phi, theta = coef[:p], coef[p:]
    if not (is_stationary(phi) and is_invertible(theta)):
        return zeros
    return phi, theta


# ---------------------------------------------------------------------------
# Likelihood
# ---------------------------------------------------------------------------

@dataclass
class _Profile:
    loglik: float
    beta: np.ndarray               # intercept first
    sigma2: float
    residuals: np.ndarray


def _profile(w: np.ndarray, design: np.ndarray, structure: ArmaStructure) -> _Profile:
    """
    Concentrated likelihood: GLS for intercept and exog through the filter, sigma2
    profiled out. Filtering is linear, so one pass over [w, design] whitens all columns.
    """
    out = kalman_filter(np.column_stack([w, design]), structure)
    scale = np.sqrt(out.variances)
    y_star = out.innovations[:, 0] / scale
    X_star = out.innovations[:, 1:] / scale[:, None]
    beta = np.linalg.lstsq(X_star, y_star, rcond=None)[0]
    e = y_star - X_star @ beta
    n = w.shape[0]
    sigma2 = float(e @ e) / n
    if not sigma2 > 0:
        raise NumericError('Innovation variance collapsed to zero')
    loglik = -0.5 * n * (np.log(2.0 * np.pi) + np.log(sigma2) + 1.0) \
        - 0.5 * float(np.sum(np.log(out.variances)))
    return _Profile(loglik=float(loglik), beta=beta, sigma2=sigma2, residuals=e / np.sqrt(sigma2))


def loglike(params: SarimaxParams, endog, exog, order: OrderSpec) -> float:
    """Exact Gaussian log-likelihood of the differenced model at the given parameters"""
    params.validate()
    y = _as_endog(endog)
    X, names = _as_exog(exog, y.shape[0])
    if len(params.beta_exog) != len(names):
        raise ConfigurationError(
            f'Expected {len(names)} exog coefficients, got {len(params.beta_exog)}'
        )
    w, _ = difference(y, order.d, order.D, order.s)
    design = _design(X, order)
    u = w - design @ np.r_[params.intercept, params.beta_exog]
    out = kalman_filter(u, params.structure(order))
    return gaussian_loglik(out.innovations[:, 0], out.variances, params.sigma2)


def aic(loglik: float, n_params: int) -> float:
    return 2.0 * n_params - 2.0 * loglik


# ---------------------------------------------------------------------------
# Fitting
# ---------------------------------------------------------------------------

def fit(endog, exog=None, order: OrderSpec = OrderSpec(), seed: int = DEFAULT_SEED) -> SarimaxFit:
    """
    Maximum likelihood fit by Nelder-Mead over the transformed ARMA coefficients,
    started from Hannan-Rissanen estimates and restarted from seeded perturbations.

    Raises:
        InsufficientDataError: series too short for the differencing and orders
        RegressionError: collinear exog after differencing
        FitFailureError: no restart reached a finite likelihood
    """
    y = _as_endog(endog)
    X, names = _as_exog(exog, y.shape[0])
    m = order.n_diff
    if y.shape[0] - m < order.n_arma + len(names) + 2:
        raise InsufficientDataError(
            f'{y.shape[0]} observations too few for order {order.label()}',
            length=int(y.shape[0]), order=order.label(),
        )
    w, _ = difference(y, order.d, order.D, order.s)
    design = _design(X, order)
    _check_rank(design, names)

    ols = np.linalg.lstsq(design, w, rcond=None)[0]
    phi0, theta0 = _hannan_rissanen(w - design @ ols, order.p, order.q)
    x0 = _pack(phi0, theta0, np.zeros(order.P), np.zeros(order.Q))

    def structure_of(x: np.ndarray) -> ArmaStructure:
        phi, theta, Phi, Theta = _unpack(x, order)
        return arma_structure(reduced_ar(phi, Phi, order.s), reduced_ma(theta, Theta, order.s),
                              dim=order.state_dim)

    def objective(x: np.ndarray) -> float:
        try:
            value = _profile(w, design, structure_of(x)).loglik
        except (PipelineError, np.linalg.LinAlgError, ValueError):
            return PENALTY
        return -value if np.isfinite(value) else PENALTY

    if order.n_arma == 0:
        best_x, converged = x0, True
        if objective(best_x) >= PENALTY:
            raise FitFailureError(f'Non-finite likelihood for order {order.label()}',
                                  order=order.label())
    else:
        rng = np.random.Generator(np.random.PCG64(seed))
        best_x, best_value, converged = None, np.inf, False
        start = x0
        for attempt in range(RESTARTS):
            simplex = np.vstack([start, start + RESTART_SCALE * np.eye(start.shape[0])])
            result = minimize(
                objective, start, method='Nelder-Mead',
                options={'maxfev': MAX_EVALUATIONS, 'fatol': LOGLIK_TOL, 'xatol': 1e-6,
                         'initial_simplex': simplex},
            )
            if result.fun < best_value:
                best_x, best_value, converged = result.x, float(result.fun), bool(result.success)
            elif result.fun == best_value:
                converged = converged or bool(result.success)
            if not result.success:
                logger.warning('Warning: restart %d for %s stopped without converging: %s',
                               attempt, order.label(), result.message)
            start = best_x + rng.normal(0.0, RESTART_SCALE, size=best_x.shape[0])
        if best_value >= PENALTY:
            raise FitFailureError(
                f'Non-finite likelihood at every restart for order {order.label()}',
                order=order.label(),
            )

    phi, theta, Phi, Theta = _unpack(best_x, order)
    structure = arma_structure(reduced_ar(phi, Phi, order.s), reduced_ma(theta, Theta, order.s),
                               dim=order.state_dim)
    profile = _profile(w, design, structure)
    params = SarimaxParams(
        phi=tuple(float(v) for v in phi),
        theta=tuple(float(v) for v in theta),
        Phi=tuple(float(v) for v in Phi),
        Theta=tuple(float(v) for v in Theta),
        beta_exog=tuple(float(v) for v in profile.beta[1:]),
        intercept=float(profile.beta[0]),
        sigma2=profile.sigma2,
    )
    # forecast origin from the regression residual series
    origin = kalman_filter(w - design @ profile.beta, structure)

    result = SarimaxFit(
        order=order,
        params=params,
        loglik=profile.loglik,
        aic=0.0,
        residuals=profile.residuals,
        n_obs_effective=int(w.shape[0]),
        converged=converged,
        exog_names=names,
        state_mean=origin.state_mean[:, 0].copy(),
        state_cov=origin.state_cov.copy(),
        endog_tail=y[y.shape[0] - m:].copy(),
        exog_tail=X[X.shape[0] - m:].copy(),
    )
    result.aic = aic(result.loglik, result.n_params)
    logger.info('Fitted SARIMAX%s: loglik %.4f, AIC %.4f, converged %s',
                order.label(), result.loglik, result.aic, converged)
    return result


def grid_search(
    endog,
    exog=None,
    d: int = 0,
    D: int = 0,
    s: int = 1,
    p_range: Sequence[int] = range(3),
    q_range: Sequence[int] = range(3),
    P_range: Sequence[int] = range(3),
    Q_range: Sequence[int] = range(3),
    seed: int = DEFAULT_SEED,
    workers: int = 1
) -> Tuple[SarimaxFit, pd.DataFrame]:
    """
    Fit every order in the grid and keep the lowest AIC among converged fits; ties go
    to the lexicographically smallest (p, q, P, Q). With s = 1 the seasonal ranges
    collapse to 0.
    """
    if s < 2:
        P_range, Q_range = [0], [0]
    candidates = [
        OrderSpec(p=p, d=d, q=q, P=P, D=D, Q=Q, s=s)
        for p, q, P, Q in product(sorted(set(p_range)), sorted(set(q_range)),
                                  sorted(set(P_range)), sorted(set(Q_range)))
    ]
    if not candidates:
        raise ConfigurationError('Order grid is empty')

    def attempt(order: OrderSpec):
        try:
            return fit(endog, exog, order, seed=seed), None
        except PipelineError as exc:
            logger.warning('Warning: grid candidate %s failed: %s', order.label(), exc.message)
            return None, f'{type(exc).__name__}: {exc.message}'

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(attempt, candidates))
    else:
        outcomes = [attempt(order) for order in candidates]

    rows = []
    for order, (result, error) in zip(candidates, outcomes):
        rows.append({
            'p': order.p, 'd': order.d, 'q': order.q,
            'P': order.P, 'D': order.D, 'Q': order.Q, 's': order.s,
            'loglik': result.loglik if result else np.nan,
            'aic': result.aic if result else np.nan,
            'converged': bool(result.converged) if result else False,
            'error': error or '',
        })
    table = pd.DataFrame(rows)

    fitted = [(r.aic, (o.p, o.q, o.P, o.Q), r) for o, (r, _) in zip(candidates, outcomes) if r]
    if not fitted:
        reasons = {o.label(): err for o, (_, err) in zip(candidates, outcomes)}
        raise GridSearchError('Every grid candidate failed', reasons=reasons)
    eligible = [entry for entry in fitted if entry[2].converged]
    if not eligible:
        logger.warning('Warning: no grid candidate converged; choosing among unconverged fits')
        eligible = fitted
    best = min(eligible, key=lambda entry: (entry[0], entry[1]))[2]
    logger.info('Grid search over %d orders: best %s (AIC %.4f)',
                len(candidates), best.order.label(), best.aic)
    return best, table


# ---------------------------------------------------------------------------
# Prediction
# ---------------------------------------------------------------------------

def predict_one_step(fitted: SarimaxFit, endog, exog=None) -> np.ndarray:
    """
    One-step-ahead predictions on the original scale, aligned with endog. Each value
    uses only earlier observations; the first d + D*s positions have none and are NaN.
    """
    order = fitted.order
    y = _as_endog(endog)
    X, names = _as_exog(exog, y.shape[0])
    if len(names) != len(fitted.exog_names):
        raise AlignmentError(
            f'Fit used {len(fitted.exog_names)} exog columns, got {len(names)}',
            expected=list(fitted.exog_names), got=list(names),
        )
    params = fitted.params
    w, _ = difference(y, order.d, order.D, order.s)
    design = _design(X, order)
    mean = design @ np.r_[params.intercept, params.beta_exog]
    out = kalman_filter(w - mean, params.structure(order))
    w_hat = mean + (w - mean - out.innovations[:, 0])

    m = order.n_diff
    predictions = np.full(y.shape[0], np.nan)
    # y_t = w_t - sum_k delta_k y_{t-k}; swapping w_t for its prediction gives y-hat
    predictions[m:] = w_hat + (y[m:] - w)
    return predictions


def forecast(fitted: SarimaxFit, horizon: int, future_exog=None) -> ForecastResult:
    """
    Iterate the state prediction `horizon` steps past the sample without updates, then
    integrate mean and variance back through the differencing.

    Raises:
        MissingExogError: the model has exog but future rows do not cover the horizon
    """
    if horizon < 0:
        raise ConfigurationError('Horizon must be nonnegative', horizon=horizon)
    if horizon == 0:
        return ForecastResult(0, np.zeros(0), np.zeros(0), np.zeros((0, 2)))

    order, params = fitted.order, fitted.params
    k = len(fitted.exog_names)
    if k:
        if future_exog is None:
            raise MissingExogError(
                f'Forecast needs {horizon} future rows of {", ".join(fitted.exog_names)}',
                horizon=horizon, columns=list(fitted.exog_names),
            )
        rows = len(future_exog)
        if rows != horizon:
            raise MissingExogError(f'Forecast horizon {horizon} but {rows} future exog rows given',
                                   horizon=horizon, rows=rows)
        X_future, _ = _as_exog(future_exog, horizon)
        if X_future.shape[1] != k:
            raise AlignmentError(f'Future exog has {X_future.shape[1]} columns, fit used {k}')
    else:
        X_future = np.zeros((horizon, 0))

    mean_w = np.full(horizon, params.intercept)
    if k:
        stacked = np.vstack([fitted.exog_tail.reshape(-1, k), X_future])
        dX = difference_columns(stacked, order.d, order.D, order.s)
        mean_w = mean_w + dX @ np.asarray(params.beta_exog)

    structure = params.structure(order)
    ar, ma = structure.ar, structure.ma
    r = structure.dim
    T = np.zeros((r, r))
    T[:, 0] = ar
    T[np.arange(r - 1), np.arange(1, r)] = 1.0
    RR = np.outer(ma, ma)

    a = fitted.state_mean.copy()
    P = fitted.state_cov.copy()
    u_hat = np.zeros(horizon)
    C = np.zeros((horizon, horizon))
    for i in range(horizon):
        u_hat[i] = a[0]
        g = P[:, 0].copy()
        for j in range(i, horizon):
            C[i, j] = C[j, i] = g[0]
            g = T @ g
        a = T @ a
        P = T @ P @ T.T + RR

    w_hat = mean_w + u_hat
    m = order.n_diff
    mean = integrate(w_hat, fitted.endog_tail, order.d, order.D, order.s)[m:]
    psi = integration_weights(order.d, order.D, order.s, horizon)
    L = np.zeros((horizon, horizon))
    for h in range(horizon):
        L[h, :h + 1] = psi[h::-1]
    variance = params.sigma2 * np.einsum('ij,jk,ik->i', L, C, L)
    half = Z_95 * np.sqrt(variance)
    return ForecastResult(
        horizon=horizon,
        mean=mean,
        variance=variance,
        interval_95=np.column_stack([mean - half, mean + half]),
    )


# ---------------------------------------------------------------------------
# Diagnostics and evaluation
# ---------------------------------------------------------------------------

def residual_acf(x: np.ndarray, max_lag: int) -> np.ndarray:
    centered = x - x.mean()
    denom = float(centered @ centered)
    n = centered.shape[0]
    return np.array([float(centered[:n - k] @ centered[k:]) / denom for k in range(max_lag + 1)])


def ljung_box(x: np.ndarray, lag: int = LJUNG_BOX_LAG) -> Tuple[float, float]:
    n = x.shape[0]
    rho = residual_acf(x, lag)[1:]
    Q = n * (n + 2) * float(np.sum(rho ** 2 / (n - np.arange(1, lag + 1))))
    return Q, float(stats.chi2.sf(Q, lag))


def diagnostics(fitted: SarimaxFit) -> DiagnosticReport:
    """
    Residual checks: standardized series, histogram with a normal overlay, Blom Q-Q
    pairs, ACF with white-noise bands and the Ljung-Box portmanteau test.
    """
    e = np.asarray(fitted.residuals, dtype=float)
    n = e.shape[0]
    if n < MIN_DIAGNOSTIC_OBS:
        raise InsufficientDataError(f'Diagnostics need {MIN_DIAGNOSTIC_OBS} residuals, got {n}',
                                    residuals=n)
    std = float(e.std())
    if not std > 0:
        raise StandardizationError('Residuals have zero variance')
    z = (e - e.mean()) / std

    density, edges = np.histogram(z, bins=HIST_BINS, density=True)
    histogram = pd.DataFrame({'bin_left': edges[:-1], 'bin_right': edges[1:], 'density': density})

    positions = (np.arange(1, n + 1) - 0.375) / (n + 0.25)
    qq = pd.DataFrame({'theoretical': stats.norm.ppf(positions), 'sample': np.sort(z)})

    max_lag = min(ACF_LAGS, n - 1)
    acf = pd.DataFrame({
        'lag': np.arange(max_lag + 1),
        'acf': residual_acf(z, max_lag),
        'band': np.full(max_lag + 1, Z_95 / np.sqrt(n)),
    })
    lb_lag = min(LJUNG_BOX_LAG, n - 1)
    Q, pvalue = ljung_box(z, lb_lag)
    return DiagnosticReport(
        standardized=z, histogram=histogram,
        normal_mean=float(z.mean()), normal_std=float(z.std()),
        qq=qq, acf=acf, ljung_box=Q, ljung_box_pvalue=pvalue, ljung_box_lag=lb_lag,
    )


def rmse(errors: Sequence[float]) -> float:
    e = np.asarray(errors, dtype=float)
    e = e[np.isfinite(e)]
    if e.shape[0] == 0:
        raise InsufficientDataError('RMSE of an empty error series')
    return float(np.sqrt(np.mean(e * e)))


def evaluate(endog, exog=None, order: OrderSpec = OrderSpec(), split_ratio: float = DEFAULT_SPLIT,
             seed: int = DEFAULT_SEED) -> EvalReport:
    """
    Fit on the first floor(split_ratio * n) points, then filter the whole series with
    the fitted parameters. Test predictions see true past observations but no refit.
    """
    if not 0 < split_ratio < 1:
        raise ConfigurationError('split_ratio must be in (0, 1)', split_ratio=split_ratio)
    y = _as_endog(endog)
    n = y.shape[0]
    split = int(np.floor(split_ratio * n))
    if split <= order.n_diff or split >= n:
        raise InsufficientDataError(f'Split at {split} leaves an empty segment of {n} points',
                                    split=split, length=n)
    X, names = _as_exog(exog, n)
    exog_frame = pd.DataFrame(X, columns=list(names)) if names else None
    train_exog = exog_frame.iloc[:split] if exog_frame is not None else None

    fitted = fit(y[:split], train_exog, order, seed=seed)
    predictions = predict_one_step(fitted, y, exog_frame)
    errors = y - predictions
    report = EvalReport(
        split_ratio=split_ratio,
        split_index=split,
        rmse_train=rmse(errors[:split]),
        rmse_test=rmse(errors[split:]),
        fit=fitted,
        predictions=predictions,
    )
    logger.info('Backtest %s: train RMSE %.5f, test RMSE %.5f',
                order.label(), report.rmse_train, report.rmse_test)
    return report


def prediction_frame(index, observed, predictions, fc: Optional[ForecastResult] = None,
                     future_index=None) -> pd.DataFrame:
    """Observed, one-step and forecast columns on one time axis"""
    frame = pd.DataFrame({
        'time': list(index),
        'observed': np.asarray(observed, dtype=float),
        'one_step': np.asarray(predictions, dtype=float),
        'forecast': np.nan, 'lo95': np.nan, 'hi95': np.nan,
    })
    if fc is not None and fc.horizon:
        future = pd.DataFrame({
            'time': list(future_index) if future_index is not None else list(range(fc.horizon)),
            'observed': np.nan, 'one_step': np.nan,
            'forecast': fc.mean, 'lo95': fc.interval_95[:, 0], 'hi95': fc.interval_95[:, 1],
        })
        frame = pd.concat([frame, future], ignore_index=True)
    return frame


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

def fit_to_dict(fitted: SarimaxFit) -> Dict[str, Any]:
    return {
        'order': asdict(fitted.order),
        'params': {
            k: list(v) if isinstance(v, tuple) else v for k, v in asdict(fitted.params).items()
        },
        'loglik': fitted.loglik,
        'aic': fitted.aic,
        'converged': fitted.converged,
        'n_obs_effective': fitted.n_obs_effective,
        'exog_names': list(fitted.exog_names),
        'residuals': fitted.residuals.tolist(),
        'state_mean': fitted.state_mean.tolist(),
        'state_cov': fitted.state_cov.tolist(),
        'endog_tail': fitted.endog_tail.tolist(),
        'exog_tail': fitted.exog_tail.tolist(),
    }


def fit_from_dict(payload: Dict[str, Any]) -> SarimaxFit:
    params = SarimaxParams(**{
        k: tuple(v) if isinstance(v, list) else v for k, v in payload['params'].items()
    })
    params.validate()
    names = tuple(payload.get('exog_names', ()))
    endog_tail = np.asarray(payload['endog_tail'], dtype=float)
    if names:
        exog_tail = np.asarray(payload['exog_tail'], dtype=float).reshape(-1, len(names))
    else:
        exog_tail = np.zeros((endog_tail.shape[0], 0))
    return SarimaxFit(
        order=OrderSpec(**payload['order']),
        params=params,
        loglik=float(payload['loglik']),
        aic=float(payload['aic']),
        residuals=np.asarray(payload['residuals'], dtype=float),
        n_obs_effective=int(payload['n_obs_effective']),
        converged=bool(payload['converged']),
        exog_names=names,
        state_mean=np.asarray(payload['state_mean'], dtype=float),
        state_cov=np.asarray(payload['state_cov'], dtype=float),
        endog_tail=endog_tail,
        exog_tail=exog_tail,
    )


def load_fit(path: str) -> SarimaxFit:
    with open(path, 'r', encoding='utf-8') as f:
        return fit_from_dict(json.load(f))
