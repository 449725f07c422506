"""
Decomposition Service
Classical additive decomposition: centered moving-average trend, per-phase seasonal
means re-centered to zero, residual by subtraction
"""

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import pandas as pd

from services.errors import ConfigurationError, InsufficientDataError


@dataclass
class DecompositionResult:
    observed: np.ndarray
    trend: np.ndarray          # NaN at the period // 2 edge positions
    seasonal: np.ndarray
    residual: np.ndarray       # NaN wherever trend is
    period: int

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            'index': np.arange(self.observed.shape[0]),
            'observed': self.observed,
            'trend': self.trend,
            'seasonal': self.seasonal,
            'residual': self.residual,
        })


def moving_average_filter(period: int) -> np.ndarray:
    """Centered weights; even periods use half weights at both ends (2 x period MA)"""
    if period % 2:
        return np.full(period, 1.0 / period)
    weights = np.full(period + 1, 1.0 / period)
    weights[0] = weights[-1] = 0.5 / period
    return weights


def decompose_additive(series: Sequence[float], period: int) -> DecompositionResult:
    """
    Split a series into trend + seasonal + residual.

    Raises:
        ConfigurationError: period < 2
        InsufficientDataError: fewer than two full periods, or missing values
    """
    x = np.asarray(series, dtype=float)
    if period < 2:
        raise ConfigurationError(f'Period must be at least 2, got {period}', period=period)
    if x.shape[0] < 2 * period:
        raise InsufficientDataError(
            f'Decomposition with period {period} needs {2 * period} points, got {x.shape[0]}',
            period=period, length=int(x.shape[0]),
        )
    if not np.isfinite(x).all():
        raise InsufficientDataError('Decomposition input has missing or non-finite values')

    weights = moving_average_filter(period)
    half = period // 2
    n = x.shape[0]
    trend = np.full(n, np.nan)
    # 'valid' convolution covers indices half .. n - half - 1 for both odd and even periods
    trend[half:n - half] = np.convolve(x, weights[::-1], mode='valid')

    detrended = x - trend
    phase_means = np.array([
        np.nanmean(detrended[phase::period]) for phase in range(period)
    ])
    phase_means -= phase_means.mean()
    seasonal = np.tile(phase_means, n // period + 1)[:n]
    residual = x - trend - seasonal

    return DecompositionResult(
        observed=x, trend=trend, seasonal=seasonal, residual=residual, period=period
    )
