"""
Report Service
Plot-ready tables: boxplot summaries, skewness, normalized histograms, per-topic
sentiment and price correlation, and alignment of bucket features onto a price grid
"""

from typing import Any, Dict, Sequence

import numpy as np
import pandas as pd
from scipy import stats

from services.errors import AlignmentError, InsufficientDataError

FENCE = 1.5
DEFAULT_BINS = 20
FEATURE_COLUMNS = ('tweet_count', 'sentiment_per_tweet')


def boxplot_summary(values: Sequence[float]) -> Dict[str, Any]:
    """
    Five-number summary with linear-interpolation quartiles. min/max are the whisker
    ends (most extreme points inside the 1.5 x IQR fences); points beyond are outliers.
    """
    x = np.asarray(values, dtype=float)
    x = x[np.isfinite(x)]
    if x.shape[0] == 0:
        raise InsufficientDataError('Boxplot of an empty sample')
    q1, median, q3 = np.percentile(x, [25, 50, 75])
    iqr = q3 - q1
    lo_fence, hi_fence = q1 - FENCE * iqr, q3 + FENCE * iqr
    inside = x[(x >= lo_fence) & (x <= hi_fence)]
    outliers = np.sort(x[(x < lo_fence) | (x > hi_fence)])
    return {
        'n': int(x.shape[0]),
        'min': float(inside.min()),
        'q1': float(q1),
        'median': float(median),
        'q3': float(q3),
        'max': float(inside.max()),
        'outliers': [float(v) for v in outliers],
    }


def skewness(values: Sequence[float]) -> float:
    """Adjusted Fisher-Pearson sample skewness; NaN below 3 points or for constant data"""
    x = np.asarray(values, dtype=float)
    x = x[np.isfinite(x)]
    if x.shape[0] < 3 or np.ptp(x) == 0:
        return float('nan')
    return float(stats.skew(x, bias=False))


def normalized_histogram(values: Sequence[float], bins: int = DEFAULT_BINS) -> pd.DataFrame:
    """Bin masses (count / n) over equal-width bins; the masses sum to 1"""
    x = np.asarray(values, dtype=float)
    x = x[np.isfinite(x)]
    if x.shape[0] == 0:
        raise InsufficientDataError('Histogram of an empty sample')
    counts, edges = np.histogram(x, bins=bins)
    return pd.DataFrame({
        'bin_left': edges[:-1],
        'bin_right': edges[1:],
        'count': counts,
        'mass': counts / x.shape[0],
    })


def _by_topic(features: pd.DataFrame, dominant: Sequence[int]) -> pd.DataFrame:
    dominant = np.asarray(dominant)
    if dominant.shape[0] != len(features):
        raise AlignmentError(
            f'{dominant.shape[0]} topic labels for {len(features)} feature rows',
            labels=int(dominant.shape[0]), rows=len(features),
        )
    frame = features.reset_index(drop=True).copy()
    frame['topic'] = dominant
    # buckets without tweets carry no sentiment and are left out of per-topic figures
    return frame[frame['tweet_count'] > 0]


def topic_boxplots(features: pd.DataFrame, dominant: Sequence[int],
                   columns: Sequence[str] = FEATURE_COLUMNS) -> pd.DataFrame:
    rows = []
    for topic, group in _by_topic(features, dominant).groupby('topic'):
        for column in columns:
            summary = boxplot_summary(group[column])
            rows.append({
                'topic': int(topic),
                'variable': column,
                **{k: v for k, v in summary.items() if k != 'outliers'},
                'outliers': ';'.join(repr(v) for v in summary['outliers']),
                'skewness': skewness(group[column]),
            })
    return pd.DataFrame(rows, columns=['topic', 'variable', 'n', 'min', 'q1', 'median', 'q3',
                                       'max', 'outliers', 'skewness'])


def topic_histograms(features: pd.DataFrame, dominant: Sequence[int],
                     columns: Sequence[str] = FEATURE_COLUMNS,
                     bins: int = DEFAULT_BINS) -> pd.DataFrame:
    parts = []
    for topic, group in _by_topic(features, dominant).groupby('topic'):
        for column in columns:
            hist = normalized_histogram(group[column], bins)
            hist.insert(0, 'variable', column)
            hist.insert(0, 'topic', int(topic))
            parts.append(hist)
    if not parts:
        return pd.DataFrame(columns=['topic', 'variable', 'bin_left', 'bin_right', 'count', 'mass'])
    return pd.concat(parts, ignore_index=True)


def topic_sentiment_summary(features: pd.DataFrame, dominant: Sequence[int]) -> pd.DataFrame:
    """Per-topic buckets, tweets, and mean / std / skewness of sentiment per tweet"""
    rows = []
    for topic, group in _by_topic(features, dominant).groupby('topic'):
        sentiment = group['sentiment_per_tweet']
        rows.append({
            'topic': int(topic),
            'buckets': int(len(group)),
            'tweets': int(group['tweet_count'].sum()),
            'sentiment_mean': float(sentiment.mean()),
            'sentiment_std': float(sentiment.std(ddof=0)),
            'sentiment_skewness': skewness(sentiment),
        })
    return pd.DataFrame(rows, columns=['topic', 'buckets', 'tweets', 'sentiment_mean',
                                       'sentiment_std', 'sentiment_skewness'])


def align_to_grid(frame: pd.DataFrame, grid: pd.DatetimeIndex) -> pd.DataFrame:
    """
    Interval means of time-indexed rows onto another time grid. Row t counts toward
    grid point g_i when g_i <= t < g_{i+1}; the last grid interval is open-ended. Grid
    points with no rows carry the previous value forward, then 0 before any data.
    """
    if len(grid) == 0:
        raise AlignmentError('Target grid is empty')
    grid = pd.DatetimeIndex(grid)
    stamps = pd.DatetimeIndex(frame.index)
    if stamps.tz is None and grid.tz is not None:
        stamps = stamps.tz_localize('UTC')
    elif stamps.tz is not None and grid.tz is None:
        grid = grid.tz_localize('UTC')
    slot = np.searchsorted(grid.asi8, stamps.asi8, side='right') - 1
    keep = slot >= 0
    values = frame.reset_index(drop=True)[keep]
    means = values.groupby(slot[keep]).mean()
    aligned = means.reindex(range(len(grid))).ffill().fillna(0.0)
    aligned.index = grid
    return aligned


def topic_price_correlation(topic_counts: pd.DataFrame, price: pd.Series) -> pd.DataFrame:
    """Pearson correlation of each topic's count series with the price on the price grid"""
    aligned = align_to_grid(topic_counts, pd.DatetimeIndex(price.index))
    y = price.to_numpy(dtype=float)
    rows = []
    for column in aligned.columns:
        x = aligned[column].to_numpy(dtype=float)
        if x.shape[0] < 2 or np.ptp(x) == 0 or np.ptp(y) == 0:
            r = float('nan')
        else:
            r = float(np.clip(np.corrcoef(x, y)[0, 1], -1.0, 1.0))
        rows.append({'topic': column, 'correlation': r, 'points': int(x.shape[0])})
    return pd.DataFrame(rows, columns=['topic', 'correlation', 'points'])


def diagnostic_tables(report) -> Dict[str, pd.DataFrame]:
    """Name -> table for a sarimax DiagnosticReport"""
    residuals = pd.DataFrame({
        'index': np.arange(report.standardized.shape[0]),
        'standardized': report.standardized,
    })
    return {
        'diagnostics_residuals': residuals,
        'diagnostics_histogram': report.histogram,
        'diagnostics_qq': report.qq,
        'diagnostics_acf': report.acf,
        'diagnostics_summary': report.summary_frame(),
    }
