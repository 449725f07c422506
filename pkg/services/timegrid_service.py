"""
Time Grid Service
Resamples scored tweets into fixed UTC intervals, detects count spikes with a
median/MAD robust z-score, and derives the feature columns used for forecasting
"""

import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from datetime import timedelta
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Set, Tuple

import numpy as np
import pandas as pd

from services.corpus_service import RawTweet, TokenizedDoc, load_stopwords, preprocess
from services.errors import AlignmentError, ConfigurationError, InsufficientDataError

logger = logging.getLogger(__name__)

DEFAULT_INTERVAL = timedelta(minutes=5)
MAD_SCALE = 1.4826
DEFAULT_SPIKE_THRESHOLD = 5.0
MIN_SPIKE_BUCKETS = 10
STAT_FIELDS = ('likes', 'retweets', 'sentiment')

BUCKET_COLUMNS = [
    'bucket_start', 'tweet_count',
    'likes_sum', 'likes_mean', 'likes_std',
    'retweets_sum', 'retweets_mean', 'retweets_std',
    'sentiment_sum', 'sentiment_mean', 'sentiment_std',
    'lat_mean', 'lat_std', 'lon_mean', 'lon_std',
]


@dataclass(frozen=True)
class IntervalBucket:
    bucket_start: pd.Timestamp
    tweet_count: int = 0
    likes_sum: float = 0.0
    likes_mean: float = 0.0
    likes_std: float = 0.0
    retweets_sum: float = 0.0
    retweets_mean: float = 0.0
    retweets_std: float = 0.0
    sentiment_sum: float = 0.0
    sentiment_mean: float = 0.0
    sentiment_std: float = 0.0
    token_bag: Counter = field(default_factory=Counter, compare=False)
    lat_mean: Optional[float] = None
    lat_std: Optional[float] = None
    lon_mean: Optional[float] = None
    lon_std: Optional[float] = None

    def emptied(self) -> 'IntervalBucket':
        return IntervalBucket(bucket_start=self.bucket_start)


@dataclass
class BucketSeries:
    interval: timedelta
    buckets: List[IntervalBucket]

    def __len__(self) -> int:
        return len(self.buckets)

    @property
    def starts(self) -> List[pd.Timestamp]:
        return [b.bucket_start for b in self.buckets]

    @property
    def counts(self) -> np.ndarray:
        return np.array([b.tweet_count for b in self.buckets], dtype=np.int64)

    def check_grid(self) -> None:
        """Raise AlignmentError unless starts are strictly increasing by exactly one interval"""
        step = pd.Timedelta(self.interval)
        for prev, cur in zip(self.buckets, self.buckets[1:]):
            if cur.bucket_start - prev.bucket_start != step:
                raise AlignmentError(
                    f'Bucket grid broken between {prev.bucket_start} and {cur.bucket_start}'
                )

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for b in self.buckets:
            rows.append({name: getattr(b, name) for name in BUCKET_COLUMNS})
        frame = pd.DataFrame(rows, columns=BUCKET_COLUMNS)
        frame['bucket_start'] = pd.to_datetime(frame['bucket_start'], utc=True)
        return frame

    def token_lines(self) -> List[str]:
        """One line per bucket: the multiset expanded, sorted for stable output"""
        lines = []
        for b in self.buckets:
            lines.append(' '.join(t for t, n in sorted(b.token_bag.items()) for _ in range(n)))
        return lines

    def as_documents(self) -> List[TokenizedDoc]:
        return [
            TokenizedDoc(
                b.bucket_start.isoformat(),
                tuple(t for t, n in sorted(b.token_bag.items()) for _ in range(n)),
            )
            for b in self.buckets
        ]


@dataclass(frozen=True)
class EventFlag:
    bucket_start: pd.Timestamp
    robust_z: float
    flagged: bool


def _check_interval(interval: timedelta) -> pd.Timedelta:
    step = pd.Timedelta(interval)
    seconds = step.total_seconds()
    if seconds <= 0 or not float(seconds).is_integer() or 3600 % int(seconds) != 0:
        raise ConfigurationError(
            f'Interval {interval} must evenly divide one hour', interval=str(interval)
        )
    return step


def _grid_floor(stamps: pd.DatetimeIndex, step: pd.Timedelta) -> pd.DatetimeIndex:
    return stamps.floor(step)


def _pop_std(values: pd.Series) -> float:
    values = values.dropna()
    if len(values) < 2:
        return 0.0
    return float(np.std(values.to_numpy(dtype=float)))


def _opt_mean(values: pd.Series) -> float:
    values = values.dropna()
    return float(values.mean()) if len(values) else float('nan')


def _opt_std(values: pd.Series) -> float:
    values = values.dropna()
    if not len(values):
        return float('nan')
    return _pop_std(values)


def resample(
    tweets: Sequence[RawTweet],
    scores: Mapping[str, float],
    interval: timedelta = DEFAULT_INTERVAL,
    tokens: Optional[Mapping[str, Sequence[str]]] = None,
    stopwords: Optional[Set[str]] = None
) -> BucketSeries:
    """
    Aggregate tweets into left-closed, right-open UTC buckets.

    Args:
        tweets: Ingested tweets
        scores: tweet_id -> polarity for every tweet
        interval: Bucket width; must evenly divide one hour
        tokens: Optional tweet_id -> stemmed tokens; computed with the default
            pipeline when omitted

    Returns:
        Gap-free BucketSeries from the first to the last occupied bucket
    """
    step = _check_interval(interval)
    if not tweets:
        return BucketSeries(interval=step.to_pytimedelta(), buckets=[])

    missing = [t.id for t in tweets if t.id not in scores]
    if missing:
        raise AlignmentError(
            f'{len(missing)} tweets have no sentiment score', first_missing=missing[:5]
        )
    if tokens is None:
        stop = stopwords if stopwords is not None else load_stopwords()
        tokens = {t.id: preprocess(t.text, stop) for t in tweets}

    frame = pd.DataFrame({
        'timestamp': pd.to_datetime([t.timestamp for t in tweets], utc=True),
        'likes': [float(t.likes) for t in tweets],
        'retweets': [float(t.retweets) for t in tweets],
        'sentiment': [float(scores[t.id]) for t in tweets],
        'lat': [np.nan if t.latitude is None else t.latitude for t in tweets],
        'lon': [np.nan if t.longitude is None else t.longitude for t in tweets],
    })
    frame['bucket'] = _grid_floor(pd.DatetimeIndex(frame['timestamp']), step)

    grouped = frame.groupby('bucket', sort=True)
    stats = grouped.agg(
        tweet_count=('likes', 'size'),
        likes_sum=('likes', 'sum'),
        likes_std=('likes', _pop_std),
        retweets_sum=('retweets', 'sum'),
        retweets_std=('retweets', _pop_std),
        sentiment_sum=('sentiment', 'sum'),
        sentiment_std=('sentiment', _pop_std),
        lat_mean=('lat', _opt_mean),
        lat_std=('lat', _opt_std),
        lon_mean=('lon', _opt_mean),
        lon_std=('lon', _opt_std),
    )
    grid = pd.date_range(stats.index.min(), stats.index.max(), freq=step)
    stats = stats.reindex(grid)

    bags: Dict[pd.Timestamp, Counter] = {}
    for tweet, bucket in zip(tweets, frame['bucket']):
        bags.setdefault(bucket, Counter()).update(tokens.get(tweet.id, ()))

    buckets = []
    for start, row in stats.iterrows():
        count = 0 if pd.isna(row['tweet_count']) else int(row['tweet_count'])
        if count == 0:
            buckets.append(IntervalBucket(bucket_start=start))
            continue
        values: Dict[str, Any] = {'bucket_start': start, 'tweet_count': count}
        for name in STAT_FIELDS:
            total = float(row[f'{name}_sum'])
            values[f'{name}_sum'] = total
            values[f'{name}_mean'] = total / count
            values[f'{name}_std'] = float(row[f'{name}_std'])
        for name in ('lat_mean', 'lat_std', 'lon_mean', 'lon_std'):
            values[name] = None if pd.isna(row[name]) else float(row[name])
        values['token_bag'] = bags.get(start, Counter())
        buckets.append(IntervalBucket(**values))

    logger.info('Resampled %d tweets into %d buckets of %s', len(tweets), len(buckets), step)
    return BucketSeries(interval=step.to_pytimedelta(), buckets=buckets)


def detect_spikes(
    series: BucketSeries,
    threshold: float = DEFAULT_SPIKE_THRESHOLD
) -> List[EventFlag]:
    """
    Flag buckets whose tweet count has a robust z-score above threshold.

    robust_z = (count - median) / (1.4826 * MAD). When MAD is zero, counts above the
    median get +inf (below: -inf, at: 0).
    """
    if len(series) < MIN_SPIKE_BUCKETS:
        raise InsufficientDataError(
            f'Spike detection needs at least {MIN_SPIKE_BUCKETS} buckets, got {len(series)}',
            buckets=len(series),
        )
    counts = series.counts.astype(float)
    median = float(np.median(counts))
    mad = float(np.median(np.abs(counts - median)))

    if mad > 0:
        z = (counts - median) / (MAD_SCALE * mad)
    else:
        z = np.where(counts > median, math.inf, np.where(counts < median, -math.inf, 0.0))

    flags = [
        EventFlag(bucket_start=b.bucket_start, robust_z=float(zi), flagged=bool(zi > threshold))
        for b, zi in zip(series.buckets, z)
    ]
    n_flagged = sum(f.flagged for f in flags)
    if n_flagged:
        logger.info('Detected %d spike buckets (median %.1f, MAD %.1f)', n_flagged, median, mad)
    return flags


def remove_outliers(
    series: BucketSeries,
    flags: Sequence[EventFlag]
) -> Tuple[BucketSeries, List[Dict[str, Any]]]:
    """
    Replace flagged buckets with empty ones so the grid stays gap-free.

    Returns:
        (cleaned series, report of removed buckets)
    """
    if len(flags) != len(series):
        raise AlignmentError(
            f'{len(flags)} flags for {len(series)} buckets', flags=len(flags), buckets=len(series)
        )
    cleaned = []
    removed = []
    for bucket, flag in zip(series.buckets, flags):
        if flag.bucket_start != bucket.bucket_start:
            raise AlignmentError(
                f'Flag at {flag.bucket_start} does not match bucket {bucket.bucket_start}'
            )
        if flag.flagged:
            removed.append({
                'bucket_start': bucket.bucket_start,
                'tweet_count': bucket.tweet_count,
                'robust_z': flag.robust_z,
            })
            cleaned.append(bucket.emptied())
        else:
            cleaned.append(bucket)
    return BucketSeries(interval=series.interval, buckets=cleaned), removed


def top_terms(
    series: BucketSeries,
    span: Tuple[int, int],
    n: int
) -> List[Tuple[str, int]]:
    """
    Most frequent tokens over buckets[start:stop], descending frequency then term.
    """
    start, stop = span
    if start < 0 or stop > len(series) or start > stop:
        raise AlignmentError(f'Bucket span {span} outside series of {len(series)}')
    total = Counter()
    for bucket in series.buckets[start:stop]:
        total.update(bucket.token_bag)
    ranked = sorted(total.items(), key=lambda item: (-item[1], item[0]))
    return ranked[:max(n, 0)]


def derive_features(series: BucketSeries) -> pd.DataFrame:
    """tweet_count and sentiment_per_tweet per bucket (0 for empty buckets)"""
    counts = series.counts
    sums = np.array([b.sentiment_sum for b in series.buckets], dtype=float)
    per_tweet = np.divide(sums, counts, out=np.zeros_like(sums), where=counts > 0)
    index = pd.DatetimeIndex(series.starts, name='bucket_start')
    return pd.DataFrame(
        {'tweet_count': counts.astype(float), 'sentiment_per_tweet': per_tweet}, index=index
    )


def correlation_matrix(features: pd.DataFrame) -> pd.DataFrame:
    """
    Pearson correlation between named columns. Zero-variance columns give NaN entries
    (including their diagonal) rather than an error.
    """
    if len(features) < 2:
        raise InsufficientDataError(
            f'Correlation needs at least 2 rows, got {len(features)}', rows=len(features)
        )
    values = features.astype(float)
    centered = values - values.mean()
    norms = np.sqrt((centered ** 2).sum())
    defined = norms > 0

    columns = list(values.columns)
    matrix = pd.DataFrame(np.nan, index=columns, columns=columns)
    for i, a in enumerate(columns):
        for b in columns[i:]:
            if not (defined[a] and defined[b]):
                continue
            r = 1.0 if a == b else float(
                (centered[a] * centered[b]).sum() / (norms[a] * norms[b])
            )
            r = max(-1.0, min(1.0, r))
            matrix.loc[a, b] = r
            matrix.loc[b, a] = r
    return matrix


def query_counts(
    tweets: Sequence[RawTweet],
    interval: timedelta = DEFAULT_INTERVAL
) -> pd.DataFrame:
    """Tweets per query tag per interval, gap-free, one column per tag"""
    step = _check_interval(interval)
    if not tweets:
        return pd.DataFrame()
    buckets = _grid_floor(pd.to_datetime([t.timestamp for t in tweets], utc=True), step)
    table = pd.crosstab(pd.Index(buckets, name='bucket_start'),
                        pd.Index([t.query_tag for t in tweets], name='query'))
    grid = pd.date_range(table.index.min(), table.index.max(), freq=step, name='bucket_start')
    table = table.reindex(grid, fill_value=0)
    table.columns = [str(c) for c in table.columns]
    return table.sort_index(axis=1)


def spatial_summary(tweets: Iterable[RawTweet]) -> Dict[str, Any]:
    """Coordinate coverage and spread of geotagged tweets"""
    coords = np.array(
        [(t.latitude, t.longitude) for t in tweets if t.latitude is not None], dtype=float
    ).reshape(-1, 2)
    summary: Dict[str, Any] = {'geotagged': int(len(coords))}
    if len(coords):
        summary.update({
            'lat_mean': float(coords[:, 0].mean()),
            'lat_std': float(coords[:, 0].std()),
            'lon_mean': float(coords[:, 1].mean()),
            'lon_std': float(coords[:, 1].std()),
            'lat_min': float(coords[:, 0].min()),
            'lat_max': float(coords[:, 0].max()),
            'lon_min': float(coords[:, 1].min()),
            'lon_max': float(coords[:, 1].max()),
        })
    return summary


def flags_frame(flags: Sequence[EventFlag]) -> pd.DataFrame:
    return pd.DataFrame(
        [(f.bucket_start, f.robust_z, f.flagged) for f in flags],
        columns=['bucket_start', 'robust_z', 'flagged'],
    )


def flags_from_frame(frame: pd.DataFrame) -> List[EventFlag]:
    starts = pd.to_datetime(frame['bucket_start'], utc=True)
    return [
        EventFlag(bucket_start=start, robust_z=float(z), flagged=bool(flagged))
        for start, z, flagged in zip(starts, frame['robust_z'], frame['flagged'])
    ]


def series_from_frame(
    frame: pd.DataFrame,
    token_lines: Sequence[str],
    interval: timedelta
) -> BucketSeries:
    """Rebuild a BucketSeries from its CSV table and token-bag sidecar"""
    if len(frame) != len(token_lines):
        raise AlignmentError(
            f'{len(frame)} bucket rows but {len(token_lines)} token-bag lines'
        )
    buckets = []
    for row, line in zip(frame.to_dict('records'), token_lines):
        values = {name: row[name] for name in BUCKET_COLUMNS}
        values['bucket_start'] = pd.Timestamp(values['bucket_start'])
        if values['bucket_start'].tzinfo is None:
            values['bucket_start'] = values['bucket_start'].tz_localize('UTC')
        values['tweet_count'] = int(values['tweet_count'])
        for name in ('lat_mean', 'lat_std', 'lon_mean', 'lon_std'):
            values[name] = None if pd.isna(values[name]) else float(values[name])
        for name in STAT_FIELDS:
            for suffix in ('sum', 'mean', 'std'):
                values[f'{name}_{suffix}'] = float(values[f'{name}_{suffix}'])
        values['token_bag'] = Counter(line.split())
        buckets.append(IntervalBucket(**values))
    series = BucketSeries(interval=interval, buckets=buckets)
    series.check_grid()
    return series
