"""
Script to create a synthetic tweet stream and hourly price series for demos and
the end-to-end test: three planted topics, one planted volume spike, lexicon-driven
sentiment, and a price that responds to the tweet features plus seasonal AR noise
"""

import json
import sys
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Any, Dict, List

import click
import numpy as np
import pandas as pd

# Add parent directory to path
sys.path.insert(0, str(Path(__file__).parent.parent))

from services import (  # noqa: E402
    corpus_service,
    report_service,
    sentiment_service,
    timegrid_service,
)

START = datetime(2021, 8, 23, tzinfo=timezone.utc)
INTERVAL = timedelta(minutes=5)
BUCKETS_PER_HOUR = 12

TOPIC_WORDS = [
    ['oil', 'crude', 'barrel', 'opec', 'refinery', 'drilling', 'fuel', 'gasoline',
     'petroleum', 'rig', 'shale', 'tanker'],
    ['climate', 'warming', 'carbon', 'emission', 'glacier', 'temperature', 'ocean', 'ice',
     'greenhouse', 'planet', 'heat', 'drought'],
    ['hurricane', 'storm', 'flood', 'rain', 'wind', 'evacuation', 'landfall', 'tropical',
     'surge', 'coast', 'rescue', 'shelter'],
]
POSITIVE = ['good', 'great', 'hope', 'safe', 'progress', 'support', 'success', 'clean']
NEGATIVE = ['bad', 'worse', 'fear', 'disaster', 'crisis', 'damage', 'threat', 'toxic']
QUERIES = ['Oil Price', 'Hurricane', 'Energy']
EXCLUDED_QUERY = 'Climate Change'

# price = LEVEL + 0.5 * sentiment_per_tweet + 0.01 * tweet_count + u,
# (1 - 0.5 B)(1 - 0.3 B^24) u_t = e_t, e_t ~ N(0, NOISE_SIGMA^2)
LEVEL = 70.0
BETA_SENTIMENT = 0.5
BETA_COUNT = 0.01
AR = 0.5
SEASONAL_AR = 0.3
SEASON = 24
NOISE_SIGMA = 0.2


def _tweet_text(rng: np.random.Generator, topic: int, mood: float) -> str:
    words = list(rng.choice(TOPIC_WORDS[topic], size=int(rng.integers(4, 8))))
    n_sentiment = int(rng.integers(0, 3))
    for _ in range(n_sentiment):
        pool = POSITIVE if rng.random() < mood else NEGATIVE
        words.insert(int(rng.integers(0, len(words) + 1)), str(rng.choice(pool)))
    if rng.random() < 0.1:
        words.append('https://t.co/' + ''.join(rng.choice(list('abcdef123'), size=6)))
    return ' '.join(words)


def generate_tweets(hours: int = 168, seed: int = 20, rate: float = 4.0) -> Dict[str, Any]:
    """
    Tweet records for `hours` hours of 5-minute buckets.

    Each hour has a dominant topic that supplies 85% of its tweets. One bucket on the
    third day carries 100x the usual volume, all on the storm topic.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    dominant = rng.integers(0, len(TOPIC_WORDS), size=hours)
    mood = np.clip(0.5 + 0.3 * np.sin(np.arange(hours) * 2 * np.pi / 36.0), 0.1, 0.9)
    spike_bucket = min(2 * 24 * BUCKETS_PER_HOUR + 12 * BUCKETS_PER_HOUR,
                       hours * BUCKETS_PER_HOUR - 1)

    records: List[Dict[str, Any]] = []
    for bucket in range(hours * BUCKETS_PER_HOUR):
        hour = bucket // BUCKETS_PER_HOUR
        diurnal = 1.0 + 0.5 * np.sin(2 * np.pi * (hour % 24) / 24.0)
        n = int(rng.poisson(rate * diurnal))
        if bucket == spike_bucket:
            n = int(rate * 100)
        for _ in range(n):
            if bucket == spike_bucket:
                topic = 2
            else:
                topic = int(dominant[hour]) if rng.random() < 0.85 else int(rng.integers(0, 3))
            stamp = START + bucket * INTERVAL + timedelta(seconds=int(rng.integers(0, 300)))
            query = EXCLUDED_QUERY if rng.random() < 0.05 else QUERIES[topic % len(QUERIES)]
            record = {
                'id': f'{len(records):07d}',
                'created_at': stamp.isoformat().replace('+00:00', 'Z'),
                'text': _tweet_text(rng, topic, float(mood[hour])),
                'likes': int(rng.poisson(3)),
                'retweets': int(rng.poisson(1)),
                'query': query,
            }
            if rng.random() < 0.2:
                record['lat'] = round(float(rng.normal(29.0, 1.5)), 4)
                record['lon'] = round(float(rng.normal(-95.0, 2.0)), 4)
            records.append(record)
    spike_start = START + spike_bucket * INTERVAL
    return {'records': records, 'spike_start': spike_start, 'dominant': dominant}


def hourly_features(records: List[Dict[str, Any]], hours: int) -> pd.DataFrame:
    """The exog the pipeline will see: cleaned bucket features averaged per hour"""
    tweets = corpus_service.ingest_tweets(json.dumps(r) for r in records).tweets
    tweets = corpus_service.filter_by_query(tweets, [EXCLUDED_QUERY])
    stopwords = corpus_service.load_stopwords()
    scores = sentiment_service.score_tweets(tweets, sentiment_service.load_lexicon(), stopwords)
    series = timegrid_service.resample(
        tweets, {s.tweet_id: s.polarity for s in scores}, INTERVAL, stopwords=stopwords
    )
    flags = timegrid_service.detect_spikes(series)
    cleaned, _ = timegrid_service.remove_outliers(series, flags)
    features = timegrid_service.derive_features(cleaned)
    grid = pd.date_range(START, periods=hours, freq='h')
    return report_service.align_to_grid(features, grid)


def seasonal_ar_noise(n: int, rng: np.random.Generator, burn: int = 10 * SEASON) -> np.ndarray:
    e = rng.normal(0.0, NOISE_SIGMA, size=n + burn)
    u = np.zeros(n + burn)
    for t in range(n + burn):
        u[t] = e[t]
        if t >= 1:
            u[t] += AR * u[t - 1]
        if t >= SEASON:
            u[t] += SEASONAL_AR * u[t - SEASON]
        if t >= SEASON + 1:
            u[t] -= AR * SEASONAL_AR * u[t - SEASON - 1]
    return u[burn:]


def generate(output_dir: Path, days: int = 7, seed: int = 20,
             future_hours: int = 0) -> Dict[str, Any]:
    """
    Write tweets.jsonl and price.csv; returns paths and the generating truth.

    Tweets keep flowing through the `future_hours` rows whose price is blank, so a
    forecast over them has exogenous features.
    """
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    hours = days * 24
    stream = generate_tweets(hours + future_hours, seed)
    exog = hourly_features(stream['records'], hours + future_hours).iloc[:hours]

    rng = np.random.Generator(np.random.PCG64(seed + 1))
    price = (LEVEL + BETA_SENTIMENT * exog['sentiment_per_tweet'].to_numpy()
             + BETA_COUNT * exog['tweet_count'].to_numpy() + seasonal_ar_noise(hours, rng))
    table = pd.DataFrame({
        'time': pd.date_range(START, periods=hours + future_hours, freq='h'),
        'price': np.r_[price, np.full(future_hours, np.nan)],
    })

    tweets_path = output_dir / 'tweets.jsonl'
    with open(tweets_path, 'w', encoding='utf-8') as f:
        for record in stream['records']:
            f.write(json.dumps(record) + '\n')
    price_path = output_dir / 'price.csv'
    table.to_csv(price_path, index=False, float_format='%.17g', lineterminator='\n')

    return {
        'tweets': tweets_path,
        'price': price_path,
        'n_tweets': len(stream['records']),
        'hours': hours,
        'future_hours': future_hours,
        'spike_start': stream['spike_start'],
        'noise_sigma': NOISE_SIGMA,
        'topic_words': TOPIC_WORDS,
    }


@click.command()
@click.option('--output-dir', type=click.Path(file_okay=False), default='data/synthetic',
              show_default=True)
@click.option('--days', type=int, default=7, show_default=True)
@click.option('--seed', type=int, default=20, show_default=True)
@click.option('--future-hours', type=int, default=0, show_default=True,
              help='Trailing hourly rows with a blank price, for forecasting')
def main(output_dir, days, seed, future_hours):
    """Create the synthetic tweet stream and price series"""
    result = generate(Path(output_dir), days, seed, future_hours)
    click.echo(f"Created {result['n_tweets']} tweets: {result['tweets']}")
    click.echo(f"Price series: {result['price']}")
    click.echo(f"Planted spike at {result['spike_start'].isoformat()}")


if __name__ == "__main__":
    main()
