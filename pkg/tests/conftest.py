import json
from datetime import datetime, timedelta, timezone

import numpy as np
import pytest

from app import create_app

START = datetime(2021, 8, 23, tzinfo=timezone.utc)

OIL = ['oil', 'crude', 'barrel', 'opec', 'refinery']
STORM = ['hurricane', 'storm', 'flood', 'rain', 'wind']


def make_records(n=100, minutes=300, seed=7):
    """n tweets spread over `minutes`, alternating oil and storm vocabulary by hour"""
    rng = np.random.Generator(np.random.PCG64(seed))
    records = []
    for i in range(n):
        offset = int(rng.integers(0, minutes * 60))
        stamp = START + timedelta(seconds=offset)
        words = OIL if (offset // 3600) % 2 == 0 else STORM
        text = ' '.join(rng.choice(words, size=5))
        if i % 3 == 0:
            text += ' good'
        elif i % 3 == 1:
            text += ' not bad'
        records.append({
            'id': f'{i:04d}',
            'created_at': stamp.isoformat().replace('+00:00', 'Z'),
            'text': text,
            'likes': int(rng.integers(0, 10)),
            'retweets': int(rng.integers(0, 3)),
            'query': 'Climate Change' if i % 10 == 0 else 'Oil Price',
        })
    return sorted(records, key=lambda r: r['created_at'])


def write_jsonl(path, records):
    with open(path, 'w', encoding='utf-8') as f:
        for record in records:
            f.write(json.dumps(record) + '\n')
    return path


@pytest.fixture
def records():
    return make_records()


@pytest.fixture
def tweets_file(tmp_path, records):
    return write_jsonl(tmp_path / 'tweets.jsonl', records)


@pytest.fixture
def rng():
    return np.random.Generator(np.random.PCG64(20))


@pytest.fixture
def output_dir(tmp_path):
    path = tmp_path / 'output'
    path.mkdir()
    return path


@pytest.fixture
def app(output_dir):
    app = create_app({'TESTING': True, 'TWEETCAST_OUTPUT_DIR': str(output_dir)})
    yield app


@pytest.fixture
def client(app):
    return app.test_client()


@pytest.fixture
def runner(app):
    return app.test_cli_runner()


@pytest.fixture(scope='session')
def synthetic(tmp_path_factory):
    """A week of generated tweets plus an hourly price with two days of future rows"""
    from scripts.generate_synthetic_data import generate

    return generate(tmp_path_factory.mktemp('synthetic'), days=7, seed=20, future_hours=48)
