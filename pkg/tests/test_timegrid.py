import math
from datetime import datetime, timedelta, timezone

import numpy as np
import pandas as pd
import pytest

from services import timegrid_service as tg
from services.corpus_service import RawTweet
from services.errors import AlignmentError, ConfigurationError, InsufficientDataError

T0 = datetime(2021, 8, 23, 10, 0, tzinfo=timezone.utc)
FIVE = timedelta(minutes=5)


def _tweet(tid, minute, likes=0, query='Oil Price', lat=None, lon=None):
    return RawTweet(id=tid, timestamp=T0 + timedelta(minutes=minute), text='', likes=likes,
                    retweets=0, query_tag=query, latitude=lat, longitude=lon)


def _series(counts):
    buckets = [
        tg.IntervalBucket(bucket_start=pd.Timestamp(T0 + i * FIVE), tweet_count=c)
        for i, c in enumerate(counts)
    ]
    return tg.BucketSeries(interval=FIVE, buckets=buckets)


class TestResample:
    @pytest.fixture
    def series(self):
        tweets = [
            _tweet('a', 1, likes=1, lat=10.0, lon=20.0),
            _tweet('b', 3, likes=3),
            _tweet('c', 17, likes=5),
        ]
        scores = {'a': 0.5, 'b': -0.1, 'c': 0.2}
        tokens = {'a': ['oil'], 'b': ['oil', 'price'], 'c': ['storm']}
        return tg.resample(tweets, scores, FIVE, tokens=tokens)

    def test_grid_is_gap_free(self, series):
        assert len(series) == 4
        assert series.starts[0] == pd.Timestamp(T0)
        np.testing.assert_array_equal(series.counts, [2, 0, 0, 1])
        series.check_grid()

    def test_bucket_statistics(self, series):
        first = series.buckets[0]
        assert first.likes_sum == 4.0
        assert first.likes_mean == 2.0
        assert first.likes_std == pytest.approx(1.0)
        assert first.sentiment_sum == pytest.approx(0.4)
        assert first.lat_mean == 10.0
        assert first.lat_std == 0.0
        assert series.buckets[3].lat_mean is None
        assert series.buckets[1] == tg.IntervalBucket(bucket_start=series.starts[1])

    def test_token_bags(self, series):
        assert series.buckets[0].token_bag == {'oil': 2, 'price': 1}
        assert series.token_lines() == ['oil oil price', '', '', 'storm']

    def test_empty_input(self):
        assert len(tg.resample([], {}, FIVE)) == 0

    def test_missing_score(self):
        with pytest.raises(AlignmentError):
            tg.resample([_tweet('a', 0)], {}, FIVE, tokens={'a': []})

    @pytest.mark.parametrize('minutes', [7, 0, 90])
    def test_interval_must_divide_an_hour(self, minutes):
        with pytest.raises(ConfigurationError):
            tg.resample([_tweet('a', 0)], {'a': 0.0}, timedelta(minutes=minutes),
                        tokens={'a': []})

    def test_frame_round_trip(self, series):
        rebuilt = tg.series_from_frame(series.to_frame(), series.token_lines(), FIVE)
        np.testing.assert_array_equal(rebuilt.counts, series.counts)
        assert rebuilt.starts == series.starts
        assert rebuilt.buckets[0].token_bag == series.buckets[0].token_bag
        assert rebuilt.buckets[3].lat_mean is None

    def test_frame_rows_must_match_token_lines(self, series):
        with pytest.raises(AlignmentError):
            tg.series_from_frame(series.to_frame(), ['oil'], FIVE)


class TestSpikes:
    def test_robust_z(self):
        series = _series([2, 3, 2, 3, 2, 3, 2, 3, 2, 50])
        flags = tg.detect_spikes(series, threshold=5.0)
        assert [f.flagged for f in flags] == [False] * 9 + [True]
        # median 2.5, MAD 0.5
        assert flags[-1].robust_z == pytest.approx(47.5 / (1.4826 * 0.5))
        assert flags[1].robust_z == pytest.approx(0.5 / (1.4826 * 0.5))

    def test_zero_mad(self):
        flags = tg.detect_spikes(_series([1] * 9 + [5]))
        assert flags[-1].robust_z == math.inf
        assert flags[-1].flagged
        assert flags[0].robust_z == 0.0
        assert not any(f.flagged for f in flags[:-1])

    @pytest.mark.parametrize('scale, shift', [(3, 7), (10, 0), (1, 100)])
    def test_affine_rescaling_keeps_flags(self, scale, shift):
        counts = [2, 3, 2, 4, 2, 3, 1, 3, 2, 50, 0, 9]
        flags = tg.detect_spikes(_series(counts))
        rescaled = tg.detect_spikes(_series([scale * c + shift for c in counts]))
        assert [f.flagged for f in rescaled] == [f.flagged for f in flags]
        np.testing.assert_allclose([f.robust_z for f in rescaled],
                                   [f.robust_z for f in flags], rtol=1e-12)

    def test_flags_frame_round_trip(self):
        series = _series([2, 3, 2, 3, 2, 3, 2, 3, 2, 50])
        flags = tg.detect_spikes(series)
        frame = tg.flags_frame(flags)
        frame['bucket_start'] = frame['bucket_start'].astype(str)
        assert tg.flags_from_frame(frame) == flags

    def test_needs_ten_buckets(self):
        with pytest.raises(InsufficientDataError):
            tg.detect_spikes(_series([1] * 9))

    def test_remove_outliers_keeps_grid(self):
        series = _series([2, 3, 2, 3, 2, 3, 2, 3, 2, 50])
        cleaned, removed = tg.remove_outliers(series, tg.detect_spikes(series))
        assert len(cleaned) == len(series)
        assert cleaned.counts[-1] == 0
        assert [r['tweet_count'] for r in removed] == [50]
        cleaned.check_grid()

    def test_remove_outliers_checks_alignment(self):
        series = _series([1] * 10)
        flags = tg.detect_spikes(series)
        with pytest.raises(AlignmentError):
            tg.remove_outliers(series, flags[:-1])
        with pytest.raises(AlignmentError):
            tg.remove_outliers(_series([1] * 9 + [2]), flags[1:] + flags[:1])

    def test_top_terms(self):
        series = _series([1, 1, 1])
        series.buckets[0].token_bag.update({'oil': 2, 'storm': 1})
        series.buckets[1].token_bag.update({'storm': 1, 'rain': 3})
        assert tg.top_terms(series, (0, 2), 2) == [('rain', 3), ('oil', 2)]
        assert tg.top_terms(series, (0, 2), 5) == [('rain', 3), ('oil', 2), ('storm', 2)]
        assert tg.top_terms(series, (1, 1), 5) == []
        with pytest.raises(AlignmentError):
            tg.top_terms(series, (2, 5), 1)


class TestFeatures:
    def test_derive_features(self):
        series = _series([2, 0, 4])
        series.buckets[0] = tg.IntervalBucket(bucket_start=series.starts[0], tweet_count=2,
                                              sentiment_sum=1.0)
        features = tg.derive_features(series)
        np.testing.assert_allclose(features['tweet_count'], [2, 0, 4])
        np.testing.assert_allclose(features['sentiment_per_tweet'], [0.5, 0.0, 0.0])
        assert features.index.name == 'bucket_start'

    def test_correlation_matrix(self):
        frame = pd.DataFrame({'a': [1.0, 2.0, 3.0], 'b': [2.0, 4.0, 7.0], 'c': [1.0, 1.0, 1.0]})
        corr = tg.correlation_matrix(frame)
        assert corr.loc['a', 'a'] == 1.0
        assert corr.loc['a', 'b'] == pytest.approx(np.corrcoef([1, 2, 3], [2, 4, 7])[0, 1])
        assert corr.loc['a', 'b'] == corr.loc['b', 'a']
        assert np.isnan(corr.loc['c', 'c'])
        assert np.isnan(corr.loc['a', 'c'])

    def test_correlation_needs_two_rows(self):
        with pytest.raises(InsufficientDataError):
            tg.correlation_matrix(pd.DataFrame({'a': [1.0]}))

    def test_query_counts(self):
        tweets = [_tweet('a', 1), _tweet('b', 2, query='Hurricane'), _tweet('c', 12)]
        table = tg.query_counts(tweets, FIVE)
        assert list(table.columns) == ['Hurricane', 'Oil Price']
        np.testing.assert_array_equal(table['Oil Price'], [1, 0, 1])
        np.testing.assert_array_equal(table['Hurricane'], [1, 0, 0])

    def test_spatial_summary(self):
        tweets = [_tweet('a', 1, lat=10.0, lon=20.0), _tweet('b', 2, lat=12.0, lon=22.0),
                  _tweet('c', 3)]
        summary = tg.spatial_summary(tweets)
        assert summary['geotagged'] == 2
        assert summary['lat_mean'] == 11.0
        assert summary['lon_std'] == 1.0
        assert tg.spatial_summary([_tweet('c', 3)]) == {'geotagged': 0}
