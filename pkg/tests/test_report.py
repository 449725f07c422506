import math

import numpy as np
import pandas as pd
import pytest

from services import report_service as rs, sarimax_service
from services.errors import AlignmentError, InsufficientDataError
from services.statespace_service import OrderSpec


def _features(counts, sentiment):
    index = pd.date_range('2021-08-23', periods=len(counts), freq='5min', tz='UTC',
                          name='bucket_start')
    return pd.DataFrame({'tweet_count': counts, 'sentiment_per_tweet': sentiment}, index=index)


class TestSummaries:
    def test_boxplot(self):
        summary = rs.boxplot_summary([1, 2, 3, 4, 5])
        assert (summary['q1'], summary['median'], summary['q3']) == (2.0, 3.0, 4.0)
        assert (summary['min'], summary['max']) == (1.0, 5.0)
        assert summary['outliers'] == []

    def test_boxplot_outlier(self):
        summary = rs.boxplot_summary([1, 2, 3, 4, 5, 100])
        assert summary['outliers'] == [100.0]
        assert summary['max'] == 5.0
        assert summary['n'] == 6

    def test_boxplot_empty(self):
        with pytest.raises(InsufficientDataError):
            rs.boxplot_summary([np.nan])

    def test_skewness(self):
        assert math.isnan(rs.skewness([1.0, 2.0]))
        assert math.isnan(rs.skewness([3.0, 3.0, 3.0, 3.0]))
        assert rs.skewness([1.0, 2.0, 3.0]) == pytest.approx(0.0)
        assert rs.skewness([0.0, 0.0, 0.0, 10.0]) > 0

    def test_histogram_mass(self, rng):
        hist = rs.normalized_histogram(rng.normal(size=200), bins=10)
        assert len(hist) == 10
        assert hist['mass'].sum() == pytest.approx(1.0)
        assert hist['count'].sum() == 200

    def test_histogram_single_value(self):
        hist = rs.normalized_histogram([2.0, 2.0])
        assert hist['mass'].sum() == pytest.approx(1.0)


class TestTopicTables:
    @pytest.fixture
    def features(self):
        return _features([3, 0, 5, 2, 4, 1], [0.5, 0.0, -0.2, 0.1, 0.3, -0.4])

    def test_empty_buckets_are_skipped(self, features):
        table = rs.topic_sentiment_summary(features, [0, 0, 1, 0, 1, 1])
        assert table['topic'].tolist() == [0, 1]
        assert table['buckets'].tolist() == [2, 3]
        assert table['tweets'].tolist() == [5, 10]
        assert table.loc[0, 'sentiment_mean'] == pytest.approx(0.3)
        assert table.loc[0, 'sentiment_std'] == pytest.approx(0.2)
        assert math.isnan(table.loc[0, 'sentiment_skewness'])

    def test_boxplots(self, features):
        table = rs.topic_boxplots(features, [0, 0, 1, 0, 1, 1])
        assert len(table) == 4
        assert set(table['variable']) == set(rs.FEATURE_COLUMNS)
        row = table[(table['topic'] == 1) & (table['variable'] == 'tweet_count')].iloc[0]
        assert row['median'] == 4.0

    def test_histograms(self, features):
        table = rs.topic_histograms(features, [0, 0, 1, 0, 1, 1], bins=4)
        masses = table.groupby(['topic', 'variable'])['mass'].sum()
        np.testing.assert_allclose(masses, 1.0)

    def test_label_count_mismatch(self, features):
        with pytest.raises(AlignmentError):
            rs.topic_boxplots(features, [0, 1])


class TestAlignment:
    def test_interval_means_then_forward_fill(self):
        frame = pd.DataFrame(
            {'x': [1.0, 3.0, 10.0]},
            index=pd.to_datetime(['2021-08-23 00:05', '2021-08-23 00:40', '2021-08-23 02:10'],
                                 utc=True),
        )
        grid = pd.date_range('2021-08-23', periods=4, freq='h', tz='UTC')
        aligned = rs.align_to_grid(frame, grid)
        assert aligned['x'].tolist() == [2.0, 2.0, 10.0, 10.0]
        assert aligned.index.equals(grid)

    def test_zero_before_first_row(self):
        frame = pd.DataFrame({'x': [4.0]},
                             index=pd.to_datetime(['2021-08-23 02:30'], utc=True))
        grid = pd.date_range('2021-08-23', periods=3, freq='h', tz='UTC')
        assert rs.align_to_grid(frame, grid)['x'].tolist() == [0.0, 0.0, 4.0]

    def test_naive_grid_is_treated_as_utc(self):
        frame = pd.DataFrame({'x': [1.0]}, index=pd.to_datetime(['2021-08-23 00:10'], utc=True))
        grid = pd.date_range('2021-08-23', periods=2, freq='h')
        assert rs.align_to_grid(frame, grid)['x'].tolist() == [1.0, 1.0]

    def test_empty_grid(self):
        with pytest.raises(AlignmentError):
            rs.align_to_grid(pd.DataFrame({'x': []}), pd.DatetimeIndex([]))

    def test_topic_price_correlation(self):
        grid = pd.date_range('2021-08-23', periods=4, freq='h', tz='UTC')
        counts = pd.DataFrame({'topic_0': [1.0, 2.0, 3.0, 4.0], 'topic_1': [5.0] * 4},
                              index=grid)
        price = pd.Series([10.0, 20.0, 30.0, 40.0], index=grid)
        table = rs.topic_price_correlation(counts, price)
        assert table.loc[0, 'correlation'] == pytest.approx(1.0)
        assert math.isnan(table.loc[1, 'correlation'])
        assert table['points'].tolist() == [4, 4]


class TestDiagnosticTables:
    def test_names(self, rng):
        fitted = sarimax_service.fit(rng.normal(size=60), order=OrderSpec())
        tables = rs.diagnostic_tables(sarimax_service.diagnostics(fitted))
        assert set(tables) == {'diagnostics_residuals', 'diagnostics_histogram', 'diagnostics_qq',
                               'diagnostics_acf', 'diagnostics_summary'}
        assert len(tables['diagnostics_residuals']) == 60
