from dataclasses import replace
from datetime import datetime, timedelta, timezone

import numpy as np
import pandas as pd
import pytest

from services import corpus_service, topic_service as ts
from services.corpus_service import TokenizedDoc
from services.errors import (
    AlignmentError,
    ConfigurationError,
    InsufficientDataError,
    InvariantViolation,
    RangeError,
)
from services.timegrid_service import BucketSeries, IntervalBucket

OIL = ['oil', 'crude', 'barrel', 'opec', 'refinery']
STORM = ['hurricane', 'storm', 'flood', 'rain', 'wind']


def _corpus(n_docs=20, length=12, seed=3, empty=False):
    rng = np.random.Generator(np.random.PCG64(seed))
    docs = []
    for i in range(n_docs):
        words = OIL if i % 2 == 0 else STORM
        docs.append(TokenizedDoc(f'd{i}', tuple(str(w) for w in rng.choice(words, size=length))))
    if empty:
        docs.append(TokenizedDoc('empty', ()))
    vocab = corpus_service.build_vocabulary(docs, min_occurrence=1)
    return corpus_service.vectorize(docs, vocab), vocab


@pytest.fixture(scope='module')
def corpus():
    return _corpus(empty=True)


@pytest.fixture(scope='module')
def config():
    return ts.LdaConfig(n_topics=2, alpha=0.1, beta=0.01, iterations=150, burn_in=50, seed=20)


@pytest.fixture(scope='module')
def model(corpus, config):
    dtm, vocab = corpus
    return ts.fit_lda(dtm, config, vocab.terms, vocab.digest())


class TestLdaConfig:
    def test_default_alpha(self):
        assert ts.LdaConfig(n_topics=5).doc_prior == 10.0
        assert ts.LdaConfig(n_topics=5, alpha=0.3).doc_prior == 0.3

    @pytest.mark.parametrize('kwargs', [
        {'n_topics': 0},
        {'alpha': 0.0},
        {'beta': -1.0},
        {'iterations': 10, 'burn_in': 10},
    ])
    def test_invalid(self, kwargs):
        with pytest.raises(ConfigurationError):
            ts.LdaConfig(**kwargs)

    def test_with_topics_keeps_other_fields(self, config):
        changed = config.with_topics(4)
        assert changed.n_topics == 4
        assert changed.alpha == config.alpha
        assert changed.seed == config.seed


class TestFit:
    def test_distributions_are_normalized(self, model, corpus):
        dtm, vocab = corpus
        assert model.phi.shape == (2, len(vocab))
        assert model.theta.shape == (dtm.n_docs, 2)
        np.testing.assert_allclose(model.phi.sum(axis=1), 1.0)
        np.testing.assert_allclose(model.theta.sum(axis=1), 1.0)
        assert (model.phi > 0).all()

    def test_empty_document_gets_uniform_theta(self, model):
        np.testing.assert_allclose(model.theta[-1], [0.5, 0.5])

    def test_one_assignment_per_token(self, model, corpus):
        assert model.assignments.shape == (corpus[0].total,)
        assert len(model.loglik_trace) == 150

    def test_deterministic(self, corpus, config, model):
        dtm, vocab = corpus
        again = ts.fit_lda(dtm, config, vocab.terms, vocab.digest())
        np.testing.assert_array_equal(again.assignments, model.assignments)
        np.testing.assert_array_equal(again.phi, model.phi)
        np.testing.assert_array_equal(again.theta, model.theta)

    def test_document_order_does_not_change_fit(self, corpus, config, model):
        dtm, _ = corpus
        order = np.random.Generator(np.random.PCG64(1)).permutation(dtm.n_docs)
        shuffled = ts.fit_lda(dtm.take(order), config)
        np.testing.assert_array_equal(shuffled.phi, model.phi)
        np.testing.assert_array_equal(shuffled.theta, model.theta[order])

    def test_seed_changes_chain(self, corpus, config, model):
        dtm, _ = corpus
        other = ts.fit_lda(dtm, replace(config, seed=21))
        assert other.loglik_trace != model.loglik_trace

    def test_recovers_planted_topics(self, model):
        dominant = ts.dominant_topics(model.theta[:-1])
        assert len(set(dominant[0::2])) == 1
        assert len(set(dominant[1::2])) == 1
        assert dominant[0] != dominant[1]
        oil_topic = dominant[0]
        top = {term for term, _ in ts.top_words(model, int(oil_topic), 5)}
        assert top == set(OIL)

    def test_single_topic_is_smoothed_unigram(self, corpus):
        dtm, vocab = corpus
        model = ts.fit_lda(dtm, ts.LdaConfig(n_topics=1, iterations=3, burn_in=0, beta=0.01))
        counts = np.asarray(dtm.counts.sum(axis=0)).ravel()
        expected = (counts + 0.01) / (counts.sum() + 0.01 * len(vocab))
        np.testing.assert_allclose(model.phi[0], expected)
        np.testing.assert_allclose(model.theta, 1.0)

    def test_debug_bookkeeping_passes(self, corpus, config):
        dtm, _ = corpus
        ts.fit_lda(dtm, replace(config, iterations=5, burn_in=0, debug=True))

    def test_bookkeeping_detects_corruption(self):
        words = np.array([0, 1], dtype=np.int64)
        docs = np.array([0, 0], dtype=np.int64)
        z = np.array([0, 1], dtype=np.int64)
        ndk = np.array([[1, 1]], dtype=np.int64)
        nkw = np.array([[1, 0], [0, 1]], dtype=np.int64)
        ts._check_bookkeeping(z, words, docs, ndk, nkw, np.array([1, 1]), 0)
        with pytest.raises(InvariantViolation):
            ts._check_bookkeeping(z, words, docs, ndk, nkw, np.array([2, 0]), 0)

    def test_no_tokens(self):
        docs = [TokenizedDoc('a', ())]
        dtm = corpus_service.vectorize(docs, corpus_service.Vocabulary(('oil',), {'oil': 1}))
        with pytest.raises(InsufficientDataError):
            ts.fit_lda(dtm, ts.LdaConfig(n_topics=1, iterations=2, burn_in=0))

    def test_more_topics_than_tokens(self):
        docs = [TokenizedDoc('a', ('oil',))]
        dtm = corpus_service.vectorize(docs, corpus_service.Vocabulary(('oil',), {'oil': 1}))
        with pytest.raises(ConfigurationError):
            ts.fit_lda(dtm, ts.LdaConfig(n_topics=2, iterations=2, burn_in=0))


class TestPerplexity:
    def test_training_perplexity_below_vocabulary_size(self, model, corpus):
        dtm, vocab = corpus
        value = ts.perplexity(model, dtm, model.theta)
        assert 1.0 < value < len(vocab)

    def test_fold_in_is_deterministic(self, model, corpus):
        dtm, _ = corpus
        np.testing.assert_array_equal(ts.fold_in(model, dtm), ts.fold_in(model, dtm))

    def test_fold_in_checks_terms(self, model):
        docs = [TokenizedDoc('a', ('oil',))]
        dtm = corpus_service.vectorize(docs, corpus_service.Vocabulary(('oil',), {'oil': 1}))
        with pytest.raises(AlignmentError):
            ts.fold_in(model, dtm)

    def test_uniform_phi_gives_vocabulary_size(self, config):
        dtm, vocab = _corpus(n_docs=6)
        V = len(vocab)
        uniform = ts.LdaModel(phi=np.full((2, V), 1.0 / V), theta=np.full((6, 2), 0.5),
                              assignments=np.zeros(0, np.int64), loglik_trace=[],
                              config=config)
        assert ts.perplexity(uniform, dtm) == pytest.approx(V)

    def test_single_term_corpus_is_near_one(self):
        docs = [TokenizedDoc('a', ('oil',) * 20)]
        dtm = corpus_service.vectorize(docs, corpus_service.Vocabulary(('oil',), {'oil': 20}))
        model = ts.fit_lda(dtm, ts.LdaConfig(n_topics=1, beta=1e-3, iterations=5, burn_in=0))
        assert ts.perplexity(model, dtm) == pytest.approx(1.0, abs=1e-2)

    def test_averaged_fold_in_rows_are_distributions(self, model, corpus):
        dtm, _ = corpus
        theta = ts.fold_in(model, dtm, sweeps=20, samples=10)
        np.testing.assert_allclose(theta.sum(axis=1), 1.0)
        with pytest.raises(ConfigurationError):
            ts.fold_in(model, dtm, sweeps=5, samples=6)

    def test_split_tokens_partitions_each_document(self, corpus):
        dtm, _ = corpus
        observed, held = ts.split_tokens(dtm)
        assert (observed.counts + held.counts != dtm.counts).nnz == 0
        assert observed.doc_ids == dtm.doc_ids
        lengths = dtm.row_lengths()
        np.testing.assert_array_equal(observed.row_lengths(), (lengths + 1) // 2)

    def test_completion_score(self, model, corpus):
        dtm, vocab = corpus
        value, se = ts.completion_score(model, dtm)
        assert 1.0 < value < len(vocab)
        assert se > 0

    def test_completion_needs_two_tokens(self, model, corpus):
        dtm = corpus_service.vectorize([TokenizedDoc('a', ('oil',))], corpus[1])
        with pytest.raises(InsufficientDataError):
            ts.completion_score(model, dtm)

    def test_select_k(self, config):
        dtm, _ = _corpus(n_docs=30)
        best, table = ts.select_k(dtm, [1, 2, 3], config.with_topics(2), se_band=0.0)
        assert list(table['k']) == [1, 2, 3]
        assert (table['perplexity'] > 0).all()
        assert (table['log_se'] >= 0).all()
        assert best == int(table.loc[table['perplexity'].idxmin(), 'k'])

    def test_select_k_band_prefers_smaller_k(self, config):
        dtm, _ = _corpus(n_docs=30)
        best, table = ts.select_k(dtm, [1, 2, 3], config.with_topics(2))
        low = table.loc[table['perplexity'].idxmin()]
        cutoff = np.log(low['perplexity']) + low['log_se']
        assert best == int(table.loc[np.log(table['perplexity']) <= cutoff, 'k'].min())
        with pytest.raises(ConfigurationError):
            ts.select_k(dtm, [2, 3], config, se_band=-1.0)

    def test_select_k_parallel_matches_serial(self, config):
        dtm, _ = _corpus(n_docs=30)
        serial = ts.select_k(dtm, [2, 3], config)
        parallel = ts.select_k(dtm, [2, 3], config, workers=2)
        assert serial[0] == parallel[0]
        pd.testing.assert_frame_equal(serial[1], parallel[1])


class TestLabelling:
    def test_top_words_ties_are_lexicographic(self, config):
        model = ts.LdaModel(phi=np.array([[0.25, 0.25, 0.5]]), theta=np.ones((1, 1)),
                            assignments=np.zeros(0, np.int64), loglik_trace=[],
                            config=config, terms=('b', 'a', 'c'))
        assert ts.top_words(model, 0, 3) == [('c', 0.5), ('a', 0.25), ('b', 0.25)]
        assert ts.top_words(model, 0, 0) == []
        with pytest.raises(RangeError):
            ts.top_words(model, 1, 3)

    def test_dominant_topic_ties_go_to_lowest_id(self):
        np.testing.assert_array_equal(ts.dominant_topics(np.array([[0.5, 0.5], [0.2, 0.8]])),
                                      [0, 1])

    def test_label_buckets(self, config):
        start = pd.Timestamp(datetime(2021, 8, 23, tzinfo=timezone.utc))
        step = timedelta(minutes=5)
        series = BucketSeries(step, [IntervalBucket(start, 3), IntervalBucket(start + step, 5)])
        theta = np.array([[0.9, 0.1], [0.3, 0.7]])
        model = ts.LdaModel(phi=np.full((2, 2), 0.5), theta=theta,
                            assignments=np.zeros(0, np.int64), loglik_trace=[], config=config)
        labelled = ts.label_buckets(model, series)
        np.testing.assert_array_equal(labelled.counts.to_numpy(), [[3, 0], [0, 5]])
        frame = labelled.to_frame()
        assert list(frame.columns) == ['bucket_start', 'dominant_topic', 'topic_0', 'topic_1']
        with pytest.raises(AlignmentError):
            ts.label_buckets(model, series, theta[:1])

    def test_bucket_theta_from_docs(self):
        theta = np.array([[1.0, 0.0], [0.0, 1.0], [0.5, 0.5]])
        out = ts.bucket_theta_from_docs(theta, [0, 0, 2], 3)
        np.testing.assert_allclose(out, [[0.5, 0.5], [0.5, 0.5], [0.5, 0.5]])
        out = ts.bucket_theta_from_docs(theta[:1], [1], 2)
        np.testing.assert_allclose(out, [[0.5, 0.5], [1.0, 0.0]])

    def test_topic_shares_sum_to_one(self, model):
        np.testing.assert_allclose(ts.topic_shares(model).sum(), 1.0)

    def test_keyword_frame(self, model):
        frame = ts.keyword_frame(model, 3)
        assert list(frame.columns) == ['topic', 'rank', 'term', 'probability']
        assert len(frame) == 6


class TestPersistence:
    def test_dict_round_trip(self, model):
        restored = ts.model_from_dict(ts.model_to_dict(model))
        np.testing.assert_array_equal(restored.phi, model.phi)
        np.testing.assert_array_equal(restored.theta, model.theta)
        assert restored.config == model.config
        assert restored.terms == model.terms
        assert restored.vocabulary_digest == model.vocabulary_digest
