"""
Pipeline Service
One function per pipeline stage. Each reads its inputs from the output directory,
delegates to a single module operation and writes its outputs atomically; run_stage
adds locking, timing and the manifest entry.
"""

import json
import logging
from datetime import timedelta
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from services import (
    corpus_service,
    decompose_service,
    embed_service,
    report_service,
    sarimax_service,
    sentiment_service,
    timegrid_service,
    topic_service,
)
from services.artifact_store import ArtifactStore, timed
from services.config_service import PipelineConfig
from services.errors import (
    AlignmentError,
    ConfigurationError,
    InsufficientDataError,
    MissingExogError,
)
from services.statespace_service import OrderSpec

logger = logging.getLogger(__name__)

StageResult = Tuple[List[Path], List[Path]]   # (inputs, outputs)

STAGE_ORDER = ('ingest', 'score', 'resample', 'events', 'topics', 'embed', 'decompose',
               'forecast', 'evaluate', 'report')


# ---------------------------------------------------------------------------
# Shared readers
# ---------------------------------------------------------------------------

def _interval(config: PipelineConfig) -> timedelta:
    return timedelta(minutes=config.timegrid.interval_minutes)


def _stopwords(config: PipelineConfig):
    return corpus_service.load_stopwords(config.paths.stopwords)


def _read_tweets(store: ArtifactStore) -> List[corpus_service.RawTweet]:
    return corpus_service.ingest_tweets(store.path('tweets.jsonl')).tweets


def _read_scores(store: ArtifactStore) -> Dict[str, float]:
    frame = store.read_csv('sentiment.csv', dtype={'tweet_id': str}, keep_default_na=False)
    return sentiment_service.scores_from_frame(frame)


def _read_series(store: ArtifactStore, config: PipelineConfig) -> timegrid_service.BucketSeries:
    frame = store.read_csv('buckets.csv')
    text = store.path('bucket_tokens.txt').read_text(encoding='utf-8')
    lines = text[:-1].split('\n') if len(frame) else []
    return timegrid_service.series_from_frame(frame, lines, _interval(config))


def _read_features(store: ArtifactStore, name: str) -> pd.DataFrame:
    frame = store.read_csv(name)
    frame.index = pd.DatetimeIndex(pd.to_datetime(frame.pop('bucket_start'), utc=True),
                                   name='bucket_start')
    return frame


def load_price_table(path: str, time_column: str, price_column: str) -> pd.DataFrame:
    """
    Price CSV indexed by UTC time. Rows with a blank price after the last observed one
    are future grid points for forecasting; blanks inside the observed span are errors.
    """
    try:
        frame = pd.read_csv(path)
    except (OSError, pd.errors.ParserError) as e:
        raise InsufficientDataError(f'Could not read price table {path}: {e}', path=path)
    for column in (time_column, price_column):
        if column not in frame.columns:
            raise ConfigurationError(f'Price table has no column {column!r}', column=column)
    frame.index = pd.DatetimeIndex(pd.to_datetime(frame.pop(time_column), utc=True), name='time')
    frame = frame.sort_index()
    observed = frame[price_column].notna().to_numpy()
    if not observed.any():
        raise InsufficientDataError('Price table has no observed values')
    last = np.flatnonzero(observed)[-1]
    if not observed[:last + 1].all():
        raise InsufficientDataError('Price series has gaps inside the observed span')
    return frame


def _price_inputs(config: PipelineConfig, store: ArtifactStore):
    """(observed price, exog on the observed grid, exog on the future grid)"""
    if not config.paths.price:
        raise ConfigurationError('paths.price is required for forecasting')
    sx = config.sarimax
    table = load_price_table(config.paths.price, sx.time_column, sx.price_column)
    observed_mask = table[sx.price_column].notna().to_numpy()
    price = table[sx.price_column][observed_mask]
    future_grid = table.index[~observed_mask]

    if not sx.exog:
        return price, None, pd.DataFrame(index=future_grid)
    features = _read_features(store, 'features_clean.csv')
    missing = [c for c in sx.exog if c not in features.columns]
    if missing:
        raise ConfigurationError(f'Unknown exog columns: {", ".join(missing)}', columns=missing)
    aligned = report_service.align_to_grid(features[list(sx.exog)], table.index)
    # future exog only where tweets were actually observed, never carried forward
    covered = table.index <= features.index.max()
    exog = aligned[observed_mask]
    future = aligned[(~observed_mask) & covered]
    return price, exog, future


def _order(config: PipelineConfig) -> OrderSpec:
    return OrderSpec(**config.sarimax.order)


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------

def stage_ingest(config: PipelineConfig, store: ArtifactStore) -> StageResult:
    if not config.paths.tweets:
        raise ConfigurationError('paths.tweets is required for ingest')
    result = corpus_service.ingest_tweets(config.paths.tweets, config.ingest.schema or None)
    kept = corpus_service.filter_by_query(result.tweets, config.ingest.exclude_query)
    logger.info('Ingested %d tweets, kept %d after query exclusion (%s)',
                len(result.tweets), len(kept), ', '.join(config.ingest.exclude_query) or 'none')

    lines = ''.join(
        json.dumps(t.to_record(), ensure_ascii=False, sort_keys=True) + '\n' for t in kept
    )
    outputs = [
        store.write_text(lines, 'tweets.jsonl'),
        # per-query counts cover every query tag, excluded ones included
        store.write_csv(timegrid_service.query_counts(result.tweets, _interval(config)),
                        'query_counts.csv', index=True),
        store.write_json({
            **timegrid_service.spatial_summary(kept),
            'total_lines': result.total_lines,
            'skipped': result.skipped,
            'excluded': len(result.tweets) - len(kept),
        }, 'spatial_summary.json'),
    ]
    return [Path(config.paths.tweets)], outputs


def stage_score(config: PipelineConfig, store: ArtifactStore) -> StageResult:
    inputs = store.require(['tweets.jsonl'])
    negators = (sentiment_service.read_negators(config.paths.negators)
                if config.paths.negators else None)
    lexicon = sentiment_service.load_lexicon(config.paths.lexicon, negators=negators)
    scores = sentiment_service.score_tweets(_read_tweets(store), lexicon, _stopwords(config))
    output = store.write_csv(sentiment_service.scores_frame(scores), 'sentiment.csv')
    return inputs, [output]


def stage_resample(config: PipelineConfig, store: ArtifactStore) -> StageResult:
    inputs = store.require(['tweets.jsonl', 'sentiment.csv'])
    tweets = _read_tweets(store)
    docs = corpus_service.tokenize_tweets(tweets, _stopwords(config))
    series = timegrid_service.resample(
        tweets, _read_scores(store), _interval(config),
        tokens={d.tweet_id: d.tokens for d in docs},
    )
    features = timegrid_service.derive_features(series)
    lines = series.token_lines()
    outputs = [
        store.write_csv(series.to_frame(), 'buckets.csv'),
        store.write_text('\n'.join(lines) + '\n', 'bucket_tokens.txt'),
        store.write_csv(features, 'features.csv', index=True),
        store.write_csv(timegrid_service.correlation_matrix(features), 'correlation.csv',
                        index=True),
    ]
    return inputs, outputs


def stage_events(config: PipelineConfig, store: ArtifactStore) -> StageResult:
    inputs = store.require(['buckets.csv', 'bucket_tokens.txt'])
    series = _read_series(store, config)
    flags = timegrid_service.detect_spikes(series, config.timegrid.spike_threshold)
    cleaned, removed = timegrid_service.remove_outliers(series, flags)

    term_rows = []
    for i, flag in enumerate(flags):
        if not flag.flagged:
            continue
        for rank, (term, count) in enumerate(
                timegrid_service.top_terms(series, (i, i + 1), config.timegrid.top_terms), 1):
            term_rows.append({'bucket_start': flag.bucket_start, 'rank': rank,
                              'term': term, 'count': count})
    if removed:
        logger.info('Removed %d spike buckets before feature derivation', len(removed))

    outputs = [
        store.write_csv(timegrid_service.flags_frame(flags), 'events.csv'),
        store.write_csv(pd.DataFrame(term_rows, columns=['bucket_start', 'rank', 'term', 'count']),
                        'event_terms.csv'),
        store.write_csv(timegrid_service.derive_features(cleaned), 'features_clean.csv',
                        index=True),
    ]
    return inputs, outputs


def _doc_buckets(tweets, series: timegrid_service.BucketSeries) -> np.ndarray:
    start = series.starts[0]
    step = pd.Timedelta(series.interval)
    stamps = pd.to_datetime([t.timestamp for t in tweets], utc=True)
    return ((stamps.floor(step) - start) // step).to_numpy().astype(np.int64)


def _read_clean_series(store: ArtifactStore, config: PipelineConfig):
    """(series with spike buckets emptied, per-bucket flagged mask)"""
    series = _read_series(store, config)
    flags = timegrid_service.flags_from_frame(store.read_csv('events.csv'))
    cleaned, _ = timegrid_service.remove_outliers(series, flags)
    return cleaned, np.array([f.flagged for f in flags], dtype=bool)


def stage_topics(config: PipelineConfig, store: ArtifactStore) -> StageResult:
    names = ['buckets.csv', 'bucket_tokens.txt', 'events.csv']
    if config.vectorizer.per_tweet:
        names.append('tweets.jsonl')
    inputs = store.require(names)
    series, flagged = _read_clean_series(store, config)
    if not len(series):
        raise InsufficientDataError('No buckets to model')

    if config.vectorizer.per_tweet:
        tweets = _read_tweets(store)
        # tweets inside spike buckets leave with their bucket
        tweets = [t for t, b in zip(tweets, _doc_buckets(tweets, series)) if not flagged[b]]
        docs = corpus_service.tokenize_tweets(tweets, _stopwords(config))
    else:
        docs = series.as_documents()
    vocab = corpus_service.build_vocabulary(
        docs, config.vectorizer.min_occurrence, config.vectorizer.max_features
    )
    dtm = corpus_service.vectorize(docs, vocab)

    lda = config.lda
    template = topic_service.LdaConfig(
        n_topics=lda.n_topics, alpha=lda.alpha, beta=lda.beta, iterations=lda.iterations,
        burn_in=lda.burn_in, seed=config.seed, debug=lda.debug,
    )
    outputs = []
    if lda.select_k:
        best, table = topic_service.select_k(
            dtm, range(lda.k_min, lda.k_max + 1), template, workers=lda.workers,
            se_band=lda.k_se_band,
        )
        template = template.with_topics(best)
        outputs.append(store.write_csv(table, 'topic_selection.csv'))

    model = topic_service.fit_lda(dtm, template, vocab.terms, vocab.digest())
    if config.vectorizer.per_tweet:
        bucket_theta = topic_service.bucket_theta_from_docs(
            model.theta, _doc_buckets(tweets, series), len(series)
        )
    else:
        bucket_theta = model.theta
    labelled = topic_service.label_buckets(model, series, bucket_theta)

    theta_frame = pd.DataFrame(bucket_theta,
                               columns=[f'topic_{k}' for k in range(model.n_topics)])
    theta_frame.insert(0, 'bucket_start', series.starts)
    outputs += [
        store.write_csv(corpus_service.vocabulary_frame(vocab), 'vocabulary.csv'),
        store.write_json(topic_service.model_to_dict(model), 'lda_model.json'),
        store.write_csv(topic_service.keyword_frame(model, lda.top_words), 'topic_keywords.csv'),
        store.write_csv(labelled.to_frame(), 'topic_series.csv'),
        store.write_csv(theta_frame, 'bucket_theta.csv'),
    ]
    return inputs, outputs


def stage_embed(config: PipelineConfig, store: ArtifactStore) -> StageResult:
    inputs = store.require(['bucket_theta.csv', 'topic_series.csv', 'lda_model.json'])
    model = topic_service.load_model(str(store.path('lda_model.json')))
    theta_frame = store.read_csv('bucket_theta.csv')
    # tweet counts after spike removal
    topic_series = store.read_csv('topic_series.csv')
    counts = topic_series.filter(like='topic_').sum(axis=1).to_numpy(dtype=float)
    topic_columns = [c for c in theta_frame.columns if c.startswith('topic_')]
    theta = theta_frame[topic_columns].to_numpy(dtype=float)
    occupied = counts > 0
    dominant = topic_service.dominant_topics(theta)

    # occupied buckets plus one centroid per topic, embedded together
    centroids = np.vstack([
        theta[occupied & (dominant == k)].mean(axis=0) if (occupied & (dominant == k)).any()
        else np.full(model.n_topics, 1.0 / model.n_topics)
        for k in range(model.n_topics)
    ])
    points = np.vstack([theta[occupied], centroids])
    ts = config.tsne
    if ts.hellinger:
        points = embed_service.hellinger(points)
    perplexity = embed_service.effective_perplexity(points.shape[0], ts.perplexity)
    shares = topic_service.topic_shares(model)
    bucket_emb = embed_service.tsne(points, perplexity, ts.iterations, config.seed,
                                    ts.learning_rate)
    ids = list(theta_frame['bucket_start'][occupied]) + \
        [f'topic_{k}' for k in range(model.n_topics)]
    weights = np.r_[counts[occupied], shares]

    kl_rows = [('buckets', it, kl) for it, kl in bucket_emb.kl_trace]
    params = {'buckets': {'points': int(points.shape[0]), 'perplexity': perplexity,
                          'iterations': ts.iterations, 'learning_rate': ts.learning_rate,
                          'hellinger': ts.hellinger, 'seed': config.seed,
                          'kl_final': bucket_emb.kl_final}}

    topic_ids = [f'topic_{k}' for k in range(model.n_topics)]
    if model.n_topics >= 3:
        phi = embed_service.hellinger(model.phi) if ts.hellinger else model.phi
        topic_perplexity = embed_service.effective_perplexity(model.n_topics, ts.perplexity)
        topic_emb = embed_service.tsne(phi, topic_perplexity, ts.iterations, config.seed,
                                       ts.learning_rate)
        topics_frame = embed_service.embedding_frame(topic_ids, topic_emb, shares)
        kl_rows += [('topics', it, kl) for it, kl in topic_emb.kl_trace]
        params['topics'] = {'points': model.n_topics, 'perplexity': topic_perplexity,
                            'kl_final': topic_emb.kl_final}
    else:
        logger.warning('Warning: %d topics are too few for a topic-level embedding',
                       model.n_topics)
        topics_frame = pd.DataFrame(columns=['id', 'x', 'y', 'weight'])

    outputs = [
        store.write_csv(embed_service.embedding_frame(ids, bucket_emb, weights),
                        'embedding_buckets.csv'),
        store.write_csv(topics_frame, 'embedding_topics.csv'),
        store.write_csv(pd.DataFrame(kl_rows, columns=['embedding', 'iteration', 'kl']),
                        'embedding_kl.csv'),
        store.write_json(params, 'embedding_params.json'),
    ]
    return inputs, outputs


def stage_decompose(config: PipelineConfig, store: ArtifactStore) -> StageResult:
    inputs = store.require(['features.csv'])
    features = _read_features(store, 'features.csv')
    buckets = decompose_service.decompose_additive(
        features['tweet_count'].to_numpy(), config.decompose.bucket_period
    ).to_frame()
    buckets.insert(1, 'time', features.index)
    outputs = [store.write_csv(buckets, 'decomposition_buckets.csv')]

    if config.paths.price:
        sx = config.sarimax
        table = load_price_table(config.paths.price, sx.time_column, sx.price_column)
        price = table[sx.price_column].dropna()
        frame = decompose_service.decompose_additive(
            price.to_numpy(), config.decompose.price_period
        ).to_frame()
        frame.insert(1, 'time', price.index)
        outputs.append(store.write_csv(frame, 'decomposition_price.csv'))
        inputs.append(Path(config.paths.price))
    else:
        logger.warning('Warning: paths.price not set; skipping price decomposition')
    return inputs, outputs


def stage_forecast(config: PipelineConfig, store: ArtifactStore) -> StageResult:
    sx = config.sarimax
    inputs = store.require(['features_clean.csv'] if sx.exog else [])
    price, exog, future = _price_inputs(config, store)
    order = _order(config)
    outputs = []

    if sx.grid:
        fitted, table = sarimax_service.grid_search(
            price.to_numpy(), exog, d=order.d, D=order.D, s=order.s,
            p_range=range(sx.p_max + 1), q_range=range(sx.q_max + 1),
            P_range=range(sx.P_max + 1), Q_range=range(sx.Q_max + 1),
            seed=config.seed, workers=sx.workers,
        )
        outputs.append(store.write_csv(table, 'sarimax_grid.csv'))
    else:
        fitted = sarimax_service.fit(price.to_numpy(), exog, order, seed=config.seed)

    predictions = sarimax_service.predict_one_step(fitted, price.to_numpy(), exog)
    fc = None
    if sx.horizon:
        if fitted.exog_names and len(future) < sx.horizon:
            raise MissingExogError(
                f'Forecast horizon {sx.horizon} needs future exog rows; only {len(future)} '
                f'future grid points have tweet features',
                horizon=sx.horizon, available=len(future),
            )
        future_exog = future.iloc[:sx.horizon] if fitted.exog_names else None
        fc = sarimax_service.forecast(fitted, sx.horizon, future_exog)
        step = price.index[-1] - price.index[-2] if len(price) > 1 else pd.Timedelta(hours=1)
        future_index = (future.index[:sx.horizon] if fitted.exog_names else
                        pd.date_range(price.index[-1] + step, periods=sx.horizon, freq=step))
        frame = fc.to_frame()
        frame.insert(1, 'time', future_index)
        outputs.append(store.write_csv(frame, 'forecast.csv'))
    else:
        future_index = None

    outputs += [
        store.write_json(sarimax_service.fit_to_dict(fitted), 'sarimax_fit.json'),
        store.write_csv(sarimax_service.prediction_frame(price.index, price.to_numpy(),
                                                         predictions, fc, future_index),
                        'predictions.csv'),
    ]
    return inputs + [Path(config.paths.price)], outputs


def stage_evaluate(config: PipelineConfig, store: ArtifactStore) -> StageResult:
    inputs = store.require(['sarimax_fit.json'] + (['features_clean.csv']
                                                   if config.sarimax.exog else []))
    fitted = sarimax_service.load_fit(str(store.path('sarimax_fit.json')))
    price, exog, _ = _price_inputs(config, store)
    if exog is not None and tuple(exog.columns) != fitted.exog_names:
        raise AlignmentError('Configured exog columns differ from the fitted model',
                             fitted=list(fitted.exog_names), configured=list(exog.columns))
    report = sarimax_service.evaluate(price.to_numpy(), exog, fitted.order,
                                      config.sarimax.split_ratio, seed=config.seed)
    segment = np.where(np.arange(len(price)) < report.split_index, 'train', 'test')
    frame = pd.DataFrame({
        'time': price.index,
        'observed': price.to_numpy(),
        'one_step': report.predictions,
        'segment': segment,
    })
    outputs = [
        store.write_json({
            'order': fitted.order.label(),
            'split_ratio': report.split_ratio,
            'split_index': report.split_index,
            'rmse_train': report.rmse_train,
            'rmse_test': report.rmse_test,
            'converged': report.fit.converged,
        }, 'evaluation.json'),
        store.write_csv(frame, 'evaluation_predictions.csv'),
    ]
    return inputs + [Path(config.paths.price)], outputs


def stage_report(config: PipelineConfig, store: ArtifactStore) -> StageResult:
    inputs = store.require(['features_clean.csv', 'topic_series.csv', 'query_counts.csv',
                            'sarimax_fit.json', 'predictions.csv'])
    features = _read_features(store, 'features_clean.csv')
    topics = store.read_csv('topic_series.csv')
    if len(topics) != len(features):
        raise AlignmentError(f'{len(topics)} topic rows for {len(features)} feature rows')
    dominant = topics['dominant_topic'].to_numpy()
    topic_counts = topics.drop(columns=['dominant_topic'])
    topic_counts.index = pd.DatetimeIndex(pd.to_datetime(topic_counts.pop('bucket_start'),
                                                         utc=True), name='bucket_start')
    bins = config.report.bins

    outputs = [
        store.write_csv(topic_counts, 'report_topic_counts.csv', index=True),
        store.write_csv(store.read_csv('query_counts.csv'), 'report_query_counts.csv'),
        store.write_csv(report_service.topic_boxplots(features, dominant),
                        'report_boxplots.csv'),
        store.write_csv(report_service.topic_histograms(features, dominant, bins=bins),
                        'report_histograms.csv'),
        store.write_csv(report_service.topic_sentiment_summary(features, dominant),
                        'report_topic_sentiment.csv'),
        store.write_csv(store.read_csv('predictions.csv'), 'report_prediction.csv'),
    ]
    if config.paths.price:
        sx = config.sarimax
        table = load_price_table(config.paths.price, sx.time_column, sx.price_column)
        price = table[sx.price_column].dropna()
        outputs.append(store.write_csv(
            report_service.topic_price_correlation(topic_counts, price),
            'report_topic_price_correlation.csv',
        ))
        inputs.append(Path(config.paths.price))

    fitted = sarimax_service.load_fit(str(store.path('sarimax_fit.json')))
    diagnostics = sarimax_service.diagnostics(fitted)
    for name, frame in report_service.diagnostic_tables(diagnostics).items():
        outputs.append(store.write_csv(frame, f'{name}.csv'))
    return inputs, outputs


STAGES: Dict[str, Callable[[PipelineConfig, ArtifactStore], StageResult]] = {
    'ingest': stage_ingest,
    'score': stage_score,
    'resample': stage_resample,
    'events': stage_events,
    'topics': stage_topics,
    'embed': stage_embed,
    'decompose': stage_decompose,
    'forecast': stage_forecast,
    'evaluate': stage_evaluate,
    'report': stage_report,
}


def run_stage(stage: str, config: PipelineConfig,
              store: Optional[ArtifactStore] = None) -> List[Path]:
    """Run one stage under the directory lock and record it in the manifest"""
    if stage not in STAGES:
        raise ConfigurationError(f'Unknown stage {stage!r}', stage=stage)
    store = store or ArtifactStore(config.paths.output_dir)
    with store.lock():
        with timed() as clock:
            inputs, outputs = STAGES[stage](config, store)
        store.record_stage(stage, inputs, outputs, clock['seconds'], config.to_dict())
    logger.info('Stage %s wrote %d files in %.2fs', stage, len(outputs), clock['seconds'])
    return outputs


def run_all(config: PipelineConfig, stages=STAGE_ORDER) -> Dict[str, List[Path]]:
    store = ArtifactStore(config.paths.output_dir)
    return {stage: run_stage(stage, config, store) for stage in stages}
