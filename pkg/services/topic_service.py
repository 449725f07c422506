"""
Topic Service
Latent Dirichlet Allocation fitted by collapsed Gibbs sampling, held-out perplexity,
topic-count selection and per-bucket topic labelling
"""

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from numba import njit
import scipy.sparse as sp
from scipy.special import gammaln

from services.corpus_service import DocTermMatrix
from services.errors import (
    AlignmentError,
    ConfigurationError,
    InsufficientDataError,
    InvariantViolation,
    RangeError,
)
from services.timegrid_service import BucketSeries

logger = logging.getLogger(__name__)

DEFAULT_SEED = 20
FOLD_IN_SWEEPS = 20
HOLDOUT_SHARE = 0.1
FOLD_IN_SAMPLES = 10
SE_BAND = 1.0


@dataclass(frozen=True)
class LdaConfig:
    n_topics: int = 3
    alpha: Optional[float] = None  # None -> 50 / K
    beta: float = 0.01
    iterations: int = 1000
    burn_in: int = 800
    seed: int = DEFAULT_SEED
    debug: bool = False

    def __post_init__(self):
        if self.n_topics < 1:
            raise ConfigurationError('n_topics must be at least 1', n_topics=self.n_topics)
        if self.alpha is not None and self.alpha <= 0:
            raise ConfigurationError('alpha must be positive', alpha=self.alpha)
        if self.beta <= 0:
            raise ConfigurationError('beta must be positive', beta=self.beta)
        if self.iterations < 1:
            raise ConfigurationError('iterations must be at least 1')
        if not 0 <= self.burn_in < self.iterations:
            raise ConfigurationError(
                'burn_in must be below iterations',
                burn_in=self.burn_in, iterations=self.iterations,
            )

    @property
    def doc_prior(self) -> float:
        return self.alpha if self.alpha is not None else 50.0 / self.n_topics

    def with_topics(self, n_topics: int) -> 'LdaConfig':
        values = asdict(self)
        values['n_topics'] = n_topics
        return LdaConfig(**values)


@dataclass
class LdaModel:
    phi: np.ndarray            # K x V
    theta: np.ndarray          # D x K
    assignments: np.ndarray    # topic per token of the non-empty documents, in doc id order
    loglik_trace: List[float]
    config: LdaConfig
    terms: Tuple[str, ...] = ()
    doc_ids: List[str] = field(default_factory=list)
    vocabulary_digest: str = ''

    @property
    def n_topics(self) -> int:
        return self.phi.shape[0]


@dataclass
class TopicSeries:
    bucket_starts: List[pd.Timestamp]
    dominant: np.ndarray       # topic id per bucket
    counts: pd.DataFrame       # bucket_start x topic_<k>, tweets credited to the dominant topic

    def to_frame(self) -> pd.DataFrame:
        frame = self.counts.copy()
        frame.insert(0, 'dominant_topic', self.dominant)
        return frame.reset_index()


# ---------------------------------------------------------------------------
# Sampler kernels
# ---------------------------------------------------------------------------

@njit(cache=True, nogil=True)
def _gibbs_sweep(words, docs, z, ndk, nkw, nk, alpha, beta, vbeta, uniforms,
                 probs):  # pragma: no cover
    n_topics = nk.shape[0]
    for i in range(words.shape[0]):
        w = words[i]
        d = docs[i]
        k = z[i]
        ndk[d, k] -= 1
        nkw[k, w] -= 1
        nk[k] -= 1

        total = 0.0
        for t in range(n_topics):
            total += (ndk[d, t] + alpha) * (nkw[t, w] + beta) / (nk[t] + vbeta)
            probs[t] = total

        u = uniforms[i] * total
        k = 0
        while k < n_topics - 1 and probs[k] <= u:
            k += 1

        z[i] = k
        ndk[d, k] += 1
        nkw[k, w] += 1
        nk[k] += 1


@njit(cache=True, nogil=True)
def _fold_in_sweep(words, docs, z, ndk, phi, alpha, uniforms, probs):  # pragma: no cover
    n_topics = phi.shape[0]
    for i in range(words.shape[0]):
        w = words[i]
        d = docs[i]
        k = z[i]
        ndk[d, k] -= 1

        total = 0.0
        for t in range(n_topics):
            total += (ndk[d, t] + alpha) * phi[t, w]
            probs[t] = total

        u = uniforms[i] * total
        k = 0
        while k < n_topics - 1 and probs[k] <= u:
            k += 1

        z[i] = k
        ndk[d, k] += 1


def _expand_tokens(dtm: DocTermMatrix) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Token positions in row-major order.

    Returns:
        (words, docs, kept_rows): docs index into kept_rows, the non-empty rows of dtm
    """
    lengths = dtm.row_lengths()
    kept_rows = np.flatnonzero(lengths > 0)
    words: List[np.ndarray] = []
    docs: List[np.ndarray] = []
    csr = dtm.counts
    for local, row in enumerate(kept_rows):
        start, stop = csr.indptr[row], csr.indptr[row + 1]
        cols = csr.indices[start:stop]
        counts = csr.data[start:stop]
        order = np.argsort(cols, kind='stable')
        expanded = np.repeat(cols[order], counts[order])
        words.append(expanded)
        docs.append(np.full(expanded.shape[0], local, dtype=np.int64))
    if not words:
        return np.zeros(0, np.int64), np.zeros(0, np.int64), kept_rows
    return (
        np.concatenate(words).astype(np.int64),
        np.concatenate(docs).astype(np.int64),
        kept_rows,
    )


def _joint_loglik(ndk: np.ndarray, nkw: np.ndarray, nk: np.ndarray,
                  alpha: float, beta: float) -> float:
    """log p(w, z) with phi and theta integrated out"""
    n_topics, n_terms = nkw.shape
    n_docs = ndk.shape[0]
    topic_part = (
        n_topics * (gammaln(n_terms * beta) - n_terms * gammaln(beta))
        + gammaln(nkw + beta).sum()
        - gammaln(nk + n_terms * beta).sum()
    )
    nd = ndk.sum(axis=1)
    doc_part = (
        n_docs * (gammaln(n_topics * alpha) - n_topics * gammaln(alpha))
        + gammaln(ndk + alpha).sum()
        - gammaln(nd + n_topics * alpha).sum()
    )
    return float(topic_part + doc_part)


def _check_bookkeeping(z, words, docs, ndk, nkw, nk, sweep: int) -> None:
    n_topics = nk.shape[0]
    if not np.array_equal(ndk.sum(axis=1), np.bincount(docs, minlength=ndk.shape[0])):
        raise InvariantViolation(f'sum_k n_dk != n_d after sweep {sweep}')
    if not np.array_equal(nkw.sum(axis=1), nk):
        raise InvariantViolation(f'sum_w n_kw != n_k after sweep {sweep}')
    if int(nk.sum()) != words.shape[0]:
        raise InvariantViolation(f'sum_k n_k != total tokens after sweep {sweep}')
    if not np.array_equal(np.bincount(z, minlength=n_topics), nk):
        raise InvariantViolation(f'topic counts disagree with assignments after sweep {sweep}')
    if (ndk < 0).any() or (nkw < 0).any():
        raise InvariantViolation(f'negative count after sweep {sweep}')


def _streams(seed: int, n: int) -> List[np.random.Generator]:
    children = np.random.SeedSequence(seed).spawn(n)
    return [np.random.Generator(np.random.PCG64(child)) for child in children]


# ---------------------------------------------------------------------------
# Public operations
# ---------------------------------------------------------------------------

def fit_lda(
    dtm: DocTermMatrix,
    config: LdaConfig,
    terms: Sequence[str] = (),
    vocabulary_digest: str = ''
) -> LdaModel:
    """
    Fit LDA by collapsed Gibbs sampling.

    Empty documents are skipped for sampling and get the prior mean theta row
    (1/K each). phi and theta are point estimates from the final sampler state.

    Raises:
        InsufficientDataError: the matrix holds no tokens
        ConfigurationError: more topics than tokens
    """
    # tokens are visited in doc id order, so row order of dtm does not change the fit
    visit = sorted(range(dtm.n_docs), key=lambda i: (dtm.doc_ids[i], i))
    words, docs, kept_rows = _expand_tokens(dtm.take(visit))
    n_tokens = words.shape[0]
    K = config.n_topics
    V = dtm.n_terms
    if n_tokens == 0:
        raise InsufficientDataError('Document-term matrix has no tokens')
    if K > n_tokens:
        raise ConfigurationError(
            f'{K} topics requested for only {n_tokens} tokens', n_topics=K, tokens=n_tokens
        )
    skipped = dtm.n_docs - kept_rows.shape[0]
    if skipped:
        logger.warning('Warning: skipped %d empty documents for LDA', skipped)

    alpha = config.doc_prior
    beta = config.beta
    init_rng, sweep_rng = _streams(config.seed, 2)

    z = init_rng.integers(0, K, size=n_tokens, dtype=np.int64)
    n_docs = kept_rows.shape[0]
    ndk = np.zeros((n_docs, K), dtype=np.int64)
    nkw = np.zeros((K, V), dtype=np.int64)
    np.add.at(ndk, (docs, z), 1)
    np.add.at(nkw, (z, words), 1)
    nk = nkw.sum(axis=1)
    probs = np.zeros(K, dtype=np.float64)

    trace: List[float] = []
    for sweep in range(config.iterations):
        uniforms = sweep_rng.random(n_tokens)
        _gibbs_sweep(words, docs, z, ndk, nkw, nk, alpha, beta, V * beta, uniforms, probs)
        if config.debug:
            _check_bookkeeping(z, words, docs, ndk, nkw, nk, sweep)
        trace.append(_joint_loglik(ndk, nkw, nk, alpha, beta))

    phi = (nkw + beta) / (nk[:, None] + V * beta)
    theta = np.full((dtm.n_docs, K), 1.0 / K)
    nd = ndk.sum(axis=1)
    theta[kept_rows] = (ndk + alpha) / (nd[:, None] + K * alpha)
    theta[visit] = theta.copy()

    logger.info('Fitted LDA K=%d on %d docs / %d tokens; final loglik %.3f',
                K, n_docs, n_tokens, trace[-1])
    return LdaModel(
        phi=phi,
        theta=theta,
        assignments=z,
        loglik_trace=trace,
        config=config,
        terms=tuple(terms),
        doc_ids=list(dtm.doc_ids),
        vocabulary_digest=vocabulary_digest,
    )


def fold_in(model: LdaModel, dtm: DocTermMatrix, sweeps: int = FOLD_IN_SWEEPS,
            samples: int = 1) -> np.ndarray:
    """
    Estimate theta for new documents by Gibbs sweeps with phi held fixed.

    theta is averaged over the states after the last `samples` sweeps; the earlier
    sweeps are burn-in.
    """
    if dtm.n_terms != model.phi.shape[1]:
        raise AlignmentError(
            f'Matrix has {dtm.n_terms} terms, model has {model.phi.shape[1]}',
            matrix_terms=dtm.n_terms, model_terms=model.phi.shape[1],
        )
    if not 1 <= samples <= sweeps:
        raise ConfigurationError(f'samples must be in 1..{sweeps}, got {samples}')
    K = model.n_topics
    alpha = model.config.doc_prior
    words, docs, kept_rows = _expand_tokens(dtm)
    theta = np.full((dtm.n_docs, K), 1.0 / K)
    if words.shape[0] == 0:
        return theta

    init_rng, sweep_rng = _streams(model.config.seed + 1, 2)
    z = init_rng.integers(0, K, size=words.shape[0], dtype=np.int64)
    ndk = np.zeros((kept_rows.shape[0], K), dtype=np.int64)
    np.add.at(ndk, (docs, z), 1)
    probs = np.zeros(K, dtype=np.float64)
    phi = np.ascontiguousarray(model.phi, dtype=np.float64)
    nd = np.bincount(docs, minlength=kept_rows.shape[0])[:, None]
    averaged = np.zeros((kept_rows.shape[0], K))
    for sweep in range(sweeps):
        _fold_in_sweep(words, docs, z, ndk, phi, alpha, sweep_rng.random(words.shape[0]), probs)
        if sweep >= sweeps - samples:
            averaged += (ndk + alpha) / (nd + K * alpha)

    theta[kept_rows] = averaged / samples
    return theta


def _doc_logliks(model: LdaModel, dtm: DocTermMatrix,
                 theta: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Per-row (sum count * log p(w | d), token count)"""
    coo = dtm.counts.tocoo()
    probs = np.einsum('ik,ki->i', theta[coo.row], model.phi[:, coo.col])
    if (probs <= 0).any() or not np.isfinite(probs).all():
        raise InvariantViolation('Zero or non-finite token probability in perplexity')
    logliks = np.bincount(coo.row, weights=coo.data * np.log(probs), minlength=dtm.n_docs)
    return logliks, dtm.row_lengths()


def perplexity(model: LdaModel, dtm: DocTermMatrix, theta: Optional[np.ndarray] = None) -> float:
    """
    exp(-sum count * log sum_k theta[d, k] phi[k, w] / total tokens), theta folded in
    with phi fixed unless supplied.
    """
    total = dtm.total
    if total == 0:
        raise InsufficientDataError('Cannot compute perplexity on an empty matrix')
    if theta is None:
        theta = fold_in(model, dtm)
    logliks, _ = _doc_logliks(model, dtm, theta)
    return float(np.exp(-logliks.sum() / total))


def split_tokens(dtm: DocTermMatrix) -> Tuple[DocTermMatrix, DocTermMatrix]:
    """
    Split every document's tokens into two halves by alternating position in
    term-sorted order, so each term's count is shared as evenly as possible.

    Returns:
        (observed, held): same shape and doc ids as dtm, observed + held == dtm
    """
    words, docs, kept_rows = _expand_tokens(dtm)
    starts = np.searchsorted(docs, docs, side='left')
    observed = (np.arange(docs.shape[0]) - starts) % 2 == 0
    rows = kept_rows[docs]

    def part(mask: np.ndarray) -> DocTermMatrix:
        counts = sp.csr_matrix(
            (np.ones(int(mask.sum()), dtype=np.int64), (rows[mask], words[mask])),
            shape=dtm.counts.shape,
        )
        counts.sum_duplicates()
        return DocTermMatrix(counts, list(dtm.doc_ids))

    return part(observed), part(~observed)


def completion_score(model: LdaModel, dtm: DocTermMatrix) -> Tuple[float, float]:
    """
    Document-completion perplexity: theta comes from half of each document's tokens
    (averaged over fold-in samples) and the other half is scored.

    Returns:
        (perplexity, standard error of its log over documents)
    """
    observed, held = split_tokens(dtm)
    total = held.total
    if total == 0:
        raise InsufficientDataError('Held-out documents are too short to split')
    theta = fold_in(model, observed, FOLD_IN_SWEEPS, FOLD_IN_SAMPLES)
    logliks, lengths = _doc_logliks(model, held, theta)
    scored = lengths > 0
    logliks, lengths = logliks[scored], lengths[scored].astype(float)
    log_perplexity = -logliks.sum() / total
    n = logliks.shape[0]
    if n > 1:
        # ratio estimator, linearized
        residuals = -logliks - log_perplexity * lengths
        se = float(np.sqrt((residuals ** 2).sum() / (n * (n - 1))) / lengths.mean())
    else:
        se = 0.0
    return float(np.exp(log_perplexity)), se


def select_k(
    dtm: DocTermMatrix,
    k_range: Sequence[int] = range(3, 9),
    template: Optional[LdaConfig] = None,
    workers: int = 1,
    se_band: float = SE_BAND,
) -> Tuple[int, pd.DataFrame]:
    """
    Fit one model per K on 90% of the non-empty documents and score document-completion
    perplexity on the rest.

    K values whose log perplexity lies within se_band standard errors of the best one
    count as tied, and ties go to the smaller K. se_band=0 is a plain argmin.

    Returns:
        (best K, table with columns k, perplexity, log_se)
    """
    template = template or LdaConfig()
    ks = sorted(set(int(k) for k in k_range))
    if not ks:
        raise ConfigurationError('k_range is empty')
    if se_band < 0:
        raise ConfigurationError(f'se_band must be non-negative, got {se_band}')

    nonempty = np.flatnonzero(dtm.row_lengths() > 0)
    if nonempty.shape[0] < 2:
        raise InsufficientDataError('Need at least 2 non-empty documents to hold some out')
    rng = _streams(template.seed, 3)[2]
    shuffled = rng.permutation(nonempty)
    n_test = max(1, int(round(HOLDOUT_SHARE * shuffled.shape[0])))
    test_rows = np.sort(shuffled[:n_test])
    train_rows = np.sort(shuffled[n_test:])
    train = dtm.take(train_rows)
    test = dtm.take(test_rows)

    def score_k(k: int) -> Tuple[float, float]:
        # the template alpha is per-K only when left unset
        model = fit_lda(train, template.with_topics(k))
        return completion_score(model, test)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            scores = list(pool.map(score_k, ks))
    else:
        scores = [score_k(k) for k in ks]

    values = [value for value, _ in scores]
    table = pd.DataFrame({'k': ks, 'perplexity': values, 'log_se': [se for _, se in scores]})
    best_value, best_at = min(zip(values, ks))
    cutoff = np.log(best_value) + se_band * scores[ks.index(best_at)][1]
    best = min(k for k, value in zip(ks, values) if np.log(value) <= cutoff)
    logger.info('Topic count selection: lowest perplexity at K=%d, chose K=%d', best_at, best)
    return best, table


def top_words(model: LdaModel, topic: int, n: int) -> List[Tuple[str, float]]:
    """Highest-probability terms of one topic, ties broken lexicographically"""
    if not 0 <= topic < model.n_topics:
        raise RangeError(f'Topic {topic} outside 0..{model.n_topics - 1}', topic=topic)
    if n <= 0:
        return []
    terms = model.terms or tuple(str(i) for i in range(model.phi.shape[1]))
    row = model.phi[topic]
    ranked = sorted(range(row.shape[0]), key=lambda w: (-row[w], terms[w]))
    return [(terms[w], float(row[w])) for w in ranked[:n]]


def keyword_frame(model: LdaModel, n: int = 10) -> pd.DataFrame:
    rows = []
    for topic in range(model.n_topics):
        for rank, (term, prob) in enumerate(top_words(model, topic, n), start=1):
            rows.append((topic, rank, term, prob))
    return pd.DataFrame(rows, columns=['topic', 'rank', 'term', 'probability'])


def dominant_topics(theta: np.ndarray) -> np.ndarray:
    # argmax returns the first maximum, i.e. the lowest topic id on ties
    return np.argmax(theta, axis=1).astype(np.int64)


def label_buckets(
    model: LdaModel,
    series: BucketSeries,
    theta: Optional[np.ndarray] = None
) -> TopicSeries:
    """
    Dominant topic per bucket, and per-topic tweet counts crediting each bucket's
    tweets to its dominant topic.
    """
    theta = model.theta if theta is None else theta
    if theta.shape[0] != len(series):
        raise AlignmentError(
            f'Model has {theta.shape[0]} documents but series has {len(series)} buckets',
            documents=theta.shape[0], buckets=len(series),
        )
    dominant = dominant_topics(theta)
    counts = np.zeros((len(series), theta.shape[1]), dtype=np.int64)
    counts[np.arange(len(series)), dominant] = series.counts
    index = pd.DatetimeIndex(series.starts, name='bucket_start')
    frame = pd.DataFrame(
        counts, index=index, columns=[f'topic_{k}' for k in range(theta.shape[1])]
    )
    return TopicSeries(bucket_starts=series.starts, dominant=dominant, counts=frame)


def bucket_theta_from_docs(
    theta: np.ndarray,
    doc_buckets: Sequence[int],
    n_buckets: int
) -> np.ndarray:
    """Average per-tweet theta rows into per-bucket rows (uniform for empty buckets)"""
    K = theta.shape[1]
    sums = np.zeros((n_buckets, K))
    counts = np.zeros(n_buckets)
    np.add.at(sums, np.asarray(doc_buckets), theta)
    np.add.at(counts, np.asarray(doc_buckets), 1.0)
    out = np.full((n_buckets, K), 1.0 / K)
    filled = counts > 0
    out[filled] = sums[filled] / counts[filled, None]
    return out


def topic_shares(model: LdaModel, weights: Optional[np.ndarray] = None) -> np.ndarray:
    """Marginal topic shares: theta rows averaged with optional document weights"""
    weights = np.ones(model.theta.shape[0]) if weights is None else np.asarray(weights, float)
    if weights.sum() <= 0:
        weights = np.ones(model.theta.shape[0])
    shares = weights @ model.theta
    return shares / shares.sum()


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

def model_to_dict(model: LdaModel) -> Dict[str, Any]:
    return {
        'config': asdict(model.config),
        'vocabulary_digest': model.vocabulary_digest,
        'terms': list(model.terms),
        'doc_ids': list(model.doc_ids),
        'phi': model.phi.tolist(),
        'theta': model.theta.tolist(),
        'loglik_trace': list(model.loglik_trace),
    }


def model_from_dict(payload: Dict[str, Any]) -> LdaModel:
    return LdaModel(
        phi=np.asarray(payload['phi'], dtype=float),
        theta=np.asarray(payload['theta'], dtype=float),
        assignments=np.zeros(0, dtype=np.int64),
        loglik_trace=[float(v) for v in payload['loglik_trace']],
        config=LdaConfig(**payload['config']),
        terms=tuple(payload.get('terms', ())),
        doc_ids=list(payload.get('doc_ids', [])),
        vocabulary_digest=payload.get('vocabulary_digest', ''),
    )


def load_model(path: str) -> LdaModel:
    with open(path, 'r', encoding='utf-8') as f:
        return model_from_dict(json.load(f))
