"""
Corpus Service
Ingests line-delimited tweet records, normalizes text into tokens and builds the
capped vocabulary and sparse document-term matrix used for topic modeling
"""

import hashlib
import json
import logging
import math
import re
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from datetime import datetime, timezone
from functools import lru_cache
from pathlib import Path
from typing import Any, Dict, Iterable, Iterator, List, Optional, Sequence, Set, Tuple, Union

import numpy as np
import pandas as pd
import scipy.sparse as sp
from nltk.stem import PorterStemmer

from services.errors import EmptyVocabularyError, IngestError, SchemaError

logger = logging.getLogger(__name__)

DATA_DIR = Path(__file__).resolve().parent.parent / 'data'
DEFAULT_STOPWORDS_PATH = DATA_DIR / 'stopwords_en.txt'

# canonical field -> key in the source record
DEFAULT_SCHEMA = {
    'id': 'id',
    'created_at': 'created_at',
    'text': 'text',
    'likes': 'likes',
    'retweets': 'retweets',
    'query': 'query',
    'lat': 'lat',
    'lon': 'lon',
}
REQUIRED_FIELDS = ('id', 'created_at', 'text', 'likes', 'retweets', 'query')
MAX_MALFORMED_SHARE = 0.5
MAX_STEM_PASSES = 10

URL_RE = re.compile(r'(?:https?://|www\.)\S+')
MENTION_RE = re.compile(r'@\w+')
HASHTAG_RE = re.compile(r'#(\w)')
APOSTROPHE_RE = re.compile(r"['’]")
# anything that is not a letter (punctuation, digits, underscores, emoji) becomes a separator
NON_LETTER_RE = re.compile(r'[\W\d_]+')

_stemmer = PorterStemmer()


@dataclass(frozen=True)
class RawTweet:
    id: str
    timestamp: datetime
    text: str
    likes: int
    retweets: int
    query_tag: str
    latitude: Optional[float] = None
    longitude: Optional[float] = None

    def to_record(self) -> Dict[str, Any]:
        """Serialize back to the ingest format"""
        record = {
            'id': self.id,
            'created_at': self.timestamp.isoformat().replace('+00:00', 'Z'),
            'text': self.text,
            'likes': self.likes,
            'retweets': self.retweets,
            'query': self.query_tag,
        }
        if self.latitude is not None:
            record['lat'] = self.latitude
            record['lon'] = self.longitude
        return record


@dataclass(frozen=True)
class TokenizedDoc:
    tweet_id: str
    tokens: Tuple[str, ...]


@dataclass
class IngestResult:
    tweets: List[RawTweet]
    skipped: int = 0
    total_lines: int = 0


@dataclass(frozen=True)
class Vocabulary:
    terms: Tuple[str, ...]
    corpus_frequency: Dict[str, int]
    index: Dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, 'index', {term: i for i, term in enumerate(self.terms)})

    def __len__(self) -> int:
        return len(self.terms)

    def digest(self) -> str:
        """Stable hash of the ordered term list, used to tie models to vocabularies"""
        return hashlib.sha256('\n'.join(self.terms).encode('utf-8')).hexdigest()


@dataclass
class DocTermMatrix:
    """Sparse doc x term counts; row i belongs to doc_ids[i]"""

    counts: sp.csr_matrix
    doc_ids: List[str]

    @property
    def n_docs(self) -> int:
        return self.counts.shape[0]

    @property
    def n_terms(self) -> int:
        return self.counts.shape[1]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def entries(self) -> Iterator[Tuple[int, int, int]]:
        """Stored (doc, term, count) triples in row-major order"""
        coo = self.counts.tocoo()
        order = np.lexsort((coo.col, coo.row))
        for i in order:
            yield int(coo.row[i]), int(coo.col[i]), int(coo.data[i])

    def row_lengths(self) -> np.ndarray:
        return np.asarray(self.counts.sum(axis=1)).ravel().astype(np.int64)

    def take(self, rows: Sequence[int]) -> 'DocTermMatrix':
        rows = list(rows)
        return DocTermMatrix(self.counts[rows], [self.doc_ids[i] for i in rows])

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(list(self.entries()), columns=['doc', 'term_id', 'count'])


# ---------------------------------------------------------------------------
# Ingestion
# ---------------------------------------------------------------------------

def _parse_timestamp(value: Any) -> datetime:
    if not isinstance(value, str):
        raise ValueError('created_at must be an ISO-8601 string')
    text = value.strip()
    if text.endswith('Z'):
        text = text[:-1] + '+00:00'
    stamp = datetime.fromisoformat(text)
    if stamp.tzinfo is None:
        stamp = stamp.replace(tzinfo=timezone.utc)
    return stamp.astimezone(timezone.utc).replace(microsecond=0)


def _parse_count(value: Any, name: str) -> int:
    if isinstance(value, bool):
        raise ValueError(f'{name} must be an integer')
    if isinstance(value, float):
        if not value.is_integer():
            raise ValueError(f'{name} must be an integer')
        value = int(value)
    if not isinstance(value, int):
        value = int(str(value))
    if value < 0:
        raise ValueError(f'{name} must be nonnegative')
    return value


def _parse_coordinate(value: Any, limit: float, name: str) -> Optional[float]:
    if value is None or value == '':
        return None
    number = float(value)
    if not math.isfinite(number) or abs(number) > limit:
        raise ValueError(f'{name} out of range: {value}')
    return number


def parse_record(record: Dict[str, Any], schema: Optional[Dict[str, str]] = None) -> RawTweet:
    """
    Convert one decoded record into a RawTweet.

    Raises:
        ValueError / KeyError / TypeError when the record violates the RawTweet invariants
    """
    mapping = {**DEFAULT_SCHEMA, **(schema or {})}
    for name in REQUIRED_FIELDS:
        if mapping[name] not in record:
            raise KeyError(f'missing field {mapping[name]!r}')

    text = record[mapping['text']]
    if not isinstance(text, str):
        raise TypeError('text must be a string')

    latitude = _parse_coordinate(record.get(mapping['lat']), 90.0, 'latitude')
    longitude = _parse_coordinate(record.get(mapping['lon']), 180.0, 'longitude')
    if (latitude is None) != (longitude is None):
        raise ValueError('latitude and longitude must be given together')

    return RawTweet(
        id=str(record[mapping['id']]),
        timestamp=_parse_timestamp(record[mapping['created_at']]),
        text=text,
        likes=_parse_count(record[mapping['likes']], 'likes'),
        retweets=_parse_count(record[mapping['retweets']], 'retweets'),
        query_tag=str(record[mapping['query']]),
        latitude=latitude,
        longitude=longitude,
    )


def ingest_tweets(
    source: Union[str, Path, Iterable[str]],
    schema: Optional[Dict[str, str]] = None
) -> IngestResult:
    """
    Read line-delimited JSON tweet records.

    Args:
        source: Path to a .jsonl file, or an iterable of lines
        schema: Optional mapping of canonical field name -> source key

    Returns:
        IngestResult with tweets in input order and the number of skipped lines

    Raises:
        IngestError: the source cannot be read
        SchemaError: more than half of the non-blank lines are malformed
    """
    if isinstance(source, (str, Path)):
        try:
            with open(source, 'r', encoding='utf-8') as f:
                lines = f.read().splitlines()
        except (OSError, UnicodeDecodeError) as e:
            raise IngestError(f'Could not read tweet source {source}: {e}', path=str(source))
    else:
        lines = list(source)

    tweets: List[RawTweet] = []
    skipped = 0
    total = 0
    for line_no, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        total += 1
        try:
            record = json.loads(line)
            if not isinstance(record, dict):
                raise TypeError('record is not an object')
            tweets.append(parse_record(record, schema))
        except (ValueError, KeyError, TypeError) as e:
            skipped += 1
            logger.debug('Skipping malformed line %d: %s', line_no, e)

    if skipped:
        logger.warning('Warning: skipped %d of %d malformed tweet records', skipped, total)
    if total and skipped / total > MAX_MALFORMED_SHARE:
        raise SchemaError(
            f'{skipped} of {total} records are malformed; check the field mapping',
            skipped=skipped, total=total, schema=schema or DEFAULT_SCHEMA,
        )
    return IngestResult(tweets=tweets, skipped=skipped, total_lines=total)


def filter_by_query(tweets: Iterable[RawTweet], excluded: Iterable[str]) -> List[RawTweet]:
    """Drop tweets whose query tag is excluded (case-insensitive)"""
    blocked = {tag.strip().lower() for tag in excluded if tag and tag.strip()}
    return [t for t in tweets if t.query_tag.strip().lower() not in blocked]


# ---------------------------------------------------------------------------
# Text normalization
# ---------------------------------------------------------------------------

def load_stopwords(path: Optional[Union[str, Path]] = None) -> Set[str]:
    """Read one stopword per line; blank lines and '#' comments are ignored"""
    stop_path = Path(path) if path else DEFAULT_STOPWORDS_PATH
    try:
        with open(stop_path, 'r', encoding='utf-8') as f:
            return {
                line.strip().lower() for line in f
                if line.strip() and not line.lstrip().startswith('#')
            }
    except OSError as e:
        raise IngestError(f'Could not read stopword list {stop_path}: {e}', path=str(stop_path))


@lru_cache(maxsize=200_000)
def stem(token: str) -> str:
    """Porter rules repeated until the token is a fixpoint, so stemming a stem is a no-op"""
    current = token
    for _ in range(MAX_STEM_PASSES):
        stemmed = _stemmer.stem(current)
        if stemmed == current:
            break
        current = stemmed
    return current


def tokenize(text: str, stopwords: Set[str]) -> List[str]:
    """Normalization pipeline up to (not including) stemming"""
    text = unicodedata.normalize('NFC', text).lower()
    text = URL_RE.sub(' ', text)
    text = MENTION_RE.sub(' ', text)
    text = HASHTAG_RE.sub(r'\1', text)
    text = APOSTROPHE_RE.sub('', text)
    text = NON_LETTER_RE.sub(' ', text)
    return [tok for tok in text.split() if len(tok) >= 2 and tok not in stopwords]


def preprocess(text: str, stopwords: Set[str], stemmed: bool = True) -> List[str]:
    """
    Turn raw tweet text into normalized tokens.

    Lowercase, strip URLs, mentions and the leading '#' of hashtags, strip punctuation
    and digits, split on whitespace, drop stopwords and one-letter tokens, then apply
    the Porter suffix rules (skipped when stemmed=False, as the sentiment scorer needs
    surface forms). Stems that land on a stopword or a single letter are dropped too,
    which keeps preprocess(" ".join(preprocess(text))) == preprocess(text).
    """
    tokens = tokenize(text, stopwords)
    if stemmed:
        tokens = [s for s in map(stem, tokens) if len(s) >= 2 and s not in stopwords]
    return tokens


def tokenize_tweets(
    tweets: Sequence[RawTweet],
    stopwords: Set[str],
    stemmed: bool = True
) -> List[TokenizedDoc]:
    return [TokenizedDoc(t.id, tuple(preprocess(t.text, stopwords, stemmed))) for t in tweets]


# ---------------------------------------------------------------------------
# Vocabulary and matrix
# ---------------------------------------------------------------------------

def build_vocabulary(
    docs: Sequence[TokenizedDoc],
    min_occurrence: int = 10,
    max_features: int = 5000
) -> Vocabulary:
    """
    Keep terms whose total corpus frequency reaches min_occurrence, capped at
    max_features by descending frequency with lexicographic tie-break.

    Raises:
        EmptyVocabularyError: no docs, or no term reaches the threshold
    """
    if not docs:
        raise EmptyVocabularyError('Cannot build a vocabulary from zero documents')
    if max_features < 1:
        raise EmptyVocabularyError('max_features must be at least 1', max_features=max_features)

    frequency = Counter()
    for doc in docs:
        frequency.update(doc.tokens)

    survivors = [(term, n) for term, n in frequency.items() if n >= min_occurrence]
    if not survivors:
        raise EmptyVocabularyError(
            f'No term occurs at least {min_occurrence} times; corpus too small for the '
            f'configured thresholds',
            min_occurrence=min_occurrence, distinct_terms=len(frequency),
        )
    survivors.sort(key=lambda item: (-item[1], item[0]))
    kept = survivors[:max_features]
    logger.info('Vocabulary: %d of %d distinct terms kept', len(kept), len(frequency))
    return Vocabulary(
        terms=tuple(term for term, _ in kept),
        corpus_frequency={term: n for term, n in kept},
    )


def vectorize(docs: Sequence[TokenizedDoc], vocab: Vocabulary) -> DocTermMatrix:
    """Count in-vocabulary tokens per document; out-of-vocabulary tokens are ignored"""
    if len(vocab) == 0:
        raise EmptyVocabularyError('Cannot vectorize against an empty vocabulary')

    rows: List[int] = []
    cols: List[int] = []
    for row, doc in enumerate(docs):
        for token in doc.tokens:
            col = vocab.index.get(token)
            if col is not None:
                rows.append(row)
                cols.append(col)

    data = np.ones(len(rows), dtype=np.int64)
    counts = sp.coo_matrix(
        (data, (np.asarray(rows, dtype=np.int64), np.asarray(cols, dtype=np.int64))),
        shape=(len(docs), len(vocab)),
        dtype=np.int64,
    ).tocsr()
    counts.sum_duplicates()
    counts.eliminate_zeros()
    return DocTermMatrix(counts=counts, doc_ids=[doc.tweet_id for doc in docs])


def vocabulary_frame(vocab: Vocabulary) -> pd.DataFrame:
    return pd.DataFrame(
        {'term': list(vocab.terms), 'frequency': [vocab.corpus_frequency[t] for t in vocab.terms]}
    )


def vocabulary_from_frame(frame: pd.DataFrame) -> Vocabulary:
    terms = tuple(str(t) for t in frame['term'])
    return Vocabulary(
        terms=terms,
        corpus_frequency={t: int(n) for t, n in zip(terms, frame['frequency'])},
    )
