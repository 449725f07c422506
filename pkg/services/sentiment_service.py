"""
Sentiment Service
Lexicon-based polarity scorer: mean of matched term polarities with a preceding-negator flip
"""

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Set, Union

import pandas as pd

from services.corpus_service import DATA_DIR, RawTweet, preprocess
from services.errors import LexiconError

logger = logging.getLogger(__name__)

DEFAULT_LEXICON_PATH = DATA_DIR / 'lexicon_en.csv'
# "n't" contractions reach the scorer with the apostrophe stripped
CONTRACTED_NEGATORS = frozenset({
    'aint', 'arent', 'cannot', 'cant', 'couldnt', 'didnt', 'doesnt', 'dont', 'hadnt', 'hasnt',
    'havent', 'isnt', 'mightnt', 'mustnt', 'neednt', 'shant', 'shouldnt', 'wasnt', 'werent',
    'wont', 'wouldnt',
})
DEFAULT_NEGATORS = frozenset({'not', 'no', 'never'}) | CONTRACTED_NEGATORS

NEGATOR_SECTION = '[negators]'


@dataclass(frozen=True)
class Lexicon:
    entries: Dict[str, float]
    negators: FrozenSet[str] = DEFAULT_NEGATORS
    negation_window: int = 1
    duplicate_warnings: int = field(default=0, compare=False)

    def __post_init__(self):
        if not self.entries:
            raise LexiconError('Lexicon has no scored terms')
        for term, polarity in self.entries.items():
            if not -1.0 <= polarity <= 1.0:
                raise LexiconError(
                    f'Polarity for {term!r} is outside [-1, 1]: {polarity}', term=term
                )
        overlap = self.negators & set(self.entries)
        if overlap:
            raise LexiconError(
                f'Negators may not also be scored terms: {sorted(overlap)}', terms=sorted(overlap)
            )
        if self.negation_window < 0:
            raise LexiconError('negation_window must be nonnegative')


@dataclass(frozen=True)
class SentimentScore:
    tweet_id: str
    polarity: float
    matched_terms: int


def read_negators(path: Union[str, Path]) -> Set[str]:
    """One negator per line"""
    try:
        with open(path, 'r', encoding='utf-8') as f:
            return {line.strip().lower() for line in f if line.strip()}
    except OSError as e:
        raise LexiconError(f'Could not read negator list {path}: {e}', path=str(path))


def load_lexicon(
    path: Optional[Union[str, Path]] = None,
    negators: Optional[Iterable[str]] = None,
    negation_window: int = 1
) -> Lexicon:
    """
    Load a term,polarity CSV.

    A line reading '[negators]' starts an optional section of one negator per line;
    when present it replaces the default negator set unless `negators` is given
    explicitly. Duplicate terms keep the last entry.

    Raises:
        LexiconError: unreadable file, polarity outside [-1, 1], or no entries
    """
    lexicon_path = Path(path) if path else DEFAULT_LEXICON_PATH
    entries: Dict[str, float] = {}
    section_negators: Set[str] = set()
    duplicates = 0
    in_negators = False

    try:
        with open(lexicon_path, 'r', encoding='utf-8', newline='') as f:
            for line_no, row in enumerate(csv.reader(f), start=1):
                if not row or not row[0].strip() or row[0].lstrip().startswith('#'):
                    continue
                head = row[0].strip()
                if head.lower() == NEGATOR_SECTION:
                    in_negators = True
                    continue
                if in_negators:
                    section_negators.add(head.lower())
                    continue
                if line_no == 1 and head.lower() == 'term':
                    continue
                if len(row) < 2:
                    raise LexiconError(
                        f'{lexicon_path}:{line_no}: expected term,polarity', line=line_no
                    )
                try:
                    polarity = float(row[1])
                except ValueError:
                    raise LexiconError(
                        f'{lexicon_path}:{line_no}: polarity is not a number: {row[1]!r}',
                        line=line_no,
                    )
                if not -1.0 <= polarity <= 1.0:
                    raise LexiconError(
                        f'{lexicon_path}:{line_no}: polarity {polarity} outside [-1, 1]',
                        line=line_no, term=head,
                    )
                term = head.lower()
                if term in entries:
                    duplicates += 1
                entries[term] = polarity
    except OSError as e:
        raise LexiconError(f'Could not read lexicon {lexicon_path}: {e}', path=str(lexicon_path))

    if duplicates:
        logger.warning('Warning: %d duplicate lexicon terms in %s (last entry wins)',
                       duplicates, lexicon_path)
    if not entries:
        raise LexiconError(f'Lexicon {lexicon_path} is empty', path=str(lexicon_path))

    if negators is not None:
        chosen = frozenset(n.lower() for n in negators)
    elif section_negators:
        chosen = frozenset(section_negators)
    else:
        chosen = DEFAULT_NEGATORS
    return Lexicon(
        entries=entries,
        negators=chosen,
        negation_window=negation_window,
        duplicate_warnings=duplicates,
    )


def score(tokens: Sequence[str], lexicon: Lexicon, tweet_id: str = '') -> SentimentScore:
    """
    Mean of matched term polarities. A matched term with a negator among the
    negation_window tokens before it contributes the opposite polarity.
    """
    contributions: List[float] = []
    window = lexicon.negation_window
    for i, token in enumerate(tokens):
        polarity = lexicon.entries.get(token)
        if polarity is None:
            continue
        preceding = tokens[max(0, i - window):i]
        if any(prev in lexicon.negators for prev in preceding):
            polarity = -polarity
        contributions.append(polarity)

    if not contributions:
        return SentimentScore(tweet_id=tweet_id, polarity=0.0, matched_terms=0)
    mean = sum(contributions) / len(contributions)
    # guard the [-1, 1] bound against accumulated rounding
    mean = max(-1.0, min(1.0, mean))
    return SentimentScore(tweet_id=tweet_id, polarity=mean, matched_terms=len(contributions))


def score_tweets(
    tweets: Sequence[RawTweet],
    lexicon: Lexicon,
    stopwords: Set[str]
) -> List[SentimentScore]:
    """Score every tweet on unstemmed tokens; negators are never treated as stopwords"""
    keep_stop = set(stopwords) - set(lexicon.negators)
    return [score(preprocess(t.text, keep_stop, stemmed=False), lexicon, t.id) for t in tweets]


def scores_frame(scores: Iterable[SentimentScore]) -> pd.DataFrame:
    return pd.DataFrame(
        [(s.tweet_id, s.polarity, s.matched_terms) for s in scores],
        columns=['tweet_id', 'polarity', 'matched_terms'],
    )


def scores_from_frame(frame: pd.DataFrame) -> Dict[str, float]:
    return {str(tid): float(p) for tid, p in zip(frame['tweet_id'], frame['polarity'])}
