"""
Config Service
Pipeline configuration: built-in defaults, TWEETCAST_* environment variables (a .env
file is honoured), a JSON config document and command-line overrides, in that order
"""

import json
import logging
import os
from dataclasses import asdict, dataclass, field, fields, is_dataclass, replace
from pathlib import Path
from typing import Any, Dict, List, Optional

from dotenv import load_dotenv

from services.errors import ConfigurationError

logger = logging.getLogger(__name__)

ENV_PREFIX = 'TWEETCAST_'
DEFAULT_OUTPUT_DIR = 'output'
DEFAULT_EXCLUDED_QUERY = 'Climate Change'
LOG_LEVELS = ('DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL')


@dataclass
class PathsConfig:
    tweets: Optional[str] = None
    price: Optional[str] = None
    lexicon: Optional[str] = None       # None -> shipped lexicon
    stopwords: Optional[str] = None     # None -> shipped list
    negators: Optional[str] = None
    output_dir: str = DEFAULT_OUTPUT_DIR


@dataclass
class IngestConfig:
    schema: Dict[str, str] = field(default_factory=dict)
    exclude_query: List[str] = field(default_factory=lambda: [DEFAULT_EXCLUDED_QUERY])


@dataclass
class TimegridConfig:
    interval_minutes: int = 5
    spike_threshold: float = 5.0
    top_terms: int = 10


@dataclass
class VectorizerConfig:
    min_occurrence: int = 10
    max_features: int = 5000
    per_tweet: bool = False    # documents are buckets unless set


@dataclass
class LdaSection:
    n_topics: int = 3
    alpha: Optional[float] = None
    beta: float = 0.01
    iterations: int = 1000
    burn_in: int = 800
    select_k: bool = False
    k_min: int = 3
    k_max: int = 8
    k_se_band: float = 1.0      # log-perplexity standard errors counted as a tie
    top_words: int = 10
    workers: int = 1
    debug: bool = False


@dataclass
class TsneConfig:
    perplexity: float = 30.0
    iterations: int = 1000
    learning_rate: float = 200.0
    hellinger: bool = True


@dataclass
class DecomposeConfig:
    bucket_period: int = 288
    price_period: int = 24


@dataclass
class SarimaxConfig:
    time_column: str = 'time'
    price_column: str = 'price'
    exog: List[str] = field(default_factory=lambda: ['sentiment_per_tweet', 'tweet_count'])
    order: Dict[str, int] = field(
        default_factory=lambda: {'p': 1, 'd': 0, 'q': 0, 'P': 1, 'D': 0, 'Q': 0, 's': 24}
    )
    grid: bool = False
    p_max: int = 2
    q_max: int = 2
    P_max: int = 2
    Q_max: int = 2
    horizon: int = 0
    split_ratio: float = 0.7
    workers: int = 1


@dataclass
class ReportConfig:
    bins: int = 20


@dataclass
class PipelineConfig:
    paths: PathsConfig = field(default_factory=PathsConfig)
    ingest: IngestConfig = field(default_factory=IngestConfig)
    timegrid: TimegridConfig = field(default_factory=TimegridConfig)
    vectorizer: VectorizerConfig = field(default_factory=VectorizerConfig)
    lda: LdaSection = field(default_factory=LdaSection)
    tsne: TsneConfig = field(default_factory=TsneConfig)
    decompose: DecomposeConfig = field(default_factory=DecomposeConfig)
    sarimax: SarimaxConfig = field(default_factory=SarimaxConfig)
    report: ReportConfig = field(default_factory=ReportConfig)
    seed: int = 20
    log_level: str = 'INFO'

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def validate(self) -> 'PipelineConfig':
        """Range checks per section; referenced input files must exist"""
        checks = [
            (self.timegrid.interval_minutes >= 1, 'timegrid.interval_minutes must be >= 1'),
            (60 % self.timegrid.interval_minutes == 0,
             'timegrid.interval_minutes must divide an hour'),
            (self.timegrid.spike_threshold > 0, 'timegrid.spike_threshold must be positive'),
            (self.vectorizer.min_occurrence >= 1, 'vectorizer.min_occurrence must be >= 1'),
            (self.vectorizer.max_features >= 1, 'vectorizer.max_features must be >= 1'),
            (self.lda.n_topics >= 1, 'lda.n_topics must be >= 1'),
            (self.lda.alpha is None or self.lda.alpha > 0, 'lda.alpha must be positive'),
            (self.lda.beta > 0, 'lda.beta must be positive'),
            (0 <= self.lda.burn_in < self.lda.iterations, 'lda.burn_in must be below iterations'),
            (1 <= self.lda.k_min <= self.lda.k_max, 'lda.k_min must be in 1..k_max'),
            (self.lda.k_se_band >= 0, 'lda.k_se_band must be non-negative'),
            (self.tsne.perplexity > 1, 'tsne.perplexity must exceed 1'),
            (self.tsne.iterations >= 1, 'tsne.iterations must be >= 1'),
            (self.tsne.learning_rate > 0, 'tsne.learning_rate must be positive'),
            (self.decompose.bucket_period >= 2, 'decompose.bucket_period must be >= 2'),
            (self.decompose.price_period >= 2, 'decompose.price_period must be >= 2'),
            (0 < self.sarimax.split_ratio < 1, 'sarimax.split_ratio must be in (0, 1)'),
            (self.sarimax.horizon >= 0, 'sarimax.horizon must be >= 0'),
            (min(self.sarimax.p_max, self.sarimax.q_max, self.sarimax.P_max,
                 self.sarimax.Q_max) >= 0, 'sarimax grid bounds must be >= 0'),
            (self.report.bins >= 1, 'report.bins must be >= 1'),
            (self.log_level.upper() in LOG_LEVELS, f'log_level must be one of {LOG_LEVELS}'),
        ]
        for ok, message in checks:
            if not ok:
                raise ConfigurationError(message)
        unknown = set(self.sarimax.order) - {'p', 'd', 'q', 'P', 'D', 'Q', 's'}
        if unknown:
            raise ConfigurationError(f'Unknown sarimax.order keys: {", ".join(sorted(unknown))}')
        for name in ('tweets', 'price', 'lexicon', 'stopwords', 'negators'):
            value = getattr(self.paths, name)
            if value is not None and not Path(value).is_file():
                raise ConfigurationError(f'paths.{name} does not exist: {value}', path=value)
        return self


def _merge(target: Any, data: Dict[str, Any], where: str = '') -> Any:
    """Dataclass copy with values from data; unknown keys are errors"""
    if not isinstance(data, dict):
        raise ConfigurationError(f'Section {where or "<root>"} must be an object')
    known = {f.name: f for f in fields(target)}
    updates = {}
    for key, value in data.items():
        dotted = f'{where}.{key}' if where else key
        if key not in known:
            raise ConfigurationError(f'Unknown configuration key: {dotted}', key=dotted)
        current = getattr(target, key)
        if is_dataclass(current):
            value = _merge(current, value, dotted)
        elif isinstance(current, dict) and isinstance(value, dict):
            value = {**current, **value}
        updates[key] = value
    return replace(target, **updates)


def _env_layer(environ: Dict[str, str]) -> Dict[str, Any]:
    layer: Dict[str, Any] = {}
    get = environ.get
    if get(f'{ENV_PREFIX}SEED'):
        try:
            layer['seed'] = int(get(f'{ENV_PREFIX}SEED'))
        except ValueError:
            raise ConfigurationError(f'{ENV_PREFIX}SEED must be an integer')
    if get(f'{ENV_PREFIX}LOG_LEVEL'):
        layer['log_level'] = get(f'{ENV_PREFIX}LOG_LEVEL').upper()
    if get(f'{ENV_PREFIX}OUTPUT_DIR'):
        layer.setdefault('paths', {})['output_dir'] = get(f'{ENV_PREFIX}OUTPUT_DIR')
    if get(f'{ENV_PREFIX}EXCLUDE_QUERY') is not None:
        tags = [t.strip() for t in get(f'{ENV_PREFIX}EXCLUDE_QUERY').split(',') if t.strip()]
        layer.setdefault('ingest', {})['exclude_query'] = tags
    return layer


def load_config(
    path: Optional[str] = None,
    overrides: Optional[Dict[str, Any]] = None,
    environ: Optional[Dict[str, str]] = None,
    use_dotenv: bool = True
) -> PipelineConfig:
    """
    Build the effective configuration: defaults < environment < JSON file < overrides.

    Raises:
        ConfigurationError: unreadable file, unknown keys, or values out of range
    """
    if environ is None:
        if use_dotenv:
            load_dotenv()
        environ = dict(os.environ)

    config = _merge(PipelineConfig(), _env_layer(environ))
    if path:
        try:
            with open(path, 'r', encoding='utf-8') as f:
                document = json.load(f)
        except FileNotFoundError:
            raise ConfigurationError(f'Config file not found: {path}', path=path)
        except json.JSONDecodeError as e:
            raise ConfigurationError(f'Config file is not valid JSON: {e}', path=path)
        config = _merge(config, document)
    if overrides:
        config = _merge(config, overrides)
    config.log_level = config.log_level.upper()
    logger.debug('Effective configuration: %s', config.to_dict())
    return config.validate()
