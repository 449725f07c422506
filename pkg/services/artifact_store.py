"""
Artifact Store
Atomic file writes, content hashing, the run manifest and the output-directory lock
"""

import hashlib
import json
import logging
import os
import platform
import tempfile
import time
from contextlib import contextmanager
from importlib import metadata
from pathlib import Path
from typing import Any, Dict, Iterable, Iterator, List, Optional, Union

import pandas as pd

from services.errors import LockError, MissingStageError

logger = logging.getLogger(__name__)

MANIFEST_NAME = 'manifest.json'
LOCK_NAME = '.tweetcast.lock'
FLOAT_FORMAT = '%.17g'
TRACKED_PACKAGES = ('numpy', 'pandas', 'scipy', 'numba', 'nltk', 'flask')

PathLike = Union[str, Path]

# File each stage writes, and the stage (command) that produces it
STAGE_OUTPUTS: Dict[str, List[str]] = {
    'ingest': ['tweets.jsonl', 'query_counts.csv', 'spatial_summary.json'],
    'score': ['sentiment.csv'],
    'resample': ['buckets.csv', 'bucket_tokens.txt', 'features.csv', 'correlation.csv'],
    'events': ['events.csv', 'event_terms.csv', 'features_clean.csv'],
    'topics': ['vocabulary.csv', 'lda_model.json', 'topic_keywords.csv', 'topic_series.csv',
               'topic_selection.csv', 'bucket_theta.csv'],
    'embed': ['embedding_buckets.csv', 'embedding_topics.csv', 'embedding_kl.csv',
              'embedding_params.json'],
    'decompose': ['decomposition_buckets.csv', 'decomposition_price.csv'],
    'forecast': ['sarimax_fit.json', 'sarimax_grid.csv', 'predictions.csv', 'forecast.csv'],
    'evaluate': ['evaluation.json', 'evaluation_predictions.csv'],
    'report': ['report_topic_counts.csv', 'report_query_counts.csv', 'report_boxplots.csv',
               'report_histograms.csv', 'report_topic_sentiment.csv',
               'report_topic_price_correlation.csv', 'report_prediction.csv',
               'diagnostics_residuals.csv', 'diagnostics_histogram.csv', 'diagnostics_qq.csv',
               'diagnostics_acf.csv', 'diagnostics_summary.csv'],
}
PRODUCER = {name: stage for stage, names in STAGE_OUTPUTS.items() for name in names}


def sha256_file(path: PathLike) -> str:
    digest = hashlib.sha256()
    with open(path, 'rb') as f:
        for chunk in iter(lambda: f.read(65536), b''):
            digest.update(chunk)
    return digest.hexdigest()


def write_atomic(path: PathLike, data: Union[str, bytes]) -> Path:
    """Write to a temp file in the target directory, then rename over the target"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = data.encode('utf-8') if isinstance(data, str) else data
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f'.{path.name}.', suffix='.tmp')
    try:
        with os.fdopen(fd, 'wb') as f:
            f.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def write_csv(frame: pd.DataFrame, path: PathLike, index: bool = False) -> Path:
    text = frame.to_csv(index=index, float_format=FLOAT_FORMAT, lineterminator='\n')
    return write_atomic(path, text)


def dumps(payload: Any) -> str:
    return json.dumps(payload, indent=2, sort_keys=True, default=str) + '\n'


def write_json(payload: Any, path: PathLike) -> Path:
    return write_atomic(path, dumps(payload))


def read_json(path: PathLike) -> Any:
    with open(path, 'r', encoding='utf-8') as f:
        return json.load(f)


def package_versions() -> Dict[str, str]:
    versions = {'python': platform.python_version()}
    for name in TRACKED_PACKAGES:
        try:
            versions[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            versions[name] = 'missing'
    return versions


class ArtifactStore:
    """One output directory: stage files plus manifest.json"""

    def __init__(self, output_dir: PathLike):
        self.root = Path(output_dir)

    def path(self, name: str) -> Path:
        return self.root / name

    def exists(self, name: str) -> bool:
        return self.path(name).is_file()

    def require(self, names: Iterable[str]) -> List[Path]:
        """
        Paths of upstream outputs.

        Raises:
            MissingStageError: naming the missing files and the commands that produce them
        """
        names = list(names)
        missing = [n for n in names if not self.exists(n)]
        if missing:
            commands = sorted({PRODUCER.get(n, 'unknown') for n in missing})
            raise MissingStageError(
                f'Missing inputs {", ".join(missing)}; run first: {", ".join(commands)}',
                missing=missing, commands=commands,
            )
        return [self.path(n) for n in names]

    def write_csv(self, frame: pd.DataFrame, name: str, index: bool = False) -> Path:
        return write_csv(frame, self.path(name), index=index)

    def write_json(self, payload: Any, name: str) -> Path:
        return write_json(payload, self.path(name))

    def write_text(self, text: str, name: str) -> Path:
        return write_atomic(self.path(name), text)

    def read_json(self, name: str) -> Any:
        return read_json(self.path(name))

    def read_csv(self, name: str, **kwargs) -> pd.DataFrame:
        return pd.read_csv(self.path(name), **kwargs)

    # manifest -----------------------------------------------------------------

    def load_manifest(self) -> Dict[str, Any]:
        if self.exists(MANIFEST_NAME):
            return self.read_json(MANIFEST_NAME)
        return {'config': {}, 'stages': {}, 'files': {}, 'versions': package_versions()}

    def listed_files(self) -> List[str]:
        return sorted(
            p.name for p in self.root.iterdir()
            if p.is_file() and p.name != MANIFEST_NAME and not p.name.startswith('.')
        ) if self.root.is_dir() else []

    def record_stage(self, stage: str, inputs: Iterable[PathLike], outputs: Iterable[PathLike],
                     seconds: float, config: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
        """
        Add one stage to the manifest and re-hash every file in the directory.

        Files the stage owns but did not write this time are left over from an earlier
        run with other settings; they are deleted so the manifest only lists current output.
        """
        outputs = [Path(p) for p in outputs]
        written = {p.name for p in outputs}
        for name in STAGE_OUTPUTS.get(stage, []):
            if name not in written and self.exists(name):
                logger.info('Removing stale %s left by an earlier %s run', name, stage)
                self.path(name).unlink()

        manifest = self.load_manifest()
        if config is not None:
            manifest['config'] = config
        manifest['versions'] = package_versions()
        manifest['stages'][stage] = {
            'inputs': {str(p): sha256_file(p) for p in inputs if Path(p).is_file()},
            'outputs': {p.name: sha256_file(p) for p in outputs},
            'seconds': round(seconds, 3),
        }
        manifest['files'] = {name: sha256_file(self.path(name)) for name in self.listed_files()}
        self.write_json(manifest, MANIFEST_NAME)
        return manifest

    # locking ------------------------------------------------------------------

    @contextmanager
    def lock(self) -> Iterator[Path]:
        """Exclusive writer lock on the output directory"""
        self.root.mkdir(parents=True, exist_ok=True)
        lock_path = self.path(LOCK_NAME)
        try:
            fd = os.open(lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            holder = lock_path.read_text(encoding='utf-8').strip() if lock_path.exists() else '?'
            raise LockError(f'Output directory {self.root} is locked by pid {holder}',
                            lock=str(lock_path), pid=holder)
        try:
            with os.fdopen(fd, 'w') as f:
                f.write(str(os.getpid()))
            yield lock_path
        finally:
            try:
                os.unlink(lock_path)
            except FileNotFoundError:
                logger.warning('Warning: lock file %s vanished before release', lock_path)


@contextmanager
def timed() -> Iterator[Dict[str, float]]:
    box = {'seconds': 0.0}
    start = time.perf_counter()
    try:
        yield box
    finally:
        box['seconds'] = time.perf_counter() - start
