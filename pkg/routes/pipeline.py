"""
Pipeline CLI Commands
One click command per stage, registered on the Flask CLI as `flask pipeline <command>`
and exposed directly as the `tweetcast` console script
"""

import json
import logging
import sys
from typing import Any, Dict, Optional

import click
from flask.cli import AppGroup

from services.config_service import load_config
from services.errors import EXIT_USAGE, PipelineError
from services.pipeline_service import run_all, run_stage

logger = logging.getLogger(__name__)

OPTIONS_KEY = 'tweetcast.options'
LOG_FORMAT = '%(asctime)s %(levelname)s %(name)s: %(message)s'


class PipelineGroup(AppGroup):
    """AppGroup whose usage errors exit with code 1 like every other bad invocation"""

    def make_context(self, info_name, args, parent=None, **extra):
        try:
            return super().make_context(info_name, args, parent=parent, **extra)
        except click.UsageError as e:
            e.exit_code = EXIT_USAGE
            raise

    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except click.UsageError as e:
            e.exit_code = EXIT_USAGE
            raise


@click.group('pipeline', cls=PipelineGroup)
@click.option('--config', 'config_path', type=click.Path(dir_okay=False),
              help='JSON configuration document')
@click.option('--seed', type=int, help='Global seed (default 20)')
@click.option('--output-dir', type=click.Path(file_okay=False), help='Artifact directory')
@click.option('--exclude-query', multiple=True,
              help='Query tag to drop at ingest; repeatable (default "Climate Change")')
@click.option('--log-level', type=click.Choice(['DEBUG', 'INFO', 'WARNING', 'ERROR'],
                                               case_sensitive=False))
@click.option('--error-json', is_flag=True, help='Print failures as JSON on stderr')
@click.pass_context
def pipeline_cli(ctx, config_path, seed, output_dir, exclude_query, log_level, error_json):
    """Tweet topics, sentiment and price forecasting pipeline"""
    ctx.meta[OPTIONS_KEY] = {
        'config_path': config_path,
        'seed': seed,
        'output_dir': output_dir,
        'exclude_query': list(exclude_query) or None,
        'log_level': log_level,
        'error_json': error_json,
    }


def _global_overrides(options: Dict[str, Any]) -> Dict[str, Any]:
    overrides: Dict[str, Any] = {}
    if options['seed'] is not None:
        overrides['seed'] = options['seed']
    if options['log_level']:
        overrides['log_level'] = options['log_level'].upper()
    if options['output_dir']:
        overrides['paths'] = {'output_dir': options['output_dir']}
    if options['exclude_query'] is not None:
        overrides['ingest'] = {'exclude_query': options['exclude_query']}
    return overrides


def _deep_merge(base: Dict[str, Any], extra: Dict[str, Any]) -> Dict[str, Any]:
    merged = dict(base)
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def configure_logging(level: str) -> None:
    logging.basicConfig(level=level, format=LOG_FORMAT)
    logging.getLogger().setLevel(level)


def _execute(stage: Optional[str], stage_overrides: Dict[str, Any]) -> None:
    ctx = click.get_current_context()
    options = ctx.meta[OPTIONS_KEY]
    try:
        config = load_config(options['config_path'],
                             _deep_merge(_global_overrides(options), stage_overrides))
        configure_logging(config.log_level)
        if stage is None:
            written = sum(len(paths) for paths in run_all(config).values())
            label = 'pipeline'
        else:
            written = len(run_stage(stage, config))
            label = stage
    except PipelineError as e:
        if options['error_json']:
            click.echo(json.dumps(e.to_dict(), sort_keys=True), err=True)
        else:
            click.echo(f'Error: {e.message}', err=True)
        ctx.exit(e.exit_code)
        return
    click.echo(f'{label}: wrote {written} files to {config.paths.output_dir}')


def _prune(values: Dict[str, Any]) -> Dict[str, Any]:
    """Nested overrides without the flags left unset"""
    pruned = {}
    for key, value in values.items():
        if isinstance(value, dict):
            value = _prune(value)
            if value:
                pruned[key] = value
        elif value is not None:
            pruned[key] = value
    return pruned


@pipeline_cli.command('ingest', with_appcontext=False)
@click.option('--tweets', type=click.Path(dir_okay=False), help='Line-delimited JSON tweets')
def cmd_ingest(tweets):
    """Read, validate and filter the tweet stream"""
    _execute('ingest', _prune({'paths': {'tweets': tweets}}))


@pipeline_cli.command('score', with_appcontext=False)
@click.option('--lexicon', type=click.Path(dir_okay=False), help='term,polarity CSV')
@click.option('--negators', type=click.Path(dir_okay=False), help='One negator per line')
def cmd_score(lexicon, negators):
    """Lexicon polarity for every tweet"""
    _execute('score', _prune({'paths': {'lexicon': lexicon, 'negators': negators}}))


@pipeline_cli.command('resample', with_appcontext=False)
@click.option('--interval', 'interval_minutes', type=int, help='Bucket width in minutes')
def cmd_resample(interval_minutes):
    """Aggregate tweets into fixed time buckets"""
    _execute('resample', _prune({'timegrid': {'interval_minutes': interval_minutes}}))


@pipeline_cli.command('events', with_appcontext=False)
@click.option('--threshold', 'spike_threshold', type=float, help='Robust z-score cut-off')
def cmd_events(spike_threshold):
    """Flag tweet-volume spikes and remove them from the features"""
    _execute('events', _prune({'timegrid': {'spike_threshold': spike_threshold}}))


@pipeline_cli.command('topics', with_appcontext=False)
@click.option('--topics', 'n_topics', type=int, help='Number of topics K')
@click.option('--iterations', type=int, help='Gibbs sweeps')
@click.option('--burn-in', type=int, help='Sweeps discarded before the estimate')
@click.option('--select-k/--no-select-k', default=None, help='Pick K by held-out perplexity')
@click.option('--per-tweet/--per-bucket', default=None, help='Document unit for LDA')
@click.option('--debug-counts/--no-debug-counts', 'debug', default=None,
              help='Check sampler count invariants every sweep')
def cmd_topics(n_topics, iterations, burn_in, select_k, per_tweet, debug):
    """Fit LDA and label every bucket with its dominant topic"""
    _execute('topics', _prune({
        'lda': {'n_topics': n_topics, 'iterations': iterations, 'burn_in': burn_in,
                'select_k': select_k, 'debug': debug},
        'vectorizer': {'per_tweet': per_tweet},
    }))


@pipeline_cli.command('embed', with_appcontext=False)
@click.option('--perplexity', type=float, help='t-SNE perplexity')
@click.option('--iterations', type=int, help='t-SNE iterations')
def cmd_embed(perplexity, iterations):
    """2-D t-SNE layout of bucket topic mixtures and topics"""
    _execute('embed', _prune({'tsne': {'perplexity': perplexity, 'iterations': iterations}}))


@pipeline_cli.command('decompose', with_appcontext=False)
@click.option('--bucket-period', type=int, help='Season length in buckets')
@click.option('--price-period', type=int, help='Season length in price observations')
@click.option('--price', type=click.Path(dir_okay=False), help='Price CSV')
def cmd_decompose(bucket_period, price_period, price):
    """Trend, seasonal and residual components"""
    _execute('decompose', _prune({
        'decompose': {'bucket_period': bucket_period, 'price_period': price_period},
        'paths': {'price': price},
    }))


@pipeline_cli.command('forecast', with_appcontext=False)
@click.option('--price', type=click.Path(dir_okay=False), help='Price CSV')
@click.option('--order', help='p,d,q,P,D,Q,s')
@click.option('--grid/--no-grid', default=None, help='AIC grid search over p, q, P, Q')
@click.option('--horizon', type=int, help='Steps to forecast past the last price')
def cmd_forecast(price, order, grid, horizon):
    """Fit SARIMAX and produce one-step and multi-step predictions"""
    parsed = None
    if order:
        try:
            values = [int(v) for v in order.split(',')]
        except ValueError:
            raise click.BadParameter('expected seven integers', param_hint='--order')
        if len(values) != 7:
            raise click.BadParameter('expected seven integers', param_hint='--order')
        parsed = dict(zip(('p', 'd', 'q', 'P', 'D', 'Q', 's'), values))
    _execute('forecast', _prune({
        'paths': {'price': price},
        'sarimax': {'order': parsed, 'grid': grid, 'horizon': horizon},
    }))


@pipeline_cli.command('evaluate', with_appcontext=False)
@click.option('--price', type=click.Path(dir_okay=False), help='Price CSV')
@click.option('--split-ratio', type=float, help='Training share of the series')
def cmd_evaluate(price, split_ratio):
    """Backtest the fitted order with a chronological split"""
    _execute('evaluate', _prune({'paths': {'price': price},
                                 'sarimax': {'split_ratio': split_ratio}}))


@pipeline_cli.command('report', with_appcontext=False)
@click.option('--bins', type=int, help='Histogram bins')
def cmd_report(bins):
    """Plot-ready tables for every figure"""
    _execute('report', _prune({'report': {'bins': bins}}))


@pipeline_cli.command('run', with_appcontext=False)
@click.option('--tweets', type=click.Path(dir_okay=False), help='Line-delimited JSON tweets')
@click.option('--price', type=click.Path(dir_okay=False), help='Price CSV')
def cmd_run(tweets, price):
    """Every stage in order, ingest through report"""
    _execute(None, _prune({'paths': {'tweets': tweets, 'price': price}}))


def main(argv=None) -> int:
    """Console entry point: same commands as `flask pipeline`"""
    try:
        result = pipeline_cli.main(args=argv, prog_name='tweetcast', standalone_mode=False)
    except click.exceptions.Exit as e:
        return e.exit_code
    except click.ClickException as e:
        e.show()
        return EXIT_USAGE if isinstance(e, click.UsageError) else e.exit_code
    except click.exceptions.Abort:
        click.echo('Aborted!', err=True)
        return EXIT_USAGE
    # without standalone mode click returns the exit code of ctx.exit
    return result if isinstance(result, int) else 0


if __name__ == '__main__':
    sys.exit(main())
