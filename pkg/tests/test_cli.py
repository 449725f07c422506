import json

import pytest
from click.testing import CliRunner

from routes.pipeline import main, pipeline_cli
from services.artifact_store import MANIFEST_NAME


@pytest.fixture(autouse=True)
def clean_environment(monkeypatch):
    for name in ('TWEETCAST_SEED', 'TWEETCAST_LOG_LEVEL', 'TWEETCAST_OUTPUT_DIR',
                 'TWEETCAST_EXCLUDE_QUERY'):
        monkeypatch.delenv(name, raising=False)


def _invoke(*args):
    return CliRunner().invoke(pipeline_cli, list(args))


class TestStages:
    def test_ingest_score_resample(self, output_dir, tweets_file):
        out = str(output_dir)
        result = _invoke('--output-dir', out, 'ingest', '--tweets', str(tweets_file))
        assert result.exit_code == 0, result.output
        assert 'ingest: wrote 3 files' in result.output
        summary = json.loads((output_dir / 'spatial_summary.json').read_text(encoding='utf-8'))
        assert summary['excluded'] == 10
        assert summary['total_lines'] == 100

        assert _invoke('--output-dir', out, 'score').exit_code == 0
        assert _invoke('--output-dir', out, 'resample', '--interval', '5').exit_code == 0
        manifest = json.loads((output_dir / MANIFEST_NAME).read_text(encoding='utf-8'))
        assert set(manifest['stages']) == {'ingest', 'score', 'resample'}
        assert 'features.csv' in manifest['files']
        assert not (output_dir / '.tweetcast.lock').exists()

    def test_exclude_nothing(self, output_dir, tweets_file):
        result = _invoke('--output-dir', str(output_dir), '--exclude-query', '',
                         'ingest', '--tweets', str(tweets_file))
        assert result.exit_code == 0, result.output
        summary = json.loads((output_dir / 'spatial_summary.json').read_text(encoding='utf-8'))
        assert summary['excluded'] == 0

    def test_flask_cli_registration(self, runner, output_dir, tweets_file):
        result = runner.invoke(args=['pipeline', '--output-dir', str(output_dir), 'ingest',
                                     '--tweets', str(tweets_file)])
        assert result.exit_code == 0, result.output
        assert (output_dir / 'tweets.jsonl').exists()


class TestFailures:
    def test_missing_upstream_stage(self, output_dir):
        result = _invoke('--output-dir', str(output_dir), 'score')
        assert result.exit_code == 2
        assert 'run first: ingest' in result.output

    def test_error_json(self, output_dir):
        result = _invoke('--output-dir', str(output_dir), '--error-json', 'resample')
        assert result.exit_code == 2
        payload = json.loads(result.output.strip().splitlines()[-1])
        assert payload['error'] == 'MissingStageError'
        assert payload['exit_code'] == 2
        assert payload['details']['commands'] == ['ingest', 'score']

    def test_missing_tweets_path(self, output_dir):
        assert _invoke('--output-dir', str(output_dir), 'ingest').exit_code == 1

    def test_unreadable_config(self, output_dir, tmp_path):
        path = tmp_path / 'config.json'
        path.write_text('{"lda": {"topics": 2}}', encoding='utf-8')
        result = _invoke('--config', str(path), '--output-dir', str(output_dir), 'ingest')
        assert result.exit_code == 1
        assert 'Unknown configuration key: lda.topics' in result.output

    @pytest.mark.parametrize('order', ['1,0,0', 'a,b,c,d,e,f,g'])
    def test_bad_order(self, output_dir, order):
        result = _invoke('--output-dir', str(output_dir), 'forecast', '--order', order)
        assert result.exit_code == 1
        assert 'seven integers' in result.output

    def test_unknown_command(self):
        assert _invoke('plot').exit_code == 1

    def test_forecast_needs_price(self, output_dir, tmp_path):
        config = tmp_path / 'config.json'
        config.write_text('{"sarimax": {"exog": []}}', encoding='utf-8')
        result = _invoke('--config', str(config), '--output-dir', str(output_dir), 'forecast')
        assert result.exit_code == 1
        assert 'paths.price' in result.output


class TestMain:
    def test_returns_stage_exit_code(self, output_dir, capsys):
        assert main(['--output-dir', str(output_dir), 'score']) == 2
        assert 'run first' in capsys.readouterr().err

    def test_usage_error(self, capsys):
        assert main(['forecast', '--order', '1']) == 1

    def test_success(self, output_dir, tweets_file):
        assert main(['--output-dir', str(output_dir), 'ingest', '--tweets', str(tweets_file)]) == 0
