import json

import pytest

from services.config_service import PipelineConfig, load_config
from services.errors import ConfigurationError


@pytest.fixture
def config_file(tmp_path):
    def write(document):
        path = tmp_path / 'config.json'
        path.write_text(json.dumps(document), encoding='utf-8')
        return str(path)
    return write


class TestLoadConfig:
    def test_defaults(self):
        config = load_config(environ={})
        assert config == PipelineConfig()
        assert config.lda.n_topics == 3
        assert config.sarimax.order['s'] == 24
        assert config.ingest.exclude_query == ['Climate Change']

    def test_precedence(self, config_file):
        environ = {'TWEETCAST_SEED': '7', 'TWEETCAST_LOG_LEVEL': 'debug'}
        path = config_file({'seed': 8, 'lda': {'n_topics': 4}})
        config = load_config(path, overrides={'lda': {'n_topics': 5}}, environ=environ)
        assert config.seed == 8
        assert config.lda.n_topics == 5
        assert config.log_level == 'DEBUG'

    def test_environment_layer(self):
        config = load_config(environ={
            'TWEETCAST_OUTPUT_DIR': '/tmp/run',
            'TWEETCAST_EXCLUDE_QUERY': 'Climate Change, Hurricane',
        })
        assert config.paths.output_dir == '/tmp/run'
        assert config.ingest.exclude_query == ['Climate Change', 'Hurricane']

    def test_empty_exclusion_list(self):
        assert load_config(environ={'TWEETCAST_EXCLUDE_QUERY': ''}).ingest.exclude_query == []

    def test_nested_dicts_merge(self, config_file):
        config = load_config(config_file({'sarimax': {'order': {'p': 2}}}), environ={})
        assert config.sarimax.order['p'] == 2
        assert config.sarimax.order['P'] == 1

    @pytest.mark.parametrize('document', [
        {'bogus': 1},
        {'lda': {'topics': 3}},
        {'lda': 3},
    ])
    def test_unknown_keys(self, config_file, document):
        with pytest.raises(ConfigurationError):
            load_config(config_file(document), environ={})

    @pytest.mark.parametrize('overrides', [
        {'timegrid': {'interval_minutes': 7}},
        {'lda': {'burn_in': 1000}},
        {'lda': {'k_se_band': -0.5}},
        {'tsne': {'perplexity': 1.0}},
        {'sarimax': {'split_ratio': 1.0}},
        {'sarimax': {'order': {'r': 1}}},
        {'log_level': 'LOUD'},
        {'paths': {'tweets': '/nonexistent/tweets.jsonl'}},
    ])
    def test_validation(self, overrides):
        with pytest.raises(ConfigurationError):
            load_config(overrides=overrides, environ={})

    def test_bad_seed(self):
        with pytest.raises(ConfigurationError):
            load_config(environ={'TWEETCAST_SEED': 'twenty'})

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigurationError):
            load_config(str(tmp_path / 'nope.json'), environ={})

    def test_invalid_json(self, tmp_path):
        path = tmp_path / 'bad.json'
        path.write_text('{', encoding='utf-8')
        with pytest.raises(ConfigurationError):
            load_config(str(path), environ={})

    def test_to_dict(self):
        assert load_config(environ={}).to_dict()['tsne']['perplexity'] == 30.0
