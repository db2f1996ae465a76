import argparse
import json

import pytest

import waitk


def test_run_config_from_namespace() -> None:
    namespace = argparse.Namespace(out='runs/a', k='1,3', seed=5, func=print)
    config = waitk.RunConfig.from_namespace('simulate', namespace)

    assert config.seed == 5
    assert config.options == {'k': '1,3', 'out': 'runs/a'}
    assert config == waitk.RunConfig('simulate', {'out': 'runs/a', 'k': '1,3'}, seed=5)
    assert config != waitk.RunConfig('simulate', {'out': 'runs/a', 'k': '1,3'}, seed=6)


def test_config_hash_is_stable() -> None:
    first = waitk.RunConfig('train', {'steps': 10, 'lr': 0.1})
    second = waitk.RunConfig('train', {'lr': 0.1, 'steps': 10})

    assert first.config_hash() == second.config_hash()
    assert hash(first) == hash(second)
    assert len(first.config_hash()) == 16


def test_enum_and_path_options_are_plain(tmp_path) -> None:
    config = waitk.RunConfig('curve', {'scope': waitk.LatencyScope.segment, 'out': tmp_path})

    assert config.options == {'out': str(tmp_path), 'scope': 'segment'}


def test_write_manifest(tmp_path) -> None:
    config = waitk.RunConfig('train', {'steps': 10}, seed=3)
    path = config.write_manifest(tmp_path / 'run')
    manifest = json.loads(path.read_text(encoding='utf-8'))

    assert manifest['command'] == 'train'
    assert manifest['seed'] == 3
    assert manifest['options'] == {'steps': 10}
    assert manifest['config_hash'] == config.config_hash()
    assert manifest['version'] == waitk.__version__
    assert 'created' in manifest


def test_read_config_file(tmp_path) -> None:
    path = tmp_path / 'train.conf'
    path.write_text('# defaults\nbatch_tokens = 500\n\nsegment=true\n', encoding='utf-8')

    assert waitk.read_config_file(path) == {'batch-tokens': '500', 'segment': 'true'}


def test_read_config_file_errors(tmp_path) -> None:
    path = tmp_path / 'bad.conf'
    path.write_text('no equals sign here\n', encoding='utf-8')

    with pytest.raises(waitk.ConfigError):
        waitk.read_config_file(path)

    with pytest.raises(waitk.ConfigError):
        waitk.read_config_file(tmp_path / 'absent.conf')


def test_merge_config_file_prefers_command_line() -> None:
    merged = waitk.merge_config_file(
        ['simulate', '--k', '3'],
        {'k': '1,3,5', 'workers': '2', 'segment': 'true', 'smooth': 'false'},
    )

    assert merged == ['simulate', '--k', '3', '--workers', '2', '--segment']


def test_merge_config_file_puts_global_flags_first() -> None:
    merged = waitk.merge_config_file(['data', 'synth', '--n', '4'], {'quiet': 'true', 'verbose': 'false', 'task': 'copy'})

    assert merged == ['--quiet', 'data', 'synth', '--n', '4', '--task', 'copy']
    assert waitk.merge_config_file(['--quiet', 'evaluate'], {'quiet': 'true'}) == ['--quiet', 'evaluate']


def test_parse_int_list() -> None:
    assert waitk.utils.parse_int_list('1, 3,inf,,Full') == [1, 3, None, None]

    with pytest.raises(waitk.ConfigError):
        waitk.utils.parse_int_list('1,three')
