import csv
import json
import pathlib
from typing import Dict, List

import pytest

import waitk
from waitk.cli import main

CURVE_K = ['1', '3', '5', '7', '9', 'inf']
TRAIN_STEPS = '1200'


def _train(corpus: pathlib.Path, subwords: pathlib.Path, out: pathlib.Path, *extra: str) -> List[str]:
    return [
        '--quiet',
        'train',
        '--corpus',
        str(corpus),
        '--subwords',
        str(subwords),
        '--out',
        str(out),
        *extra,
    ]


def _losses(model_dir: pathlib.Path) -> List[float]:
    with open(model_dir / 'metrics.tsv', encoding='utf-8', newline='') as fp:
        return [float(row['loss']) for row in csv.DictReader(fp, delimiter='\t')]


def _report(path: pathlib.Path) -> Dict[str, Dict[str, str]]:
    with open(path, encoding='utf-8', newline='') as fp:
        return {row['k']: row for row in csv.DictReader(fp)}


def _simulate(model: pathlib.Path, root: pathlib.Path, k: str, out: pathlib.Path) -> List[str]:
    return [
        '--quiet',
        'simulate',
        '--ensemble',
        str(model),
        '--subwords',
        str(root / 'subwords.bpe'),
        '--input',
        str(root / 'test.tsv'),
        '--k',
        k,
        '--workers',
        '4',
        '--out',
        str(out),
    ]


@pytest.mark.slow
def test_full_pipeline(tmp_path) -> None:
    data = tmp_path / 'data'
    corpus = data / 'train.tsv'
    subwords = data / 'subwords.bpe'
    model_dir = tmp_path / 'model'

    assert main(['--quiet', 'data', 'synth', '--task', 'copy', '--n', '300', '--max-len', '6', '--out', str(corpus)]) == 0
    assert main(['--quiet', 'data', 'learn-bpe', '--input', str(corpus), '--merges', '30', '--out', str(subwords)]) == 0

    options = ['--steps', '200', '--k-min', '1', '--k-max', '3', '--checkpoint-every', '50', '--seed', '5']
    assert main(_train(corpus, subwords, model_dir, *options)) == 0
    assert (model_dir / 'checkpoint_last.wkck').exists()

    losses = _losses(model_dir)
    assert len(losses) == 200
    assert sum(losses[-10:]) / 10 <= 0.5 * sum(losses[:10]) / 10

    averaged = model_dir / 'averaged.wkck'
    assert main(['--quiet', 'average', '--dir', str(model_dir), '--last', '2', '--out', str(averaged)]) == 0
    assert waitk.load_checkpoint(averaged).config.vocab_size == waitk.load_subwords(subwords).vocab_size

    sim = tmp_path / 'sim'
    simulate = [
        '--quiet',
        'simulate',
        '--ensemble',
        f'{averaged},{model_dir / "checkpoint_last.wkck"}',
        '--subwords',
        str(subwords),
        '--input',
        str(corpus),
        '--k',
        '1,inf',
        '--workers',
        '2',
        '--out',
        str(sim),
    ]
    assert main(simulate) == 0
    assert sorted(path.name for path in sim.iterdir() if path.is_dir()) == ['k1', 'kinf']

    meta = json.loads((sim / 'k1' / 'meta.json').read_text(encoding='utf-8'))
    assert meta['model'] == 'averaged,checkpoint_last'
    assert meta['mode'] == 'greedy'

    report = tmp_path / 'report'
    evaluate = ['--quiet', 'evaluate', str(sim / 'k1'), str(sim / 'kinf'), '--refs', str(corpus), '--out', str(report)]
    assert main(evaluate) == 0

    curve = tmp_path / 'curve'
    assert main(['--quiet', 'curve', str(report), '--expect-k', '1,inf', '--out', str(curve)]) == 0

    with open(curve / 'curve.csv', encoding='utf-8', newline='') as fp:
        rows = list(csv.DictReader(fp))
    assert sorted(row['k'] for row in rows) == ['1', 'inf']
    assert [float(row['al']) for row in rows] == sorted(float(row['al']) for row in rows)


@pytest.fixture(scope='module')
def dict_map(tmp_path_factory) -> pathlib.Path:
    root = tmp_path_factory.mktemp('dict_map')
    pairs = waitk.synth_task_generate(waitk.SynthTask.dict_map, 5200, (3, 12), 20, seed=0)
    waitk.write_corpus(root / 'train.tsv', pairs[:5000])
    waitk.write_corpus(root / 'test.tsv', pairs[5000:])

    learn = ['--quiet', 'data', 'learn-bpe', '--input', str(root / 'train.tsv'), '--merges', '200']
    assert main([*learn, '--out', str(root / 'subwords.bpe')]) == 0

    options = ['--steps', TRAIN_STEPS, '--k-min', '3', '--k-max', '9', '--checkpoint-every', '200', '--average-last', '3']
    assert main(_train(root / 'train.tsv', root / 'subwords.bpe', root / 'model', *options, '--seed', '1')) == 0
    return root


@pytest.mark.slow
def test_latency_quality_tradeoff(dict_map: pathlib.Path) -> None:
    sim = dict_map / 'sim'
    assert main(_simulate(dict_map / 'model' / 'averaged.wkck', dict_map, ','.join(CURVE_K), sim)) == 0

    out = dict_map / 'report'
    runs = [str(sim / f'k{k}') for k in CURVE_K]
    assert main(['--quiet', 'evaluate', *runs, '--refs', str(dict_map / 'test.tsv'), '--out', str(out)]) == 0

    rows = _report(out / 'report.csv')
    al = [float(rows[k]['al']) for k in CURVE_K]
    bleu = {k: float(rows[k]['bleu']) for k in CURVE_K}

    assert all(lower < higher for lower, higher in zip(al, al[1:]))
    assert bleu['9'] >= bleu['1'] + 2.0
    assert bleu['inf'] >= bleu['9']


@pytest.mark.slow
def test_student_on_distilled_data(dict_map: pathlib.Path) -> None:
    sources = dict_map / 'kd_sources.tsv'
    waitk.write_corpus(sources, waitk.read_corpus(dict_map / 'train.tsv')[:2000])
    distilled = dict_map / 'kd.tsv'
    base = dict_map / 'model' / 'averaged.wkck'

    distill = ['--quiet', 'data', 'distill', '--ensemble', str(base), '--subwords', str(dict_map / 'subwords.bpe')]
    assert main([*distill, '--input', str(sources), '--out', str(distilled)]) == 0

    kd_pairs = waitk.read_corpus(distilled)
    assert len(kd_pairs) >= 1800
    assert all(pair.tag is waitk.Tag.distilled for pair in kd_pairs)

    options = ['--steps', TRAIN_STEPS, '--k-min', '3', '--k-max', '9', '--checkpoint-every', '200', '--average-last', '3']
    assert main(_train(distilled, dict_map / 'subwords.bpe', dict_map / 'student', *options, '--seed', '2')) == 0

    scores = {}
    for name, model in (('base', base), ('student', dict_map / 'student' / 'averaged.wkck')):
        sim = dict_map / f'{name}_sim'
        assert main(_simulate(model, dict_map, 'inf', sim)) == 0
        out = dict_map / f'{name}_report'
        assert main(['--quiet', 'evaluate', str(sim / 'kinf'), '--refs', str(dict_map / 'test.tsv'), '--out', str(out)]) == 0
        scores[name] = float(_report(out / 'report.csv')['inf']['bleu'])

    assert scores['base'] > 0.0
    assert scores['student'] >= 0.9 * scores['base']
