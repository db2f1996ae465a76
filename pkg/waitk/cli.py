"""
The MIT License (MIT)

Copyright (c) 2021-present the waitk.py developers

Permission is hereby granted, free of charge, to any person obtaining a
copy of this software and associated documentation files (the "Software"),
to deal in the Software without restriction, including without limitation
the rights to use, copy, modify, merge, publish, distribute, sublicense,
and/or sell copies of the Software, and to permit persons to whom the
Software is furnished to do so, subject to the following conditions:
The above copyright notice and this permission notice shall be included in
all copies or substantial portions of the Software.
THE SOFTWARE IS PROVIDED "AS IS", WITHOUT WARRANTY OF ANY KIND, EXPRESS
OR IMPLIED, INCLUDING BUT NOT LIMITED TO THE WARRANTIES OF MERCHANTABILITY,
FITNESS FOR A PARTICULAR PURPOSE AND NONINFRINGEMENT. IN NO EVENT SHALL THE
AUTHORS OR COPYRIGHT HOLDERS BE LIABLE FOR ANY CLAIM, DAMAGES OR OTHER
LIABILITY, WHETHER IN AN ACTION OF CONTRACT, TORT OR OTHERWISE, ARISING
FROM, OUT OF OR IN CONNECTION WITH THE SOFTWARE OR THE USE OR OTHER
DEALINGS IN THE SOFTWARE.
"""

from __future__ import annotations

import argparse
import csv
import functools
import logging
import pathlib
import sys
from typing import Any, Dict, List, NoReturn, Optional, Sequence, Tuple

import numpy as np

from .checkpoint import latest_checkpoints, load_checkpoint, save_checkpoint
from .config import RunConfig, merge_config_file, read_config_file
from .data import (
    TAG_TOKENS,
    CorpusPair,
    SamplingSpec,
    apply_subwords,
    back_translate,
    detokenize,
    distill_corpus,
    encode_corpus,
    inject_tag,
    learn_bpe,
    length_ratio_filter,
    load_subwords,
    mix_sources,
    normalize,
    read_corpus,
    save_subwords,
    segment_subwords,
    synth_task_generate,
    temperature_sample,
    wer_filter,
    write_corpus,
)
from .enums import LatencyScope, SearchMode, SynthTask
from .errors import ConfigError, DataError, VocabularyError, WaitkException
from .metrics import CurvePoint, bleu, latency_report, select_regimes
from .model import ModelConfig, MultipathRange, Parameters, WaitK, average_checkpoints, init_params
from .stream import DelayTrace, Ensemble, LookaheadConfig, simulate_corpus
from .trainer import Trainer
from .utils import parse_int_list, read_lines, to_json, to_string, write_lines

__all__: Tuple[str, ...] = ('build_parser', 'main')

log = logging.getLogger(__name__)

REPORT_FIELDS: Tuple[str, ...] = ('model', 'k', 'mode', 'seg', 'bleu', 'al', 'ap', 'dal')


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> NoReturn:
        raise ConfigError(f'{self.prog}: {message}')


# Helpers


def _split_list(value: str) -> List[str]:
    return [item.strip() for item in value.split(',') if item.strip()]


def _read_sources(path: str) -> List[str]:
    return [normalize(line.split('\t')[0]) for line in read_lines(path)]


def _read_references(path: str) -> List[str]:
    return [normalize(line.split('\t')[1] if '\t' in line else line) for line in read_lines(path)]


def _load_models(spec: str) -> Tuple[List[Parameters], str]:
    paths = _split_list(spec)
    if not paths:
        raise ConfigError('--ensemble needs at least one checkpoint')
    return [load_checkpoint(path) for path in paths], ','.join(pathlib.Path(path).stem for path in paths)


def _write_json(path: pathlib.Path, data: Any) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(to_string(data) + '\n', encoding='utf-8')


def _write_csv(path: pathlib.Path, fields: Sequence[str], rows: Sequence[Dict[str, Any]]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8', newline='') as fp:
        writer = csv.DictWriter(fp, fieldnames=list(fields), lineterminator='\n')
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


# data


def cmd_data(args: argparse.Namespace) -> int:
    config = RunConfig.from_namespace(f'data {args.action}', args)
    out = pathlib.Path(args.out)
    action = args.action
    out.parent.mkdir(parents=True, exist_ok=True)

    if action == 'learn-bpe':
        pairs = read_corpus(args.input)
        model = learn_bpe([p.source for p in pairs] + [p.target for p in pairs], args.merges)
        save_subwords(model, out)
    elif action == 'filter':
        pairs = read_corpus(args.input)
        if args.hyps:
            hyps = read_lines(args.hyps)
            if len(hyps) != len(pairs):
                raise DataError(f'{len(hyps)} hypotheses for {len(pairs)} pairs')
            indices = [
                i for i, pair in enumerate(pairs) if length_ratio_filter([pair], args.min_len, args.max_len, args.max_ratio)
            ]
            kept = wer_filter([pairs[i] for i in indices], [hyps[i] for i in indices], args.wer_threshold)
        else:
            kept = length_ratio_filter(pairs, args.min_len, args.max_len, args.max_ratio)
        log.info('kept %d of %d pairs', len(kept), len(pairs))
        write_corpus(out, kept)
    elif action == 'sample':
        sizes: Dict[str, int] = {}
        for item in _split_list(args.sizes):
            name, _, size = item.partition('=')
            sizes[name] = int(size)
        counts = temperature_sample(SamplingSpec(sizes, args.temperature, args.total), np.random.default_rng(args.seed))
        _write_json(out, counts)
    elif action == 'mix':
        sources: Dict[str, List[CorpusPair]] = {}
        for item in _split_list(args.inputs):
            name, _, path = item.partition('=')
            sources[name] = read_corpus(path)
        write_corpus(out, mix_sources(sources, args.temperature, args.total, np.random.default_rng(args.seed)))
    elif action == 'tag':
        write_corpus(out, inject_tag(read_corpus(args.input), args.tag))
    elif action in {'distill', 'backtranslate'}:
        models, _ = _load_models(args.ensemble)
        subwords = load_subwords(args.subwords)
        lines = _read_sources(args.input)
        if action == 'distill':
            result = distill_corpus(Ensemble(models), lines, subwords)
        else:
            result = back_translate(Ensemble(models), lines, subwords, args.tag)
        write_corpus(out, result.pairs)
        if result.failures:
            write_lines(
                out.with_name(out.name + '.failures.jsonl'),
                (to_string({'index': i, 'error': reason}) for i, reason in result.failures),
            )
    elif action == 'synth':
        pairs = synth_task_generate(
            SynthTask(args.task), args.n, (args.min_len, args.max_len), args.vocab_size, args.seed
        )
        write_corpus(out, pairs)

    config.write_manifest(out.parent)
    return 0


# train / average


def cmd_train(args: argparse.Namespace) -> int:
    config = RunConfig.from_namespace('train', args)
    out = pathlib.Path(args.out)
    pairs = read_corpus(args.corpus)
    subwords = load_subwords(args.subwords)

    if args.init:
        params = load_checkpoint(args.init)
        if params.config.vocab_size != subwords.vocab_size:
            raise VocabularyError(
                f'{args.init} expects {params.config.vocab_size} tokens but the subword model has {subwords.vocab_size}'
            )
        log.info('fine-tuning from %s, its model config replaces --preset', args.init)
    else:
        overrides: Dict[str, Any] = {'max_positions': args.max_positions}
        if args.dropout is not None:
            overrides['dropout'] = args.dropout
        params = init_params(ModelConfig.preset(args.preset, vocab_size=subwords.vocab_size, **overrides), args.seed)

    if args.k is not None:
        k_range, fixed_k = None, WaitK.parse(args.k)
    else:
        k_range, fixed_k = MultipathRange(args.k_min, args.k_max), None

    config.write_manifest(out)
    trainer = Trainer(
        params,
        encode_corpus(subwords, pairs),
        k_range=k_range,
        fixed_k=fixed_k,
        batch_tokens=args.batch_tokens,
        seed=args.seed,
        base_lr=args.lr,
        warmup_steps=args.warmup,
        out_dir=out,
        checkpoint_every=args.checkpoint_every,
        progress=not args.quiet,
    )
    trainer.run(args.steps, average_last=args.average_last)
    return 0


def cmd_average(args: argparse.Namespace) -> int:
    paths: List[pathlib.Path] = [pathlib.Path(p) for p in args.paths]
    if args.last:
        if not args.dir:
            raise ConfigError('--last needs --dir')
        paths.extend(latest_checkpoints(args.dir, args.last))
    if not paths:
        raise ConfigError('average needs at least one checkpoint')
    out = pathlib.Path(args.out)
    save_checkpoint(average_checkpoints([load_checkpoint(path) for path in paths]), out)
    RunConfig.from_namespace('average', args).write_manifest(out.parent)
    return 0


# simulate / evaluate / curve


def cmd_simulate(args: argparse.Namespace) -> int:
    config = RunConfig.from_namespace('simulate', args)
    out = pathlib.Path(args.out)
    models, model_id = _load_models(args.ensemble)
    subwords = load_subwords(args.subwords)
    ensemble = Ensemble(models)
    if ensemble.vocab_size != subwords.vocab_size:
        raise DataError(f'models expect {ensemble.vocab_size} tokens, subword model has {subwords.vocab_size}')

    lines = _read_sources(args.input)
    dataset = [apply_subwords(subwords, line) for line in lines]
    lookahead = LookaheadConfig(args.lookahead, args.beam) if args.lookahead else None
    mode = SearchMode.lookahead if lookahead else SearchMode.greedy
    segmenter = functools.partial(segment_subwords, subwords)

    config.write_manifest(out)
    for value in parse_int_list(args.k):
        k = WaitK(value)
        records = simulate_corpus(
            ensemble,
            dataset,
            k,
            lookahead=lookahead,
            segment=args.segment,
            segmenter=segmenter,
            workers=args.workers,
            progress=not args.quiet,
        )
        run_dir = out / f'k{k}'
        run_dir.mkdir(parents=True, exist_ok=True)
        write_lines(run_dir / 'hyps.txt', (detokenize(subwords, r.hypothesis) for r in records))
        write_lines(
            run_dir / 'traces.jsonl',
            (
                to_string(
                    {
                        'index': r.index,
                        'trace': r.trace.to_dict() if r.trace else None,
                        'segments': [s.to_dict() for s in r.segments],
                        'error': r.error,
                    }
                )
                for r in records
            ),
        )
        meta = {
            'model': model_id,
            'k': str(k),
            'mode': mode.value,
            'seg': bool(args.segment),
            'seed': config.seed,
            'config_hash': config.config_hash(),
        }
        _write_json(run_dir / 'meta.json', meta)
        log.info('wrote %s', run_dir)
    return 0


def _evaluate_run(run_dir: pathlib.Path, refs: Sequence[str], scope: LatencyScope, smooth: bool) -> CurvePoint:
    meta = to_json((run_dir / 'meta.json').read_bytes())
    hyps = read_lines(run_dir / 'hyps.txt')
    records = [to_json(line) for line in read_lines(run_dir / 'traces.jsonl')]
    if not (len(hyps) == len(records) == len(refs)):
        raise DataError(f'{run_dir}: {len(hyps)} hypotheses, {len(records)} traces, {len(refs)} references')

    traces: List[Optional[DelayTrace]] = []
    for record in records:
        if scope is LatencyScope.line:
            traces.append(DelayTrace.from_dict(record['trace']) if record['trace'] else None)
        else:
            traces.extend(DelayTrace.from_dict(segment) for segment in record['segments'])
    report = latency_report(traces)
    return CurvePoint(
        model=meta['model'],
        k=meta['k'],
        mode=meta['mode'],
        seg=bool(meta['seg']),
        bleu=bleu(hyps, refs, smooth=smooth),
        al=report.al,
        ap=report.ap,
        dal=report.dal,
    )


def cmd_evaluate(args: argparse.Namespace) -> int:
    config = RunConfig.from_namespace('evaluate', args)
    out = pathlib.Path(args.out)
    refs = _read_references(args.refs)
    scope = LatencyScope(args.scope)
    points = [_evaluate_run(pathlib.Path(run), refs, scope, args.smooth) for run in args.runs]

    rows = [point.to_row() for point in points]
    _write_csv(out / 'report.csv', REPORT_FIELDS, rows)
    _write_json(
        out / 'report.json',
        {'rows': rows, 'meta': {'seed': config.seed, 'config_hash': config.config_hash(), 'scope': scope.value}},
    )
    config.write_manifest(out)
    return 0


def cmd_curve(args: argparse.Namespace) -> int:
    config = RunConfig.from_namespace('curve', args)
    out = pathlib.Path(args.out)
    points: List[CurvePoint] = []
    missing: List[str] = []
    for item in args.reports:
        path = pathlib.Path(item)
        if path.is_dir():
            path = path / 'report.json'
        if not path.is_file():
            missing.append(str(path))
            continue
        points.extend(CurvePoint.from_row(row) for row in to_json(path.read_bytes())['rows'])

    if args.expect_k:
        expected = [str(WaitK(value)) for value in parse_int_list(args.expect_k)]
        for model in sorted({point.model for point in points}):
            present = {point.k for point in points if point.model == model}
            missing.extend(f'{model} k={k}' for k in expected if k not in present)

    points.sort(key=lambda p: (p.al, p.bleu, p.model, p.k))
    _write_csv(out / 'curve.csv', REPORT_FIELDS, [point.to_row() for point in points])
    low, medium, high = args.regimes
    regime_rows: List[Dict[str, Any]] = []
    for name, point in select_regimes(points, (low, medium, high)).items():
        if point is not None:
            regime_rows.append({'regime': name, **point.to_row()})
    _write_csv(out / 'regimes.csv', ('regime', *REPORT_FIELDS), regime_rows)
    config.write_manifest(out)

    if missing:
        write_lines(out / 'missing.txt', missing)
        for entry in missing:
            log.warning('missing run: %s', entry)
        return DataError.exit_code
    return 0


# Parser


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog='waitk', description='Simultaneous wait-k translation toolkit.')
    parser.add_argument('-v', '--verbose', action='store_true', help='log debug output')
    parser.add_argument('--quiet', action='store_true', help='hide progress bars')
    parser.add_argument('--config', help='key=value file with default flag values')
    commands = parser.add_subparsers(dest='command', required=True, parser_class=_Parser)

    data = commands.add_parser('data', help='prepare corpora and subword models')
    actions = data.add_subparsers(dest='action', required=True, parser_class=_Parser)

    p = actions.add_parser('learn-bpe')
    p.add_argument('--input', required=True)
    p.add_argument('--merges', type=int, default=200)
    p.add_argument('--out', required=True)

    p = actions.add_parser('filter')
    p.add_argument('--input', required=True)
    p.add_argument('--min-len', type=int, default=1)
    p.add_argument('--max-len', type=int, default=250)
    p.add_argument('--max-ratio', type=float, default=3.0)
    p.add_argument('--hyps', help='transcripts aligned with the input, enables WER filtering')
    p.add_argument('--wer-threshold', type=float, default=0.75)
    p.add_argument('--out', required=True)

    p = actions.add_parser('sample')
    p.add_argument('--sizes', required=True, help='name=size[,name=size...]')
    p.add_argument('--temperature', type=float, default=5.0)
    p.add_argument('--total', type=int, required=True)
    p.add_argument('--seed', type=int, default=0)
    p.add_argument('--out', required=True)

    p = actions.add_parser('mix')
    p.add_argument('--inputs', required=True, help='name=path[,name=path...]')
    p.add_argument('--temperature', type=float, default=5.0)
    p.add_argument('--total', type=int, required=True)
    p.add_argument('--seed', type=int, default=0)
    p.add_argument('--out', required=True)

    p = actions.add_parser('tag')
    p.add_argument('--input', required=True)
    p.add_argument('--tag', choices=sorted(TAG_TOKENS), default='<BT>')
    p.add_argument('--out', required=True)

    for name in ('distill', 'backtranslate'):
        p = actions.add_parser(name)
        p.add_argument('--ensemble', required=True, help='checkpoint[,checkpoint...]')
        p.add_argument('--subwords', required=True)
        p.add_argument('--input', required=True)
        p.add_argument('--out', required=True)
        if name == 'backtranslate':
            p.add_argument('--tag', choices=sorted(TAG_TOKENS), default='<BT>')

    p = actions.add_parser('synth')
    p.add_argument('--task', choices=[task.value for task in SynthTask], default='dict-map')
    p.add_argument('--n', type=int, default=1000)
    p.add_argument('--min-len', type=int, default=3)
    p.add_argument('--max-len', type=int, default=12)
    p.add_argument('--vocab-size', type=int, default=20)
    p.add_argument('--seed', type=int, default=0)
    p.add_argument('--out', required=True)
    data.set_defaults(func=cmd_data)

    p = commands.add_parser('train', help='train a wait-k model')
    p.add_argument('--corpus', required=True)
    p.add_argument('--subwords', required=True)
    p.add_argument('--out', required=True)
    p.add_argument('--preset', choices=sorted(ModelConfig.PRESETS), default='base-toy')
    p.add_argument('--init', help='checkpoint to fine-tune instead of a fresh model')
    p.add_argument('--steps', type=int, default=200)
    p.add_argument('--batch-tokens', type=int, default=2000)
    p.add_argument('--k-min', type=int, default=3)
    p.add_argument('--k-max', type=int, default=9)
    p.add_argument('--k', help='train a single k (or inf) instead of multi-path')
    p.add_argument('--lr', type=float, default=0.1)
    p.add_argument('--warmup', type=int, default=400)
    p.add_argument('--dropout', type=float)
    p.add_argument('--max-positions', type=int, default=256)
    p.add_argument('--checkpoint-every', type=int, default=100)
    p.add_argument('--average-last', type=int, default=0)
    p.add_argument('--seed', type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = commands.add_parser('average', help='average checkpoints')
    p.add_argument('paths', nargs='*')
    p.add_argument('--last', type=int, default=0)
    p.add_argument('--dir')
    p.add_argument('--out', required=True)
    p.set_defaults(func=cmd_average)

    p = commands.add_parser('simulate', help='simultaneously translate a test set')
    p.add_argument('--ensemble', required=True, help='checkpoint[,checkpoint...]')
    p.add_argument('--subwords', required=True)
    p.add_argument('--input', required=True)
    p.add_argument('--k', default='1,3,5,7,9,inf')
    p.add_argument('--lookahead', type=int, default=0, help='look-ahead depth M, 0 for greedy')
    p.add_argument('--beam', type=int, default=1)
    p.add_argument('--segment', action='store_true')
    p.add_argument('--workers', type=int, default=1)
    p.add_argument('--seed', type=int, default=0)
    p.add_argument('--out', required=True)
    p.set_defaults(func=cmd_simulate)

    p = commands.add_parser('evaluate', help='score simulation runs')
    p.add_argument('runs', nargs='+')
    p.add_argument('--refs', required=True)
    p.add_argument('--scope', choices=[scope.value for scope in LatencyScope], default='line')
    p.add_argument('--smooth', action='store_true')
    p.add_argument('--seed', type=int, default=0)
    p.add_argument('--out', required=True)
    p.set_defaults(func=cmd_evaluate)

    p = commands.add_parser('curve', help='merge reports into a latency-quality curve')
    p.add_argument('reports', nargs='+')
    p.add_argument('--expect-k', help='k values every model should have, e.g. 1,3,5,inf')
    p.add_argument('--regimes', type=float, nargs=3, default=[3.0, 6.0, 15.0])
    p.add_argument('--out', required=True)
    p.set_defaults(func=cmd_curve)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Runs the command line and returns the exit code: 0 on success, 1 for
    usage errors, 2 for data errors and 3 for numeric failures.
    """
    arguments = list(sys.argv[1:] if argv is None else argv)
    try:
        pre = argparse.ArgumentParser(add_help=False)
        pre.add_argument('--config')
        known, rest = pre.parse_known_args(arguments)
        if known.config:
            rest = merge_config_file(rest, read_config_file(known.config))

        args = build_parser().parse_args(rest)
        logging.basicConfig(
            level=logging.DEBUG if args.verbose else logging.INFO,
            format='%(asctime)s %(levelname)s %(name)s: %(message)s',
        )
        return int(args.func(args) or 0)
    except WaitkException as exc:
        log.error('%s', exc)
        return exc.exit_code
    except OSError as exc:
        log.error('%s', exc)
        return DataError.exit_code
