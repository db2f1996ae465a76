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

import logging
from typing import Any, Dict, Hashable, Iterable, List, Mapping, NamedTuple, Optional, Sequence, Tuple

from sacrebleu.metrics import BLEU
from typing_extensions import Self

from .abc import Object
from .errors import ConfigError
from .stream import DelayTrace
from .utils import simple_repr

__all__: Tuple[str, ...] = (
    'LatencyReport',
    'CurvePoint',
    'REGIMES',
    'edit_distance',
    'wer',
    'bleu',
    'average_lagging',
    'average_proportion',
    'differentiable_average_lagging',
    'latency_report',
    'select_regimes',
)

log = logging.getLogger(__name__)

REGIMES: Tuple[str, ...] = ('low', 'medium', 'high')


def edit_distance(hyp: Sequence[Hashable], ref: Sequence[Hashable]) -> int:
    """Levenshtein distance with unit substitution, insertion and deletion costs."""
    previous = list(range(len(ref) + 1))
    for i, h in enumerate(hyp, start=1):
        current = [i] + [0] * len(ref)
        for j, r in enumerate(ref, start=1):
            if h == r:
                current[j] = previous[j - 1]
            else:
                current[j] = min(previous[j], current[j - 1], previous[j - 1]) + 1
        previous = current
    return previous[-1]


def wer(hyp: Sequence[Hashable], ref: Sequence[Hashable]) -> float:
    """Word error rate of ``hyp`` against ``ref``: edit distance over ``len(ref)``.

    Two empty sequences score ``0.0``.

    Raises
    ------
    ConfigError
        ``ref`` is empty but ``hyp`` is not.
    """
    if not ref:
        if hyp:
            raise ConfigError('word error rate is undefined for an empty reference')
        return 0.0
    return edit_distance(hyp, ref) / len(ref)


def bleu(hyps: Sequence[str], refs: Sequence[str], *, smooth: bool = False) -> float:
    """Case-sensitive corpus BLEU-4 over detokenized sentences.

    Sentences are tokenized with the international rules, which split Unicode
    punctuation and symbols and keep case. Smoothing is off by default;
    ``smooth=True`` adds one to the higher order n-gram counts.

    Parameters
    ----------
    hyps: Sequence[:class:`str`]
        System output, one sentence per item.
    refs: Sequence[:class:`str`]
        One reference per hypothesis.
    smooth: :class:`bool`
        Enables add-one smoothing.

    Returns
    -------
    :class:`float`
        The score in ``[0, 100]``.

    Raises
    ------
    ConfigError
        The lists are empty or differ in length.
    """
    if len(hyps) != len(refs):
        raise ConfigError(f'{len(hyps)} hypotheses but {len(refs)} references')
    if not hyps:
        raise ConfigError('BLEU needs at least one sentence')
    metric = BLEU(
        tokenize='intl',
        smooth_method='add-k' if smooth else 'none',
        smooth_value=1 if smooth else None,
        force=True,
    )
    return float(metric.corpus_score(list(hyps), [list(refs)]).score)


def _check(trace: DelayTrace) -> None:
    if trace.tgt_len < 1:
        raise ConfigError('latency is undefined for an empty target')


def average_lagging(trace: DelayTrace) -> float:
    """Average lagging: how far, in source tokens, the output trails an ideal
    simultaneous translator, averaged up to the first target token written
    after the whole source was read.
    """
    _check(trace)
    rate = trace.tgt_len / trace.src_len
    tau = next((t for t, delay in enumerate(trace.g, start=1) if delay == trace.src_len), trace.tgt_len)
    return sum(trace.g[t - 1] - (t - 1) / rate for t in range(1, tau + 1)) / tau


def average_proportion(trace: DelayTrace) -> float:
    """Average proportion of the source read per target token, in ``(0, 1]``."""
    _check(trace)
    return sum(trace.g) / (trace.src_len * trace.tgt_len)


def differentiable_average_lagging(trace: DelayTrace) -> float:
    """Average lagging over a monotonised delay: every target token is assumed
    to take at least ``src_len / tgt_len`` source tokens after the one before it.
    """
    _check(trace)
    step = trace.src_len / trace.tgt_len
    total = 0.0
    adjusted = 0.0
    for t, delay in enumerate(trace.g, start=1):
        adjusted = float(delay) if t == 1 else max(float(delay), adjusted + step)
        total += adjusted - (t - 1) * step
    return total / trace.tgt_len


@simple_repr
class LatencyReport(Object):
    """Corpus latency: unweighted means of the per-sentence values.

    Attributes
    ----------
    al: :class:`float`
        Mean average lagging.
    ap: :class:`float`
        Mean average proportion.
    dal: :class:`float`
        Mean differentiable average lagging.
    per_sentence: List[Tuple[:class:`float`, :class:`float`, :class:`float`]]
        ``(al, ap, dal)`` for every scored sentence.
    n_sentences: :class:`int`
        Number of scored sentences.
    """

    __slots__: Tuple[str, ...] = ('al', 'ap', 'dal', 'per_sentence', 'n_sentences')

    def __init__(self, per_sentence: Sequence[Tuple[float, float, float]]) -> None:
        if not per_sentence:
            raise ConfigError('a latency report needs at least one scored sentence')
        n = len(per_sentence)
        self.per_sentence: List[Tuple[float, float, float]] = list(per_sentence)
        self.n_sentences: int = n
        self.al: float = sum(row[0] for row in per_sentence) / n
        self.ap: float = sum(row[1] for row in per_sentence) / n
        self.dal: float = sum(row[2] for row in per_sentence) / n


def latency_report(traces: Iterable[Optional[DelayTrace]]) -> LatencyReport:
    """Scores every trace, skipping missing traces and empty targets with a warning.

    Raises
    ------
    ConfigError
        No trace could be scored.
    """
    rows: List[Tuple[float, float, float]] = []
    skipped = 0
    for trace in traces:
        if trace is None or trace.tgt_len == 0:
            skipped += 1
            continue
        rows.append((average_lagging(trace), average_proportion(trace), differentiable_average_lagging(trace)))
    if skipped:
        log.warning('skipped %d sentences without delays', skipped)
    return LatencyReport(rows)


class CurvePoint(NamedTuple):
    """One evaluated operating point on the latency-quality curve.

    ``model`` is a comma-joined list of model ids for ensembles.
    """

    model: str
    k: str
    mode: str
    seg: bool
    bleu: float
    al: float
    ap: float
    dal: float

    def to_row(self) -> Dict[str, Any]:
        return {
            'model': self.model,
            'k': self.k,
            'mode': self.mode,
            'seg': int(self.seg),
            'bleu': self.bleu,
            'al': self.al,
            'ap': self.ap,
            'dal': self.dal,
        }

    @classmethod
    def from_row(cls, row: Mapping[str, Any]) -> Self:
        return cls(
            model=str(row['model']),
            k=str(row['k']),
            mode=str(row['mode']),
            seg=str(row['seg']).strip().lower() in {'1', 'true'},
            bleu=float(row['bleu']),
            al=float(row['al']),
            ap=float(row['ap']),
            dal=float(row['dal']),
        )


def select_regimes(
    points: Iterable[CurvePoint],
    thresholds: Tuple[float, float, float] = (3.0, 6.0, 15.0),
) -> Dict[str, Optional[CurvePoint]]:
    """Picks the highest-BLEU point whose AL fits under each latency regime bound.

    Regimes are ``low``, ``medium`` and ``high`` with AL bounded by the
    matching entry of ``thresholds``. Ties on BLEU go to the lower AL. A regime
    with no qualifying point maps to ``None``.
    """
    if list(thresholds) != sorted(thresholds):
        raise ConfigError(f'regime thresholds must be ascending, got {thresholds}')
    candidates = list(points)
    chosen: Dict[str, Optional[CurvePoint]] = {}
    for name, bound in zip(REGIMES, thresholds):
        fitting = [point for point in candidates if point.al <= bound]
        chosen[name] = min(fitting, key=lambda p: (-p.bleu, p.al)) if fitting else None
    return chosen
