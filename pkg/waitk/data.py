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

import collections
import logging
import os
from typing import Dict, FrozenSet, Iterable, List, Mapping, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from .abc import Object
from .enums import Special, SynthTask, Tag
from .errors import ConfigError, DataError, VocabularyError, WaitkException
from .metrics import wer
from .model import Parameters, WaitK
from .stream import DEFAULT_PUNCTUATION, MaxLenRule, Scorer, default_max_len, greedy_stream_decode
from .utils import read_lines, simple_repr, write_lines

__all__: Tuple[str, ...] = (
    'END_OF_WORD',
    'TAG_TOKENS',
    'CorpusPair',
    'SubwordModel',
    'SamplingSpec',
    'DistillResult',
    'normalize',
    'learn_bpe',
    'apply_subwords',
    'detokenize',
    'encode_corpus',
    'punctuation_ids',
    'segment_subwords',
    'length_ratio_filter',
    'wer_filter',
    'temperature_sample',
    'inject_tag',
    'distill_corpus',
    'back_translate',
    'synth_task_generate',
    'mix_sources',
    'read_corpus',
    'write_corpus',
    'save_subwords',
    'load_subwords',
)

log = logging.getLogger(__name__)

PathLike = Union[str, 'os.PathLike[str]']
Translator = Union[Scorer, Sequence[Parameters]]

END_OF_WORD: str = '▁'
TAG_TOKENS: FrozenSet[str] = frozenset({Special.bt.token, Special.asr.token})
SUBWORD_HEADER: str = 'WKBPE v1'
VOCAB_SENTINEL: str = '#VOCAB'

_SPECIAL_BY_TOKEN: Dict[str, Special] = {special.token: special for special in Special}


class CorpusPair(NamedTuple):
    """One training example and where it came from."""

    source: str
    target: str
    tag: Tag = Tag.parallel


def normalize(text: str) -> str:
    """Collapses every run of whitespace to one space and strips the ends."""
    return ' '.join(text.split())


@simple_repr
class SubwordModel(Object):
    """A byte-pair style subword segmentation over characters.

    Every word is split into characters followed by :data:`END_OF_WORD`, and
    the learned merges are applied in order. Ids are dense: the specials come
    first (in :class:`~waitk.enums.Special` order), then the single symbols
    sorted, then one token per merge.

    Attributes
    ----------
    merges: List[Tuple[:class:`str`, :class:`str`]]
        The merge rules in the order they were learned.
    tokens: List[:class:`str`]
        The token string of every id.
    """

    __slots__: Tuple[str, ...] = ('merges', 'tokens', '_index', '_cache')

    def __init__(self, merges: Sequence[Tuple[str, str]], tokens: Sequence[str]) -> None:
        expected = [special.token for special in Special]
        if list(tokens[: len(expected)]) != expected:
            raise VocabularyError('subword vocabulary must start with the special tokens')
        if len(set(tokens)) != len(tokens):
            raise VocabularyError('subword vocabulary holds duplicate tokens')

        self.merges: List[Tuple[str, str]] = [(left, right) for left, right in merges]
        self.tokens: List[str] = list(tokens)
        self._index: Dict[str, int] = {token: i for i, token in enumerate(self.tokens)}
        self._cache: Dict[str, Tuple[int, ...]] = {}

    @property
    def vocab_size(self) -> int:
        return len(self.tokens)

    def token_id(self, token: str) -> Optional[int]:
        return self._index.get(token)

    def __eq__(self, __other: object) -> bool:
        if not isinstance(__other, SubwordModel):
            return False
        return self.merges == __other.merges and self.tokens == __other.tokens

    def __ne__(self, __other: object) -> bool:
        return not self.__eq__(__other)

    def __hash__(self) -> int:
        return hash((tuple(self.merges), tuple(self.tokens)))

    def encode_word(self, word: str) -> Tuple[int, ...]:
        cached = self._cache.get(word)
        if cached is not None:
            return cached

        symbols = _merge_all([*word, END_OF_WORD], self.merges)
        unk = int(Special.unk)
        ids = tuple(self._index.get(symbol, unk) for symbol in symbols)
        self._cache[word] = ids
        return ids


def _apply_merge(symbols: List[str], pair: Tuple[str, str]) -> List[str]:
    left, right = pair
    merged: List[str] = []
    i = 0
    while i < len(symbols):
        if i < len(symbols) - 1 and symbols[i] == left and symbols[i + 1] == right:
            merged.append(left + right)
            i += 2
        else:
            merged.append(symbols[i])
            i += 1
    return merged


def _merge_all(symbols: List[str], merges: Sequence[Tuple[str, str]]) -> List[str]:
    for pair in merges:
        if len(symbols) < 2:
            break
        symbols = _apply_merge(symbols, pair)
    return symbols


def learn_bpe(corpus: Iterable[str], n_merges: int) -> SubwordModel:
    """Learns ``n_merges`` merge rules from ``corpus``.

    Each round merges the most frequent adjacent symbol pair, ties going to
    the lexicographically smallest pair. Learning stops early once no pair is
    left. Special tokens appearing as whole words are not learned from.

    Raises
    ------
    ConfigError
        ``n_merges`` is negative or the corpus is empty.
    """
    if n_merges < 0:
        raise ConfigError(f'n_merges must be >= 0, got {n_merges}')

    words: collections.Counter[str] = collections.Counter()
    lines = 0
    for line in corpus:
        lines += 1
        words.update(word for word in line.split() if word not in _SPECIAL_BY_TOKEN)
    if not lines:
        raise ConfigError('cannot learn subwords from an empty corpus')

    segmented: Dict[str, List[str]] = {word: [*word, END_OF_WORD] for word in words}
    alphabet = sorted({symbol for symbols in segmented.values() for symbol in symbols})

    merges: List[Tuple[str, str]] = []
    for _ in range(n_merges):
        pairs: collections.Counter[Tuple[str, str]] = collections.Counter()
        for word, symbols in segmented.items():
            freq = words[word]
            for pair in zip(symbols, symbols[1:]):
                pairs[pair] += freq
        if not pairs:
            log.debug('no pairs left after %d merges', len(merges))
            break
        best, _ = min(pairs.items(), key=lambda item: (-item[1], item[0]))
        merges.append(best)
        segmented = {word: _apply_merge(symbols, best) for word, symbols in segmented.items()}

    tokens = [special.token for special in Special]
    seen = set(tokens)
    for token in [*alphabet, *(left + right for left, right in merges)]:
        if token not in seen:
            seen.add(token)
            tokens.append(token)

    log.info('learned %d merges, vocabulary of %d tokens', len(merges), len(tokens))
    return SubwordModel(merges, tokens)


def apply_subwords(model: SubwordModel, text: str) -> List[int]:
    """Segments ``text`` into subword ids. Unknown characters become ``<unk>``."""
    ids: List[int] = []
    for word in text.split():
        special = _SPECIAL_BY_TOKEN.get(word)
        if special is not None:
            ids.append(int(special))
        else:
            ids.extend(model.encode_word(word))
    return ids


def detokenize(model: SubwordModel, ids: Iterable[int]) -> str:
    """Turns subword ids back into whitespace-normalised text.

    Padding, begin- and end-of-sequence ids are dropped.

    Raises
    ------
    VocabularyError
        An id lies outside of the vocabulary.
    """
    skipped = {int(Special.pad), int(Special.bos), int(Special.eos)}
    pieces: List[str] = []
    for token_id in ids:
        if token_id in skipped:
            continue
        if not 0 <= token_id < model.vocab_size:
            raise VocabularyError(f'token id {token_id} outside of vocabulary of size {model.vocab_size}')
        token = model.tokens[token_id]
        pieces.append(token + END_OF_WORD if token_id < len(Special) else token)
    return normalize(''.join(pieces).replace(END_OF_WORD, ' '))


def encode_corpus(model: SubwordModel, pairs: Iterable[CorpusPair]) -> List[Tuple[List[int], List[int]]]:
    return [(apply_subwords(model, pair.source), apply_subwords(model, pair.target)) for pair in pairs]


def punctuation_ids(model: SubwordModel, punctuation: Iterable[str] = DEFAULT_PUNCTUATION) -> FrozenSet[int]:
    """Returns the ids of every token whose text ends with one of ``punctuation``,
    with or without the end-of-word marker.

    A model without merges keeps ``.`` and ``▁`` apart, so these ids alone do
    not mark where a word ends; :func:`segment_subwords` cuts on word boundaries.
    """
    marks = tuple(punctuation)
    return frozenset(
        i for i, token in enumerate(model.tokens) if i >= len(Special) and token.rstrip(END_OF_WORD).endswith(marks)
    )


def segment_subwords(
    model: SubwordModel,
    ids: Iterable[int],
    punctuation: Iterable[str] = DEFAULT_PUNCTUATION,
) -> List[List[int]]:
    """Cuts subword ids after every word whose text ends with a punctuation mark.

    Words are closed by a token carrying the end-of-word marker, so the cut
    falls after that token whether or not the mark was merged into it.
    Special tokens other than ``<unk>`` are whole words and never cut.

    .. code-block:: python3

        >>> model = learn_bpe(['a b . c'], 0)
        >>> [detokenize(model, piece) for piece in segment_subwords(model, apply_subwords(model, 'a b . c'))]
        ['a b .', 'c']

    Raises
    ------
    VocabularyError
        An id lies outside of the vocabulary.
    """
    marks = tuple(punctuation)
    segments: List[List[int]] = []
    current: List[int] = []
    word = ''
    for token_id in ids:
        if not 0 <= token_id < model.vocab_size:
            raise VocabularyError(f'token id {token_id} outside of vocabulary of size {model.vocab_size}')
        current.append(token_id)
        if token_id == int(Special.unk):
            continue
        if token_id < len(Special):
            word = ''
            continue
        word += model.tokens[token_id]
        if word.endswith(END_OF_WORD):
            if marks and word[: -len(END_OF_WORD)].endswith(marks):
                segments.append(current)
                current = []
            word = ''
    if current:
        segments.append(current)
    return segments



def length_ratio_filter(
    pairs: Iterable[CorpusPair],
    min_len: int = 1,
    max_len: int = 250,
    max_ratio: float = 3.0,
) -> List[CorpusPair]:
    """Keeps pairs whose whitespace token lengths lie in ``[min_len, max_len]``
    and whose longer side is at most ``max_ratio`` times the shorter one.

    Raises
    ------
    ConfigError
        ``max_ratio`` is below one or ``min_len`` below one.
    """
    if max_ratio < 1:
        raise ConfigError(f'max_ratio must be >= 1, got {max_ratio}')
    if min_len < 1:
        raise ConfigError(f'min_len must be >= 1, got {min_len}')

    kept: List[CorpusPair] = []
    for pair in pairs:
        src, tgt = len(pair.source.split()), len(pair.target.split())
        if not (min_len <= src <= max_len and min_len <= tgt <= max_len):
            continue
        if max(src, tgt) / min(src, tgt) > max_ratio:
            continue
        kept.append(pair)
    return kept


def wer_filter(pairs: Sequence[CorpusPair], hypotheses: Sequence[str], threshold: float = 0.75) -> List[CorpusPair]:
    """Drops pair ``i`` when the word error rate of ``hypotheses[i]`` against its
    source exceeds ``threshold``.

    Raises
    ------
    ConfigError
        The lists differ in length or ``threshold`` is outside ``[0, 1]``.
    """
    if len(pairs) != len(hypotheses):
        raise ConfigError(f'{len(pairs)} pairs but {len(hypotheses)} hypotheses')
    if not 0.0 <= threshold <= 1.0:
        raise ConfigError(f'threshold must be in [0, 1], got {threshold}')
    return [pair for pair, hyp in zip(pairs, hypotheses) if wer(hyp.split(), pair.source.split()) <= threshold]


@simple_repr
class SamplingSpec(Object):
    """Sizes of several corpora and the temperature to sample them with.

    Source ``s`` is drawn with probability proportional to
    ``(N_s / sum(N)) ** (1 / temperature)``.

    Attributes
    ----------
    sizes: Dict[:class:`str`, :class:`int`]
        Sentences per source, in a fixed order.
    temperature: :class:`float`
        Flattens the distribution as it grows; ``1`` is proportional sampling.
    total: :class:`int`
        How many samples to allocate.
    """

    __slots__: Tuple[str, ...] = ('sizes', 'temperature', 'total')

    def __init__(self, sizes: Mapping[str, int], temperature: float, total: int) -> None:
        if not sizes:
            raise ConfigError('a sampling spec needs at least one source')
        for name, size in sizes.items():
            if size < 1:
                raise ConfigError(f'source {name!r} must hold at least one sentence, got {size}')
        if not temperature > 0:
            raise ConfigError(f'temperature must be > 0, got {temperature}')
        if total < 0:
            raise ConfigError(f'total must be >= 0, got {total}')
        self.sizes: Dict[str, int] = dict(sizes)
        self.temperature: float = float(temperature)
        self.total: int = int(total)

    def weights(self) -> Dict[str, float]:
        sizes = np.asarray(list(self.sizes.values()), dtype=np.float64)
        scaled = np.power(sizes / sizes.sum(), 1.0 / self.temperature)
        return dict(zip(self.sizes, (scaled / scaled.sum()).tolist()))


def temperature_sample(spec: SamplingSpec, rng: np.random.Generator) -> Dict[str, int]:
    """Allocates ``spec.total`` samples across sources with one multinomial draw."""
    weights = spec.weights()
    counts = rng.multinomial(spec.total, list(weights.values()))
    allocated = {name: int(count) for name, count in zip(weights, counts)}
    log.debug('temperature %.2f allocation: %s', spec.temperature, allocated)
    return allocated


def inject_tag(pairs: Iterable[CorpusPair], tag_token: str) -> List[CorpusPair]:
    """Prepends ``tag_token`` to every source.

    Raises
    ------
    VocabularyError
        ``tag_token`` is not ``<BT>`` or ``<ASR>``.
    DataError
        A source already starts with a tag.
    """
    if tag_token not in TAG_TOKENS:
        raise VocabularyError(f'{tag_token!r} is not a registered tag, expected one of {sorted(TAG_TOKENS)}')
    tagged: List[CorpusPair] = []
    for i, pair in enumerate(pairs):
        words = pair.source.split()
        if words and words[0] in TAG_TOKENS:
            raise DataError(f'pair {i} is already tagged with {words[0]}')
        tagged.append(pair._replace(source=normalize(f'{tag_token} {pair.source}')))
    return tagged


class DistillResult(NamedTuple):
    """Pairs produced by an offline full-sentence model, plus what could not be produced.

    ``failures`` holds ``(line index, reason)`` for every line that failed to decode.
    """

    pairs: List[CorpusPair]
    skipped: int
    failures: List[Tuple[int, str]]


def _translate_lines(
    translator: Translator,
    lines: Sequence[str],
    subwords: SubwordModel,
    max_len_rule: MaxLenRule,
) -> Tuple[List[Tuple[int, str, str]], int, List[Tuple[int, str]]]:
    done: List[Tuple[int, str, str]] = []
    failures: List[Tuple[int, str]] = []
    skipped = 0
    for i, line in enumerate(lines):
        text = normalize(line)
        if not text:
            skipped += 1
            continue
        try:
            tokens, _ = greedy_stream_decode(translator, apply_subwords(subwords, text), WaitK.unbounded(), max_len_rule)
        except WaitkException as exc:
            failures.append((i, f'{type(exc).__name__}: {exc}'))
            continue
        output = detokenize(subwords, tokens)
        if not output:
            failures.append((i, 'empty translation'))
            continue
        done.append((i, text, output))

    if skipped:
        log.warning('skipped %d empty lines', skipped)
    if failures:
        log.warning('%d lines failed to translate', len(failures))
    return done, skipped, failures


def distill_corpus(
    translator: Translator,
    sources: Sequence[str],
    subwords: SubwordModel,
    *,
    max_len_rule: MaxLenRule = default_max_len,
) -> DistillResult:
    """Builds sequence-level distillation data: every source is paired with the
    translator's full-sentence greedy translation and tagged ``KD``.

    Empty lines are skipped and counted. Lines that fail to decode are
    recorded in the result rather than raised.
    """
    done, skipped, failures = _translate_lines(translator, sources, subwords, max_len_rule)
    pairs = [CorpusPair(source, target, Tag.distilled) for _, source, target in done]
    log.info('distilled %d of %d sources', len(pairs), len(sources))
    return DistillResult(pairs, skipped, failures)


def back_translate(
    reverse_model: Translator,
    targets: Sequence[str],
    subwords: SubwordModel,
    tag: str = Special.bt.token,
    *,
    max_len_rule: MaxLenRule = default_max_len,
) -> DistillResult:
    """Builds tagged back-translation data from monolingual target text.

    ``reverse_model`` translates target to source offline; the synthetic
    source is prefixed with ``tag`` and the pair tagged ``BT``.
    """
    if tag not in TAG_TOKENS:
        raise VocabularyError(f'{tag!r} is not a registered tag, expected one of {sorted(TAG_TOKENS)}')
    done, skipped, failures = _translate_lines(reverse_model, targets, subwords, max_len_rule)
    pairs = [CorpusPair(f'{tag} {synthetic}', target, Tag.back_translated) for _, target, synthetic in done]
    log.info('back-translated %d of %d targets', len(pairs), len(targets))
    return DistillResult(pairs, skipped, failures)


def synth_task_generate(
    task: SynthTask,
    n: int,
    len_range: Tuple[int, int],
    vocab_size: int,
    seed: int,
) -> List[CorpusPair]:
    """Generates a synthetic parallel corpus over words ``s0..s{vocab_size - 1}``.

    ``copy`` repeats the source, ``reverse`` reverses it and ``dict-map``
    maps every word through a seeded bijection onto ``t*`` words, then swaps
    adjacent output words with probability 0.2.

    Raises
    ------
    ConfigError
        ``vocab_size`` is below four, ``n`` is negative or ``len_range`` is invalid.
    """
    if vocab_size < 4:
        raise ConfigError(f'vocab_size must be >= 4, got {vocab_size}')
    if n < 0:
        raise ConfigError(f'n must be >= 0, got {n}')
    low, high = len_range
    if not 1 <= low <= high:
        raise ConfigError(f'invalid length range {len_range}')

    rng = np.random.default_rng(seed)
    mapping = rng.permutation(vocab_size)
    pairs: List[CorpusPair] = []
    for _ in range(n):
        length = int(rng.integers(low, high + 1))
        ids = rng.integers(0, vocab_size, size=length).tolist()
        source = [f's{i}' for i in ids]
        if task is SynthTask.copy:
            target = list(source)
        elif task is SynthTask.reverse:
            target = source[::-1]
        else:
            target = [f't{mapping[i]}' for i in ids]
            j = 0
            while j < len(target) - 1:
                if rng.random() < 0.2:
                    target[j], target[j + 1] = target[j + 1], target[j]
                    j += 2
                else:
                    j += 1
        pairs.append(CorpusPair(' '.join(source), ' '.join(target), Tag.parallel))
    log.info('generated %d %s pairs (seed=%d)', n, task.value, seed)
    return pairs


def mix_sources(
    sources: Mapping[str, Sequence[CorpusPair]],
    temperature: float,
    total: int,
    rng: np.random.Generator,
) -> List[CorpusPair]:
    """Combines several corpora into one training set by temperature sampling.

    Sources are visited in name order. A source asked for more sentences
    than it holds is sampled with replacement.
    """
    names = sorted(sources)
    spec = SamplingSpec({name: len(sources[name]) for name in names}, temperature, total)
    counts = temperature_sample(spec, rng)
    mixed: List[CorpusPair] = []
    for name in names:
        pool = sources[name]
        count = counts[name]
        picks = rng.choice(len(pool), size=count, replace=count > len(pool))
        mixed.extend(pool[int(i)] for i in picks)
    return mixed


def read_corpus(path: PathLike) -> List[CorpusPair]:
    """Reads ``source<TAB>target[<TAB>tag]`` lines, normalising whitespace.

    Blank lines are skipped with a warning.

    Raises
    ------
    DataError
        A line has the wrong number of columns, an empty side or an unknown tag.
    """
    pairs: List[CorpusPair] = []
    blank = 0
    for number, line in enumerate(read_lines(path), start=1):
        if not line.strip():
            blank += 1
            continue
        fields = line.split('\t')
        if len(fields) not in (2, 3):
            raise DataError(f'{path}:{number}: expected 2 or 3 tab separated columns, got {len(fields)}')
        source, target = normalize(fields[0]), normalize(fields[1])
        if not source or not target:
            raise DataError(f'{path}:{number}: empty source or target')
        try:
            tag = Tag(fields[2].strip()) if len(fields) == 3 else Tag.parallel
        except ValueError:
            raise DataError(f'{path}:{number}: unknown tag {fields[2]!r}') from None
        pairs.append(CorpusPair(source, target, tag))
    if blank:
        log.warning('%s: skipped %d blank lines', path, blank)
    return pairs


def write_corpus(path: PathLike, pairs: Iterable[CorpusPair]) -> None:
    write_lines(path, (f'{pair.source}\t{pair.target}\t{pair.tag.value}' for pair in pairs))


def save_subwords(model: SubwordModel, path: PathLike) -> None:
    lines = [SUBWORD_HEADER]
    lines.extend(f'{left} {right}' for left, right in model.merges)
    lines.append(VOCAB_SENTINEL)
    lines.extend(f'{token}\t{i}' for i, token in enumerate(model.tokens))
    write_lines(path, lines)


def load_subwords(path: PathLike) -> SubwordModel:
    """Reads a subword model written by :func:`save_subwords`.

    Raises
    ------
    DataError
        The header, a merge line or the vocabulary is malformed.
    """
    lines = read_lines(path)
    if not lines or lines[0] != SUBWORD_HEADER:
        raise DataError(f'{path}: missing {SUBWORD_HEADER!r} header')
    try:
        sentinel = lines.index(VOCAB_SENTINEL)
    except ValueError:
        raise DataError(f'{path}: missing {VOCAB_SENTINEL} section') from None

    merges: List[Tuple[str, str]] = []
    for number, line in enumerate(lines[1:sentinel], start=2):
        parts = line.split(' ')
        if len(parts) != 2 or not all(parts):
            raise DataError(f'{path}:{number}: malformed merge rule {line!r}')
        merges.append((parts[0], parts[1]))

    tokens: List[str] = []
    for number, line in enumerate(lines[sentinel + 1 :], start=sentinel + 2):
        token, _, index = line.rpartition('\t')
        if not token or not index.isdigit() or int(index) != len(tokens):
            raise DataError(f'{path}:{number}: vocabulary ids must be dense and ordered')
        tokens.append(token)
    return SubwordModel(merges, tokens)
