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
from concurrent.futures import ThreadPoolExecutor
from typing import (
    Any,
    Callable,
    Collection,
    Dict,
    Iterable,
    List,
    Mapping,
    NamedTuple,
    Optional,
    Protocol,
    Sequence,
    Tuple,
    TypeVar,
    Union,
    runtime_checkable,
)

import numpy as np
from tqdm import tqdm
from typing_extensions import Self

from .abc import Object
from .enums import Action, Special
from .errors import ConfigError, PolicyError, VocabularyError, WaitkException
from .model import EncoderState, Parameters, WaitK, decoder_step, encode_incremental
from .numerics import logsumexp
from .utils import simple_repr

__all__: Tuple[str, ...] = (
    'DelayTrace',
    'StreamState',
    'LookaheadConfig',
    'Scorer',
    'Ensemble',
    'SimulationRecord',
    'DEFAULT_PUNCTUATION',
    'default_max_len',
    'policy_action',
    'ensemble_logprobs',
    'stream_decode',
    'greedy_stream_decode',
    'lookahead_step',
    'segment_stream',
    'simulate_corpus',
)

log = logging.getLogger(__name__)

T = TypeVar('T')
Dispatch = Callable[..., None]
MaxLenRule = Callable[[int], int]
Segmenter = Callable[[List[int]], List[List[int]]]

DEFAULT_PUNCTUATION: Tuple[str, ...] = ('.', '!', '?', '。', '！', '？')


def default_max_len(src_len: int) -> int:
    return 2 * src_len + 10


@simple_repr
class DelayTrace(Object):
    """The delays ``g(1..tgt_len)`` of one decode: ``g[t - 1]`` source tokens had
    been read when target token ``t`` was committed.

    Parameters
    ----------
    g: Sequence[:class:`int`]
        The delays, non-decreasing and within ``[1, src_len]``.
    src_len: :class:`int`
        Length of the full source.
    tgt_len: Optional[:class:`int`]
        Length of the target. Defaults to ``len(g)`` and must agree with it.

    Raises
    ------
    ConfigError
        The delays break one of the rules above.
    """

    __slots__: Tuple[str, ...] = ('g', 'src_len', 'tgt_len')

    def __init__(self, g: Sequence[int], src_len: int, tgt_len: Optional[int] = None) -> None:
        delays = tuple(int(d) for d in g)
        length = len(delays) if tgt_len is None else tgt_len
        if length != len(delays):
            raise ConfigError(f'trace holds {len(delays)} delays but tgt_len is {length}')
        if src_len < 1:
            raise ConfigError(f'trace src_len must be >= 1, got {src_len}')
        previous = 1
        for t, delay in enumerate(delays, start=1):
            if not previous <= delay <= src_len:
                raise ConfigError(f'g({t})={delay} breaks 1 <= g non-decreasing <= {src_len}')
            previous = delay

        self.g: Tuple[int, ...] = delays
        self.src_len: int = src_len
        self.tgt_len: int = length

    def __eq__(self, __other: object) -> bool:
        if not isinstance(__other, DelayTrace):
            return False
        return (self.g, self.src_len) == (__other.g, __other.src_len)

    def __ne__(self, __other: object) -> bool:
        return not self.__eq__(__other)

    def __hash__(self) -> int:
        return hash((self.g, self.src_len))

    @classmethod
    def concatenate(cls, traces: Sequence[DelayTrace]) -> Self:
        """Joins consecutive segment traces, offsetting each by the sources before it."""
        offset = 0
        g: List[int] = []
        for trace in traces:
            g.extend(delay + offset for delay in trace.g)
            offset += trace.src_len
        return cls(g, offset)

    def to_dict(self) -> Dict[str, Any]:
        return {'g': list(self.g), 'src_len': self.src_len, 'tgt_len': self.tgt_len}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> Self:
        return cls(data['g'], int(data['src_len']), int(data['tgt_len']))


@simple_repr
class LookaheadConfig(Object):
    """Look-ahead beam search settings.

    Attributes
    ----------
    m: :class:`int`
        How many future tokens each write explores. At least two.
    width: :class:`int`
        Hypotheses kept per depth.
    """

    __slots__: Tuple[str, ...] = ('m', 'width')

    def __init__(self, m: int, width: int) -> None:
        if m < 2:
            raise ConfigError(f'look-ahead depth must be >= 2, got {m}')
        if width < 1:
            raise ConfigError(f'beam width must be >= 1, got {width}')
        self.m: int = m
        self.width: int = width


@runtime_checkable
class Scorer(Protocol):
    """Anything that can score the next target token of a streaming decode.

    ``start`` returns the opaque per-source state, ``extend`` feeds it one more
    source token and ``logprobs`` returns log-probabilities over the vocabulary.
    """

    @property
    def vocab_size(self) -> int: ...

    def start(self) -> Any: ...

    def extend(self, states: Any, token: int) -> Any: ...

    def logprobs(self, states: Any, visible: int, prefix: Sequence[int], history: Sequence[int]) -> np.ndarray: ...


@simple_repr
class Ensemble(Object):
    """A :class:`Scorer` over one or more models sharing a vocabulary.

    Member log-probabilities are averaged elementwise and renormalised with
    logsumexp. A single-member ensemble returns its model's scores unchanged.

    Raises
    ------
    ConfigError
        No models were given.
    VocabularyError
        The models disagree on the vocabulary size.
    """

    __slots__: Tuple[str, ...] = ('models',)

    def __init__(self, models: Sequence[Parameters]) -> None:
        if not models:
            raise ConfigError('an ensemble needs at least one model')
        sizes = {params.config.vocab_size for params in models}
        if len(sizes) != 1:
            raise VocabularyError(f'ensemble members disagree on vocabulary size: {sorted(sizes)}')
        self.models: Tuple[Parameters, ...] = tuple(models)

    @property
    def vocab_size(self) -> int:
        return self.models[0].config.vocab_size

    def start(self) -> Tuple[EncoderState, ...]:
        return tuple(EncoderState.empty(params.config) for params in self.models)

    def extend(self, states: Sequence[EncoderState], token: int) -> Tuple[EncoderState, ...]:
        return tuple(encode_incremental(state, params, token) for state, params in zip(states, self.models))

    def logprobs(
        self,
        states: Sequence[EncoderState],
        visible: int,
        prefix: Sequence[int],
        history: Sequence[int],
    ) -> np.ndarray:
        scores = [decoder_step(params, state, visible, prefix, history) for params, state in zip(self.models, states)]
        if len(scores) == 1:
            return scores[0]
        mean = np.mean(np.stack(scores), axis=0)
        return mean - logsumexp(mean)


def _as_scorer(models: Union[Scorer, Sequence[Parameters]]) -> Scorer:
    if isinstance(models, Scorer):
        return models
    return Ensemble(list(models))


@simple_repr
class StreamState(Object):
    """One in-flight simultaneous decode, owned by a single worker.

    Attributes
    ----------
    src_read: List[:class:`int`]
        Source tokens consumed so far.
    src_exhausted: :class:`bool`
        Whether the source stream has ended.
    tgt_emitted: List[:class:`int`]
        Target tokens committed so far.
    delays: List[:class:`int`]
        ``len(src_read)`` at the moment each target token was committed.
    enc_states: Any
        The scorer state, one encoder state per ensemble member.
    finished: :class:`bool`
        Whether end-of-sequence was produced.
    """

    __slots__: Tuple[str, ...] = ('src_read', 'src_exhausted', 'tgt_emitted', 'delays', 'enc_states', 'finished')

    def __init__(self, enc_states: Any = None) -> None:
        self.src_read: List[int] = []
        self.src_exhausted: bool = False
        self.tgt_emitted: List[int] = []
        self.delays: List[int] = []
        self.enc_states: Any = enc_states
        self.finished: bool = False

    def trace(self) -> DelayTrace:
        return DelayTrace(self.delays, len(self.src_read))


def policy_action(state: StreamState, k: WaitK) -> Action:
    """Decides whether the next wait-k move reads a source token or writes a target token.

    Raises
    ------
    PolicyError
        The decode already finished.
    """
    if state.finished:
        raise PolicyError('policy queried after end-of-sequence was emitted')
    if state.src_exhausted:
        return Action.write
    if k.k is None:
        return Action.read
    t = len(state.tgt_emitted) + 1
    return Action.write if len(state.src_read) >= k.k + t - 1 else Action.read


def ensemble_logprobs(models: Union[Scorer, Sequence[Parameters]], state: StreamState) -> np.ndarray:
    """Scores the next target token of ``state`` with every model and combines them."""
    scorer = _as_scorer(models)
    return scorer.logprobs(state.enc_states, len(state.src_read), state.tgt_emitted, state.delays)


def _best(logprobs: np.ndarray) -> int:
    # argmax keeps the lowest id among ties
    return int(np.argmax(logprobs))


def lookahead_step(
    models: Union[Scorer, Sequence[Parameters]],
    state: StreamState,
    cfg: LookaheadConfig,
    k: Optional[WaitK] = None,
) -> int:
    """Picks the next token by exploring ``cfg.m`` future tokens with a beam of ``cfg.width``.

    The look-ahead runs under the current visibility and never reads more
    source. Path scores are summed log-probabilities; a path that produces
    end-of-sequence stops there. Only the first token of the best path is
    returned, ties going to the lexicographically smallest path.

    Raises
    ------
    PolicyError
        The decode finished, or ``k`` is given and the policy wants a READ.
    """
    if state.finished:
        raise PolicyError('look-ahead requested after end-of-sequence was emitted')
    if k is not None and policy_action(state, k) is not Action.write:
        raise PolicyError('look-ahead requested while the policy wants to READ')
    if not state.src_read:
        raise PolicyError('look-ahead requested before any source token was read')

    scorer = _as_scorer(models)
    visible = len(state.src_read)
    eos = int(Special.eos)
    beams: List[Tuple[float, Tuple[int, ...]]] = [(0.0, ())]
    done: List[Tuple[float, Tuple[int, ...]]] = []

    for _ in range(cfg.m):
        candidates: List[Tuple[float, Tuple[int, ...]]] = []
        for score, path in beams:
            history = [*state.delays, *([visible] * len(path))]
            logprobs = scorer.logprobs(state.enc_states, visible, [*state.tgt_emitted, *path], history)
            for token in np.argsort(-logprobs, kind='stable')[: cfg.width]:
                candidates.append((score + float(logprobs[token]), (*path, int(token))))

        candidates.sort(key=lambda c: (-c[0], c[1]))
        beams = []
        for candidate in candidates[: cfg.width]:
            (done if candidate[1][-1] == eos else beams).append(candidate)
        if not beams:
            break

    best = min(done + beams, key=lambda c: (-c[0], c[1]))
    log.debug('look-ahead picked path %s (score %.4f)', best[1], best[0])
    return best[1][0]


def stream_decode(
    models: Union[Scorer, Sequence[Parameters]],
    source: Iterable[int],
    k: WaitK,
    *,
    lookahead: Optional[LookaheadConfig] = None,
    max_len_rule: MaxLenRule = default_max_len,
    dispatch: Optional[Dispatch] = None,
) -> Tuple[List[int], DelayTrace]:
    """Runs the wait-k READ/WRITE loop over a source token stream.

    Each WRITE commits the greedy token, or the :func:`lookahead_step` choice
    when ``lookahead`` is given, and records ``g(t) = len(src_read)``. The
    loop stops at end-of-sequence (which is not part of the output) or once
    the target reaches ``max_len_rule(|x|)``. While the source is still
    streaming the target is held to ``max_len_rule`` of what has been read.

    Parameters
    ----------
    models: Union[:class:`Scorer`, Sequence[:class:`Parameters`]]
        A scorer, or models to wrap in an :class:`Ensemble`.
    source: Iterable[:class:`int`]
        The source token ids, consumed lazily.
    k: :class:`WaitK`
        The schedule.
    lookahead: Optional[:class:`LookaheadConfig`]
        Enables look-ahead beam search.
    max_len_rule: Callable[[:class:`int`], :class:`int`]
        Maps a source length to the longest allowed target.
    dispatch: Optional[Callable[..., None]]
        Receives ``('read', token, n_read)`` and ``('write', token, delay)`` events.

    Returns
    -------
    Tuple[List[:class:`int`], :class:`DelayTrace`]
        The target ids and their delays.

    Raises
    ------
    ConfigError
        The source is empty.
    """
    scorer = _as_scorer(models)
    iterator = iter(source)
    state = StreamState(scorer.start())

    def read() -> None:
        token = next(iterator, None)
        if token is None:
            state.src_exhausted = True
            return
        state.enc_states = scorer.extend(state.enc_states, int(token))
        state.src_read.append(int(token))
        if dispatch is not None:
            dispatch('read', int(token), len(state.src_read))

    while not state.finished:
        action = policy_action(state, k)
        if action is Action.write and not state.src_exhausted:
            if len(state.tgt_emitted) >= max_len_rule(len(state.src_read)):
                action = Action.read
        if action is Action.read:
            read()
            continue

        if not state.src_read:
            raise ConfigError('cannot decode an empty source')
        if len(state.tgt_emitted) >= max_len_rule(len(state.src_read)):
            break

        if lookahead is None:
            token = _best(ensemble_logprobs(scorer, state))
        else:
            token = lookahead_step(scorer, state, lookahead)

        if token == int(Special.eos):
            state.finished = True
            break
        delay = len(state.src_read)
        state.tgt_emitted.append(token)
        state.delays.append(delay)
        if dispatch is not None:
            dispatch('write', token, delay)

    # The trace needs |x| even when the target ended early.
    remaining = sum(1 for _ in iterator) if not state.src_exhausted else 0
    return state.tgt_emitted, DelayTrace(state.delays, len(state.src_read) + remaining)


def greedy_stream_decode(
    models: Union[Scorer, Sequence[Parameters]],
    source: Iterable[int],
    k: WaitK,
    max_len_rule: MaxLenRule = default_max_len,
) -> Tuple[List[int], DelayTrace]:
    """Greedy wait-k decoding, see :func:`stream_decode`."""
    return stream_decode(models, source, k, max_len_rule=max_len_rule)


def segment_stream(tokens: Iterable[T], punctuation: Collection[T]) -> List[List[T]]:
    """Cuts a token stream after every punctuation token.

    Material after the last punctuation token becomes a final segment.

    .. code-block:: python3

        >>> segment_stream('a . b'.split(), {'.'})
        [['a', '.'], ['b']]
    """
    segments: List[List[T]] = []
    current: List[T] = []
    for token in tokens:
        current.append(token)
        if token in punctuation:
            segments.append(current)
            current = []
    if current:
        segments.append(current)
    return segments


class SimulationRecord(NamedTuple):
    """The outcome of simulating one source sentence.

    ``trace`` covers the whole line, with segment traces offset and joined;
    ``segments`` holds the per-segment traces. On failure ``error`` is set and
    the hypothesis is empty.
    """

    index: int
    hypothesis: List[int]
    trace: Optional[DelayTrace]
    segments: Tuple[DelayTrace, ...]
    error: Optional[str] = None


def simulate_corpus(
    models: Union[Scorer, Sequence[Parameters]],
    dataset: Sequence[Sequence[int]],
    k: WaitK,
    *,
    lookahead: Optional[LookaheadConfig] = None,
    segment: bool = False,
    punctuation: Collection[int] = frozenset(),
    segmenter: Optional[Segmenter] = None,
    max_len_rule: MaxLenRule = default_max_len,
    workers: int = 1,
    progress: bool = False,
    dispatch: Optional[Dispatch] = None,
) -> List[SimulationRecord]:
    """Simultaneously translates every source sentence of ``dataset``.

    With ``segment`` each sentence is cut by ``segmenter``, or by
    :func:`segment_stream` over ``punctuation`` when none is given, and every
    segment decoded from a fresh state; the segment hypotheses are
    concatenated and their traces offset by the sources before them.
    Decode errors are recorded on the sentence's record and logged.

    Parameters
    ----------
    models: Union[:class:`Scorer`, Sequence[:class:`Parameters`]]
        The scorer or ensemble members.
    dataset: Sequence[Sequence[:class:`int`]]
        Source id sequences.
    k: :class:`WaitK`
        The schedule.
    lookahead: Optional[:class:`LookaheadConfig`]
        Enables look-ahead beam search.
    segment: :class:`bool`
        Enables sentence segmentation.
    punctuation: Collection[:class:`int`]
        The token ids segmentation cuts after when no ``segmenter`` is given.
    segmenter: Optional[Callable[[List[:class:`int`]], List[List[:class:`int`]]]]
        Splits a source into the segments to decode, e.g. :func:`~waitk.data.segment_subwords`
        bound to a subword model.
    max_len_rule: Callable[[:class:`int`], :class:`int`]
        Maximum target length per decoded stream.
    workers: :class:`int`
        Threads to spread sentences over. Records keep input order.
    progress: :class:`bool`
        Shows a progress bar.
    dispatch: Optional[Callable[..., None]]
        Receives the decode events plus ``('sentence', record)`` per finished sentence.

    Raises
    ------
    ConfigError
        ``dataset`` is empty or ``workers`` is below one.
    """
    if not dataset:
        raise ConfigError('cannot simulate an empty dataset')
    if workers < 1:
        raise ConfigError(f'workers must be >= 1, got {workers}')
    scorer = _as_scorer(models)

    def run(index: int) -> SimulationRecord:
        source = list(dataset[index])
        hypothesis: List[int] = []
        traces: List[DelayTrace] = []
        try:
            if not segment:
                pieces = [source]
            elif segmenter is not None:
                pieces = segmenter(source)
            else:
                pieces = segment_stream(source, punctuation)
            if not pieces:
                raise ConfigError('cannot decode an empty source')
            for piece in pieces:
                tokens, trace = stream_decode(
                    scorer, piece, k, lookahead=lookahead, max_len_rule=max_len_rule, dispatch=dispatch
                )
                hypothesis.extend(tokens)
                traces.append(trace)
        except WaitkException as exc:
            log.warning('sentence %d failed to decode: %s', index, exc)
            return SimulationRecord(index, [], None, (), f'{type(exc).__name__}: {exc}')

        record = SimulationRecord(index, hypothesis, DelayTrace.concatenate(traces), tuple(traces))
        if dispatch is not None:
            dispatch('sentence', record)
        return record

    indices = range(len(dataset))
    bar = tqdm(total=len(dataset), desc=f'simulate k={k}', disable=not progress, leave=False)
    records: List[SimulationRecord] = []
    if workers == 1:
        for index in indices:
            records.append(run(index))
            bar.update(1)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for record in pool.map(run, indices):
                records.append(record)
                bar.update(1)
    bar.close()

    failed = sum(1 for record in records if record.error is not None)
    log.info('simulated %d sentences at k=%s (%d failed)', len(records), k, failed)
    return records
