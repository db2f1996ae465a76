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
import os
import threading
from typing import (
    Any,
    Callable,
    ClassVar,
    Dict,
    FrozenSet,
    Iterable,
    List,
    NamedTuple,
    Optional,
    Sequence,
    Tuple,
    TypeVar,
    Union,
)

from typing_extensions import Self

from .abc import Object
from .checkpoint import load_checkpoint
from .data import SubwordModel, apply_subwords, detokenize, load_subwords, normalize, punctuation_ids, segment_subwords
from .errors import ConfigError, VocabularyError
from .model import Parameters, WaitK
from .stream import (
    DEFAULT_PUNCTUATION,
    DelayTrace,
    Ensemble,
    LookaheadConfig,
    SimulationRecord,
    simulate_corpus,
    stream_decode,
)

__all__: Tuple[str, ...] = ('Engine', 'Translation')

log = logging.getLogger(__name__)

PathLike = Union[str, 'os.PathLike[str]']
F = TypeVar('F', bound=Callable[..., Any])


class Translation(NamedTuple):
    """The result of :meth:`Engine.translate`."""

    text: str
    tokens: List[int]
    trace: DelayTrace


class Engine(Object):
    """
    A simultaneous translator over an ensemble of checkpoints and a subword
    model. The engine dispatches an event whenever the underlying decode
    reads a source token, writes a target token or finishes a sentence.

    .. code-block:: python3

        engine = waitk.Engine.from_files(['averaged.wkck'], 'subwords.bpe')

        @engine.listen()
        def on_write(token: int, delay: int) -> None:
            print('wrote', token, 'after reading', delay)

        result = engine.translate('s1 s2 s3', waitk.WaitK(3))

    Parameters
    ----------
    models: Sequence[:class:`~waitk.model.Parameters`]
        The ensemble members. They must share the subword vocabulary.
    subwords: :class:`~waitk.data.SubwordModel`
        Segments input text and detokenizes output.
    punctuation: Iterable[:class:`str`]
        Marks that end a segment when segmentation is on.

    Attributes
    ----------
    subwords: :class:`~waitk.data.SubwordModel`
        The subword model.
    ensemble: :class:`~waitk.stream.Ensemble`
        The scorer every decode runs through.

    Raises
    ------
    VocabularyError
        A model's vocabulary size differs from the subword model's.
    """

    __slots__: Tuple[str, ...] = ('subwords', 'ensemble', '_marks', '_punctuation', '_listeners', '_lock')

    READ_LOG: ClassVar[str] = 'READ {token} ({count} read)'
    WRITE_LOG: ClassVar[str] = 'WRITE {token} at g={delay}'

    def __init__(
        self,
        models: Sequence[Parameters],
        subwords: SubwordModel,
        *,
        punctuation: Iterable[str] = DEFAULT_PUNCTUATION,
    ) -> None:
        ensemble = Ensemble(models)
        if ensemble.vocab_size != subwords.vocab_size:
            raise VocabularyError(
                f'models expect {ensemble.vocab_size} tokens but the subword model has {subwords.vocab_size}'
            )
        self.subwords: SubwordModel = subwords
        self.ensemble: Ensemble = ensemble
        self._marks: Tuple[str, ...] = tuple(punctuation)
        self._punctuation: FrozenSet[int] = punctuation_ids(subwords, self._marks)
        self._listeners: Dict[str, List[Callable[..., Any]]] = {}
        self._lock: threading.Lock = threading.Lock()

    @classmethod
    def from_files(cls, checkpoints: Sequence[PathLike], subwords: PathLike, **kwargs: Any) -> Self:
        """Loads every checkpoint and the subword model from disk."""
        return cls([load_checkpoint(path) for path in checkpoints], load_subwords(subwords), **kwargs)

    @property
    def punctuation(self) -> FrozenSet[int]:
        """FrozenSet[:class:`int`]: The token ids segmentation cuts after."""
        return self._punctuation

    def segment(self, ids: List[int]) -> List[List[int]]:
        """Cuts subword ids after every word that ends with a punctuation mark.

        See :func:`~waitk.data.segment_subwords`.
        """
        return segment_subwords(self.subwords, ids, self._marks)

    # Internal helper for dispatching
    def dispatch(self, event: str, *args: Any) -> None:
        event_fmt = 'on_' + event
        if event == 'read':
            log.debug(self.READ_LOG.format(token=args[0], count=args[1]))
        elif event == 'write':
            log.debug(self.WRITE_LOG.format(token=args[0], delay=args[1]))

        method = getattr(self, event_fmt, None)
        if method:
            method(*args)

        with self._lock:
            callables = list(self._listeners.get(event_fmt, []))
        for item in callables:
            item(*args)

    def listen(self, event: Optional[str] = None) -> Callable[[F], F]:
        """A decorator that registers a callback for an event. The name of the
        function is used as the event name unless otherwise specified.

        Events are ``on_read(token, n_read)``, ``on_write(token, delay)`` and
        ``on_sentence(record)``.

        .. code-block:: python3

            @engine.listen('on_sentence')
            def finished(record: waitk.SimulationRecord) -> None:
                print(record.index, record.trace)

        Parameters
        ----------
        event: Optional[:class:`str`]
            The event to listen for. If not provided, the name of the function will be used.

        Raises
        ------
        TypeError
            The object passed is not callable.
        ValueError
            The event name does not start with ``on_``.
        """

        def wrapped(func: F) -> F:
            if not callable(func):
                raise TypeError('event callback must be callable')

            event_name = event or func.__name__

            if not event_name.startswith('on_'):
                raise ValueError('event name must start with \'on_\'')

            with self._lock:
                self._listeners.setdefault(event_name, []).append(func)

            return func

        return wrapped

    def get_listeners(self, event: str) -> List[Callable[..., Any]]:
        """Retrieve all listeners that fall under the given event name.

        Parameters
        ----------
        event: :class:`str`
            The event to retrieve listeners for, e.g. ``on_write``.
        """
        return list(self._listeners.get(event, []))

    def remove_listener(self, event: str, *, callback: Optional[Callable[..., Any]] = None) -> None:
        """Removes a listener by event name and callback.

        Parameters
        ----------
        event: :class:`str`
            The event to remove the listener from.
        callback: Optional[Callable]
            The callback to remove. If not provided, all listeners for the event will be removed.
        """
        with self._lock:
            if not callback:
                self._listeners.pop(event, None)
                return

            try:
                self._listeners.get(event, []).remove(callback)
            except ValueError:
                pass

    def translate(
        self,
        text: str,
        k: WaitK,
        *,
        lookahead: Optional[LookaheadConfig] = None,
        segment: bool = False,
    ) -> Translation:
        """Simultaneously translates one line of text.

        Parameters
        ----------
        text: :class:`str`
            The source sentence.
        k: :class:`~waitk.model.WaitK`
            The schedule.
        lookahead: Optional[:class:`~waitk.stream.LookaheadConfig`]
            Enables look-ahead beam search.
        segment: :class:`bool`
            Decodes each punctuation-delimited segment from a fresh state.

        Raises
        ------
        ConfigError
            ``text`` is empty.
        """
        ids = apply_subwords(self.subwords, normalize(text))
        if not ids:
            raise ConfigError('cannot translate an empty line')
        pieces = self.segment(ids) if segment else [ids]

        tokens: List[int] = []
        traces: List[DelayTrace] = []
        for piece in pieces:
            out, trace = stream_decode(self.ensemble, piece, k, lookahead=lookahead, dispatch=self.dispatch)
            tokens.extend(out)
            traces.append(trace)
        return Translation(detokenize(self.subwords, tokens), tokens, DelayTrace.concatenate(traces))

    def simulate(
        self,
        lines: Sequence[str],
        k: WaitK,
        *,
        lookahead: Optional[LookaheadConfig] = None,
        segment: bool = False,
        workers: int = 1,
        progress: bool = False,
    ) -> List[SimulationRecord]:
        """Runs :func:`~waitk.stream.simulate_corpus` over text lines.

        Events are dispatched from the worker threads when ``workers`` is above one.
        """
        dataset = [apply_subwords(self.subwords, normalize(line)) for line in lines]
        return simulate_corpus(
            self.ensemble,
            dataset,
            k,
            lookahead=lookahead,
            segment=segment,
            segmenter=self.segment,
            workers=workers,
            progress=progress,
            dispatch=self.dispatch,
        )

    def detokenize(self, record: SimulationRecord) -> str:
        """Returns the hypothesis text of a simulation record."""
        return detokenize(self.subwords, record.hypothesis)
