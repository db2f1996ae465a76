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
import math
import os
import pathlib
from typing import ClassVar, Iterator, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from tqdm import tqdm

from .abc import Object
from .checkpoint import checkpoint_name, latest_checkpoints, load_checkpoint, save_checkpoint
from .errors import ConfigError, NumericError
from .model import Batch, MultipathRange, Parameters, WaitK, average_checkpoints, multipath_loss, sequence_loss
from .numerics import AdamState, adam_step
from .utils import simple_repr

__all__: Tuple[str, ...] = ('Trainer', 'TrainResult', 'make_batches')

log = logging.getLogger(__name__)

PathLike = Union[str, 'os.PathLike[str]']
IdPair = Tuple[Sequence[int], Sequence[int]]


def make_batches(pairs: Sequence[IdPair], batch_tokens: int, rng: np.random.Generator) -> List[Batch]:
    """Shuffles ``pairs`` and groups them into batches of roughly ``batch_tokens``
    source plus target tokens. A pair longer than the budget gets its own batch.
    """
    if batch_tokens < 1:
        raise ConfigError(f'batch_tokens must be >= 1, got {batch_tokens}')
    order = rng.permutation(len(pairs))
    batches: List[Batch] = []
    sources: List[Sequence[int]] = []
    targets: List[Sequence[int]] = []
    tokens = 0
    for index in order:
        source, target = pairs[int(index)]
        size = len(source) + len(target) + 1
        if sources and tokens + size > batch_tokens:
            batches.append(Batch(sources, targets))
            sources, targets, tokens = [], [], 0
        sources.append(source)
        targets.append(target)
        tokens += size
    if sources:
        batches.append(Batch(sources, targets))
    return batches


class TrainResult(NamedTuple):
    params: Parameters
    losses: List[float]
    checkpoints: List[pathlib.Path]


@simple_repr
class Trainer(Object):
    """Trains a model with Adam under multi-path or fixed-k wait-k masks.

    Exactly one of ``k_range`` and ``fixed_k`` must be given. Batches are
    reshuffled every epoch from a generator seeded with ``seed``, which also
    draws ``k`` and the dropout masks, so a run is fully determined by its
    inputs.

    Parameters
    ----------
    params: :class:`~waitk.model.Parameters`
        The starting point.
    pairs: Sequence[Tuple[Sequence[:class:`int`], Sequence[:class:`int`]]]
        Encoded ``(source, target)`` training pairs.
    k_range: Optional[:class:`~waitk.model.MultipathRange`]
        Draw one ``k`` per batch from this range.
    fixed_k: Optional[:class:`~waitk.model.WaitK`]
        Train every batch with this ``k``.
    batch_tokens: :class:`int`
        Token budget per batch.
    seed: :class:`int`
        Seed for shuffling, ``k`` draws and dropout.
    base_lr: :class:`float`
        Scale of the inverse square root schedule.
    warmup_steps: :class:`int`
        Warmup length of the schedule.
    out_dir: Optional[Union[:class:`str`, :class:`os.PathLike`]]
        Where checkpoints and ``metrics.tsv`` go. Nothing is written without it.
    checkpoint_every: :class:`int`
        Save a numbered checkpoint every this many steps.
    progress: :class:`bool`
        Shows a progress bar.
    """

    __slots__: Tuple[str, ...] = (
        'params',
        'pairs',
        'k_range',
        'fixed_k',
        'batch_tokens',
        'seed',
        'out_dir',
        'checkpoint_every',
        'progress',
        'state',
        '_rng',
    )

    STEP_LOG: ClassVar[str] = 'step {step} k={k} loss={loss:.4f} lr={lr:.2e} tokens={tokens}'

    def __init__(
        self,
        params: Parameters,
        pairs: Sequence[IdPair],
        *,
        k_range: Optional[MultipathRange] = None,
        fixed_k: Optional[WaitK] = None,
        batch_tokens: int = 2000,
        seed: int = 0,
        base_lr: float = 0.1,
        warmup_steps: int = 400,
        out_dir: Optional[PathLike] = None,
        checkpoint_every: int = 100,
        progress: bool = False,
    ) -> None:
        if (k_range is None) == (fixed_k is None):
            raise ConfigError('exactly one of k_range and fixed_k must be given')
        if not pairs:
            raise ConfigError('cannot train on an empty corpus')
        if checkpoint_every < 1:
            raise ConfigError(f'checkpoint_every must be >= 1, got {checkpoint_every}')

        self.params: Parameters = params
        self.pairs: Sequence[IdPair] = pairs
        self.k_range: Optional[MultipathRange] = k_range
        self.fixed_k: Optional[WaitK] = fixed_k
        self.batch_tokens: int = batch_tokens
        self.seed: int = seed
        self.out_dir: Optional[pathlib.Path] = pathlib.Path(out_dir) if out_dir is not None else None
        self.checkpoint_every: int = checkpoint_every
        self.progress: bool = progress
        self.state: AdamState = AdamState(base_lr=base_lr, warmup_steps=warmup_steps)
        self._rng: np.random.Generator = np.random.default_rng(seed)

    def _batches(self) -> Iterator[Batch]:
        while True:
            yield from make_batches(self.pairs, self.batch_tokens, self._rng)

    def step(self, batch: Batch) -> Tuple[float, str]:
        """Runs one optimizer update on ``batch``.

        Returns
        -------
        Tuple[:class:`float`, :class:`str`]
            The loss before the update and the ``k`` it was computed under.

        Raises
        ------
        NumericError
            The loss or a gradient is not finite.
        """
        if self.k_range is not None:
            drawn: List[WaitK] = []
            loss, grads = multipath_loss(
                self.params, batch, self.k_range, self._rng, dispatch=lambda event, k: drawn.append(k)
            )
            k = drawn[0]
        else:
            k = self.fixed_k or WaitK.unbounded()
            loss, grads = sequence_loss(self.params, batch, k, self._rng)
        if not math.isfinite(loss):
            raise NumericError(f'non-finite loss {loss!r} at step {self.state.step + 1}')
        tensors, self.state = adam_step(self.params, grads, self.state)
        self.params = self.params.replace(tensors)
        return loss, str(k)

    def run(self, steps: int, *, average_last: int = 0) -> TrainResult:
        """Trains for ``steps`` updates.

        With an ``out_dir``, numbered checkpoints are written every
        ``checkpoint_every`` steps, ``checkpoint_last.wkck`` at the end, one
        ``metrics.tsv`` row per step and, when ``average_last`` is positive,
        ``averaged.wkck`` from the last ``average_last`` numbered checkpoints.
        """
        if steps < 1:
            raise ConfigError(f'steps must be >= 1, got {steps}')

        metrics = None
        if self.out_dir is not None:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            metrics = open(self.out_dir / 'metrics.tsv', 'w', encoding='utf-8', newline='\n')
            metrics.write('step\tk\tloss\tlr\ttokens\n')

        losses: List[float] = []
        written: List[pathlib.Path] = []
        batches = self._batches()
        try:
            for _ in tqdm(range(steps), desc='train', disable=not self.progress):
                batch = next(batches)
                lr = self.state.learning_rate()
                loss, k = self.step(batch)
                losses.append(loss)
                step = self.state.step
                tokens = sum(len(s) + len(t) + 1 for s, t in zip(batch.sources, batch.targets))
                log.debug(self.STEP_LOG.format(step=step, k=k, loss=loss, lr=lr, tokens=tokens))
                if metrics is not None:
                    metrics.write(f'{step}\t{k}\t{loss!r}\t{lr!r}\t{tokens}\n')
                if self.out_dir is not None and step % self.checkpoint_every == 0:
                    written.append(save_checkpoint(self.params, self.out_dir / checkpoint_name(step)))
        finally:
            if metrics is not None:
                metrics.close()

        if self.out_dir is not None:
            written.append(save_checkpoint(self.params, self.out_dir / 'checkpoint_last.wkck'))
            if average_last > 0:
                paths = latest_checkpoints(self.out_dir, average_last)
                if paths:
                    averaged = average_checkpoints([load_checkpoint(path) for path in paths])
                    written.append(save_checkpoint(averaged, self.out_dir / 'averaged.wkck'))
                else:
                    log.warning('no numbered checkpoints to average in %s', self.out_dir)

        log.info('trained %d steps, loss %.4f -> %.4f', steps, losses[0], losses[-1])
        return TrainResult(self.params, losses, written)

