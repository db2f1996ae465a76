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

import functools
import logging
import math
from typing import Any, Callable, ClassVar, Dict, Iterator, List, Mapping, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from typing_extensions import Self

from .abc import Object, ValueObject
from .enums import Special
from .errors import ConfigError, PolicyError, ShapeMismatch, VocabularyError
from .numerics import Tensor, log_softmax, xavier_uniform
from .utils import simple_repr

__all__: Tuple[str, ...] = (
    'ModelConfig',
    'Parameters',
    'EncoderState',
    'WaitK',
    'MultipathRange',
    'Batch',
    'expected_shapes',
    'init_params',
    'visible_sources',
    'encode_full',
    'encode_incremental',
    'decoder_step',
    'sequence_loss',
    'multipath_loss',
    'average_checkpoints',
)

log = logging.getLogger(__name__)

Shape = Tuple[int, ...]


@simple_repr
class ModelConfig(ValueObject):
    """The shape of one encoder-decoder model.

    .. container:: operations

        .. describe:: x == y

            Whether two configs describe the same architecture.

        .. describe:: hash(x)

            Returns the hash of the config.

    Parameters
    ----------
    enc_layers: :class:`int`
        Number of encoder layers.
    dec_layers: :class:`int`
        Number of decoder layers.
    d_model: :class:`int`
        Width of every hidden state. Must be divisible by ``heads``.
    d_ff: :class:`int`
        Inner width of the feed-forward blocks.
    heads: :class:`int`
        Number of attention heads.
    vocab_size: :class:`int`
        Size of the joint source/target vocabulary, specials included.
    dropout: :class:`float`
        Residual dropout rate used during training, in ``[0, 1)``.
    max_positions: :class:`int`
        Longest source or target sequence the model accepts.
    label_smoothing: :class:`float`
        Label smoothing applied by the training loss.

    Raises
    ------
    ConfigError
        A field is out of range.
    """

    __slots__: Tuple[str, ...] = (
        'enc_layers',
        'dec_layers',
        'd_model',
        'd_ff',
        'heads',
        'vocab_size',
        'dropout',
        'max_positions',
        'label_smoothing',
    )

    __key_fields__: Tuple[str, ...] = __slots__

    PRESETS: ClassVar[Dict[str, Dict[str, Any]]] = {
        'base-toy': {'enc_layers': 2, 'dec_layers': 2, 'd_model': 64, 'd_ff': 256, 'heads': 4},
        'deep-toy': {'enc_layers': 4, 'dec_layers': 1, 'd_model': 48, 'd_ff': 192, 'heads': 4},
    }

    def __init__(
        self,
        *,
        enc_layers: int,
        dec_layers: int,
        d_model: int,
        d_ff: int,
        heads: int,
        vocab_size: int,
        dropout: float = 0.1,
        max_positions: int = 256,
        label_smoothing: float = 0.1,
    ) -> None:
        counts = {
            'enc_layers': enc_layers,
            'dec_layers': dec_layers,
            'd_model': d_model,
            'd_ff': d_ff,
            'heads': heads,
            'max_positions': max_positions,
        }
        for name, value in counts.items():
            if value < 1:
                raise ConfigError(f'{name} must be >= 1, got {value}')
        if vocab_size < len(Special):
            raise ConfigError(f'vocab_size must cover the {len(Special)} special tokens, got {vocab_size}')
        if d_model % heads:
            raise ConfigError(f'd_model ({d_model}) must be divisible by heads ({heads})')
        if not 0.0 <= dropout < 1.0:
            raise ConfigError(f'dropout must be in [0, 1), got {dropout}')
        if not 0.0 <= label_smoothing < 1.0:
            raise ConfigError(f'label_smoothing must be in [0, 1), got {label_smoothing}')

        self.enc_layers: int = int(enc_layers)
        self.dec_layers: int = int(dec_layers)
        self.d_model: int = int(d_model)
        self.d_ff: int = int(d_ff)
        self.heads: int = int(heads)
        self.vocab_size: int = int(vocab_size)
        self.dropout: float = float(dropout)
        self.max_positions: int = int(max_positions)
        self.label_smoothing: float = float(label_smoothing)

    @classmethod
    def preset(cls, name: str, *, vocab_size: int, **overrides: Any) -> Self:
        """Builds a config from one of the named :attr:`PRESETS`.

        Parameters
        ----------
        name: :class:`str`
            ``base-toy`` or ``deep-toy``.
        vocab_size: :class:`int`
            The vocabulary size, which no preset fixes.
        **overrides: Any
            Fields to change from the preset.
        """
        try:
            fields = dict(cls.PRESETS[name])
        except KeyError:
            raise ConfigError(f'unknown preset {name!r}, expected one of {sorted(cls.PRESETS)}') from None
        fields.update(overrides)
        return cls(vocab_size=vocab_size, **fields)

    def to_dict(self) -> Dict[str, Any]:
        return {name: getattr(self, name) for name in self.__slots__}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> Self:
        unknown = set(data) - set(cls.__slots__)
        if unknown:
            raise ConfigError(f'unknown model config fields: {sorted(unknown)}')
        return cls(**dict(data))

    @property
    def head_dim(self) -> int:
        return self.d_model // self.heads


def expected_shapes(config: ModelConfig) -> Dict[str, Shape]:
    """Returns the name to shape map every :class:`Parameters` of ``config`` must have.

    Weights follow the ``x @ W`` convention. The output projection is tied to
    ``decoder.embed``.
    """
    d, f, vocab = config.d_model, config.d_ff, config.vocab_size
    shapes: Dict[str, Shape] = {}

    def attention(prefix: str) -> None:
        for proj in ('q', 'k', 'v', 'o'):
            shapes[f'{prefix}.{proj}.weight'] = (d, d)
            shapes[f'{prefix}.{proj}.bias'] = (d,)

    def norm(prefix: str) -> None:
        shapes[f'{prefix}.gain'] = (d,)
        shapes[f'{prefix}.bias'] = (d,)

    def ffn(prefix: str) -> None:
        shapes[f'{prefix}.fc1.weight'] = (d, f)
        shapes[f'{prefix}.fc1.bias'] = (f,)
        shapes[f'{prefix}.fc2.weight'] = (f, d)
        shapes[f'{prefix}.fc2.bias'] = (d,)

    shapes['encoder.embed'] = (vocab, d)
    for i in range(config.enc_layers):
        prefix = f'encoder.layers.{i}'
        attention(f'{prefix}.self_attn')
        norm(f'{prefix}.norm1')
        norm(f'{prefix}.norm2')
        ffn(f'{prefix}.ffn')
    norm('encoder.norm')

    shapes['decoder.embed'] = (vocab, d)
    for i in range(config.dec_layers):
        prefix = f'decoder.layers.{i}'
        attention(f'{prefix}.self_attn')
        attention(f'{prefix}.cross_attn')
        norm(f'{prefix}.norm1')
        norm(f'{prefix}.norm2')
        norm(f'{prefix}.norm3')
        ffn(f'{prefix}.ffn')
    norm('decoder.norm')

    return shapes


@simple_repr
class Parameters(Object, Mapping[str, np.ndarray]):
    """The named weight tensors of one encoder-decoder model.

    Parameters behave as a read-only mapping from tensor name to a 64-bit
    :class:`numpy.ndarray`. Iteration is in sorted name order.

    .. container:: operations

        .. describe:: x[name]

            Returns the tensor called ``name``.

        .. describe:: len(x)

            Returns the number of tensors.

        .. describe:: iter(x)

            Iterates over the tensor names, sorted.

    Attributes
    ----------
    config: :class:`ModelConfig`
        The architecture these tensors belong to.
    """

    __slots__: Tuple[str, ...] = ('config', '_tensors')

    def __init__(self, config: ModelConfig, tensors: Mapping[str, np.ndarray]) -> None:
        shapes = expected_shapes(config)
        if set(tensors) != set(shapes):
            missing = sorted(set(shapes) - set(tensors))
            extra = sorted(set(tensors) - set(shapes))
            raise ShapeMismatch('parameters', missing, extra)

        converted: Dict[str, np.ndarray] = {}
        for name in sorted(shapes):
            value = np.asarray(tensors[name], dtype=np.float64)
            if value.shape != shapes[name]:
                raise ShapeMismatch(name, shapes[name], value.shape)
            converted[name] = value

        self.config: ModelConfig = config
        self._tensors: Dict[str, np.ndarray] = converted

    def __getitem__(self, name: str) -> np.ndarray:
        return self._tensors[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._tensors)

    def __len__(self) -> int:
        return len(self._tensors)

    @property
    def signature(self) -> Tuple[Tuple[str, Shape], ...]:
        """Tuple[Tuple[:class:`str`, Tuple[:class:`int`, ...]], ...]: The sorted (name, shape) pairs."""
        return tuple((name, tuple(value.shape)) for name, value in self._tensors.items())

    @property
    def num_parameters(self) -> int:
        return int(sum(value.size for value in self._tensors.values()))

    def replace(self, tensors: Mapping[str, np.ndarray]) -> Parameters:
        """Returns new parameters of the same config holding ``tensors``."""
        return Parameters(self.config, tensors)


@simple_repr
class WaitK(ValueObject):
    """A wait-k schedule: read ``k`` source tokens, then alternate one write per read.

    ``k`` is ``None`` for the unbounded (full-sentence) schedule.

    .. container:: operations

        .. describe:: str(x)

            Returns ``k`` or ``inf`` for the unbounded schedule.
    """

    __slots__: Tuple[str, ...] = ('k',)

    __key_fields__: Tuple[str, ...] = ('k',)

    def __init__(self, k: Optional[int]) -> None:
        if k is not None and k < 1:
            raise ConfigError(f'k must be >= 1, got {k}')
        self.k: Optional[int] = k

    @classmethod
    def unbounded(cls) -> Self:
        return cls(None)

    @classmethod
    def parse(cls, value: Union[str, int, None]) -> Self:
        if value is None or isinstance(value, int):
            return cls(value)
        text = value.strip().lower()
        if text in {'inf', 'infinity', 'full'}:
            return cls(None)
        try:
            return cls(int(text))
        except ValueError:
            raise ConfigError(f'invalid k {value!r}') from None

    @property
    def bounded(self) -> bool:
        return self.k is not None

    def __str__(self) -> str:
        return 'inf' if self.k is None else str(self.k)


@simple_repr
class MultipathRange(Object):
    """The range ``[k_min, k_max]`` training draws its per-batch ``k`` from."""

    __slots__: Tuple[str, ...] = ('k_min', 'k_max')

    def __init__(self, k_min: int, k_max: int) -> None:
        if k_min < 1:
            raise ConfigError(f'k_min must be >= 1, got {k_min}')
        if k_min > k_max:
            raise ConfigError(f'k_min ({k_min}) must not exceed k_max ({k_max})')
        self.k_min: int = k_min
        self.k_max: int = k_max

    def draw(self, rng: np.random.Generator) -> WaitK:
        return WaitK(int(rng.integers(self.k_min, self.k_max + 1)))


class Batch(NamedTuple):
    """A batch of id sequences. Targets carry neither BOS nor EOS."""

    sources: Sequence[Sequence[int]]
    targets: Sequence[Sequence[int]]


@simple_repr
class EncoderState(Object):
    """The cached encoder computation over the source positions read so far.

    Every array has one row per encoded position. Extending a state returns a
    new object; the arrays of the old one are never written to.

    Attributes
    ----------
    keys: Tuple[:class:`numpy.ndarray`, ...]
        Self-attention keys per encoder layer, shape ``(length, d_model)``.
    values: Tuple[:class:`numpy.ndarray`, ...]
        Self-attention values per encoder layer.
    hidden: Tuple[:class:`numpy.ndarray`, ...]
        Output of every encoder layer.
    memory: :class:`numpy.ndarray`
        The normalised top layer the decoder attends to.
    """

    __slots__: Tuple[str, ...] = ('keys', 'values', 'hidden', 'memory')

    def __init__(
        self,
        keys: Sequence[np.ndarray],
        values: Sequence[np.ndarray],
        hidden: Sequence[np.ndarray],
        memory: np.ndarray,
    ) -> None:
        self.keys: Tuple[np.ndarray, ...] = tuple(keys)
        self.values: Tuple[np.ndarray, ...] = tuple(values)
        self.hidden: Tuple[np.ndarray, ...] = tuple(hidden)
        self.memory: np.ndarray = memory

    @classmethod
    def empty(cls, config: ModelConfig) -> Self:
        blank = np.zeros((0, config.d_model), dtype=np.float64)
        layers = config.enc_layers
        return cls([blank] * layers, [blank] * layers, [blank] * layers, blank)

    @property
    def length(self) -> int:
        """:class:`int`: The number of source positions encoded."""
        return int(self.memory.shape[0])


def init_params(config: ModelConfig, seed: int) -> Parameters:
    """Initialises a fresh model.

    Weights and embeddings are Xavier-uniform, biases zero and norm gains one.
    Tensors are filled in sorted name order from one seeded generator, so
    ``(config, seed)`` fully determines the result.
    """
    rng = np.random.default_rng(seed)
    tensors: Dict[str, np.ndarray] = {}
    for name, shape in sorted(expected_shapes(config).items()):
        if name.endswith('.gain'):
            tensors[name] = np.ones(shape)
        elif name.endswith('.bias'):
            tensors[name] = np.zeros(shape)
        else:
            tensors[name] = xavier_uniform(rng, shape)
    params = Parameters(config, tensors)
    log.debug('initialised %d parameters (seed=%d)', params.num_parameters, seed)
    return params


def visible_sources(k: WaitK, t: int, src_len: int) -> int:
    """Returns how many source tokens target step ``t`` may see under ``k``.

    This is ``min(k + t - 1, src_len)``, or ``src_len`` for the unbounded schedule.

    Raises
    ------
    ConfigError
        ``t`` is below one or ``src_len`` is negative.
    """
    if t < 1:
        raise ConfigError(f'target step must be >= 1, got {t}')
    if src_len < 0:
        raise ConfigError(f'source length must be >= 0, got {src_len}')
    if k.k is None:
        return src_len
    return min(k.k + t - 1, src_len)


@functools.lru_cache(maxsize=8)
def _positions(max_positions: int, d_model: int) -> np.ndarray:
    pos = np.arange(max_positions, dtype=np.float64)[:, None]
    rates = np.power(10000.0, -np.arange(0, d_model, 2, dtype=np.float64) / d_model)
    table = np.zeros((max_positions, d_model))
    table[:, 0::2] = np.sin(pos * rates)
    table[:, 1::2] = np.cos(pos * rates)[:, : d_model // 2]
    table.setflags(write=False)
    return table


def _check_ids(ids: Sequence[int], vocab_size: int) -> None:
    for token in ids:
        if not 0 <= token < vocab_size:
            raise VocabularyError(f'token id {token} outside of vocabulary of size {vocab_size}')


def _leaves(params: Mapping[str, np.ndarray], requires_grad: bool = False) -> Dict[str, Tensor]:
    return {name: Tensor(value, requires_grad=requires_grad) for name, value in params.items()}


def _linear(x: Tensor, p: Mapping[str, Tensor], name: str) -> Tensor:
    return x @ p[f'{name}.weight'] + p[f'{name}.bias']


def _norm(x: Tensor, p: Mapping[str, Tensor], name: str) -> Tensor:
    return x.layer_norm(p[f'{name}.gain'], p[f'{name}.bias'])


def _feed_forward(x: Tensor, p: Mapping[str, Tensor], name: str) -> Tensor:
    return _linear(_linear(x, p, f'{name}.fc1').relu(), p, f'{name}.fc2')


def _attend(q: Tensor, k: Tensor, v: Tensor, mask: np.ndarray, heads: int) -> Tensor:
    # q: (B, nq, d); k, v: (B, nk, d); mask broadcasts to (B, nq, nk).
    batch, nq, d = q.shape
    nk = k.shape[1]
    dh = d // heads
    qh = q.reshape(batch, nq, heads, dh).transpose(0, 2, 1, 3)
    kh = k.reshape(batch, nk, heads, dh).transpose(0, 2, 3, 1)
    vh = v.reshape(batch, nk, heads, dh).transpose(0, 2, 1, 3)
    probs = ((qh @ kh) * (1.0 / math.sqrt(dh))).masked_softmax(mask[:, None, :, :])
    return (probs @ vh).transpose(0, 2, 1, 3).reshape(batch, nq, d)


def _embed(table: Tensor, ids: np.ndarray, offset: int, config: ModelConfig) -> Tensor:
    n = ids.shape[1]
    pe = _positions(config.max_positions, config.d_model)[offset : offset + n]
    return table.take(ids) * math.sqrt(config.d_model) + Tensor(pe)


class _EncoderPass(NamedTuple):
    memory: Tensor
    hidden: List[Tensor]
    keys: List[Tensor]
    values: List[Tensor]


def _encoder(
    p: Mapping[str, Tensor],
    config: ModelConfig,
    h: Tensor,
    mask: np.ndarray,
    past: Optional[EncoderState] = None,
    rng: Optional[np.random.Generator] = None,
) -> _EncoderPass:
    rate = config.dropout
    hidden: List[Tensor] = []
    keys: List[Tensor] = []
    values: List[Tensor] = []
    for i in range(config.enc_layers):
        prefix = f'encoder.layers.{i}'
        a = _norm(h, p, f'{prefix}.norm1')
        q = _linear(a, p, f'{prefix}.self_attn.q')
        k = _linear(a, p, f'{prefix}.self_attn.k')
        v = _linear(a, p, f'{prefix}.self_attn.v')
        if past is not None:
            k_all = Tensor(np.concatenate([past.keys[i], k.data[0]])[None])
            v_all = Tensor(np.concatenate([past.values[i], v.data[0]])[None])
        else:
            k_all, v_all = k, v
        ctx = _attend(q, k_all, v_all, mask, config.heads)
        h = h + _linear(ctx, p, f'{prefix}.self_attn.o').dropout(rate, rng)
        h = h + _feed_forward(_norm(h, p, f'{prefix}.norm2'), p, f'{prefix}.ffn').dropout(rate, rng)
        hidden.append(h)
        keys.append(k)
        values.append(v)
    return _EncoderPass(_norm(h, p, 'encoder.norm'), hidden, keys, values)


def _causal(n: int) -> np.ndarray:
    return np.tril(np.ones((n, n), dtype=bool))[None]


def encode_full(params: Parameters, src_tokens: Sequence[int]) -> EncoderState:
    """Encodes a whole source prefix with causal self-attention.

    Position ``i`` only ever attends to positions ``0..i``, so the rows of
    the returned state are exactly what :func:`encode_incremental` builds one
    token at a time.

    Raises
    ------
    VocabularyError
        A token id lies outside of the vocabulary.
    ConfigError
        The source is longer than ``max_positions``.
    """
    config = params.config
    tokens = list(src_tokens)
    if not tokens:
        return EncoderState.empty(config)
    if len(tokens) > config.max_positions:
        raise ConfigError(f'source of length {len(tokens)} exceeds max_positions={config.max_positions}')
    _check_ids(tokens, config.vocab_size)

    p = _leaves(params)
    ids = np.asarray([tokens], dtype=np.int64)
    out = _encoder(p, config, _embed(p['encoder.embed'], ids, 0, config), _causal(len(tokens)))
    return EncoderState(
        [k.data[0] for k in out.keys],
        [v.data[0] for v in out.values],
        [h.data[0] for h in out.hidden],
        out.memory.data[0],
    )


def encode_incremental(state: EncoderState, params: Parameters, next_token: int) -> EncoderState:
    """Extends ``state`` by one source token, reusing every cached position.

    Raises
    ------
    VocabularyError
        ``next_token`` lies outside of the vocabulary.
    ConfigError
        The state already holds ``max_positions`` positions.
    """
    config = params.config
    position = state.length
    if position >= config.max_positions:
        raise ConfigError(f'cannot encode position {position}: max_positions={config.max_positions}')
    _check_ids([next_token], config.vocab_size)

    p = _leaves(params)
    ids = np.asarray([[next_token]], dtype=np.int64)
    mask = np.ones((1, 1, position + 1), dtype=bool)
    out = _encoder(p, config, _embed(p['encoder.embed'], ids, position, config), mask, past=state)
    return EncoderState(
        [np.concatenate([old, new.data[0]]) for old, new in zip(state.keys, out.keys)],
        [np.concatenate([old, new.data[0]]) for old, new in zip(state.values, out.values)],
        [np.concatenate([old, new.data[0]]) for old, new in zip(state.hidden, out.hidden)],
        np.concatenate([state.memory, out.memory.data[0]]),
    )


def _decoder(
    p: Mapping[str, Tensor],
    config: ModelConfig,
    memory: Tensor,
    tgt_in: np.ndarray,
    cross_mask: np.ndarray,
    rng: Optional[np.random.Generator] = None,
) -> Tensor:
    rate = config.dropout
    table = p['decoder.embed']
    h = _embed(table, tgt_in, 0, config).dropout(rate, rng)
    self_mask = _causal(tgt_in.shape[1])
    for i in range(config.dec_layers):
        prefix = f'decoder.layers.{i}'
        a = _norm(h, p, f'{prefix}.norm1')
        ctx = _attend(
            _linear(a, p, f'{prefix}.self_attn.q'),
            _linear(a, p, f'{prefix}.self_attn.k'),
            _linear(a, p, f'{prefix}.self_attn.v'),
            self_mask,
            config.heads,
        )
        h = h + _linear(ctx, p, f'{prefix}.self_attn.o').dropout(rate, rng)

        b = _norm(h, p, f'{prefix}.norm2')
        ctx = _attend(
            _linear(b, p, f'{prefix}.cross_attn.q'),
            _linear(memory, p, f'{prefix}.cross_attn.k'),
            _linear(memory, p, f'{prefix}.cross_attn.v'),
            cross_mask,
            config.heads,
        )
        h = h + _linear(ctx, p, f'{prefix}.cross_attn.o').dropout(rate, rng)
        h = h + _feed_forward(_norm(h, p, f'{prefix}.norm3'), p, f'{prefix}.ffn').dropout(rate, rng)

    return _norm(h, p, 'decoder.norm') @ table.transpose(1, 0)


def decoder_step(
    params: Parameters,
    enc_state: EncoderState,
    visible: int,
    tgt_prefix: Sequence[int],
    history: Optional[Sequence[int]] = None,
) -> np.ndarray:
    """Scores the next target token given the first ``visible`` encoded source positions.

    Parameters
    ----------
    params: :class:`Parameters`
        The model.
    enc_state: :class:`EncoderState`
        The encoded source read so far.
    visible: :class:`int`
        How many source positions the new target position may attend to.
    tgt_prefix: Sequence[:class:`int`]
        The target tokens committed so far, without BOS.
    history: Optional[Sequence[:class:`int`]]
        The visibility each committed target position had when it was
        scored, usually the delay trace so far. Without it every position sees
        ``visible`` sources.

    Returns
    -------
    :class:`numpy.ndarray`
        Log-probabilities over the vocabulary.

    Raises
    ------
    PolicyError
        ``visible`` exceeds the number of encoded positions.
    ConfigError
        ``visible`` is below one or the prefix is too long.
    VocabularyError
        A prefix token lies outside of the vocabulary.
    """
    config = params.config
    if visible > enc_state.length:
        raise PolicyError(f'{visible} source positions requested but only {enc_state.length} are encoded')
    if visible < 1:
        raise ConfigError('at least one source position must be visible')
    prefix = list(tgt_prefix)
    if len(prefix) + 1 > config.max_positions:
        raise ConfigError(f'target prefix of length {len(prefix)} exceeds max_positions={config.max_positions}')
    _check_ids(prefix, config.vocab_size)

    n = len(prefix) + 1
    limits = np.full(n, visible, dtype=np.int64)
    if history:
        upto = min(len(history), n - 1)
        limits[:upto] = np.minimum(np.asarray(history[:upto], dtype=np.int64), visible)
    cross_mask = (np.arange(visible)[None, :] < limits[:, None])[None]

    p = _leaves(params)
    tgt_in = np.asarray([[int(Special.bos)] + prefix], dtype=np.int64)
    memory = Tensor(enc_state.memory[:visible][None])
    logits = _decoder(p, config, memory, tgt_in, cross_mask)
    return log_softmax(logits.data[0, -1])


class _Arrays(NamedTuple):
    src: np.ndarray
    src_len: np.ndarray
    tgt_in: np.ndarray
    tgt_out: np.ndarray
    weights: np.ndarray


def _pad(batch: Batch, config: ModelConfig) -> _Arrays:
    if not batch.sources or len(batch.sources) != len(batch.targets):
        raise ConfigError('a batch needs at least one aligned source/target pair')
    size = len(batch.sources)
    src_len = np.asarray([len(s) for s in batch.sources], dtype=np.int64)
    if (src_len < 1).any():
        raise ConfigError('batch contains an empty source')
    ns = int(src_len.max())
    nt = max(len(t) for t in batch.targets) + 1
    if ns > config.max_positions or nt > config.max_positions:
        raise ConfigError(f'batch sequence exceeds max_positions={config.max_positions}')

    pad = int(Special.pad)
    src = np.full((size, ns), pad, dtype=np.int64)
    tgt_in = np.full((size, nt), pad, dtype=np.int64)
    tgt_out = np.full((size, nt), pad, dtype=np.int64)
    weights = np.zeros((size, nt))
    for b, (source, target) in enumerate(zip(batch.sources, batch.targets)):
        _check_ids(source, config.vocab_size)
        _check_ids(target, config.vocab_size)
        src[b, : len(source)] = source
        tgt_in[b, : len(target) + 1] = [int(Special.bos), *target]
        tgt_out[b, : len(target) + 1] = [*target, int(Special.eos)]
        weights[b, : len(target) + 1] = 1.0
    return _Arrays(src, src_len, tgt_in, tgt_out, weights)


def _wait_k_mask(k: WaitK, src_len: np.ndarray, nt: int, ns: int) -> np.ndarray:
    # Target position j (0-based) sees min(k + j, src_len) sources.
    steps = np.arange(nt)[None, :]
    if k.k is None:
        limit = np.broadcast_to(src_len[:, None], (len(src_len), nt))
    else:
        limit = np.minimum(k.k + steps, src_len[:, None])
    return np.arange(ns)[None, None, :] < limit[:, :, None]


def _loss_tensor(
    p: Mapping[str, Tensor],
    config: ModelConfig,
    arrays: _Arrays,
    k: WaitK,
    rng: Optional[np.random.Generator],
) -> Tensor:
    src, src_len, tgt_in, tgt_out, weights = arrays
    h = _embed(p['encoder.embed'], src, 0, config).dropout(config.dropout, rng)
    memory = _encoder(p, config, h, _causal(src.shape[1]), rng=rng).memory
    cross_mask = _wait_k_mask(k, src_len, tgt_in.shape[1], src.shape[1])
    logits = _decoder(p, config, memory, tgt_in, cross_mask, rng)
    size, nt, vocab = logits.shape
    return logits.reshape(size * nt, vocab).cross_entropy(
        tgt_out.reshape(-1), weights.reshape(-1), config.label_smoothing
    )


def sequence_loss(
    params: Parameters,
    batch: Batch,
    k: WaitK,
    rng: Optional[np.random.Generator] = None,
) -> Tuple[float, Dict[str, np.ndarray]]:
    """Teacher-forced, label-smoothed cross entropy under a fixed wait-k mask.

    The encoder runs once over the padded batch; only the decoder's
    cross-attention mask depends on ``k``.

    Parameters
    ----------
    params: :class:`Parameters`
        The model.
    batch: :class:`Batch`
        Source and target id sequences.
    k: :class:`WaitK`
        The schedule to train under. :meth:`WaitK.unbounded` gives the
        ordinary full-sentence loss.
    rng: Optional[:class:`numpy.random.Generator`]
        Drives dropout. Without it dropout is off.

    Returns
    -------
    Tuple[:class:`float`, Dict[:class:`str`, :class:`numpy.ndarray`]]
        The mean loss per target token and its gradient for every tensor.

    Raises
    ------
    ConfigError
        The batch is empty or holds an empty source.
    """
    arrays = _pad(batch, params.config)
    p = _leaves(params, requires_grad=True)
    loss = _loss_tensor(p, params.config, arrays, k, rng)
    loss.backward()
    grads = {
        name: (leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)) for name, leaf in p.items()
    }
    return loss.item(), grads


def multipath_loss(
    params: Parameters,
    batch: Batch,
    range: MultipathRange,
    rng: np.random.Generator,
    *,
    train: bool = True,
    dispatch: Optional[Callable[..., None]] = None,
) -> Tuple[float, Dict[str, np.ndarray]]:
    """Draws one ``k`` uniformly from ``range`` for the whole batch and returns
    :func:`sequence_loss` under it.

    ``train=False`` keeps dropout off while still consuming the draw.
    ``dispatch`` receives ``('draw', k)`` before the loss is computed.
    """
    k = range.draw(rng)
    log.debug('multipath batch of %d pairs drew k=%s', len(batch.sources), k)
    if dispatch is not None:
        dispatch('draw', k)
    return sequence_loss(params, batch, k, rng if train else None)


def average_checkpoints(params_list: Sequence[Parameters]) -> Parameters:
    """Returns the elementwise arithmetic mean of several checkpoints.

    The sum is taken over the sorted deviations from the elementwise minimum,
    so the result does not depend on the order of ``params_list`` and
    averaging identical checkpoints returns them unchanged.

    Raises
    ------
    ConfigError
        ``params_list`` is empty.
    ShapeMismatch
        The checkpoints do not share a config and name/shape signature.
    """
    if not params_list:
        raise ConfigError('average_checkpoints needs at least one checkpoint')

    first = params_list[0]
    for other in params_list[1:]:
        if other.signature != first.signature:
            raise ShapeMismatch('checkpoint signature', first.signature, other.signature)
        if other.config != first.config:
            raise ShapeMismatch('checkpoint config', first.config.to_dict(), other.config.to_dict())

    n = len(params_list)
    averaged: Dict[str, np.ndarray] = {}
    for name in first:
        stacked = np.stack([params[name] for params in params_list])
        low = stacked.min(axis=0)
        averaged[name] = low + np.sort(stacked - low, axis=0).sum(axis=0) / n
    log.info('averaged %d checkpoints', n)
    return first.replace(averaged)
