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
import pathlib
import re
import struct
import zlib
from typing import Dict, List, Mapping, Tuple, Union

import numpy as np

from .errors import CheckpointError
from .model import ModelConfig, Parameters

__all__: Tuple[str, ...] = (
    'MAGIC',
    'VERSION',
    'encode_tensors',
    'decode_tensors',
    'save_checkpoint',
    'load_checkpoint',
    'checkpoint_name',
    'latest_checkpoints',
)

log = logging.getLogger(__name__)

PathLike = Union[str, 'os.PathLike[str]']

MAGIC: bytes = b'WKCK'
VERSION: int = 1
CONFIG_PREFIX: str = '__config__.'

_HEADER = struct.Struct('<4sII')
_NAME_LEN = struct.Struct('<H')
_RANK = struct.Struct('<B')
_EXTENT = struct.Struct('<Q')
_CRC = struct.Struct('<I')
_CHECKPOINT_RE = re.compile(r'^checkpoint_(\d+)\.wkck$')


def encode_tensors(tensors: Mapping[str, np.ndarray]) -> bytes:
    """Serialises named tensors, sorted by name, as little-endian 32-bit floats.

    Layout: ``WKCK``, u32 version, u32 count, then per tensor a u16 name
    length, the UTF-8 name, a u8 rank, u64 extents and the payload. A u32
    CRC-32 of every tensor record closes the file.
    """
    records = bytearray()
    for name in sorted(tensors):
        encoded = name.encode('utf-8')
        value = np.asarray(tensors[name])
        records += _NAME_LEN.pack(len(encoded))
        records += encoded
        records += _RANK.pack(value.ndim)
        for extent in value.shape:
            records += _EXTENT.pack(extent)
        records += np.ascontiguousarray(value, dtype='<f4').tobytes()

    return _HEADER.pack(MAGIC, VERSION, len(tensors)) + bytes(records) + _CRC.pack(zlib.crc32(records))


def decode_tensors(data: bytes) -> Dict[str, np.ndarray]:
    """Parses the output of :func:`encode_tensors` into 64-bit arrays.

    Raises
    ------
    CheckpointError
        The magic, version or CRC is wrong, or the data is truncated.
    """
    if len(data) < _HEADER.size + _CRC.size:
        raise CheckpointError('checkpoint is truncated')
    magic, version, count = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise CheckpointError(f'bad checkpoint magic {magic!r}')
    if version != VERSION:
        raise CheckpointError(f'unsupported checkpoint version {version}')

    body = data[_HEADER.size : -_CRC.size]
    (crc,) = _CRC.unpack_from(data, len(data) - _CRC.size)
    if zlib.crc32(body) != crc:
        raise CheckpointError('checkpoint CRC mismatch')

    tensors: Dict[str, np.ndarray] = {}
    offset = 0
    try:
        for _ in range(count):
            (name_len,) = _NAME_LEN.unpack_from(body, offset)
            offset += _NAME_LEN.size
            name = body[offset : offset + name_len].decode('utf-8')
            offset += name_len
            (rank,) = _RANK.unpack_from(body, offset)
            offset += _RANK.size
            shape = tuple(_EXTENT.unpack_from(body, offset + i * _EXTENT.size)[0] for i in range(rank))
            offset += rank * _EXTENT.size
            size = int(np.prod(shape, dtype=np.int64)) if shape else 1
            payload = np.frombuffer(body, dtype='<f4', count=size, offset=offset)
            offset += size * 4
            tensors[name] = payload.astype(np.float64).reshape(shape)
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        raise CheckpointError(f'malformed checkpoint record: {exc}') from exc

    if offset != len(body):
        raise CheckpointError(f'{len(body) - offset} trailing bytes after {count} tensors')
    return tensors


def _config_tensors(config: ModelConfig) -> Dict[str, np.ndarray]:
    return {f'{CONFIG_PREFIX}{key}': np.asarray([value], dtype=np.float64) for key, value in config.to_dict().items()}


def _config_from_tensors(tensors: Mapping[str, np.ndarray]) -> ModelConfig:
    fields: Dict[str, Union[int, float]] = {}
    for name, value in tensors.items():
        if not name.startswith(CONFIG_PREFIX):
            continue
        key = name[len(CONFIG_PREFIX) :]
        scalar = float(value.reshape(-1)[0])
        # Floats went through 32 bits; 7 significant digits recover the written value.
        fields[key] = float(f'{scalar:.7g}') if key in {'dropout', 'label_smoothing'} else int(round(scalar))
    if not fields:
        raise CheckpointError('checkpoint carries no model config')
    return ModelConfig.from_dict(fields)


def save_checkpoint(params: Parameters, path: PathLike) -> pathlib.Path:
    """Writes ``params`` and their config to ``path``.

    Returns
    -------
    :class:`pathlib.Path`
        The written path.
    """
    tensors: Dict[str, np.ndarray] = dict(params)
    tensors.update(_config_tensors(params.config))
    target = pathlib.Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_bytes(encode_tensors(tensors))
    log.info('wrote checkpoint %s (%d tensors)', target, len(params))
    return target


def load_checkpoint(path: PathLike) -> Parameters:
    """Reads a checkpoint written by :func:`save_checkpoint`.

    Raises
    ------
    CheckpointError
        The file can not be read or decoded.
    """
    try:
        data = pathlib.Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f'can not read checkpoint {path}: {exc}') from exc
    tensors = decode_tensors(data)
    config = _config_from_tensors(tensors)
    weights = {name: value for name, value in tensors.items() if not name.startswith(CONFIG_PREFIX)}
    return Parameters(config, weights)


def checkpoint_name(step: int) -> str:
    return f'checkpoint_{step:06d}.wkck'


def latest_checkpoints(directory: PathLike, n: int) -> List[pathlib.Path]:
    """Returns the ``n`` highest-numbered ``checkpoint_*.wkck`` files in ``directory``, oldest first."""
    found: List[Tuple[int, pathlib.Path]] = []
    for entry in pathlib.Path(directory).iterdir():
        match = _CHECKPOINT_RE.match(entry.name)
        if match:
            found.append((int(match.group(1)), entry))
    found.sort()
    return [path for _, path in found[-n:]] if n > 0 else []
