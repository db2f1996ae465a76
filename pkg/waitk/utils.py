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

import hashlib
import pathlib
from typing import Any, Iterable, List, Optional, Tuple, Type, TypeVar, Union

ObjT = TypeVar('ObjT', bound='object')

__all__: Tuple[str, ...] = (
    'to_json',
    'to_string',
    'simple_repr',
    'stable_hash',
    'read_lines',
    'write_lines',
    'parse_int_list',
)


try:
    import orjson

    _has_orjson: bool = True
except ImportError:
    _has_orjson: bool = False
    import json

if _has_orjson:

    def to_json(string: Union[str, bytes]) -> Any:
        return orjson.loads(string)

    def to_string(data: Any) -> str:
        return orjson.dumps(data, option=orjson.OPT_SORT_KEYS).decode('utf-8')

else:

    def to_json(string: Union[str, bytes]) -> Any:
        return json.loads(string)

    def to_string(data: Any) -> str:
        return json.dumps(data, sort_keys=True, separators=(',', ':'), ensure_ascii=False)


def stable_hash(data: Any) -> str:
    """Returns a hex digest identifying a JSON-serialisable value.

    Keys are sorted before hashing so two equal mappings always produce
    the same digest, regardless of insertion order.

    Parameters
    ----------
    data: Any
        The value to hash.

    Returns
    -------
    :class:`str`
        The first 16 hex characters of the sha256 digest.
    """
    return hashlib.sha256(to_string(data).encode('utf-8')).hexdigest()[:16]


def read_lines(path: Union[str, pathlib.Path]) -> List[str]:
    """Reads a UTF-8 text file into a list of lines without trailing newlines."""
    with open(path, 'r', encoding='utf-8') as fp:
        return [line.rstrip('\n').rstrip('\r') for line in fp]


def write_lines(path: Union[str, pathlib.Path], lines: Iterable[str]) -> None:
    with open(path, 'w', encoding='utf-8', newline='\n') as fp:
        for line in lines:
            fp.write(line)
            fp.write('\n')


def parse_int_list(value: str) -> List[Optional[int]]:
    """Parses a comma separated list of counts where ``inf`` stands for no bound.

    .. code-block:: python3

        >>> parse_int_list('1,3,inf')
        [1, 3, None]
    """
    from .errors import ConfigError

    out: List[Optional[int]] = []
    for item in value.split(','):
        item = item.strip()
        if not item:
            continue
        if item.lower() in {'inf', 'infinity', 'full'}:
            out.append(None)
            continue
        try:
            out.append(int(item))
        except ValueError:
            raise ConfigError(f'expected an integer or inf, got {item!r}') from None
    return out


def simple_repr(cls: Type[ObjT]) -> Type[ObjT]:
    """Creates a simple repr for the given class.

    .. code-block:: python3

        @simple_repr
        class MyObject:
            __slots__ = ('id', 'name')

    Parameters
    ----------
    cls: Type
        The class to attach the repr to. Public names in ``__slots__`` are shown.
    """
    cls_slots: Optional[Iterable[str]] = getattr(cls, '__slots__', None)

    def __repr__(self: ObjT) -> str:
        if not cls_slots:
            return f'<{cls.__name__}>'

        fields = ' '.join(f'{attr}={getattr(self, attr)!r}' for attr in cls_slots if not attr.startswith('_'))
        return f'<{cls.__name__} {fields}>'

    setattr(cls, '__repr__', __repr__)

    return cls
