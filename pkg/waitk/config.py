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
import datetime
import enum
import logging
import os
import pathlib
from typing import Any, Collection, Dict, FrozenSet, List, Mapping, Sequence, Tuple, Union

from .abc import Object
from .errors import ConfigError
from .utils import read_lines, simple_repr, stable_hash, to_string

__all__: Tuple[str, ...] = ('RunConfig', 'read_config_file', 'merge_config_file')

log = logging.getLogger(__name__)

PathLike = Union[str, 'os.PathLike[str]']

MANIFEST_NAME: str = 'manifest.json'


def _plain(value: Any) -> Any:
    if isinstance(value, enum.Enum):
        return value.value
    if isinstance(value, (str, int, float, bool)) or value is None:
        return value
    if isinstance(value, os.PathLike):
        return os.fspath(value)  # pyright: ignore[reportUnknownArgumentType]
    if isinstance(value, Mapping):
        return {str(k): _plain(v) for k, v in value.items()}  # pyright: ignore[reportUnknownVariableType]
    if isinstance(value, (list, tuple, set, frozenset)):
        return [_plain(v) for v in value]  # pyright: ignore[reportUnknownVariableType]
    return str(value)


@simple_repr
class RunConfig(Object):
    """The resolved settings of one command invocation.

    .. container:: operations

        .. describe:: x == y

            Returns True if both configs resolve to the same settings.

        .. describe:: x != y

            Returns True if the configs differ.

        .. describe:: hash(x)

            Returns the hash of the config.

    Attributes
    ----------
    command: :class:`str`
        The command name, e.g. ``train`` or ``data synth``.
    seed: :class:`int`
        The seed every random choice of the run derives from.
    options: Dict[:class:`str`, Any]
        Every other resolved flag value, JSON friendly.
    """

    __slots__: Tuple[str, ...] = ('command', 'seed', 'options')

    def __init__(self, command: str, options: Mapping[str, Any], *, seed: int = 0) -> None:
        self.command: str = command
        self.seed: int = int(seed)
        self.options: Dict[str, Any] = {key: _plain(value) for key, value in sorted(options.items())}

    @classmethod
    def from_namespace(cls, command: str, namespace: argparse.Namespace) -> RunConfig:
        options = {key: value for key, value in vars(namespace).items() if not callable(value) and key != 'seed'}
        return cls(command, options, seed=getattr(namespace, 'seed', 0) or 0)

    def __eq__(self, __o: object) -> bool:
        if not isinstance(__o, self.__class__):
            return False
        return self.to_dict() == __o.to_dict()

    def __ne__(self, __o: object) -> bool:
        return not self.__eq__(__o)

    def __hash__(self) -> int:
        return hash(self.config_hash())

    def to_dict(self) -> Dict[str, Any]:
        """Dict[:class:`str`, Any]: The command, seed and options."""
        return {'command': self.command, 'seed': self.seed, 'options': dict(self.options)}

    def config_hash(self) -> str:
        """:class:`str`: A digest of :meth:`to_dict` that is stable across runs."""
        return stable_hash(self.to_dict())

    def write_manifest(self, directory: PathLike) -> pathlib.Path:
        """Writes ``manifest.json`` with every resolved value, the config hash and a timestamp.

        Returns
        -------
        :class:`pathlib.Path`
            The manifest path.
        """
        from . import __version__

        target = pathlib.Path(directory)
        target.mkdir(parents=True, exist_ok=True)
        manifest = {
            **self.to_dict(),
            'config_hash': self.config_hash(),
            'created': datetime.datetime.now(datetime.timezone.utc).isoformat(),
            'version': __version__,
        }
        path = target / MANIFEST_NAME
        path.write_text(to_string(manifest) + '\n', encoding='utf-8')
        log.debug('wrote manifest %s', path)
        return path


def read_config_file(path: PathLike) -> Dict[str, str]:
    """Reads ``key=value`` lines. Blank lines and ``#`` comments are ignored.

    Raises
    ------
    ConfigError
        The file is missing or a line has no ``=``.
    """
    try:
        lines = read_lines(path)
    except OSError as exc:
        raise ConfigError(f'can not read config file {path}: {exc}') from exc

    values: Dict[str, str] = {}
    for number, line in enumerate(lines, start=1):
        text = line.strip()
        if not text or text.startswith('#'):
            continue
        key, sep, value = text.partition('=')
        if not sep or not key.strip():
            raise ConfigError(f'{path}:{number}: expected key=value, got {line!r}')
        values[key.strip().replace('_', '-')] = value.strip()
    return values


GLOBAL_FLAGS: FrozenSet[str] = frozenset({'quiet', 'verbose'})


def merge_config_file(
    argv: Sequence[str], values: Mapping[str, str], global_flags: Collection[str] = GLOBAL_FLAGS
) -> List[str]:
    """Adds the config file ``values`` to ``argv`` as flags, skipping every
    flag ``argv`` already sets so the command line wins.

    ``true``/``false`` values toggle switch flags. Keys in ``global_flags``
    belong to the top-level parser and go before the subcommand; the rest are
    appended after it.
    """
    explicit = {arg.split('=', 1)[0] for arg in argv if arg.startswith('--')}
    leading: List[str] = []
    trailing: List[str] = []
    for key, value in values.items():
        flag = f'--{key}'
        if flag in explicit:
            continue
        target = leading if key in global_flags else trailing
        lowered = value.lower()
        if lowered == 'true':
            target.append(flag)
        elif lowered != 'false':
            target.extend([flag, value])
    return [*leading, *argv, *trailing]
