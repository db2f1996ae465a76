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

from typing import Any, ClassVar, Optional, Sequence, Tuple

from .abc import Object

__all__: Tuple[str, ...] = (
    'WaitkException',
    'ConfigError',
    'PolicyError',
    'DataError',
    'VocabularyError',
    'CheckpointError',
    'ShapeMismatch',
    'NumericError',
    'NonDeterministicError',
)


class WaitkException(Exception, Object):
    """The base waitk Exception. All waitk Exceptions inherit from this.

    Attributes
    ----------
    exit_code: :class:`int`
        The process exit code the command line uses when this exception escapes a command.
    """

    __slots__: Tuple[str, ...] = ()

    exit_code: ClassVar[int] = 1


class ConfigError(WaitkException, ValueError):
    """An exception raised when a configuration value or a precondition of an
    operation is invalid.

    This inherits from :class:`WaitkException` and :class:`ValueError`.
    """

    __slots__: Tuple[str, ...] = ()


class PolicyError(WaitkException, RuntimeError):
    """An exception raised when a streaming decode is driven in a way the
    READ/WRITE policy does not allow, for example asking for an action after
    the end-of-sequence token was emitted.

    This inherits from :class:`WaitkException` and :class:`RuntimeError`.
    """

    __slots__: Tuple[str, ...] = ()


class DataError(WaitkException):
    """An exception raised when input data or a file is malformed.

    This inherits from :class:`WaitkException`.
    """

    __slots__: Tuple[str, ...] = ()

    exit_code: ClassVar[int] = 2


class VocabularyError(DataError):
    """An exception raised when a token id lies outside of the vocabulary or a
    tag token is not a registered special.

    This inherits from :class:`DataError`.
    """

    __slots__: Tuple[str, ...] = ()


class CheckpointError(DataError):
    """An exception raised when a checkpoint file can not be decoded.

    This inherits from :class:`DataError`.
    """

    __slots__: Tuple[str, ...] = ()


class ShapeMismatch(DataError, ValueError):
    """An exception raised when two tensor collections that should share a
    name/shape signature do not.

    This inherits from :class:`DataError` and :class:`ValueError`.

    Attributes
    ----------
    name: Optional[:class:`str`]
        The tensor name that failed to line up, if known.
    expected: Any
        The expected shape or signature.
    got: Any
        The shape or signature that was found instead.
    """

    __slots__: Tuple[str, ...] = ('name', 'expected', 'got')

    def __init__(
        self,
        name: Optional[str] = None,
        expected: Any = None,
        got: Any = None,
        *args: Any,
    ) -> None:
        self.name: Optional[str] = name
        self.expected: Any = expected
        self.got: Any = got

        message_fmt = f'{name or "No name"}: expected {_fmt_shape(expected)}, got {_fmt_shape(got)}.'
        super().__init__(message_fmt, *args)


def _fmt_shape(shape: Any) -> str:
    if isinstance(shape, Sequence) and not isinstance(shape, str):
        return '(' + ', '.join(str(s) for s in shape) + ')'  # pyright: ignore[reportUnknownVariableType]
    return repr(shape)


class NumericError(WaitkException, ArithmeticError):
    """An exception raised when a computation produces a non-finite value.

    This inherits from :class:`WaitkException` and :class:`ArithmeticError`.
    """

    __slots__: Tuple[str, ...] = ()

    exit_code: ClassVar[int] = 3


class NonDeterministicError(NumericError):
    """An exception raised when a function that must be deterministic returns
    different values for the same input.

    This inherits from :class:`NumericError`.
    """

    __slots__: Tuple[str, ...] = ()
