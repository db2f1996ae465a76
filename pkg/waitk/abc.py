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

from typing import Any, Tuple

from .utils import simple_repr

__all__: Tuple[str, ...] = ('Object', 'ValueObject')


@simple_repr
class Object(object):
    """The base object for all objects
    within waitk. Every class inherits from this.
    """

    __slots__: Tuple[str, ...] = ()


@simple_repr
class ValueObject(Object):
    """Represents a waitk :class:`~waitk.abc.Object` that is compared by value.
    Subclasses list the attributes that make up their identity in ``__key_fields__``.

    This inherits :class:`~waitk.abc.Object`.

    .. container:: operations

        .. describe:: x == y

            Determines if two objects hold the same values.

        .. describe:: x != y

            Determines if two objects do not hold the same values.

        .. describe:: hash(x)

            Returns the hash of the object.
    """

    __slots__: Tuple[str, ...] = ()

    __key_fields__: Tuple[str, ...] = ()

    def _key(self) -> Tuple[Any, ...]:
        return tuple(getattr(self, name) for name in self.__key_fields__)

    def __eq__(self, __other: object) -> bool:
        if not isinstance(__other, self.__class__):
            return False

        return self._key() == __other._key()

    def __ne__(self, __other: object) -> bool:
        return not self.__eq__(__other)

    def __hash__(self) -> int:
        return hash(self._key())
