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

import enum
from typing import Tuple

__all__: Tuple[str, ...] = ('Special', 'Tag', 'Action', 'SearchMode', 'SynthTask', 'LatencyScope')


class Special(enum.IntEnum):
    pad = 0
    bos = 1
    eos = 2
    unk = 3
    bt = 4
    asr = 5

    @property
    def token(self) -> str:
        return _SPECIAL_TOKENS[self]


_SPECIAL_TOKENS = {
    Special.pad: '<pad>',
    Special.bos: '<s>',
    Special.eos: '</s>',
    Special.unk: '<unk>',
    Special.bt: '<BT>',
    Special.asr: '<ASR>',
}


class Tag(enum.Enum):
    parallel = 'P'
    back_translated = 'BT'
    distilled = 'KD'


class Action(enum.Enum):
    read = 'READ'
    write = 'WRITE'


class SearchMode(enum.Enum):
    greedy = 'greedy'
    lookahead = 'lookahead'


class SynthTask(enum.Enum):
    copy = 'copy'
    reverse = 'reverse'
    dict_map = 'dict-map'


class LatencyScope(enum.Enum):
    line = 'line'
    segment = 'segment'
