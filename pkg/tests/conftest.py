from __future__ import annotations

from typing import Dict, Optional, Sequence, Tuple, Type

import numpy as np
import pytest

import waitk

EOS: int = int(waitk.Special.eos)


class CopyScorer:
    """Emits the source token at the current target position, then end-of-sequence."""

    def __init__(self, vocab_size: int = 64) -> None:
        self.vocab_size = vocab_size

    def start(self) -> Tuple[int, ...]:
        return ()

    def extend(self, states: Tuple[int, ...], token: int) -> Tuple[int, ...]:
        return (*states, token)

    def logprobs(self, states: Tuple[int, ...], visible: int, prefix: Sequence[int], history: Sequence[int]) -> np.ndarray:
        probs = np.full(self.vocab_size, 1e-6)
        position = len(prefix)
        probs[states[position] if position < visible else EOS] = 1.0
        return np.log(probs / probs.sum())


class TableScorer:
    """Looks the next-token distribution up by the target prefix."""

    def __init__(
        self,
        table: Dict[Tuple[int, ...], Dict[int, float]],
        vocab_size: int = 10,
        default: Optional[Dict[int, float]] = None,
    ) -> None:
        self.table = table
        self.vocab_size = vocab_size
        self.default = default

    def start(self) -> Tuple[int, ...]:
        return ()

    def extend(self, states: Tuple[int, ...], token: int) -> Tuple[int, ...]:
        return (*states, token)

    def logprobs(self, states: Tuple[int, ...], visible: int, prefix: Sequence[int], history: Sequence[int]) -> np.ndarray:
        entry: Optional[Dict[int, float]] = self.table.get(tuple(prefix), self.default)
        if entry is None:
            probs = np.full(self.vocab_size, 1.0 / self.vocab_size)
        else:
            rest = max(1.0 - sum(entry.values()), 0.0)
            probs = np.full(self.vocab_size, rest / (self.vocab_size - len(entry)) + 1e-12)
            for token, p in entry.items():
                probs[token] = p
        return np.log(probs / probs.sum())


@pytest.fixture
def tiny_config() -> waitk.ModelConfig:
    return waitk.ModelConfig(
        enc_layers=1,
        dec_layers=1,
        d_model=8,
        d_ff=16,
        heads=2,
        vocab_size=12,
        dropout=0.0,
        max_positions=64,
    )


@pytest.fixture
def tiny_params(tiny_config: waitk.ModelConfig) -> waitk.Parameters:
    return waitk.init_params(tiny_config, seed=7)


@pytest.fixture
def copy_scorer() -> CopyScorer:
    return CopyScorer()


@pytest.fixture
def table_scorer() -> Type[TableScorer]:
    return TableScorer


@pytest.fixture
def toy_corpus() -> Sequence[waitk.CorpusPair]:
    return waitk.synth_task_generate(waitk.SynthTask.copy, 24, (3, 6), 6, seed=3)
