from typing import List, Tuple

import numpy as np
import pytest

import waitk
from waitk import stream

A, B, B_NEXT = 6, 7, 8
PERIOD = 10

LOOKAHEAD_TABLE = {
    (): {A: 0.6, B: 0.4},
    (B,): {B_NEXT: 0.9},
}


def _state(scorer, tokens) -> waitk.StreamState:
    state = waitk.StreamState(scorer.start())
    for token in tokens:
        state.enc_states = scorer.extend(state.enc_states, token)
        state.src_read.append(token)
    return state


def test_policy_examples() -> None:
    fresh = waitk.StreamState()
    assert waitk.policy_action(fresh, waitk.WaitK(3)) is waitk.Action.read

    exhausted = waitk.StreamState()
    exhausted.src_exhausted = True
    assert waitk.policy_action(exhausted, waitk.WaitK(3)) is waitk.Action.write
    assert waitk.policy_action(exhausted, waitk.WaitK.unbounded()) is waitk.Action.write

    one_read = waitk.StreamState()
    one_read.src_read.append(6)
    assert waitk.policy_action(one_read, waitk.WaitK(1)) is waitk.Action.write
    assert waitk.policy_action(one_read, waitk.WaitK.unbounded()) is waitk.Action.read


def test_policy_after_finish() -> None:
    state = waitk.StreamState()
    state.finished = True
    with pytest.raises(waitk.PolicyError):
        waitk.policy_action(state, waitk.WaitK(1))


def test_delay_trace_validation() -> None:
    waitk.DelayTrace([1, 1, 3], 3)
    waitk.DelayTrace([], 4)

    with pytest.raises(waitk.ConfigError):
        waitk.DelayTrace([2, 1], 3)

    with pytest.raises(waitk.ConfigError):
        waitk.DelayTrace([0, 1], 3)

    with pytest.raises(waitk.ConfigError):
        waitk.DelayTrace([1, 4], 3)

    with pytest.raises(waitk.ConfigError):
        waitk.DelayTrace([1, 2], 3, tgt_len=3)


def test_delay_trace_concatenate() -> None:
    joined = waitk.DelayTrace.concatenate([waitk.DelayTrace([3, 4, 4, 4], 4), waitk.DelayTrace([2, 3], 3)])

    assert joined == waitk.DelayTrace([3, 4, 4, 4, 6, 7], 7)


def test_wait_one_copy_delays(copy_scorer) -> None:
    source = [6, 7, 8, 9, 10]
    tokens, trace = waitk.greedy_stream_decode(copy_scorer, source, waitk.WaitK(1))

    assert tokens == source
    assert trace.g == (1, 2, 3, 4, 5)
    assert trace.src_len == 5


def test_large_k_is_offline_decode(copy_scorer) -> None:
    source = [6, 7, 8, 9]
    offline, _ = waitk.greedy_stream_decode(copy_scorer, source, waitk.WaitK.unbounded())
    tokens, trace = waitk.greedy_stream_decode(copy_scorer, source, waitk.WaitK(9))

    assert tokens == offline
    assert set(trace.g) == {len(source)}


def test_wait_three_copy_delays(copy_scorer) -> None:
    _, trace = waitk.greedy_stream_decode(copy_scorer, [6, 7, 8, 9], waitk.WaitK(3))

    assert trace.g == (3, 4, 4, 4)


def test_stream_decode_with_models(tiny_params: waitk.Parameters) -> None:
    tokens, trace = waitk.stream_decode([tiny_params], [6, 7, 8], waitk.WaitK(2), max_len_rule=lambda n: n + 2)

    assert len(tokens) == trace.tgt_len <= 5
    assert trace.src_len == 3
    assert all(1 <= g <= 3 for g in trace.g)


def test_max_len_rule_stops_decoding(table_scorer) -> None:
    repeat = table_scorer({}, default={9: 1.0})
    tokens, trace = waitk.greedy_stream_decode(repeat, [6, 7], waitk.WaitK(1), max_len_rule=lambda n: 2 * n)

    assert tokens == [9, 9, 9, 9]
    assert trace.src_len == 2


def test_dispatch_events(copy_scorer) -> None:
    events: List[Tuple] = []
    waitk.stream_decode(copy_scorer, [6, 7], waitk.WaitK(1), dispatch=lambda *args: events.append(args))

    assert events == [('read', 6, 1), ('write', 6, 1), ('read', 7, 2), ('write', 7, 2)]


def test_empty_source_raises(copy_scorer) -> None:
    with pytest.raises(waitk.ConfigError):
        waitk.greedy_stream_decode(copy_scorer, [], waitk.WaitK(1))


def test_lookahead_prefers_better_path(table_scorer) -> None:
    scorer = table_scorer(LOOKAHEAD_TABLE)
    state = _state(scorer, [6])

    assert int(np.argmax(waitk.ensemble_logprobs(scorer, state))) == A
    assert waitk.lookahead_step(scorer, state, waitk.LookaheadConfig(2, 2)) == B


def test_width_one_is_greedy(table_scorer) -> None:
    scorer = table_scorer(LOOKAHEAD_TABLE)
    state = _state(scorer, [6])

    assert waitk.lookahead_step(scorer, state, waitk.LookaheadConfig(2, 1)) == A


def test_width_one_is_greedy_on_model_states(tiny_config: waitk.ModelConfig) -> None:
    rng = np.random.default_rng(17)
    scorers = [waitk.Ensemble([waitk.init_params(tiny_config, seed)]) for seed in range(4)]
    for case in range(100):
        scorer = scorers[case % len(scorers)]
        state = _state(scorer, rng.integers(4, 12, size=int(rng.integers(1, 9))).tolist())
        emitted = int(rng.integers(0, 5))
        state.tgt_emitted = rng.integers(4, 12, size=emitted).tolist()
        state.delays = sorted(rng.integers(1, len(state.src_read) + 1, size=emitted).tolist())
        depth = int(rng.integers(2, 6))

        greedy = int(np.argmax(waitk.ensemble_logprobs(scorer, state)))
        assert waitk.lookahead_step(scorer, state, waitk.LookaheadConfig(depth, 1)) == greedy


def test_lookahead_respects_policy(table_scorer) -> None:
    scorer = table_scorer(LOOKAHEAD_TABLE)
    state = _state(scorer, [6])

    with pytest.raises(waitk.PolicyError):
        waitk.lookahead_step(scorer, state, waitk.LookaheadConfig(2, 2), waitk.WaitK(3))


def test_lookahead_config_preconditions() -> None:
    with pytest.raises(waitk.ConfigError):
        waitk.LookaheadConfig(1, 2)

    with pytest.raises(waitk.ConfigError):
        waitk.LookaheadConfig(2, 0)


def test_lookahead_decode_copies(copy_scorer) -> None:
    tokens, trace = waitk.stream_decode(copy_scorer, [6, 7, 8], waitk.WaitK(2), lookahead=waitk.LookaheadConfig(3, 2))

    assert tokens == [6, 7, 8]
    assert trace.g == (2, 3, 3)


def test_singleton_ensemble_is_identity(tiny_params: waitk.Parameters) -> None:
    ensemble = waitk.Ensemble([tiny_params])
    states = ensemble.extend(ensemble.extend(ensemble.start(), 6), 7)

    expected = waitk.decoder_step(tiny_params, states[0], 2, [8])
    np.testing.assert_allclose(ensemble.logprobs(states, 2, [8], []), expected, atol=1e-12)


def test_identical_members_keep_argmax(tiny_params: waitk.Parameters) -> None:
    single = waitk.Ensemble([tiny_params])
    double = waitk.Ensemble([tiny_params, tiny_params])
    state_single = single.extend(single.start(), 6)
    state_double = double.extend(double.start(), 6)

    assert np.argmax(double.logprobs(state_double, 1, [], [])) == np.argmax(single.logprobs(state_single, 1, [], []))


def test_identical_members_decode_like_one(tiny_params: waitk.Parameters) -> None:
    for k in (1, 2, None):
        single = waitk.greedy_stream_decode([tiny_params], [6, 7, 8, 9], waitk.WaitK(k))
        triple = waitk.greedy_stream_decode([tiny_params] * 3, [6, 7, 8, 9], waitk.WaitK(k))

        assert triple == single


def test_ensemble_averages_log_probabilities(monkeypatch, tiny_config: waitk.ModelConfig) -> None:
    first = waitk.init_params(tiny_config, seed=1)
    second = waitk.init_params(tiny_config, seed=2)
    tables = {id(first): np.log([0.7, 0.2, 0.1]), id(second): np.log([0.1, 0.5, 0.4])}
    monkeypatch.setattr(stream, 'decoder_step', lambda params, *args: tables[id(params)])

    ensemble = waitk.Ensemble([first, second])
    logprobs = ensemble.logprobs(ensemble.start(), 1, [], [])

    # Averaging probabilities would pick token 0; the log-probability mean picks token 1.
    expected = np.array([np.sqrt(0.07), np.sqrt(0.1), np.sqrt(0.04)])
    np.testing.assert_allclose(np.exp(logprobs), expected / expected.sum(), atol=1e-12)
    assert int(np.argmax(logprobs)) == 1


def test_ensemble_preconditions(tiny_params: waitk.Parameters, tiny_config: waitk.ModelConfig) -> None:
    with pytest.raises(waitk.ConfigError):
        waitk.Ensemble([])

    other = waitk.init_params(waitk.ModelConfig.from_dict({**tiny_config.to_dict(), 'vocab_size': 13}), seed=0)
    with pytest.raises(waitk.VocabularyError):
        waitk.Ensemble([tiny_params, other])


def test_segment_stream_examples() -> None:
    assert len(waitk.segment_stream('hello world . how are you ?'.split(), {'.', '?'})) == 2
    assert waitk.segment_stream(['a', 'b'], {'.'}) == [['a', 'b']]
    assert waitk.segment_stream('a . b'.split(), {'.'}) == [['a', '.'], ['b']]
    assert waitk.segment_stream([], {'.'}) == []


def test_simulate_single_sentence_matches_greedy(copy_scorer) -> None:
    source = [6, 7, 8, 9]
    records = waitk.simulate_corpus(copy_scorer, [source], waitk.WaitK(2))
    tokens, trace = waitk.greedy_stream_decode(copy_scorer, source, waitk.WaitK(2))

    assert len(records) == 1
    assert records[0].hypothesis == tokens
    assert records[0].trace == trace
    assert records[0].error is None


def test_simulate_segments_offset_traces(copy_scorer) -> None:
    source = [6, 7, 8, PERIOD, 11, 12, 13, PERIOD]
    (whole,) = waitk.simulate_corpus(copy_scorer, [source], waitk.WaitK(3))
    (split,) = waitk.simulate_corpus(copy_scorer, [source], waitk.WaitK(3), segment=True, punctuation={PERIOD})

    assert whole.trace.g == (3, 4, 5, 6, 7, 8, 8, 8)
    assert split.hypothesis == source
    assert split.trace.g == (3, 4, 4, 4, 7, 8, 8, 8)
    assert [segment.g for segment in split.segments] == [(3, 4, 4, 4), (3, 4, 4, 4)]
    assert waitk.average_lagging(split.trace) == pytest.approx(2.5)
    assert waitk.average_lagging(whole.trace) == pytest.approx(3.0)


def test_simulate_threads_keep_order(copy_scorer) -> None:
    dataset = [[6 + (i % 5), 7, 8][: 1 + i % 3] for i in range(12)]
    serial = waitk.simulate_corpus(copy_scorer, dataset, waitk.WaitK(1))
    threaded = waitk.simulate_corpus(copy_scorer, dataset, waitk.WaitK(1), workers=4)

    assert [r.index for r in threaded] == list(range(12))
    assert [r.hypothesis for r in threaded] == [r.hypothesis for r in serial]


def test_simulate_records_failures(copy_scorer) -> None:
    sentences: List[Tuple] = []
    records = waitk.simulate_corpus(
        copy_scorer,
        [[6, 7], []],
        waitk.WaitK(1),
        dispatch=lambda event, *args: sentences.append(args) if event == 'sentence' else None,
    )

    assert records[0].error is None
    assert records[1].error is not None
    assert records[1].trace is None
    assert len(sentences) == 1


def test_simulate_preconditions(copy_scorer) -> None:
    with pytest.raises(waitk.ConfigError):
        waitk.simulate_corpus(copy_scorer, [], waitk.WaitK(1))

    with pytest.raises(waitk.ConfigError):
        waitk.simulate_corpus(copy_scorer, [[6]], waitk.WaitK(1), workers=0)
