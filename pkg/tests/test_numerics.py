import math

import numpy as np
import pytest

import waitk
from waitk.numerics import Tensor


def test_softmax_symmetry() -> None:
    assert waitk.softmax([0.0, 0.0]) == pytest.approx([0.5, 0.5])


def test_softmax_hand_values() -> None:
    assert waitk.softmax([math.log(1), math.log(3)]) == pytest.approx([0.25, 0.75])


def test_softmax_shift_invariance() -> None:
    assert waitk.softmax([1234.5, 1234.5]) == pytest.approx([0.5, 0.5])


def test_softmax_rejects_bad_input() -> None:
    with pytest.raises(waitk.NumericError):
        waitk.softmax([0.0, float('nan')])

    with pytest.raises(waitk.ConfigError):
        waitk.softmax([])


def test_log_softmax_and_logsumexp_agree() -> None:
    scores = np.array([0.3, -1.2, 2.5])
    assert np.exp(waitk.log_softmax(scores)).sum() == pytest.approx(1.0)
    assert waitk.log_softmax(scores) == pytest.approx(scores - waitk.logsumexp(scores))

    with pytest.raises(waitk.NumericError):
        waitk.logsumexp([1.0, float('inf')])


def test_layer_norm_examples() -> None:
    assert waitk.layer_norm([2.0, 2.0, 2.0], [1.0] * 3, [0.0] * 3) == pytest.approx([0.0, 0.0, 0.0])
    assert waitk.layer_norm([1.0, -1.0], [1.0, 1.0], [0.0, 0.0], eps=1e-12) == pytest.approx([1.0, -1.0])
    assert waitk.layer_norm([3.0, -7.0], [0.0, 0.0], [0.5, 0.25]) == pytest.approx([0.5, 0.25])


def test_layer_norm_preconditions() -> None:
    with pytest.raises(waitk.ShapeMismatch):
        waitk.layer_norm([1.0, 2.0], [1.0], [0.0, 0.0])

    with pytest.raises(waitk.ConfigError):
        waitk.layer_norm([1.0, 2.0], [1.0, 1.0], [0.0, 0.0], eps=0.0)


def test_adam_zero_gradient_keeps_params() -> None:
    params = {'w': np.array([1.0, -2.0])}
    updated, state = waitk.adam_step(params, {'w': np.zeros(2)}, waitk.AdamState())

    assert np.array_equal(updated['w'], params['w'])
    assert state.step == 1


def test_adam_single_scalar_step() -> None:
    state = waitk.AdamState()
    lr = state.learning_rate(1)
    updated, _ = waitk.adam_step({'p': np.array(0.5)}, {'p': np.array(1.0)}, state)

    assert float(updated['p']) == pytest.approx(0.5 - lr / (1.0 + 1e-9), rel=1e-12)


def test_adam_does_not_mutate_inputs() -> None:
    params = {'w': np.ones(3)}
    state = waitk.AdamState()
    waitk.adam_step(params, {'w': np.ones(3)}, state)

    assert np.array_equal(params['w'], np.ones(3))
    assert state.step == 0
    assert state.m == {}


def test_adam_rejects_bad_gradients() -> None:
    with pytest.raises(waitk.ShapeMismatch):
        waitk.adam_step({'w': np.ones(3)}, {'w': np.ones(2)}, waitk.AdamState())

    with pytest.raises(waitk.ShapeMismatch):
        waitk.adam_step({'w': np.ones(3)}, {'v': np.ones(3)}, waitk.AdamState())

    with pytest.raises(waitk.NumericError):
        waitk.adam_step({'w': np.ones(1)}, {'w': np.array([np.nan])}, waitk.AdamState())


def test_learning_rate_schedule_peaks_at_warmup() -> None:
    state = waitk.AdamState(base_lr=1.0, warmup_steps=16)

    assert state.learning_rate(8) < state.learning_rate(16)
    assert state.learning_rate(16) == pytest.approx(16**-0.5)
    assert state.learning_rate(64) == pytest.approx(64**-0.5)


def test_finite_diff_quadratic() -> None:
    def loss(params):
        p = params['p']
        return 0.5 * float((p * p).sum()), {'p': np.array(p, copy=True)}

    params = {'p': np.array([0.3, -1.5, 2.0, 0.7])}
    assert waitk.finite_diff_check(loss, params, 1e-5) < 1e-8


def test_finite_diff_preconditions() -> None:
    def loss(params):
        return float(params['p'].sum()), {'p': np.ones_like(params['p'])}

    with pytest.raises(waitk.ConfigError):
        waitk.finite_diff_check(loss, {'p': np.ones(2)}, 0.0)

    rng = np.random.default_rng(0)

    def noisy(params):
        return float(rng.random()), {'p': np.ones_like(params['p'])}

    with pytest.raises(waitk.NonDeterministicError):
        waitk.finite_diff_check(noisy, {'p': np.ones(2)})


def test_finite_diff_toy_model(tiny_params: waitk.Parameters) -> None:
    batch = waitk.Batch([[6, 7, 8], [9, 10]], [[8, 7], [11, 6, 9]])

    def loss(tensors):
        return waitk.sequence_loss(tiny_params.replace(tensors), batch, waitk.WaitK(2))

    assert waitk.finite_diff_check(loss, dict(tiny_params), 1e-5, samples=40) < 1e-4


def test_tensor_backward_matches_hand_gradient() -> None:
    a = Tensor(np.array([[1.0, 2.0]]), requires_grad=True)
    b = Tensor(np.array([[3.0], [4.0]]), requires_grad=True)
    out = (a @ b).relu() * 2.0
    out.sum().backward()

    assert a.grad == pytest.approx(np.array([[6.0, 8.0]]))
    assert b.grad == pytest.approx(np.array([[2.0], [4.0]]))


def test_tensor_backward_needs_scalar() -> None:
    with pytest.raises(waitk.ConfigError):
        Tensor(np.ones(3), requires_grad=True).backward()


def test_cross_entropy_needs_a_scored_position() -> None:
    logits = Tensor(np.zeros((2, 4)), requires_grad=True)
    with pytest.raises(waitk.ConfigError):
        logits.cross_entropy(np.array([1, 2]), np.zeros(2))


def test_cross_entropy_uniform_logits() -> None:
    logits = Tensor(np.zeros((3, 4)))
    loss = logits.cross_entropy(np.array([0, 1, 2]), np.ones(3), smoothing=0.1)

    assert loss.item() == pytest.approx(math.log(4))


def test_finite_diff_multipath_base_toy() -> None:
    config = waitk.ModelConfig.preset('base-toy', vocab_size=24)
    params = waitk.init_params(config, seed=3)
    batch = waitk.Batch(
        [[6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16], [17, 18, 19, 20]],
        [[7, 9, 11, 13], [21, 22, 23, 6, 8]],
    )

    def loss(tensors):
        # a fresh generator per call keeps the drawn k fixed
        rng = np.random.default_rng(4)
        return waitk.multipath_loss(params.replace(tensors), batch, waitk.MultipathRange(3, 9), rng, train=False)

    assert waitk.finite_diff_check(loss, dict(params), 1e-5, samples=60, seed=1) < 1e-4
