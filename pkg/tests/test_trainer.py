import numpy as np
import pytest

import waitk

PAIRS = [
    ([6, 7, 8], [6, 7, 8]),
    ([9, 10], [9, 10]),
    ([11, 6, 7, 9], [11, 6, 7, 9]),
    ([8], [8]),
    ([10, 11, 6], [10, 11, 6]),
]


def test_make_batches_cover_every_pair() -> None:
    batches = waitk.make_batches(PAIRS, 9, np.random.default_rng(0))
    sources = sorted(tuple(source) for batch in batches for source in batch.sources)

    assert sources == sorted(tuple(source) for source, _ in PAIRS)
    assert len(batches) > 1


def test_make_batches_oversized_pair() -> None:
    batches = waitk.make_batches(PAIRS[:1], 1, np.random.default_rng(0))

    assert len(batches) == 1

    with pytest.raises(waitk.ConfigError):
        waitk.make_batches(PAIRS, 0, np.random.default_rng(0))


def test_trainer_needs_exactly_one_schedule(tiny_params: waitk.Parameters) -> None:
    with pytest.raises(waitk.ConfigError):
        waitk.Trainer(tiny_params, PAIRS)

    with pytest.raises(waitk.ConfigError):
        waitk.Trainer(tiny_params, PAIRS, k_range=waitk.MultipathRange(1, 3), fixed_k=waitk.WaitK(2))

    with pytest.raises(waitk.ConfigError):
        waitk.Trainer(tiny_params, [], fixed_k=waitk.WaitK(2))


def test_trainer_is_deterministic(tiny_params: waitk.Parameters) -> None:
    first = waitk.Trainer(tiny_params, PAIRS, k_range=waitk.MultipathRange(1, 4), batch_tokens=12, seed=11).run(4)
    second = waitk.Trainer(tiny_params, PAIRS, k_range=waitk.MultipathRange(1, 4), batch_tokens=12, seed=11).run(4)

    assert first.losses == second.losses
    assert all(np.isfinite(loss) for loss in first.losses)
    assert first.checkpoints == []


def test_trainer_writes_outputs(tmp_path, tiny_params: waitk.Parameters) -> None:
    trainer = waitk.Trainer(
        tiny_params,
        PAIRS,
        fixed_k=waitk.WaitK(2),
        batch_tokens=20,
        seed=1,
        out_dir=tmp_path,
        checkpoint_every=2,
    )
    result = trainer.run(4, average_last=2)

    rows = (tmp_path / 'metrics.tsv').read_text(encoding='utf-8').splitlines()
    assert rows[0] == 'step\tk\tloss\tlr\ttokens'
    assert len(rows) == 5
    assert all(row.split('\t')[1] == '2' for row in rows[1:])

    assert (tmp_path / 'checkpoint_last.wkck').exists()
    assert (tmp_path / 'averaged.wkck').exists()
    assert len(waitk.latest_checkpoints(tmp_path, 10)) == 2

    last = waitk.load_checkpoint(tmp_path / 'checkpoint_last.wkck')
    for name in result.params:
        np.testing.assert_array_equal(last[name], result.params[name].astype(np.float32).astype(np.float64))


def test_trainer_rejects_zero_steps(tiny_params: waitk.Parameters) -> None:
    with pytest.raises(waitk.ConfigError):
        waitk.Trainer(tiny_params, PAIRS, fixed_k=waitk.WaitK(1)).run(0)


def test_multipath_steps_go_through_multipath_loss(monkeypatch, tiny_params: waitk.Parameters) -> None:
    calls = []

    def recording(params, batch, range, rng, **kwargs):
        calls.append(range)
        return waitk.multipath_loss(params, batch, range, rng, **kwargs)

    monkeypatch.setattr(waitk.trainer, 'multipath_loss', recording)
    k_range = waitk.MultipathRange(2, 3)
    trainer = waitk.Trainer(tiny_params, PAIRS, k_range=k_range, batch_tokens=12, seed=5)
    drawn = [trainer.step(batch)[1] for batch in waitk.make_batches(PAIRS, 12, np.random.default_rng(0))[:3]]

    assert calls == [k_range] * 3
    assert set(drawn) <= {'2', '3'}


def test_multipath_loss_reports_its_draw(tiny_params: waitk.Parameters) -> None:
    batch = waitk.Batch([[6, 7, 8]], [[7, 8]])
    events = []
    loss, _ = waitk.multipath_loss(
        tiny_params, batch, waitk.MultipathRange(2, 2), np.random.default_rng(0), dispatch=lambda *args: events.append(args)
    )

    assert events == [('draw', waitk.WaitK(2))]
    assert loss == pytest.approx(waitk.sequence_loss(tiny_params, batch, waitk.WaitK(2))[0])
