import numpy as np
import pytest

import waitk


def test_save_and_load(tmp_path, tiny_params: waitk.Parameters) -> None:
    path = waitk.save_checkpoint(tiny_params, tmp_path / 'model.wkck')
    loaded = waitk.load_checkpoint(path)

    assert loaded.config == tiny_params.config
    assert loaded.signature == tiny_params.signature
    for name in tiny_params:
        assert np.array_equal(loaded[name], tiny_params[name].astype(np.float32).astype(np.float64))


def test_written_bytes_are_stable(tmp_path, tiny_params: waitk.Parameters) -> None:
    first = waitk.save_checkpoint(tiny_params, tmp_path / 'a.wkck').read_bytes()
    second = waitk.save_checkpoint(tiny_params, tmp_path / 'b.wkck').read_bytes()

    assert first == second
    assert first[:4] == waitk.checkpoint.MAGIC


def test_corruption_is_detected(tmp_path, tiny_params: waitk.Parameters) -> None:
    data = bytearray(waitk.save_checkpoint(tiny_params, tmp_path / 'model.wkck').read_bytes())
    data[len(data) // 2] ^= 0xFF
    (tmp_path / 'broken.wkck').write_bytes(bytes(data))

    with pytest.raises(waitk.CheckpointError):
        waitk.load_checkpoint(tmp_path / 'broken.wkck')


def test_bad_magic_and_truncation() -> None:
    payload = waitk.encode_tensors({'w': np.ones((2, 2))})

    with pytest.raises(waitk.CheckpointError):
        waitk.decode_tensors(b'NOPE' + payload[4:])

    with pytest.raises(waitk.CheckpointError):
        waitk.decode_tensors(payload[:6])


def test_missing_file(tmp_path) -> None:
    with pytest.raises(waitk.CheckpointError):
        waitk.load_checkpoint(tmp_path / 'absent.wkck')


def test_scalar_tensors() -> None:
    decoded = waitk.decode_tensors(waitk.encode_tensors({'b': np.array(2.5), 'a': np.arange(3.0)}))

    assert list(decoded) == ['a', 'b']
    assert decoded['b'].shape == ()
    assert float(decoded['b']) == 2.5


def test_latest_checkpoints(tmp_path, tiny_params: waitk.Parameters) -> None:
    for step in (300, 100, 200):
        waitk.save_checkpoint(tiny_params, tmp_path / waitk.checkpoint_name(step))
    waitk.save_checkpoint(tiny_params, tmp_path / 'checkpoint_last.wkck')

    latest = waitk.latest_checkpoints(tmp_path, 2)

    assert [path.name for path in latest] == ['checkpoint_000200.wkck', 'checkpoint_000300.wkck']
    assert waitk.latest_checkpoints(tmp_path, 0) == []
