import numpy as np
import pytest

from delaynet.autodiff import Tensor
from delaynet.checkpoint import CheckpointStore, decode_array, encode_array, make_checkpoint, restore
from delaynet.errors import StateError
from delaynet.model import build


def test_hex_encoding_is_exact():
    values = np.array([[0.1, -0.0, np.inf], [np.nan, 5e-324, -1.7976931348623157e308]])
    decoded = decode_array(encode_array(values))
    assert decoded.shape == values.shape
    np.testing.assert_array_equal(decoded, values)
    assert np.signbit(decoded[0, 1])


def test_checkpoint_round_trip_is_bit_exact(tiny_config, tmp_path, rng):
    net = build(tiny_config, seed=4)
    x1 = Tensor(rng.normal(size=(4, tiny_config.F, tiny_config.S)))
    x2 = Tensor(rng.normal(size=(4, tiny_config.C, tiny_config.T)))
    net(x1, x2, training=True)
    expected = net(x1, x2, training=False).data

    store = CheckpointStore(str(tmp_path / "run"))
    store.save(make_checkpoint(net, seed=4))
    restored = restore(store.load())
    np.testing.assert_array_equal(restored(x1, x2, training=False).data, expected)
    params, buffers = net.state_dict()
    params2, buffers2 = restored.state_dict()
    for name in params:
        np.testing.assert_array_equal(params[name], params2[name])
    for name in buffers:
        np.testing.assert_array_equal(buffers[name], buffers2[name])


def test_checkpoint_text_is_stable(tiny_config, tmp_path):
    store = CheckpointStore(str(tmp_path))
    a = store.save(make_checkpoint(build(tiny_config, seed=1)), name="a.json")
    b = store.save(make_checkpoint(build(tiny_config, seed=1)), name="b.json")
    with open(a) as fa, open(b) as fb:
        assert fa.read() == fb.read()


def test_store_load_and_clear(tiny_config, tmp_path):
    store = CheckpointStore(str(tmp_path))
    assert store.load() is None
    store.save(make_checkpoint(build(tiny_config)))
    assert store.load() is not None
    assert store.clear()
    assert not store.clear()


def test_restore_rejects_unusable_checkpoints(tiny_config):
    checkpoint = make_checkpoint(build(tiny_config))
    with pytest.raises(StateError):
        restore(checkpoint.model_copy(update={"net": None}))
    with pytest.raises(StateError):
        restore(checkpoint.model_copy(update={"format_version": checkpoint.format_version + 1}))
    broken = checkpoint.model_copy(update={"parameters": dict(list(checkpoint.parameters.items())[1:])})
    with pytest.raises(StateError):
        restore(broken)
