"""Flat binary tensor container round-trips and module state handling."""

import numpy as np
import pytest

from evstereo.checkpoint import CheckpointError, load_tensors, save_tensors
from evstereo.modules import BatchNorm2d, Conv2d, Module


def test_roundtrip_is_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    tensors = {
        "a.weight": rng.normal(size=(3, 2, 3, 3)).astype(np.float32),
        "a.bias": rng.normal(size=3).astype(np.float32),
        "scalarish": np.array([1.5], dtype=np.float32),
    }
    p1, p2 = tmp_path / "one.evsk", tmp_path / "two.evsk"
    save_tensors(p1, tensors)
    loaded = load_tensors(p1)
    save_tensors(p2, loaded)
    assert p1.read_bytes() == p2.read_bytes()
    for name in tensors:
        assert np.array_equal(loaded[name], tensors[name])


def test_header_layout(tmp_path):
    path = tmp_path / "t.evsk"
    save_tensors(path, {"x": np.zeros((2, 2), dtype=np.float32)})
    raw = path.read_bytes()
    assert raw[:4] == b"EVSK"
    assert int.from_bytes(raw[4:8], "little") == 1
    assert int.from_bytes(raw[8:12], "little") == 1       # name length
    assert raw[12:13] == b"x"
    assert int.from_bytes(raw[13:17], "little") == 2      # rank


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "bad.evsk"
    path.write_bytes(b"XXXX" + b"\x00" * 8)
    with pytest.raises(CheckpointError, match="magic"):
        load_tensors(path)


class _Net(Module):
    def __init__(self, rng):
        super().__init__()
        self.conv = Conv2d(rng, 2, 3, kernel=3, padding=1)
        self.bn = BatchNorm2d(3)


def test_module_state_roundtrip(tmp_path):
    rng = np.random.default_rng(1)
    net = _Net(rng)
    net.bn.running_mean += 0.25
    path = tmp_path / "net.evsk"
    save_tensors(path, net.state_dict())

    other = _Net(np.random.default_rng(99))
    other.load_state_dict(load_tensors(path))
    # float32 storage quantizes float64 parameters
    for (_, a), (_, b) in zip(net.named_parameters(), other.named_parameters()):
        assert np.allclose(a.data, b.data, atol=1e-6)
    assert np.allclose(other.bn.running_mean, 0.25, atol=1e-7)


def test_load_state_dict_rejects_mismatch():
    net = _Net(np.random.default_rng(2))
    state = net.state_dict()
    state.pop("conv.weight")
    with pytest.raises(KeyError, match="missing"):
        net.load_state_dict(state)


def test_parameter_names_are_stable():
    net = _Net(np.random.default_rng(3))
    names = [n for n, _ in net.named_parameters()]
    assert names == ["conv.weight", "conv.bias", "bn.gamma", "bn.beta"]
    buffer_names = [n for n, _ in net.named_buffers()]
    assert buffer_names == ["bn.running_mean", "bn.running_var"]
