"""Encoder contract: pyramid shapes, weight sharing, reachability, locality."""

import numpy as np
import pytest

from evstereo import autograd as ag
from evstereo.autograd import Tensor
from evstereo.backbone import StereoBackbone


def make_backbone(seed=0, in_ch=4, cf=64):
    return StereoBackbone(np.random.default_rng(seed), in_ch,
                          feature_channels=cf)


def test_pyramid_shapes_for_64():
    net = make_backbone().eval()
    with ag.no_grad():
        pyr = net.encode(Tensor(np.zeros((1, 4, 64, 64))))
    shapes = [lvl.shape for lvl in pyr.levels]
    assert shapes == [(1, 64, 16, 16), (1, 64, 8, 8), (1, 64, 4, 4)]
    assert pyr.strides == (4, 8, 16)


def test_zero_input_zero_biases_gives_zero_pyramid():
    net = make_backbone().eval()
    with ag.no_grad():
        pyr = net.encode(Tensor(np.zeros((1, 4, 32, 32))))
    for lvl in pyr.levels:
        assert np.allclose(lvl.data, 0.0, atol=1e-12)


def test_divisibility_error_names_requirement():
    net = make_backbone().eval()
    with pytest.raises(ValueError, match="16"):
        net.encode(Tensor(np.zeros((1, 4, 60, 64))))


def test_encode_pair_shares_weights():
    net = make_backbone(seed=1).eval()
    rng = np.random.default_rng(2)
    x = Tensor(rng.normal(size=(1, 4, 32, 32)))
    with ag.no_grad():
        a, b = net.encode_pair(x, Tensor(x.data.copy()))
    for la, lb in zip(a.levels, b.levels):
        assert np.abs(la.data - lb.data).max() == 0.0


def test_encode_pair_swapped_inputs_swap_outputs():
    net = make_backbone(seed=1).eval()
    rng = np.random.default_rng(3)
    x = Tensor(rng.normal(size=(1, 4, 32, 32)))
    y = Tensor(rng.normal(size=(1, 4, 32, 32)))
    with ag.no_grad():
        a1, b1 = net.encode_pair(x, y)
        a2, b2 = net.encode_pair(y, x)
    for l1, l2 in zip(a1.levels, b2.levels):
        assert np.array_equal(l1.data, l2.data)
    for l1, l2 in zip(b1.levels, a2.levels):
        assert np.array_equal(l1.data, l2.data)


def test_encode_pair_matches_standalone_encode():
    net = make_backbone(seed=4).eval()
    rng = np.random.default_rng(5)
    x = Tensor(rng.normal(size=(1, 4, 32, 32)))
    y = Tensor(rng.normal(size=(1, 4, 32, 32)))
    with ag.no_grad():
        a, b = net.encode_pair(x, y)
        a_solo = net.encode(x)
        b_solo = net.encode(y)
    for l1, l2 in zip(a.levels, a_solo.levels):
        assert np.array_equal(l1.data, l2.data)
    for l1, l2 in zip(b.levels, b_solo.levels):
        assert np.array_equal(l1.data, l2.data)


def test_encode_pair_shape_mismatch_error():
    net = make_backbone().eval()
    with pytest.raises(ValueError, match="share a shape"):
        net.encode_pair(Tensor(np.zeros((1, 4, 32, 32))),
                        Tensor(np.zeros((1, 4, 32, 48))))


def test_no_per_view_parameters():
    net = make_backbone()
    names = [n for n, _ in net.named_parameters()]
    assert not any("left" in n or "right" in n for n in names)


def test_gradient_reaches_stem_from_coarsest_level():
    net = make_backbone(seed=6)
    net.train()
    rng = np.random.default_rng(7)
    x = Tensor(rng.normal(size=(1, 4, 32, 32)))
    pyr = net.encode(x)
    ag.backward(pyr.levels[-1].sum())
    assert net.stem.weight.grad is not None
    assert np.abs(net.stem.weight.grad).max() > 0


def test_parameter_count_independent_of_resolution():
    net = make_backbone(seed=8)
    count = sum(p.size for p in net.parameters())
    with ag.no_grad():
        net.eval()
        net.encode(Tensor(np.zeros((1, 4, 32, 32))))
        net.encode(Tensor(np.zeros((1, 4, 64, 64))))
    assert sum(p.size for p in net.parameters()) == count


def test_receptive_field_locality():
    """A far-away pixel perturbation leaves finest-level outputs unchanged."""
    net = make_backbone(seed=9).eval()
    rng = np.random.default_rng(10)
    base = rng.normal(size=(1, 4, 32, 256))
    bumped = base.copy()
    bumped[0, 0, 16, 8] += 10.0
    with ag.no_grad():
        p0 = net.encode(Tensor(base))
        p1 = net.encode(Tensor(bumped))
    diff = np.abs(p0.levels[0].data - p1.levels[0].data)
    # conservative receptive-field radius of the deepest path is ~120 px,
    # i.e. 30 columns at stride 4; columns beyond must be untouched
    assert diff[:, :, :, 40:].max() == 0.0
    assert diff.max() > 0.0
