"""Event parsing, windowing, stacking, and the concentration layer."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evstereo import autograd as ag
from evstereo import events as ev
from evstereo.autograd import Tensor
from evstereo.gradcheck import check_gradients

event_lists = st.lists(
    st.tuples(st.integers(0, 7), st.integers(0, 5),
              st.integers(0, 1000), st.sampled_from([1, -1])),
    max_size=60,
).map(lambda raw: [ev.Event(x=x, y=y, t=t, p=p)
                   for x, y, t, p in sorted(raw, key=lambda r: r[2])])


def test_event_validates_polarity():
    with pytest.raises(ValueError, match="polarity"):
        ev.Event(x=0, y=0, t=0, p=0)


class TestFilterWindow:
    def test_empty_stream(self):
        assert ev.filter_window([], 0, 100) == []

    def test_all_inside(self):
        stream = [ev.Event(1, 1, t, 1) for t in (5, 6, 7)]
        assert ev.filter_window(stream, 0, 100) == stream

    def test_rejects_inverted_window(self):
        with pytest.raises(ValueError):
            ev.filter_window([], 5, 1)

    @given(event_lists, st.integers(0, 500), st.integers(0, 500))
    @settings(max_examples=50, deadline=None)
    def test_matches_linear_scan_oracle(self, stream, a, b):
        t_min, t_max = min(a, b), max(a, b)
        got = ev.filter_window(stream, t_min, t_max)
        want = []
        for e in stream:               # independent linear scan
            if t_min <= e.t < t_max:
                want.append(e)
        assert got == want


class TestStackByNumber:
    def test_no_events_all_zero(self):
        grid = ev.stack_by_number([], 10, 8, 6)
        assert grid.shape == (1, 6, 8)
        assert np.all(grid.data == 0)

    def test_single_event_placement(self):
        grid = ev.stack_by_number([ev.Event(2, 3, 0, 1)], 5, 8, 6)
        want = np.zeros((1, 6, 8))
        want[0, 3, 2] = 1.0
        assert np.array_equal(grid.data, want)

    def test_last_write_wins(self):
        stream = [ev.Event(4, 2, 0, -1), ev.Event(4, 2, 1, 1)]
        grid = ev.stack_by_number(stream, 10, 8, 6)
        assert grid.data[0, 2, 4] == 1.0
        # replay oracle: apply events in order to a dict
        state = {}
        for e in stream:
            state[(e.y, e.x)] = e.p
        assert grid.data[0, 2, 4] == state[(2, 4)]

    def test_takes_only_last_n(self):
        stream = [ev.Event(0, 0, 0, 1), ev.Event(1, 0, 1, -1)]
        grid = ev.stack_by_number(stream, 1, 4, 4)
        assert grid.data[0, 0, 0] == 0.0
        assert grid.data[0, 0, 1] == -1.0

    @given(event_lists, st.integers(1, 80))
    @settings(max_examples=50, deadline=None)
    def test_values_stay_ternary_and_idempotent(self, stream, n):
        grid = ev.stack_by_number(stream, n, 8, 6)
        assert set(np.unique(grid.data)) <= {-1.0, 0.0, 1.0}
        again = ev.stack_by_number(stream, n, 8, 6)
        assert np.array_equal(grid.data, again.data)

    def test_out_of_bounds_event_rejected(self):
        with pytest.raises(ValueError, match="outside"):
            ev.stack_by_number([ev.Event(9, 0, 0, 1)], 5, 8, 6)


class TestMultiDensity:
    def test_single_scale_equals_stack_by_number(self):
        stream = [ev.Event(i % 8, i % 6, i, 1 if i % 2 else -1)
                  for i in range(20)]
        stack = ev.build_multi_density(stream, 16, 1, 8, 6)
        want = ev.stack_by_number(stream, 16, 8, 6)
        assert np.array_equal(stack.grid.data, want.data)

    def test_density_schedule_halves(self):
        stack = ev.build_multi_density([], 8, 3, 4, 4)
        assert stack.densities == [8, 4, 2]
        assert stack.grid.shape == (3, 4, 4)

    def test_scale_zero_slice_matches_full_window(self):
        stream = [ev.Event(i % 8, (3 * i) % 6, i, -1 if i % 3 else 1)
                  for i in range(40)]
        stack = ev.build_multi_density(stream, 32, 3, 8, 6)
        want = ev.stack_by_number(stream, 32, 8, 6)
        assert np.array_equal(stack.grid.data[0], want.data[0])

    def test_too_few_events_never_panics(self):
        stream = [ev.Event(1, 1, 0, 1)]
        stack = ev.build_multi_density(stream, 8, 3, 4, 4)
        assert stack.grid.shape == (3, 4, 4)

    def test_window_too_small_for_scales(self):
        with pytest.raises(ValueError, match="halving scales|support"):
            ev.build_multi_density([], 3, 3, 4, 4)


class TestConcentration:
    def test_zero_stack_zero_output(self):
        layer = ev.ConcentrationLayer(np.random.default_rng(0), 3, 4)
        stack = ev.build_multi_density([], 8, 3, 8, 8)
        out = layer(stack)
        assert out.shape == (1, 4, 8, 8)
        assert np.all(out.data == 0)

    def test_identity_weights_give_silu_of_stack(self):
        layer = ev.ConcentrationLayer(np.random.default_rng(0), 3, 3)
        layer.conv.weight.data = np.eye(3).reshape(3, 3, 1, 1)
        layer.conv.bias.data = np.zeros(3)
        stream = [ev.Event(i % 8, i % 8, i, 1 if i % 2 else -1) for i in range(30)]
        stack = ev.build_multi_density(stream, 16, 3, 8, 8)
        out = layer(stack)
        want = ag.silu(Tensor(stack.grid.data[None])).data
        assert np.allclose(out.data, want)

    def test_weight_gradients(self):
        rng = np.random.default_rng(1)
        layer = ev.ConcentrationLayer(rng, 2, 3)
        x = Tensor(rng.choice([-1.0, 0.0, 1.0], size=(1, 2, 6, 6)))
        err = check_gradients(lambda: layer(x).sum(),
                              [layer.conv.weight, layer.conv.bias])
        assert err < 1e-4


class TestEvt1Format:
    def test_roundtrip(self, tmp_path):
        stream = [ev.Event(3, 4, 17, 1), ev.Event(0, 0, 18, -1),
                  ev.Event(65535, 2, 1000000000, 1)]
        path = tmp_path / "events.evt1"
        ev.write_evt1(path, stream, 70000, 8)
        back, w, h = ev.read_evt1(path)
        assert (w, h) == (70000, 8)
        assert back == stream

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.evt1"
        path.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(ValueError, match="magic"):
            ev.read_evt1(path)

    def test_csv_reader(self, tmp_path):
        path = tmp_path / "events.csv"
        path.write_text("x,y,t,p\n3,4,17,1\n0,0,18,-1\n")
        assert ev.read_events_csv(path) == [ev.Event(3, 4, 17, 1),
                                            ev.Event(0, 0, 18, -1)]

    def test_csv_requires_header(self, tmp_path):
        path = tmp_path / "events.csv"
        path.write_text("a,b\n1,2\n")
        with pytest.raises(ValueError, match="header"):
            ev.read_events_csv(path)


class TestAugmentation:
    def test_crop_preserves_correspondence(self):
        rng = np.random.default_rng(2)
        left = rng.normal(size=(3, 64, 64))
        right = np.roll(left, -4, axis=2)   # disparity-4 pair
        gt = np.full((64, 64), 4.0)
        lc, rc, gc = ev.random_crop_flip(np.random.default_rng(0), left, right,
                                         gt, crop=48, flip_prob=0.0)
        assert lc.shape == (3, 48, 48) and gc.shape == (48, 48)
        # interior columns still correspond at the same offset
        assert np.allclose(lc[:, :, 4:], np.roll(rc, 4, axis=2)[:, :, 4:])

    def test_flip_is_consistent(self):
        rng = np.random.default_rng(3)
        left = rng.normal(size=(2, 32, 32))
        right = rng.normal(size=(2, 32, 32))
        gt = rng.normal(size=(32, 32))
        lc, rc, gc = ev.random_crop_flip(np.random.default_rng(1), left, right,
                                         gt, crop=32, flip_prob=1.0)
        assert np.array_equal(lc, left[:, ::-1])
        assert np.array_equal(rc, right[:, ::-1])
        assert np.array_equal(gc, gt[::-1])

    def test_crop_too_large_rejected(self):
        with pytest.raises(ValueError, match="crop"):
            ev.random_crop_flip(np.random.default_rng(0), np.zeros((1, 8, 8)),
                                np.zeros((1, 8, 8)), np.zeros((8, 8)), crop=16)

    def test_pad_to_multiple(self):
        x = np.ones((2, 30, 50))
        padded, (ph, pw) = ev.pad_to_multiple(x, 16)
        assert padded.shape == (2, 32, 64)
        assert (ph, pw) == (2, 14)
        assert np.all(padded[:, 30:, :] == 0) and np.all(padded[:, :, 50:] == 0)
        same, pads = ev.pad_to_multiple(np.ones((2, 32, 64)), 16)
        assert pads == (0, 0) and same.shape == (2, 32, 64)
