"""Event streams: parsing, windowing, and multi-density stacking.

An event is (x, y, t, p) with polarity +/-1. Stacking replays the most
recent events onto a zero grid where the last write wins, and the
multi-density representation repeats this at halving event counts.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .modules import Conv2d, Module

EVT1_MAGIC = b"EVT1"
_EVT1_RECORD = struct.Struct("<HHbBQ")


@dataclass(frozen=True)
class Event:
    x: int
    y: int
    t: int          # microseconds, non-decreasing within a stream
    p: int          # +1 or -1

    def __post_init__(self):
        if self.p not in (1, -1):
            raise ValueError(f"polarity must be +1 or -1, got {self.p}")
        if self.x < 0 or self.y < 0:
            raise ValueError(f"negative pixel coordinates ({self.x}, {self.y})")


@dataclass
class EventStack:
    """Multi-density grid: scale m built from the densities[m] newest events."""
    grid: Tensor                 # [M, H, W]
    window_length: int
    densities: list[int] = field(default_factory=list)


def filter_window(events, t_min: int, t_max: int) -> list[Event]:
    """Keep events with t_min <= t < t_max, order preserved."""
    if t_min > t_max:
        raise ValueError(f"t_min {t_min} > t_max {t_max}")
    return [e for e in events if t_min <= e.t < t_max]


def stack_by_number(events: list[Event], n: int, width: int, height: int) -> Tensor:
    """Replay the newest min(n, len) events onto a zero [1,H,W] grid.

    Each arriving event overwrites its pixel with its polarity, so the most
    recent event at a pixel wins.
    """
    if n < 1:
        raise ValueError(f"event count must be >= 1, got {n}")
    grid = np.zeros((1, height, width), dtype=np.float64)
    for e in events[-n:]:
        if not (0 <= e.x < width and 0 <= e.y < height):
            raise ValueError(
                f"event at ({e.x}, {e.y}) outside {width}x{height} sensor")
        grid[0, e.y, e.x] = e.p
    return Tensor(grid)


def build_multi_density(events: list[Event], n: int, m: int,
                        width: int, height: int) -> EventStack:
    """Stack at m halving densities: scale k uses the newest n // 2**k events."""
    if m < 1:
        raise ValueError(f"need at least one scale, got {m}")
    if n < 2 ** (m - 1):
        raise ValueError(
            f"window of {n} events cannot support {m} halving scales "
            f"(needs >= {2 ** (m - 1)})")
    densities = [n // (2 ** k) for k in range(m)]
    grids = [stack_by_number(events, d, width, height) for d in densities]
    grid = ag.concat(grids, axis=0) if m > 1 else grids[0]
    return EventStack(grid=grid, window_length=n, densities=densities)


class ConcentrationLayer(Module):
    """Learnable 1x1 conv + SiLU unifying the stack channels to c_out."""

    def __init__(self, rng, m_scales: int, c_out: int):
        super().__init__()
        self.conv = Conv2d(rng, m_scales, c_out, kernel=1, padding=0)

    def forward(self, stack: EventStack) -> Tensor:
        grid = stack.grid if isinstance(stack, EventStack) else stack
        x = ag.reshape(grid, (1, *grid.shape)) if grid.ndim == 3 else grid
        return ag.silu(self.conv(x))

    __call__ = forward


# ---------------------------------------------------------------------------
# EVT1 binary event files and a CSV fixture reader
# ---------------------------------------------------------------------------

def write_evt1(path, events: list[Event], width: int, height: int) -> None:
    path = Path(path)
    chunks = [EVT1_MAGIC, struct.pack("<IIQ", width, height, len(events))]
    for e in events:
        chunks.append(_EVT1_RECORD.pack(e.x, e.y, e.p, 0, e.t))
    path.write_bytes(b"".join(chunks))


def read_evt1(path) -> tuple[list[Event], int, int]:
    raw = Path(path).read_bytes()
    if raw[:4] != EVT1_MAGIC:
        raise ValueError(f"{path}: bad magic {raw[:4]!r}")
    width, height, count = struct.unpack_from("<IIQ", raw, 4)
    events = []
    pos = 4 + struct.calcsize("<IIQ")
    for _ in range(count):
        x, y, p, _pad, t = _EVT1_RECORD.unpack_from(raw, pos)
        pos += _EVT1_RECORD.size
        events.append(Event(x=x, y=y, t=t, p=p))
    return events, width, height


def read_events_csv(path) -> list[Event]:
    """Plain-text fixture reader; expects an 'x,y,t,p' header line."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"x", "y", "t", "p"}
        if reader.fieldnames is None or not required <= set(reader.fieldnames):
            raise ValueError(f"{path}: CSV header must contain columns x,y,t,p")
        return [Event(x=int(r["x"]), y=int(r["y"]), t=int(r["t"]), p=int(r["p"]))
                for r in reader]


# ---------------------------------------------------------------------------
# train/test-time spatial adjustments
# ---------------------------------------------------------------------------

def random_crop_flip(rng: np.random.Generator, left: np.ndarray,
                     right: np.ndarray, gt: np.ndarray, crop: int,
                     flip_prob: float = 0.5):
    """Random crop plus optional vertical flip, applied consistently.

    Operates on numpy stacks [M,H,W] and a [H,W] ground-truth grid. The crop
    window is shared by both views and the ground truth so the horizontal
    correspondence (hence disparity) is preserved; a vertical flip leaves
    disparity values untouched.
    """
    h, w = gt.shape
    if crop > h or crop > w:
        raise ValueError(f"crop {crop} exceeds scene size {h}x{w}")
    y0 = int(rng.integers(0, h - crop + 1))
    x0 = int(rng.integers(0, w - crop + 1))
    sl = (slice(y0, y0 + crop), slice(x0, x0 + crop))
    left = left[:, sl[0], sl[1]]
    right = right[:, sl[0], sl[1]]
    gt = gt[sl]
    if rng.uniform() < flip_prob:
        left = left[:, ::-1]
        right = right[:, ::-1]
        gt = gt[::-1]
    return np.ascontiguousarray(left), np.ascontiguousarray(right), np.ascontiguousarray(gt)


def pad_to_multiple(x: np.ndarray, multiple: int = 16) -> tuple[np.ndarray, tuple[int, int]]:
    """Zero-pad the trailing two axes up to the next multiple; returns pads."""
    h, w = x.shape[-2:]
    ph = (-h) % multiple
    pw = (-w) % multiple
    if ph == 0 and pw == 0:
        return x, (0, 0)
    pad_widths = [(0, 0)] * (x.ndim - 2) + [(0, ph), (0, pw)]
    return np.pad(x, pad_widths), (ph, pw)
