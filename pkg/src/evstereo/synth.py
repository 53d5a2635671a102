"""Synthetic stereo-event scenes: layered dot-textured planes under camera pan.

A scene stacks fronto-parallel planes (a full-frame background plus random
rectangles), each carrying an integer disparity and a random dot texture.
A panning camera shifts every texture one pixel per time step; each moving
dot emits an OFF event at the pixel it leaves and an ON event where it
lands. The right-view stream is the left-view stream shifted by each
plane's disparity, with per-view occlusion resolved nearest-plane-first,
and the ground truth is exactly the compositing disparity.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .checkpoint import load_tensors, save_tensors
from .events import Event, read_evt1, write_evt1

STEP_MICROSECONDS = 1000


@dataclass
class SceneParams:
    width: int = 64
    height: int = 64
    max_disparity: int = 32
    n_planes: int = 3
    dot_density: float = 0.12
    n_steps: int = 8
    min_rect: int = 16
    disparities: Optional[list[int]] = None   # explicit per-plane values


@dataclass
class SyntheticScene:
    left_events: list[Event]
    right_events: list[Event]
    gt_disparity: np.ndarray          # [H, W] float64
    width: int
    height: int
    plane_disparities: list[int] = field(default_factory=list)


def _plane_layout(params: SceneParams, rng: np.random.Generator):
    """Footprint masks and disparities, ordered far to near."""
    h, w = params.height, params.width
    if params.disparities is not None:
        disparities = sorted(int(d) for d in params.disparities)
        n_planes = len(disparities)
    else:
        n_planes = params.n_planes
        lo = max(2, params.max_disparity // 8)
        hi = params.max_disparity - 4
        disparities = sorted(rng.choice(np.arange(lo, hi + 1),
                                        size=n_planes, replace=False).tolist())
    for d in disparities:
        if not 0 <= d <= params.max_disparity - 1:
            raise ValueError(
                f"plane disparity {d} outside budget [0, {params.max_disparity - 1}]")
    rects = [(0, 0, h, w)]   # background fills the frame
    for _ in range(n_planes - 1):
        rh = int(rng.integers(params.min_rect, max(params.min_rect + 1, h // 2 + 8)))
        rw = int(rng.integers(params.min_rect, max(params.min_rect + 1, w // 2 + 8)))
        y0 = int(rng.integers(0, h - rh + 1))
        x0 = int(rng.integers(0, w - rw + 1))
        rects.append((y0, x0, rh, rw))
    return rects, disparities


def _topmost_map(rects, disparities, width, height, shift_per_plane):
    """Painter's algorithm: later (nearer) planes overwrite earlier ones."""
    top = np.full((height, width), -1, dtype=np.int64)
    for k, ((y0, x0, rh, rw), d) in enumerate(zip(rects, disparities)):
        xs = x0 - shift_per_plane[k]
        lo = max(xs, 0)
        hi = min(xs + rw, width)
        if lo < hi:
            top[y0: y0 + rh, lo: hi] = k
    return top


def generate_scene(params: SceneParams, seed: int) -> SyntheticScene:
    rng = np.random.default_rng(seed)
    rects, disparities = _plane_layout(params, rng)
    h, w = params.height, params.width

    left_top = _topmost_map(rects, disparities, w, h, [0] * len(rects))
    right_top = _topmost_map(rects, disparities, w, h, disparities)
    gt = np.zeros((h, w), dtype=np.float64)
    for k, d in enumerate(disparities):
        gt[left_top == k] = float(d)

    # per-plane dot textures in plane-local coordinates
    textures = []
    for (y0, x0, rh, rw) in rects:
        n_dots = max(4, int(round(params.dot_density * rh * rw)))
        ys = rng.integers(0, rh, size=n_dots)
        xs = rng.integers(0, rw, size=n_dots)
        signs = np.where(rng.uniform(size=n_dots) < 0.5, 1, -1)
        textures.append((ys, xs, signs))

    left_events: list[Event] = []
    right_events: list[Event] = []
    for step in range(1, params.n_steps + 1):
        base_t = step * STEP_MICROSECONDS
        seq = 0
        for k, ((y0, x0, rh, rw), d) in enumerate(zip(rects, disparities)):
            ys, xs, signs = textures[k]
            old_x = x0 + (xs + step - 1) % rw
            new_x = x0 + (xs + step) % rw
            y_world = y0 + ys
            for yw, xo, xn, s in zip(y_world, old_x, new_x, signs):
                for xw, pol in ((xo, -int(s)), (xn, int(s))):
                    t = base_t + seq
                    seq += 1
                    if left_top[yw, xw] == k:
                        left_events.append(Event(x=int(xw), y=int(yw), t=t, p=pol))
                    xr = xw - d
                    if xr >= 0 and right_top[yw, xr] == k:
                        right_events.append(Event(x=int(xr), y=int(yw), t=t, p=pol))
    return SyntheticScene(left_events=left_events, right_events=right_events,
                          gt_disparity=gt, width=w, height=h,
                          plane_disparities=disparities)


# ---------------------------------------------------------------------------
# on-disk dataset layout: one directory per scene
# ---------------------------------------------------------------------------

def save_scene(scene: SyntheticScene, scene_dir) -> None:
    scene_dir = Path(scene_dir)
    scene_dir.mkdir(parents=True, exist_ok=True)
    write_evt1(scene_dir / "left.evt1", scene.left_events, scene.width, scene.height)
    write_evt1(scene_dir / "right.evt1", scene.right_events, scene.width, scene.height)
    save_tensors(scene_dir / "gt_disparity.evsk",
                 {"disparity": scene.gt_disparity})


def load_scene(scene_dir) -> SyntheticScene:
    scene_dir = Path(scene_dir)
    left, w, h = read_evt1(scene_dir / "left.evt1")
    right, _, _ = read_evt1(scene_dir / "right.evt1")
    gt = load_tensors(scene_dir / "gt_disparity.evsk")["disparity"].astype(np.float64)
    return SyntheticScene(left_events=left, right_events=right,
                          gt_disparity=gt, width=w, height=h)


def generate_dataset(out_dir, n_scenes: int, params: SceneParams,
                     seed: int) -> list[Path]:
    out_dir = Path(out_dir)
    paths = []
    for i in range(n_scenes):
        scene = generate_scene(params, seed=seed * 100003 + i)
        scene_dir = out_dir / f"scene_{i:04d}"
        save_scene(scene, scene_dir)
        paths.append(scene_dir)
    return paths


def list_scene_dirs(dataset_dir) -> list[Path]:
    dataset_dir = Path(dataset_dir)
    dirs = sorted(p for p in dataset_dir.iterdir()
                  if p.is_dir() and (p / "left.evt1").exists())
    if not dirs:
        raise ValueError(f"no scene directories under {dataset_dir}")
    return dirs
