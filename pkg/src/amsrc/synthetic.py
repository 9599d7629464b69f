"""Seeded synthetic surveillance scenes with exact flow, boxes and labels.

A static textured background is shared by every clip (one fixed camera).
Normal sprites are discs of radius 4-6 px moving at 1-2 px/frame and
bouncing off the frame border.  Test clips add one anomalous event: either a
disc moving at 5 px/frame or more, or a square moving at normal speed.
Positions and velocities are integers, so every flow field is exact.
"""

import json
import shutil
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import data as D
from .flow import FlowField, save_flow

NORMAL_VELOCITIES = [(u, v) for u in range(-2, 3) for v in range(-2, 3) if 1 <= np.hypot(u, v) <= 2]
FAST_VELOCITIES = [(u, v) for u in range(-7, 8) for v in range(-7, 8) if 5 <= np.hypot(u, v) <= 7]


@dataclass
class SyntheticConfig:
    train_clips: int = 8
    test_clips: int = 4
    frames: int = 120
    height: int = 64
    width: int = 64
    sprites_per_clip: int = 2
    radius: tuple = (4, 6)
    kinds: tuple = ("fast", "square")  # anomaly kinds used in test clips
    event_length: tuple = (25, 45)

    def validate(self):
        if self.train_clips < 1:
            raise D.InvalidConfig("train_clips must be at least 1")
        if self.test_clips < 0:
            raise D.InvalidConfig("test_clips must be non-negative")
        if self.frames < 8:
            raise D.InvalidConfig("frames must be at least 8")
        if min(self.height, self.width) < 4 * self.radius[1]:
            raise D.InvalidConfig(f"frame {self.height}x{self.width} too small for radius {self.radius[1]}")
        bad = set(self.kinds) - {"fast", "square"}
        if bad:
            raise D.InvalidConfig(f"unknown anomaly kinds {sorted(bad)}")


@dataclass
class Sprite:
    shape: str  # "disc" or "square"
    radius: int
    start: tuple  # (cx, cy) centre at frame `first`
    velocity: tuple  # (u, v) px/frame
    intensity: float
    first: int = 0
    last: int = 10**9  # inclusive
    anomalous: bool = False


@dataclass
class SyntheticClip:
    clip: D.VideoClip
    flows: list  # FlowField k -> k+1, len T-1
    boxes: list
    labels: np.ndarray
    sprites: list = field(default_factory=list)


def make_background(rng, h, w):
    """Smooth static texture in roughly [0.2, 0.5]."""
    coarse = rng.random((h // 8 + 2, w // 8 + 2))
    bg = D.resize_bilinear(coarse, h + 16, w + 16)[8:8 + h, 8:8 + w]
    bg = 0.2 + 0.2 * bg + 0.1 * rng.random((h, w))
    return bg.astype(np.float32)


def trajectory(sprite, n_frames, h, w):
    """Integer centres for every frame, bouncing so the sprite stays inside."""
    r = sprite.radius
    lo_x, hi_x, lo_y, hi_y = r, w - 1 - r, r, h - 1 - r
    pos = np.zeros((n_frames, 2), dtype=np.int64)
    cx, cy = sprite.start
    u, v = sprite.velocity
    first = min(max(sprite.first, 0), n_frames - 1)
    pos[first] = cx, cy
    for k in range(first + 1, n_frames):
        nx, ny = cx + u, cy + v
        if nx < lo_x or nx > hi_x:
            u = -u
            nx = cx + u
        if ny < lo_y or ny > hi_y:
            v = -v
            ny = cy + v
        cx, cy = nx, ny
        pos[k] = cx, cy
    return pos


def sprite_mask(shape, radius, cx, cy, h, w):
    yy, xx = np.mgrid[0:h, 0:w]
    if shape == "disc":
        return (xx - cx) ** 2 + (yy - cy) ** 2 <= radius * radius
    return (np.abs(xx - cx) <= radius) & (np.abs(yy - cy) <= radius)


def render_clip(sprites, background, n_frames, clip_id):
    """Render sprites over ``background``; returns a :class:`SyntheticClip`.

    Sprite ``i`` is drawn on frames ``first..last`` in list order (later
    sprites cover earlier ones).  Frames are quantized to 8 bits so the
    in-memory clip equals what a reload from PNG gives.
    """
    h, w = background.shape
    paths = [trajectory(s, n_frames, h, w) for s in sprites]
    frames = np.repeat(background[None], n_frames, axis=0)
    flows = [FlowField.zeros(h, w) for _ in range(n_frames - 1)]
    boxes, labels = [], np.zeros(n_frames, dtype=np.int64)
    for k in range(n_frames):
        for i, (s, p) in enumerate(zip(sprites, paths)):
            if not s.first <= k <= s.last:
                continue
            cx, cy = p[k]
            m = sprite_mask(s.shape, s.radius, cx, cy, h, w)
            frames[k][m] = s.intensity
            boxes.append(D.RoIBox(k, int(cx - s.radius), int(cy - s.radius), 2 * s.radius + 1, 2 * s.radius + 1, i))
            if s.anomalous:
                labels[k] = 1
            if k < n_frames - 1:
                # the trajectory continues past `last`, so this is the displacement
                # the sprite would have even on its final visible frame
                du, dv = p[k + 1] - p[k]
                flows[k].u[m] = du
                flows[k].v[m] = dv
    frames = D.normalize_pixels(D.denormalize_pixels(frames))
    return SyntheticClip(D.VideoClip(frames, clip_id), flows, boxes, labels, list(sprites))


def _random_sprite(rng, cfg, shape="disc", fast=False, first=0, last=10**9, anomalous=False):
    r = int(rng.integers(cfg.radius[0], cfg.radius[1] + 1))
    cx = int(rng.integers(r, cfg.width - r))
    cy = int(rng.integers(r, cfg.height - r))
    table = FAST_VELOCITIES if fast else NORMAL_VELOCITIES
    u, v = table[int(rng.integers(len(table)))]
    inten = float(rng.uniform(0.75, 0.95))
    return Sprite(shape, r, (cx, cy), (u, v), inten, first, last, anomalous)


def generate(cfg, seed):
    """Build the dataset in memory: ``{"train": [...], "test": [...]}`` of SyntheticClip."""
    cfg.validate()
    rng = np.random.default_rng(seed)
    bg = make_background(rng, cfg.height, cfg.width)
    out = {"train": [], "test": []}
    for i in range(cfg.train_clips):
        sprites = [_random_sprite(rng, cfg) for _ in range(cfg.sprites_per_clip)]
        out["train"].append(render_clip(sprites, bg, cfg.frames, f"train_{i:03d}"))
    for i in range(cfg.test_clips):
        sprites = [_random_sprite(rng, cfg) for _ in range(cfg.sprites_per_clip)]
        kind = cfg.kinds[i % len(cfg.kinds)]
        length = int(rng.integers(cfg.event_length[0], cfg.event_length[1] + 1))
        length = min(length, cfg.frames // 2)
        first = int(rng.integers(cfg.frames // 4, cfg.frames - length))
        last = first + length - 1
        if kind == "fast":
            sprites.append(_random_sprite(rng, cfg, "disc", True, first, last, True))
        else:
            sprites.append(_random_sprite(rng, cfg, "square", False, first, last, True))
        out["test"].append(render_clip(sprites, bg, cfg.frames, f"test_{i:03d}"))
    return out


def write_clip(sc, clip_dir):
    clip_dir = Path(clip_dir)
    D.save_frames(clip_dir / "frames", sc.clip.frames)
    D.write_boxes(clip_dir / "boxes.csv", sc.boxes)
    D.write_labels(clip_dir / "labels.csv", sc.labels)
    (clip_dir / "flow").mkdir(exist_ok=True)
    for k, fl in enumerate(sc.flows):
        save_flow(fl, clip_dir / "flow" / f"{k:05d}.amfl")


def generate_synthetic(cfg, seed, out, force=False):
    """Write the dataset under ``out``; returns the in-memory dataset."""
    out = Path(out)
    if out.exists() and any(out.iterdir()):
        if not force:
            raise D.InvalidConfig(f"{out} is not empty (use force to overwrite)")
        shutil.rmtree(out)
    ds = generate(cfg, seed)
    out.mkdir(parents=True, exist_ok=True)
    for split, clips in ds.items():
        for sc in clips:
            write_clip(sc, out / split / sc.clip.clip_id)
    meta = {"generator": asdict(cfg), "seed": seed}
    (out / "dataset.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return ds


def to_stcs(clips, t=4, frame_stride=1):
    """STCs of in-memory synthetic clips using their exact flows."""
    from .flow import ArrayFlowProvider

    provider = ArrayFlowProvider({c.clip.clip_id: c.flows for c in clips})
    stcs, labels = [], []
    for c in clips:
        s, l = D.extract_stcs(c.clip, c.boxes, t, provider, c.labels, frame_stride)
        stcs += s
        labels += l
    return D.STCSet.from_list(stcs, labels)
