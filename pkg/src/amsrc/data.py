"""Clips, boxes, spatial-temporal cubes, and the on-disk dataset layout.

Layout of a dataset root::

    dataset.json                 generator settings (optional)
    train/<clip>/frames/00000.png   8-bit grayscale frames
    train/<clip>/boxes.csv          frame,x,y,w,h,object_id
    train/<clip>/labels.csv         frame,label
    train/<clip>/flow/00000.amfl    flow from frame 0 to frame 1 (optional)
    test/<clip>/...
"""

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .flow import FlowField

log = logging.getLogger(__name__)

PATCH = 32
BOX_HEADER = ["frame", "x", "y", "w", "h", "object_id"]
LABEL_HEADER = ["frame", "label"]


class DataError(ValueError):
    pass


class WindowTooShort(DataError):
    pass


class InvalidBox(DataError):
    pass


class InvalidConfig(DataError):
    pass


# ---------------------------------------------------------------------------
# pixel values
# ---------------------------------------------------------------------------


def normalize_pixels(image):
    return np.asarray(image, dtype=np.float32) / np.float32(255)


def denormalize_pixels(image):
    return np.clip(np.rint(np.asarray(image, dtype=np.float64) * 255), 0, 255).astype(np.uint8)


def to_gray(image):
    """uint8 H×W or H×W×3 -> uint8 H×W (ITU-R 601 luma for RGB)."""
    arr = np.asarray(image)
    if arr.ndim == 2:
        return arr.astype(np.uint8, copy=False)
    return np.asarray(Image.fromarray(arr[..., :3].astype(np.uint8)).convert("L"))


# ---------------------------------------------------------------------------
# types
# ---------------------------------------------------------------------------


@dataclass
class VideoClip:
    frames: np.ndarray  # (T, H, W) float32 in [0, 1]
    clip_id: str
    fps: float = 25.0
    path: Path | None = None

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float32)
        if self.frames.ndim != 3:
            raise DataError(f"clip {self.clip_id}: frames must be (T, H, W), got {self.frames.shape}")

    def __len__(self):
        return self.frames.shape[0]

    @property
    def size(self):
        return self.frames.shape[1:]


@dataclass(frozen=True)
class RoIBox:
    frame: int
    x: int
    y: int
    w: int
    h: int
    object_id: int = 0

    def check(self, height, width):
        if self.w <= 0 or self.h <= 0:
            raise InvalidBox(f"{self}: non-positive size")
        if self.x < 0 or self.y < 0 or self.x + self.w > width or self.y + self.h > height:
            raise InvalidBox(f"{self}: outside {height}x{width} frame")


@dataclass
class STC:
    frames: np.ndarray  # (t+1, 32, 32)
    flows: np.ndarray  # (t, 2, 32, 32)
    clip_id: str
    frame: int
    object_id: int

    @property
    def t(self):
        return self.flows.shape[0]


@dataclass
class STCSet:
    """Column-wise store of many STCs; what training and scoring consume."""

    frames: np.ndarray  # (N, t+1, 32, 32) float32
    flows: np.ndarray  # (N, t, 2, 32, 32) float32
    clip_ids: np.ndarray  # (N,) str
    frame_idx: np.ndarray  # (N,) int
    object_ids: np.ndarray  # (N,) int
    labels: np.ndarray = field(default=None)  # (N,) frame label of each STC, if known

    def __len__(self):
        return self.frames.shape[0]

    @property
    def t(self):
        return self.flows.shape[1]

    def subset(self, idx):
        return STCSet(self.frames[idx], self.flows[idx], self.clip_ids[idx], self.frame_idx[idx],
                      self.object_ids[idx], None if self.labels is None else self.labels[idx])

    def model_inputs(self, idx=None):
        """(frame input (N, t, 32, 32), flow input (N, 2t, 32, 32), target (N, 1, 32, 32))."""
        fr = self.frames if idx is None else self.frames[idx]
        fl = self.flows if idx is None else self.flows[idx]
        t = fl.shape[1]
        return fr[:, :t], fl.reshape(fl.shape[0], 2 * t, PATCH, PATCH), fr[:, t:t + 1]

    @classmethod
    def from_list(cls, stcs, labels=None):
        if not stcs:
            raise DataError("no STCs")
        return cls(
            np.stack([s.frames for s in stcs]).astype(np.float32),
            np.stack([s.flows for s in stcs]).astype(np.float32),
            np.array([s.clip_id for s in stcs]),
            np.array([s.frame for s in stcs], dtype=np.int64),
            np.array([s.object_id for s in stcs], dtype=np.int64),
            None if labels is None else np.asarray(labels, dtype=np.int64),
        )


# ---------------------------------------------------------------------------
# STC construction
# ---------------------------------------------------------------------------


def resize_bilinear(img, out_h, out_w):
    """Corner-aligned bilinear resize of the last two axes.

    Output pixel i samples source coordinate i * (n_in - 1) / (n_out - 1), so
    the first and last rows/columns map exactly onto each other.
    """
    img = np.asarray(img)
    h, w = img.shape[-2:]
    ys = np.linspace(0, h - 1, out_h) if out_h > 1 else np.zeros(1)
    xs = np.linspace(0, w - 1, out_w) if out_w > 1 else np.zeros(1)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]
    a = img[..., y0[:, None], x0[None, :]]
    b = img[..., y0[:, None], x1[None, :]]
    c = img[..., y1[:, None], x0[None, :]]
    d = img[..., y1[:, None], x1[None, :]]
    top = a * (1 - wx) + b * wx
    bot = c * (1 - wx) + d * wx
    return (top * (1 - wy) + bot * wy).astype(img.dtype if img.dtype.kind == "f" else np.float32)


def resize_ratio(n_in, n_out):
    """Displacement scale of the corner-aligned resize along one axis."""
    if n_in <= 1:
        return n_out / n_in
    return (n_out - 1) / (n_in - 1)


def _flow_at(flows, clip, k):
    f = flows(clip, k) if callable(flows) else flows[k]
    if not isinstance(f, FlowField):
        f = FlowField(f[0], f[1])
    return f


def build_stc(clip, box, t, flows, size=PATCH):
    """Crop the box region from frames ``box.frame - t .. box.frame`` and the
    ``t`` flows between consecutive frames of that window, resized to
    ``size``×``size``.

    ``flows`` is either a sequence indexed by source frame k (flow k -> k+1)
    or a callable ``flows(clip, k)``.  Flow components are multiplied by the
    resize ratio so they stay in output-pixel units.
    """
    f = box.frame
    if f < t:
        raise WindowTooShort(f"box at frame {f} needs {t} previous frames")
    if f >= len(clip):
        raise InvalidBox(f"{box}: frame index beyond clip of length {len(clip)}")
    box.check(*clip.size)
    ys = slice(box.y, box.y + box.h)
    xs = slice(box.x, box.x + box.w)
    frame_cube = resize_bilinear(clip.frames[f - t:f + 1, ys, xs], size, size)
    sx = resize_ratio(box.w, size)
    sy = resize_ratio(box.h, size)
    flow_cube = np.empty((t, 2, size, size), dtype=np.float32)
    for j, k in enumerate(range(f - t, f)):
        fl = _flow_at(flows, clip, k)
        if fl.shape != clip.size:
            raise DataError(f"flow {k} of clip {clip.clip_id} has shape {fl.shape}, frames are {clip.size}")
        uv = resize_bilinear(np.stack([fl.u[ys, xs], fl.v[ys, xs]]), size, size)
        flow_cube[j, 0] = uv[0] * sx
        flow_cube[j, 1] = uv[1] * sy
    return STC(frame_cube.astype(np.float32), flow_cube, clip.clip_id, f, box.object_id)


def extract_stcs(clip, boxes, t, flows, labels=None, frame_stride=1):
    """All STCs of one clip; boxes on frames < t are skipped.

    ``frame_stride`` > 1 keeps only frames whose index is a multiple of it
    (cheap training subsampling).
    """
    out, lab = [], []
    for box in boxes:
        if box.frame < t or box.frame % frame_stride:
            continue
        out.append(build_stc(clip, box, t, flows))
        if labels is not None:
            lab.append(labels[box.frame])
    return out, lab


# ---------------------------------------------------------------------------
# disk layout
# ---------------------------------------------------------------------------


def write_boxes(path, boxes):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(BOX_HEADER)
        for b in boxes:
            w.writerow([b.frame, b.x, b.y, b.w, b.h, b.object_id])


def read_boxes(path):
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r, None)
        if header != BOX_HEADER:
            raise DataError(f"{path}: box header must be {','.join(BOX_HEADER)}, got {header}")
        return [RoIBox(*(int(v) for v in row)) for row in r if row]


def write_labels(path, labels):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LABEL_HEADER)
        for i, v in enumerate(labels):
            w.writerow([i, int(v)])


def read_labels(path, n_frames=None):
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r, None)
        if header != LABEL_HEADER:
            raise DataError(f"{path}: label header must be {','.join(LABEL_HEADER)}, got {header}")
        rows = [(int(a), int(b)) for a, b in (row for row in r if row)]
    n = n_frames if n_frames is not None else (max(i for i, _ in rows) + 1 if rows else 0)
    labels = np.zeros(n, dtype=np.int64)
    seen = set()
    for i, v in rows:
        if i in seen:
            raise DataError(f"{path}: duplicate label for frame {i}")
        seen.add(i)
        labels[i] = v
    return labels


def save_frames(dirpath, frames):
    dirpath = Path(dirpath)
    dirpath.mkdir(parents=True, exist_ok=True)
    for i, fr in enumerate(frames):
        Image.fromarray(denormalize_pixels(fr), mode="L").save(dirpath / f"{i:05d}.png")


def load_clip(clip_dir):
    clip_dir = Path(clip_dir)
    files = sorted((clip_dir / "frames").glob("*.png"))
    if not files:
        raise DataError(f"{clip_dir}: no frames")
    frames = np.stack([normalize_pixels(to_gray(np.asarray(Image.open(p)))) for p in files])
    return VideoClip(frames, clip_dir.name, path=clip_dir)


def list_clips(root, split):
    d = Path(root) / split
    if not d.is_dir():
        raise DataError(f"{d}: missing split directory")
    return sorted(p for p in d.iterdir() if p.is_dir())


def load_split(root, split, t, flow_provider, frame_stride=1, with_labels=True):
    """Load every clip of ``split`` and extract its STCs.

    Returns ``(stcs, clips)`` where ``clips`` maps clip id to
    ``(n_frames, labels)``; labels are None when the clip has no labels.csv.
    """
    stcs, labs, clips = [], [], {}
    for cdir in list_clips(root, split):
        clip = load_clip(cdir)
        boxes = read_boxes(cdir / "boxes.csv") if (cdir / "boxes.csv").exists() else []
        labels = None
        if with_labels and (cdir / "labels.csv").exists():
            labels = read_labels(cdir / "labels.csv", len(clip))
        s, l = extract_stcs(clip, boxes, t, flow_provider, labels, frame_stride)
        stcs.extend(s)
        labs.extend(l)
        clips[clip.clip_id] = (len(clip), labels)
        log.debug("clip %s: %d frames, %d STCs", clip.clip_id, len(clip), len(s))
    if not stcs:
        raise DataError(f"{root}/{split}: no STCs extracted")
    return STCSet.from_list(stcs, labs if len(labs) == len(stcs) else None), clips
