"""Optical-flow fields, the AMFL file format, and flow providers.

A flow field stores the per-pixel displacement (u horizontal, v vertical,
in px/frame) that carries frame k onto frame k+1.  Three providers share one
call signature ``provider(clip, k) -> FlowField``: exact synthetic flow read
from disk, generic AMFL files, and a block-matching estimator for datasets
that ship without flow.
"""

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _kernels

MAGIC = b"AMFL"
_HEADER = struct.Struct("<4sII")


class FlowFormatError(ValueError):
    pass


class BadMagic(FlowFormatError):
    pass


class TruncatedFile(FlowFormatError):
    pass


class InvalidInput(ValueError):
    pass


@dataclass
class FlowField:
    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=np.float32)
        self.v = np.asarray(self.v, dtype=np.float32)
        if self.u.shape != self.v.shape or self.u.ndim != 2:
            raise InvalidInput(f"u {self.u.shape} and v {self.v.shape} must be equal 2-D shapes")

    @property
    def shape(self):
        return self.u.shape

    @classmethod
    def zeros(cls, h, w):
        return cls(np.zeros((h, w), np.float32), np.zeros((h, w), np.float32))

    def stack(self):
        """(2, H, W) array, u first."""
        return np.stack([self.u, self.v])


def flow_to_bytes(field):
    h, w = field.shape
    payload = np.stack([field.u, field.v], axis=-1).astype("<f4", copy=False)
    return _HEADER.pack(MAGIC, h, w) + payload.tobytes()


def flow_from_bytes(buf):
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise BadMagic(f"expected magic {MAGIC!r}, got {bytes(buf[:4])!r}")
    if len(buf) < _HEADER.size:
        raise TruncatedFile("header shorter than 12 bytes")
    _, h, w = _HEADER.unpack_from(buf)
    need = h * w * 2 * 4
    body = buf[_HEADER.size:]
    if len(body) < need:
        raise TruncatedFile(f"header says {h}x{w} ({need} bytes) but payload has {len(body)}")
    uv = np.frombuffer(body, dtype="<f4", count=h * w * 2).reshape(h, w, 2)
    return FlowField(uv[..., 0].copy(), uv[..., 1].copy())


def save_flow(field, path):
    Path(path).write_bytes(flow_to_bytes(field))


def load_flow(path):
    return flow_from_bytes(Path(path).read_bytes())


def block_matching_flow(frame_a, frame_b, block=8, radius=4):
    """Integer block-matching flow from ``frame_a`` to ``frame_b``.

    For each ``block``x``block`` tile of ``frame_a`` the displacement within
    ``±radius`` minimising the sum of absolute differences against
    ``frame_b`` is chosen; ties go to the smaller displacement magnitude,
    then lexicographically smaller (u, v).  Pixels outside the tiled area
    (when the frame is not a multiple of ``block``) take the nearest tile.
    """
    a = np.asarray(frame_a, dtype=np.float64)
    b = np.asarray(frame_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2:
        raise InvalidInput(f"frames must be equal 2-D shapes, got {a.shape} and {b.shape}")
    h, w = a.shape
    if h < block or w < block:
        raise InvalidInput(f"frame {a.shape} smaller than block {block}")
    du, dv = _kernels.block_sad(a, b, block, radius)
    iy = np.minimum(np.arange(h) // block, du.shape[0] - 1)
    ix = np.minimum(np.arange(w) // block, du.shape[1] - 1)
    return FlowField(du[np.ix_(iy, ix)], dv[np.ix_(iy, ix)])


# ---------------------------------------------------------------------------
# providers
# ---------------------------------------------------------------------------


class FileFlowProvider:
    """Reads ``flow/{k:05d}.amfl`` files from a clip directory."""

    def __call__(self, clip, k):
        return load_flow(Path(clip.path) / "flow" / f"{k:05d}.amfl")


class BlockMatchingProvider:
    def __init__(self, block=8, radius=4):
        self.block = block
        self.radius = radius
        self._cache = {}

    def __call__(self, clip, k):
        key = (clip.clip_id, k)
        if key not in self._cache:
            self._cache[key] = block_matching_flow(clip.frames[k], clip.frames[k + 1], self.block, self.radius)
        return self._cache[key]


class ArrayFlowProvider:
    """Serves flows already held in memory, e.g. straight from the generator."""

    def __init__(self, flows):
        self.flows = flows  # clip_id -> list of FlowField

    def __call__(self, clip, k):
        return self.flows[clip.clip_id][k]


def get_provider(name, **kw):
    if name == "file":
        return FileFlowProvider()
    if name == "block":
        return BlockMatchingProvider(**kw)
    raise ValueError(f"unknown flow provider {name!r} (expected 'file' or 'block')")
