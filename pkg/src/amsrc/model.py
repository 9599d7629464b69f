"""Two-stream encoder, gated fusion and skip-connected decoder.

Each encoder block is ``conv3x3 -> ReLU -> conv3x3/2 -> ReLU``; the
activation after the first conv of every frame-stream block is kept as a
skip.  The decoder mirrors the encoder with nearest upsampling, skip
concatenation and ``conv3x3 -> ReLU``, followed by a linear 3x3 conv to one
channel.  With channels (32, 64, 128) and 32x32 patches the bottleneck is
128x4x4.

``fusion`` selects the variant: ``"gated"`` (full model), ``"add"`` (both
streams, plain sum instead of the gate) or ``"none"`` (frame stream only,
no flow encoder).
"""

import json
import struct
import zlib
from dataclasses import asdict, dataclass, field

import numpy as np

from . import numerics as nx
from .data import PATCH

FUSIONS = ("gated", "add", "none")
CKPT_MAGIC = b"AMCK"
CKPT_VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_DTYPE_TAGS = {np.dtype("float32"): 0, np.dtype("float64"): 1}


class InvalidInput(ValueError):
    pass


class CheckpointError(ValueError):
    pass


class VersionMismatch(CheckpointError):
    pass


class CorruptCheckpoint(CheckpointError):
    pass


@dataclass
class Architecture:
    t: int = 4
    channels: tuple = (32, 64, 128)
    fusion: str = "gated"
    patch: int = PATCH

    def __post_init__(self):
        self.channels = tuple(int(c) for c in self.channels)
        if self.fusion not in FUSIONS:
            raise ValueError(f"fusion must be one of {FUSIONS}, got {self.fusion!r}")
        if self.patch % (2 ** len(self.channels)):
            raise ValueError(f"patch {self.patch} not divisible by 2^{len(self.channels)}")

    @property
    def two_stream(self):
        return self.fusion != "none"

    def decoder_channels(self):
        n = len(self.channels)
        return [self.channels[max(n - 2 - j, 0)] for j in range(n)]

    def to_dict(self):
        d = asdict(self)
        d["channels"] = list(self.channels)
        return d


@dataclass
class ForwardOutput:
    fea_frame: nx.Tensor
    fea_flow: nx.Tensor | None
    skips: list
    fused: nx.Tensor
    prediction: nx.Tensor


@dataclass
class ModelParams:
    arch: Architecture
    tensors: dict = field(default_factory=dict)  # name -> Tensor, insertion order is canonical

    def weights(self):
        """Conv kernels only (biases excluded), in canonical order."""
        return [p for n, p in self.tensors.items() if n.endswith(".w")]

    def astype(self, dtype):
        for p in self.tensors.values():
            p.data = p.data.astype(dtype)
        return self

    def copy(self):
        return ModelParams(Architecture(**self.arch.to_dict()),
                           {n: nx.Tensor(p.data.copy(), requires_grad=True, name=n) for n, p in self.tensors.items()})

    def zero_grad(self):
        for p in self.tensors.values():
            p.grad = None

    def __getitem__(self, name):
        return self.tensors[name]

    def n_params(self):
        return sum(p.data.size for p in self.tensors.values())


def _conv_param(rng, name, c_in, c_out, dtype):
    bound = np.sqrt(6.0 / (c_in * 9))
    w = rng.uniform(-bound, bound, size=(c_out, c_in, 3, 3)).astype(dtype)
    return {f"{name}.w": nx.Tensor(w, requires_grad=True, name=f"{name}.w"),
            f"{name}.b": nx.Tensor(np.zeros(c_out, dtype), requires_grad=True, name=f"{name}.b")}


def init_params(arch=None, seed=0, dtype=np.float32):
    """Fan-in scaled uniform kernels, zero biases."""
    arch = arch or Architecture()
    rng = np.random.default_rng(seed)
    t = {}
    streams = [("frame_enc", arch.t)] + ([("flow_enc", 2 * arch.t)] if arch.two_stream else [])
    for stream, c_in in streams:
        c = c_in
        for i, ch in enumerate(arch.channels):
            t.update(_conv_param(rng, f"{stream}.{i}.conv1", c, ch, dtype))
            t.update(_conv_param(rng, f"{stream}.{i}.conv2", ch, ch, dtype))
            c = ch
    c = arch.channels[-1]
    skips = list(reversed(arch.channels))
    for j, out_ch in enumerate(arch.decoder_channels()):
        t.update(_conv_param(rng, f"dec.{j}", c + skips[j], out_ch, dtype))
        c = out_ch
    t.update(_conv_param(rng, "out", c, 1, dtype))
    return ModelParams(arch, t)


def _encode(x, params, stream, n_blocks):
    skips = []
    for i in range(n_blocks):
        p = f"{stream}.{i}"
        x = nx.relu(nx.conv2d(x, params[f"{p}.conv1.w"], params[f"{p}.conv1.b"]))
        skips.append(x)
        x = nx.relu(nx.conv2d(x, params[f"{p}.conv2.w"], params[f"{p}.conv2.b"], stride=2))
    return x, skips


def _check_input(name, x, channels, patch):
    shp = x.shape
    if len(shp) != 4 or shp[1] != channels or shp[2:] != (patch, patch):
        raise InvalidInput(f"{name}: expected (N, {channels}, {patch}, {patch}), got {shp}")


def encode_two_stream(frame_in, flow_in, params):
    """Returns ``(fea_frame, fea_flow, skips)``; ``fea_flow`` is None for the frame-only variant."""
    arch = params.arch
    frame_in = nx.as_tensor(frame_in)
    _check_input("frame cube", frame_in, arch.t, arch.patch)
    n = len(arch.channels)
    fea_frame, skips = _encode(frame_in, params, "frame_enc", n)
    fea_flow = None
    if arch.two_stream:
        flow_in = nx.as_tensor(flow_in)
        _check_input("flow cube", flow_in, 2 * arch.t, arch.patch)
        if flow_in.shape[0] != frame_in.shape[0]:
            raise InvalidInput(f"batch mismatch: {frame_in.shape[0]} frame cubes vs {flow_in.shape[0]} flow cubes")
        fea_flow, _ = _encode(flow_in, params, "flow_enc", n)
    return fea_frame, fea_flow, skips


def gated_fusion(fea_frame, fea_flow):
    """sigmoid(fea_frame) * fea_flow + fea_frame."""
    fea_frame, fea_flow = nx.as_tensor(fea_frame), nx.as_tensor(fea_flow)
    if fea_frame.shape != fea_flow.shape:
        raise InvalidInput(f"gated_fusion: shape mismatch {fea_frame.shape} vs {fea_flow.shape}")
    return nx.add(nx.mul(nx.sigmoid(fea_frame), fea_flow), fea_frame)


def fuse(fea_frame, fea_flow, fusion):
    if fusion == "gated":
        return gated_fusion(fea_frame, fea_flow)
    if fusion == "add":
        return nx.add(fea_frame, fea_flow)
    return fea_frame


def decode(fused, skips, params):
    arch = params.arch
    if len(skips) != len(arch.channels):
        raise InvalidInput(f"decode: expected {len(arch.channels)} skips, got {len(skips)}")
    x = nx.as_tensor(fused)
    for j, skip in enumerate(reversed(skips)):
        x = nx.upsample2x(x)
        if x.shape[0] != skip.shape[0] or x.shape[2:] != skip.shape[2:]:
            raise InvalidInput(f"decode: skip {skip.shape} does not match upsampled {x.shape}")
        x = nx.concat([x, skip], axis=1)
        x = nx.relu(nx.conv2d(x, params[f"dec.{j}.w"], params[f"dec.{j}.b"]))
    return nx.conv2d(x, params["out.w"], params["out.b"])


def forward(params, frame_in, flow_in):
    fea_frame, fea_flow, skips = encode_two_stream(frame_in, flow_in, params)
    fused = fuse(fea_frame, fea_flow, params.arch.fusion)
    return ForwardOutput(fea_frame, fea_flow, skips, fused, decode(fused, skips, params))


# ---------------------------------------------------------------------------
# checkpoint file
#
#   "AMCK" | u8 version | u32 meta_len | meta JSON | u32 n_tensors
#   per tensor: u16 name_len | name | u8 dtype tag | u8 ndim | u32 dims... | payload
#   u32 CRC32 of everything before it
# ---------------------------------------------------------------------------


def checkpoint_bytes(params, extra=None):
    meta = {"arch": params.arch.to_dict()}
    if extra:
        meta["extra"] = extra
    mb = json.dumps(meta, sort_keys=True).encode()
    parts = [CKPT_MAGIC, struct.pack("<BI", CKPT_VERSION, len(mb)), mb, struct.pack("<I", len(params.tensors))]
    for name, p in params.tensors.items():
        nb = name.encode()
        arr = p.data
        tag = _DTYPE_TAGS[arr.dtype]
        parts.append(struct.pack("<H", len(nb)) + nb + struct.pack("<BB", tag, arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=_DTYPES[tag]).tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def params_from_bytes(buf):
    """Parse checkpoint bytes; returns ``(ModelParams, extra_metadata)``."""
    if len(buf) < 5 or buf[:4] != CKPT_MAGIC:
        raise CorruptCheckpoint("bad magic")
    if buf[4] != CKPT_VERSION:
        raise VersionMismatch(f"checkpoint version {buf[4]}, this build reads {CKPT_VERSION}")
    if len(buf) < 9:
        raise CorruptCheckpoint("truncated header")
    body, (crc,) = buf[:-4], struct.unpack("<I", buf[-4:])
    if zlib.crc32(body) != crc:
        raise CorruptCheckpoint("CRC32 mismatch (truncated or damaged file)")
    try:
        off = 5
        (mlen,) = struct.unpack_from("<I", body, off)
        off += 4
        meta = json.loads(body[off:off + mlen])
        off += mlen
        (count,) = struct.unpack_from("<I", body, off)
        off += 4
        tensors = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", body, off)
            off += 2
            name = body[off:off + nlen].decode()
            off += nlen
            tag, ndim = struct.unpack_from("<BB", body, off)
            off += 2
            shape = struct.unpack_from(f"<{ndim}I", body, off)
            off += 4 * ndim
            dt = _DTYPES[tag]
            size = int(np.prod(shape)) * dt.itemsize
            if off + size > len(body):
                raise CorruptCheckpoint(f"tensor {name!r} runs past end of file")
            arr = np.frombuffer(body, dtype=dt, count=int(np.prod(shape)), offset=off).reshape(shape)
            off += size
            tensors[name] = nx.Tensor(arr.astype(dt.newbyteorder("=")), requires_grad=True, name=name)
        if off != len(body):
            raise CorruptCheckpoint("trailing bytes after tensors")
    except (struct.error, KeyError, ValueError, UnicodeDecodeError) as e:
        if isinstance(e, CheckpointError):
            raise
        raise CorruptCheckpoint(f"malformed checkpoint: {e}") from e
    params = ModelParams(Architecture(**meta["arch"]), tensors)
    for name, p in tensors.items():
        if not np.all(np.isfinite(p.data)):
            raise CorruptCheckpoint(f"non-finite values in {name!r}")
    return params, meta.get("extra", {})


def save_checkpoint(params, path, extra=None):
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(params, extra))


def load_checkpoint(path, with_extra=False):
    with open(path, "rb") as fh:
        params, extra = params_from_bytes(fh.read())
    return (params, extra) if with_extra else params
