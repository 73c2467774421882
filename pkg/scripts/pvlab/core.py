"""
core.py - pvlab
Frame / pseudo-video data model, the deterministic RNG contract, and the
on-disk formats (binary PGM/PPM images, PVID tensor files).
"""

import hashlib
import logging
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ArgumentError, FormatError

logger = logging.getLogger("pvlab.core")

# ── Formats ─────────────────────────────────────────────────────────────────
PVID_MAGIC      = b"PVID"
PVID_VERSION    = 1
PVID_HEADER     = struct.Struct("<4sIIIII")   # magic, version, T, H, W, C
MAX_ELEMENTS    = 2**31 - 1                   # payload element cap for one file
PNM_MAXVAL      = 255
PNM_WHITESPACE  = b" \t\n\r\v\f"
U64_MAX         = 2**64 - 1


# ══════════════════════════════════════════════════════════════════════════════
# Frames and pseudo videos
# ══════════════════════════════════════════════════════════════════════════════

@dataclass(frozen=True, eq=False)
class Frame:
    """One image, stored as a read-only float32 array of shape (H, W, C)."""
    data: np.ndarray

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.float32, order="C", copy=True)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3:
            raise ArgumentError(f"frame must be (H, W, C), got shape {arr.shape}")
        h, w, c = arr.shape
        if h < 1 or w < 1:
            raise ArgumentError(f"frame must be non-empty, got {h}x{w}")
        if c not in (1, 3):
            raise ArgumentError(f"frame must have 1 or 3 channels, got {c}")
        if not np.all(np.isfinite(arr)):
            raise ArgumentError("frame contains NaN or Inf")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    def __eq__(self, other) -> bool:
        if not isinstance(other, Frame):
            return NotImplemented
        return self.shape == other.shape and self.data.tobytes() == other.data.tobytes()

    __hash__ = None


@dataclass(frozen=True, eq=False)
class PseudoVideo:
    """Ordered frames; frames[-1] is the original image, frames[0] the most corrupted."""
    frames: tuple

    def __post_init__(self):
        frames = tuple(self.frames)
        if not frames:
            raise ArgumentError("a pseudo video needs at least one frame")
        shape = frames[0].shape
        for i, f in enumerate(frames):
            if not isinstance(f, Frame):
                raise ArgumentError(f"frame {i} is not a Frame")
            if f.shape != shape:
                raise ArgumentError(f"frame {i} has shape {f.shape}, expected {shape}")
        object.__setattr__(self, "frames", frames)

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "PseudoVideo":
        arr = np.asarray(arr)
        if arr.ndim == 3:
            arr = arr[..., None]
        return cls(tuple(Frame(a) for a in arr))

    def as_array(self) -> np.ndarray:
        """(T, H, W, C) float32 stack."""
        return np.stack([f.data for f in self.frames])

    @property
    def target(self) -> Frame:
        return self.frames[-1]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.frames[0].shape

    def __len__(self) -> int:
        return len(self.frames)

    def __eq__(self, other) -> bool:
        if not isinstance(other, PseudoVideo):
            return NotImplemented
        return len(self) == len(other) and all(a == b for a, b in zip(self.frames, other.frames))

    __hash__ = None


# ══════════════════════════════════════════════════════════════════════════════
# Deterministic random numbers
# ══════════════════════════════════════════════════════════════════════════════

@dataclass(frozen=True)
class RngSpec:
    """
    (seed, stream_id) key of a counter-based Philox stream. Equal specs give
    bit-identical draws regardless of which thread consumes them.
    """
    seed: int = 0
    stream_id: int = 0

    def __post_init__(self):
        for name in ("seed", "stream_id"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or not 0 <= int(value) <= U64_MAX:
                raise ArgumentError(f"{name} must be an unsigned 64-bit integer, got {value!r}")

    def generator(self) -> np.random.Generator:
        key = np.array([int(self.seed), int(self.stream_id)], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))

    def child(self, *labels) -> "RngSpec":
        """Derive an independent stream for a sub-task, e.g. spec.child("file", 3)."""
        text = ":".join([str(self.stream_id), *map(str, labels)])
        digest = hashlib.blake2b(text.encode(), digest_size=8).digest()
        return RngSpec(self.seed, int.from_bytes(digest, "little"))


# ══════════════════════════════════════════════════════════════════════════════
# PGM / PPM images
# ══════════════════════════════════════════════════════════════════════════════

def _parse_pnm_header(buf: bytes) -> tuple[int, int, int, int]:
    """Return (channels, width, height, payload_offset)."""
    if len(buf) < 2:
        raise FormatError("empty or truncated image header", 0)
    magic = buf[:2]
    if magic == b"P5":
        channels = 1
    elif magic == b"P6":
        channels = 3
    else:
        raise FormatError(f"unsupported image magic {magic!r}", 0)

    pos = 2
    fields: list[tuple[int, int]] = []
    while len(fields) < 3:
        while pos < len(buf) and (buf[pos] in PNM_WHITESPACE or buf[pos] == ord("#")):
            if buf[pos] == ord("#"):
                while pos < len(buf) and buf[pos] not in b"\r\n":
                    pos += 1
            else:
                pos += 1
        if pos >= len(buf):
            raise FormatError("truncated image header", pos)
        start = pos
        while pos < len(buf) and 48 <= buf[pos] <= 57:
            pos += 1
        if pos == start:
            raise FormatError("expected an integer in image header", pos)
        fields.append((int(buf[start:pos]), start))

    (width, w_at), (height, h_at), (maxval, m_at) = fields
    if width == 0:
        raise FormatError("image width is zero", w_at)
    if height == 0:
        raise FormatError("image height is zero", h_at)
    if maxval != PNM_MAXVAL:
        raise FormatError(f"unsupported maxval {maxval}, only {PNM_MAXVAL} is read", m_at)
    if pos >= len(buf) or buf[pos] not in PNM_WHITESPACE:
        raise FormatError("missing whitespace after maxval", pos)
    return channels, width, height, pos + 1


def read_image(path) -> Frame:
    """Read a binary PGM (P5) or PPM (P6) file with maxval 255; pixels map to p/255."""
    buf = Path(path).read_bytes()
    channels, width, height, offset = _parse_pnm_header(buf)
    need = width * height * channels
    have = len(buf) - offset
    if have < need:
        raise FormatError(f"truncated payload: need {need} bytes, found {have}", len(buf))
    raw = np.frombuffer(buf, dtype=np.uint8, count=need, offset=offset)
    data = raw.reshape(height, width, channels).astype(np.float32) / np.float32(PNM_MAXVAL)
    return Frame(data)


def quantize(frame: Frame) -> Frame:
    """The frame write_image actually stores: clamped to [0, 1], rounded to 1/255 steps."""
    return Frame(_to_bytes(frame).astype(np.float32) / np.float32(PNM_MAXVAL))


def _to_bytes(frame: Frame) -> np.ndarray:
    clipped = np.clip(frame.data.astype(np.float64), 0.0, 1.0)
    return np.floor(clipped * PNM_MAXVAL + 0.5).astype(np.uint8)


def write_image(frame: Frame, path) -> None:
    magic = b"P5" if frame.channels == 1 else b"P6"
    header = magic + f"\n{frame.width} {frame.height}\n{PNM_MAXVAL}\n".encode("ascii")
    Path(path).write_bytes(header + _to_bytes(frame).tobytes())


# ══════════════════════════════════════════════════════════════════════════════
# PVID tensor files
# ══════════════════════════════════════════════════════════════════════════════

def encode_video(video: PseudoVideo) -> bytes:
    h, w, c = video.shape
    header = PVID_HEADER.pack(PVID_MAGIC, PVID_VERSION, len(video), h, w, c)
    return header + video.as_array().astype("<f4").tobytes()


def decode_video(buf: bytes) -> PseudoVideo:
    if len(buf) < PVID_HEADER.size:
        raise FormatError("truncated PVID header", len(buf))
    magic, version, t, h, w, c = PVID_HEADER.unpack_from(buf, 0)
    if magic != PVID_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {PVID_MAGIC!r}", 0)
    if version != PVID_VERSION:
        raise FormatError(f"unsupported PVID version {version}", 4)
    for name, value, at in (("T", t, 8), ("H", h, 12), ("W", w, 16)):
        if value == 0:
            raise FormatError(f"{name} is zero", at)
    if c not in (1, 3):
        raise FormatError(f"C must be 1 or 3, got {c}", 20)
    count = t * h * w * c
    if count > MAX_ELEMENTS:
        raise FormatError(f"dimension overflow: {t}x{h}x{w}x{c} elements", 8)
    need = PVID_HEADER.size + 4 * count
    if len(buf) < need:
        raise FormatError(f"truncated payload: need {need} bytes, found {len(buf)}", len(buf))
    if len(buf) > need:
        raise FormatError(f"{len(buf) - need} trailing bytes after payload", need)
    payload = np.frombuffer(buf, dtype="<f4", count=count, offset=PVID_HEADER.size)
    try:
        return PseudoVideo.from_array(payload.astype(np.float32).reshape(t, h, w, c))
    except ArgumentError as e:
        raise FormatError(f"invalid payload: {e}", PVID_HEADER.size) from e


def write_video(video: PseudoVideo, path) -> None:
    Path(path).write_bytes(encode_video(video))


def read_video(path) -> PseudoVideo:
    return decode_video(Path(path).read_bytes())


# ══════════════════════════════════════════════════════════════════════════════
# Quality metric
# ══════════════════════════════════════════════════════════════════════════════

def psnr_from_mse(mse: float, max_val: float = 1.0) -> float:
    """10·log10(max²/mse) in dB; +inf when mse is exactly zero."""
    if mse < 0:
        raise ArgumentError(f"mse must be non-negative, got {mse}")
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(max_val ** 2 / mse)


def psnr(a: Frame, b: Frame, max_val: float = 1.0) -> float:
    if a.shape != b.shape:
        raise ArgumentError(f"shape mismatch: {a.shape} vs {b.shape}")
    diff = a.data.astype(np.float64) - b.data.astype(np.float64)
    return psnr_from_mse(float(np.mean(diff * diff)), max_val)
