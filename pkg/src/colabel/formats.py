"""Binary file formats: P6 PPM frames, UNRY unary fields and LMAP label maps.

UNRY: b"UNRY", five little-endian uint32 (version, T, H, W, L), then
T*H*W*L little-endian float32 costs in [t][y][x][l] order.

LMAP: b"LMAP", four little-endian uint32 (version, T, H, W), then T*H*W
little-endian uint32 ids in [t][y][x] order.

Frame directories are read in lexicographic filename order, which is taken
as temporal order.  Zero-pad frame numbers when writing them yourself.
"""

from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

from .core import LabelSet, VideoVolume

UNARY_MAGIC = b"UNRY"
LABELMAP_MAGIC = b"LMAP"
FORMAT_VERSION = 1


class FormatError(ValueError):
    """Malformed or inconsistent file contents."""


def _read_bytes(path) -> bytes:
    with open(path, "rb") as fh:
        return fh.read()


def _header_tokens(data: bytes, count: int, path):
    """Split the first ``count`` whitespace-separated PPM header tokens, skipping comments."""
    tokens = []
    pos = 0
    while len(tokens) < count:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace() and data[pos : pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise FormatError(f"{path}: malformed PPM header (ends after {len(tokens)} fields)")
        tokens.append(data[start:pos])
    if pos >= len(data) or not data[pos : pos + 1].isspace():
        raise FormatError(f"{path}: malformed PPM header (no whitespace before pixel data)")
    return tokens, pos + 1


def read_ppm(path) -> np.ndarray:
    """Read a binary (P6) PPM with maxval 255 as an H x W x 3 uint8 array."""
    data = _read_bytes(path)
    tokens, offset = _header_tokens(data, 4, path)
    if tokens[0] != b"P6":
        raise FormatError(f"{path}: not a binary PPM (magic {tokens[0][:8]!r}, expected b'P6')")
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise FormatError(f"{path}: malformed PPM header fields {tokens[1:]}") from None
    if w < 1 or h < 1:
        raise FormatError(f"{path}: malformed PPM header, size {w}x{h}")
    if maxval != 255:
        raise FormatError(f"{path}: unsupported maxval {maxval}, only 255 is accepted")
    need = w * h * 3
    payload = data[offset:]
    if len(payload) < need:
        raise FormatError(
            f"{path}: truncated PPM payload, {need - len(payload)} bytes missing "
            f"(expected {need}, found {len(payload)})"
        )
    return np.frombuffer(payload, dtype=np.uint8, count=need).reshape(h, w, 3).copy()


def write_ppm(frame, path) -> None:
    img = np.asarray(frame)
    if img.ndim != 3 or img.shape[2] != 3:
        raise FormatError(f"PPM frames must be H x W x 3, got {img.shape}")
    if img.dtype != np.uint8:
        if np.any(img < 0) or np.any(img > 255) or np.any(img != np.rint(img)):
            raise FormatError("PPM pixel values must be integers in 0..255")
        img = img.astype(np.uint8)
    h, w, _ = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(img).tobytes())


def _read_header(data: bytes, magic: bytes, n_fields: int, path):
    size = 4 + 4 * n_fields
    if len(data) < size:
        raise FormatError(f"{path}: file too short for a {magic.decode()} header ({len(data)} bytes)")
    if data[:4] != magic:
        raise FormatError(f"{path}: bad magic {data[:4]!r}, expected {magic!r}")
    fields = struct.unpack(f"<{n_fields}I", data[4:size])
    if fields[0] != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported version {fields[0]}, expected {FORMAT_VERSION}")
    if any(f == 0 for f in fields[1:]):
        raise FormatError(f"{path}: zero dimension in header {fields[1:]}")
    return fields[1:], data[size:]


def _check_payload(payload: bytes, count: int, itemsize: int, path) -> None:
    expected = count * itemsize
    if len(payload) != expected:
        raise FormatError(
            f"{path}: payload size mismatch, header implies {expected} bytes, found {len(payload)}"
        )


def read_unary(path) -> np.ndarray:
    """T x H x W x L float64 costs from a UNRY file."""
    dims, payload = _read_header(_read_bytes(path), UNARY_MAGIC, 5, path)
    count = int(np.prod(dims, dtype=np.int64))
    _check_payload(payload, count, 4, path)
    costs = np.frombuffer(payload, dtype="<f4").astype(np.float64).reshape(dims)
    if not np.all(np.isfinite(costs)):
        raise FormatError(f"{path}: unary field contains non-finite values")
    return costs


def write_unary(costs, path) -> None:
    c = np.asarray(costs, dtype=np.float64)
    if c.ndim != 4:
        raise FormatError(f"unary field must be T x H x W x L, got {c.shape}")
    if not np.all(np.isfinite(c)):
        raise FormatError("unary field contains non-finite values")
    with open(path, "wb") as fh:
        fh.write(UNARY_MAGIC + struct.pack("<5I", FORMAT_VERSION, *c.shape))
        fh.write(c.astype("<f4").tobytes())


def read_labelmap(path) -> np.ndarray:
    """T x H x W int64 ids from an LMAP file."""
    dims, payload = _read_header(_read_bytes(path), LABELMAP_MAGIC, 4, path)
    count = int(np.prod(dims, dtype=np.int64))
    _check_payload(payload, count, 4, path)
    return np.frombuffer(payload, dtype="<u4").astype(np.int64).reshape(dims)


def write_labelmap(labels, path) -> None:
    lab = np.asarray(labels)
    if lab.ndim == 2:
        lab = lab[None]
    if lab.ndim != 3:
        raise FormatError(f"label maps must be T x H x W, got {lab.shape}")
    if lab.size and (lab.min() < 0 or lab.max() > 0xFFFFFFFF):
        raise FormatError("label ids must fit in an unsigned 32-bit integer")
    with open(path, "wb") as fh:
        fh.write(LABELMAP_MAGIC + struct.pack("<4I", FORMAT_VERSION, *lab.shape))
        fh.write(lab.astype("<u4").tobytes())


def frame_name(index: int, total: int, prefix: str = "frame_") -> str:
    width = max(4, len(str(max(total - 1, 0))))
    return f"{prefix}{index:0{width}d}.ppm"


def list_frames(directory) -> list:
    """PPM files of a directory in lexicographic (temporal) order."""
    directory = Path(directory)
    if not directory.is_dir():
        raise FormatError(f"{directory}: not a directory")
    names = sorted(n for n in os.listdir(directory) if n.lower().endswith(".ppm"))
    if not names:
        raise FormatError(f"{directory}: no .ppm frames found")
    return [directory / n for n in names]


def read_frames(directory) -> VideoVolume:
    frames = [read_ppm(p) for p in list_frames(directory)]
    shapes = {f.shape for f in frames}
    if len(shapes) != 1:
        raise FormatError(f"{directory}: frames differ in size {sorted(shapes)}")
    return VideoVolume(np.stack(frames))


def write_frames(video, directory, prefix: str = "frame_") -> list:
    frames = video.frames if isinstance(video, VideoVolume) else np.asarray(video)
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for t, frame in enumerate(frames):
        p = directory / frame_name(t, len(frames), prefix)
        write_ppm(frame, p)
        paths.append(p)
    return paths


def write_color_map(labels, label_set: LabelSet, directory, prefix: str = "labels_") -> list:
    """Render label maps through the palette, one PPM per frame."""
    lab = np.asarray(labels)
    if lab.ndim == 2:
        lab = lab[None]
    n = len(label_set.names)
    if lab.size and (lab.min() < 0 or lab.max() >= n):
        raise FormatError(f"label ids outside 0..{n - 1}")
    palette = np.asarray(label_set.palette, dtype=np.uint8)
    return write_frames(palette[lab], directory, prefix)
