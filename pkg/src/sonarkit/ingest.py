"""Raw-frame container (SONR v1) and grayscale image-sequence import.

SONR v1 layout, all little-endian::

    offset  size  field
    0       4     magic b"SONR"
    4       2     version (u16) = 1
    6       2     beam_count (u16)
    8       4     sample_count (u32)
    12      4     range_min (f32, metres)
    16      4     range_max (f32, metres)
    20      4     fov_deg (f32)
    24      4     frame_rate (f32, Hz)
    28      4     frame_count (u32)
    32      ...   frame_count records of
                  timestamp_us (u64) + sample_count*beam_count u16 samples,
                  row-major with range as the slow axis; code v means v/65535.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import FormatError, InvalidArgument, UnsupportedVersion
from .geometry import PolarFrame, SensorGeometry

logger = logging.getLogger(__name__)

MAGIC = b"SONR"
VERSION = 1
HEADER = struct.Struct("<4sHHIffffI")
assert HEADER.size == 32
IMAGE_SUFFIXES = {".png", ".pgm"}


@dataclass
class FrameSequence:
    geometry: SensorGeometry
    frames: list = field(default_factory=list)

    def __post_init__(self):
        last = None
        for i, frame in enumerate(self.frames):
            if frame.geometry != self.geometry:
                raise InvalidArgument(f"frame {i} geometry differs from the sequence geometry")
            if last is not None and frame.timestamp_us <= last:
                raise InvalidArgument(f"timestamps must strictly increase (frame {i})")
            last = frame.timestamp_us

    def __len__(self):
        return len(self.frames)

    def __iter__(self):
        return iter(self.frames)

    def __getitem__(self, index):
        return self.frames[index]

    def stack(self):
        """All frame data as an (n, sample_count, beam_count) array."""
        if not self.frames:
            return np.zeros((0,) + self.geometry.shape)
        return np.stack([f.data for f in self.frames])


def quantize(data):
    return np.round(np.clip(data, 0.0, 1.0) * 65535.0).astype("<u2")


def encode_container(sequence):
    g = sequence.geometry
    if g.beam_count > 0xFFFF or g.sample_count > 0xFFFFFFFF:
        raise InvalidArgument("geometry does not fit the SONR header fields")
    parts = [
        HEADER.pack(
            MAGIC, VERSION, g.beam_count, g.sample_count,
            g.range_min_m, g.range_max_m, g.fov_deg, g.frame_rate_hz, len(sequence.frames),
        )
    ]
    for frame in sequence.frames:
        parts.append(struct.pack("<Q", frame.timestamp_us))
        parts.append(quantize(frame.data).tobytes())
    return b"".join(parts)


def write_container(path, sequence):
    Path(path).write_bytes(encode_container(sequence))


def parse_container(buf):
    """Decode SONR bytes. Any malformed input raises a FormatError subclass."""
    buf = bytes(buf)
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise FormatError("not a SONR file", offset=0)
    if len(buf) < HEADER.size:
        raise FormatError(f"truncated header: {len(buf)} of {HEADER.size} bytes", offset=len(buf))
    _, version, beams, samples, rmin, rmax, fov, rate, count = HEADER.unpack_from(buf, 0)
    if version != VERSION:
        raise UnsupportedVersion(f"unsupported SONR version {version}", offset=4)
    try:
        geometry = SensorGeometry(
            range_min_m=float(rmin), range_max_m=float(rmax), fov_deg=float(fov),
            beam_count=int(beams), sample_count=int(samples), frame_rate_hz=float(rate),
        )
    except InvalidArgument as exc:
        raise FormatError(f"invalid geometry in header: {exc}", offset=6) from exc

    n_values = samples * beams
    record = 8 + 2 * n_values
    frames = []
    offset = HEADER.size
    last_ts = None
    for i in range(count):
        if offset + record > len(buf):
            raise FormatError(
                f"truncated payload: frame {i} of {count} needs {record} bytes, "
                f"{len(buf) - offset} available",
                offset=offset,
            )
        (ts,) = struct.unpack_from("<Q", buf, offset)
        if last_ts is not None and ts <= last_ts:
            raise FormatError(f"non-increasing timestamp in frame {i}", offset=offset)
        codes = np.frombuffer(buf, dtype="<u2", count=n_values, offset=offset + 8)
        data = codes.reshape(samples, beams).astype(np.float64) / 65535.0
        frames.append(PolarFrame(geometry, ts, data))
        last_ts = ts
        offset += record
    if offset < len(buf):
        logger.warning("ignoring %d trailing bytes after frame %d", len(buf) - offset, count)
    return FrameSequence(geometry, frames)


def read_container(path):
    return parse_container(Path(path).read_bytes())


def synthesize_timestamps(n, frame_rate_hz, start_us=0):
    return [start_us + int(round(k * 1e6 / frame_rate_hz)) for k in range(n)]


def load_grayscale(path):
    """Read an 8- or 16-bit grayscale PNG/PGM as intensities in [0, 1]."""
    with Image.open(path) as im:
        if im.mode in ("I;16", "I;16B", "I;16L", "I"):
            codes = np.asarray(im, dtype=np.int64)
            max_code = 65535.0
        elif im.mode == "L":
            codes = np.asarray(im, dtype=np.int64)
            max_code = 255.0
        else:
            raise FormatError(f"{path}: unsupported image mode {im.mode!r}, expected grayscale")
    return np.clip(codes / max_code, 0.0, 1.0)


def import_image_sequence(directory, geometry):
    """Import lexicographically ordered PNG/PGM dumps as a FrameSequence."""
    paths = sorted(p for p in Path(directory).iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    if not paths:
        logger.warning("no PNG/PGM images found in %s", directory)
    stamps = synthesize_timestamps(len(paths), geometry.frame_rate_hz)
    frames = []
    for path, ts in zip(paths, stamps):
        data = load_grayscale(path)
        if data.shape != geometry.shape:
            raise FormatError(f"{path.name}: image is {data.shape}, expected {geometry.shape}")
        frames.append(PolarFrame(geometry, ts, data))
    return FrameSequence(geometry, frames)


def save_png16(path, image):
    """Write intensities in [0, 1] as a 16-bit grayscale PNG."""
    codes = np.round(np.clip(image, 0, 1) * 65535).astype(np.uint16)
    Image.fromarray(codes).save(path)


def save_png8(path, image):
    codes = np.round(np.clip(image, 0, 1) * 255).astype(np.uint8)
    Image.fromarray(codes, mode="L").save(path)
