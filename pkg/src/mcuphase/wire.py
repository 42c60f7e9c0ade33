"""Binary framing of output chunks and the acquisition file container.

Chunk frame, little-endian::

    magic     4s   b"MCPH"
    seq       u32
    config_id u16
    count     u16
    phase     i32[count]   LSB = 2*pi / 2**32 rad
    amp       u16[count]   LSB = 1.25 / 2**16 V
    f_drift   u64          48-bit DDS tuning word (upper bits zero)
    monitor   u64          free-running status word
    crc       u32          CRC-32/MPEG-2 over every preceding byte
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"MCPH"
FILE_MAGIC = b"MCPHACQ\x00"
FILE_VERSION = 1
PHASE_LSB = 2.0 * math.pi / 2 ** 32
AMP_LSB = 1.25 / 2 ** 16
MAX_COUNT = 0xFFFF
HEADER = struct.Struct("<4sIHH")
TRAILER = struct.Struct("<QQ")
CRC = struct.Struct("<I")
DRIFT_WORD_MASK = (1 << 48) - 1


class WireError(ValueError):
    pass


class EncodingError(WireError):
    """A value cannot be represented in the frame fields."""


class FrameError(WireError):
    """Malformed or truncated frame."""


class IntegrityError(WireError):
    """CRC mismatch; carries the sequence number read from the header."""

    def __init__(self, seq, expected, found):
        super().__init__(f"CRC mismatch in chunk seq={seq}: expected {expected:#010x}, found {found:#010x}")
        self.seq = seq


def _crc_table():
    table = []
    for b in range(256):
        c = b << 24
        for _ in range(8):
            c = ((c << 1) ^ 0x04C11DB7) if c & 0x80000000 else (c << 1)
        table.append(c & 0xFFFFFFFF)
    return table


_TABLE = _crc_table()


def crc32_mpeg2(data: bytes, crc: int = 0xFFFFFFFF) -> int:
    """CRC-32/MPEG-2: poly 0x04C11DB7, init all ones, unreflected, no final xor."""
    t = _TABLE
    for b in data:
        crc = ((crc << 8) & 0xFFFFFFFF) ^ t[((crc >> 24) ^ b) & 0xFF]
    return crc


@dataclass
class Chunk:
    seq: int
    config_id: int
    phase: np.ndarray
    amplitude: np.ndarray
    f_drift_word: int = 0
    monitor: int = 0

    @property
    def count(self) -> int:
        return len(self.phase)


def frame_size(count: int) -> int:
    return HEADER.size + 6 * count + TRAILER.size + CRC.size


def quantize_phase(phase) -> np.ndarray:
    """Phase increments in [-pi, pi] to i32 codes; +pi saturates to 2**31-1."""
    p = np.asarray(phase, dtype=float)
    if not np.all(np.isfinite(p)) or np.any(np.abs(p) > math.pi):
        raise EncodingError("phase increment outside [-pi, pi]")
    return np.clip(np.rint(p / PHASE_LSB), -2 ** 31, 2 ** 31 - 1).astype("<i4")


def quantize_amplitude(amp) -> np.ndarray:
    """Amplitudes in [0, 1.25] V to u16 codes; 1.25 V saturates to 0xFFFF."""
    a = np.asarray(amp, dtype=float)
    if not np.all(np.isfinite(a)) or np.any(a < 0) or np.any(a > 1.25):
        raise EncodingError("amplitude outside [0, 1.25] V")
    return np.minimum(np.rint(a / AMP_LSB), 0xFFFF).astype("<u2")


def encode_chunk(chunk: Chunk) -> bytes:
    n = chunk.count
    if len(chunk.amplitude) != n:
        raise EncodingError("phase and amplitude lengths differ")
    if n > MAX_COUNT:
        raise EncodingError(f"count {n} exceeds {MAX_COUNT}")
    if not 0 <= chunk.seq < 2 ** 32 or not 0 <= chunk.config_id < 2 ** 16:
        raise EncodingError("seq or config_id out of range")
    if not 0 <= chunk.f_drift_word <= DRIFT_WORD_MASK:
        raise EncodingError("f_drift word wider than 48 bits")
    if not 0 <= chunk.monitor < 2 ** 64:
        raise EncodingError("monitor word out of range")
    body = b"".join([
        HEADER.pack(MAGIC, chunk.seq, chunk.config_id, n),
        quantize_phase(chunk.phase).tobytes(),
        quantize_amplitude(chunk.amplitude).tobytes(),
        TRAILER.pack(chunk.f_drift_word, chunk.monitor),
    ])
    return body + CRC.pack(crc32_mpeg2(body))


def frame_length_at(buf, offset: int = 0) -> int:
    """Length of the frame starting at ``offset``, read from its header."""
    if len(buf) - offset < HEADER.size:
        raise FrameError(f"truncated header at byte {offset}")
    magic, seq, _, n = HEADER.unpack_from(buf, offset)
    if magic != MAGIC:
        raise FrameError(f"bad magic {bytes(magic)!r} at byte {offset}")
    size = frame_size(n)
    if len(buf) - offset < size:
        raise FrameError(f"chunk seq={seq} truncated: need {size} bytes, have {len(buf) - offset}")
    return size


def decode_chunk(frame: bytes) -> Chunk:
    """Decode exactly one frame; phases and amplitudes come back in rad and V.

    The CRC is checked before any header field is trusted, so every
    corruption it detects surfaces as ``IntegrityError``.
    """
    mv = memoryview(frame)
    if len(mv) < frame_size(0):
        raise FrameError(f"frame of {len(mv)} bytes shorter than the empty frame")
    expected = CRC.unpack_from(mv, len(mv) - CRC.size)[0]
    found = crc32_mpeg2(mv[:-CRC.size])
    if found != expected:
        raise IntegrityError(struct.unpack_from("<I", mv, 4)[0], expected, found)
    magic, seq, cid, n = HEADER.unpack_from(mv, 0)
    if magic != MAGIC:
        raise FrameError(f"bad magic {bytes(magic)!r}")
    if frame_size(n) != len(mv):
        raise FrameError(f"chunk seq={seq}: count {n} does not match a {len(mv)}-byte frame")
    p0 = HEADER.size
    phase = np.frombuffer(mv, "<i4", n, p0).astype(float) * PHASE_LSB
    amp = np.frombuffer(mv, "<u2", n, p0 + 4 * n).astype(float) * AMP_LSB
    word, monitor = TRAILER.unpack_from(mv, p0 + 6 * n)
    return Chunk(seq, cid, phase, amp, word & DRIFT_WORD_MASK, monitor)


def find_gaps(seqs):
    """``(after, missing)`` pairs for every hole in a sequence-number run."""
    gaps = []
    for a, b in zip(seqs[:-1], seqs[1:]):
        if b != a + 1:
            gaps.append((a, b - a - 1))
    return gaps


def decode_stream(buf: bytes):
    """All frames in ``buf``; returns ``(chunks, gaps)`` per config id."""
    chunks, off = [], 0
    while off < len(buf):
        size = frame_length_at(buf, off)
        chunks.append(decode_chunk(buf[off:off + size]))
        off += size
    by_id = {}
    for c in chunks:
        by_id.setdefault(c.config_id, []).append(c.seq)
    gaps = {cid: find_gaps(s) for cid, s in by_id.items()}
    return chunks, gaps


def scenario_hash(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


@dataclass
class AcquisitionFile:
    """Container: magic, version, JSON header, chunk frames, optional truth.

    ``streams`` maps a stream name to its config_id; ``truth`` holds raw
    float64 arrays keyed by name for round-trip verification.
    """

    header: dict = field(default_factory=dict)
    chunks: list = field(default_factory=list)
    truth: dict = field(default_factory=dict)
    gaps: dict = field(default_factory=dict)

    def stream(self, config_id: int):
        """Concatenated ``(phase, amplitude, drift_words)`` of one stream."""
        sel = [c for c in self.chunks if c.config_id == config_id]
        if not sel:
            return np.zeros(0), np.zeros(0), np.zeros(0, dtype=np.uint64)
        return (np.concatenate([c.phase for c in sel]),
                np.concatenate([c.amplitude for c in sel]),
                np.concatenate([np.full(c.count, c.f_drift_word, dtype=np.uint64) for c in sel]))

    def write(self, path):
        head = json.dumps(self.header, sort_keys=True).encode()
        with open(path, "wb") as f:
            f.write(FILE_MAGIC)
            f.write(struct.pack("<HI", FILE_VERSION, len(head)))
            f.write(head)
            frames = b"".join(encode_chunk(c) for c in self.chunks)
            f.write(struct.pack("<Q", len(frames)))
            f.write(frames)
            f.write(struct.pack("<I", len(self.truth)))
            for name, arr in self.truth.items():
                key = name.encode()
                data = np.ascontiguousarray(arr, dtype="<f8").tobytes()
                f.write(struct.pack("<H", len(key)) + key + struct.pack("<Q", len(data)) + data)

    @classmethod
    def read(cls, path) -> "AcquisitionFile":
        with open(path, "rb") as f:
            buf = f.read()
        if buf[:8] != FILE_MAGIC:
            raise FrameError(f"{path}: not an acquisition file")
        off = 8
        try:
            version, hlen = struct.unpack_from("<HI", buf, off)
            if version != FILE_VERSION:
                raise FrameError(f"unsupported file version {version}")
            off += 6
            header = json.loads(buf[off:off + hlen])
            off += hlen
            (flen,) = struct.unpack_from("<Q", buf, off)
            off += 8
            if off + flen > len(buf):
                raise FrameError("frame section truncated")
            chunks, gaps = decode_stream(buf[off:off + flen])
            off += flen
            truth = {}
            if off < len(buf):
                (ntruth,) = struct.unpack_from("<I", buf, off)
                off += 4
                for _ in range(ntruth):
                    (klen,) = struct.unpack_from("<H", buf, off)
                    name = buf[off + 2:off + 2 + klen].decode()
                    off += 2 + klen
                    (dlen,) = struct.unpack_from("<Q", buf, off)
                    off += 8
                    if off + dlen > len(buf):
                        raise FrameError(f"truth array {name!r} truncated")
                    truth[name] = np.frombuffer(buf, "<f8", dlen // 8, off).copy()
                    off += dlen
        except (struct.error, json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise FrameError(f"{path}: corrupt container ({exc})") from exc
        return cls(header, chunks, truth, gaps)


def chunk_stream(phase, amplitude, config_id: int, count: int = 165, seq0: int = 0,
                 drift_words=None, monitor: int = 0):
    """Split one output stream into frames of ``count`` samples."""
    out = []
    for s in range(0, len(phase), count):
        w = 0 if drift_words is None else int(drift_words[min(s + count, len(phase)) - 1])
        out.append(Chunk(seq0 + len(out), config_id, np.asarray(phase[s:s + count]),
                         np.asarray(amplitude[s:s + count]), w, monitor))
    return out
