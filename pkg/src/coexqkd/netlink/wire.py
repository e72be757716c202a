"""Framed binary wire format for the distillation channel.

Frame layout (all integers little-endian)::

    offset  size  field
    0       4     magic  b"QKDL"
    4       1     version
    5       4     payload length N (u32)
    9       1     message type
    10      N     payload
    10+N    4     CRC-32 (zlib) of bytes [0, 10+N)

The CRC is checked before the version, so a corrupted version byte reads as
an integrity error and only a well-formed frame from another version raises
VersionError.
"""
from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

from ..errors import FramingError, IntegrityError, VersionError

MAGIC = b"QKDL"
VERSION = 1
HEADER = struct.Struct("<4sBIB")
TRAILER = struct.Struct("<I")
MAX_PAYLOAD = 1 << 26

ALICE, BOB = 0, 1


class AbortCode:
    PROTOCOL = 1
    INTEGRITY = 2
    VERSION = 3
    TRANSPORT = 4
    PARAM_MISMATCH = 5
    CONFIRM_MISMATCH = 6
    FRAMES_MISMATCH = 7
    LOCAL = 8


@dataclass(frozen=True)
class Hello:
    version: int
    role: int


@dataclass(frozen=True)
class DetectionsAnnounce:
    """Bob's in-gate slots for frames [frame_index, frame_index + n_frames),
    as offsets from the first slot of frame_index."""

    frame_index: int
    n_frames: int
    last: bool
    data_slots: tuple[int, ...]
    monitor_slots: tuple[int, ...]


@dataclass(frozen=True)
class SiftDecision:
    frame_index: int
    keep: tuple[bool, ...]
    decoy: tuple[bool, ...]


@dataclass(frozen=True)
class SampleDisclose:
    indices: tuple[int, ...]
    bits: tuple[int, ...]


@dataclass(frozen=True)
class ParamEstimate:
    qber: float
    visibility: float
    visibility_sigma: float
    sample_errors: int
    sample_size: int


@dataclass(frozen=True)
class PaSeed:
    n: int
    m: int
    seed: tuple[int, ...]


@dataclass(frozen=True)
class KeyConfirm:
    digest: bytes


@dataclass(frozen=True)
class Abort:
    code: int
    detail: str = ""


NetMessage = Union[Hello, DetectionsAnnounce, SiftDecision, SampleDisclose, ParamEstimate,
                   PaSeed, KeyConfirm, Abort]


# -- payload codecs --------------------------------------------------------


def _u32_array(values) -> bytes:
    arr = np.asarray(values, dtype="<u4")
    return struct.pack("<I", arr.size) + arr.tobytes()


def _bit_array(values) -> bytes:
    arr = np.asarray(values, dtype=np.uint8)
    return struct.pack("<I", arr.size) + np.packbits(arr).tobytes()


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise FramingError("payload shorter than its fields")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        s = struct.Struct(fmt)
        return s.unpack(self.take(s.size))

    def u32_array(self) -> tuple[int, ...]:
        (n,) = self.unpack("<I")
        return tuple(np.frombuffer(self.take(4 * n), dtype="<u4").tolist())

    def bit_array(self) -> tuple[int, ...]:
        (n,) = self.unpack("<I")
        packed = np.frombuffer(self.take((n + 7) // 8), dtype=np.uint8)
        return tuple(np.unpackbits(packed)[:n].tolist())

    def done(self) -> None:
        if self.pos != len(self.buf):
            raise FramingError("trailing bytes in payload")


def _enc_hello(m: Hello) -> bytes:
    return struct.pack("<BB", m.version, m.role)


def _dec_hello(r: _Reader) -> Hello:
    return Hello(*r.unpack("<BB"))


def _enc_announce(m: DetectionsAnnounce) -> bytes:
    return (struct.pack("<QIB", m.frame_index, m.n_frames, int(m.last))
            + _u32_array(m.data_slots) + _u32_array(m.monitor_slots))


def _dec_announce(r: _Reader) -> DetectionsAnnounce:
    fi, nf, last = r.unpack("<QIB")
    return DetectionsAnnounce(fi, nf, bool(last), r.u32_array(), r.u32_array())


def _enc_sift(m: SiftDecision) -> bytes:
    return struct.pack("<Q", m.frame_index) + _bit_array(m.keep) + _bit_array(m.decoy)


def _dec_sift(r: _Reader) -> SiftDecision:
    (fi,) = r.unpack("<Q")
    return SiftDecision(fi, tuple(map(bool, r.bit_array())), tuple(map(bool, r.bit_array())))


def _enc_sample(m: SampleDisclose) -> bytes:
    return _u32_array(m.indices) + _bit_array(m.bits)


def _dec_sample(r: _Reader) -> SampleDisclose:
    return SampleDisclose(r.u32_array(), r.bit_array())


def _enc_param(m: ParamEstimate) -> bytes:
    return struct.pack("<dddII", m.qber, m.visibility, m.visibility_sigma, m.sample_errors,
                       m.sample_size)


def _dec_param(r: _Reader) -> ParamEstimate:
    return ParamEstimate(*r.unpack("<dddII"))


def _enc_seed(m: PaSeed) -> bytes:
    return struct.pack("<II", m.n, m.m) + _bit_array(m.seed)


def _dec_seed(r: _Reader) -> PaSeed:
    n, m = r.unpack("<II")
    return PaSeed(n, m, r.bit_array())


def _enc_confirm(m: KeyConfirm) -> bytes:
    return struct.pack("<B", len(m.digest)) + m.digest


def _dec_confirm(r: _Reader) -> KeyConfirm:
    (n,) = r.unpack("<B")
    return KeyConfirm(r.take(n))


def _enc_abort(m: Abort) -> bytes:
    detail = m.detail.encode("utf-8")
    return struct.pack("<BH", m.code, len(detail)) + detail


def _dec_abort(r: _Reader) -> Abort:
    code, n = r.unpack("<BH")
    try:
        return Abort(code, r.take(n).decode("utf-8"))
    except UnicodeDecodeError:
        raise FramingError("abort detail is not UTF-8") from None


_CODECS: dict[type, tuple[int, Callable, Callable]] = {
    Hello: (1, _enc_hello, _dec_hello),
    DetectionsAnnounce: (2, _enc_announce, _dec_announce),
    SiftDecision: (3, _enc_sift, _dec_sift),
    SampleDisclose: (4, _enc_sample, _dec_sample),
    ParamEstimate: (5, _enc_param, _dec_param),
    PaSeed: (6, _enc_seed, _dec_seed),
    KeyConfirm: (7, _enc_confirm, _dec_confirm),
    Abort: (8, _enc_abort, _dec_abort),
}
_BY_TAG = {tag: (cls, dec) for cls, (tag, _, dec) in _CODECS.items()}


def encode_message(msg: NetMessage, version: int = VERSION) -> bytes:
    tag, enc, _ = _CODECS[type(msg)]
    payload = enc(msg)
    head = HEADER.pack(MAGIC, version, len(payload), tag)
    body = head + payload
    return body + TRAILER.pack(zlib.crc32(body))


def parse_header(head: bytes) -> int:
    """Validate a frame header and return the payload length."""
    if len(head) < HEADER.size:
        raise FramingError(f"frame truncated: {len(head)} header bytes")
    magic, _, length, _ = HEADER.unpack_from(head)
    if magic != MAGIC:
        raise FramingError(f"bad magic {magic!r}")
    if length > MAX_PAYLOAD:
        raise FramingError(f"payload length {length} exceeds {MAX_PAYLOAD}")
    return length


def decode_message(frame: bytes, version: int = VERSION) -> NetMessage:
    length = parse_header(frame)
    total = HEADER.size + length + TRAILER.size
    if len(frame) != total:
        raise FramingError(f"frame is {len(frame)} bytes, header says {total}")
    body = frame[:-TRAILER.size]
    (crc,) = TRAILER.unpack(frame[-TRAILER.size:])
    if zlib.crc32(body) != crc:
        raise IntegrityError("CRC-32 mismatch")
    _, ver, _, tag = HEADER.unpack_from(frame)
    if ver != version:
        raise VersionError(f"peer speaks protocol version {ver}, expected {version}")
    if tag not in _BY_TAG:
        raise FramingError(f"unknown message type {tag}")
    r = _Reader(body[HEADER.size:])
    msg = _BY_TAG[tag][1](r)
    r.done()
    return msg


def read_frame(recv_exact: Callable[[int], bytes]) -> bytes:
    """Pull one whole frame off a byte stream."""
    head = recv_exact(HEADER.size)
    length = parse_header(head)
    return head + recv_exact(length + TRAILER.size)
