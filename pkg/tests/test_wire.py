import math
import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mcuphase.wire import (AMP_LSB, PHASE_LSB, AcquisitionFile, Chunk, EncodingError, FrameError,
                           IntegrityError, chunk_stream, crc32_mpeg2, decode_chunk, decode_stream,
                           encode_chunk, find_gaps, frame_size)


def make_chunk(n=4, seq=1, **kw):
    rng = np.random.default_rng(seq)
    return Chunk(seq, kw.pop("config_id", 2), rng.uniform(-3, 3, n), rng.uniform(0, 1.2, n), **kw)


def test_crc_check_value():
    # catalogue check value of CRC-32/MPEG-2
    assert crc32_mpeg2(b"123456789") == 0x0376E6E7


def test_crc_matches_bitwise_reference():
    data = bytes(range(200))
    crc = 0xFFFFFFFF
    for b in data:
        crc ^= b << 24
        for _ in range(8):
            crc = ((crc << 1) ^ 0x04C11DB7) & 0xFFFFFFFF if crc & 0x80000000 else (crc << 1) & 0xFFFFFFFF
    assert crc32_mpeg2(data) == crc


def test_zero_payload():
    frame = encode_chunk(Chunk(0, 0, np.zeros(3), np.zeros(3)))
    assert frame[12:12 + 18] == bytes(18)


def test_layout_is_little_endian():
    frame = encode_chunk(Chunk(0x01020304, 0x0506, np.array([PHASE_LSB]), np.array([AMP_LSB]),
                               f_drift_word=0x0102030405, monitor=7))
    assert frame[:4] == b"MCPH"
    assert frame[4:8] == bytes([4, 3, 2, 1])
    assert frame[8:10] == bytes([6, 5])
    assert frame[10:12] == bytes([1, 0])
    assert struct.unpack("<i", frame[12:16])[0] == 1
    assert struct.unpack("<H", frame[16:18])[0] == 1
    assert struct.unpack("<Q", frame[18:26])[0] == 0x0102030405
    assert len(frame) == frame_size(1)


def test_plus_pi_is_max_code():
    frame = encode_chunk(Chunk(0, 0, np.array([math.pi, -math.pi]), np.array([1.25, 0.0])))
    assert struct.unpack("<ii", frame[12:20]) == (2 ** 31 - 1, -2 ** 31)
    assert struct.unpack("<H", frame[20:22])[0] == 0xFFFF


@pytest.mark.parametrize("phase,amp", [([3.2], [0.1]), ([0.0], [1.3]), ([0.0], [-0.01]),
                                       ([float("nan")], [0.1])])
def test_out_of_range_values_raise(phase, amp):
    with pytest.raises(EncodingError):
        encode_chunk(Chunk(0, 0, np.array(phase), np.array(amp)))


def test_wide_drift_word_raises():
    with pytest.raises(EncodingError):
        encode_chunk(Chunk(0, 0, np.zeros(1), np.zeros(1), f_drift_word=1 << 48))


@settings(max_examples=100)
@given(st.lists(st.tuples(st.floats(-math.pi, math.pi - PHASE_LSB / 2),
                          st.floats(0.0, 1.25 - AMP_LSB / 2)), max_size=64),
       st.integers(0, 2 ** 32 - 1), st.integers(0, 2 ** 48 - 1))
def test_round_trip_half_lsb(samples, seq, word):
    ph = np.array([s[0] for s in samples])
    am = np.array([s[1] for s in samples])
    c = decode_chunk(encode_chunk(Chunk(seq, 3, ph, am, word, 99)))
    assert c.seq == seq and c.config_id == 3 and c.f_drift_word == word and c.monitor == 99
    assert np.all(np.abs(c.phase - ph) <= PHASE_LSB / 2)
    assert np.all(np.abs(c.amplitude - am) <= AMP_LSB / 2)


def test_every_single_bit_flip_detected():
    frame = encode_chunk(make_chunk(8, seq=7))
    for bit in range(8 * len(frame)):
        buf = bytearray(frame)
        buf[bit // 8] ^= 1 << (bit % 8)
        with pytest.raises(IntegrityError):
            decode_chunk(bytes(buf))


def test_integrity_error_names_sequence():
    buf = bytearray(encode_chunk(make_chunk(seq=42)))
    buf[-10] ^= 0xFF
    with pytest.raises(IntegrityError, match="seq=42") as info:
        decode_chunk(bytes(buf))
    assert info.value.seq == 42


def test_truncated_frame():
    frame = encode_chunk(make_chunk(seq=1))
    with pytest.raises(FrameError):
        decode_stream(frame[:-3])
    with pytest.raises(FrameError):
        decode_chunk(frame[:10])


def test_gap_report():
    frames = b"".join(encode_chunk(make_chunk(seq=s)) for s in (6, 7, 9))
    chunks, gaps = decode_stream(frames)
    assert [c.seq for c in chunks] == [6, 7, 9]
    assert gaps == {2: [(7, 1)]}
    assert find_gaps([1, 2, 3]) == []


def test_chunk_stream_splits_and_numbers():
    ph = np.zeros(400)
    parts = chunk_stream(ph, ph, 1, count=165, seq0=10)
    assert [p.count for p in parts] == [165, 165, 70]
    assert [p.seq for p in parts] == [10, 11, 12]
    assert frame_size(165) == 1022


def test_acquisition_file_round_trip(tmp_path):
    chunks = [make_chunk(5, seq=s, config_id=1) for s in range(3)]
    truth = {"eta": np.linspace(0, 1, 7)}
    f = AcquisitionFile({"rate": 1000.0, "scheme": "heterodyne"}, chunks, truth)
    path = tmp_path / "x.acq"
    f.write(path)
    g = AcquisitionFile.read(path)
    assert g.header == f.header
    assert np.array_equal(g.truth["eta"], truth["eta"])
    ph, amp, words = g.stream(1)
    assert len(ph) == 15 and g.gaps == {1: []}
    assert np.allclose(ph, np.concatenate([c.phase for c in chunks]), atol=PHASE_LSB)


def test_acquisition_file_corruption(tmp_path):
    path = tmp_path / "x.acq"
    AcquisitionFile({"a": 1}, [make_chunk(seq=0)]).write(path)
    data = bytearray(path.read_bytes())
    data[40] ^= 0x10
    path.write_bytes(bytes(data))
    with pytest.raises((IntegrityError, FrameError)):
        AcquisitionFile.read(path)
    path.write_bytes(b"not a file")
    with pytest.raises(FrameError):
        AcquisitionFile.read(path)
