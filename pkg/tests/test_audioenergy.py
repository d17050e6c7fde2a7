import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from famviz.audioenergy import (
    PcmClip,
    derive_energy_threshold,
    frame_energy,
    read_wav,
    write_wav,
)
from famviz.errors import FormatError, InsufficientDataError, MalformedInputError
from famviz.timeline import FrameGrid

RATE = 1000


def wav_bytes(samples: np.ndarray, channels=1, tag=1, bits=16, rate=RATE, extra_chunks=b""):
    width = bits // 8
    if bits == 16:
        payload = np.asarray(samples, dtype="<i2").tobytes()
    else:
        payload = np.asarray(samples, dtype="<f4").tobytes()
    fmt = struct.pack("<HHIIHH", tag, channels, rate, rate * width * channels, width * channels, bits)
    body = (b"WAVE" + extra_chunks + b"fmt " + struct.pack("<I", len(fmt)) + fmt
            + b"data" + struct.pack("<I", len(payload)) + payload)
    return b"RIFF" + struct.pack("<I", len(body)) + body


def test_zeros_decode_to_zeros():
    clip = read_wav(wav_bytes(np.zeros(100, dtype=np.int16)))
    assert clip.sample_rate == RATE
    assert np.all(clip.samples == 0.0)


def test_int16_min_is_minus_one():
    clip = read_wav(wav_bytes(np.array([-32768, 16384], dtype=np.int16)))
    assert clip.samples.tolist() == [-1.0, 0.5]


def test_stereo_is_averaged():
    frames = np.array([[0.5, -0.5], [0.25, 0.75]], dtype=np.float32).ravel()
    clip = read_wav(wav_bytes(frames, channels=2, tag=3, bits=32))
    assert clip.samples.tolist() == [0.0, 0.5]


def test_unknown_chunks_are_skipped():
    junk = b"LIST" + struct.pack("<I", 3) + b"abc\x00"
    clip = read_wav(wav_bytes(np.array([100], dtype=np.int16), extra_chunks=junk))
    assert clip.samples.size == 1


def test_extensible_pcm():
    payload = np.array([0, 32767], dtype="<i2").tobytes()
    fmt = struct.pack("<HHIIHH", 0xFFFE, 1, RATE, RATE * 2, 2, 16) + struct.pack("<HHI", 22, 16, 0)
    fmt += struct.pack("<H", 1) + b"\x00" * 14
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt + b"data" + struct.pack("<I", 4) + payload
    clip = read_wav(b"RIFF" + struct.pack("<I", len(body)) + body)
    assert clip.samples[1] == pytest.approx(32767 / 32768)


def test_write_read_round_trip():
    x = np.linspace(-1, 1, 50)
    assert np.array_equal(read_wav(write_wav(PcmClip(RATE, x), bits=32)).samples, x.astype(np.float32))
    back = read_wav(write_wav(PcmClip(RATE, x * 0.5), bits=16)).samples
    assert np.max(np.abs(back - x * 0.5)) <= 1 / 32768


@pytest.mark.parametrize("mutate,chunk", [
    (lambda b: b[:12] + b[36:], "fmt "),  # drop the fmt chunk
    (lambda b: b[:-10], "data"),  # truncated payload
    (lambda b: b[:20] + struct.pack("<H", 6) + b[22:], "fmt "),  # A-law codec
])
def test_format_errors_name_chunk(mutate, chunk):
    good = wav_bytes(np.arange(20, dtype=np.int16))
    with pytest.raises(FormatError) as err:
        read_wav(mutate(good))
    assert err.value.chunk == chunk
    assert chunk.strip() in str(err.value)


def test_missing_data_chunk():
    good = wav_bytes(np.arange(4, dtype=np.int16))
    with pytest.raises(FormatError) as err:
        read_wav(good[:36])
    assert err.value.chunk == "data"


def test_not_riff():
    with pytest.raises(FormatError):
        read_wav(b"OggS" + b"\x00" * 40)


# -- energy ------------------------------------------------------------------

def test_constant_and_silent_energy():
    grid = FrameGrid(2.0, 0.2)
    track = frame_energy(PcmClip(RATE, np.full(5 * RATE, 0.5)), grid)
    assert track.grid.n_frames == 16
    assert np.allclose(track.values, 0.5, atol=1e-15)
    assert np.all(frame_energy(PcmClip(RATE, np.zeros(3 * RATE)), grid).values == 0.0)


def test_square_wave_energy_is_one():
    x = np.where(np.arange(4 * RATE) % 10 < 5, 1.0, -1.0)
    assert np.all(frame_energy(PcmClip(RATE, x)).values == 1.0)


def test_partial_window_dropped():
    track = frame_energy(PcmClip(RATE, np.ones(2 * RATE + 150)))
    assert track.grid.n_frames == 1


def test_energy_errors():
    with pytest.raises(MalformedInputError):
        frame_energy(PcmClip(RATE, np.zeros(0)))
    with pytest.raises(MalformedInputError):
        frame_energy(PcmClip(RATE, np.zeros(RATE)))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.0, 8.0))
def test_energy_sign_and_scale(seed, c):
    x = np.random.default_rng(seed).uniform(-1, 1, 3 * RATE)
    base = frame_energy(PcmClip(RATE, x)).values
    assert np.array_equal(frame_energy(PcmClip(RATE, -x)).values, base)
    scaled = frame_energy(PcmClip(RATE, c * x)).values
    assert np.allclose(scaled, c * base, rtol=1e-12, atol=1e-15)
    chn = [0, 3, 5]
    assert derive_energy_threshold(scaled, chn) == pytest.approx(c * derive_energy_threshold(base, chn), rel=1e-12)


# -- threshold ---------------------------------------------------------------

def test_threshold_examples():
    assert derive_energy_threshold(np.array([0.2, 0.5, 0.01]), [0, 1]) == pytest.approx(0.198, abs=1e-15)
    assert derive_energy_threshold(np.array([1.0]), [0]) == 0.99
    assert derive_energy_threshold(np.zeros(3), [0, 2]) == 0.0


def test_threshold_requires_chn():
    with pytest.raises(InsufficientDataError):
        derive_energy_threshold(np.ones(3), [])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(1e-6, 1e3), min_size=1, max_size=20))
def test_threshold_strictly_below_minimum(values):
    thr = derive_energy_threshold(np.array(values), range(len(values)))
    assert thr < min(values)
