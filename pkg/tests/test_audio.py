import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cospeech.audio import (
    CANONICAL_RATE,
    AudioClip,
    clip_audio_span,
    clip_sample_count,
    load_wav,
    resample_audio,
    write_wav,
)
from cospeech.errors import TruncatedFile, UnsupportedWav
from cospeech.motion import ClipWindow


def _write_raw_wav(path, fmt_code=1, channels=1, rate=16000, bits=16, payload=b"\x00\x00"):
    block = channels * bits // 8
    with open(path, "wb") as fh:
        fh.write(b"RIFF")
        fh.write(struct.pack("<I", 36 + len(payload)))
        fh.write(b"WAVE")
        fh.write(b"fmt ")
        fh.write(struct.pack("<IHHIIHH", 16, fmt_code, channels, rate,
                             rate * block, block, bits))
        fh.write(b"data")
        fh.write(struct.pack("<I", len(payload)))
        fh.write(payload)


class TestWavIo:
    def test_round_trip_within_quantization(self, tmp_path):
        rng = np.random.default_rng(0)
        clip = AudioClip(sample_rate=16000, samples=rng.uniform(-0.9, 0.9, 500))
        p = tmp_path / "a.wav"
        write_wav(p, clip)
        back = load_wav(p)
        assert back.sample_rate == 16000
        assert len(back.samples) == 500
        # PCM16 quantization step is 1/32768
        np.testing.assert_allclose(back.samples, clip.samples, atol=1.0 / 32768)

    def test_not_riff(self, tmp_path):
        p = tmp_path / "x.wav"
        p.write_bytes(b"OggS" + b"\x00" * 40)
        with pytest.raises(UnsupportedWav):
            load_wav(p)

    def test_stereo_rejected(self, tmp_path):
        p = tmp_path / "s.wav"
        _write_raw_wav(p, channels=2, payload=b"\x00" * 8)
        with pytest.raises(UnsupportedWav):
            load_wav(p)

    def test_float_format_rejected(self, tmp_path):
        p = tmp_path / "f.wav"
        _write_raw_wav(p, fmt_code=3)
        with pytest.raises(UnsupportedWav):
            load_wav(p)

    def test_8bit_rejected(self, tmp_path):
        p = tmp_path / "b.wav"
        _write_raw_wav(p, bits=8, payload=b"\x00")
        with pytest.raises(UnsupportedWav):
            load_wav(p)

    def test_missing_data_chunk(self, tmp_path):
        p = tmp_path / "m.wav"
        with open(p, "wb") as fh:
            fh.write(b"RIFF")
            fh.write(struct.pack("<I", 4))
            fh.write(b"WAVE")
        with pytest.raises(TruncatedFile):
            load_wav(p)

    def test_truncated_data(self, tmp_path):
        p = tmp_path / "t.wav"
        _write_raw_wav(p, payload=b"\x00\x00" * 100)
        raw = p.read_bytes()
        p.write_bytes(raw[:-30])
        with pytest.raises(TruncatedFile):
            load_wav(p)


class TestResample:
    def test_identity_when_rate_matches(self):
        clip = AudioClip(sample_rate=16000, samples=np.ones(10))
        assert resample_audio(clip, 16000) is clip

    def test_ramp_interpolated(self):
        ramp = np.linspace(0, 1, 101).astype(np.float32)
        clip = AudioClip(sample_rate=100, samples=ramp)
        out = resample_audio(clip, 50)
        assert out.sample_rate == 50
        expected = np.interp(np.arange(len(out.samples)) / 50,
                             np.arange(101) / 100, ramp)
        np.testing.assert_allclose(out.samples, expected, atol=1e-6)

    def test_bad_target(self):
        with pytest.raises(UnsupportedWav):
            resample_audio(AudioClip(sample_rate=100, samples=np.zeros(4)), 0)


class TestClipAlignment:
    def test_canonical_clip_length(self):
        # 34 frames at 15 fps and 16 kHz
        assert clip_sample_count(34, 15.0, CANONICAL_RATE) == 36267

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 200), st.integers(8000, 48000))
    def test_sample_count_rounding(self, frames, rate):
        n = clip_sample_count(frames, 15.0, rate)
        assert n == int(round(frames / 15.0 * rate))

    def test_span_no_padding(self):
        audio = AudioClip(sample_rate=16000,
                          samples=np.arange(80000, dtype=np.float32) / 80000)
        span, padded = clip_audio_span(audio, ClipWindow(start_frame=30, length=34), 15.0)
        assert not padded
        assert len(span.samples) == 36267
        start = int(round(30 / 15.0 * 16000))
        np.testing.assert_array_equal(span.samples, audio.samples[start : start + 36267])

    def test_span_padded_past_end(self):
        audio = AudioClip(sample_rate=16000, samples=np.ones(40000, dtype=np.float32))
        span, padded = clip_audio_span(audio, ClipWindow(start_frame=30, length=34), 15.0)
        assert padded
        assert len(span.samples) == 36267
        tail = 36267 - (40000 - 32000)
        np.testing.assert_array_equal(span.samples[-tail:], 0.0)


class TestAudioClip:
    def test_duration(self):
        assert AudioClip(sample_rate=100, samples=np.zeros(250)).duration == 2.5

    def test_nan_rejected(self):
        with pytest.raises(UnsupportedWav):
            AudioClip(sample_rate=100, samples=np.array([0.0, np.nan]))

    def test_bad_rate(self):
        with pytest.raises(UnsupportedWav):
            AudioClip(sample_rate=0, samples=np.zeros(4))
