"""Waveform I/O and alignment of audio spans to motion clip windows.

Only mono PCM16 WAV is accepted; everything downstream runs at a canonical
16 kHz. Resampling is linear interpolation: the consumers care about beat
timing, not spectral fidelity.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import TruncatedFile, UnsupportedWav
from .motion import ClipWindow

CANONICAL_RATE = 16000


@dataclass(frozen=True)
class AudioClip:
    sample_rate: int
    samples: np.ndarray  # mono float32 in [-1, 1]

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.float32).reshape(-1)
        if self.sample_rate <= 0:
            raise UnsupportedWav("sample_rate must be positive")
        if not np.all(np.isfinite(s)):
            raise UnsupportedWav("samples contain non-finite values")
        object.__setattr__(self, "samples", s)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


def load_wav(path) -> AudioClip:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 12 or raw[:4] != b"RIFF" or raw[8:12] != b"WAVE":
        raise UnsupportedWav(f"{path}: not a RIFF/WAVE file")
    pos = 12
    fmt = None
    data = None
    while pos + 8 <= len(raw):
        cid, size = struct.unpack_from("<4sI", raw, pos)
        pos += 8
        chunk = raw[pos : pos + size]
        if cid == b"fmt ":
            fmt = chunk
        elif cid == b"data":
            if len(chunk) < size:
                raise TruncatedFile(f"{path}: data chunk shorter than declared")
            data = chunk
        pos += size + (size & 1)
    if fmt is None or data is None:
        raise TruncatedFile(f"{path}: missing fmt or data chunk")
    if len(fmt) < 16:
        raise TruncatedFile(f"{path}: short fmt chunk")
    audio_format, channels, rate, _, _, bits = struct.unpack_from("<HHIIHH", fmt, 0)
    if audio_format != 1 or bits != 16:
        raise UnsupportedWav(f"{path}: only PCM16 supported")
    if channels != 1:
        raise UnsupportedWav(f"{path}: only mono supported, got {channels} channels")
    samples = np.frombuffer(data, dtype="<i2").astype(np.float32) / 32768.0
    return AudioClip(sample_rate=int(rate), samples=samples)


def write_wav(path, clip: AudioClip) -> None:
    pcm = np.clip(np.round(clip.samples * 32768.0), -32768, 32767).astype("<i2")
    data = pcm.tobytes()
    with open(path, "wb") as fh:
        fh.write(b"RIFF")
        fh.write(struct.pack("<I", 36 + len(data)))
        fh.write(b"WAVE")
        fh.write(b"fmt ")
        fh.write(struct.pack("<IHHIIHH", 16, 1, 1, clip.sample_rate,
                             clip.sample_rate * 2, 2, 16))
        fh.write(b"data")
        fh.write(struct.pack("<I", len(data)))
        fh.write(data)


def resample_audio(clip: AudioClip, target_rate: int = CANONICAL_RATE) -> AudioClip:
    if target_rate <= 0:
        raise UnsupportedWav("target_rate must be positive")
    if target_rate == clip.sample_rate:
        return clip
    n = len(clip.samples)
    n_out = max(1, int(round(n * target_rate / clip.sample_rate)))
    t_src = np.arange(n) / clip.sample_rate
    t_tgt = np.arange(n_out) / target_rate
    out = np.interp(t_tgt, t_src, clip.samples.astype(np.float64))
    return AudioClip(sample_rate=int(target_rate), samples=out.astype(np.float32))


def clip_sample_count(length_frames: int, fps: float, sample_rate: int) -> int:
    """Number of audio samples covering ``length_frames`` motion frames."""
    return int(round(length_frames / fps * sample_rate))


def clip_audio_span(
    audio: AudioClip, clip: ClipWindow, fps: float = 15.0
) -> tuple[AudioClip, bool]:
    """Audio span aligned to a motion clip window.

    Returns exactly round(length/fps * sample_rate) samples; spans reaching
    past the end of the waveform are zero-padded and flagged.
    """
    n = clip_sample_count(clip.length, fps, audio.sample_rate)
    start = int(round(clip.start_frame / fps * audio.sample_rate))
    out = np.zeros(n, dtype=np.float32)
    src = audio.samples[start : start + n]
    out[: len(src)] = src
    padded = len(src) < n
    return AudioClip(sample_rate=audio.sample_rate, samples=out), padded
