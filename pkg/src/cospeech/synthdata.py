"""Deterministic synthetic speech-gesture corpus.

Each sample couples a pulse-train audio track with a gesture clip whose mean
joint speed dips to zero exactly on the audio beats: anchor postures sit on
the (frame-aligned) beat grid, alternating between two per-speaker poses,
with raised-cosine interpolation in between. A per-sample semantic motif (a
smooth periodic gesture loop keyed to one script token) is added
on top, optionally amplified by 1.6x when the amplitude-up token appears in
the script. Because strokes are deterministic given audio and speaker, and
motifs deterministic given the script, both generators have a learnable
target at desk scale.

Everything is a pure function of the config, parallelizable per sample via
per-index derived seeds.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass

import numpy as np

from .audio import AudioClip, clip_sample_count, load_wav, write_wav
from .errors import BadConfig, ManifestInvalid
from .motion import PoseSequence, chain_layout, read_pose, write_pose
from .semantic import CodebookProvider, script_hash, read_embeddings, write_embeddings

MANIFEST_VERSION = 1
AMP_TOKEN = "bigger"


@dataclass(frozen=True)
class SynthConfig:
    n_samples: int = 200
    n_speakers: int = 6
    n_joints: int = 10
    clip_len: int = 34
    fps: float = 15.0
    sample_rate: int = 16000
    beat_period: tuple[float, float] = (0.3, 1.2)  # seconds
    n_motifs: int = 6
    n_fillers: int = 20
    fillers_per_script: int = 4
    amp_token_prob: float = 0.3
    amp_gain: float = 1.6
    motif_amp: float = 0.25
    stroke_amp: float = 0.75
    base_amp: float = 0.4
    audio_noise: float = 0.01
    val_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.n_samples < 1 or self.n_speakers < 1 or self.n_joints < 1:
            raise BadConfig("n_samples, n_speakers and n_joints must be positive")
        if self.n_motifs < 2:
            raise BadConfig("need at least two motifs")
        lo, hi = self.beat_period
        if not (0.3 - 1e-9 <= lo <= hi <= 1.2 + 1e-9):
            raise BadConfig("beat periods must lie within [0.3, 1.2] s")
        if not 0 <= self.amp_token_prob <= 1:
            raise BadConfig("amp_token_prob must be a probability")

    @property
    def pose_dims(self) -> int:
        return self.n_joints * 3

    @property
    def audio_len(self) -> int:
        return clip_sample_count(self.clip_len, self.fps, self.sample_rate)


@dataclass(frozen=True)
class SpeechSample:
    sample_id: str
    audio: AudioClip
    script: tuple[str, ...]
    text_embedding: np.ndarray
    poses: PoseSequence
    speaker_id: int
    gt_audio_beats: np.ndarray  # seconds
    motif_labels: tuple[int, ...]

    @property
    def script_text(self) -> str:
        return " ".join(self.script)


def motif_templates(cfg: SynthConfig) -> np.ndarray:
    """[M, F, J, 3] smooth zero-temporal-mean gesture loops.

    Each motif is a low-frequency Fourier loop whose period is the clip
    hop (clip_len - 4 frames, i.e. the stride of overlapping windows into a
    longer performance). The loop value depends only on the absolute frame
    index mod that period, so any two windows of one stream agree about the
    motif wherever they overlap. A single fundamental harmonic keeps the
    motif velocity well below the stroke velocity, so motifs never mask the
    speed minima that mark the beats.
    """
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x7E39]))
    loop = cfg.clip_len - 4
    frames = np.arange(cfg.clip_len)
    phase = 2.0 * np.pi * frames / loop
    out = np.empty((cfg.n_motifs, cfg.clip_len, cfg.n_joints, 3), dtype=np.float64)
    for m in range(cfg.n_motifs):
        a = rng.normal(0.0, cfg.motif_amp, size=(cfg.n_joints, 3))
        b = rng.normal(0.0, cfg.motif_amp, size=(cfg.n_joints, 3))
        tpl = np.sin(phase)[:, None, None] * a + np.cos(phase)[:, None, None] * b
        out[m] = tpl - tpl.mean(axis=0, keepdims=True)
    return out


def speaker_postures(cfg: SynthConfig) -> tuple[np.ndarray, np.ndarray]:
    """Per-speaker (base, stroke_delta) postures, each [S, J, 3]."""
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x5EAF]))
    base = rng.normal(0.0, cfg.base_amp, size=(cfg.n_speakers, cfg.n_joints, 3))
    delta = rng.normal(0.0, cfg.stroke_amp, size=(cfg.n_speakers, cfg.n_joints, 3))
    return base, delta


def _beat_grid(rng, cfg: SynthConfig) -> tuple[np.ndarray, int, int]:
    """Frame-aligned beat grid: (beat_frames within the clip, period, phase).

    Every clip is a window of a conceptually infinite stream, so the phase
    covers the full [0, period) range: any 34-frame window of a longer
    performance then looks exactly like a training clip. The period is
    capped so each window always contains at least two clicks (enough to
    infer the grid from audio alone)."""
    p_lo = max(5, int(np.ceil(cfg.beat_period[0] * cfg.fps)))
    p_hi = min((cfg.clip_len - 2) // 2, int(np.floor(cfg.beat_period[1] * cfg.fps)))
    period = int(rng.integers(p_lo, p_hi + 1))
    phase = int(rng.integers(0, period))
    beats = np.arange(phase, cfg.clip_len, period)
    return beats, period, phase


def _click(cfg: SynthConfig, length: int, freq: float = 1760.0) -> np.ndarray:
    t = np.arange(length) / cfg.sample_rate
    return 0.7 * np.exp(-t / 0.008) * np.sin(2 * np.pi * freq * t)


def _render_audio(rng, cfg: SynthConfig, beat_times: np.ndarray, motif: int,
                  has_amp: bool, parity: int = 0,
                  n_samples: int | None = None) -> np.ndarray:
    """Clicks on the beats over a low hum. The motif id and the amplitude flag
    are also encoded as quiet steady tones: they add (almost) nothing to the
    spectral flux the onset detector sees, but the waveform encoder can read
    them, which makes the pose clip fully predictable from audio + speaker.
    The click pitch alternates with the stroke anchor parity (high = raised
    posture) so a window into a longer stream still hears which way the
    current stroke is heading."""
    n = cfg.audio_len if n_samples is None else n_samples
    t = np.arange(n) / cfg.sample_rate
    x = 0.05 * np.sin(2 * np.pi * 220.0 * t)
    x += 0.06 * np.sin(2 * np.pi * (300.0 + 60.0 * motif) * t)
    if has_amp:
        x += 0.05 * np.sin(2 * np.pi * 100.0 * t)
    length = int(0.03 * cfg.sample_rate)
    clicks = (_click(cfg, length, 1760.0), _click(cfg, length, 1175.0))
    for j, tb in enumerate(beat_times):
        s = int(round(tb * cfg.sample_rate))
        seg = clicks[(j + parity) % 2][: max(0, n - s)]
        x[s : s + len(seg)] += seg
    x += rng.normal(0.0, cfg.audio_noise, size=n)
    return np.clip(x, -1.0, 1.0)


def _render_strokes(cfg: SynthConfig, base, delta, beats: np.ndarray,
                    period: int, parity: int = 0) -> np.ndarray:
    """Anchor postures alternate base+delta / base-delta on the extended beat
    grid; frames between anchors follow a raised-cosine ease, so speed is
    zero exactly on the anchors. ``parity`` flips which anchors get +delta
    (the first in-clip beat is +delta when parity is 0)."""
    first = int(beats[0])
    # extend the grid to cover the whole clip
    f = first
    k = 0
    while f > 0:
        f -= period
        k -= 1
    anchors_frames = list(range(f, cfg.clip_len + period, period))
    idx0 = k  # parity index of the first extended anchor
    out = np.empty((cfg.clip_len, cfg.n_joints, 3), dtype=np.float64)
    postures = [base + delta, base - delta]
    for fr in range(cfg.clip_len):
        seg = (fr - anchors_frames[0]) // period
        a0 = anchors_frames[seg]
        a1 = a0 + period
        u = (fr - a0) / period
        w = 0.5 * (1.0 - np.cos(np.pi * u))
        p0 = postures[(idx0 + seg + parity) % 2]
        p1 = postures[(idx0 + seg + parity + 1) % 2]
        out[fr] = p0 + (p1 - p0) * w
    return out


def _make_script(rng, cfg: SynthConfig, motif: int) -> tuple[tuple[str, ...], bool]:
    fillers = [f"word{int(i):02d}" for i in
               rng.integers(0, cfg.n_fillers, size=cfg.fillers_per_script)]
    tokens = fillers + [f"motif{motif:02d}"]
    has_amp = bool(rng.random() < cfg.amp_token_prob)
    if has_amp:
        tokens.append(AMP_TOKEN)
    order = rng.permutation(len(tokens))
    return tuple(tokens[i] for i in order), has_amp


def make_sample(cfg: SynthConfig, index: int, templates, base_all, delta_all,
                provider: CodebookProvider) -> SpeechSample:
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, index]))
    speaker = int(rng.integers(0, cfg.n_speakers))
    beats, period, _ = _beat_grid(rng, cfg)
    beat_times = beats / cfg.fps

    motif = int(rng.integers(0, cfg.n_motifs))
    script, has_amp = _make_script(rng, cfg, motif)
    parity = int(rng.integers(0, 2))

    audio = AudioClip(sample_rate=cfg.sample_rate,
                      samples=_render_audio(rng, cfg, beat_times, motif, has_amp,
                                            parity))

    pose = _render_strokes(cfg, base_all[speaker], delta_all[speaker], beats,
                           period, parity)
    pose = pose + templates[motif] * (cfg.amp_gain if has_amp else 1.0)

    emb = provider(" ".join(script))
    return SpeechSample(
        sample_id=f"{index:05d}",
        audio=audio,
        script=script,
        text_embedding=emb,
        poses=PoseSequence(fps=cfg.fps, layout=chain_layout(cfg.n_joints), data=pose),
        speaker_id=speaker,
        gt_audio_beats=beat_times,
        motif_labels=(motif,),
    )


def make_corpus(cfg: SynthConfig) -> tuple[list[SpeechSample], list[SpeechSample]]:
    """Generate the full corpus and split it 90/10 by seeded shuffle."""
    templates = motif_templates(cfg)
    base_all, delta_all = speaker_postures(cfg)
    provider = CodebookProvider(seed=cfg.seed)
    samples = [
        make_sample(cfg, i, templates, base_all, delta_all, provider)
        for i in range(cfg.n_samples)
    ]
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x59117]))
    order = rng.permutation(cfg.n_samples)
    n_val = int(round(cfg.n_samples * cfg.val_fraction))
    val_idx = set(order[:n_val].tolist())
    train = [s for i, s in enumerate(samples) if i not in val_idx]
    val = [s for i, s in enumerate(samples) if i in val_idx]
    return train, val


def render_long_audio(cfg: SynthConfig, n_frames: int, motif: int = 0,
                      has_amp: bool = False, seed: int = 0):
    """Audio from the corpus distribution but of arbitrary length: one
    continuous beat grid and a single motif tone throughout. Concatenating
    unrelated clip audios instead would change grid/tone mid-stream, which no
    training window ever shows. Returns (clip, beat_times_seconds)."""
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x10A6, seed]))
    p_lo = max(5, int(np.ceil(cfg.beat_period[0] * cfg.fps)))
    p_hi = min((cfg.clip_len - 2) // 2, int(np.floor(cfg.beat_period[1] * cfg.fps)))
    period = int(rng.integers(p_lo, p_hi + 1))
    phase = int(rng.integers(0, period))
    beat_times = np.arange(phase, n_frames, period) / cfg.fps
    parity = int(rng.integers(0, 2))
    n = clip_sample_count(n_frames, cfg.fps, cfg.sample_rate)
    samples = _render_audio(rng, cfg, beat_times, motif, has_amp, parity,
                            n_samples=n)
    return AudioClip(sample_rate=cfg.sample_rate, samples=samples), beat_times


def motif_recover(clip, templates: np.ndarray) -> int:
    """Nearest-template motif id after removing the clip's mean posture.

    Ties break toward the lowest id (argmin convention)."""
    data = clip.data if isinstance(clip, PoseSequence) else np.asarray(clip)
    x = data - data.mean(axis=0, keepdims=True)
    dists = [float(np.mean((x - tpl) ** 2)) for tpl in templates]
    return int(np.argmin(dists))


# ---------------------------------------------------------------- on-disk


def corpus_arrays(samples: list[SpeechSample]):
    """Stack a sample list into training arrays:
    (poses [N,F,J*D], waves [N,n], speakers [N], embeddings [N,512])."""
    poses = np.stack([s.poses.flat for s in samples])
    waves = np.stack([s.audio.samples for s in samples])
    speakers = np.array([s.speaker_id for s in samples], dtype=np.int64)
    embs = np.stack([s.text_embedding for s in samples])
    return poses, waves, speakers, embs


def write_corpus(path, samples: list[SpeechSample], cfg: SynthConfig) -> None:
    os.makedirs(os.path.join(path, "wav"), exist_ok=True)
    os.makedirs(os.path.join(path, "pose"), exist_ok=True)
    entries = []
    embeddings: dict[bytes, np.ndarray] = {}
    for s in samples:
        wav_rel = f"wav/{s.sample_id}.wav"
        pose_rel = f"pose/{s.sample_id}.lspk"
        write_wav(os.path.join(path, wav_rel), s.audio)
        write_pose(os.path.join(path, pose_rel), s.poses)
        key = script_hash(s.script_text)
        embeddings[key] = s.text_embedding
        entries.append({
            "id": s.sample_id,
            "wav": wav_rel,
            "pose": pose_rel,
            "emb_key": key.hex(),
            "speaker": s.speaker_id,
            "beats": [float(b) for b in s.gt_audio_beats],
            "motifs": list(s.motif_labels),
            "script": list(s.script),
        })
    write_embeddings(os.path.join(path, "embeddings.lsem"), embeddings)
    manifest = {"version": MANIFEST_VERSION, "config": asdict(cfg), "samples": entries}
    with open(os.path.join(path, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)


def read_corpus(path) -> tuple[list[SpeechSample], SynthConfig]:
    manifest_path = os.path.join(path, "manifest.json")
    if not os.path.exists(manifest_path):
        raise ManifestInvalid(f"{path}: no manifest.json")
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    if manifest.get("version") != MANIFEST_VERSION:
        raise ManifestInvalid(f"{path}: unsupported manifest version")
    try:
        raw_cfg = dict(manifest["config"])
        raw_cfg["beat_period"] = tuple(raw_cfg["beat_period"])
        cfg = SynthConfig(**raw_cfg)
        entries = manifest["samples"]
    except (KeyError, TypeError) as exc:
        raise ManifestInvalid(f"{path}: malformed manifest ({exc})") from exc
    emb_path = os.path.join(path, "embeddings.lsem")
    table = read_embeddings(emb_path) if os.path.exists(emb_path) else {}
    samples = []
    for e in entries:
        try:
            wav_p = os.path.join(path, e["wav"])
            pose_p = os.path.join(path, e["pose"])
            if not os.path.exists(wav_p) or not os.path.exists(pose_p):
                raise ManifestInvalid(f"{path}: missing files for sample {e['id']}")
            key = bytes.fromhex(e["emb_key"])
            emb = table.get(key)
            if emb is None:
                raise ManifestInvalid(f"{path}: missing embedding for sample {e['id']}")
            samples.append(SpeechSample(
                sample_id=e["id"],
                audio=load_wav(wav_p),
                script=tuple(e.get("script", ())),
                text_embedding=emb,
                poses=read_pose(pose_p),
                speaker_id=int(e["speaker"]),
                gt_audio_beats=np.asarray(e["beats"], dtype=np.float64),
                motif_labels=tuple(int(m) for m in e["motifs"]),
            ))
        except KeyError as exc:
            raise ManifestInvalid(f"{path}: sample entry missing {exc}") from exc
    return samples, cfg
