"""Evaluation metrics: Fréchet gesture distance over a learned 32-d clip
feature space, beat consistency between detected audio and motion beats, and
diversity as mean L1 distance between random feature pairs.

Audio beats come from a spectral-flux onset detector (STFT window 512, hop
256, half-wave rectified flux, adaptive mean+1.5*std threshold over a 1 s
window, 0.2 s minimum separation). Motion beats are strict local minima of
mean joint speed whose drop from the preceding local maximum exceeds 10% of
the speed range.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass

import numpy as np
import torch

from . import nn
from .audio import AudioClip
from .errors import BadCovariance, EmptyBatch, NoAudioBeats
from .motion import PoseSequence

FEATURE_DIM = 32


@dataclass
class MetricReport:
    fgd: float
    bc: float
    diversity: float
    n_clips: int
    seed: int
    sigma_bc: float

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "MetricReport":
        return cls(**json.loads(text))


# ---------------------------------------------------------------- feature AE


@dataclass
class AeConfig:
    frames: int = 34
    pose_dims: int = 30
    hidden: int = 64
    latent: int = FEATURE_DIM


def init_ae_params(cfg: AeConfig, seed: int = 0, dtype=torch.float32) -> nn.ParamTree:
    gen = torch.Generator().manual_seed(seed)
    h = cfg.hidden

    def w(shape, fan_in):
        return torch.randn(shape, generator=gen, dtype=dtype) / np.sqrt(fan_in)

    p: nn.ParamTree = {
        "enc.conv0.w": w((h, cfg.pose_dims, 5), cfg.pose_dims * 5),
        "enc.conv0.b": torch.zeros(h, dtype=dtype),
        "enc.conv1.w": w((h, h, 5), h * 5),
        "enc.conv1.b": torch.zeros(h, dtype=dtype),
        "enc.out.w": w((h, cfg.latent), h),
        "enc.out.b": torch.zeros(cfg.latent, dtype=dtype),
        "dec.in.w": w((cfg.latent, h * 9), cfg.latent),
        "dec.in.b": torch.zeros(h * 9, dtype=dtype),
        "dec.conv0.w": w((h, h, 5), h * 5),
        "dec.conv0.b": torch.zeros(h, dtype=dtype),
        "dec.conv1.w": w((h, h, 5), h * 5),
        "dec.conv1.b": torch.zeros(h, dtype=dtype),
        "dec.out.w": w((h, cfg.pose_dims), h),
        "dec.out.b": torch.zeros(cfg.pose_dims, dtype=dtype),
    }
    return p


def ae_encode(params: nn.ParamTree, cfg: AeConfig, clips: torch.Tensor) -> torch.Tensor:
    """[N, F, P] -> [N, latent] deterministic clip features."""
    x = clips.transpose(1, 2)  # [N, P, F]
    x = nn.leaky_relu(nn.conv1d(x, params["enc.conv0.w"], params["enc.conv0.b"],
                                stride=2, padding=2))
    x = nn.leaky_relu(nn.conv1d(x, params["enc.conv1.w"], params["enc.conv1.b"],
                                stride=2, padding=2))
    pooled = x.mean(dim=2)
    return nn.linear(pooled, params["enc.out.w"], params["enc.out.b"])


def ae_decode(params: nn.ParamTree, cfg: AeConfig, z: torch.Tensor) -> torch.Tensor:
    h = cfg.hidden
    x = nn.silu(nn.linear(z, params["dec.in.w"], params["dec.in.b"]))
    x = x.reshape(-1, h, 9)
    x = torch.nn.functional.interpolate(x, size=17, mode="linear", align_corners=True)
    x = nn.leaky_relu(nn.conv1d(x, params["dec.conv0.w"], params["dec.conv0.b"], padding=2))
    x = torch.nn.functional.interpolate(x, size=cfg.frames, mode="linear", align_corners=True)
    x = nn.leaky_relu(nn.conv1d(x, params["dec.conv1.w"], params["dec.conv1.b"], padding=2))
    return nn.linear(x.transpose(1, 2), params["dec.out.w"], params["dec.out.b"])


def train_feature_autoencoder(
    real_clips: np.ndarray,
    cfg: AeConfig | None = None,
    *,
    epochs: int = 60,
    batch_size: int = 64,
    lr: float = 1e-3,
    seed: int = 0,
    log=None,
):
    """MSE reconstruction training; returns (params, cfg, final_recon_mse)."""
    clips = np.asarray(real_clips, dtype=np.float32)
    if clips.size == 0:
        raise EmptyBatch("no clips to train on")
    if cfg is None:
        cfg = AeConfig(frames=clips.shape[1], pose_dims=clips.shape[2])
    params = init_ae_params(cfg, seed=seed)
    for p in params.values():
        p.requires_grad_(True)
    opt = nn.make_optimizer(params, "adam", lr=lr, betas=(0.9, 0.999))
    data = torch.as_tensor(clips)
    rng = np.random.default_rng(seed + 1)
    n = len(data)
    final = float("nan")
    for epoch in range(epochs):
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, batch_size):
            idx = torch.as_tensor(order[start : start + batch_size])
            batch = data[idx]
            rec = ae_decode(params, cfg, ae_encode(params, cfg, batch))
            loss = torch.mean((rec - batch) ** 2)
            nn.zero_grads(params)
            loss.backward()
            nn.optimizer_step(opt, params, nn.collect_grads(params))
            losses.append(float(loss.detach()))
        final = float(np.mean(losses))
        if log is not None:
            log({"epoch": epoch, "mse": final})
    for p in params.values():
        p.requires_grad_(False)
    return params, cfg, final


def embed_clips(params: nn.ParamTree, cfg: AeConfig, clips: np.ndarray) -> np.ndarray:
    with torch.no_grad():
        z = ae_encode(params, cfg, torch.as_tensor(np.asarray(clips, dtype=np.float32)))
    return z.numpy().astype(np.float64)


# ---------------------------------------------------------------- Fréchet


def _sym_psd_sqrt(mat: np.ndarray, clamp: float = 1e-10) -> np.ndarray:
    vals, vecs = np.linalg.eigh((mat + mat.T) / 2.0)
    vals = np.clip(vals, clamp, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def frechet_distance(mu1, sigma1, mu2, sigma2, clamp: float = 1e-10) -> float:
    """||mu1-mu2||^2 + Tr(S1 + S2 - 2 (S1 S2)^{1/2}) between two Gaussians.

    The cross-term square root is computed as sqrt(S1)^T S2 sqrt(S1), which
    is symmetric PSD and shares its trace with sqrt(S1 S2); eigenvalues are
    clamped at ``clamp`` for stability on small sample counts.
    """
    mu1 = np.asarray(mu1, dtype=np.float64).reshape(-1)
    mu2 = np.asarray(mu2, dtype=np.float64).reshape(-1)
    s1 = np.atleast_2d(np.asarray(sigma1, dtype=np.float64))
    s2 = np.atleast_2d(np.asarray(sigma2, dtype=np.float64))
    for m in (mu1, mu2, s1, s2):
        if not np.all(np.isfinite(m)):
            raise BadCovariance("non-finite moments")
    root1 = _sym_psd_sqrt(s1, clamp)
    cross = _sym_psd_sqrt(root1 @ s2 @ root1, clamp)
    d2 = float(np.sum((mu1 - mu2) ** 2) + np.trace(s1) + np.trace(s2) - 2.0 * np.trace(cross))
    return max(d2, 0.0)


def _fit_gaussian(features: np.ndarray):
    mu = features.mean(axis=0)
    if len(features) < 2:
        raise BadCovariance("need at least two clips to fit a covariance")
    sigma = np.cov(features, rowvar=False)
    return mu, np.atleast_2d(sigma)


def fgd(real_clips: np.ndarray, gen_clips: np.ndarray, ae_params: nn.ParamTree,
        ae_cfg: AeConfig) -> float:
    """Fréchet distance between Gaussian fits of real and generated clip
    features in the autoencoder's latent space."""
    fr = embed_clips(ae_params, ae_cfg, real_clips)
    fg = embed_clips(ae_params, ae_cfg, gen_clips)
    if min(len(fr), len(fg)) <= fr.shape[1]:
        warnings.warn("fewer clips than feature dimensions; covariance is degenerate "
                      "and eigenvalue clamping applies", stacklevel=2)
    mu1, s1 = _fit_gaussian(fr)
    mu2, s2 = _fit_gaussian(fg)
    return frechet_distance(mu1, s1, mu2, s2)


# ---------------------------------------------------------------- beats


def detect_audio_beats(
    audio: AudioClip,
    window: int = 512,
    hop: int = 256,
    threshold_k: float = 1.5,
    context_s: float = 1.0,
    min_separation_s: float = 0.2,
) -> np.ndarray:
    """Spectral-flux onset times in seconds."""
    x = audio.samples.astype(np.float64)
    if len(x) < window:
        return np.zeros(0)
    n_frames = 1 + (len(x) - window) // hop
    win = np.hanning(window)
    frames = np.stack([x[i * hop : i * hop + window] * win for i in range(n_frames)])
    mags = np.abs(np.fft.rfft(frames, axis=1))
    flux = np.maximum(mags[1:] - mags[:-1], 0.0).sum(axis=1)
    if len(flux) < 3:
        return np.zeros(0)

    sr = audio.sample_rate
    ctx = max(1, int(round(context_s * sr / hop)))
    thresh = np.empty_like(flux)
    for i in range(len(flux)):
        seg = flux[max(0, i - ctx) : i + ctx + 1]
        thresh[i] = seg.mean() + threshold_k * seg.std()

    peaks = []
    for i in range(1, len(flux) - 1):
        if flux[i] > flux[i - 1] and flux[i] >= flux[i + 1] and flux[i] > thresh[i] and flux[i] > 1e-12:
            peaks.append(i)
    # enforce minimum separation, keeping the stronger peak
    min_gap = min_separation_s * sr / hop
    kept: list[int] = []
    for i in peaks:
        if kept and i - kept[-1] < min_gap:
            if flux[i] > flux[kept[-1]]:
                kept[-1] = i
        else:
            kept.append(i)
    # flux index i compares frames i and i+1; the onset sits near the start
    # of frame i+1
    return np.array([((i + 1) * hop + window / 2) / sr for i in kept])


def motion_speed(seq: PoseSequence) -> np.ndarray:
    """Mean joint displacement magnitude per frame step, length F-1."""
    d = np.diff(seq.data, axis=0)
    return np.linalg.norm(d, axis=2).mean(axis=1)


def detect_motion_beats(seq: PoseSequence, drop_fraction: float = 0.1) -> np.ndarray:
    """Times (s) of strict local minima of mean joint speed whose drop from
    the nearest preceding local maximum exceeds drop_fraction of the range."""
    v = motion_speed(seq)
    if len(v) < 3:
        return np.zeros(0)
    vrange = float(v.max() - v.min())
    if vrange <= 0:
        return np.zeros(0)
    beats = []
    prev_max = v[0]
    for i in range(1, len(v) - 1):
        if v[i] > v[i - 1] and v[i] >= v[i + 1]:
            prev_max = v[i]
        if v[i] < v[i - 1] and v[i] <= v[i + 1]:
            if prev_max - v[i] > drop_fraction * vrange:
                beats.append((i + 0.5) / seq.fps)
    return np.array(beats)


def beat_consistency(
    audio_beats: np.ndarray, motion_beats: np.ndarray, sigma: float = 0.1
) -> float:
    """Mean exp(-gap^2 / (2 sigma^2)) over audio beats, gap to the nearest
    motion beat; 0 when there are no motion beats."""
    ab = np.asarray(audio_beats, dtype=np.float64).reshape(-1)
    mb = np.asarray(motion_beats, dtype=np.float64).reshape(-1)
    if len(ab) == 0:
        raise NoAudioBeats("no audio beats")
    if len(mb) == 0:
        return 0.0
    gaps = np.abs(ab[:, None] - mb[None, :]).min(axis=1)
    return float(np.mean(np.exp(-(gaps ** 2) / (2.0 * sigma ** 2))))


def diversity(
    gen_clips: np.ndarray,
    ae_params: nn.ParamTree,
    ae_cfg: AeConfig,
    n_pairs: int = 500,
    seed: int = 0,
) -> float:
    """Mean L1 distance between randomly sampled distinct clip-feature pairs."""
    clips = np.asarray(gen_clips)
    if len(clips) < 2:
        raise EmptyBatch("diversity needs at least two clips")
    feats = embed_clips(ae_params, ae_cfg, clips)
    rng = np.random.default_rng(seed)
    total = 0.0
    for _ in range(n_pairs):
        i, j = rng.choice(len(feats), size=2, replace=False)
        total += float(np.abs(feats[i] - feats[j]).sum())
    return total / n_pairs


def evaluate(
    real_clips: np.ndarray,
    gen_clips: np.ndarray,
    ae_params: nn.ParamTree,
    ae_cfg: AeConfig,
    audio_beats: list[np.ndarray] | None = None,
    motion_beat_lists: list[np.ndarray] | None = None,
    sigma_bc: float = 0.1,
    n_pairs: int = 500,
    seed: int = 0,
) -> MetricReport:
    """Bundle FGD, BC and Diversity into one report.

    BC is averaged over (audio_beats[i], motion_beat_lists[i]) pairs; clips
    without audio beats are skipped.
    """
    bc_val = float("nan")
    if audio_beats is not None and motion_beat_lists is not None:
        scores = []
        for ab, mb in zip(audio_beats, motion_beat_lists):
            if len(ab) == 0:
                continue
            scores.append(beat_consistency(ab, mb, sigma=sigma_bc))
        bc_val = float(np.mean(scores)) if scores else float("nan")
    return MetricReport(
        fgd=fgd(real_clips, gen_clips, ae_params, ae_cfg),
        bc=bc_val,
        diversity=diversity(gen_clips, ae_params, ae_cfg, n_pairs=n_pairs, seed=seed),
        n_clips=len(gen_clips),
        seed=seed,
        sigma_bc=sigma_bc,
    )
