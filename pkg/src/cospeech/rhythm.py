"""Audio-conditioned rhythm generator.

A clean-signal-prediction diffusion denoiser built from MLP mixing blocks:
per-frame pose/audio concatenation is projected into a latent space, a style
token (per-speaker, reparameterized) is prepended along the temporal axis,
and each block mixes first across the 35 positions and then across latent
channels with pre-layer-norm, SiLU, a per-block timestep-embedding addition,
and a residual skip. Audio enters through a four-block strided 1-d conv
encoder over the raw waveform; classifier-free guidance is trained in by
dropping the audio features to a learned null token.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from . import nn
from .audio import AudioClip, clip_audio_span, clip_sample_count
from .diffusion import DdimPlan, NoiseSchedule, ddim_sample, q_sample
from .errors import BadAudioLength, BadIndex, EmptyBatch, ShapeMismatch
from .motion import ClipWindow, JointLayout, PoseSequence, stitch_clips

CONV_KERNEL = 15
CONV_STRIDES = (8, 8, 4, 4)


@dataclass
class RhythmConfig:
    frames: int = 34
    pose_dims: int = 30
    latent_dim: int = 512
    n_blocks: int = 4
    audio_channels: int = 256
    style_dim: int = 64
    n_speakers: int = 8
    p_uncond: float = 0.1
    leaky_slope: float = 0.2
    fps: float = 15.0
    sample_rate: int = 16000
    huber_delta: float = 0.1
    kl_weight: float = 0.01
    vel_weight: float = 1.0
    t_emb_per_block: bool = True

    @property
    def audio_len(self) -> int:
        return clip_sample_count(self.frames, self.fps, self.sample_rate)

    @property
    def conv_channels(self) -> tuple[int, ...]:
        ac = self.audio_channels
        return (max(1, ac // 4), max(1, ac // 2), ac, ac)


def _normal(gen, shape, scale, dtype):
    return torch.randn(shape, generator=gen, dtype=dtype) * scale


def init_rhythm_params(cfg: RhythmConfig, seed: int = 0, dtype=torch.float32) -> nn.ParamTree:
    gen = torch.Generator().manual_seed(seed)
    p: nn.ParamTree = {}
    lat = cfg.latent_dim
    positions = cfg.frames + 1  # one extra style token

    chans = cfg.conv_channels
    c_in = 1
    for i, c_out in enumerate(chans):
        p[f"audio.conv{i}.w"] = _normal(gen, (c_out, c_in, CONV_KERNEL),
                                        1.0 / math.sqrt(c_in * CONV_KERNEL), dtype)
        p[f"audio.conv{i}.b"] = torch.zeros(c_out, dtype=dtype)
        c_in = c_out
    p["audio.null"] = torch.zeros(cfg.audio_channels, dtype=dtype)

    d_in = cfg.pose_dims + cfg.audio_channels
    p["in_proj.w"] = _normal(gen, (d_in, lat), 1.0 / math.sqrt(d_in), dtype)
    p["in_proj.b"] = torch.zeros(lat, dtype=dtype)

    p["temb.w1"] = _normal(gen, (lat, lat), 1.0 / math.sqrt(lat), dtype)
    p["temb.b1"] = torch.zeros(lat, dtype=dtype)
    p["temb.w2"] = _normal(gen, (lat, lat), 1.0 / math.sqrt(lat), dtype)
    p["temb.b2"] = torch.zeros(lat, dtype=dtype)

    sd = cfg.style_dim
    p["speaker.table"] = _normal(gen, (cfg.n_speakers, sd), 1.0, dtype)
    p["style.mu.w"] = _normal(gen, (sd, sd), 1.0 / math.sqrt(sd), dtype)
    p["style.mu.b"] = torch.zeros(sd, dtype=dtype)
    p["style.logvar.w"] = _normal(gen, (sd, sd), 0.01 / math.sqrt(sd), dtype)
    p["style.logvar.b"] = torch.zeros(sd, dtype=dtype)
    p["style.token.w"] = _normal(gen, (sd, lat), 1.0 / math.sqrt(sd), dtype)
    p["style.token.b"] = torch.zeros(lat, dtype=dtype)

    for i in range(cfg.n_blocks):
        pre = f"block{i}."
        p[pre + "ln1.g"] = torch.ones(lat, dtype=dtype)
        p[pre + "ln1.b"] = torch.zeros(lat, dtype=dtype)
        p[pre + "temporal.w"] = _normal(gen, (positions, positions),
                                        1.0 / math.sqrt(positions), dtype)
        p[pre + "temporal.b"] = torch.zeros(positions, dtype=dtype)
        p[pre + "ln2.g"] = torch.ones(lat, dtype=dtype)
        p[pre + "ln2.b"] = torch.zeros(lat, dtype=dtype)
        p[pre + "spatial.w"] = _normal(gen, (lat, lat), 1.0 / math.sqrt(lat), dtype)
        p[pre + "spatial.b"] = torch.zeros(lat, dtype=dtype)
        p[pre + "temb.w"] = _normal(gen, (lat, lat), 0.1 / math.sqrt(lat), dtype)
        p[pre + "temb.b"] = torch.zeros(lat, dtype=dtype)

    p["out_proj.w"] = _normal(gen, (lat, cfg.pose_dims), 1.0 / math.sqrt(lat), dtype)
    p["out_proj.b"] = torch.zeros(cfg.pose_dims, dtype=dtype)
    return p


# ---------------------------------------------------------------- forward


def encode_audio(params: nn.ParamTree, cfg: RhythmConfig, wave: torch.Tensor) -> torch.Tensor:
    """Raw waveform [B, n] (or [n]) -> features [B, frames, audio_channels].

    Four strided conv blocks with leaky-ReLU, then linear interpolation of
    the time axis down to exactly one feature per motion frame.
    """
    squeeze = wave.dim() == 1
    if squeeze:
        wave = wave[None]
    if wave.dim() != 2:
        raise ShapeMismatch(f"expected [B, n] waveform, got {tuple(wave.shape)}")
    if wave.shape[1] != cfg.audio_len:
        raise BadAudioLength(
            f"expected {cfg.audio_len} samples for {cfg.frames} frames, got {wave.shape[1]}"
        )
    x = wave[:, None, :]
    for i in range(4):
        x = nn.conv1d(x, params[f"audio.conv{i}.w"], params[f"audio.conv{i}.b"],
                      stride=CONV_STRIDES[i], padding=CONV_KERNEL // 2)
        x = nn.leaky_relu(x, cfg.leaky_slope)
    if x.shape[2] != cfg.frames:
        x = torch.nn.functional.interpolate(
            x, size=cfg.frames, mode="linear", align_corners=True
        )
    feats = x.transpose(1, 2)  # [B, frames, channels]
    return feats[0] if squeeze else feats


def sinusoidal_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    """Classic sin/cos embedding; t [B] -> [B, dim]."""
    half = dim // 2
    freqs = torch.exp(
        -math.log(10000.0) * torch.arange(half, dtype=t.dtype) / max(half, 1)
    )
    args = t[:, None] * freqs[None, :]
    emb = torch.cat([torch.sin(args), torch.cos(args)], dim=-1)
    if dim % 2:
        emb = torch.cat([emb, torch.zeros_like(emb[:, :1])], dim=-1)
    return emb


def timestep_embedding(params: nn.ParamTree, cfg: RhythmConfig, t: torch.Tensor) -> torch.Tensor:
    """Sinusoidal embedding followed by a two-layer SiLU projection."""
    emb = sinusoidal_embedding(t, cfg.latent_dim)
    h = nn.silu(nn.linear(emb, params["temb.w1"], params["temb.b1"]))
    return nn.linear(h, params["temb.w2"], params["temb.b2"])


def style_stats(params: nn.ParamTree, speaker_ids) -> tuple[torch.Tensor, torch.Tensor]:
    emb = nn.embedding_lookup(params["speaker.table"], speaker_ids)
    mu = nn.linear(emb, params["style.mu.w"], params["style.mu.b"])
    logvar = nn.linear(emb, params["style.logvar.w"], params["style.logvar.b"])
    return mu, logvar


def style_sample(
    params: nn.ParamTree,
    cfg: RhythmConfig,
    speaker_ids,
    mode: str = "eval",
    rng: torch.Generator | None = None,
    z: torch.Tensor | None = None,
):
    """Per-speaker style via the reparameterization trick.

    Train mode samples s = mu + exp(logvar/2) * z; eval mode returns mu.
    Returns (s, mu, logvar).
    """
    ids = torch.as_tensor(speaker_ids, dtype=torch.long)
    if int(ids.max()) >= params["speaker.table"].shape[0] or int(ids.min()) < 0:
        raise BadIndex("speaker id out of range")
    mu, logvar = style_stats(params, ids)
    if mode == "eval":
        return mu, mu, logvar
    if z is None:
        z = torch.randn(mu.shape, generator=rng, dtype=mu.dtype)
    s = mu + torch.exp(0.5 * logvar) * z
    return s, mu, logvar


def _temporal_mix(x: torch.Tensor, w: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    # x [B, T, C]; mix across positions: out[s] = sum_t w[t, s] x[t] + b[s]
    y = torch.einsum("btc,ts->bsc", x, w)
    return y + b[None, :, None]


def denoise(
    params: nn.ParamTree,
    cfg: RhythmConfig,
    x_t: torch.Tensor,
    t,
    audio_feat: torch.Tensor | None,
    style: torch.Tensor,
    cond_enabled: bool = True,
) -> torch.Tensor:
    """Predict the clean pose clip from its noised version.

    x_t [B, F, P] or [F, P]; t scalar or [B]; audio_feat [B, F, C] (ignored
    when cond_enabled is False, in which case the learned null token is
    broadcast instead); style [B, style_dim].
    """
    squeeze = x_t.dim() == 2
    if squeeze:
        x_t = x_t[None]
        if audio_feat is not None and audio_feat.dim() == 2:
            audio_feat = audio_feat[None]
        if style.dim() == 1:
            style = style[None]
    bsz = x_t.shape[0]
    if x_t.shape[1] != cfg.frames or x_t.shape[2] != cfg.pose_dims:
        raise ShapeMismatch(f"x_t shape {tuple(x_t.shape)} vs config "
                            f"[{cfg.frames}, {cfg.pose_dims}]")
    if not cond_enabled or audio_feat is None:
        feat = params["audio.null"][None, None, :].expand(bsz, cfg.frames, -1)
    else:
        feat = audio_feat
    t_vec = torch.as_tensor(t, dtype=x_t.dtype)
    if t_vec.dim() == 0:
        t_vec = t_vec.expand(bsz)
    temb = timestep_embedding(params, cfg, t_vec)
    out = _denoise_core(params, cfg, x_t, feat, style, temb)
    return out[0] if squeeze else out


def _denoise_core(params, cfg, x_t, feat, style, temb):
    h = nn.linear(torch.cat([x_t, feat], dim=-1), params["in_proj.w"], params["in_proj.b"])
    tok = nn.linear(style, params["style.token.w"], params["style.token.b"])
    u = torch.cat([tok[:, None, :], h], dim=1)  # [B, F+1, L]
    for i in range(cfg.n_blocks):
        pre = f"block{i}."
        v = nn.layer_norm(u, params[pre + "ln1.g"], params[pre + "ln1.b"])
        v = _temporal_mix(v, params[pre + "temporal.w"], params[pre + "temporal.b"])
        v = nn.silu(v)
        v = nn.layer_norm(v, params[pre + "ln2.g"], params[pre + "ln2.b"])
        v = nn.linear(v, params[pre + "spatial.w"], params[pre + "spatial.b"])
        v = nn.silu(v)
        if cfg.t_emb_per_block:
            v = v + nn.linear(temb, params[pre + "temb.w"], params[pre + "temb.b"])[:, None, :]
        elif i == 0:
            v = v + temb[:, None, :]
        u = u + v
    return nn.linear(u[:, 1:, :], params["out_proj.w"], params["out_proj.b"])


# ---------------------------------------------------------------- training


def huber(pred: torch.Tensor, target: torch.Tensor, delta: float) -> torch.Tensor:
    """0.5*d^2/delta for |d| < delta, else |d| - delta/2 (mean over elements)."""
    return torch.nn.functional.smooth_l1_loss(pred, target, beta=delta)


def kl_standard_normal(mu: torch.Tensor, logvar: torch.Tensor) -> torch.Tensor:
    return -0.5 * torch.mean(1.0 + logvar - mu ** 2 - torch.exp(logvar))


def rag_loss(
    params: nn.ParamTree,
    cfg: RhythmConfig,
    schedule: NoiseSchedule,
    x0: torch.Tensor,
    waves: torch.Tensor,
    speaker_ids,
    rng: torch.Generator | None = None,
    *,
    ts: torch.Tensor | None = None,
    eps: torch.Tensor | None = None,
    uncond_mask: torch.Tensor | None = None,
    style_z: torch.Tensor | None = None,
    audio_feats: torch.Tensor | None = None,
):
    """Diffusion training objective: Huber reconstruction of the clean clip,
    Huber velocity matching, and a KL pull of the style statistics toward a
    standard normal. Returns (total, parts dict).

    The stochastic draws (timesteps, noise, condition dropout, style z) can
    be pinned for gradient checking.
    """
    if x0.numel() == 0 or x0.shape[0] == 0:
        raise EmptyBatch("empty training batch")
    bsz = x0.shape[0]
    total_steps = schedule.total_steps
    if ts is None:
        ts = torch.randint(1, total_steps + 1, (bsz,), generator=rng)
    if eps is None:
        eps = torch.randn(x0.shape, generator=rng, dtype=x0.dtype)
    if uncond_mask is None:
        if cfg.p_uncond > 0:
            u = torch.rand(bsz, generator=rng)
            uncond_mask = u < cfg.p_uncond
        else:
            uncond_mask = torch.zeros(bsz, dtype=torch.bool)

    ab = torch.as_tensor(schedule.alpha_bars[ts.numpy()], dtype=x0.dtype)[:, None, None]
    x_t = ab.sqrt() * x0 + (1.0 - ab).sqrt() * eps

    if audio_feats is None:
        audio_feats = encode_audio(params, cfg, waves)
    null = params["audio.null"][None, None, :].expand_as(audio_feats)
    feats = torch.where(uncond_mask[:, None, None], null, audio_feats)

    s, mu, logvar = style_sample(params, cfg, speaker_ids, mode="train", rng=rng, z=style_z)
    temb = timestep_embedding(params, cfg, ts.to(x0.dtype))
    x0_hat = _denoise_core(params, cfg, x_t, feats, s, temb)

    rec = huber(x0_hat, x0, cfg.huber_delta)
    vel = huber(x0_hat[:, 1:] - x0_hat[:, :-1], x0[:, 1:] - x0[:, :-1], cfg.huber_delta)
    kl = kl_standard_normal(mu, logvar)
    total = rec + cfg.kl_weight * kl + cfg.vel_weight * vel
    return total, {"rec": rec, "vel": vel, "kl": kl, "total": total}


def train_rag(
    poses: np.ndarray,
    waves: np.ndarray,
    speakers: np.ndarray,
    cfg: RhythmConfig,
    schedule: NoiseSchedule,
    *,
    epochs: int = 30,
    batch_size: int = 64,
    lr: float = 1e-4,
    betas: tuple[float, float] = (0.9, 0.999),
    weight_decay: float = 0.01,
    seed: int = 0,
    params: nn.ParamTree | None = None,
    opt: nn.OptimizerState | None = None,
    log=None,
):
    """AdamW minibatch training; deterministic given the seed.

    poses [N, F, P] float, waves [N, n] float, speakers [N] int.
    Returns (params, opt_state, history) where history rows are per-epoch
    dicts of the mean loss terms.
    """
    n = len(poses)
    if n == 0:
        raise EmptyBatch("empty dataset")
    if params is None:
        params = init_rhythm_params(cfg, seed=seed)
    if opt is None:
        opt = nn.make_optimizer(params, "adamw", lr=lr, betas=betas,
                                weight_decay=weight_decay)
    for p in params.values():
        p.requires_grad_(True)

    gen = torch.Generator().manual_seed(seed + 1)
    shuffle_rng = np.random.default_rng(seed + 2)
    poses_t = torch.as_tensor(poses, dtype=torch.float32)
    waves_t = torch.as_tensor(waves, dtype=torch.float32)
    speakers_t = torch.as_tensor(speakers, dtype=torch.long)

    history = []
    for epoch in range(epochs):
        order = shuffle_rng.permutation(n)
        sums = {"rec": 0.0, "vel": 0.0, "kl": 0.0, "total": 0.0}
        n_batches = 0
        for start in range(0, n, batch_size):
            idx = torch.as_tensor(order[start : start + batch_size])
            total, parts = rag_loss(
                params, cfg, schedule,
                poses_t[idx], waves_t[idx], speakers_t[idx], rng=gen,
            )
            nn.zero_grads(params)
            total.backward()
            nn.optimizer_step(opt, params, nn.collect_grads(params))
            for k in sums:
                sums[k] += float(parts[k].detach())
            n_batches += 1
        row = {"epoch": epoch, **{k: sums[k] / n_batches for k in sums}}
        history.append(row)
        if log is not None:
            log(row)
    for p in params.values():
        p.requires_grad_(False)
    return params, opt, history


# ---------------------------------------------------------------- generation


def make_denoiser(params: nn.ParamTree, cfg: RhythmConfig):
    """Adapt the trained network to the sampler's denoiser contract.

    The condition is a (audio_feats, style) pair with audio features already
    encoded, so the conv stack runs once per clip rather than once per step.
    """

    def denoiser(x_t, t, condition, cond_enabled):
        feats, style = condition
        return denoise(params, cfg, x_t, t, feats, style, cond_enabled)

    return denoiser


def generate_batch(
    params: nn.ParamTree,
    cfg: RhythmConfig,
    schedule: NoiseSchedule,
    waves: torch.Tensor,
    speaker_ids,
    plan: DdimPlan,
    w: float = 1.0,
    rng: torch.Generator | None = None,
) -> torch.Tensor:
    """Sample one clip per waveform row; returns [B, F, P]."""
    if rng is None:
        rng = torch.Generator().manual_seed(0)
    feats = encode_audio(params, cfg, torch.as_tensor(waves, dtype=torch.float32))
    ids = torch.as_tensor(speaker_ids, dtype=torch.long)
    if ids.dim() == 0:
        ids = ids.expand(feats.shape[0])
    style, _, _ = style_sample(params, cfg, ids, mode="eval")
    shape = (feats.shape[0], cfg.frames, cfg.pose_dims)
    with torch.no_grad():
        return ddim_sample(
            make_denoiser(params, cfg), (feats, style), shape, plan, schedule,
            w=w, rng=rng,
        )


def generate_clip(
    params: nn.ParamTree,
    cfg: RhythmConfig,
    schedule: NoiseSchedule,
    audio_samples,
    speaker: int,
    plan: DdimPlan,
    w: float = 1.0,
    rng: torch.Generator | None = None,
    seed_frames: np.ndarray | None = None,
    seed_overlap: int = 4,
) -> np.ndarray:
    """One 34-frame clip [F, P]. When seed_frames [overlap, P] are given the
    first frames are constrained to them by per-step inpainting overwrite, so
    at t=0 they are reproduced exactly.
    """
    if rng is None:
        rng = torch.Generator().manual_seed(0)
    wave = torch.as_tensor(audio_samples, dtype=torch.float32)[None]
    feats = encode_audio(params, cfg, wave)
    style, _, _ = style_sample(params, cfg, [int(speaker)], mode="eval")
    shape = (1, cfg.frames, cfg.pose_dims)

    constrain = None
    if seed_frames is not None:
        seed_t = torch.as_tensor(seed_frames, dtype=torch.float32)
        k = seed_t.shape[0]

        def constrain(x, t):
            x = x.clone()
            noise = torch.randn(seed_t.shape, generator=rng, dtype=x.dtype)
            x[:, :k] = q_sample(seed_t, t, noise, schedule)
            return x

    with torch.no_grad():
        out = ddim_sample(
            make_denoiser(params, cfg), (feats, style), shape, plan, schedule,
            w=w, rng=rng, constrain=constrain,
        )
    return out[0].numpy()


def generate_long(
    params: nn.ParamTree,
    cfg: RhythmConfig,
    schedule: NoiseSchedule,
    audio: AudioClip,
    speaker: int,
    plan: DdimPlan,
    layout: JointLayout,
    w: float = 1.0,
    rng: torch.Generator | None = None,
    seed_overlap: int = 4,
) -> PoseSequence:
    """Sequential clip generation with seed-frame continuity, stitched into
    one sequence of 34 + 30*(n-1) frames.
    """
    if rng is None:
        rng = torch.Generator().manual_seed(0)
    step = cfg.frames - seed_overlap
    total_frames = int(audio.duration * cfg.fps)
    n_clips = max(1, 1 + math.ceil(max(0, total_frames - cfg.frames) / step))
    clips = []
    prev = None
    for i in range(n_clips):
        win = ClipWindow(start_frame=i * step, length=cfg.frames)
        span, _ = clip_audio_span(audio, win, cfg.fps)
        seed = prev[-seed_overlap:] if prev is not None else None
        clip = generate_clip(
            params, cfg, schedule, span.samples, speaker, plan, w=w, rng=rng,
            seed_frames=seed, seed_overlap=seed_overlap,
        )
        prev = clip
        clips.append(PoseSequence(
            fps=cfg.fps, layout=layout,
            data=clip.reshape(cfg.frames, layout.n_joints, layout.dims_per_joint),
        ))
    return stitch_clips(clips, seed_overlap=seed_overlap)
