"""Command-line entry point.

Subcommands: synth-data, train-rag, train-sag, train-ae, gen, eval, render.
Every command is deterministic given (config, seed, inputs). Exit codes:
0 success, 2 usage/config error, 3 runtime/data error.

Checkpoints are LSCK tensor files; each one gets a JSON sidecar
(``<ckpt>.json``) holding the architecture/layout metadata needed to reload
it without the original config.
"""

from __future__ import annotations

import csv
import functools
import json
import os
import sys

import click
import numpy as np
import torch

from . import metrics as M
from . import nn, plotting, rhythm, semantic, synthdata
from .audio import CANONICAL_RATE, load_wav, resample_audio, clip_audio_span
from .config import load_config
from .diffusion import make_ddim_plan, make_schedule, sdedit_empower
from .errors import ConfigError, CospeechError
from .motion import (
    ClipWindow,
    PoseSequence,
    chain_layout,
    read_pose,
    stitch_clips,
    write_pose,
)
from .render import render_sequence


def _cli_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ConfigError as exc:
            click.echo(f"config error: {exc}", err=True)
            sys.exit(2)
        except CospeechError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(3)

    return wrapper


@click.group()
@click.option("--threads", type=int, default=None, help="cap torch worker threads")
def main(threads):
    """Co-speech gesture synthesis and evaluation toolkit."""
    if threads is not None:
        torch.set_num_threads(max(1, threads))


config_opt = click.option("--config", "config_path", type=click.Path(exists=True),
                          default=None, help="JSON run config")
set_opt = click.option("--set", "overrides", multiple=True,
                       help="dotted config override, e.g. train.epochs=5")
seed_opt = click.option("--seed", type=int, default=None, help="override config seed")


def _cfg(config_path, overrides, seed):
    cfg = load_config(config_path, tuple(overrides))
    if seed is not None:
        cfg["seed"] = seed
    return cfg


def _synth_cfg(cfg) -> synthdata.SynthConfig:
    d = cfg["data"]
    return synthdata.SynthConfig(
        n_samples=d["n_samples"], n_speakers=d["n_speakers"], n_joints=d["n_joints"],
        n_motifs=d["n_motifs"], beat_period=tuple(d["beat_period"]),
        audio_noise=d["audio_noise"], amp_token_prob=d["amp_token_prob"],
        val_fraction=d["val_fraction"], motif_amp=d["motif_amp"],
        stroke_amp=d["stroke_amp"], seed=cfg["seed"],
    )


def _load_split(data_dir):
    """Accept either a single corpus dir or a parent with train/ and val/."""
    if os.path.exists(os.path.join(data_dir, "manifest.json")):
        samples, scfg = synthdata.read_corpus(data_dir)
        return samples, [], scfg
    train_dir = os.path.join(data_dir, "train")
    if os.path.exists(os.path.join(train_dir, "manifest.json")):
        train, scfg = synthdata.read_corpus(train_dir)
        val_dir = os.path.join(data_dir, "val")
        val = []
        if os.path.exists(os.path.join(val_dir, "manifest.json")):
            val, _ = synthdata.read_corpus(val_dir)
        return train, val, scfg
    raise ConfigError(f"{data_dir}: no corpus manifest found")


def _write_history(history, csv_path, png_path, columns=None):
    if not history:
        return
    keys = columns or list(history[0].keys())
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(keys)
        for row in history:
            writer.writerow([row[k] for k in keys])
    plotting.save_loss_curves(history, png_path)


def _save_ckpt(path, params, opt: nn.OptimizerState | None, meta: dict):
    blob = dict(params)
    if opt is not None:
        for name in params:
            blob[f"opt.m.{name}"] = opt.m[name]
            blob[f"opt.v.{name}"] = opt.v[name]
        meta = dict(meta, optimizer={
            "algorithm": opt.algorithm, "lr": opt.lr, "beta1": opt.beta1,
            "beta2": opt.beta2, "eps": opt.eps, "weight_decay": opt.weight_decay,
            "step": opt.step,
        })
    nn.save_checkpoint(path, blob)
    with open(str(path) + ".json", "w") as fh:
        json.dump(meta, fh, indent=1, sort_keys=True)


def _load_ckpt(path):
    blob = nn.load_checkpoint(path)
    meta_path = str(path) + ".json"
    meta = {}
    if os.path.exists(meta_path):
        with open(meta_path) as fh:
            meta = json.load(fh)
    params = {k: v for k, v in blob.items() if not k.startswith("opt.")}
    opt = None
    om = meta.get("optimizer")
    if om is not None:
        opt = nn.make_optimizer(params, om["algorithm"], lr=om["lr"],
                                betas=(om["beta1"], om["beta2"]), eps=om["eps"],
                                weight_decay=om["weight_decay"])
        opt.step = om["step"]
        for name in params:
            if f"opt.m.{name}" in blob:
                opt.m[name] = blob[f"opt.m.{name}"]
                opt.v[name] = blob[f"opt.v.{name}"]
    return params, opt, meta


def _schedule_from(meta_or_cfg):
    d = meta_or_cfg["diffusion"]
    return make_schedule(d["kind"], d["steps"], d["beta_start"], d["beta_end"])


def _rhythm_cfg_from(meta, scfg=None):
    r = meta["rag"]
    return rhythm.RhythmConfig(
        frames=meta.get("frames", 34), pose_dims=meta["pose_dims"],
        latent_dim=r["latent_dim"], n_blocks=r["n_blocks"],
        audio_channels=r["audio_channels"], style_dim=r["style_dim"],
        n_speakers=meta["n_speakers"], p_uncond=r["p_uncond"],
        leaky_slope=r["leaky_slope"], t_emb_per_block=r["t_emb_per_block"],
        fps=meta.get("fps", 15.0),
    )


# ---------------------------------------------------------------- commands


@main.command("synth-data")
@config_opt
@set_opt
@seed_opt
@click.option("--out", "out_dir", required=True, type=click.Path())
@_cli_errors
def cmd_synth_data(config_path, overrides, seed, out_dir):
    """Generate the synthetic speech-gesture corpus (train/ and val/)."""
    cfg = _cfg(config_path, overrides, seed)
    scfg = _synth_cfg(cfg)
    train, val = synthdata.make_corpus(scfg)
    synthdata.write_corpus(os.path.join(out_dir, "train"), train, scfg)
    synthdata.write_corpus(os.path.join(out_dir, "val"), val, scfg)

    probe = train[: min(50, len(train))]
    scores = []
    for s in probe:
        ab = M.detect_audio_beats(s.audio)
        mb = M.detect_motion_beats(s.poses)
        if len(ab):
            scores.append(M.beat_consistency(ab, mb, sigma=cfg["metrics"]["bc_sigma"]))
    bc = float(np.mean(scores)) if scores else float("nan")
    rng = np.random.default_rng(cfg["seed"])
    flats = np.stack([s.poses.flat.reshape(-1) for s in probe])
    pairs = [rng.choice(len(flats), 2, replace=False) for _ in range(200)]
    raw_div = float(np.mean([np.abs(flats[i] - flats[j]).mean() for i, j in pairs]))
    click.echo(f"wrote {len(train)} train / {len(val)} val samples to {out_dir}")
    click.echo(f"corpus BC {bc:.3f}  raw pose diversity {raw_div:.3f}")


@main.command("train-rag")
@click.option("--data", "data_dir", required=True, type=click.Path(exists=True))
@config_opt
@set_opt
@seed_opt
@click.option("--out", "out_ckpt", required=True, type=click.Path())
@click.option("--resume", "resume_ckpt", type=click.Path(exists=True), default=None)
@_cli_errors
def cmd_train_rag(data_dir, config_path, overrides, seed, out_ckpt, resume_ckpt):
    """Train the audio-conditioned diffusion generator."""
    cfg = _cfg(config_path, overrides, seed)
    train, _, scfg = _load_split(data_dir)
    poses, waves, speakers, _ = synthdata.corpus_arrays(train)
    r = cfg["rag"]
    rcfg = rhythm.RhythmConfig(
        frames=scfg.clip_len, pose_dims=scfg.pose_dims, latent_dim=r["latent_dim"],
        n_blocks=r["n_blocks"], audio_channels=r["audio_channels"],
        style_dim=r["style_dim"], n_speakers=scfg.n_speakers,
        p_uncond=r["p_uncond"], leaky_slope=r["leaky_slope"],
        t_emb_per_block=r["t_emb_per_block"], fps=scfg.fps,
        sample_rate=scfg.sample_rate,
    )
    schedule = _schedule_from(cfg)
    params = opt = None
    if resume_ckpt:
        params, opt, _ = _load_ckpt(resume_ckpt)
        for p in params.values():
            p.requires_grad_(True)
    t = cfg["train"]
    params, opt, history = rhythm.train_rag(
        poses, waves, speakers, rcfg, schedule,
        epochs=t["epochs"], batch_size=t["batch_size"], lr=t["lr"],
        weight_decay=t["weight_decay"], seed=cfg["seed"], params=params, opt=opt,
        log=lambda row: click.echo(
            f"epoch {row['epoch']:3d}  rec {row['rec']:.4f}  vel {row['vel']:.4f}  "
            f"kl {row['kl']:.4f}  total {row['total']:.4f}"),
    )
    meta = {
        "kind": "rag", "rag": r, "diffusion": cfg["diffusion"],
        "pose_dims": scfg.pose_dims, "n_speakers": scfg.n_speakers,
        "frames": scfg.clip_len, "fps": scfg.fps, "seed": cfg["seed"],
        "n_joints": scfg.n_joints,
    }
    _save_ckpt(out_ckpt, params, opt, meta)
    rows = [{"epoch": h["epoch"], "L_rec": h["rec"], "L_vel": h["vel"],
             "L_KL": h["kl"], "total": h["total"]} for h in history]
    _write_history(rows, str(out_ckpt) + ".csv", str(out_ckpt) + ".png")
    click.echo(f"saved {out_ckpt}")


@main.command("train-sag")
@click.option("--data", "data_dir", required=True, type=click.Path(exists=True))
@config_opt
@set_opt
@seed_opt
@click.option("--out", "out_ckpt", required=True, type=click.Path())
@click.option("--resume", "resume_ckpt", type=click.Path(exists=True), default=None)
@_cli_errors
def cmd_train_sag(data_dir, config_path, overrides, seed, out_ckpt, resume_ckpt):
    """Train the text-conditioned semantic autoencoder."""
    cfg = _cfg(config_path, overrides, seed)
    train, _, scfg = _load_split(data_dir)
    poses, _, _, embeddings = synthdata.corpus_arrays(train)
    s = cfg["sag"]
    if s["d_model"] != embeddings.shape[1]:
        raise ConfigError(
            f"sag.d_model={s['d_model']} must equal the text embedding "
            f"dimension ({embeddings.shape[1]})"
        )
    sagcfg = semantic.SemanticConfig(
        frames=scfg.clip_len, pose_dims=scfg.pose_dims, d_model=s["d_model"],
        ff_dim=s["ff_dim"], enc_layers=s["enc_layers"], dec_layers=s["dec_layers"],
        heads=s["heads"], lambda_cos=s["lambda_cos"],
    )
    params = opt = None
    if resume_ckpt:
        params, opt, _ = _load_ckpt(resume_ckpt)
        for p in params.values():
            p.requires_grad_(True)
    t = cfg["train"]
    params, opt, history = semantic.train_sag(
        poses, embeddings, sagcfg,
        epochs=t["epochs"], batch_size=t["batch_size"], lr=t["lr"],
        seed=cfg["seed"], params=params, opt=opt,
        log=lambda row: click.echo(
            f"epoch {row['epoch']:3d}  rec {row['rec']:.4f}  cos {row['cos']:.4f}"),
    )
    meta = {
        "kind": "sag", "sag": s, "pose_dims": scfg.pose_dims,
        "frames": scfg.clip_len, "fps": scfg.fps, "seed": cfg["seed"],
        "provider_seed": scfg.seed, "n_joints": scfg.n_joints,
    }
    _save_ckpt(out_ckpt, params, opt, meta)
    _write_history(history, str(out_ckpt) + ".csv", str(out_ckpt) + ".png")
    click.echo(f"saved {out_ckpt}")


@main.command("train-ae")
@click.option("--data", "data_dir", required=True, type=click.Path(exists=True))
@config_opt
@set_opt
@seed_opt
@click.option("--out", "out_ckpt", required=True, type=click.Path())
@_cli_errors
def cmd_train_ae(data_dir, config_path, overrides, seed, out_ckpt):
    """Train the metric feature autoencoder on real clips."""
    cfg = _cfg(config_path, overrides, seed)
    train, _, scfg = _load_split(data_dir)
    poses, _, _, _ = synthdata.corpus_arrays(train)
    t = cfg["train"]
    history = []
    params, ae_cfg, final = M.train_feature_autoencoder(
        poses, M.AeConfig(frames=scfg.clip_len, pose_dims=scfg.pose_dims,
                          hidden=cfg["metrics"]["ae_hidden"]),
        epochs=t["epochs"], batch_size=t["batch_size"], seed=cfg["seed"],
        log=lambda row: history.append(row),
    )
    meta = {"kind": "ae", "pose_dims": scfg.pose_dims, "frames": scfg.clip_len,
            "hidden": cfg["metrics"]["ae_hidden"], "seed": cfg["seed"]}
    _save_ckpt(out_ckpt, params, None, meta)
    _write_history(history, str(out_ckpt) + ".csv", str(out_ckpt) + ".png")
    click.echo(f"saved {out_ckpt} (final recon mse {final:.5f})")


@main.command("gen")
@click.option("--mode", type=click.Choice(["rag", "sag", "full"]), required=True)
@click.option("--ckpt", "ckpt_path", required=True, type=click.Path(exists=True),
              help="rag checkpoint for modes rag/full, sag checkpoint for mode sag")
@click.option("--sag-ckpt", "sag_ckpt_path", type=click.Path(exists=True), default=None,
              help="sag checkpoint (mode full)")
@click.option("--audio", "audio_path", type=click.Path(exists=True), default=None)
@click.option("--script", type=str, default=None,
              help="script text; '|' separates per-clip phrases")
@click.option("--speaker", type=int, default=0)
@click.option("--w", "guidance", type=float, default=1.0)
@click.option("--ddim", "ddim_steps", type=int, default=100)
@click.option("--k", "--K", "k_steps", type=int, default=20)
@click.option("--seed", type=int, default=0)
@click.option("--out", "out_path", required=True, type=click.Path())
@_cli_errors
def cmd_gen(mode, ckpt_path, sag_ckpt_path, audio_path, script, speaker,
            guidance, ddim_steps, k_steps, seed, out_path):
    """Generate a pose sequence from audio (rag), script (sag), or both (full)."""
    if mode in ("rag", "full") and audio_path is None:
        raise ConfigError("--audio is required for modes rag/full")
    if mode in ("sag", "full") and script is None:
        raise ConfigError("--script is required for modes sag/full")

    if mode == "rag":
        params, _, meta = _load_ckpt(ckpt_path)
        rcfg = _rhythm_cfg_from(meta)
        schedule = _schedule_from(meta)
        plan = make_ddim_plan(ddim_steps, schedule.total_steps)
        audio = resample_audio(load_wav(audio_path), CANONICAL_RATE)
        layout = chain_layout(meta["n_joints"])
        rng = torch.Generator().manual_seed(seed)
        seq = rhythm.generate_long(params, rcfg, schedule, audio, speaker, plan,
                                   layout, w=guidance, rng=rng)
        write_pose(out_path, seq)
        click.echo(f"wrote {seq.n_frames} frames to {out_path}")
        return

    sag_path = ckpt_path if mode == "sag" else sag_ckpt_path
    if sag_path is None:
        raise ConfigError("--sag-ckpt is required for mode full")
    sparams, _, smeta = _load_ckpt(sag_path)
    scfg = semantic.SemanticConfig(
        frames=smeta["frames"], pose_dims=smeta["pose_dims"], **smeta["sag"]
    )
    provider = semantic.CodebookProvider(seed=smeta.get("provider_seed", 0),
                                         dim=scfg.d_model)
    layout = chain_layout(smeta["n_joints"])
    phrases = [p.strip() for p in script.split("|") if p.strip()]
    if not phrases:
        raise ConfigError("empty script")
    clips = [semantic.generate_from_text(sparams, scfg, provider, ph) for ph in phrases]

    if mode == "full":
        rparams, _, rmeta = _load_ckpt(ckpt_path)
        rcfg = _rhythm_cfg_from(rmeta)
        schedule = _schedule_from(rmeta)
        audio = resample_audio(load_wav(audio_path), CANONICAL_RATE)
        rng = torch.Generator().manual_seed(seed)
        empowered = []
        for i, clip in enumerate(clips):
            win = ClipWindow(start_frame=i * rcfg.frames, length=rcfg.frames)
            span, _ = clip_audio_span(audio, win, rcfg.fps)
            feats = rhythm.encode_audio(
                rparams, rcfg, torch.as_tensor(span.samples, dtype=torch.float32)[None])
            style, _, _ = rhythm.style_sample(rparams, rcfg, [speaker], mode="eval")
            with torch.no_grad():
                out = sdedit_empower(
                    rhythm.make_denoiser(rparams, rcfg),
                    torch.as_tensor(clip, dtype=torch.float32)[None],
                    (feats, style), k_steps, schedule, n_steps=ddim_steps,
                    w=guidance, rng=rng,
                )
            empowered.append(out[0].numpy())
        clips = empowered

    seqs = [
        PoseSequence(fps=smeta["fps"], layout=layout,
                     data=c.reshape(scfg.frames, layout.n_joints, layout.dims_per_joint))
        for c in clips
    ]
    seq = stitch_clips(seqs, seed_overlap=0)
    write_pose(out_path, seq)
    click.echo(f"wrote {seq.n_frames} frames to {out_path}")


def _load_clips(path):
    """A corpus dir (manifest) or a flat dir of .lspk files -> clip arrays."""
    if os.path.exists(os.path.join(path, "manifest.json")):
        samples, _ = synthdata.read_corpus(path)
        clips = np.stack([s.poses.flat for s in samples])
        audios = [s.audio for s in samples]
        poses = [s.poses for s in samples]
        return clips, poses, audios
    files = sorted(
        os.path.join(path, f) for f in os.listdir(path) if f.endswith(".lspk")
    )
    if not files:
        raise ConfigError(f"{path}: no manifest.json and no .lspk files")
    poses = [read_pose(f) for f in files]
    # long sequences are split into non-overlapping clip-length windows
    clips = []
    flat_poses = []
    for p in poses:
        f = p.n_frames
        length = min(f, 34)
        for start in range(0, f - length + 1, length):
            sub = PoseSequence(fps=p.fps, layout=p.layout,
                               data=p.data[start : start + length])
            clips.append(sub.flat)
            flat_poses.append(sub)
    return np.stack(clips), flat_poses, None


@main.command("eval")
@click.option("--real", "real_dir", required=True, type=click.Path(exists=True))
@click.option("--gen", "gen_dir", required=True, type=click.Path(exists=True))
@click.option("--ae", "ae_ckpt", required=True, type=click.Path(exists=True))
@config_opt
@set_opt
@seed_opt
@click.option("--out", "out_path", required=True, type=click.Path())
@_cli_errors
def cmd_eval(real_dir, gen_dir, ae_ckpt, config_path, overrides, seed, out_path):
    """FGD / BC / Diversity of generated clips against a reference corpus."""
    cfg = _cfg(config_path, overrides, seed)
    ae_params, _, ae_meta = _load_ckpt(ae_ckpt)
    ae_cfg = M.AeConfig(frames=ae_meta["frames"], pose_dims=ae_meta["pose_dims"],
                        hidden=ae_meta.get("hidden", 64))
    real_clips, _, real_audios = _load_clips(real_dir)
    gen_clips, gen_poses, gen_audios = _load_clips(gen_dir)

    audios = gen_audios or real_audios
    audio_beats = motion_beats = None
    if audios is not None:
        n = min(len(audios), len(gen_poses))
        audio_beats = [M.detect_audio_beats(a) for a in audios[:n]]
        motion_beats = [M.detect_motion_beats(p) for p in gen_poses[:n]]

    report = M.evaluate(
        real_clips, gen_clips, ae_params, ae_cfg,
        audio_beats=audio_beats, motion_beat_lists=motion_beats,
        sigma_bc=cfg["metrics"]["bc_sigma"],
        n_pairs=cfg["metrics"]["diversity_pairs"], seed=cfg["seed"],
    )
    with open(out_path, "w") as fh:
        fh.write(report.to_json())
    base = os.path.splitext(str(out_path))[0]
    with open(base + ".csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["fgd", "bc", "diversity", "n_clips"])
        writer.writerow([report.fgd, report.bc, report.diversity, report.n_clips])
    plotting.save_metric_bars(
        {"fgd": report.fgd, "bc": report.bc, "diversity": report.diversity},
        base + ".png",
    )
    click.echo(report.to_json())


@main.command("render")
@click.option("--pose", "pose_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--size", type=int, default=256)
@_cli_errors
def cmd_render(pose_path, out_dir, size):
    """Render a pose file to per-frame PPM skeleton images."""
    seq = read_pose(pose_path)
    paths = render_sequence(seq, out_dir, size=size)
    click.echo(f"rendered {len(paths)} frames to {out_dir}")


if __name__ == "__main__":
    main()
