"""Run configuration: JSON documents with defaults for every field, strict
unknown-key rejection, and dotted-path overrides (``train.epochs=20``)."""

from __future__ import annotations

import copy
import json

from .errors import ConfigError

DEFAULTS: dict = {
    "seed": 0,
    "data": {
        "n_samples": 200,
        "n_speakers": 6,
        "n_joints": 10,
        "n_motifs": 6,
        "beat_period": [0.3, 1.2],
        "audio_noise": 0.01,
        "amp_token_prob": 0.3,
        "val_fraction": 0.1,
        "motif_amp": 0.25,
        "stroke_amp": 0.75,
    },
    "rag": {
        "latent_dim": 512,
        "n_blocks": 4,
        "audio_channels": 256,
        "style_dim": 64,
        "p_uncond": 0.1,
        "leaky_slope": 0.2,
        "t_emb_per_block": True,
    },
    "sag": {
        "d_model": 512,
        "ff_dim": 1024,
        "enc_layers": 3,
        "dec_layers": 3,
        "heads": 8,
        "lambda_cos": 1.0,
    },
    "diffusion": {
        "kind": "linear",
        "steps": 1000,
        "beta_start": 1e-4,
        "beta_end": 0.02,
    },
    "metrics": {
        "ae_hidden": 64,
        "bc_sigma": 0.1,
        "diversity_pairs": 500,
    },
    "train": {
        "epochs": 10,
        "batch_size": 64,
        "lr": 1e-4,
        "weight_decay": 0.01,
    },
}


def _merge(base: dict, user: dict, path: str = "") -> dict:
    out = dict(base)
    for key, value in user.items():
        here = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key: {here}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {here} must be a section")
            out[key] = _merge(base[key], value, here + ".")
        else:
            out[key] = value
    return out


def _apply_override(cfg: dict, spec: str) -> None:
    if "=" not in spec:
        raise ConfigError(f"override {spec!r} must look like section.key=value")
    dotted, raw = spec.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw  # plain string
    node = cfg
    parts = dotted.split(".")
    for part in parts[:-1]:
        if part not in node or not isinstance(node[part], dict):
            raise ConfigError(f"unknown config section: {dotted}")
        node = node[part]
    if parts[-1] not in node:
        raise ConfigError(f"unknown config key: {dotted}")
    node[parts[-1]] = value


def load_config(path=None, overrides: tuple[str, ...] = ()) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        try:
            with open(path) as fh:
                user = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(user, dict):
            raise ConfigError("config root must be a JSON object")
        cfg = _merge(cfg, user)
    for spec in overrides:
        _apply_override(cfg, spec)
    return cfg
