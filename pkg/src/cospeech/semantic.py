"""Script-conditioned semantic gesture autoencoder.

A transformer encoder pools a pose clip into a single 512-d latent that is
trained to line up (cosine similarity) with an externally provided text
embedding of the script; a transformer decoder with learned query tokens
reconstructs the clip from that latent via cross-attention. At inference the
decoder runs directly on the text embedding, so both the latent and the text
embeddings are L2-normalized onto a common sphere.

Text embeddings come from pluggable providers: a deterministic seeded token
codebook for synthetic corpora, or a precomputed-embedding file (magic
"LSEM") keyed by the SHA-256 of the script for real CLIP features.
"""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass

import numpy as np
import torch

from . import nn
from .errors import (
    BadMagic,
    EmptyBatch,
    ShapeMismatch,
    TruncatedFile,
    VersionUnsupported,
    ZeroVector,
)

EMB_MAGIC = b"LSEM"
EMB_VERSION = 1
EMB_DIM = 512


@dataclass
class SemanticConfig:
    frames: int = 34
    pose_dims: int = 30
    d_model: int = 512
    ff_dim: int = 1024
    enc_layers: int = 3
    dec_layers: int = 3
    heads: int = 8
    lambda_cos: float = 1.0

    def __post_init__(self):
        if self.d_model % self.heads:
            raise ShapeMismatch("d_model must be divisible by heads")


# ---------------------------------------------------------------- providers


def script_hash(script: str) -> bytes:
    return hashlib.sha256(script.encode("utf-8")).digest()


class CodebookProvider:
    """Deterministic synthetic text embedder.

    Each whitespace token gets a fixed unit vector derived from a seeded hash
    of the token; a script maps to the L2-normalized mean of its token
    vectors. Stands in for an external 512-d text embedding model.
    """

    def __init__(self, seed: int = 0, dim: int = EMB_DIM):
        self.seed = seed
        self.dim = dim
        self._cache: dict[str, np.ndarray] = {}

    def token_vector(self, token: str) -> np.ndarray:
        v = self._cache.get(token)
        if v is None:
            digest = hashlib.sha256(f"{self.seed}:{token}".encode()).digest()
            rng = np.random.default_rng(np.frombuffer(digest, dtype=np.uint64))
            v = rng.standard_normal(self.dim)
            v /= np.linalg.norm(v)
            self._cache[token] = v
        return v

    def __call__(self, script: str) -> np.ndarray:
        tokens = script.split()
        if not tokens:
            raise ZeroVector("empty script")
        mean = np.mean([self.token_vector(t) for t in tokens], axis=0)
        norm = np.linalg.norm(mean)
        if norm < 1e-10:
            raise ZeroVector("script embedding collapsed to zero")
        return (mean / norm).astype(np.float32)


class FileProvider:
    """Lookup of precomputed embeddings keyed by SHA-256 of the script."""

    def __init__(self, path):
        self.table = read_embeddings(path)

    def __call__(self, script: str) -> np.ndarray:
        key = script_hash(script)
        if key not in self.table:
            raise ZeroVector(f"no embedding stored for script {script!r}")
        return self.table[key]


def write_embeddings(path, entries: dict[bytes, np.ndarray]) -> None:
    with open(path, "wb") as fh:
        fh.write(EMB_MAGIC)
        fh.write(struct.pack("<II", EMB_VERSION, len(entries)))
        for key, vec in entries.items():
            if len(key) != 32:
                raise ZeroVector("embedding keys must be 32-byte SHA-256 digests")
            fh.write(key)
            fh.write(np.asarray(vec, dtype="<f4").reshape(EMB_DIM).tobytes())


def read_embeddings(path) -> dict[bytes, np.ndarray]:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != EMB_MAGIC:
        raise BadMagic(f"{path}: not an embedding file")
    if len(raw) < 12:
        raise TruncatedFile(f"{path}: truncated header")
    version, count = struct.unpack_from("<II", raw, 4)
    if version != EMB_VERSION:
        raise VersionUnsupported(f"{path}: version {version}")
    entry = 32 + EMB_DIM * 4
    if len(raw) < 12 + count * entry:
        raise TruncatedFile(f"{path}: truncated entries")
    out = {}
    for i in range(count):
        off = 12 + i * entry
        key = raw[off : off + 32]
        vec = np.frombuffer(raw, dtype="<f4", count=EMB_DIM, offset=off + 32)
        out[key] = vec.copy()
    return out


# ---------------------------------------------------------------- model


def init_semantic_params(cfg: SemanticConfig, seed: int = 0, dtype=torch.float32) -> nn.ParamTree:
    gen = torch.Generator().manual_seed(seed)
    d, ff = cfg.d_model, cfg.ff_dim
    p: nn.ParamTree = {}

    def w(shape, fan_in):
        return torch.randn(shape, generator=gen, dtype=dtype) / math.sqrt(fan_in)

    p["in_proj.w"] = w((cfg.pose_dims, d), cfg.pose_dims)
    p["in_proj.b"] = torch.zeros(d, dtype=dtype)

    def attn_block(prefix):
        for name in ("q", "k", "v", "o"):
            p[f"{prefix}.w{name}"] = w((d, d), d)
            p[f"{prefix}.b{name}"] = torch.zeros(d, dtype=dtype)

    def ln(prefix):
        p[f"{prefix}.g"] = torch.ones(d, dtype=dtype)
        p[f"{prefix}.b"] = torch.zeros(d, dtype=dtype)

    def ffn(prefix):
        p[f"{prefix}.w1"] = w((d, ff), d)
        p[f"{prefix}.b1"] = torch.zeros(ff, dtype=dtype)
        p[f"{prefix}.w2"] = w((ff, d), ff)
        p[f"{prefix}.b2"] = torch.zeros(d, dtype=dtype)

    for i in range(cfg.enc_layers):
        ln(f"enc{i}.ln1")
        attn_block(f"enc{i}.attn")
        ln(f"enc{i}.ln2")
        ffn(f"enc{i}.ff")
    ln("enc.final_ln")

    p["queries"] = torch.randn((cfg.frames, d), generator=gen, dtype=dtype) * 0.02
    for i in range(cfg.dec_layers):
        ln(f"dec{i}.ln1")
        attn_block(f"dec{i}.self")
        ln(f"dec{i}.ln2")
        attn_block(f"dec{i}.cross")
        ln(f"dec{i}.ln3")
        ffn(f"dec{i}.ff")
    ln("dec.final_ln")

    p["out_proj.w"] = w((d, cfg.pose_dims), d)
    p["out_proj.b"] = torch.zeros(cfg.pose_dims, dtype=dtype)
    return p


def positional_encoding(length: int, dim: int, dtype=torch.float32) -> torch.Tensor:
    pos = torch.arange(length, dtype=dtype)[:, None]
    i = torch.arange(dim // 2, dtype=dtype)[None, :]
    angle = pos / torch.pow(torch.tensor(10000.0, dtype=dtype), 2 * i / dim)
    pe = torch.zeros(length, dim, dtype=dtype)
    pe[:, 0::2] = torch.sin(angle)
    pe[:, 1::2] = torch.cos(angle)
    return pe


def _attention(params, prefix, cfg, x_q, x_kv):
    q = nn.linear(x_q, params[f"{prefix}.wq"], params[f"{prefix}.bq"])
    k = nn.linear(x_kv, params[f"{prefix}.wk"], params[f"{prefix}.bk"])
    v = nn.linear(x_kv, params[f"{prefix}.wv"], params[f"{prefix}.bv"])
    ctx = nn.multihead_attention(q, k, v, cfg.heads)
    return nn.linear(ctx, params[f"{prefix}.wo"], params[f"{prefix}.bo"])


def _ffn(params, prefix, x):
    h = nn.silu(nn.linear(x, params[f"{prefix}.w1"], params[f"{prefix}.b1"]))
    return nn.linear(h, params[f"{prefix}.w2"], params[f"{prefix}.b2"])


def _ln(params, prefix, x):
    return nn.layer_norm(x, params[f"{prefix}.g"], params[f"{prefix}.b"])


def encode(params: nn.ParamTree, cfg: SemanticConfig, x: torch.Tensor) -> torch.Tensor:
    """Pose clip [B, F, P] (or [F, P]) -> unit-norm latent [B, 512]."""
    squeeze = x.dim() == 2
    if squeeze:
        x = x[None]
    h = nn.linear(x, params["in_proj.w"], params["in_proj.b"])
    h = h + positional_encoding(cfg.frames, cfg.d_model, dtype=h.dtype)[None]
    for i in range(cfg.enc_layers):
        u = _ln(params, f"enc{i}.ln1", h)
        h = h + _attention(params, f"enc{i}.attn", cfg, u, u)
        u = _ln(params, f"enc{i}.ln2", h)
        h = h + _ffn(params, f"enc{i}.ff", u)
    h = _ln(params, "enc.final_ln", h)
    z = h.mean(dim=1)
    z = z / torch.linalg.norm(z, dim=-1, keepdim=True).clamp_min(1e-10)
    return z[0] if squeeze else z


def decode(params: nn.ParamTree, cfg: SemanticConfig, z: torch.Tensor) -> torch.Tensor:
    """Latent [B, 512] (or [512]) -> pose clip [B, F, P] via learned query
    tokens cross-attending to the single-token memory [z]."""
    squeeze = z.dim() == 1
    if squeeze:
        z = z[None]
    mem = z[:, None, :]  # length-1 memory
    h = params["queries"][None].expand(z.shape[0], -1, -1)
    for i in range(cfg.dec_layers):
        u = _ln(params, f"dec{i}.ln1", h)
        h = h + _attention(params, f"dec{i}.self", cfg, u, u)
        u = _ln(params, f"dec{i}.ln2", h)
        h = h + _attention(params, f"dec{i}.cross", cfg, u, mem)
        u = _ln(params, f"dec{i}.ln3", h)
        h = h + _ffn(params, f"dec{i}.ff", u)
    h = _ln(params, "dec.final_ln", h)
    out = nn.linear(h, params["out_proj.w"], params["out_proj.b"])
    return out[0] if squeeze else out


def cosine_loss(z_text: torch.Tensor, z_emb: torch.Tensor) -> torch.Tensor:
    """1 - cosine similarity, averaged over the batch."""
    n1 = torch.linalg.norm(z_text, dim=-1)
    n2 = torch.linalg.norm(z_emb, dim=-1)
    if float(n1.detach().min()) < 1e-10 or float(n2.detach().min()) < 1e-10:
        raise ZeroVector("cosine loss on near-zero vector")
    cos = (z_text * z_emb).sum(-1) / (n1 * n2)
    return (1.0 - cos).mean()


def sag_loss(
    params: nn.ParamTree,
    cfg: SemanticConfig,
    x: torch.Tensor,
    z_text: torch.Tensor,
):
    """MSE reconstruction through the autoencoder plus cosine alignment of
    the pooled latent with the text embedding. Returns (total, parts)."""
    if x.shape[0] == 0:
        raise EmptyBatch("empty batch")
    z = encode(params, cfg, x)
    x_hat = decode(params, cfg, z)
    rec = torch.mean((x_hat - x) ** 2)
    cos = cosine_loss(z_text, z)
    total = rec + cfg.lambda_cos * cos
    return total, {"rec": rec, "cos": cos, "total": total}


def train_sag(
    poses: np.ndarray,
    embeddings: np.ndarray,
    cfg: SemanticConfig,
    *,
    epochs: int = 40,
    batch_size: int = 64,
    lr: float = 1e-4,
    betas: tuple[float, float] = (0.9, 0.99),
    seed: int = 0,
    params: nn.ParamTree | None = None,
    opt: nn.OptimizerState | None = None,
    log=None,
):
    """Adam training of the autoencoder; deterministic given the seed."""
    n = len(poses)
    if n == 0:
        raise EmptyBatch("empty dataset")
    if params is None:
        params = init_semantic_params(cfg, seed=seed)
    if opt is None:
        opt = nn.make_optimizer(params, "adam", lr=lr, betas=betas)
    for p in params.values():
        p.requires_grad_(True)
    shuffle_rng = np.random.default_rng(seed + 2)
    poses_t = torch.as_tensor(poses, dtype=torch.float32)
    emb_t = torch.as_tensor(embeddings, dtype=torch.float32)
    history = []
    for epoch in range(epochs):
        order = shuffle_rng.permutation(n)
        sums = {"rec": 0.0, "cos": 0.0, "total": 0.0}
        n_batches = 0
        for start in range(0, n, batch_size):
            idx = torch.as_tensor(order[start : start + batch_size])
            total, parts = sag_loss(params, cfg, poses_t[idx], emb_t[idx])
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


def generate_from_text(
    params: nn.ParamTree, cfg: SemanticConfig, provider, script: str
) -> np.ndarray:
    """Decode the provider's embedding of the script into a [F, P] clip."""
    z = torch.as_tensor(provider(script), dtype=torch.float32)
    with torch.no_grad():
        return decode(params, cfg, z).numpy()


def prompt_edit(
    params: nn.ParamTree, cfg: SemanticConfig, provider, script: str, extra_prompt: str
) -> np.ndarray:
    """Re-generate with extra prompt tokens appended to the script."""
    combined = f"{script} {extra_prompt}".strip()
    return generate_from_text(params, cfg, provider, combined)
