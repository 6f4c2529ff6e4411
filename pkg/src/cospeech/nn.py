"""Minimal differentiable-computation substrate.

Parameters live in flat name->tensor dicts ("param trees"); layers are pure
functions over torch tensors so the same code runs in f32 for training and
f64 for gradient checking. Analytic gradients come from torch autograd; the
independent safety net is ``grad_check``, a central finite-difference
comparison that never touches autograd's answer to produce its own.

Checkpoints use a small self-describing binary format (magic "LSCK").
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
import torch

from .errors import BadIndex, BadMagic, ShapeMismatch, TruncatedFile, VersionUnsupported

CKPT_MAGIC = b"LSCK"
CKPT_VERSION = 1

ParamTree = dict[str, torch.Tensor]


# ---------------------------------------------------------------- layers


def linear(x: torch.Tensor, w: torch.Tensor, b: torch.Tensor | None = None) -> torch.Tensor:
    """y = x @ w + b with w shaped [in, out]."""
    if x.shape[-1] != w.shape[0]:
        raise ShapeMismatch(f"linear: input dim {x.shape[-1]} vs weight {tuple(w.shape)}")
    y = x @ w
    if b is not None:
        if b.shape[-1] != w.shape[1]:
            raise ShapeMismatch("linear: bias dim mismatch")
        y = y + b
    return y


def conv1d(
    x: torch.Tensor,
    kernels: torch.Tensor,
    bias: torch.Tensor | None = None,
    stride: int = 1,
    padding: int = 0,
) -> torch.Tensor:
    """1-d convolution, x [C_in, L] or [B, C_in, L], kernels [C_out, C_in, k]."""
    squeeze = x.dim() == 2
    if squeeze:
        x = x[None]
    if x.dim() != 3 or kernels.dim() != 3 or x.shape[1] != kernels.shape[1]:
        raise ShapeMismatch(
            f"conv1d: input {tuple(x.shape)} vs kernels {tuple(kernels.shape)}"
        )
    if x.shape[2] + 2 * padding < kernels.shape[2]:
        raise ShapeMismatch("conv1d: input shorter than kernel")
    y = torch.nn.functional.conv1d(x, kernels, bias, stride=stride, padding=padding)
    return y[0] if squeeze else y


def layer_norm(
    x: torch.Tensor, gamma: torch.Tensor, beta: torch.Tensor, eps: float = 1e-5
) -> torch.Tensor:
    """Normalize over the last axis (population variance), then affine."""
    if gamma.shape[-1] != x.shape[-1] or beta.shape[-1] != x.shape[-1]:
        raise ShapeMismatch("layer_norm: affine shape mismatch")
    mean = x.mean(dim=-1, keepdim=True)
    var = x.var(dim=-1, unbiased=False, keepdim=True)
    return (x - mean) / torch.sqrt(var + eps) * gamma + beta


def silu(x: torch.Tensor) -> torch.Tensor:
    return x * torch.sigmoid(x)


def leaky_relu(x: torch.Tensor, slope: float = 0.2) -> torch.Tensor:
    return torch.where(x >= 0, x, slope * x)


def softmax(x: torch.Tensor, axis: int = -1) -> torch.Tensor:
    shifted = x - x.max(dim=axis, keepdim=True).values
    e = torch.exp(shifted)
    return e / e.sum(dim=axis, keepdim=True)


def multihead_attention(
    q: torch.Tensor,
    k: torch.Tensor,
    v: torch.Tensor,
    heads: int,
    mask: torch.Tensor | None = None,
) -> torch.Tensor:
    """Scaled dot-product attention over already-projected q/k/v.

    q [.., Lq, d], k/v [.., Lk, d]; d must divide into ``heads``. ``mask``
    (optional, [.., Lq, Lk]) holds additive logits (-inf to block).
    """
    d = q.shape[-1]
    if d % heads != 0 or k.shape[-1] != d or v.shape[-1] != d:
        raise ShapeMismatch("attention: model dim must match and divide into heads")
    dh = d // heads

    def split(t):
        return t.reshape(*t.shape[:-1], heads, dh).transpose(-3, -2)  # [.., H, L, dh]

    qh, kh, vh = split(q), split(k), split(v)
    logits = qh @ kh.transpose(-1, -2) / (dh ** 0.5)
    if mask is not None:
        logits = logits + mask.unsqueeze(-3)
    attn = softmax(logits, axis=-1)
    ctx = attn @ vh  # [.., H, Lq, dh]
    ctx = ctx.transpose(-3, -2)
    return ctx.reshape(*ctx.shape[:-2], d)


def embedding_lookup(table: torch.Tensor, ids) -> torch.Tensor:
    idx = torch.as_tensor(ids, dtype=torch.long)
    if idx.numel() == 0:
        raise BadIndex("empty id list")
    if int(idx.min()) < 0 or int(idx.max()) >= table.shape[0]:
        raise BadIndex(f"id out of range for table of {table.shape[0]} rows")
    return table[idx]


# ---------------------------------------------------------------- optimizer


@dataclass
class OptimizerState:
    algorithm: str = "adam"  # "adam" or "adamw"
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-8
    weight_decay: float = 0.0
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def make_optimizer(
    params: ParamTree,
    algorithm: str = "adam",
    lr: float = 1e-4,
    betas: tuple[float, float] = (0.9, 0.99),
    eps: float = 1e-8,
    weight_decay: float = 0.0,
) -> OptimizerState:
    if algorithm not in ("adam", "adamw"):
        raise ShapeMismatch(f"unknown optimizer {algorithm!r}")
    state = OptimizerState(
        algorithm=algorithm, lr=lr, beta1=betas[0], beta2=betas[1], eps=eps,
        weight_decay=weight_decay,
    )
    for name, p in params.items():
        state.m[name] = torch.zeros_like(p, requires_grad=False)
        state.v[name] = torch.zeros_like(p, requires_grad=False)
    return state


@torch.no_grad()
def optimizer_step(state: OptimizerState, params: ParamTree, grads: ParamTree) -> None:
    """One Adam/AdamW update in place. AdamW applies decoupled weight decay."""
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != p.shape:
            raise ShapeMismatch(f"gradient shape mismatch for {name}")
        m = state.m[name]
        v = state.v[name]
        m.mul_(state.beta1).add_(g, alpha=1.0 - state.beta1)
        v.mul_(state.beta2).addcmul_(g, g, value=1.0 - state.beta2)
        if state.algorithm == "adamw" and state.weight_decay:
            p.mul_(1.0 - state.lr * state.weight_decay)
        m_hat = m / bc1
        v_hat = v / bc2
        p.addcdiv_(m_hat, v_hat.sqrt() + state.eps, value=-state.lr)


# ---------------------------------------------------------------- grad check


def grad_check(
    fn,
    params: ParamTree,
    eps: float = 1e-5,
    max_coords_per_tensor: int = 16,
    seed: int = 0,
    analytic: ParamTree | None = None,
) -> float:
    """Max relative error between analytic gradients and central finite
    differences on a random sample of coordinates.

    ``fn(params) -> scalar tensor`` must be deterministic. Pass ``analytic``
    to check externally supplied gradients instead of autograd's.
    """
    for p in params.values():
        p.requires_grad_(True)
    if analytic is None:
        loss = fn(params)
        grads = torch.autograd.grad(loss, list(params.values()), allow_unused=True)
        analytic = {
            n: (g if g is not None else torch.zeros_like(p))
            for (n, p), g in zip(params.items(), grads)
        }
    rng = np.random.default_rng(seed)
    worst = 0.0
    with torch.no_grad():
        for name, p in params.items():
            flat = p.reshape(-1)
            n = flat.numel()
            count = min(max_coords_per_tensor, n)
            idx = rng.choice(n, size=count, replace=False)
            for i in idx:
                orig = flat[i].item()
                flat[i] = orig + eps
                f_plus = float(fn(params))
                flat[i] = orig - eps
                f_minus = float(fn(params))
                flat[i] = orig
                fd = (f_plus - f_minus) / (2.0 * eps)
                an = float(analytic[name].reshape(-1)[i])
                denom = max(abs(fd), abs(an), 1e-3)
                worst = max(worst, abs(fd - an) / denom)
    return worst


# ---------------------------------------------------------------- checkpoints


def save_checkpoint(path, params: ParamTree) -> None:
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<II", CKPT_VERSION, len(params)))
        for name, p in params.items():
            nb = name.encode("utf-8")
            arr = p.detach().cpu().numpy().astype("<f4")
            fh.write(struct.pack("<H", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def load_checkpoint(path, dtype=torch.float32) -> ParamTree:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != CKPT_MAGIC:
        raise BadMagic(f"{path}: not a checkpoint")
    if len(raw) < 12:
        raise TruncatedFile(f"{path}: truncated header")
    version, count = struct.unpack_from("<II", raw, 4)
    if version != CKPT_VERSION:
        raise VersionUnsupported(f"{path}: version {version}")
    off = 12
    params: ParamTree = {}
    for _ in range(count):
        if off + 2 > len(raw):
            raise TruncatedFile(f"{path}: truncated entry header")
        (name_len,) = struct.unpack_from("<H", raw, off)
        off += 2
        name = raw[off : off + name_len].decode("utf-8")
        off += name_len
        (rank,) = struct.unpack_from("<B", raw, off)
        off += 1
        dims = struct.unpack_from(f"<{rank}I", raw, off)
        off += 4 * rank
        n = int(np.prod(dims)) if rank else 1
        if off + 4 * n > len(raw):
            raise TruncatedFile(f"{path}: truncated payload for {name}")
        arr = np.frombuffer(raw, dtype="<f4", count=n, offset=off).reshape(dims)
        off += 4 * n
        params[name] = torch.tensor(arr, dtype=dtype)
    return params


def clone_params(params: ParamTree, dtype=None) -> ParamTree:
    return {
        n: p.detach().clone().to(dtype or p.dtype) for n, p in params.items()
    }


def collect_grads(params: ParamTree) -> ParamTree:
    grads = {}
    for n, p in params.items():
        if p.grad is not None:
            grads[n] = p.grad
    return grads


def zero_grads(params: ParamTree) -> None:
    for p in params.values():
        if p.grad is not None:
            p.grad = None
