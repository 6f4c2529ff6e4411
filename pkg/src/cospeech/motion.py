"""Motion representations, conversions, resampling, clip windowing and the
on-disk pose format.

Pose clips are dense float arrays of shape [frames, joints, dims] where dims
is 3 for direction-vector joints (``dirvec3``) and 6 for the continuous
rotation representation (``rot6d``, the first two rotation-matrix columns).
All functions here are pure; sequences are treated as immutable.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import (
    BadMagic,
    ClipTooShort,
    DegenerateRotation,
    LayoutMismatch,
    TruncatedFile,
    VersionUnsupported,
)

POSE_MAGIC = b"LSPK"
POSE_VERSION = 1

REPR_DIRVEC3 = "dirvec3"
REPR_ROT6D = "rot6d"
_REPR_DIMS = {REPR_DIRVEC3: 3, REPR_ROT6D: 6}
_REPR_CODE = {REPR_DIRVEC3: 0, REPR_ROT6D: 1}
_CODE_REPR = {v: k for k, v in _REPR_CODE.items()}


def default_joint_names(n: int) -> list[str]:
    return [f"j{i:02d}" for i in range(n)]


@dataclass(frozen=True)
class JointLayout:
    joint_names: tuple[str, ...]
    parents: tuple[int, ...]
    repr_kind: str = REPR_DIRVEC3

    def __post_init__(self):
        object.__setattr__(self, "joint_names", tuple(self.joint_names))
        object.__setattr__(self, "parents", tuple(int(p) for p in self.parents))
        if self.repr_kind not in _REPR_DIMS:
            raise LayoutMismatch(f"unknown repr_kind {self.repr_kind!r}")
        if len(self.joint_names) != len(self.parents):
            raise LayoutMismatch("joint_names and parents length differ")
        roots = [i for i, p in enumerate(self.parents) if p == -1]
        if len(roots) != 1:
            raise LayoutMismatch("parents must contain exactly one root (-1)")
        for i, p in enumerate(self.parents):
            if p != -1 and not (0 <= p < i):
                raise LayoutMismatch(
                    "parents must form a tree with each parent preceding its child"
                )

    @property
    def n_joints(self) -> int:
        return len(self.joint_names)

    @property
    def dims_per_joint(self) -> int:
        return _REPR_DIMS[self.repr_kind]


def chain_layout(n_joints: int, repr_kind: str = REPR_DIRVEC3) -> JointLayout:
    """Simple kinematic chain: joint i is the child of joint i-1."""
    return JointLayout(
        joint_names=tuple(default_joint_names(n_joints)),
        parents=tuple([-1] + list(range(n_joints - 1))),
        repr_kind=repr_kind,
    )


@dataclass(frozen=True)
class PoseSequence:
    fps: float
    layout: JointLayout
    data: np.ndarray  # [F, J, D]

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.float32)
        if d.ndim != 3:
            raise LayoutMismatch(f"pose data must be [F, J, D], got shape {d.shape}")
        if d.shape[0] < 1:
            raise LayoutMismatch("pose sequence needs at least one frame")
        if d.shape[1] != self.layout.n_joints or d.shape[2] != self.layout.dims_per_joint:
            raise LayoutMismatch(
                f"data shape {d.shape} inconsistent with layout "
                f"({self.layout.n_joints} joints x {self.layout.dims_per_joint} dims)"
            )
        if not np.all(np.isfinite(d)):
            raise LayoutMismatch("pose data contains non-finite values")
        object.__setattr__(self, "data", d)

    @property
    def n_frames(self) -> int:
        return int(self.data.shape[0])

    @property
    def flat(self) -> np.ndarray:
        """[F, J*D] view used by the models."""
        f, j, d = self.data.shape
        return self.data.reshape(f, j * d)


@dataclass(frozen=True)
class ClipWindow:
    start_frame: int
    length: int = 34
    source_id: str = ""


def euler_to_rot6d(angles_deg: np.ndarray, order: str = "xyz") -> np.ndarray:
    """Euler angles (degrees, per-joint triples) to the 6-value rotation
    representation: the first two columns of the rotation matrix.

    ``order`` follows scipy's convention: lowercase = extrinsic, uppercase =
    intrinsic. Shape [..., 3] -> [..., 6].
    """
    a = np.asarray(angles_deg, dtype=np.float64)
    shape = a.shape
    rot = Rotation.from_euler(order, a.reshape(-1, 3), degrees=True)
    mats = rot.as_matrix()  # [N, 3, 3]
    r6 = np.concatenate([mats[:, :, 0], mats[:, :, 1]], axis=-1)
    return r6.reshape(shape[:-1] + (6,))


def rot6d_to_matrix(r6: np.ndarray, eps: float = 1e-8) -> np.ndarray:
    """Gram-Schmidt completion of the 6-value representation to a proper
    rotation matrix. Shape [..., 6] -> [..., 3, 3].
    """
    r = np.asarray(r6, dtype=np.float64)
    a, b = r[..., :3], r[..., 3:]
    na = np.linalg.norm(a, axis=-1, keepdims=True)
    if np.any(na <= eps):
        raise DegenerateRotation("first rot6d vector has near-zero norm")
    x = a / na
    b_orth = b - np.sum(x * b, axis=-1, keepdims=True) * x
    nb = np.linalg.norm(b_orth, axis=-1, keepdims=True)
    if np.any(nb <= eps):
        raise DegenerateRotation("rot6d vectors are near-parallel")
    y = b_orth / nb
    z = np.cross(x, y)
    return np.stack([x, y, z], axis=-1)  # columns x, y, z


def matrix_to_rot6d(mat: np.ndarray) -> np.ndarray:
    m = np.asarray(mat, dtype=np.float64)
    return np.concatenate([m[..., :, 0], m[..., :, 1]], axis=-1)


def resample_fps(seq: PoseSequence, target_fps: float) -> PoseSequence:
    """Linear per-channel resampling onto the target frame rate.

    rot6d channels are pushed back onto the rotation manifold via a
    Gram-Schmidt round trip after interpolation.
    """
    if target_fps <= 0:
        raise LayoutMismatch("target_fps must be positive")
    f = seq.n_frames
    f_out = int(round(f * target_fps / seq.fps))
    f_out = max(f_out, 1)
    if f_out == f and abs(target_fps - seq.fps) < 1e-12:
        return replace(seq, fps=float(target_fps))
    t_src = np.arange(f) / seq.fps
    t_tgt = np.arange(f_out) / target_fps
    flat = seq.data.reshape(f, -1)
    out = np.empty((f_out, flat.shape[1]), dtype=np.float64)
    for c in range(flat.shape[1]):
        out[:, c] = np.interp(t_tgt, t_src, flat[:, c])
    out = out.reshape(f_out, seq.layout.n_joints, seq.layout.dims_per_joint)
    if seq.layout.repr_kind == REPR_ROT6D:
        out = matrix_to_rot6d(rot6d_to_matrix(out))
    return PoseSequence(fps=float(target_fps), layout=seq.layout, data=out)


def split_clips(
    seq: PoseSequence, length: int = 34, stride: int = 10, source_id: str = ""
) -> list[ClipWindow]:
    f = seq.n_frames
    if length > f:
        raise ClipTooShort(f"clip length {length} exceeds sequence length {f}")
    if stride < 1:
        raise ClipTooShort("stride must be >= 1")
    count = (f - length) // stride + 1
    return [
        ClipWindow(start_frame=i * stride, length=length, source_id=source_id)
        for i in range(count)
    ]


def extract_clip(seq: PoseSequence, win: ClipWindow) -> PoseSequence:
    if win.start_frame + win.length > seq.n_frames:
        raise ClipTooShort("window exceeds sequence length")
    return replace(seq, data=seq.data[win.start_frame : win.start_frame + win.length])


def stitch_clips(clips: list[PoseSequence], seed_overlap: int = 4) -> PoseSequence:
    """Concatenate sequentially generated clips, dropping the seed frames that
    every clip after the first duplicates from its predecessor's tail.
    """
    if not clips:
        raise ClipTooShort("no clips to stitch")
    first = clips[0]
    parts = [first.data]
    for c in clips[1:]:
        if c.layout != first.layout or abs(c.fps - first.fps) > 1e-9:
            raise LayoutMismatch("all clips must share layout and fps")
        if c.n_frames <= seed_overlap:
            raise ClipTooShort("clip shorter than seed overlap")
        parts.append(c.data[seed_overlap:])
    return replace(first, data=np.concatenate(parts, axis=0))


def write_pose(path, seq: PoseSequence) -> None:
    j = seq.layout.n_joints
    d = seq.layout.dims_per_joint
    with open(path, "wb") as fh:
        fh.write(POSE_MAGIC)
        fh.write(struct.pack("<IBfIII", POSE_VERSION, _REPR_CODE[seq.layout.repr_kind],
                             float(seq.fps), seq.n_frames, j, d))
        fh.write(np.asarray(seq.layout.parents, dtype="<i4").tobytes())
        fh.write(seq.data.astype("<f4").tobytes())


def read_pose(path) -> PoseSequence:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != POSE_MAGIC:
        raise BadMagic(f"{path}: not a pose file")
    header = struct.Struct("<IBfIII")
    if len(raw) < 4 + header.size:
        raise TruncatedFile(f"{path}: truncated header")
    version, repr_code, fps, f, j, d = header.unpack_from(raw, 4)
    if version != POSE_VERSION:
        raise VersionUnsupported(f"{path}: version {version}")
    if repr_code not in _CODE_REPR:
        raise TruncatedFile(f"{path}: bad repr code {repr_code}")
    off = 4 + header.size
    need = j * 4 + f * j * d * 4
    if len(raw) < off + need:
        raise TruncatedFile(f"{path}: payload shorter than declared")
    parents = np.frombuffer(raw, dtype="<i4", count=j, offset=off)
    off += j * 4
    data = np.frombuffer(raw, dtype="<f4", count=f * j * d, offset=off)
    layout = JointLayout(
        joint_names=tuple(default_joint_names(j)),
        parents=tuple(int(p) for p in parents),
        repr_kind=_CODE_REPR[repr_code],
    )
    return PoseSequence(fps=fps, layout=layout, data=data.reshape(f, j, d).copy())
