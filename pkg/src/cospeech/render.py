"""Dependency-free skeleton rendering.

Each frame becomes a 2-D orthographic line drawing of the kinematic tree,
written as a binary PPM (P6) image, plus a keyframes.json with the 3-D joint
positions actually drawn. Direction-vector clips accumulate offsets along the
parent chain; rot6d clips run forward kinematics with unit bone lengths
(bone axis = local +y column of the composed rotation).
"""

from __future__ import annotations

import json
import os

import numpy as np

from .motion import REPR_ROT6D, PoseSequence, rot6d_to_matrix

BONE_AXIS = np.array([0.0, 1.0, 0.0])


def joint_positions(seq: PoseSequence) -> np.ndarray:
    """[F, J, 3] world positions of every joint."""
    f, j, _ = seq.data.shape
    parents = seq.layout.parents
    pos = np.zeros((f, j, 3), dtype=np.float64)
    if seq.layout.repr_kind == REPR_ROT6D:
        mats = rot6d_to_matrix(seq.data)  # [F, J, 3, 3]
        world = np.zeros_like(mats)
        for jj in range(j):
            p = parents[jj]
            if p == -1:
                world[:, jj] = mats[:, jj]
                pos[:, jj] = 0.0
            else:
                world[:, jj] = world[:, p] @ mats[:, jj]
                pos[:, jj] = pos[:, p] + world[:, jj] @ BONE_AXIS
    else:
        for jj in range(j):
            p = parents[jj]
            if p == -1:
                pos[:, jj] = seq.data[:, jj]
            else:
                pos[:, jj] = pos[:, p] + seq.data[:, jj]
    return pos


def _draw_line(img: np.ndarray, x0: int, y0: int, x1: int, y1: int, color) -> None:
    n = max(abs(x1 - x0), abs(y1 - y0), 1)
    xs = np.round(np.linspace(x0, x1, n + 1)).astype(int)
    ys = np.round(np.linspace(y0, y1, n + 1)).astype(int)
    h, w, _ = img.shape
    ok = (xs >= 0) & (xs < w) & (ys >= 0) & (ys < h)
    img[ys[ok], xs[ok]] = color


def write_ppm(path, img: np.ndarray) -> None:
    h, w, _ = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P6 {w} {h} 255\n".encode())
        fh.write(img.astype(np.uint8).tobytes())


def render_sequence(seq: PoseSequence, out_dir, size: int = 256) -> list[str]:
    """Render every frame to out_dir/frame_%04d.ppm and write keyframes.json.

    Returns the list of image paths. Output is deterministic: the projection
    window is fit once over the whole sequence."""
    os.makedirs(out_dir, exist_ok=True)
    pos = joint_positions(seq)
    xy = pos[..., :2]
    lo = xy.reshape(-1, 2).min(axis=0)
    hi = xy.reshape(-1, 2).max(axis=0)
    span = np.maximum(hi - lo, 1e-6).max()
    margin = 0.1 * span
    scale = (size - 1) / (span + 2 * margin)
    origin = (lo + hi) / 2 - (span / 2 + margin)

    paths = []
    for f in range(seq.n_frames):
        img = np.zeros((size, size, 3), dtype=np.uint8)
        pts = ((xy[f] - origin) * scale).round().astype(int)
        for j, p in enumerate(seq.layout.parents):
            if p == -1:
                continue
            x0, y0 = pts[p]
            x1, y1 = pts[j]
            _draw_line(img, x0, size - 1 - y0, x1, size - 1 - y1, (255, 255, 255))
        for j in range(seq.layout.n_joints):
            x, y = pts[j]
            _draw_line(img, x, size - 1 - y, x, size - 1 - y, (255, 80, 80))
        path = os.path.join(out_dir, f"frame_{f:04d}.ppm")
        write_ppm(path, img)
        paths.append(path)
    with open(os.path.join(out_dir, "keyframes.json"), "w") as fh:
        json.dump({"fps": seq.fps, "positions": pos.tolist()}, fh)
    return paths
