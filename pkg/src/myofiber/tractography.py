"""Streamline integration through the principal-eigenvector field.

RK4 with a fixed step, FA / mask / turning-angle termination, bidirectional
tracing from each seed, and an arc-length filter. Directions are sign-aligned
against the previous step because eigenvectors carry no intrinsic orientation.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .volume import (
    MaskVolume,
    OutOfBounds,
    TensorVolume,
    eigen_principal,
    fractional_anisotropy,
    sample_trilinear,
    voxel_coords,
)


@dataclass
class TrackingParams:
    step: float = 0.1  # mm
    fa_min: float = 0.2
    max_angle: float = 45.0  # degrees between consecutive net steps
    min_length: float | None = None  # mm; default 40 * min(spacing)
    max_steps: int = 10000  # per direction
    seed_stride: int = 1  # voxels between seeds

    def __post_init__(self):
        if self.step <= 0:
            raise ValueError("step must be positive")
        if not 0 <= self.fa_min < 1:
            raise ValueError("fa_min must be in [0, 1)")
        if not 0 < self.max_angle < 90:
            raise ValueError("max_angle must be in (0, 90)")

    def resolved_min_length(self, spacing) -> float:
        # "40 voxel units" read as 40 * smallest voxel edge, in mm
        if self.min_length is not None:
            return self.min_length
        return 40.0 * min(spacing)


@dataclass
class Streamline:
    points: np.ndarray  # (n, 3) mm
    seed_index: int = -1

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        if self.points.ndim != 2 or self.points.shape[1] != 3:
            raise ValueError("points must be (n, 3)")

    def __len__(self):
        return len(self.points)

    @property
    def arc_length(self) -> float:
        d = np.diff(self.points, axis=0)
        return float(np.sqrt((d * d).sum(axis=1)).sum())


class Terminated(Exception):
    """Internal signal: tracking cannot continue from this point."""


def _mask_at(mask: MaskVolume, p) -> bool:
    c = voxel_coords(mask, p)
    i = np.rint(c).astype(int)
    if np.any(i < 0) or np.any(i >= np.asarray(mask.dims)):
        return False
    return mask.labels[i[0], i[1], i[2]] > 0


def direction_at(
    vol,
    p,
    prev_dir=None,
    fa_min: float = 0.2,
    mask: MaskVolume | None = None,
) -> np.ndarray:
    """Unit principal eigenvector at p, sign-aligned with prev_dir.

    `vol` is normally a TensorVolume; it may also be a callable mapping a
    point to a unit direction (an analytic field), in which case FA and grid
    checks do not apply. Raises Terminated when p leaves the grid or mask, or
    local FA < fa_min.
    """
    if mask is not None and not _mask_at(mask, p):
        raise Terminated("outside mask")
    if callable(vol) and not isinstance(vol, TensorVolume):
        e1 = np.asarray(vol(p), dtype=float)
        n = float(np.linalg.norm(e1))
        if n == 0.0:
            raise Terminated("zero direction")
        e1 = e1 / n
        if prev_dir is not None and float(np.dot(e1, prev_dir)) < 0.0:
            e1 = -e1
        return e1
    try:
        t6 = sample_trilinear(vol, p)
    except OutOfBounds as e:
        raise Terminated(str(e)) from e
    e1, (l1, l2, l3) = eigen_principal(t6)
    if math.sqrt(l1 * l1 + l2 * l2 + l3 * l3) == 0.0:
        raise Terminated("zero tensor")
    if fractional_anisotropy(l1, l2, l3) < fa_min:
        raise Terminated("FA below threshold")
    if prev_dir is not None and float(np.dot(e1, prev_dir)) < 0.0:
        e1 = -e1
    return e1


def rk4_step(
    vol: TensorVolume,
    p,
    prev_dir,
    step: float,
    fa_min: float = 0.2,
    mask: MaskVolume | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """One classic RK4 update; returns (next point, net step direction).

    All four stage directions are sign-aligned with k1 so an eigenvector sign
    flip mid-step cannot cancel the update. Any stage terminating ends the
    streamline.
    """
    p = np.asarray(p, dtype=float)
    h = step
    k1 = direction_at(vol, p, prev_dir, fa_min, mask)
    k2 = direction_at(vol, p + 0.5 * h * k1, k1, fa_min, mask)
    k3 = direction_at(vol, p + 0.5 * h * k2, k1, fa_min, mask)
    k4 = direction_at(vol, p + h * k3, k1, fa_min, mask)
    delta = (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    p_next = p + delta
    norm = float(np.linalg.norm(delta))
    if norm == 0.0:
        raise Terminated("degenerate RK4 step")
    return p_next, delta / norm


def _trace_one_direction(vol, mask, seed, init_dir, params: TrackingParams):
    """Integrate one direction; returns the list of points after the seed."""
    points = []
    p = np.asarray(seed, dtype=float)
    prev = np.asarray(init_dir, dtype=float)
    cos_max = math.cos(math.radians(params.max_angle))
    for _ in range(params.max_steps):
        try:
            p_next, net_dir = rk4_step(vol, p, prev, params.step, params.fa_min, mask)
        except Terminated:
            break
        if not _mask_at(mask, p_next):
            break
        if float(np.dot(net_dir, prev)) < cos_max:
            break
        points.append(p_next)
        p, prev = p_next, net_dir
    return points


def trace_streamline(
    vol: TensorVolume, mask: MaskVolume, seed_point, params: TrackingParams, seed_index=-1
) -> Streamline | None:
    """Bidirectional trace from a seed; None when rejected (too short / no dir)."""
    seed = np.asarray(seed_point, dtype=float)
    if not _mask_at(mask, seed):
        return None
    try:
        e1 = direction_at(vol, seed, None, params.fa_min, mask)
    except Terminated:
        return None
    forward = _trace_one_direction(vol, mask, seed, e1, params)
    backward = _trace_one_direction(vol, mask, seed, -e1, params)
    pts = backward[::-1] + [seed] + forward
    if len(pts) < 2:
        return None
    sl = Streamline(np.asarray(pts), seed_index=seed_index)
    if sl.arc_length < params.resolved_min_length(vol.spacing):
        return None
    return sl


def track_volume(
    vol: TensorVolume, mask: MaskVolume, params: TrackingParams
) -> list[Streamline]:
    """Seed one streamline per myocardium voxel center (configurable stride).

    Result order is by linear seed index (x fastest), independent of any
    execution order.
    """
    if vol.dims != mask.dims:
        raise ValueError("volume and mask grids differ")
    nx, ny, nz = vol.dims
    sx, sy, sz = vol.spacing
    ox, oy, oz = vol.origin
    stride = max(1, int(params.seed_stride))
    fibers: list[Streamline] = []
    seed_index = 0
    for k in range(0, nz, stride):
        for j in range(0, ny, stride):
            for i in range(0, nx, stride):
                if mask.labels[i, j, k] == 0:
                    seed_index += 1
                    continue
                seed = (ox + i * sx, oy + j * sy, oz + k * sz)
                sl = trace_streamline(vol, mask, seed, params, seed_index=seed_index)
                if sl is not None:
                    fibers.append(sl)
                seed_index += 1
    return fibers


# ---------------------------------------------------------------------------
# .fib file format: JSON header line, then per fiber a uint32 point count
# followed by n x 3 little-endian float32 mm coordinates.
# ---------------------------------------------------------------------------

def write_streamlines(path, fibers: list[Streamline]):
    header = {"count": len(fibers), "dtype": "f32"}
    with open(path, "wb") as f:
        f.write((json.dumps(header) + "\n").encode("utf-8"))
        for sl in fibers:
            pts = np.asarray(sl.points, dtype="<f4")
            f.write(struct.pack("<I", len(pts)))
            f.write(pts.tobytes())


def read_streamlines(path) -> list[Streamline]:
    with open(path, "rb") as f:
        header = json.loads(f.readline().decode("utf-8"))
        fibers = []
        for idx in range(int(header["count"])):
            raw = f.read(4)
            if len(raw) != 4:
                raise ValueError(f"{path}: truncated at fiber {idx}")
            (n,) = struct.unpack("<I", raw)
            buf = f.read(n * 12)
            if len(buf) != n * 12:
                raise ValueError(f"{path}: truncated payload at fiber {idx}")
            pts = np.frombuffer(buf, dtype="<f4").reshape(n, 3).astype(float)
            fibers.append(Streamline(pts, seed_index=idx))
    return fibers
