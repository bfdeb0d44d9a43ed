"""Per-point anatomical features: helical angle and transmural depth.

Transmural depth solves the Laplace equation on the voxelized myocardium with
Dirichlet values 0 on the endocardial shell and 1 on the epicardial shell
(7-point finite differences, conjugate gradient). Helical angle is the signed
angle of the radially-deprojected streamline tangent against the local
circumferential direction, in [-90, +90] degrees.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import cg

from .tractography import Streamline
from .volume import (
    MASK_ENDO,
    MASK_EPI,
    MASK_MYOCARDIUM,
    MaskVolume,
    OutOfBounds,
    ScalarVolume,
    sample_trilinear,
)

MIN_FIBER_POINTS = 26  # next-25-point pretext task needs at least one input point


@dataclass
class LVAxis:
    """Left-ventricular long axis: a center point and a unit direction."""

    center: np.ndarray
    direction: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float)
        self.direction = np.asarray(self.direction, dtype=float)
        n = np.linalg.norm(self.direction)
        if n < 1e-12:
            raise ValueError("axis direction must be nonzero")
        self.direction = self.direction / n


class DegenerateFrame(ValueError):
    """Point lies on the LV long axis; radial direction undefined."""


def local_frame(p, axis: LVAxis) -> tuple[np.ndarray, np.ndarray]:
    """Radial and circumferential unit vectors at p; {r, c, z} right-handed."""
    p = np.asarray(p, dtype=float)
    z = axis.direction
    rel = p - axis.center
    radial = rel - np.dot(rel, z) * z
    n = np.linalg.norm(radial)
    if n < 1e-9:
        raise DegenerateFrame(f"point {tuple(p)} lies on the LV axis")
    r_hat = radial / n
    c_hat = np.cross(z, r_hat)
    return r_hat, c_hat


def helical_angle(streamline, axis: LVAxis) -> np.ndarray:
    """Per-point helix angle (degrees) of a streamline.

    Tangents come from central differences (one-sided at the endpoints). The
    tangent is deprojected radially and sign-normalized so its circumferential
    component is non-negative, making the angle independent of integration
    direction. Points with a purely radial tangent carry the nearest previous
    defined angle (0 when none exists).
    """
    pts = np.asarray(streamline.points if isinstance(streamline, Streamline) else streamline, dtype=float)
    m = len(pts)
    if m < 2:
        raise ValueError("need at least 2 points for tangents")
    tangents = np.empty_like(pts)
    tangents[0] = pts[1] - pts[0]
    tangents[-1] = pts[-1] - pts[-2]
    if m > 2:
        tangents[1:-1] = pts[2:] - pts[:-2]

    ha = np.zeros(m)
    last_defined = 0.0
    for i in range(m):
        r_hat, c_hat = local_frame(pts[i], axis)
        t = tangents[i]
        t = t - np.dot(t, r_hat) * r_hat
        tc = np.dot(t, c_hat)
        tz = np.dot(t, axis.direction)
        if math.hypot(tc, tz) < 1e-9:
            ha[i] = last_defined  # carry-forward policy for radial tangents
            continue
        if tc < 0.0:
            tc, tz = -tc, -tz
        ha[i] = math.degrees(math.atan2(tz, tc))
        last_defined = ha[i]
    return ha


# ---------------------------------------------------------------------------
# transmural depth
# ---------------------------------------------------------------------------

def solve_transmural_depth(
    mask: MaskVolume,
    tol: float = 1e-7,
    max_iter: int = 10000,
    endo_value: float = 0.0,
    epi_value: float = 1.0,
) -> ScalarVolume:
    """Laplace-Dirichlet solve for normalized wall depth on the mask grid.

    Unknowns are interior myocardium voxels (code 1); endo voxels (2) are
    fixed at 0, epi voxels (3) at 1. The 7-point Laplacian uses anisotropic
    weights 1/sx^2, 1/sy^2, 1/sz^2; outside voxels act as zero-flux
    (the missing neighbor term is dropped). Values outside the wall are 0.
    """
    labels = mask.labels
    if not (labels == MASK_ENDO).any() or not (labels == MASK_EPI).any():
        raise ValueError("mask must contain both endo (2) and epi (3) boundary voxels")
    nx, ny, nz = mask.dims
    sx, sy, sz = mask.spacing
    w = (1.0 / sx**2, 1.0 / sy**2, 1.0 / sz**2)

    interior = labels == MASK_MYOCARDIUM
    idx = -np.ones(mask.dims, dtype=np.int64)
    coords = np.argwhere(interior)
    idx[interior] = np.arange(len(coords))
    n = len(coords)

    lo, hi = min(endo_value, epi_value), max(endo_value, epi_value)
    u = np.zeros(mask.dims, dtype=float)
    u[labels == MASK_ENDO] = endo_value
    u[labels == MASK_EPI] = epi_value

    if n > 0:
        rows, cols, vals = [], [], []
        rhs = np.zeros(n)
        offs = [
            (1, 0, 0, w[0]), (-1, 0, 0, w[0]),
            (0, 1, 0, w[1]), (0, -1, 0, w[1]),
            (0, 0, 1, w[2]), (0, 0, -1, w[2]),
        ]
        for row, (i, j, k) in enumerate(coords):
            diag = 0.0
            for di, dj, dk, wt in offs:
                ii, jj, kk = i + di, j + dj, k + dk
                if not (0 <= ii < nx and 0 <= jj < ny and 0 <= kk < nz):
                    continue
                lab = labels[ii, jj, kk]
                if lab == 0:
                    continue  # zero-flux across the outer staircase
                diag += wt
                if lab == MASK_MYOCARDIUM:
                    rows.append(row)
                    cols.append(idx[ii, jj, kk])
                    vals.append(-wt)
                else:
                    rhs[row] += wt * (epi_value if lab == MASK_EPI else endo_value)
            rows.append(row)
            cols.append(row)
            vals.append(diag if diag > 0 else 1.0)
        A = sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))
        x, info = cg(A, rhs, rtol=tol, atol=0.0, maxiter=max_iter)
        if info != 0:
            res = float(np.linalg.norm(A @ x - rhs) / max(np.linalg.norm(rhs), 1e-300))
            raise RuntimeError(
                f"transmural depth solve did not converge in {max_iter} iterations "
                f"(relative residual {res:.3e})"
            )
        # discrete maximum principle: clip round-off excursions only
        x = np.clip(x, lo, hi)
        u[interior] = x

    return ScalarVolume(mask.dims, mask.spacing, mask.origin, u)


# ---------------------------------------------------------------------------
# dataset assembly
# ---------------------------------------------------------------------------

@dataclass
class FeatureDataset:
    train: list[np.ndarray]
    val: list[np.ndarray]
    test: list[np.ndarray]
    mean: np.ndarray  # per-feature, train-set statistics
    std: np.ndarray
    dropped: int = 0

    @property
    def all_sequences(self) -> list[np.ndarray]:
        return self.train + self.val + self.test

    def standardize(self, seq: np.ndarray) -> np.ndarray:
        return (seq - self.mean) / self.std


def split_indices(n: int, seed: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Random 72-8-20 split by fiber, deterministic under seed."""
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    n_train = int(round(0.72 * n))
    n_val = int(round(0.08 * n))
    return perm[:n_train], perm[n_train : n_train + n_val], perm[n_train + n_val :]


def extract_feature_sequence(
    streamline, td_volume: ScalarVolume, axis: LVAxis
) -> np.ndarray | None:
    """(m, 5) sequence of (x, y, z, HA, TD) for one streamline; None if TD
    sampling fails anywhere along the fiber."""
    pts = np.asarray(
        streamline.points if isinstance(streamline, Streamline) else streamline,
        dtype=float,
    )
    ha = helical_angle(pts, axis)
    td = np.empty(len(pts))
    for i, p in enumerate(pts):
        try:
            td[i] = sample_trilinear(td_volume, p)
        except OutOfBounds:
            return None
    return np.concatenate([pts, ha[:, None], np.clip(td, 0.0, 1.0)[:, None]], axis=1)


def build_feature_dataset(
    streamlines,
    td_volume: ScalarVolume,
    axis: LVAxis,
    split_seed: int = 0,
) -> FeatureDataset:
    """Attach HA/TD per point, drop short fibers, split 72-8-20, fit stats.

    Normalization statistics (per-feature mean/std) come from the train split
    only; sequences are stored raw.
    """
    kept: list[np.ndarray] = []
    dropped = 0
    for sl in streamlines:
        seq = extract_feature_sequence(sl, td_volume, axis)
        if seq is None or len(seq) < MIN_FIBER_POINTS:
            dropped += 1
            continue
        kept.append(seq)
    if not kept:
        raise ValueError(f"no usable fibers (dropped {dropped})")
    tr, va, te = split_indices(len(kept), split_seed)
    train = [kept[i] for i in tr]
    val = [kept[i] for i in va]
    test = [kept[i] for i in te]
    stacked = np.concatenate(train, axis=0) if train else np.concatenate(kept, axis=0)
    mean = stacked.mean(axis=0)
    std = stacked.std(axis=0)
    std = np.where(std < 1e-12, 1.0, std)
    return FeatureDataset(train, val, test, mean, std, dropped)


# ---------------------------------------------------------------------------
# .fft fiber-feature file: JSON header line (count, features, stats), then per
# fiber a uint32 m followed by m x 5 little-endian float32 raw values.
# ---------------------------------------------------------------------------

def write_feature_sequences(path, sequences, mean=None, std=None, extra: dict | None = None):
    header = {"count": len(sequences), "features": 5}
    if mean is not None:
        header["mean"] = [float(v) for v in mean]
        header["std"] = [float(v) for v in std]
    if extra:
        header.update(extra)
    with open(path, "wb") as f:
        f.write((json.dumps(header) + "\n").encode("utf-8"))
        for seq in sequences:
            arr = np.asarray(seq, dtype="<f4")
            f.write(struct.pack("<I", len(arr)))
            f.write(arr.tobytes())


def read_feature_sequences(path) -> tuple[list[np.ndarray], dict]:
    with open(path, "rb") as f:
        header = json.loads(f.readline().decode("utf-8"))
        nfeat = int(header.get("features", 5))
        sequences = []
        for idx in range(int(header["count"])):
            raw = f.read(4)
            if len(raw) != 4:
                raise ValueError(f"{path}: truncated at fiber {idx}")
            (m,) = struct.unpack("<I", raw)
            buf = f.read(m * 4 * nfeat)
            if len(buf) != m * 4 * nfeat:
                raise ValueError(f"{path}: truncated payload at fiber {idx}")
            sequences.append(
                np.frombuffer(buf, dtype="<f4").reshape(m, nfeat).astype(float)
            )
    return sequences, header
