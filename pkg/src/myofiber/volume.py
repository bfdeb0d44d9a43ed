"""Diffusion-tensor and scalar volumes: file IO, trilinear sampling, eigenanalysis, FA.

Conventions shared by every module:
  * voxel (0,0,0) center sits at ``origin`` (mm); voxel (i,j,k) center at
    origin + (i*sx, j*sy, k*sz)
  * in-memory arrays are indexed [i, j, k] (x, y, z); on disk the payload is
    x-fastest with the 6 tensor components contiguous per voxel
  * symmetric tensors are stored as 6 components in the order
    xx, xy, xz, yy, yz, zz
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

# component order of the 6-vector storage
TENSOR_COMPONENTS = ("xx", "xy", "xz", "yy", "yz", "zz")

MASK_OUTSIDE = 0
MASK_MYOCARDIUM = 1
MASK_ENDO = 2
MASK_EPI = 3


class VolumeFormatError(ValueError):
    """Malformed volume file: bad header, size mismatch, or non-finite payload."""


class OutOfBounds(Exception):
    """Sample point lies outside the region spanned by the voxel centers."""


def _check_grid(dims, spacing):
    dims = tuple(int(d) for d in dims)
    spacing = tuple(float(s) for s in spacing)
    if len(dims) != 3 or any(d <= 0 for d in dims):
        raise ValueError(f"dims must be three positive ints, got {dims}")
    if len(spacing) != 3 or any(s <= 0 for s in spacing):
        raise ValueError(f"spacing must be three positive floats, got {spacing}")
    return dims, spacing


@dataclass
class TensorVolume:
    """Regular grid of symmetric 3x3 diffusion tensors (mm^2/s)."""

    dims: tuple[int, int, int]
    spacing: tuple[float, float, float]
    origin: tuple[float, float, float]
    data: np.ndarray = field(repr=False)  # (nx, ny, nz, 6) float32

    def __post_init__(self):
        self.dims, self.spacing = _check_grid(self.dims, self.spacing)
        self.origin = tuple(float(o) for o in self.origin)
        expected = self.dims + (6,)
        if self.data.shape != expected:
            raise ValueError(f"data shape {self.data.shape} != {expected}")

    def tensor_at(self, i, j, k) -> np.ndarray:
        return self.data[i, j, k]


@dataclass
class ScalarVolume:
    """One scalar per voxel on the same grid layout as TensorVolume."""

    dims: tuple[int, int, int]
    spacing: tuple[float, float, float]
    origin: tuple[float, float, float]
    data: np.ndarray = field(repr=False)  # (nx, ny, nz)

    def __post_init__(self):
        self.dims, self.spacing = _check_grid(self.dims, self.spacing)
        self.origin = tuple(float(o) for o in self.origin)
        if self.data.shape != self.dims:
            raise ValueError(f"data shape {self.data.shape} != {self.dims}")


@dataclass
class MaskVolume:
    """Voxel label volume: 0 outside, 1 myocardium, 2 endo boundary, 3 epi boundary."""

    dims: tuple[int, int, int]
    spacing: tuple[float, float, float]
    origin: tuple[float, float, float]
    labels: np.ndarray = field(repr=False)  # (nx, ny, nz) uint8

    def __post_init__(self):
        self.dims, self.spacing = _check_grid(self.dims, self.spacing)
        self.origin = tuple(float(o) for o in self.origin)
        if self.labels.shape != self.dims:
            raise ValueError(f"labels shape {self.labels.shape} != {self.dims}")
        bad = ~np.isin(self.labels, (MASK_OUTSIDE, MASK_MYOCARDIUM, MASK_ENDO, MASK_EPI))
        if bad.any():
            raise ValueError(f"mask contains invalid codes: {np.unique(self.labels[bad])}")

    def is_inside(self, labels: np.ndarray) -> np.ndarray:
        return labels > 0


# ---------------------------------------------------------------------------
# file IO (.dtv / .msk / scalar)
#
# One UTF-8 JSON header line terminated by '\n', then a raw little-endian
# payload, x-fastest voxel order, components contiguous per voxel.
# ---------------------------------------------------------------------------

def _write_payload(f, header: dict, flat: np.ndarray):
    f.write((json.dumps(header) + "\n").encode("utf-8"))
    f.write(flat.tobytes())


def _read_header(f, path):
    line = f.readline()
    if not line.endswith(b"\n"):
        raise VolumeFormatError(f"{path}: missing newline-terminated header")
    try:
        header = json.loads(line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise VolumeFormatError(f"{path}: malformed header: {e}") from e
    for key in ("dims", "spacing", "origin", "dtype", "components"):
        if key not in header:
            raise VolumeFormatError(f"{path}: header missing '{key}'")
    return header


def _disk_order(arr: np.ndarray) -> np.ndarray:
    # (nx,ny,nz,...) -> flat, x fastest, per-voxel components contiguous
    if arr.ndim == 4:
        return np.ascontiguousarray(arr.transpose(2, 1, 0, 3)).ravel()
    return np.ascontiguousarray(arr.transpose(2, 1, 0)).ravel()


def _from_disk_order(flat: np.ndarray, dims, ncomp):
    nx, ny, nz = dims
    if ncomp > 1:
        return flat.reshape(nz, ny, nx, ncomp).transpose(2, 1, 0, 3)
    return flat.reshape(nz, ny, nx).transpose(2, 1, 0)


def write_tensor_volume(path, vol: TensorVolume):
    data = np.asarray(vol.data, dtype=np.float32)
    if not np.isfinite(data).all():
        idx = np.argwhere(~np.isfinite(data))[0]
        raise VolumeFormatError(f"non-finite tensor component at voxel {tuple(idx)}")
    header = {
        "dims": list(vol.dims),
        "spacing": list(vol.spacing),
        "origin": list(vol.origin),
        "dtype": "f32",
        "components": 6,
    }
    with open(path, "wb") as f:
        _write_payload(f, header, _disk_order(data).astype("<f4"))


def read_tensor_volume(path) -> TensorVolume:
    with open(path, "rb") as f:
        header = _read_header(f, path)
        if header["dtype"] != "f32" or header["components"] != 6:
            raise VolumeFormatError(f"{path}: expected f32 x 6 tensor payload")
        dims = tuple(int(d) for d in header["dims"])
        payload = f.read()
    n_expected = dims[0] * dims[1] * dims[2] * 6
    flat = np.frombuffer(payload, dtype="<f4")
    if flat.size != n_expected:
        raise VolumeFormatError(
            f"{path}: payload has {flat.size} floats, header implies {n_expected}"
        )
    if not np.isfinite(flat).all():
        pos = int(np.argmax(~np.isfinite(flat)))
        raise VolumeFormatError(f"{path}: non-finite value at payload index {pos}")
    data = _from_disk_order(flat.copy(), dims, 6)
    return TensorVolume(dims, tuple(header["spacing"]), tuple(header["origin"]), data)


def write_mask_volume(path, mask: MaskVolume):
    header = {
        "dims": list(mask.dims),
        "spacing": list(mask.spacing),
        "origin": list(mask.origin),
        "dtype": "u8",
        "components": 1,
    }
    with open(path, "wb") as f:
        _write_payload(f, header, _disk_order(mask.labels.astype(np.uint8)))


def read_mask_volume(path) -> MaskVolume:
    with open(path, "rb") as f:
        header = _read_header(f, path)
        if header["dtype"] != "u8" or header["components"] != 1:
            raise VolumeFormatError(f"{path}: expected u8 x 1 mask payload")
        dims = tuple(int(d) for d in header["dims"])
        payload = f.read()
    n_expected = dims[0] * dims[1] * dims[2]
    flat = np.frombuffer(payload, dtype=np.uint8)
    if flat.size != n_expected:
        raise VolumeFormatError(
            f"{path}: payload has {flat.size} bytes, header implies {n_expected}"
        )
    labels = _from_disk_order(flat.copy(), dims, 1)
    return MaskVolume(dims, tuple(header["spacing"]), tuple(header["origin"]), labels)


def write_scalar_volume(path, vol: ScalarVolume):
    data = np.asarray(vol.data, dtype=np.float32)
    if not np.isfinite(data).all():
        idx = np.argwhere(~np.isfinite(data))[0]
        raise VolumeFormatError(f"non-finite scalar at voxel {tuple(idx)}")
    header = {
        "dims": list(vol.dims),
        "spacing": list(vol.spacing),
        "origin": list(vol.origin),
        "dtype": "f32",
        "components": 1,
    }
    with open(path, "wb") as f:
        _write_payload(f, header, _disk_order(data).astype("<f4"))


def read_scalar_volume(path) -> ScalarVolume:
    with open(path, "rb") as f:
        header = _read_header(f, path)
        if header["dtype"] != "f32" or header["components"] != 1:
            raise VolumeFormatError(f"{path}: expected f32 x 1 scalar payload")
        dims = tuple(int(d) for d in header["dims"])
        payload = f.read()
    n_expected = dims[0] * dims[1] * dims[2]
    flat = np.frombuffer(payload, dtype="<f4")
    if flat.size != n_expected:
        raise VolumeFormatError(
            f"{path}: payload has {flat.size} floats, header implies {n_expected}"
        )
    data = _from_disk_order(flat.copy().astype(float), dims, 1)
    return ScalarVolume(dims, tuple(header["spacing"]), tuple(header["origin"]), data)


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------

def voxel_coords(vol, p) -> np.ndarray:
    """Physical mm point -> continuous voxel-index coordinates."""
    return (np.asarray(p, dtype=float) - np.asarray(vol.origin)) / np.asarray(vol.spacing)


def in_sample_region(vol, p) -> bool:
    c = voxel_coords(vol, p)
    dims = np.asarray(vol.dims)
    return bool(np.all(c >= 0.0) and np.all(c <= dims - 1))


def sample_trilinear(vol, p) -> np.ndarray | float:
    """Trilinear interpolation at mm point p.

    Works on TensorVolume (returns a 6-vector) and ScalarVolume (returns a
    float). Raises OutOfBounds when p is outside the span of voxel centers;
    tractography treats that as a termination signal, never a clamp.
    """
    c = voxel_coords(vol, p)
    dims = vol.dims
    if np.any(c < 0.0) or np.any(c > np.asarray(dims) - 1):
        raise OutOfBounds(f"point {tuple(np.asarray(p, float))} outside sampleable region")
    i0 = np.minimum(np.floor(c).astype(int), np.asarray(dims) - 2)
    i0 = np.maximum(i0, 0)
    f = c - i0
    x0, y0, z0 = i0
    fx, fy, fz = f
    if isinstance(vol, TensorVolume):
        d = vol.data
        c00 = d[x0, y0, z0] * (1 - fx) + d[x0 + 1, y0, z0] * fx
        c10 = d[x0, y0 + 1, z0] * (1 - fx) + d[x0 + 1, y0 + 1, z0] * fx
        c01 = d[x0, y0, z0 + 1] * (1 - fx) + d[x0 + 1, y0, z0 + 1] * fx
        c11 = d[x0, y0 + 1, z0 + 1] * (1 - fx) + d[x0 + 1, y0 + 1, z0 + 1] * fx
        return (c00 * (1 - fy) + c10 * fy) * (1 - fz) + (c01 * (1 - fy) + c11 * fy) * fz
    d = vol.data
    c00 = d[x0, y0, z0] * (1 - fx) + d[x0 + 1, y0, z0] * fx
    c10 = d[x0, y0 + 1, z0] * (1 - fx) + d[x0 + 1, y0 + 1, z0] * fx
    c01 = d[x0, y0, z0 + 1] * (1 - fx) + d[x0 + 1, y0, z0 + 1] * fx
    c11 = d[x0, y0 + 1, z0 + 1] * (1 - fx) + d[x0 + 1, y0 + 1, z0 + 1] * fx
    return float((c00 * (1 - fy) + c10 * fy) * (1 - fz) + (c01 * (1 - fy) + c11 * fy) * fz)


# ---------------------------------------------------------------------------
# tensor algebra
# ---------------------------------------------------------------------------

def tensor6_to_matrix(t6) -> np.ndarray:
    xx, xy, xz, yy, yz, zz = np.asarray(t6, dtype=float)
    return np.array([[xx, xy, xz], [xy, yy, yz], [xz, yz, zz]])


def matrix_to_tensor6(m) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    return np.array([m[0, 0], m[0, 1], m[0, 2], m[1, 1], m[1, 2], m[2, 2]])


def eigen_principal(t6):
    """Principal eigenvector and sorted eigenvalues of a symmetric tensor.

    Returns (e1, (l1, l2, l3)) with l1 >= l2 >= l3 and e1 unit-norm. The sign
    of e1 is canonicalized so its largest-magnitude component is positive
    (eigenvectors are sign-ambiguous).
    """
    t6 = np.asarray(t6, dtype=float)
    if not np.isfinite(t6).all():
        raise ValueError("non-finite tensor components")
    m = tensor6_to_matrix(t6)
    w, v = np.linalg.eigh(m)  # ascending
    e1 = v[:, 2]
    k = int(np.argmax(np.abs(e1)))
    if e1[k] < 0:
        e1 = -e1
    return e1, (float(w[2]), float(w[1]), float(w[0]))


def fractional_anisotropy(l1, l2, l3) -> float:
    """FA = sqrt(3/2) * ||lambda - mean||_2 / ||lambda||_2, clamped to [0, 1]."""
    lam = np.array([l1, l2, l3], dtype=float)
    norm = np.linalg.norm(lam)
    if norm == 0.0:
        raise ValueError("FA undefined for all-zero eigenvalues")
    dev = lam - lam.mean()
    fa = np.sqrt(1.5) * np.linalg.norm(dev) / norm
    return float(min(max(fa, 0.0), 1.0))
