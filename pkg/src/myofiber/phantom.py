"""Synthetic annulus phantoms with analytic helix-angle / transmural-depth oracles.

The phantom is a cylindrical annulus (inner radius a, outer radius b, height h)
whose principal fiber direction follows a linear-in-depth helix rule:

    depth d = (r - a) / (b - a)
    HA(d)   = ha_endo + (ha_epi - ha_endo) * d          [degrees]
    e1      = cos(HA) * c_hat + sin(HA) * z_hat

with c_hat = z_hat x r_hat the local circumferential direction. The analytic
transmural-depth oracle is the exact axisymmetric Laplace solution
ln(r/a)/ln(b/a) (u=0 at r=a, u=1 at r=b); it is deliberately distinct from the
linear depth used by the helix rule.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .volume import (
    MASK_ENDO,
    MASK_EPI,
    MASK_MYOCARDIUM,
    MASK_OUTSIDE,
    MaskVolume,
    TensorVolume,
    fractional_anisotropy,
)


@dataclass
class PhantomSpec:
    inner_radius: float  # a, mm
    outer_radius: float  # b, mm
    height: float  # mm
    ha_endo: float  # degrees at r=a
    ha_epi: float  # degrees at r=b
    eigenvalues: tuple[float, float, float] = (1.0e-3, 0.4e-3, 0.2e-3)
    dims: tuple[int, int, int] = (48, 48, 16)
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        a, b = self.inner_radius, self.outer_radius
        if not 0 < a < b:
            raise ValueError(f"need 0 < a < b, got a={a}, b={b}")
        l1, l2, l3 = self.eigenvalues
        if not (l1 > l2 >= l3 > 0):
            raise ValueError(f"need l1 > l2 >= l3 > 0, got {self.eigenvalues}")

    @property
    def center(self) -> np.ndarray:
        # annulus axis = +z through the grid center
        dims = np.asarray(self.dims)
        spacing = np.asarray(self.spacing)
        return (dims - 1) * spacing / 2.0

    @property
    def origin(self) -> tuple[float, float, float]:
        return (0.0, 0.0, 0.0)

    @property
    def fa(self) -> float:
        return fractional_anisotropy(*self.eigenvalues)

    def to_dict(self) -> dict:
        return {
            "inner_radius": self.inner_radius,
            "outer_radius": self.outer_radius,
            "height": self.height,
            "ha_endo": self.ha_endo,
            "ha_epi": self.ha_epi,
            "eigenvalues": list(self.eigenvalues),
            "dims": list(self.dims),
            "spacing": list(self.spacing),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PhantomSpec":
        return cls(
            inner_radius=d["inner_radius"],
            outer_radius=d["outer_radius"],
            height=d["height"],
            ha_endo=d["ha_endo"],
            ha_epi=d["ha_epi"],
            eigenvalues=tuple(d.get("eigenvalues", (1.0e-3, 0.4e-3, 0.2e-3))),
            dims=tuple(d.get("dims", (48, 48, 16))),
            spacing=tuple(d.get("spacing", (1.0, 1.0, 1.0))),
        )


@dataclass
class BundleSpec:
    """Labeled helical fiber families with analytic per-point HA/TD."""

    families: int = 4
    fibers_per_family: int = 50
    points_per_fiber: int = 48
    ha_bands: list[tuple[float, float]] | None = None  # degrees
    depth_bands: list[tuple[float, float]] | None = None  # 0..1 transmural
    z_bands: list[tuple[float, float]] | None = None  # fraction of height
    point_step: float = 0.8  # arc-length spacing, mm
    noise_sigma: float = 0.0  # mm
    seed: int = 0
    inner_radius: float = 10.0
    outer_radius: float = 20.0
    height: float = 40.0
    band_fill: float = 0.3  # central fraction of each auto-band slot to sample

    def __post_init__(self):
        if self.families < 2:
            raise ValueError("need at least 2 fiber families")
        if self.fibers_per_family < 1:
            raise ValueError("empty family")
        if not 0.0 < self.band_fill <= 1.0:
            raise ValueError(f"band_fill must be in (0, 1], got {self.band_fill}")
        k = self.families
        if self.ha_bands is None:
            # spread helix angles evenly across +-60 degrees
            self.ha_bands = self._auto_bands(-60.0, 60.0)
        if self.depth_bands is None:
            self.depth_bands = self._auto_bands(0.1, 0.9)
        if self.z_bands is None:
            self.z_bands = self._auto_bands(0.15, 0.85)
        for bands in (self.ha_bands, self.depth_bands, self.z_bands):
            if len(bands) != k:
                raise ValueError("one band per family required")
            for lo, hi in bands:
                if not hi > lo:
                    raise ValueError(f"degenerate band ({lo}, {hi})")

    def _auto_bands(self, lo: float, hi: float) -> list[tuple[float, float]]:
        """Split [lo, hi] into one slot per family and keep the central
        ``band_fill`` fraction of each slot, so adjacent families are separated
        by a gap rather than touching."""
        edges = np.linspace(lo, hi, self.families + 1)
        bands = []
        for i in range(self.families):
            c = 0.5 * (edges[i] + edges[i + 1])
            w = 0.5 * (edges[i + 1] - edges[i]) * self.band_fill
            bands.append((float(c - w), float(c + w)))
        return bands

    def to_dict(self) -> dict:
        return {
            "families": self.families,
            "fibers_per_family": self.fibers_per_family,
            "points_per_fiber": self.points_per_fiber,
            "ha_bands": [list(b) for b in self.ha_bands],
            "depth_bands": [list(b) for b in self.depth_bands],
            "z_bands": [list(b) for b in self.z_bands],
            "point_step": self.point_step,
            "noise_sigma": self.noise_sigma,
            "seed": self.seed,
            "inner_radius": self.inner_radius,
            "outer_radius": self.outer_radius,
            "height": self.height,
            "band_fill": self.band_fill,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BundleSpec":
        kw = dict(d)
        for key in ("ha_bands", "depth_bands", "z_bands"):
            if kw.get(key) is not None:
                kw[key] = [tuple(b) for b in kw[key]]
        return cls(**kw)


def local_helix_direction(spec: PhantomSpec, p: np.ndarray) -> np.ndarray:
    """Analytic fiber direction at mm point p (unit vector)."""
    ha = analytic_helix_angle(spec, p)
    center = spec.center
    dx, dy = p[0] - center[0], p[1] - center[1]
    r = math.hypot(dx, dy)
    r_hat = np.array([dx / r, dy / r, 0.0])
    c_hat = np.array([-r_hat[1], r_hat[0], 0.0])  # z_hat x r_hat
    phi = math.radians(ha)
    return math.cos(phi) * c_hat + math.sin(phi) * np.array([0.0, 0.0, 1.0])


def analytic_helix_angle(spec: PhantomSpec, p) -> float:
    """Linear-in-depth helix angle oracle (degrees) at mm point p."""
    p = np.asarray(p, dtype=float)
    center = spec.center
    r = math.hypot(p[0] - center[0], p[1] - center[1])
    a, b = spec.inner_radius, spec.outer_radius
    if not (a <= r <= b):
        raise ValueError(f"point at radius {r:.3f} outside annulus [{a}, {b}]")
    d = (r - a) / (b - a)
    return spec.ha_endo + (spec.ha_epi - spec.ha_endo) * d


def analytic_transmural_depth(spec: PhantomSpec, p) -> float:
    """Exact axisymmetric Laplace-Dirichlet solution ln(r/a)/ln(b/a) at p."""
    p = np.asarray(p, dtype=float)
    center = spec.center
    r = math.hypot(p[0] - center[0], p[1] - center[1])
    a, b = spec.inner_radius, spec.outer_radius
    if not (a <= r <= b):
        raise ValueError(f"point at radius {r:.3f} outside annulus [{a}, {b}]")
    return math.log(r / a) / math.log(b / a)


def analytic_oracles(spec: PhantomSpec, p) -> tuple[float, float]:
    """(helix angle degrees, transmural depth) at mm point p inside the annulus."""
    return analytic_helix_angle(spec, p), analytic_transmural_depth(spec, p)


def generate_annulus_phantom(spec: PhantomSpec) -> tuple[TensorVolume, MaskVolume]:
    """Build the annulus tensor volume and its boundary-labeled mask.

    Boundary shells are one voxel thick and centered on the analytic surfaces
    (|r - a| resp. |r - b| below half the in-plane voxel size) so the Dirichlet
    data straddles the true boundary instead of sitting systematically inside
    it; this keeps the finite-difference depth solve second-order accurate.
    """
    nx, ny, nz = spec.dims
    sx, sy, sz = spec.spacing
    a, b = spec.inner_radius, spec.outer_radius
    center = spec.center
    half = 0.5 * max(sx, sy)

    extent_xy = min((nx - 1) * sx, (ny - 1) * sy) / 2.0
    if b + half > extent_xy:
        raise ValueError(
            f"annulus (outer radius {b}) exceeds grid half-extent {extent_xy:.2f} mm"
        )

    xs = np.arange(nx) * sx - center[0]
    ys = np.arange(ny) * sy - center[1]
    zs = np.arange(nz) * sz - center[2]
    X, Y, Z = np.meshgrid(xs, ys, zs, indexing="ij")
    R = np.hypot(X, Y)

    z_ok = np.abs(Z) <= spec.height / 2.0
    in_wall = (R >= a) & (R <= b) & z_ok
    endo = (np.abs(R - a) < half) & z_ok
    epi = (np.abs(R - b) < half) & z_ok

    labels = np.full(spec.dims, MASK_OUTSIDE, dtype=np.uint8)
    labels[in_wall | endo | epi] = MASK_MYOCARDIUM
    labels[endo] = MASK_ENDO
    labels[epi] = MASK_EPI

    l1, l2, l3 = spec.eigenvalues
    data = np.zeros(spec.dims + (6,), dtype=np.float32)

    sel = labels > 0
    idx = np.argwhere(sel)
    r = R[sel]
    r = np.maximum(r, 1e-9)
    d = np.clip((r - a) / (b - a), 0.0, 1.0)
    ha = np.radians(spec.ha_endo + (spec.ha_epi - spec.ha_endo) * d)

    rx, ry = X[sel] / r, Y[sel] / r
    # frames: r_hat radial, c_hat = z_hat x r_hat circumferential
    e1 = np.stack(
        [np.cos(ha) * (-ry), np.cos(ha) * rx, np.sin(ha)], axis=1
    )
    e2 = np.stack([rx, ry, np.zeros_like(rx)], axis=1)
    e3 = np.cross(e1, e2)

    D = (
        l1 * np.einsum("ni,nj->nij", e1, e1)
        + l2 * np.einsum("ni,nj->nij", e2, e2)
        + l3 * np.einsum("ni,nj->nij", e3, e3)
    )
    six = np.stack(
        [D[:, 0, 0], D[:, 0, 1], D[:, 0, 2], D[:, 1, 1], D[:, 1, 2], D[:, 2, 2]], axis=1
    )
    data[idx[:, 0], idx[:, 1], idx[:, 2]] = six.astype(np.float32)

    vol = TensorVolume(spec.dims, spec.spacing, spec.origin, data)
    mask = MaskVolume(spec.dims, spec.spacing, spec.origin, labels)
    return vol, mask


def generate_labeled_bundles(
    spec: BundleSpec,
) -> tuple[list[np.ndarray], np.ndarray]:
    """Generate K families of helical fibers with analytic features attached.

    Returns (sequences, labels): each sequence is an (m, 5) float array of
    (x, y, z, HA, TD) and labels[i] is the family index of sequences[i].
    Deterministic for a fixed seed.
    """
    rng = np.random.default_rng(spec.seed)
    a, b, h = spec.inner_radius, spec.outer_radius, spec.height
    log_ba = math.log(b / a)
    sequences: list[np.ndarray] = []
    labels: list[int] = []

    for fam in range(spec.families):
        ha_lo, ha_hi = spec.ha_bands[fam]
        d_lo, d_hi = spec.depth_bands[fam]
        z_lo, z_hi = spec.z_bands[fam]
        for _ in range(spec.fibers_per_family):
            phi_deg = rng.uniform(ha_lo, ha_hi)
            depth = rng.uniform(d_lo, d_hi)
            z0 = rng.uniform(z_lo, z_hi) * h
            theta0 = rng.uniform(0.0, 2.0 * math.pi)
            r = a + depth * (b - a)
            td = math.log(r / a) / log_ba
            phi = math.radians(phi_deg)

            s = np.arange(spec.points_per_fiber) * spec.point_step
            theta = theta0 + s * math.cos(phi) / r
            z = z0 + s * math.sin(phi)
            pts = np.stack(
                [r * np.cos(theta), r * np.sin(theta), z], axis=1
            )
            if spec.noise_sigma > 0:
                pts = pts + rng.normal(0.0, spec.noise_sigma, size=pts.shape)
            feats = np.concatenate(
                [
                    pts,
                    np.full((len(pts), 1), phi_deg),
                    np.full((len(pts), 1), td),
                ],
                axis=1,
            )
            sequences.append(feats)
            labels.append(fam)

    return sequences, np.asarray(labels, dtype=int)
