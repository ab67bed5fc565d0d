"""Coordinate and internal-geometry discretization, and its inversion.

Coordinates are centered, divided by sigma, floored, and shifted onto a
non-negative lattice. Each atom's local geometry relative to its three
reference atoms is a bond length l, the angle theta between successive
displacement vectors (0 = straight continuation), and a dihedral phi mapped
into [0, 360). Bins are floor(l/sigma), floor(theta/10), floor(phi/10);
dequantization uses bin midpoints.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class GeomError(ValueError):
    pass


class DegenerateGeometryError(GeomError):
    pass


@dataclass(frozen=True)
class DiscretizationParams:
    sigma: float = 0.1          # angstroms per lattice step
    offset: int = 150           # shift making lattice indices non-negative
    coord_min: int = 0
    coord_max: int = 299        # inclusive; width must fit the coord vocabulary
    angle_bin: float = 10.0     # degrees per angle bin

    def __post_init__(self):
        if self.sigma <= 0:
            raise GeomError(f"sigma must be positive, got {self.sigma}")
        if self.coord_max - self.coord_min + 1 > 300:
            raise GeomError("coordinate range exceeds the 300-slot table")


@dataclass(frozen=True)
class ToleranceConfig:
    delta_l: float = 0.1        # angstroms
    delta_theta: float = 10.0   # degrees
    delta_phi: float = 10.0     # degrees

    def __post_init__(self):
        if min(self.delta_l, self.delta_theta, self.delta_phi) <= 0:
            raise GeomError("tolerances must be positive")


@dataclass(frozen=True)
class GeomRecord:
    """Binned and continuous local geometry; absent fields carry bin 0."""

    l_bin: int
    theta_bin: int
    phi_bin: int
    l: float
    theta: float
    phi: float
    has_theta: bool = True
    has_phi: bool = True

    def __post_init__(self):
        for name, b in (("l_bin", self.l_bin), ("theta_bin", self.theta_bin),
                        ("phi_bin", self.phi_bin)):
            if not 0 <= b < 200:
                raise GeomError(f"{name}={b} outside the 200-slot head")


def discretize_coords(positions: np.ndarray, params: DiscretizationParams,
                      center: np.ndarray | None = None
                      ) -> tuple[np.ndarray, np.ndarray, int]:
    """Lattice triples for positions: floor((v - center)/sigma) + offset.

    ``center`` defaults to the arithmetic mean of the positions. Out-of-range
    triples are clamped; the clamp count is reported, not fatal.
    Returns (lattice (N,3) int array, center, clamped component count).
    """
    pos = np.asarray(positions, dtype=float).reshape(-1, 3)
    if not np.all(np.isfinite(pos)):
        raise GeomError("non-finite positions")
    if center is None:
        center = pos.mean(axis=0)
    center = np.asarray(center, dtype=float)
    raw = np.floor((pos - center) / params.sigma).astype(int) + params.offset
    clamped = np.clip(raw, params.coord_min, params.coord_max)
    n_clamped = int((raw != clamped).sum())
    return clamped, center, n_clamped


def dequantize_coords(lattice: np.ndarray, params: DiscretizationParams,
                      center: np.ndarray) -> np.ndarray:
    """Bin-midpoint positions for lattice triples (inverse of discretize)."""
    lat = np.asarray(lattice, dtype=float)
    return center + (lat - params.offset + 0.5) * params.sigma


def relative_geometry(v3: np.ndarray | None, v2: np.ndarray | None,
                      v1: np.ndarray, v0: np.ndarray,
                      params: DiscretizationParams = DiscretizationParams()
                      ) -> GeomRecord:
    """Local geometry of v0 against ancestors v1 (nearest), v2, v3.

    l = |v0 - v1|. theta is the angle between (v1 - v2) and (v0 - v1), zero
    when v0 continues the v2->v1 line. phi is the dihedral about v2->v1 from
    the two-argument arctangent of the b1, b2, b3 cross products, in [0, 360).
    Missing ancestors leave theta/phi absent with sentinel bin 0.
    """
    v0 = np.asarray(v0, dtype=float)
    v1 = np.asarray(v1, dtype=float)
    d = v0 - v1
    l = float(np.linalg.norm(d))
    if l <= 0:
        raise DegenerateGeometryError("zero-length displacement v0 - v1")
    l_bin = min(int(math.floor(l / params.sigma)), 199)

    if v2 is None:
        return GeomRecord(l_bin, 0, 0, l, 0.0, 0.0, has_theta=False, has_phi=False)
    v2 = np.asarray(v2, dtype=float)
    b2 = v1 - v2
    nb2 = float(np.linalg.norm(b2))
    if nb2 <= 0:
        raise DegenerateGeometryError("coincident anchors v1, v2")
    cos_t = float(np.dot(b2, d) / (nb2 * l))
    theta = math.degrees(math.acos(min(1.0, max(-1.0, cos_t))))
    theta_bin = min(int(math.floor(theta / params.angle_bin)), 199)

    if v3 is None:
        return GeomRecord(l_bin, theta_bin, 0, l, theta, 0.0, has_phi=False)
    v3 = np.asarray(v3, dtype=float)
    b1 = v2 - v3
    if float(np.linalg.norm(b1)) <= 0:
        raise DegenerateGeometryError("coincident anchors v2, v3")
    phi = dihedral_degrees(b1, b2, d)
    phi_bin = min(int(math.floor(phi / params.angle_bin)), 199)
    return GeomRecord(l_bin, theta_bin, phi_bin, l, theta, phi)


def dihedral_degrees(b1: np.ndarray, b2: np.ndarray, b3: np.ndarray) -> float:
    """atan2 dihedral of successive displacement vectors, mapped to [0, 360)."""
    c12 = np.cross(b1, b2)
    c23 = np.cross(b2, b3)
    y = float(np.dot(np.cross(c12, c23), b2 / np.linalg.norm(b2)))
    x = float(np.dot(c12, c23))
    return math.degrees(math.atan2(y, x)) % 360.0


def reconstruct_position(v3: np.ndarray, v2: np.ndarray, v1: np.ndarray,
                         l: float, theta: float, phi: float) -> np.ndarray:
    """The unique point at distance l from v1 with the given theta and phi.

    Inverse of relative_geometry on continuous values. theta and phi are in
    degrees. For theta of 0 or 180 the result is the axis continuation and
    phi (and a non-collinear v3) is not required.
    """
    v1 = np.asarray(v1, dtype=float)
    v2 = np.asarray(v2, dtype=float)
    b2 = v1 - v2
    nb2 = float(np.linalg.norm(b2))
    if nb2 <= 0:
        raise DegenerateGeometryError("coincident anchors v1, v2")
    b2h = b2 / nb2
    t = math.radians(theta)
    if abs(math.sin(t)) < 1e-15:
        return v1 + l * math.cos(t) * b2h
    v3 = np.asarray(v3, dtype=float)
    normal = np.cross(v2 - v3, b2h)
    n_norm = float(np.linalg.norm(normal))
    if n_norm < 1e-12 * max(1.0, float(np.linalg.norm(v2 - v3))):
        raise DegenerateGeometryError("collinear anchor frame, dihedral undefined")
    m = normal / n_norm
    p = np.cross(m, b2h)
    f = math.radians(phi)
    return v1 + l * (math.cos(t) * b2h
                     + math.sin(t) * (math.cos(f) * p + math.sin(f) * m))


def _synthetic_v3(v2: np.ndarray, v1: np.ndarray) -> np.ndarray:
    """A v3 completing a non-collinear frame when only two anchors exist."""
    b2 = np.asarray(v1, dtype=float) - np.asarray(v2, dtype=float)
    axis = np.zeros(3)
    axis[int(np.argmin(np.abs(b2)))] = 1.0
    return np.asarray(v2, dtype=float) - axis


def circular_delta(a: float, b: float) -> float:
    """Absolute angular difference on the 360-degree circle."""
    d = abs(a - b) % 360.0
    return min(d, 360.0 - d)


def midpoint_values(l_bin: int, theta_bin: int | None, phi_bin: int | None,
                    params: DiscretizationParams) -> tuple[float, float | None, float | None]:
    l = (l_bin + 0.5) * params.sigma
    theta = None if theta_bin is None else (theta_bin + 0.5) * params.angle_bin
    phi = None if phi_bin is None else (phi_bin + 0.5) * params.angle_bin
    return l, theta, phi


def feasible_lattice_points(v3: np.ndarray | None, v2: np.ndarray | None,
                            v1: np.ndarray,
                            l_bin: int, theta_bin: int | None, phi_bin: int | None,
                            tol: ToleranceConfig, params: DiscretizationParams,
                            center: np.ndarray,
                            allow_fallback: bool = True) -> np.ndarray:
    """Lattice triples whose midpoint positions satisfy the bin tolerances.

    Continuous targets are the bin midpoints. A candidate passes if its
    recomputed length / angle / dihedral each stay within the corresponding
    tolerance (phi measured circularly). Candidates come from the axis box
    around the 27 reconstructions at the {-delta, 0, +delta} corner/center
    combinations (or the l-sphere box when anchors are missing), inflated by
    one lattice step. If the strict set is empty and ``allow_fallback`` is
    set, the lattice point nearest the exact reconstruction is returned.
    """
    v1 = np.asarray(v1, dtype=float)
    center = np.asarray(center, dtype=float)
    l_mid, theta_mid, phi_mid = midpoint_values(
        l_bin, theta_bin if v2 is not None else None,
        phi_bin if v3 is not None else None, params)

    lo, hi = _candidate_box(v3, v2, v1, l_mid, theta_mid, phi_mid, tol)
    g_lo = np.floor((lo - center) / params.sigma - 0.5).astype(int) + params.offset - 1
    g_hi = np.ceil((hi - center) / params.sigma - 0.5).astype(int) + params.offset + 1
    g_lo = np.maximum(g_lo, params.coord_min)
    g_hi = np.minimum(g_hi, params.coord_max)

    strict = np.empty((0, 3), dtype=int)
    if np.all(g_lo <= g_hi):
        gx, gy, gz = (np.arange(g_lo[k], g_hi[k] + 1) for k in range(3))
        gg = np.stack(np.meshgrid(gx, gy, gz, indexing="ij"), axis=-1).reshape(-1, 3)
        pts = dequantize_coords(gg, params, center)
        keep = _constraint_mask(pts, v3, v2, v1, l_mid, theta_mid, phi_mid, tol)
        strict = gg[keep]

    if len(strict) == 0:
        if not allow_fallback:
            return strict
        exact = _exact_reconstruction(v3, v2, v1, l_mid, theta_mid, phi_mid)
        g = np.rint((exact - center) / params.sigma - 0.5).astype(int) + params.offset
        g = np.clip(g, params.coord_min, params.coord_max)
        return g.reshape(1, 3)

    order = np.lexsort((strict[:, 2], strict[:, 1], strict[:, 0]))
    return strict[order]


def _exact_reconstruction(v3, v2, v1, l_mid, theta_mid, phi_mid) -> np.ndarray:
    if v2 is None:
        axis = np.zeros(3)
        axis[0] = 1.0
        return np.asarray(v1, dtype=float) + l_mid * axis
    if v3 is None:
        return reconstruct_position(_synthetic_v3(v2, v1), v2, v1, l_mid, theta_mid, 0.0)
    try:
        return reconstruct_position(v3, v2, v1, l_mid, theta_mid, phi_mid)
    except DegenerateGeometryError:
        return reconstruct_position(_synthetic_v3(v2, v1), v2, v1, l_mid, theta_mid, 0.0)


def _candidate_box(v3, v2, v1, l_mid, theta_mid, phi_mid,
                   tol: ToleranceConfig) -> tuple[np.ndarray, np.ndarray]:
    if v2 is None or v3 is None:
        r = l_mid + tol.delta_l
        return v1 - r, v1 + r
    corners = []
    for dl in (-tol.delta_l, 0.0, tol.delta_l):
        for dt in (-tol.delta_theta, 0.0, tol.delta_theta):
            for dp in (-tol.delta_phi, 0.0, tol.delta_phi):
                try:
                    corners.append(reconstruct_position(
                        v3, v2, v1, max(l_mid + dl, 0.0),
                        min(max(theta_mid + dt, 0.0), 180.0), phi_mid + dp))
                except DegenerateGeometryError:
                    pass
    if not corners:
        r = l_mid + tol.delta_l
        return v1 - r, v1 + r
    pts = np.array(corners)
    return pts.min(axis=0), pts.max(axis=0)


def _constraint_mask(pts: np.ndarray, v3, v2, v1, l_mid, theta_mid, phi_mid,
                     tol: ToleranceConfig) -> np.ndarray:
    d = pts - v1
    l = np.linalg.norm(d, axis=1)
    mask = (np.abs(l - l_mid) <= tol.delta_l) & (l > 0)
    if v2 is None or theta_mid is None:
        return mask
    b2 = np.asarray(v1, dtype=float) - np.asarray(v2, dtype=float)
    nb2 = np.linalg.norm(b2)
    with np.errstate(invalid="ignore", divide="ignore"):
        cos_t = (d @ b2) / (np.maximum(l, 1e-300) * nb2)
    theta = np.degrees(np.arccos(np.clip(cos_t, -1.0, 1.0)))
    mask &= np.abs(theta - theta_mid) <= tol.delta_theta
    if v3 is None or phi_mid is None:
        return mask
    b1 = np.asarray(v2, dtype=float) - np.asarray(v3, dtype=float)
    c12 = np.cross(b1, b2)
    c23 = np.cross(np.broadcast_to(b2, d.shape), d)
    y = np.cross(np.broadcast_to(c12, c23.shape), c23) @ (b2 / nb2)
    x = c23 @ c12
    phi = np.degrees(np.arctan2(y, x)) % 360.0
    delta = np.abs(phi - phi_mid) % 360.0
    mask &= np.minimum(delta, 360.0 - delta) <= tol.delta_phi
    return mask
