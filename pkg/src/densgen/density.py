"""Calculated electron density and labeled point clouds.

A molecule is boxed into an orthorhombic P1 cell, its structure factors are
evaluated by direct summation over every Miller index inside the resolution
sphere |h| <= 1/d_min, and the density grid is recovered by the matching
truncated inverse transform. Point clouds are then drawn from the positive
part of the grid and labeled by the nearest atom's pharmacophore class.

Direct summation (no FFT) keeps both transforms exact and directly
comparable to brute-force oracles at desk scale.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .mol import Molecule, PharmacophoreClass, classify_pharmacophore

DEFAULT_D_MIN = 3.5      # angstrom resolution cutoff
DEFAULT_N_POINTS = 199   # points per cloud
DEFAULT_PADDING = 4.0    # angstrom box padding
DEFAULT_B_SMEAR = 20.0   # angstrom^2, gaussian form-factor smearing


class DensityError(ValueError):
    pass


@dataclass(frozen=True)
class Cell:
    """Orthorhombic cell: edge lengths and origin in angstroms."""

    a: float
    b: float
    c: float
    origin: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        if min(self.a, self.b, self.c) <= 0:
            raise DensityError(f"non-positive cell edge: {(self.a, self.b, self.c)}")
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=float))

    @property
    def edges(self) -> np.ndarray:
        return np.array([self.a, self.b, self.c])

    @property
    def volume(self) -> float:
        return self.a * self.b * self.c

    def fractional(self, positions: np.ndarray) -> np.ndarray:
        return (np.asarray(positions, dtype=float) - self.origin) / self.edges


@dataclass(frozen=True)
class FormFactorModel:
    """Atomic scattering factor f(h): constant Z, or Z damped by a Gaussian."""

    mode: str = "constant_Z"
    B: float = DEFAULT_B_SMEAR

    def __post_init__(self):
        if self.mode not in ("constant_Z", "gaussian"):
            raise DensityError(f"unknown form-factor mode {self.mode!r}")

    def evaluate(self, z: np.ndarray, h_norm2: np.ndarray) -> np.ndarray:
        """f per (miller, atom); ``h_norm2`` is |h_vec|^2 in inverse sq angstroms."""
        if self.mode == "constant_Z":
            return np.broadcast_to(z[None, :], (len(h_norm2), len(z))).astype(float)
        return np.exp(-self.B * h_norm2[:, None] / 4.0) * z[None, :]


@dataclass(frozen=True)
class StructureFactorSet:
    """Complex Fourier coefficients F(h) on integer Miller triples."""

    millers: np.ndarray   # (M, 3) int
    values: np.ndarray    # (M,) complex
    d_min: float
    cell: Cell

    def __len__(self) -> int:
        return len(self.values)

    def value_at(self, h: int, k: int, l: int) -> complex:
        match = np.all(self.millers == (h, k, l), axis=1)
        idx = np.nonzero(match)[0]
        if len(idx) == 0:
            raise KeyError(f"Miller index {(h, k, l)} not in set")
        return complex(self.values[idx[0]])

    def check_friedel(self, tol: float = 1e-9):
        """Require the set to be closed under negation with conjugate values."""
        table = {tuple(m): v for m, v in zip(map(tuple, self.millers), self.values)}
        for m, v in table.items():
            neg = (-m[0], -m[1], -m[2])
            if neg not in table:
                raise DensityError(f"Friedel mate of {m} missing")
            if abs(table[neg] - np.conj(v)) > tol * max(1.0, abs(v)):
                raise DensityError(f"Friedel pair at {m} not conjugate")


@dataclass(frozen=True)
class DensityGrid:
    """Real-space density on a regular grid over the cell.

    ``values`` is a flat array in x-fastest order; node (i, j, k) sits at
    origin + (i/nx, j/ny, k/nz) * edges.
    """

    cell: Cell
    dims: tuple[int, int, int]
    values: np.ndarray

    def __post_init__(self):
        nx, ny, nz = self.dims
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != (nx * ny * nz,):
            raise DensityError(f"value count {vals.shape} does not match dims {self.dims}")
        if not np.all(np.isfinite(vals)):
            raise DensityError("non-finite density values")
        object.__setattr__(self, "values", vals)

    @property
    def voxel_volume(self) -> float:
        nx, ny, nz = self.dims
        return self.cell.volume / (nx * ny * nz)

    def node_position(self, ix: int, iy: int, iz: int) -> np.ndarray:
        frac = np.array([ix, iy, iz]) / np.array(self.dims)
        return self.cell.origin + frac * self.cell.edges

    def node_positions(self) -> np.ndarray:
        """All node positions, flat, x-fastest (matching ``values``)."""
        nx, ny, nz = self.dims
        iz, iy, ix = np.meshgrid(np.arange(nz), np.arange(ny), np.arange(nx),
                                 indexing="ij")
        frac = np.stack([ix.ravel(), iy.ravel(), iz.ravel()], axis=1) / np.array(self.dims)
        return self.cell.origin + frac * self.cell.edges

    def total_density(self) -> float:
        return float(self.values.sum() * self.voxel_volume)


@dataclass(frozen=True)
class LabeledPointCloud:
    """Pharmacophore-labeled points sorted ascending by (x, y, z)."""

    classes: tuple[PharmacophoreClass, ...]
    positions: np.ndarray  # (n, 3) angstroms
    d_min: float

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float).reshape(-1, 3)
        if len(pos) != len(self.classes):
            raise DensityError("class/position length mismatch")
        object.__setattr__(self, "positions", pos)

    @property
    def n(self) -> int:
        return len(self.classes)

    def to_json(self) -> str:
        points = [{"t": c.tag, "x": float(p[0]), "y": float(p[1]), "z": float(p[2])}
                  for c, p in zip(self.classes, self.positions)]
        return json.dumps({"d_min": self.d_min, "n": self.n, "points": points},
                          indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "LabeledPointCloud":
        data = json.loads(text)
        points = data["points"]
        if len(points) != data["n"]:
            raise DensityError("point count does not match n")
        classes = tuple(PharmacophoreClass.from_tag(p["t"]) for p in points)
        positions = np.array([[p["x"], p["y"], p["z"]] for p in points], dtype=float)
        return cls(classes, positions.reshape(-1, 3), float(data["d_min"]))


def build_cell(mol: Molecule, padding: float = DEFAULT_PADDING) -> Cell:
    """Axis-aligned bounding box of the molecule grown by ``padding`` per face."""
    if mol.n_atoms == 0:
        raise DensityError("cannot box an empty molecule")
    pos = mol.positions()
    lo = pos.min(axis=0) - padding
    hi = pos.max(axis=0) + padding
    edges = hi - lo
    return Cell(float(edges[0]), float(edges[1]), float(edges[2]), origin=lo)


def miller_indices(cell: Cell, d_min: float) -> np.ndarray:
    """All integer Miller triples with |h_vec| <= 1/d_min, lexicographic order."""
    if d_min <= 0:
        raise DensityError(f"d_min must be positive, got {d_min}")
    limits = np.floor(cell.edges / d_min).astype(int)
    axes = [np.arange(-m, m + 1) for m in limits]
    hh, kk, ll = np.meshgrid(*axes, indexing="ij")
    triples = np.stack([hh.ravel(), kk.ravel(), ll.ravel()], axis=1)
    h_vec = triples / cell.edges
    mask = (h_vec ** 2).sum(axis=1) <= (1.0 / d_min) ** 2
    return triples[mask]


def structure_factors(mol: Molecule, cell: Cell, d_min: float = DEFAULT_D_MIN,
                      ff: FormFactorModel | None = None) -> StructureFactorSet:
    """F(h) = sum_i f_i(h) exp(2 pi i h . v_i) over the resolution sphere."""
    ff = ff or FormFactorModel()
    frac = cell.fractional(mol.positions())
    if np.any(frac < 0) or np.any(frac > 1):
        raise DensityError("molecule does not fit inside the cell")
    millers = miller_indices(cell, d_min)
    z = np.array([a.electron_count for a in mol.atoms], dtype=float)
    h_norm2 = ((millers / cell.edges) ** 2).sum(axis=1)
    f = ff.evaluate(z, h_norm2)                        # (M, N)
    phase = 2.0 * np.pi * (millers @ frac.T)           # (M, N)
    values = (f * np.exp(1j * phase)).sum(axis=1)
    return StructureFactorSet(millers, values, d_min, cell)


def default_grid_dims(cell: Cell, d_min: float) -> tuple[int, int, int]:
    """Smallest dims satisfying the spacing requirement edge/n <= d_min/3."""
    dims = np.ceil(3.0 * cell.edges / d_min).astype(int)
    return tuple(int(max(2, n)) for n in dims)


def density_from_factors(sf: StructureFactorSet,
                         dims: tuple[int, int, int] | None = None) -> DensityGrid:
    """rho(v) = (1/V) sum_h F(h) exp(-2 pi i h . v) at every grid node."""
    cell = sf.cell
    if dims is None:
        dims = default_grid_dims(cell, sf.d_min)
    nx, ny, nz = dims
    spacing = cell.edges / np.array(dims)
    if np.any(spacing > sf.d_min / 3.0 + 1e-12):
        raise DensityError(f"grid spacing {spacing} exceeds d_min/3 = {sf.d_min / 3.0}")
    sf.check_friedel()

    ex = np.exp(-2j * np.pi * np.outer(sf.millers[:, 0], np.arange(nx) / nx))
    ey = np.exp(-2j * np.pi * np.outer(sf.millers[:, 1], np.arange(ny) / ny))
    ez = np.exp(-2j * np.pi * np.outer(sf.millers[:, 2], np.arange(nz) / nz))
    rho = np.einsum("m,mi,mj,mk->ijk", sf.values, ex, ey, ez) / cell.volume

    residual = np.abs(rho.imag).max()
    scale = max(np.abs(rho.real).max(), 1e-300)
    if residual > 1e-9 * scale:
        raise AssertionError(f"imaginary density residual {residual} exceeds 1e-9 * {scale}")
    # Flatten x-fastest: axis order is (x, y, z), so Fortran ravel does it.
    return DensityGrid(cell, (nx, ny, nz), rho.real.ravel(order="F"))


def sample_point_cloud(grid: DensityGrid, mol: Molecule, n: int = DEFAULT_N_POINTS,
                       seed: int = 0, d_min: float = DEFAULT_D_MIN) -> LabeledPointCloud:
    """Draw ``n`` density-weighted grid nodes and label them by nearest atom.

    Weights are max(rho, 0). Nodes are drawn without replacement while the
    positive supply lasts, then with replacement. Ties in the nearest-atom
    search go to the lowest atom index. Output is sorted by (x, y, z).
    ``d_min`` is recorded on the cloud as provenance metadata.
    """
    if n < 1:
        raise DensityError(f"need at least one point, got {n}")
    weights = np.clip(grid.values, 0.0, None)
    total = weights.sum()
    if total <= 0:
        raise DensityError("density grid has no positive values to sample")
    p = weights / total
    rng = np.random.default_rng(seed)
    n_positive = int((weights > 0).sum())
    scope = np.arange(len(weights))
    first = rng.choice(scope, size=min(n, n_positive), replace=False, p=p)
    draws = [first]
    if n > n_positive:
        draws.append(rng.choice(scope, size=n - n_positive, replace=True, p=p))
    flat = np.concatenate(draws)

    nx, ny, nz = grid.dims
    ix = flat % nx
    iy = (flat // nx) % ny
    iz = flat // (nx * ny)
    frac = np.stack([ix, iy, iz], axis=1) / np.array(grid.dims)
    points = grid.cell.origin + frac * grid.cell.edges

    atom_pos = mol.positions()
    d2 = ((points[:, None, :] - atom_pos[None, :, :]) ** 2).sum(axis=2)
    nearest = d2.argmin(axis=1)  # argmin takes the first (lowest) index on ties
    classes = [classify_pharmacophore(mol, int(i)) for i in nearest]

    order = np.lexsort((points[:, 2], points[:, 1], points[:, 0]))
    return LabeledPointCloud(tuple(classes[i] for i in order), points[order], d_min)


def write_grid(grid: DensityGrid) -> str:
    """EDGRID text format; values keep full float64 round-trip precision."""
    nx, ny, nz = grid.dims
    ox, oy, oz = (float(v) for v in grid.cell.origin)
    lines = ["EDGRID 1",
             f"dims {nx} {ny} {nz}",
             f"cell {float(grid.cell.a)!r} {float(grid.cell.b)!r} {float(grid.cell.c)!r}",
             f"origin {ox!r} {oy!r} {oz!r}"]
    vals = [repr(float(v)) for v in grid.values]
    for start in range(0, len(vals), 6):
        lines.append(" ".join(vals[start:start + 6]))
    return "\n".join(lines) + "\n"


def read_grid(text: str | bytes) -> DensityGrid:
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    lines = text.splitlines()
    if len(lines) < 4 or lines[0].strip() != "EDGRID 1":
        raise DensityError("bad magic: expected 'EDGRID 1'")
    dims_f = lines[1].split()
    cell_f = lines[2].split()
    orig_f = lines[3].split()
    if dims_f[:1] != ["dims"] or cell_f[:1] != ["cell"] or orig_f[:1] != ["origin"]:
        raise DensityError("malformed EDGRID header")
    try:
        dims = tuple(int(x) for x in dims_f[1:4])
        edges = [float(x) for x in cell_f[1:4]]
        origin = np.array([float(x) for x in orig_f[1:4]])
        values = np.array(" ".join(lines[4:]).split(), dtype=float)
    except ValueError as exc:
        raise DensityError(f"malformed EDGRID field: {exc}") from None
    if len(values) != dims[0] * dims[1] * dims[2]:
        raise DensityError(f"value count {len(values)} does not match dims {dims}")
    return DensityGrid(Cell(edges[0], edges[1], edges[2], origin), dims, values)
