"""Molecular graph data model: atoms, bonds, rings, and pharmacophore classes.

Positions are Cartesian angstroms. Values are treated as immutable after
construction; nothing here holds shared mutable state.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

# Atomic numbers for the supported element set. "*" is the attachment-point
# pseudo-atom used by fragment sequences; it never reaches numeric pipelines.
ATOMIC_NUMBER: dict[str, int] = {
    "H": 1, "C": 6, "N": 7, "O": 8, "F": 9, "S": 16, "Cl": 17, "Br": 35, "*": 0,
}

# Standard atomic weights (IUPAC 2021, conventional values).
ATOMIC_MASS: dict[str, float] = {
    "H": 1.008, "C": 12.011, "N": 14.007, "O": 15.999, "F": 18.998,
    "S": 32.06, "Cl": 35.45, "Br": 79.904,
}

# Organic-subset valences used for implicit hydrogen fill. S is clamped to 2
# for this subset.
DEFAULT_VALENCE: dict[str, int] = {
    "H": 1, "C": 4, "N": 3, "O": 2, "F": 1, "S": 2, "Cl": 1, "Br": 1,
}


class BondOrder(enum.IntEnum):
    SINGLE = 1
    DOUBLE = 2
    TRIPLE = 3
    AROMATIC = 4


class PharmacophoreClass(enum.IntEnum):
    """Point label derived from the nearest atom's donor/acceptor character."""

    HBD = 0
    HBA = 1
    HBD_HBA = 2
    OTHER = 3

    @property
    def tag(self) -> str:
        return "OTH" if self is PharmacophoreClass.OTHER else self.name

    @classmethod
    def from_tag(cls, tag: str) -> "PharmacophoreClass":
        if tag == "OTH":
            return cls.OTHER
        try:
            return cls[tag]
        except KeyError:
            raise ValueError(f"unknown pharmacophore tag {tag!r}") from None


class MolError(ValueError):
    """Invalid molecular data."""


@dataclass(frozen=True)
class Atom:
    """One atom: element symbol, position in angstroms, and SMILES-level flags.

    ``explicit_h`` is the hydrogen count given in bracket notation; it is only
    meaningful when ``bracketed`` is true, in which case no implicit hydrogens
    are added. ``stereo`` preserves @/@@ markers without affecting the graph.
    """

    symbol: str
    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    aromatic: bool = False
    charge: int = 0
    explicit_h: int = 0
    bracketed: bool = False
    stereo: str | None = None

    def __post_init__(self):
        if self.symbol not in ATOMIC_NUMBER:
            raise MolError(f"unsupported element {self.symbol!r}")
        pos = np.asarray(self.position, dtype=float)
        if pos.shape != (3,) or not np.all(np.isfinite(pos)):
            raise MolError(f"bad position for atom {self.symbol}: {self.position!r}")
        object.__setattr__(self, "position", pos)

    @property
    def electron_count(self) -> int:
        return ATOMIC_NUMBER[self.symbol]


@dataclass(frozen=True)
class Bond:
    """Undirected bond between atom indices ``a`` and ``b``."""

    a: int
    b: int
    order: BondOrder = BondOrder.SINGLE
    stereo: str | None = None  # '/' or '\\' cis/trans marker, annotation only

    def __post_init__(self):
        if self.a == self.b:
            raise MolError(f"self-bond on atom {self.a}")

    def other(self, idx: int) -> int:
        if idx == self.a:
            return self.b
        if idx == self.b:
            return self.a
        raise MolError(f"atom {idx} not in bond ({self.a},{self.b})")


@dataclass
class Molecule:
    """Atoms plus bonds. Treated as immutable once built."""

    atoms: list[Atom] = field(default_factory=list)
    bonds: list[Bond] = field(default_factory=list)
    name: str = ""

    def __post_init__(self):
        n = len(self.atoms)
        seen: set[tuple[int, int]] = set()
        for bond in self.bonds:
            if not (0 <= bond.a < n and 0 <= bond.b < n):
                raise MolError(f"bond ({bond.a},{bond.b}) out of range for {n} atoms")
            key = (min(bond.a, bond.b), max(bond.a, bond.b))
            if key in seen:
                raise MolError(f"duplicate bond between {key[0]} and {key[1]}")
            seen.add(key)
        self._adj: list[list[Bond]] = [[] for _ in range(n)]
        for bond in self.bonds:
            self._adj[bond.a].append(bond)
            self._adj[bond.b].append(bond)

    @property
    def n_atoms(self) -> int:
        return len(self.atoms)

    def neighbors(self, idx: int) -> list[int]:
        return [b.other(idx) for b in self._adj[idx]]

    def bonds_of(self, idx: int) -> list[Bond]:
        return list(self._adj[idx])

    def bond_between(self, a: int, b: int) -> Bond | None:
        for bond in self._adj[a]:
            if bond.other(a) == b:
                return bond
        return None

    def positions(self) -> np.ndarray:
        return np.array([a.position for a in self.atoms], dtype=float).reshape(-1, 3)

    def is_connected(self) -> bool:
        if not self.atoms:
            return True
        seen = {0}
        stack = [0]
        while stack:
            u = stack.pop()
            for v in self.neighbors(u):
                if v not in seen:
                    seen.add(v)
                    stack.append(v)
        return len(seen) == self.n_atoms

    def implicit_h_count(self, idx: int) -> int:
        """Hydrogens added by standard valence fill (0 for bracket atoms)."""
        atom = self.atoms[idx]
        if atom.bracketed or atom.symbol in ("H", "*"):
            return 0
        order_sum = 0.0
        for bond in self._adj[idx]:
            order_sum += 1.5 if bond.order is BondOrder.AROMATIC else float(bond.order)
        valence = DEFAULT_VALENCE[atom.symbol] + atom.charge
        return max(0, valence - int(round(order_sum)))

    def total_h_count(self, idx: int) -> int:
        """All hydrogens on the atom: implicit + bracket count + H neighbors."""
        atom = self.atoms[idx]
        graph_h = sum(1 for v in self.neighbors(idx) if self.atoms[v].symbol == "H")
        explicit = atom.explicit_h if atom.bracketed else 0
        return self.implicit_h_count(idx) + explicit + graph_h

    def heavy_degree(self, idx: int) -> int:
        return sum(1 for v in self.neighbors(idx) if self.atoms[v].symbol != "H")

    def molecular_weight(self) -> float:
        """Sum of standard atomic masses including implicit hydrogens."""
        total = 0.0
        for i, atom in enumerate(self.atoms):
            total += ATOMIC_MASS[atom.symbol]
            total += (self.implicit_h_count(i)
                      + (atom.explicit_h if atom.bracketed else 0)) * ATOMIC_MASS["H"]
        return total


def smallest_ring_sizes(mol: Molecule) -> list[int]:
    """Per atom, the size of the smallest cycle containing it (0 if acyclic).

    For each incident edge the shortest alternative path between its endpoints
    is found by BFS with that edge removed; the smallest such cycle over all
    incident edges is the answer for the atom.
    """
    sizes = [0] * mol.n_atoms
    for idx in range(mol.n_atoms):
        best = 0
        for bond in mol.bonds_of(idx):
            other = bond.other(idx)
            dist = _bfs_distance(mol, idx, other, skip=bond)
            if dist is not None:
                cycle = dist + 1
                if best == 0 or cycle < best:
                    best = cycle
        sizes[idx] = best
    return sizes


def _bfs_distance(mol: Molecule, src: int, dst: int, skip: Bond) -> int | None:
    dist = {src: 0}
    queue = [src]
    while queue:
        nxt: list[int] = []
        for u in queue:
            for bond in mol.bonds_of(u):
                if bond is skip:
                    continue
                v = bond.other(u)
                if v not in dist:
                    dist[v] = dist[u] + 1
                    if v == dst:
                        return dist[v]
                    nxt.append(v)
        queue = nxt
    return dist.get(dst)


def ring_bond_flags(mol: Molecule) -> list[bool]:
    """True per bond if the bond lies on a cycle."""
    flags = []
    for bond in mol.bonds:
        flags.append(_bfs_distance(mol, bond.a, bond.b, skip=bond) is not None)
    return flags


def classify_pharmacophore(mol: Molecule, idx: int) -> PharmacophoreClass:
    """Donor/acceptor class of an atom.

    C, S, halogens, and H are OTHER. For N and O: donor if at least one
    hydrogen is attached (implicit or explicit); acceptor if the atom is an O
    with charge <= 0, or an N that is neither positively charged nor an
    aromatic N-H (whose lone pair sits in the ring system).
    """
    atom = mol.atoms[idx]
    if atom.symbol not in ("N", "O"):
        return PharmacophoreClass.OTHER
    has_h = mol.total_h_count(idx) >= 1
    donor = has_h
    if atom.symbol == "O":
        acceptor = atom.charge <= 0
    else:
        acceptor = atom.charge <= 0 and not (atom.aromatic and has_h)
    if donor and acceptor:
        return PharmacophoreClass.HBD_HBA
    if donor:
        return PharmacophoreClass.HBD
    if acceptor:
        return PharmacophoreClass.HBA
    return PharmacophoreClass.OTHER


def heavy_atom_view(mol: Molecule) -> tuple[Molecule, list[int]]:
    """Molecule with explicit H atoms folded into their neighbor's H count.

    Returns the heavy-atom molecule and the list mapping its atom indices back
    to indices in the input. Isolated H atoms (no heavy neighbor) are rejected.
    """
    keep = [i for i, a in enumerate(mol.atoms) if a.symbol != "H"]
    if len(keep) == mol.n_atoms:
        return mol, keep
    remap = {old: new for new, old in enumerate(keep)}
    extra_h = [0] * len(keep)
    for i, atom in enumerate(mol.atoms):
        if atom.symbol != "H":
            continue
        heavy = [v for v in mol.neighbors(i) if mol.atoms[v].symbol != "H"]
        if len(heavy) != 1:
            raise MolError(f"hydrogen atom {i} has no unique heavy neighbor")
        extra_h[remap[heavy[0]]] += 1
    atoms = []
    for new, old in enumerate(keep):
        a = mol.atoms[old]
        if extra_h[new]:
            # Folding H atoms pins the hydrogen count, so the atom becomes
            # bracket-style carrying the full explicit total.
            atoms.append(Atom(a.symbol, a.position, a.aromatic, a.charge,
                              explicit_h=mol.total_h_count(old), bracketed=True,
                              stereo=a.stereo))
        else:
            atoms.append(a)
    bonds = [Bond(remap[b.a], remap[b.b], b.order, b.stereo)
             for b in mol.bonds
             if mol.atoms[b.a].symbol != "H" and mol.atoms[b.b].symbol != "H"]
    return Molecule(atoms, bonds, mol.name), keep
