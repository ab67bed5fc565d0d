"""SDF (MDL MOL V2000 subset) reading and writing.

Fixed-column counts/atom/bond blocks, bond order 4 mapped to aromatic,
optional ``M  CHG`` lines for formal charges, records terminated by
``M  END`` and ``$$$$``. Coordinates carry the format's 4 decimal places.
"""

from __future__ import annotations

import numpy as np

from .mol import ATOMIC_NUMBER, Atom, Bond, BondOrder, Molecule

_ORDER_FROM_SDF = {1: BondOrder.SINGLE, 2: BondOrder.DOUBLE,
                   3: BondOrder.TRIPLE, 4: BondOrder.AROMATIC}
_ORDER_TO_SDF = {v: k for k, v in _ORDER_FROM_SDF.items()}


class SdfError(ValueError):
    """Malformed SDF record, tagged with the record index."""

    def __init__(self, message: str, record: int):
        super().__init__(f"record {record}: {message}")
        self.record = record


def read_sdf(data: str | bytes) -> list[Molecule]:
    """Parse every record of the SDF text into molecules."""
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    molecules = []
    record_lines: list[str] = []
    index = 0
    for line in data.splitlines():
        if line.startswith("$$$$"):
            if any(x.strip() for x in record_lines):
                molecules.append(_parse_record(record_lines, index))
                index += 1
            record_lines = []
        else:
            record_lines.append(line)
    if any(x.strip() for x in record_lines):
        molecules.append(_parse_record(record_lines, index))
    return molecules


def _parse_record(lines: list[str], index: int) -> Molecule:
    if len(lines) < 4:
        raise SdfError("record shorter than header + counts line", index)
    name = lines[0].strip()
    counts = lines[3]
    try:
        n_atoms = int(counts[0:3])
        n_bonds = int(counts[3:6])
    except ValueError:
        raise SdfError(f"malformed counts line {counts!r}", index) from None
    if n_atoms < 0 or len(lines) < 4 + n_atoms + n_bonds:
        raise SdfError("counts line exceeds record size", index)

    raw_atoms: list[tuple[str, np.ndarray]] = []
    for line in lines[4:4 + n_atoms]:
        try:
            x = float(line[0:10])
            y = float(line[10:20])
            z = float(line[20:30])
        except ValueError:
            raise SdfError(f"malformed atom line {line!r}", index) from None
        symbol = line[31:34].strip()
        if symbol not in ATOMIC_NUMBER or symbol == "*":
            raise SdfError(f"unknown element {symbol!r}", index)
        raw_atoms.append((symbol, np.array([x, y, z])))

    bonds = []
    aromatic_atoms: set[int] = set()
    for line in lines[4 + n_atoms:4 + n_atoms + n_bonds]:
        try:
            a = int(line[0:3]) - 1
            b = int(line[3:6]) - 1
            code = int(line[6:9])
        except ValueError:
            raise SdfError(f"malformed bond line {line!r}", index) from None
        if not (0 <= a < n_atoms and 0 <= b < n_atoms):
            raise SdfError(f"bond index out of range in {line!r}", index)
        if code not in _ORDER_FROM_SDF:
            raise SdfError(f"unsupported bond order {code}", index)
        order = _ORDER_FROM_SDF[code]
        if order is BondOrder.AROMATIC:
            aromatic_atoms.update((a, b))
        bonds.append(Bond(a, b, order))

    charges: dict[int, int] = {}
    for line in lines[4 + n_atoms + n_bonds:]:
        if line.startswith("M  CHG"):
            fields = line.split()
            count = int(fields[2])
            for k in range(count):
                charges[int(fields[3 + 2 * k]) - 1] = int(fields[4 + 2 * k])
        elif line.startswith("M  END"):
            break

    atoms = [Atom(sym, pos, aromatic=(i in aromatic_atoms), charge=charges.get(i, 0))
             for i, (sym, pos) in enumerate(raw_atoms)]
    try:
        return Molecule(atoms, bonds, name)
    except ValueError as exc:
        raise SdfError(str(exc), index) from None


def write_sdf(mols: list[Molecule]) -> str:
    """Serialize molecules into V2000 SDF text."""
    blocks = []
    for mol in mols:
        lines = [mol.name, "  densgen", ""]
        lines.append(f"{mol.n_atoms:3d}{len(mol.bonds):3d}  0  0  0  0  0  0  0  0999 V2000")
        for atom in mol.atoms:
            x, y, z = atom.position
            lines.append(f"{x:10.4f}{y:10.4f}{z:10.4f} {atom.symbol:<3s} 0  0  0  0  0  0  0  0  0  0  0  0")
        for bond in mol.bonds:
            lines.append(f"{bond.a + 1:3d}{bond.b + 1:3d}{_ORDER_TO_SDF[bond.order]:3d}  0")
        charged = [(i + 1, a.charge) for i, a in enumerate(mol.atoms) if a.charge]
        for start in range(0, len(charged), 8):
            chunk = charged[start:start + 8]
            entry = "".join(f" {i:3d} {c:3d}" for i, c in chunk)
            lines.append(f"M  CHG{len(chunk):3d}{entry}")
        lines.append("M  END")
        lines.append("$$$$")
        blocks.append("\n".join(lines))
    return "\n".join(blocks) + "\n" if blocks else ""
