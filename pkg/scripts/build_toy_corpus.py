"""Build the bundled 20-molecule 3D toy corpus (src/densgen/data/toy20.sdf).

Coordinates come from a deterministic internal-coordinate chain walk:
standard bond lengths, sp2/sp3 displacement angles, and a fixed dihedral
candidate cycle with collision back-off. Ring-closing bonds are not
geometrically relaxed; the pipeline only needs consistent, non-degenerate
positions, not physical conformers.

Run from the repository root:  python3 scripts/build_toy_corpus.py
"""

from __future__ import annotations

import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from densgen.geom import reconstruct_position, _synthetic_v3  # noqa: E402
from densgen.mol import BondOrder, Molecule  # noqa: E402
from densgen.sdf import write_sdf  # noqa: E402
from densgen.smiles import parse_smiles  # noqa: E402

TOY_SMILES = [
    ("CC(=O)Oc1ccccc1C(=O)O", "aspirin"),
    ("CC(=O)Nc1ccc(O)cc1", "paracetamol"),
    ("Cn1cnc2c1c(=O)n(C)c(=O)n2C", "caffeine"),
    ("CN1CCCC1c1cccnc1", "nicotine"),
    ("NC(=O)c1ccncc1", "isonicotinamide"),
    ("OC(=O)c1ccccc1O", "salicylic_acid"),
    ("NCCc1c[nH]cn1", "histamine"),
    ("OCC1OC(O)C(O)C(O)C1O", "glucose"),
    ("CC(C)Cc1ccc(C)cc1", "isobutyltoluene"),
    ("OC(=O)C1CCCN1", "proline"),
    ("NC(Cc1ccccc1)C(=O)O", "phenylalanine"),
    ("Clc1ccc(CN)cc1", "chlorobenzylamine"),
    ("Fc1ccc(C(N)=O)cc1", "fluorobenzamide"),
    ("CSc1ccccc1", "thioanisole"),
    ("OCc1ccncc1", "pyridylmethanol"),
    ("CC(N)Cc1ccccc1", "amphetamine"),
    ("O=C1CCCCC1", "cyclohexanone"),
    ("c1ccc2[nH]ccc2c1", "indole"),
    ("CCOC(=O)CN", "ethyl_glycinate"),
    ("Brc1ccccc1O", "bromophenol"),
]

BOND_LENGTH = {BondOrder.SINGLE: 1.50, BondOrder.DOUBLE: 1.35,
               BondOrder.TRIPLE: 1.20, BondOrder.AROMATIC: 1.40}
# Dihedral candidates tried in order until the new atom clears its neighbors.
PHI_CYCLE = [180.0, 60.0, 300.0, 120.0, 240.0, 90.0, 270.0, 30.0, 330.0, 150.0, 210.0, 0.0]
MIN_SEPARATION = 0.85


def displacement_angle(mol: Molecule, parent: int) -> float:
    # Angle between successive displacements: 60 deg for sp2-ish centers
    # (120 deg bond angle), 70.5 deg for sp3 (109.5 deg bond angle).
    atom = mol.atoms[parent]
    sp2 = atom.aromatic or any(
        b.order in (BondOrder.DOUBLE, BondOrder.AROMATIC)
        for b in mol.bonds_of(parent))
    return 60.0 if sp2 else 70.5


def embed(mol: Molecule) -> Molecule:
    pos = np.zeros((mol.n_atoms, 3))
    placed = [False] * mol.n_atoms
    parent = [-1] * mol.n_atoms

    def chain(idx: int) -> list[int]:
        out = []
        cur = idx
        while cur != -1 and len(out) < 3:
            out.append(cur)
            cur = parent[cur]
        return out

    def place(idx: int, from_atom: int):
        bond = mol.bond_between(from_atom, idx)
        length = BOND_LENGTH[bond.order]
        anchors = chain(from_atom)
        if len(anchors) == 1:
            # No grandparent through the tree; steer off any placed neighbor.
            sibs = [v for v in mol.neighbors(from_atom) if placed[v] and v != idx]
            if sibs:
                anchors = [from_atom, sibs[0]]
        if len(anchors) == 1:
            pos[idx] = pos[from_atom] + np.array([length, 0.0, 0.0])
        else:
            v1 = pos[anchors[0]]
            v2 = pos[anchors[1]]
            theta = displacement_angle(mol, from_atom)
            v3 = pos[anchors[2]] if len(anchors) > 2 else _synthetic_v3(v2, v1)
            others = pos[[i for i in range(mol.n_atoms) if placed[i]]]
            for k, phi in enumerate(PHI_CYCLE + [17.0 * j for j in range(1, 41)]):
                th = theta if k < len(PHI_CYCLE) + 15 else min(theta + 20.0, 165.0)
                cand = reconstruct_position(v3, v2, v1, length, th, phi)
                if np.min(np.linalg.norm(others - cand, axis=1)) >= MIN_SEPARATION:
                    pos[idx] = cand
                    break
            else:
                raise RuntimeError(f"could not place atom {idx} without collision")
        placed[idx] = True
        parent[idx] = from_atom

    placed[0] = True
    stack = [0]
    while stack:
        u = stack.pop()
        for v in sorted(mol.neighbors(u), reverse=True):
            if not placed[v]:
                place(v, u)
                stack.append(v)

    atoms = [replace(a, position=pos[i]) for i, a in enumerate(mol.atoms)]
    return Molecule(atoms, mol.bonds, mol.name)


def main():
    out_path = Path(__file__).resolve().parent.parent / "src/densgen/data/toy20.sdf"
    mols = []
    for smi, name in TOY_SMILES:
        mol = parse_smiles(smi)
        mol = Molecule(mol.atoms, mol.bonds, name)
        embedded = embed(mol)
        dists = np.linalg.norm(
            embedded.positions()[:, None, :] - embedded.positions()[None, :, :], axis=2)
        np.fill_diagonal(dists, np.inf)
        assert dists.min() >= 0.8, (name, dists.min())
        mols.append(embedded)
    out_path.write_text(write_sdf(mols))
    print(f"wrote {len(mols)} molecules to {out_path}")


if __name__ == "__main__":
    main()
