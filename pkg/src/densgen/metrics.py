"""Circular fingerprints, Tanimoto similarity, and recovery/diversity stats.

Fingerprints are unfolded sets of 32-bit FNV-1a identifiers over canonical
byte encodings of iteratively hashed atom neighborhoods (radius 2 by default,
i.e. diameter 4), so identical graphs give identical bit sets across runs
and platforms.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .mol import BondOrder, Molecule

_FNV_OFFSET = 0x811C9DC5
_FNV_PRIME = 0x01000193


def _fnv1a(data: bytes) -> int:
    h = _FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * _FNV_PRIME) & 0xFFFFFFFF
    return h


@dataclass(frozen=True)
class Fingerprint:
    bits: frozenset[int]
    radius: int


_ORDER_CODE = {BondOrder.SINGLE: 1, BondOrder.DOUBLE: 2,
               BondOrder.TRIPLE: 3, BondOrder.AROMATIC: 4}


def fingerprint(mol: Molecule, radius: int = 2) -> Fingerprint:
    """Hash each heavy atom's environment out to ``radius`` bonds.

    Round 0 encodes (element, heavy degree, charge, aromatic, attached H);
    round r hashes the atom's previous id with the sorted list of
    (bond order, neighbor previous id) pairs. All rounds contribute bits.
    """
    heavy = [i for i, a in enumerate(mol.atoms) if a.symbol != "H"]
    ids: dict[int, int] = {}
    for i in heavy:
        a = mol.atoms[i]
        blob = (f"I|{a.symbol}|{mol.heavy_degree(i)}|{a.charge}|"
                f"{int(a.aromatic)}|{mol.total_h_count(i)}").encode()
        ids[i] = _fnv1a(blob)
    bits = set(ids.values())
    for _ in range(radius):
        nxt: dict[int, int] = {}
        for i in heavy:
            pairs = sorted(
                (_ORDER_CODE[b.order], ids[b.other(i)])
                for b in mol.bonds_of(i) if mol.atoms[b.other(i)].symbol != "H")
            blob = f"R|{ids[i]}|" + "|".join(f"{o}:{n}" for o, n in pairs)
            nxt[i] = _fnv1a(blob.encode())
        ids = nxt
        bits.update(ids.values())
    return Fingerprint(frozenset(bits), radius)


def tanimoto(a: Fingerprint, b: Fingerprint) -> float:
    """|intersection| / |union|; 1.0 when both bit sets are empty."""
    if a.radius != b.radius:
        raise ValueError(f"fingerprint radius mismatch: {a.radius} vs {b.radius}")
    union = a.bits | b.bits
    if not union:
        return 1.0
    return len(a.bits & b.bits) / len(union)


@dataclass(frozen=True)
class RecoveryReport:
    recovered: bool
    div: float
    mean_mw: float
    pairs: tuple[tuple[float, ...], ...]  # generated x references

    def to_json(self) -> str:
        return json.dumps({
            "recovered": self.recovered,
            "div": self.div,
            "mean_mw": self.mean_mw,
            "pairs": [list(row) for row in self.pairs],
        }, indent=2) + "\n"


def recovery_and_diversity(generated: list[Molecule], references: list[Molecule],
                           radius: int = 2, threshold: float = 0.5) -> RecoveryReport:
    """Pairwise Tanimoto matrix, strict-threshold recovery, and Div.

    ``recovered`` is true iff some pair is strictly above ``threshold``.
    Div is the mean over generated molecules of their best reference match.
    """
    if not generated or not references:
        raise ValueError("generated and reference lists must be non-empty")
    fg = [fingerprint(m, radius) for m in generated]
    fr = [fingerprint(m, radius) for m in references]
    pairs = tuple(tuple(tanimoto(g, r) for r in fr) for g in fg)
    best = [max(row) for row in pairs]
    recovered = any(v > threshold for row in pairs for v in row)
    mean_mw = sum(m.molecular_weight() for m in generated) / len(generated)
    return RecoveryReport(recovered, sum(best) / len(best), mean_mw, pairs)
