"""Molecule + point cloud -> token / lattice / geometry-bin arrays.

The shared lattice frame is centered on the conditioning point cloud (its
arithmetic mean), since at generation time no molecule exists yet. Geometry
bins are measured between dequantized lattice centers, so the targets the
model learns are exactly reproducible by lattice-constrained decoding.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .density import LabeledPointCloud
from .fsmiles import TokenEvent, VOCAB, tokenize, trace_ancestors
from .geom import DiscretizationParams, dequantize_coords, discretize_coords, relative_geometry
from .mol import Molecule

SENTINEL = -1


@dataclass(frozen=True)
class EncodedMolecule:
    """Per-token ids for one molecule sequence (start ... end).

    ``coords`` and ``geom`` carry -1 on non-atom tokens; ``geom`` also
    carries -1 for fields absent on the first atoms of a sequence.
    """

    token_ids: np.ndarray   # (M,) int
    coords: np.ndarray      # (M, 3) int lattice triples or -1
    geom: np.ndarray        # (M, 3) int bins (l, theta, phi) or -1
    center: np.ndarray      # (3,) lattice frame center in angstroms

    def to_json(self) -> str:
        return json.dumps({
            "tokens": [int(t) for t in self.token_ids],
            "coords": [[int(v) for v in row] for row in self.coords],
            "geom": [[int(v) for v in row] for row in self.geom],
        }, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str,
                  center: np.ndarray | None = None) -> "EncodedMolecule":
        data = json.loads(text)
        tokens = np.asarray(data["tokens"], dtype=int)
        coords = np.asarray(data["coords"], dtype=int).reshape(len(tokens), 3)
        geom = np.asarray(data["geom"], dtype=int).reshape(len(tokens), 3)
        c = np.zeros(3) if center is None else np.asarray(center, dtype=float)
        return cls(tokens, coords, geom, c)


def encode_molecule(mol: Molecule, params: DiscretizationParams,
                    center: np.ndarray | None = None,
                    events: list[TokenEvent] | None = None) -> EncodedMolecule:
    """Tokenize and discretize one molecule.

    ``center`` fixes the lattice frame; by default the molecule's own mean
    position is used. Geometry is measured on dequantized lattice centers.
    """
    if events is None:
        events = tokenize(mol)
    positions = mol.positions()
    lattice, used_center, _ = discretize_coords(positions, params, center)
    centers = dequantize_coords(lattice, params, used_center)

    m = len(events)
    token_ids = np.array([e.token_id for e in events], dtype=int)
    coords = np.full((m, 3), SENTINEL, dtype=int)
    geom = np.full((m, 3), SENTINEL, dtype=int)
    for pos, ev in enumerate(events):
        if ev.kind != "atom":
            continue
        coords[pos] = lattice[ev.atom_index]
        anc = trace_ancestors(events, pos)
        if anc.r1 is None:
            continue
        v1 = centers[events[anc.r1].atom_index]
        v2 = centers[events[anc.r2].atom_index] if anc.r2 is not None else None
        v3 = centers[events[anc.r3].atom_index] if anc.r3 is not None else None
        rec = relative_geometry(v3, v2, v1, centers[ev.atom_index], params)
        geom[pos, 0] = rec.l_bin
        if rec.has_theta:
            geom[pos, 1] = rec.theta_bin
        if rec.has_phi:
            geom[pos, 2] = rec.phi_bin
    return EncodedMolecule(token_ids, coords, geom, used_center)


def encode_cloud(cloud: LabeledPointCloud, params: DiscretizationParams,
                 center: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Cloud lattice triples and class ids; frame defaults to the cloud mean.

    Returns (lattice (P,3), class ids (P,), center).
    """
    lattice, used_center, _ = discretize_coords(cloud.positions, params, center)
    classes = np.array([int(c) for c in cloud.classes], dtype=int)
    return lattice, classes, used_center


def training_example(mol: Molecule, cloud: LabeledPointCloud,
                     params: DiscretizationParams) -> dict:
    """Arrays for one training sequence: cloud prefix then molecule tokens.

    Targets at position t describe element t+1. Cloud positions and padding
    are masked everywhere; non-atom tokens are masked on the six geometric
    heads; absent geometry fields (first atoms) are masked on their heads.
    """
    cloud_lat, cloud_cls, center = encode_cloud(cloud, params)
    enc = encode_molecule(mol, params, center=center)
    p = len(cloud_cls)
    m = len(enc.token_ids)
    t = p + m

    coord_ids = np.zeros((t, 3), dtype=int)
    coord_ids[:p] = cloud_lat
    mol_coords = np.where(enc.coords == SENTINEL, 0, enc.coords)
    coord_ids[p:] = mol_coords
    type_ids = np.concatenate([cloud_cls, enc.token_ids])
    is_mol = np.arange(t) >= p

    geom_cols = {"l": 0, "theta": 1, "phi": 2}
    targets = {}
    masks = {}
    next_is_mol = np.zeros(t, dtype=bool)
    next_is_mol[p:t - 1] = True  # predictor positions for molecule elements 1..m-1
    for head in ("token", "x", "y", "z", "l", "theta", "phi"):
        tgt = np.zeros(t, dtype=int)
        msk = np.zeros(t, dtype=bool)
        if head == "token":
            tgt[p:t - 1] = enc.token_ids[1:]
            msk = next_is_mol.copy()
        elif head in ("x", "y", "z"):
            col = {"x": 0, "y": 1, "z": 2}[head]
            vals = enc.coords[1:, col]
            tgt[p:t - 1] = np.where(vals == SENTINEL, 0, vals)
            msk[p:t - 1] = vals != SENTINEL
        else:
            col = geom_cols[head]
            vals = enc.geom[1:, col]
            tgt[p:t - 1] = np.where(vals == SENTINEL, 0, vals)
            msk[p:t - 1] = vals != SENTINEL
        targets[head] = tgt
        masks[head] = msk
    return {"coord_ids": coord_ids, "type_ids": type_ids, "is_molecule": is_mol,
            "targets": targets, "masks": masks, "center": center}
