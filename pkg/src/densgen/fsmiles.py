"""Fragment-SMILES sequences.

Molecules are cut at single acyclic bonds touching a ring, except where the
cut would strand a fragment with fewer than three heavy atoms. Fragments are
rendered as standard SMILES with ring-size-suffixed atom tokens, cut bonds
marked by star tokens, and fragments separated by ``sep_0``. Reattachment and
backward ancestor tracing both follow most-recent-unconsumed star-slot (stack)
discipline.
"""

from __future__ import annotations

from dataclasses import dataclass

from .mol import Atom, Bond, BondOrder, Molecule, heavy_atom_view, ring_bond_flags, smallest_ring_sizes
from .smiles import SmilesError, parse_smiles

# The fixed token list. "+_0" sits where the suffix pattern suggests "o_10";
# it is kept verbatim (it doubles as the charge token) and "o_10" is admitted
# as an extra entry at the end.
_BASE_TOKENS = [
    "pad_0", "start_0", "end_0", "sep_0",
    "C_0", "C_5", "C_6", "C_10", "C_11", "C_12",
    "c_0", "c_5", "c_6", "c_10", "c_11", "c_12",
    "N_0", "N_5", "N_6", "N_10", "N_11", "N_12",
    "n_0", "n_5", "n_6", "n_10", "n_11", "n_12",
    "S_0",
    "s_0", "s_5", "s_6", "s_10", "s_11", "s_12",
    "O_0", "O_5", "O_6", "O_10", "O_11", "O_12",
    "o_0", "o_5", "o_6", "+_0", "o_11", "o_12",
    "F_0",
    "Cl_0",
    "[nH]_0", "[nH]_5", "[nH]_6",
    "[nH]_10", "[nH]_11", "[nH]_12",
    "Br_0",
    "/_0", "\\_0", "@_0", "@@_0", "H_0",
    "1_0", "2_0", "3_0", "4_0", "5_0", "6_0",
    "#_0", "=_0", "-_0", "(_0", ")_0",
    "[_0", "]_0", "[*]_0", "([*])_0",
]
TOKENS: tuple[str, ...] = tuple(_BASE_TOKENS + ["o_10"])

_CONTROL = {"pad_0", "start_0", "end_0", "sep_0"}
_ATOM_BASES = {"C", "c", "N", "n", "S", "s", "O", "o", "F", "Cl", "Br", "[nH]"}


class FsmilesError(ValueError):
    """Sequence-level error, tagged with the offending token position."""

    def __init__(self, message: str, position: int | None = None):
        if position is not None:
            message = f"{message} (token {position})"
        super().__init__(message)
        self.position = position


class Vocab:
    """Bijective token <-> id table; pad_0 is id 0."""

    def __init__(self, tokens: tuple[str, ...] = TOKENS):
        self.tokens = tokens
        self.ids = {t: i for i, t in enumerate(tokens)}
        if len(self.ids) != len(tokens):
            raise ValueError("duplicate tokens in vocabulary")
        if self.ids["pad_0"] != 0:
            raise ValueError("pad_0 must have id 0")

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.ids

    def id_of(self, token: str) -> int:
        try:
            return self.ids[token]
        except KeyError:
            raise FsmilesError(f"token {token!r} not in vocabulary") from None

    def token_of(self, idx: int) -> str:
        if not 0 <= idx < len(self.tokens):
            raise FsmilesError(f"token id {idx} out of range")
        return self.tokens[idx]

    @staticmethod
    def base(token: str) -> str:
        return token.rsplit("_", 1)[0]

    @classmethod
    def kind(cls, token: str) -> str:
        if token in _CONTROL:
            return "control"
        if cls.base(token) in _ATOM_BASES:
            return "atom"
        return "structural"


VOCAB = Vocab()

PAD, START, END, SEP = (VOCAB.id_of(t) for t in ("pad_0", "start_0", "end_0", "sep_0"))


@dataclass(frozen=True)
class TokenEvent:
    token: str
    token_id: int
    kind: str
    atom_index: int | None = None

    def __post_init__(self):
        if (self.kind == "atom") != (self.atom_index is not None):
            raise FsmilesError("atom_index present iff kind is atom")


@dataclass(frozen=True)
class AncestorIndices:
    """Sequence positions of the first/second/third reference atoms."""

    r1: int | None = None
    r2: int | None = None
    r3: int | None = None

    def present(self) -> tuple[int, ...]:
        return tuple(r for r in (self.r1, self.r2, self.r3) if r is not None)


@dataclass(frozen=True)
class FragmentDecomposition:
    fragments: tuple[tuple[int, ...], ...]       # atom-index sets, partitioning
    cut_bonds: tuple[Bond, ...]
    attachment_pairs: tuple[tuple[int, int], ...]  # (fragment index, atom index) per slot

    def fragment_of(self, atom: int) -> int:
        for fi, frag in enumerate(self.fragments):
            if atom in frag:
                return fi
        raise KeyError(atom)


def _ring_suffix(size: int) -> int:
    if size == 0:
        return 0
    return min(max(size, 5), 12)


def atom_token_name(symbol: str, aromatic: bool, ring_size: int,
                    as_nh: bool = False) -> str:
    """Vocabulary token for an atom; suffixes missing from the table fall to 0."""
    base = "[nH]" if as_nh else (symbol.lower() if aromatic else symbol)
    suffix = _ring_suffix(ring_size)
    candidate = f"{base}_{suffix}"
    return candidate if candidate in VOCAB else f"{base}_0"


def fragment(mol: Molecule) -> FragmentDecomposition:
    """Cut single acyclic bonds that touch a ring, keeping fragments >= 3 atoms.

    Candidates are tried in ascending (a, b) order; a cut is kept only if,
    together with all previously kept cuts, no fragment falls below three
    heavy atoms.
    """
    if not mol.is_connected():
        raise FsmilesError("fragmentation needs a connected molecule")
    ring_flags = ring_bond_flags(mol)
    ring_sizes = smallest_ring_sizes(mol)
    candidates = sorted(
        (b for b, in_ring in zip(mol.bonds, ring_flags)
         if b.order is BondOrder.SINGLE and not in_ring
         and (ring_sizes[b.a] > 0 or ring_sizes[b.b] > 0)),
        key=lambda b: (min(b.a, b.b), max(b.a, b.b)))

    kept: list[Bond] = []
    for cand in candidates:
        trial = set(id(b) for b in kept) | {id(cand)}
        if min(len(c) for c in _components(mol, trial)) >= 3:
            kept.append(cand)

    comps = _components(mol, set(id(b) for b in kept))
    comps.sort(key=min)
    fragments = tuple(tuple(sorted(c)) for c in comps)
    frag_of = {}
    for fi, frag in enumerate(fragments):
        for a in frag:
            frag_of[a] = fi
    pairs = []
    for bond in kept:
        pairs.append((frag_of[bond.a], bond.a))
        pairs.append((frag_of[bond.b], bond.b))
    return FragmentDecomposition(fragments, tuple(kept), tuple(pairs))


def _components(mol: Molecule, removed: set[int]) -> list[list[int]]:
    seen = [False] * mol.n_atoms
    comps = []
    for start in range(mol.n_atoms):
        if seen[start]:
            continue
        comp = [start]
        seen[start] = True
        stack = [start]
        while stack:
            u = stack.pop()
            for bond in mol.bonds_of(u):
                if id(bond) in removed:
                    continue
                v = bond.other(u)
                if not seen[v]:
                    seen[v] = True
                    comp.append(v)
                    stack.append(v)
        comps.append(comp)
    return comps


def tokenize(mol: Molecule) -> list[TokenEvent]:
    """Token sequence start_0 ... end_0 for a connected molecule.

    Explicit hydrogen atoms are folded into their heavy neighbor. Fragments
    are emitted depth-first from the one containing atom 0; each cut bond
    leaves a star marker on the parent side and the child fragment begins at
    the attached atom, so reattachment follows stack order. ``atom_index``
    on atom events refers to the input molecule.
    """
    heavy, back_map = heavy_atom_view(mol)
    if heavy.n_atoms == 0:
        raise FsmilesError("no heavy atoms to tokenize")
    for atom in heavy.atoms:
        if atom.symbol == "*":
            raise FsmilesError("cannot tokenize a wildcard atom")
    decomp = fragment(heavy)
    ring_sizes = smallest_ring_sizes(heavy)

    # stubs[atom] = sorted list of (neighbor across the cut, cut key)
    stubs: dict[int, list[int]] = {}
    for bond in decomp.cut_bonds:
        stubs.setdefault(bond.a, []).append(bond.b)
        stubs.setdefault(bond.b, []).append(bond.a)
    for lst in stubs.values():
        lst.sort()

    events: list[TokenEvent] = [_make_event("start_0")]
    pending: list[tuple[int, int]] = []  # (child entry atom, parent-side atom), LIFO

    def emit_fragment(entry: int, parent: int | None):
        frag = decomp.fragments[decomp.fragment_of(entry)]
        frag_set = set(frag)
        in_frag = {u: [b for b in heavy.bonds_of(u) if b.other(u) in frag_set]
                   for u in frag}
        ring_in_frag = {u: {b.other(u) for b in in_frag[u]
                            if _bond_in_cycle(heavy, b, frag_set)} for u in frag}

        # Pass 1: spanning tree (ring bonds first) and back edges.
        order: list[int] = []
        children: dict[int, list[int]] = {u: [] for u in frag}
        back: list[tuple[int, int]] = []
        visited: set[int] = set()
        done_edges: set[tuple[int, int]] = set()

        def walk(u: int):
            visited.add(u)
            order.append(u)
            neigh = sorted((b.other(u) for b in in_frag[u]),
                           key=lambda v: (v not in ring_in_frag[u], v))
            for v in neigh:
                key = (min(u, v), max(u, v))
                if key in done_edges:
                    continue
                done_edges.add(key)
                if v in visited:
                    back.append((v, u))
                else:
                    children[u].append(v)
                    walk(v)

        walk(entry)

        rank = {a: r for r, a in enumerate(order)}
        free = list(range(1, 7))
        opens: dict[int, list[tuple[int, int]]] = {}
        closes: dict[int, list[tuple[int, int]]] = {}
        for a, b in back:
            first, second = (a, b) if rank[a] < rank[b] else (b, a)
            if not free:
                raise FsmilesError("more than 6 concurrently open ring closures")
            d = free.pop(0)
            opens.setdefault(first, []).append((d, second))
            closes.setdefault(second, []).append((d, first))

        def bond_tokens(a: int, b: int) -> list[str]:
            bond = heavy.bond_between(a, b)
            if bond.stereo:
                return [f"{bond.stereo}_0"]
            if bond.order is BondOrder.DOUBLE:
                return ["=_0"]
            if bond.order is BondOrder.TRIPLE:
                return ["#_0"]
            if (bond.order is BondOrder.SINGLE
                    and heavy.atoms[a].aromatic and heavy.atoms[b].aromatic):
                return ["-_0"]
            return []

        def emit_atom(u: int):
            for t in _atom_event_tokens(heavy, u, ring_sizes[u], back_map):
                events.append(t)
            for d, partner in opens.get(u, []):
                for t in bond_tokens(u, partner):
                    events.append(_make_event(t))
                events.append(_make_event(f"{d}_0"))
            for d, partner in closes.get(u, []):
                for t in bond_tokens(partner, u):
                    events.append(_make_event(t))
                events.append(_make_event(f"{d}_0"))
                free.append(d)
            atom_stubs = list(stubs.get(u, []))
            if parent is not None and u == entry:
                # The slot pairing with the parent must be this fragment's
                # first star, so it is emitted before everything else.
                atom_stubs.remove(parent)
                atom_stubs.insert(0, parent)
            kids = children[u]
            for s, other in enumerate(atom_stubs):
                is_parent_slot = parent is not None and u == entry and s == 0
                in_chain = not kids and s == len(atom_stubs) - 1
                events.append(_make_event("[*]_0" if in_chain else "([*])_0"))
                if not is_parent_slot:
                    pending.append((other, u))
            for k, v in enumerate(kids):
                last = k == len(kids) - 1
                if not last:
                    events.append(_make_event("(_0"))
                for t in bond_tokens(u, v):
                    events.append(_make_event(t))
                emit_atom(v)
                if not last:
                    events.append(_make_event(")_0"))

        emit_atom(entry)

    emit_fragment(0, parent=None)
    while pending:
        child, parent_atom = pending.pop()
        events.append(_make_event("sep_0"))
        emit_fragment(child, parent=parent_atom)
    events.append(_make_event("end_0"))
    return events


def _bond_in_cycle(mol: Molecule, bond: Bond, scope: set[int]) -> bool:
    # Is this bond on a cycle inside the induced subgraph `scope`?
    target = bond.other(bond.a)
    seen = {bond.a}
    stack = [bond.a]
    while stack:
        u = stack.pop()
        for b in mol.bonds_of(u):
            if b is bond:
                continue
            v = b.other(u)
            if v in scope and v not in seen:
                if v == target:
                    return True
                seen.add(v)
                stack.append(v)
    return False


def _make_event(token: str) -> TokenEvent:
    return TokenEvent(token, VOCAB.id_of(token), Vocab.kind(token))


def _atom_event_tokens(mol: Molecule, idx: int, ring_size: int,
                       back_map: list[int]) -> list[TokenEvent]:
    """Tokens for one atom: a bare suffixed token or a bracket expression."""
    atom = mol.atoms[idx]
    orig = back_map[idx]
    h = atom.explicit_h if atom.bracketed else 0
    total_h = mol.total_h_count(idx)
    if (atom.aromatic and atom.symbol == "N" and total_h >= 1
            and atom.charge == 0 and atom.stereo is None):
        name = atom_token_name(atom.symbol, True, ring_size, as_nh=True)
        return [TokenEvent(name, VOCAB.id_of(name), "atom", orig)]

    name = atom_token_name(atom.symbol, atom.aromatic, ring_size)
    core = TokenEvent(name, VOCAB.id_of(name), "atom", orig)
    plain = not atom.bracketed and atom.charge == 0 and atom.stereo is None
    if plain:
        return [core]

    out = [_make_event("[_0"), core]
    if atom.stereo == "@":
        out.append(_make_event("@_0"))
    elif atom.stereo == "@@":
        out.append(_make_event("@@_0"))
    if h >= 1:
        out.append(_make_event("H_0"))
        if h > 1:
            if h > 6:
                raise FsmilesError(f"hydrogen count {h} beyond digit tokens")
            out.append(_make_event(f"{h}_0"))
    if atom.charge:
        sign = "+_0" if atom.charge > 0 else "-_0"
        for _ in range(abs(atom.charge)):
            out.append(_make_event(sign))
    out.append(_make_event("]_0"))
    return out


def detokenize(events: list[TokenEvent]) -> Molecule:
    """Rebuild the molecular graph from a token sequence.

    Each fragment is re-parsed as SMILES (with [*] slots); after each sep_0
    the new fragment's first slot bonds to the most recent unconsumed slot of
    the fragments before it.
    """
    if not events or events[0].token != "start_0":
        raise FsmilesError("sequence must start with start_0", 0)
    if events[-1].token != "end_0":
        raise FsmilesError("sequence must end with end_0", len(events) - 1)

    runs: list[tuple[int, list[TokenEvent]]] = []
    current: list[TokenEvent] = []
    start_pos = 1
    for pos, ev in enumerate(events[1:-1], start=1):
        if ev.token == "sep_0":
            runs.append((start_pos, current))
            current = []
            start_pos = pos + 1
        elif ev.kind == "control":
            raise FsmilesError(f"unexpected control token {ev.token}", pos)
        else:
            current.append(ev)
    runs.append((start_pos, current))

    atoms: list[Atom] = []
    bonds: list[Bond] = []
    slot_stack: list[int] = []  # merged indices of live star atoms
    star_atoms: list[int] = []

    for k, (run_start, run) in enumerate(runs):
        if not run:
            raise FsmilesError("empty fragment", run_start)
        text, offsets = _run_to_smiles(run)
        try:
            frag = parse_smiles(text)
        except SmilesError as exc:
            pos = offsets[min(exc.offset, len(offsets) - 1)] + run_start
            raise FsmilesError(f"unparseable fragment body: {exc}", pos) from None
        base = len(atoms)
        atoms.extend(frag.atoms)
        bonds.extend(Bond(b.a + base, b.b + base, b.order, b.stereo) for b in frag.bonds)
        frag_stars = [base + i for i, a in enumerate(frag.atoms) if a.symbol == "*"]
        if k > 0:
            if not frag_stars:
                raise FsmilesError("fragment after sep_0 has no star slot", run_start)
            if not slot_stack:
                raise FsmilesError("no unconsumed star slot to attach to", run_start)
            _join_slots(atoms, bonds, slot_stack.pop(), frag_stars.pop(0))
        slot_stack.extend(frag_stars)
        star_atoms.extend(frag_stars)

    if slot_stack:
        raise FsmilesError("dangling star slot", _star_position(events, len(slot_stack)))

    return _drop_stars(atoms, bonds)


def _star_position(events: list[TokenEvent], remaining: int) -> int:
    positions = [i for i, e in enumerate(events) if e.token in ("[*]_0", "([*])_0")]
    return positions[-1] if positions else len(events) - 1


def _run_to_smiles(run: list[TokenEvent]) -> tuple[str, list[int]]:
    """Fragment tokens -> SMILES text plus char-offset -> run-index map."""
    chars: list[str] = []
    offsets: list[int] = []
    for i, ev in enumerate(run):
        piece = Vocab.base(ev.token)
        chars.append(piece)
        offsets.extend([i] * len(piece))
    return "".join(chars), offsets


def _join_slots(atoms: list[Atom], bonds: list[Bond], slot_a: int, slot_b: int):
    na = _star_neighbor(atoms, bonds, slot_a)
    nb = _star_neighbor(atoms, bonds, slot_b)
    bonds.append(Bond(na, nb, BondOrder.SINGLE))
    # mark consumed by re-pointing the star bond lookup later; stars removed at the end


def _star_neighbor(atoms: list[Atom], bonds: list[Bond], star: int) -> int:
    partners = [b.other(star) for b in bonds if star in (b.a, b.b)]
    partners = [p for p in partners if atoms[p].symbol != "*"]
    if len(partners) != 1:
        raise FsmilesError(f"star slot with {len(partners)} heavy neighbors")
    return partners[0]


def _drop_stars(atoms: list[Atom], bonds: list[Bond]) -> Molecule:
    keep = [i for i, a in enumerate(atoms) if a.symbol != "*"]
    remap = {old: new for new, old in enumerate(keep)}
    new_atoms = [atoms[i] for i in keep]
    new_bonds = [Bond(remap[b.a], remap[b.b], b.order, b.stereo)
                 for b in bonds
                 if atoms[b.a].symbol != "*" and atoms[b.b].symbol != "*"]
    return Molecule(new_atoms, new_bonds)


def _sep_attachments(events: list[TokenEvent]) -> dict[int, int | None]:
    """Per sep_0 position, the star slot its fragment consumes (stack top).

    The slot is popped at the sep itself so mid-generation sequences resolve
    before the new fragment's own star token exists; the fragment's first
    star afterwards is the matching half of the pair and is not pushed.
    """
    attach: dict[int, int | None] = {}
    stack: list[int] = []
    awaiting_first_star = False
    for pos, ev in enumerate(events):
        if ev.token == "sep_0":
            attach[pos] = stack.pop() if stack else None
            awaiting_first_star = True
        elif ev.token in ("[*]_0", "([*])_0"):
            if awaiting_first_star:
                awaiting_first_star = False
            else:
                stack.append(pos)
    return attach


def trace_ancestors(events: list[TokenEvent], i: int) -> AncestorIndices:
    """Reference-atom positions r1 > r2 > r3 for the atom event at ``i``.

    The backward scan skips balanced branch spans; crossing a sep_0 jumps to
    the attachment atom of the star slot the fragment consumed (stack
    discipline). Ancestors are absent once the scan runs out of atoms.
    """
    if not 0 <= i < len(events) or events[i].kind != "atom":
        raise FsmilesError(f"position {i} is not an atom event", i)
    attachments = _sep_attachments(events)
    r1 = _scan_back(events, i, attachments)
    r2 = _scan_back(events, r1, attachments) if r1 is not None else None
    r3 = _scan_back(events, r2, attachments) if r2 is not None else None
    return AncestorIndices(r1, r2, r3)


def _scan_back(events: list[TokenEvent], start: int,
               attachments: dict[int, int | None]) -> int | None:
    pos = start - 1
    depth = 0
    while pos >= 0:
        ev = events[pos]
        if ev.token == ")_0":
            depth += 1
        elif ev.token == "(_0":
            if depth > 0:
                depth -= 1
            # At depth 0 the scan is leaving a branch it started inside of;
            # the attachment atom comes just before, so keep going.
        elif ev.token == "sep_0":
            if depth > 0:
                raise FsmilesError("unbalanced parentheses during ancestor scan", pos)
            star = attachments.get(pos)
            if star is None:
                raise FsmilesError("fragment boundary without a star slot to attach", pos)
            attach = _scan_back(events, star, attachments)
            if attach is None:
                raise FsmilesError("star slot has no attachment atom", star)
            return attach
        elif ev.kind == "atom" and depth == 0:
            return pos
        elif ev.token == "start_0":
            if depth > 0:
                raise FsmilesError("unbalanced parentheses during ancestor scan", pos)
            return None
        pos -= 1
    if depth > 0:
        raise FsmilesError("unbalanced parentheses during ancestor scan", start)
    return None
