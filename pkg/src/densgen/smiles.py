"""SMILES subset parser and writer.

Covers organic-subset atoms (C N O S F Cl Br, aromatic c n o s), bracket
atoms with charge / explicit H / chirality, ring-closure digits 1-6, branches,
bond symbols - = #, and the stereo markers / \\ @ @@ (kept as annotations).
Positions of parsed atoms are all zero: the string describes a 2D graph.
"""

from __future__ import annotations

from .mol import ATOMIC_NUMBER, Atom, Bond, BondOrder, Molecule

ORGANIC = {"C", "N", "O", "S", "F", "Cl", "Br"}
AROMATIC_ORGANIC = {"c", "n", "o", "s"}
BRACKET_SYMBOLS = ORGANIC | AROMATIC_ORGANIC | {"H", "*"}
BOND_CHARS = {"-": BondOrder.SINGLE, "=": BondOrder.DOUBLE, "#": BondOrder.TRIPLE}


class SmilesError(ValueError):
    """Syntax error with the character offset where it was detected."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at offset {offset})")
        self.offset = offset


def parse_smiles(text: str) -> Molecule:
    """Parse a SMILES string into a molecular graph with zeroed positions."""
    if not text:
        raise SmilesError("empty SMILES", 0)
    atoms: list[Atom] = []
    bonds: list[Bond] = []
    prev: int | None = None
    branch_stack: list[int | None] = []
    # Open ring digit -> (atom index, pending order, pending stereo, offset).
    rings: dict[int, tuple[int, BondOrder | None, str | None, int]] = {}
    pending_order: BondOrder | None = None
    pending_stereo: str | None = None

    def add_bond(a: int, b: int, order: BondOrder | None, stereo: str | None, offset: int):
        if a == b:
            raise SmilesError("ring closure bonds an atom to itself", offset)
        for bond in bonds:
            if {bond.a, bond.b} == {a, b}:
                raise SmilesError("duplicate bond", offset)
        if order is None:
            both_aromatic = atoms[a].aromatic and atoms[b].aromatic
            order = BondOrder.AROMATIC if both_aromatic else BondOrder.SINGLE
        bonds.append(Bond(a, b, order, stereo))

    def add_atom(atom: Atom, offset: int):
        nonlocal prev, pending_order, pending_stereo
        atoms.append(atom)
        idx = len(atoms) - 1
        if prev is not None:
            add_bond(prev, idx, pending_order, pending_stereo, offset)
        prev = idx
        pending_order = None
        pending_stereo = None

    i = 0
    n = len(text)
    while i < n:
        ch = text[i]
        if ch == "(":
            if prev is None:
                raise SmilesError("branch before any atom", i)
            branch_stack.append(prev)
            i += 1
        elif ch == ")":
            if not branch_stack:
                raise SmilesError("unbalanced ')'", i)
            prev = branch_stack.pop()
            i += 1
        elif ch in BOND_CHARS:
            pending_order = BOND_CHARS[ch]
            i += 1
        elif ch in "/\\":
            pending_order = BondOrder.SINGLE
            pending_stereo = ch
            i += 1
        elif ch.isdigit():
            digit = int(ch)
            if not 1 <= digit <= 6:
                raise SmilesError(f"ring-closure digit {ch} outside 1-6", i)
            if prev is None:
                raise SmilesError("ring closure before any atom", i)
            if digit in rings:
                other, open_order, open_stereo, _ = rings.pop(digit)
                order = pending_order if pending_order is not None else open_order
                if (pending_order is not None and open_order is not None
                        and pending_order is not open_order):
                    raise SmilesError(f"ring bond {digit} annotated inconsistently", i)
                add_bond(other, prev, order, pending_stereo or open_stereo, i)
            else:
                rings[digit] = (prev, pending_order, pending_stereo, i)
            pending_order = None
            pending_stereo = None
            i += 1
        elif ch == "[":
            atom, i = _parse_bracket(text, i)
            add_atom(atom, i - 1)
        elif ch.isupper():
            symbol = ch
            if text[i:i + 2] in ("Cl", "Br"):
                symbol = text[i:i + 2]
            if symbol not in ORGANIC:
                raise SmilesError(f"unknown symbol {symbol!r}", i)
            add_atom(Atom(symbol), i)
            i += len(symbol)
        elif ch in AROMATIC_ORGANIC:
            add_atom(Atom(ch.upper(), aromatic=True), i)
            i += 1
        else:
            raise SmilesError(f"unknown symbol {ch!r}", i)

    if branch_stack:
        raise SmilesError("unbalanced '('", n - 1)
    if rings:
        digit, (_, _, _, offset) = next(iter(rings.items()))
        raise SmilesError(f"unmatched ring-closure digit {digit}", offset)
    if pending_order is not None or pending_stereo is not None:
        raise SmilesError("dangling bond symbol", n - 1)
    return Molecule(atoms, bonds)


def _parse_bracket(text: str, start: int) -> tuple[Atom, int]:
    """Parse ``[...]`` starting at ``start`` (the '['); returns (atom, next index)."""
    end = text.find("]", start)
    if end < 0:
        raise SmilesError("unbalanced '['", start)
    body = text[start + 1:end]
    i = 0

    if not body:
        raise SmilesError("empty bracket atom", start)
    if body[0].isdigit():
        raise SmilesError("isotopes are not supported", start + 1)

    symbol, aromatic = None, False
    if body.startswith("*"):
        symbol = "*"
        i = 1
    else:
        two = body[:2]
        if two in ("Cl", "Br"):
            symbol, i = two, 2
        elif body[0].upper() in ORGANIC or body[0] == "H":
            symbol = body[0].upper()
            aromatic = body[0].islower()
            i = 1
        else:
            raise SmilesError(f"unknown bracket element {body[0]!r}", start + 1)

    stereo = None
    if body[i:i + 2] == "@@":
        stereo, i = "@@", i + 2
    elif body[i:i + 1] == "@":
        stereo, i = "@", i + 1

    h_count = 0
    if body[i:i + 1] == "H" and symbol != "H":
        i += 1
        digits = ""
        while i < len(body) and body[i].isdigit():
            digits += body[i]
            i += 1
        h_count = int(digits) if digits else 1

    charge = 0
    if i < len(body) and body[i] in "+-":
        sign = 1 if body[i] == "+" else -1
        mark = body[i]
        i += 1
        digits = ""
        while i < len(body) and body[i].isdigit():
            digits += body[i]
            i += 1
        if digits:
            charge = sign * int(digits)
        else:
            charge = sign
            while i < len(body) and body[i] == mark:
                charge += sign
                i += 1

    if i != len(body):
        raise SmilesError(f"unexpected {body[i]!r} in bracket atom", start + 1 + i)
    return Atom(symbol, aromatic=aromatic, charge=charge, explicit_h=h_count,
                bracketed=True, stereo=stereo), end + 1


def write_smiles(mol: Molecule) -> str:
    """Emit a SMILES string that re-parses to an isomorphic graph.

    Depth-first from atom 0; ring bonds (spanning-tree back edges) become
    closure digits 1-6, reused after they close.
    """
    if mol.n_atoms == 0:
        raise ValueError("cannot write an empty molecule")
    if not mol.is_connected():
        raise ValueError("cannot write a disconnected molecule")

    # Pass 1: spanning-tree DFS fixing visit order, children, and back edges.
    order: list[int] = []
    children: dict[int, list[int]] = {i: [] for i in range(mol.n_atoms)}
    back_edges: list[tuple[int, int]] = []  # (earlier atom, later atom)
    seen_edges: set[tuple[int, int]] = set()
    visited = [False] * mol.n_atoms

    def dfs(u: int):
        visited[u] = True
        order.append(u)
        for v in sorted(mol.neighbors(u)):
            key = (min(u, v), max(u, v))
            if key in seen_edges:
                continue
            seen_edges.add(key)
            if visited[v]:
                back_edges.append((v, u))
            else:
                children[u].append(v)
                dfs(v)

    dfs(0)

    rank = {a: r for r, a in enumerate(order)}
    opens: dict[int, list[tuple[int, int]]] = {}   # atom -> [(digit, partner)]
    closes: dict[int, list[tuple[int, int]]] = {}
    free_digits = list(range(1, 7))
    close_at: dict[int, list[int]] = {}
    for a, b in back_edges:
        first, second = (a, b) if rank[a] < rank[b] else (b, a)
        if not free_digits:
            raise ValueError("more than 6 concurrently open ring closures")
        digit = free_digits.pop(0)
        opens.setdefault(first, []).append((digit, second))
        closes.setdefault(second, []).append((digit, first))
        close_at.setdefault(second, []).append(digit)

    pieces: list[str] = []

    def bond_token(a: int, b: int) -> str:
        bond = mol.bond_between(a, b)
        assert bond is not None
        if bond.stereo:
            return bond.stereo
        if bond.order is BondOrder.DOUBLE:
            return "="
        if bond.order is BondOrder.TRIPLE:
            return "#"
        if bond.order is BondOrder.SINGLE and mol.atoms[a].aromatic and mol.atoms[b].aromatic:
            return "-"
        return ""

    def emit(u: int):
        pieces.append(_atom_token(mol, u))
        for digit, partner in opens.get(u, []):
            pieces.append(bond_token(u, partner) + str(digit))
        for digit, partner in closes.get(u, []):
            pieces.append(bond_token(partner, u) + str(digit))
            free_digits.append(digit)
        kids = children[u]
        for k, v in enumerate(kids):
            last = k == len(kids) - 1
            if not last:
                pieces.append("(")
            pieces.append(bond_token(u, v))
            emit(v)
            if not last:
                pieces.append(")")

    emit(0)
    return "".join(pieces)


def _atom_token(mol: Molecule, idx: int) -> str:
    atom = mol.atoms[idx]
    symbol = atom.symbol.lower() if atom.aromatic else atom.symbol
    # Graph-H neighbors are emitted as [H] atoms of their own, so the bracket
    # count covers only implicit / bracket-specified hydrogens.
    h = atom.explicit_h if atom.bracketed else mol.implicit_h_count(idx)
    needs_bracket = (atom.bracketed or atom.charge != 0 or atom.stereo is not None
                     or atom.symbol == "H"
                     or (atom.aromatic and atom.symbol == "N" and h > 0))
    if not needs_bracket:
        return symbol
    parts = ["[", symbol]
    if atom.stereo:
        parts.append(atom.stereo)
    if h == 1:
        parts.append("H")
    elif h > 1:
        parts.append(f"H{h}")
    if atom.charge:
        sign = "+" if atom.charge > 0 else "-"
        mag = abs(atom.charge)
        parts.append(sign if mag == 1 else f"{sign}{mag}")
    parts.append("]")
    return "".join(parts)
