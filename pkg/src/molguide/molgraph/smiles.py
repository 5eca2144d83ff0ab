"""Reader and writer for a kekulized SMILES subset.

Supported: organic-subset atoms, bracket atoms with optional H count and
charge, ``-``/``=``/``#`` bonds, branches, ring closures (``1``-``9``, ``%nn``)
and ``.`` fragment separators. Aromatic lowercase atoms, stereo marks,
isotopes and atom classes are rejected. Hydrogens are never materialised.
"""
from __future__ import annotations

import re
from typing import Iterable, Iterator

from .chem import canonical_order, valence_check
from .core import MolecularGraph, Vocabulary, VocabularyError


class SmilesError(ValueError):
    pass


class UnsupportedToken(SmilesError):
    pass


class UnclosedRing(SmilesError):
    pass


class UnbalancedParenthesis(SmilesError):
    pass


class UnknownElement(SmilesError):
    pass


class InvalidGraph(ValueError):
    pass


ORGANIC = ("Cl", "Br", "B", "C", "N", "O", "P", "S", "F", "I")
BOND_SYMBOLS = {"-": 1, "=": 2, "#": 3}
BOND_WRITE = {1: "", 2: "=", 3: "#"}
_BRACKET = re.compile(r"^(\d+)?([A-Z][a-z]?|[a-z][a-z]?|\*)(@+)?(H\d*)?([+-]+\d*)?(:\d+)?$")


def _charge(text: str | None) -> int:
    if not text:
        return 0
    sign = 1 if text[0] == "+" else -1
    rest = text[1:]
    if rest.isdigit():
        return sign * int(rest)
    if rest and set(rest) == {text[0]}:
        return sign * (len(rest) + 1)
    if not rest:
        return sign
    raise SmilesError(f"bad charge {text!r}")


def smiles_parse(text: str, vocab: Vocabulary | None = None) -> MolecularGraph:
    vocab = vocab or Vocabulary.default()
    text = text.strip()
    if not text:
        raise SmilesError("empty SMILES")
    atoms: list[tuple[str, int]] = []
    bonds: dict[tuple[int, int], int] = {}
    rings: dict[int, tuple[int, int | None]] = {}
    stack: list[int] = []
    prev: int | None = None
    pending: int | None = None
    i = 0

    def add_atom(sym: str, charge: int) -> None:
        nonlocal prev, pending
        if not vocab.has(sym, charge):
            raise UnknownElement(f"{sym} charge {charge:+d} not in vocabulary")
        atoms.append((sym, charge))
        idx = len(atoms) - 1
        if prev is not None:
            add_bond(prev, idx, pending or 1)
        elif pending is not None:
            raise SmilesError("bond symbol without a preceding atom")
        prev, pending = idx, None

    def add_bond(a: int, b: int, order: int) -> None:
        key = (min(a, b), max(a, b))
        if a == b or key in bonds:
            raise SmilesError(f"duplicate or self bond at atoms {a}, {b}")
        bonds[key] = order

    while i < len(text):
        ch = text[i]
        if ch == "[":
            j = text.find("]", i)
            if j < 0:
                raise SmilesError("unterminated bracket atom")
            m = _BRACKET.match(text[i + 1 : j])
            if not m:
                raise UnsupportedToken(f"bracket atom {text[i:j + 1]!r}")
            iso, sym, chiral, _hcount, chg, cls = m.groups()
            if iso or chiral or cls:
                raise UnsupportedToken(f"isotope/stereo/class in {text[i:j + 1]!r}")
            if sym[0].islower():
                raise UnsupportedToken(f"aromatic atom {sym!r}")
            if sym == "*":
                raise UnsupportedToken("wildcard atom")
            add_atom(sym, _charge(chg))
            i = j + 1
        elif ch.isupper():
            sym = text[i : i + 2] if text[i : i + 2] in ("Cl", "Br") else ch
            if sym not in ORGANIC:
                raise UnknownElement(f"{sym!r} outside the organic subset needs brackets")
            add_atom(sym, 0)
            i += len(sym)
        elif ch in "bcnops":
            raise UnsupportedToken(f"aromatic atom {ch!r} at position {i}")
        elif ch in BOND_SYMBOLS:
            if pending is not None:
                raise SmilesError(f"consecutive bond symbols at {i}")
            pending = BOND_SYMBOLS[ch]
            i += 1
        elif ch in "/\\@:$":
            raise UnsupportedToken(f"{ch!r} at position {i}")
        elif ch == "(":
            if prev is None:
                raise UnbalancedParenthesis(f"branch without atom at {i}")
            stack.append(prev)
            i += 1
        elif ch == ")":
            if not stack:
                raise UnbalancedParenthesis(f"unmatched ')' at {i}")
            if pending is not None:
                raise SmilesError(f"dangling bond before ')' at {i}")
            prev = stack.pop()
            i += 1
        elif ch.isdigit() or ch == "%":
            if ch == "%":
                if not text[i + 1 : i + 3].isdigit():
                    raise SmilesError(f"bad ring label at {i}")
                num, i = int(text[i + 1 : i + 3]), i + 3
            else:
                num, i = int(ch), i + 1
            if prev is None:
                raise SmilesError("ring closure without atom")
            if num in rings:
                other, order = rings.pop(num)
                if order and pending and order != pending:
                    raise SmilesError(f"conflicting bond orders on ring {num}")
                add_bond(other, prev, pending or order or 1)
            else:
                rings[num] = (prev, pending)
            pending = None
        elif ch == ".":
            if stack or pending is not None:
                raise SmilesError(f"'.' inside branch or after bond at {i}")
            prev = None
            i += 1
        else:
            raise UnsupportedToken(f"{ch!r} at position {i}")

    if stack:
        raise UnbalancedParenthesis("unclosed '('")
    if rings:
        raise UnclosedRing(f"unclosed ring label(s) {sorted(rings)}")
    if pending is not None:
        raise SmilesError("trailing bond symbol")
    try:
        return MolecularGraph.from_bonds(atoms, [(a, b, o) for (a, b), o in bonds.items()], vocab)
    except VocabularyError as e:
        raise UnknownElement(str(e)) from None


def _atom_token(sym: str, charge: int) -> str:
    if charge == 0 and sym in ORGANIC:
        return sym
    c = "" if charge == 0 else ("+" if charge == 1 else "-" if charge == -1 else f"{charge:+d}")
    return f"[{sym}{c}]"


def smiles_write(g: MolecularGraph, check: bool = True) -> str:
    """Deterministic SMILES driven by the canonical atom order.

    With ``check=False`` invalid graphs are written too (fragments joined by ``.``).
    """
    if check and not valence_check(g):
        raise InvalidGraph("graph fails the valence/connectivity check")
    order = canonical_order(g)
    rank = {v: k for k, v in enumerate(order)}
    nbrs = [sorted(nb, key=lambda x: rank[x[0]]) for nb in g.neighbors()]
    atoms = g.atoms()

    visited: set[int] = set()
    parent: dict[int, int] = {}
    children: dict[int, list[int]] = {}
    ring_bonds: dict[int, list[tuple[int, int]]] = {v: [] for v in range(g.n)}
    roots = []

    for start in order:
        if start in visited:
            continue
        roots.append(start)
        # iterative DFS mirroring the recursive emission order
        visited.add(start)
        children[start] = []
        stack: list[tuple[int, Iterator]] = [(start, iter(nbrs[start]))]
        while stack:
            u, it = stack[-1]
            for v, e in it:
                if v == parent.get(u):
                    continue
                if v in visited:
                    if not any(w == u for w, _ in ring_bonds[v]):
                        ring_bonds[u].append((v, e))
                        ring_bonds[v].append((u, e))
                    continue
                visited.add(v)
                parent[v] = u
                children[u].append(v)
                children[v] = []
                stack.append((v, iter(nbrs[v])))
                break
            else:
                stack.pop()

    bond_of = {}
    for i, j, e in g.bonds():
        bond_of[(i, j)] = bond_of[(j, i)] = e

    open_labels: dict[tuple[int, int], int] = {}
    free = list(range(1, 100))
    out: list[str] = []

    def label(num: int) -> str:
        return str(num) if num < 10 else f"%{num:02d}"

    def emit(u: int) -> None:
        out.append(_atom_token(*atoms[u]))
        for v, e in ring_bonds[u]:
            key = (min(u, v), max(u, v))
            if key in open_labels:
                num = open_labels.pop(key)
                out.append(label(num))
                free.append(num)
                free.sort()
            else:
                num = free.pop(0)
                open_labels[key] = num
                out.append(BOND_WRITE[e] + label(num))
        kids = children[u]
        for k, v in enumerate(kids):
            tok = BOND_WRITE[bond_of[(u, v)]]
            if k < len(kids) - 1:
                out.append("(" + tok)
                emit(v)
                out.append(")")
            else:
                out.append(tok)
                emit(v)

    parts = []
    for r in roots:
        out.clear()
        emit(r)
        parts.append("".join(out))
    return ".".join(parts)


def read_smiles_file(path, vocab: Vocabulary | None = None) -> Iterator[tuple[int, str, MolecularGraph | Exception]]:
    """Yield (line number, text, graph or parse error); skips blanks and '#' comments."""
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            s = line.strip()
            if not s or s.startswith("#"):
                continue
            s = s.split()[0]
            try:
                yield lineno, s, smiles_parse(s, vocab)
            except (SmilesError, ValueError) as e:
                yield lineno, s, e


def write_smiles_file(path, lines: Iterable[str]) -> None:
    with open(path, "w") as fh:
        for s in lines:
            fh.write(s + "\n")
