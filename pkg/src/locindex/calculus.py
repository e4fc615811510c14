"""Exact solver for the linear relations among the local indices RR0 and RR1.

Unknowns are ``RR0(a, b)`` and ``RR1(a, b)`` for ``|a|, |b| <= bound``.  The
relations are

    RR0(a, b) = RR0(b, a)
    RR1(a, b) = RR1(a + c, b + c)
    RR0(a, b) = RR0(a', b) + RR1(a', a)
    RR1(a, c) = RR1(a, b) + RR1(b, c)

restricted to the box, plus two normalisations from global Riemann-Roch
numbers: three vertices of the triangle each contribute ``RR0(0, 1)`` (total 3)
and four vertices of the square each contribute ``RR0(0, 0)`` (total 4).

Elimination keeps the pivot rows fully reduced, so each row holds its pivot
plus free columns only and reducing a new equation is a single pass.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

from .errors import ConstructionError, InconsistentSystem

Symbol = tuple[str, int, int]


def rr0(a: int, b: int) -> Symbol:
    return ("RR0", a, b)


def rr1(a: int, b: int) -> Symbol:
    return ("RR1", a, b)


@dataclass(frozen=True)
class Relation:
    """``sum coeffs[s] * s = constant``; ``source`` names the family."""

    coeffs: tuple[tuple[Symbol, int], ...]
    constant: int
    source: str

    def evaluate(self, values: Mapping[Symbol, Fraction | int]) -> Fraction:
        return sum((Fraction(c) * values[s] for s, c in self.coeffs), Fraction(0)) - self.constant

    def __str__(self) -> str:
        terms = " + ".join(f"{c}*{s[0]}({s[1]},{s[2]})" for s, c in self.coeffs) or "0"
        return f"{terms} = {self.constant}  [{self.source}]"


def _rel(terms: Iterable[tuple[Symbol, int]], constant: int, source: str) -> Relation | None:
    acc: dict[Symbol, int] = {}
    for s, c in terms:
        acc[s] = acc.get(s, 0) + c
    coeffs = tuple(sorted((s, c) for s, c in acc.items() if c))
    if not coeffs and constant == 0:
        return None
    return Relation(coeffs, constant, source)


def base_facts() -> list[Relation]:
    return [Relation(((rr0(0, 1), 3),), 3, "triangle"), Relation(((rr0(0, 0), 4),), 4, "square")]


def generate_system(bound: int, facts: Sequence[str] = ("triangle", "square")) -> list[Relation]:
    """All relation instances inside the box, then the selected base facts."""
    if bound < 2:
        raise ConstructionError("bound must be at least 2")
    rng = range(-bound, bound + 1)
    out: list[Relation | None] = []
    for a, b in itertools.product(rng, rng):
        out.append(_rel([(rr0(a, b), 1), (rr0(b, a), -1)], 0, "symmetry"))
    for a, b, c in itertools.product(rng, rng, rng):
        if c and abs(a + c) <= bound and abs(b + c) <= bound:
            out.append(_rel([(rr1(a, b), 1), (rr1(a + c, b + c), -1)], 0, "shift"))
    for a, ap, b in itertools.product(rng, rng, rng):
        out.append(_rel([(rr0(a, b), 1), (rr0(ap, b), -1), (rr1(ap, a), -1)], 0, "exchange"))
    for a, b, c in itertools.product(rng, rng, rng):
        out.append(_rel([(rr1(a, c), 1), (rr1(a, b), -1), (rr1(b, c), -1)], 0, "cocycle"))
    rels = [r for r in out if r is not None]
    rels += [f for f in base_facts() if f.source in facts]
    return rels


def symbols(bound: int) -> list[Symbol]:
    rng = range(-bound, bound + 1)
    return [(k, a, b) for k in ("RR0", "RR1") for a in rng for b in rng]


class _Eliminator:
    def __init__(self, track: bool = False):
        self.rows: dict[Symbol, tuple[dict[Symbol, Fraction], Fraction, frozenset]] = {}
        self.where: dict[Symbol, set[Symbol]] = {}
        self.track = track

    def add(self, rel: Relation, tag: int) -> tuple[bool, frozenset]:
        """Insert a relation; returns (consistent, provenance of any contradiction)."""
        row = {s: Fraction(c) for s, c in rel.coeffs}
        rhs = Fraction(rel.constant)
        prov = frozenset([tag]) if self.track else frozenset()
        for s in [s for s in row if s in self.rows]:
            c = row.get(s)
            if not c:
                continue
            prow, prhs, pprov = self.rows[s]
            for t, v in prow.items():
                nv = row.get(t, 0) - c * v
                if nv:
                    row[t] = nv
                else:
                    row.pop(t, None)
            rhs -= c * prhs
            if self.track:
                prov |= pprov
        if not row:
            return rhs == 0, prov
        piv = min(row)
        inv = 1 / row[piv]
        row = {t: v * inv for t, v in row.items()}
        rhs *= inv
        # clear the new pivot column from existing rows
        for other in list(self.where.get(piv, ())):
            orow, orhs, oprov = self.rows[other]
            c = orow.get(piv)
            if not c:
                continue
            for t, v in row.items():
                nv = orow.get(t, 0) - c * v
                if nv:
                    if t not in orow:
                        self.where.setdefault(t, set()).add(other)
                    orow[t] = nv
                else:
                    orow.pop(t, None)
                    self.where.get(t, set()).discard(other)
            self.rows[other] = (orow, orhs - c * rhs, oprov | prov if self.track else oprov)
        self.where.pop(piv, None)
        self.rows[piv] = (row, rhs, prov)
        for t in row:
            if t != piv:
                self.where.setdefault(t, set()).add(piv)
        return True, prov


def _first_conflict(system: Sequence[Relation], track: bool) -> tuple[int | None, frozenset, _Eliminator]:
    el = _Eliminator(track)
    for i, rel in enumerate(system):
        ok, prov = el.add(rel, i)
        if not ok:
            return i, prov, el
    return None, frozenset(), el


def minimal_infeasible_subset(system: Sequence[Relation]) -> list[Relation]:
    """Deletion filter over the provenance of the first contradiction."""
    idx, _, _ = _first_conflict(system, False)
    if idx is None:
        return []
    _, prov, _ = _first_conflict(system[: idx + 1], True)
    core = sorted(prov)
    i = 0
    while i < len(core):
        trial = core[:i] + core[i + 1:]
        if _first_conflict([system[j] for j in trial], False)[0] is not None:
            core = trial
        else:
            i += 1
    return [system[j] for j in core]


@dataclass
class LocalIndexTable:
    """Solved values on the box and, if underdetermined, the general solution.

    ``general[s] = (constant, {free_symbol: coefficient})``.
    """

    bound: int
    values: dict[Symbol, Fraction]
    general: dict[Symbol, tuple[Fraction, dict[Symbol, Fraction]]]
    free: list[Symbol]
    consistent: bool
    witness: list[Relation] = field(default_factory=list)

    @property
    def unique(self) -> bool:
        return self.consistent and not self.free

    def value(self, kind: str, a: int, b: int) -> int:
        if not self.unique:
            raise ConstructionError("table is not uniquely solved")
        s = (kind, a, b)
        if s not in self.values:
            raise ConstructionError(f"{kind}({a},{b}) lies outside the solved box |a|,|b| <= {self.bound}")
        v = self.values[s]
        if v.denominator != 1:
            raise ConstructionError(f"{kind}({a},{b}) = {v} is not an integer")
        return int(v)

    def to_records(self) -> list[dict]:
        out = []
        for s in symbols(self.bound):
            v = self.values.get(s)
            out.append({"kind": s[0], "a": s[1], "b": s[2],
                        "value": None if v is None else (int(v) if v.denominator == 1 else str(v))})
        return out


def solve(system: Sequence[Relation], bound: int | None = None) -> LocalIndexTable:
    """Exact elimination; reports inconsistency witnesses and free parameters."""
    if bound is None:
        bound = max((max(abs(s[1]), abs(s[2])) for r in system for s, _ in r.coeffs), default=0)
    idx, _, el = _first_conflict(system, False)
    if idx is not None:
        return LocalIndexTable(bound, {}, {}, [], False, minimal_infeasible_subset(system))
    syms = symbols(bound)
    free = [s for s in syms if s not in el.rows]
    general: dict[Symbol, tuple[Fraction, dict[Symbol, Fraction]]] = {}
    values: dict[Symbol, Fraction] = {}
    for s in syms:
        if s in el.rows:
            row, rhs, _ = el.rows[s]
            dep = {t: -v for t, v in row.items() if t != s}
            general[s] = (rhs, dep)
            if not dep:
                values[s] = rhs
        else:
            general[s] = (Fraction(0), {s: Fraction(1)})
    return LocalIndexTable(bound, values, general, free, True)


def family_values(table: LocalIndexTable, params: Mapping[Symbol, Fraction | int]) -> dict[Symbol, Fraction]:
    """Evaluate the general solution at given free-parameter values."""
    out = {}
    for s, (c, dep) in table.general.items():
        out[s] = Fraction(c) + sum((Fraction(v) * Fraction(params.get(t, 0)) for t, v in dep.items()), Fraction(0))
    return out


def closed_form_family(bound: int, u: Fraction | int, gamma: Fraction | int) -> dict[Symbol, Fraction]:
    """``RR0(a,b) = u + (a+b) gamma``, ``RR1(a,b) = (b-a) gamma``."""
    out = {}
    for k, a, b in symbols(bound):
        out[(k, a, b)] = Fraction(u) + (a + b) * Fraction(gamma) if k == "RR0" else (b - a) * Fraction(gamma)
    return out


def rr_total(inventory, table: LocalIndexTable) -> int:
    """Sum of local contributions over a stratified BS inventory.

    Vertices contribute ``RR0`` at their circle weights, edge and interior BS
    points contribute one each, deleted edge points contribute ``RR1``.
    """
    if not table.unique:
        raise ConstructionError("rr_total needs a uniquely solved table")
    total = 0
    for p in inventory.points:
        if not p.is_bs:
            continue
        if p.stratum == 0:
            a, b = p.weights if p.weights is not None else (0, 0)
            total += table.value("RR0", a, b)
        else:
            total += 1
    for q in inventory.deleted_points:
        a, b = q.get("rr1", (0, 0))
        total += table.value("RR1", a, b)
    return total
