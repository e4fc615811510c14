"""Bohr-Sommerfeld points of 2-D locally toric bases.

Two kinds of base: Delzant polygons ``{x : n_i . x <= b_i}`` and the strip
``0 <= r2 <= c`` modulo ``(r1, r2) -> (r1 + (-a r2 + b), r2)``.  Bohr-Sommerfeld
points are the integer points; strata are 0 (vertex), 1 (edge interior),
2 (interior).  Everything here is exact integer/rational arithmetic.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

from .errors import ConstructionError

Vec = tuple[int, int]


def _det(u, v) -> int:
    return u[0] * v[1] - u[1] * v[0]


def _dot(u, v):
    return u[0] * v[0] + u[1] * v[1]


def _primitive(v: Vec) -> Vec:
    g = math.gcd(abs(v[0]), abs(v[1]))
    if g == 0:
        raise ConstructionError("zero vector")
    return (v[0] // g, v[1] // g)


def is_bs_point(b: Sequence) -> bool:
    """Local model test: ``b`` lies in the closed positive orthant and is integral."""
    return all(Fraction(x) >= 0 and Fraction(x).denominator == 1 for x in b)


@dataclass(frozen=True)
class DelzantPolygon:
    """Outward primitive normals with integer offsets, listed counter-clockwise."""

    inequalities: tuple[tuple[Vec, int], ...]

    def __post_init__(self):
        ineq = tuple(((int(n[0]), int(n[1])), int(b)) for n, b in self.inequalities)
        object.__setattr__(self, "inequalities", ineq)
        if len(ineq) < 3:
            raise ConstructionError("a polygon needs at least three edges")
        for n, _ in ineq:
            if n == (0, 0) or math.gcd(abs(n[0]), abs(n[1])) != 1:
                raise ConstructionError(f"normal {n} is not primitive")
        k = len(ineq)
        for i in range(k):
            d = _det(ineq[i][0], ineq[(i + 1) % k][0])
            if d <= 0:
                raise ConstructionError("normals must turn counter-clockwise (polygon unbounded or misordered)")
            if d != 1:
                raise ConstructionError(f"vertex {i + 1} fails the Delzant condition (det = {d})")
        verts = self.vertices
        for v in verts:
            if v[0].denominator != 1 or v[1].denominator != 1:
                raise ConstructionError(f"vertex {v} is not integral")
        for i, (n, b) in enumerate(ineq):
            for v in verts:
                if _dot(n, v) > b:
                    raise ConstructionError("redundant or inconsistent inequalities")
        for i in range(k):
            if verts[i] == verts[(i + 1) % k]:
                raise ConstructionError("degenerate edge")

    @classmethod
    def from_vertices(cls, vertices: Sequence[Vec]) -> "DelzantPolygon":
        vs = [(int(x), int(y)) for x, y in vertices]
        area2 = sum(_det(vs[i], vs[(i + 1) % len(vs)]) for i in range(len(vs)))
        if area2 == 0:
            raise ConstructionError("degenerate polygon")
        if area2 < 0:
            vs.reverse()
        ineq = []
        for i in range(len(vs)):
            p, q = vs[i], vs[(i + 1) % len(vs)]
            e = _primitive((q[0] - p[0], q[1] - p[1]))
            n = (e[1], -e[0])
            ineq.append((n, _dot(n, p)))
        return cls(tuple(ineq))

    @property
    def vertices(self) -> list[tuple[Fraction, Fraction]]:
        """Vertex ``i`` is the meet of edges ``i-1`` and ``i``."""
        out = []
        k = len(self.inequalities)
        for i in range(k):
            (n1, b1), (n2, b2) = self.inequalities[i - 1], self.inequalities[i]
            d = _det(n1, n2)
            out.append((Fraction(b1 * n2[1] - b2 * n1[1], d), Fraction(n1[0] * b2 - n2[0] * b1, d)))
        return out

    @property
    def int_vertices(self) -> list[Vec]:
        return [(int(x), int(y)) for x, y in self.vertices]

    def edge(self, i: int) -> tuple[Vec, Vec, int]:
        """Start vertex, primitive direction and lattice length of edge ``i``."""
        vs = self.int_vertices
        p, q = vs[i], vs[(i + 1) % len(vs)]
        d = (q[0] - p[0], q[1] - p[1])
        ell = math.gcd(abs(d[0]), abs(d[1]))
        return p, (d[0] // ell, d[1] // ell), ell

    def depth(self, i: int, x) -> Fraction:
        n, b = self.inequalities[i]
        return Fraction(b) - n[0] * Fraction(x[0]) - n[1] * Fraction(x[1])

    def contains(self, x) -> bool:
        return all(self.depth(i, x) >= 0 for i in range(len(self.inequalities)))

    def bbox(self) -> tuple[int, int, int, int]:
        vs = self.int_vertices
        xs, ys = [v[0] for v in vs], [v[1] for v in vs]
        return min(xs), max(xs), min(ys), max(ys)

    def transform(self, m: Sequence[Sequence[int]], shift: Vec = (0, 0)) -> "DelzantPolygon":
        """Image under ``x -> m x + shift`` with ``m`` in GL(2, Z)."""
        if abs(_det(m[0], m[1])) != 1:
            raise ConstructionError("transformation is not unimodular")
        vs = [(m[0][0] * x + m[0][1] * y + shift[0], m[1][0] * x + m[1][1] * y + shift[1]) for x, y in self.int_vertices]
        return DelzantPolygon.from_vertices(vs)

    def twist(self, i: int) -> int:
        """``lam`` with ``n_{i-1} + n_{i+1} = lam * n_i`` for edge ``i``."""
        k = len(self.inequalities)
        a, n, c = self.inequalities[i - 1][0], self.inequalities[i][0], self.inequalities[(i + 1) % k][0]
        s = (a[0] + c[0], a[1] + c[1])
        lam = _dot(s, n)  # n primitive; s is parallel to n
        if _det(s, n) != 0 or lam % _dot(n, n):
            raise ConstructionError("normals violate the Delzant relation")
        return lam // _dot(n, n)


@dataclass(frozen=True)
class QuotientStrip:
    a: int
    b: int
    c: int

    def __post_init__(self):
        if not (self.a < 0 and self.b >= 1 and self.c >= 1):
            raise ConstructionError("strip needs a < 0, b >= 1, c >= 1")

    def period(self, r2) -> Fraction:
        return -self.a * Fraction(r2) + self.b

    def in_fundamental_domain(self, r1, r2) -> bool:
        r1, r2 = Fraction(r1), Fraction(r2)
        return 0 <= r2 <= self.c and Fraction(-1, 2) <= r1 < self.period(r2) - Fraction(1, 2)

    def formula(self) -> int:
        return (self.c + 1) * (2 * self.b - self.a * self.c) // 2


@dataclass
class BSPoint:
    x: int
    y: int
    stratum: int
    is_bs: bool = True
    weights: tuple[int, int] | None = None  # circle weights for vertex points


@dataclass
class BSInventory:
    points: list[BSPoint]
    deleted_points: list[dict] = field(default_factory=list)
    source: str = ""

    def count(self) -> int:
        return sum(p.is_bs for p in self.points)

    def by_stratum(self) -> dict[int, int]:
        out = {0: 0, 1: 0, 2: 0}
        for p in self.points:
            out[p.stratum] += 1
        return out

    def to_records(self) -> list[dict]:
        return [{"x": p.x, "y": p.y, "stratum": p.stratum, "is_bs": p.is_bs} for p in self.points]


def bs_points_polytope(p: DelzantPolygon) -> BSInventory:
    x0, x1, y0, y1 = p.bbox()
    verts = {v: i for i, v in enumerate(p.int_vertices)}
    k = len(p.inequalities)
    pts = []
    for x in range(x0, x1 + 1):
        for y in range(y0, y1 + 1):
            if not p.contains((x, y)):
                continue
            if (x, y) in verts:
                i = verts[(x, y)]
                # edge i-1 carries the circle of edge i-2; its weight at this vertex is -twist(i-1)
                pts.append(BSPoint(x, y, 0, True, (-p.twist((i - 1) % k), 0)))
            elif any(p.depth(j, (x, y)) == 0 for j in range(k)):
                pts.append(BSPoint(x, y, 1))
            else:
                pts.append(BSPoint(x, y, 2))
    return BSInventory(pts, source="polygon")


def bs_points_strip(s: QuotientStrip) -> BSInventory:
    pts = []
    for r2 in range(0, s.c + 1):
        top = s.period(r2) - Fraction(1, 2)
        r1 = 0
        while r1 < top:
            pts.append(BSPoint(r1, r2, 1 if r2 in (0, s.c) else 2))
            r1 += 1
    return BSInventory(pts, source="strip")


def pick_oracle(p: DelzantPolygon) -> int:
    """``A + B/2 + 1`` from the shoelace formula and gcd edge counts."""
    vs = p.int_vertices
    n = len(vs)
    area2 = abs(sum(_det(vs[i], vs[(i + 1) % n]) for i in range(n)))
    if area2 == 0:
        raise ConstructionError("degenerate polygon")
    bnd = sum(math.gcd(abs(vs[(i + 1) % n][0] - vs[i][0]), abs(vs[(i + 1) % n][1] - vs[i][1])) for i in range(n))
    # Pick: A = I + B/2 - 1, so I + B = A + B/2 + 1
    return (area2 + bnd) // 2 + 1


# ---------------------------------------------------------------------------
# windows around edge BS points


@dataclass(frozen=True)
class Window:
    """Open set around an edge BS point.

    Points of the component ``edge`` with parameter in ``(lo, hi)``, depth below
    ``depth`` and (polygons) strictly closer to this edge than to any other.
    """

    edge: int
    point: Fraction
    lo: Fraction
    hi: Fraction
    depth: Fraction = Fraction(1, 2)


@dataclass
class WindowPlan:
    windows: list[Window]
    deleted: list[dict]  # {"edge", "param", "rr1": (a_plus, a_minus)}
    components: list[dict]  # {"edge", "length", "closed": circle or segment}

    def to_record(self) -> dict:
        return {
            "windows": [{"edge": w.edge, "point": str(w.point), "lo": str(w.lo), "hi": str(w.hi)} for w in self.windows],
            "deleted": [{"edge": d["edge"], "param": str(d["param"]), "rr1": list(d["rr1"])} for d in self.deleted],
        }


def interval_windows(points: Sequence[int], lo, hi, circle: bool = False):
    """Windows on a segment ``(lo, hi)`` or a circle of length ``hi - lo``.

    Returns ``(intervals, deleted)``: one interval per point and the gap
    points left between consecutive intervals.
    """
    pts = sorted(Fraction(p) for p in points)
    lo, hi = Fraction(lo), Fraction(hi)
    if not pts:
        return [], []
    if any(b - a < 1 for a, b in zip(pts, pts[1:])) or (circle and len(pts) > 1 and pts[0] + (hi - lo) - pts[-1] < 1):
        gap = min([b - a for a, b in zip(pts, pts[1:])] + [Fraction(1)])
        raise ConstructionError(f"BS points {gap} apart; refine the lattice by a factor of {math.ceil(1 / gap)}")
    half = Fraction(1, 2)
    if circle:
        ivs = [(p - half, p + half) for p in pts]
        return ivs, [p + half for p in pts]
    mids = [(a + b) / 2 for a, b in zip(pts, pts[1:])]
    cuts = [lo] + mids + [hi]
    return [(cuts[i], cuts[i + 1]) for i in range(len(pts))], mids


def window_plan(inv: BSInventory, base: DelzantPolygon | QuotientStrip) -> WindowPlan:
    windows, deleted, comps = [], [], []
    if isinstance(base, QuotientStrip):
        for e, r2 in enumerate((0, base.c)):
            length = base.period(r2)
            pts = [p.x for p in inv.points if p.y == r2 and p.stratum == 1]
            ivs, qs = interval_windows(pts, 0, length, circle=True)
            windows += [Window(e, Fraction(pt), a, b) for pt, (a, b) in zip(sorted(pts), ivs)]
            deleted += [{"edge": e, "param": q % length, "rr1": (0, 0)} for q in qs]
            comps.append({"edge": e, "length": length, "circle": True})
        return WindowPlan(windows, deleted, comps)
    for e in range(len(base.inequalities)):
        start, u, ell = base.edge(e)
        params = []
        for p in inv.points:
            if p.stratum == 1 and base.depth(e, (p.x, p.y)) == 0:
                params.append((p.x - start[0]) * u[0] + (p.y - start[1]) * u[1])
        params = [t // _dot(u, u) for t in params]
        ivs, qs = interval_windows(params, 0, ell)
        windows += [Window(e, Fraction(pt), a, b) for pt, (a, b) in zip(sorted(params), ivs)]
        deleted += [{"edge": e, "param": q, "rr1": (0, 0)} for q in qs]
        comps.append({"edge": e, "length": Fraction(ell), "circle": False, "has_bs": bool(params)})
    return WindowPlan(windows, deleted, comps)


def _edge_param(base: DelzantPolygon, e: int, x) -> Fraction:
    start, u, _ = base.edge(e)
    return Fraction((Fraction(x[0]) - start[0]) * u[0] + (Fraction(x[1]) - start[1]) * u[1], _dot(u, u))


def in_window(base, w: Window, x) -> bool:
    """Exact membership of the base point ``x`` (strip: representative in ``R^2``)."""
    if isinstance(base, QuotientStrip):
        r1, r2 = Fraction(x[0]), Fraction(x[1])
        if not 0 <= r2 <= base.c:
            return False
        h = r2 if w.edge == 0 else base.c - r2
        if h >= w.depth:
            return False
        # circle parameter relative to the boundary circle: move r1 by the
        # identification until it lands in the window's range
        per = base.period(0 if w.edge == 0 else base.c)
        shift = (r1 - w.lo) // per
        t = r1 - shift * per
        return w.lo < t < w.hi
    if not base.contains(x):
        return False
    d = base.depth(w.edge, x)
    if d >= w.depth:
        return False
    if any(base.depth(j, x) <= d for j in range(len(base.inequalities)) if j != w.edge):
        return False
    return w.lo < _edge_param(base, w.edge, x) < w.hi


def check_window_plan(base, inv: BSInventory, plan: WindowPlan, resolution: int = 4) -> dict[str, bool]:
    """The five window conditions, checked exactly.

    Lattice points and a ``1/resolution`` rational sample grid cover
    membership questions; edge intersections are intervals and are compared
    symbolically.
    """
    ws = plan.windows
    bs = [(p.x, p.y) for p in inv.points]
    res = {}
    # 1: each window holds exactly its own BS point
    own = []
    for w in ws:
        inside = [q for q in bs if in_window(base, w, q)]
        own.append(len(inside) == 1)
    res["only_own_bs"] = all(own)
    # 2 and 5: trace on the boundary strata
    traces = _boundary_traces(base, plan)
    res["connected_trace"] = all(len([t for t in tr if t]) == 1 for tr in traces)
    # 3: no vertices
    if isinstance(base, DelzantPolygon):
        res["misses_vertices"] = not any(in_window(base, w, v) for w in ws for v in base.int_vertices)
    else:
        res["misses_vertices"] = True
    # 4: pairwise disjoint on the sample grid plus the symbolic separation
    res["disjoint"] = _disjoint(base, ws, resolution)
    res["covers_edges"] = _covers(base, plan)
    return res


def _boundary_traces(base, plan):
    out = []
    for w in plan.windows:
        tr = []
        for comp in plan.components:
            tr.append(comp["edge"] == w.edge and w.hi > w.lo)
        out.append(tr)
    return out


def _disjoint(base, ws, resolution) -> bool:
    for i, w in enumerate(ws):
        for v in ws[i + 1:]:
            if w.edge == v.edge:
                if isinstance(base, QuotientStrip):
                    per = base.period(0 if w.edge == 0 else base.c)
                    a1, b1 = w.lo % per, w.lo % per + (w.hi - w.lo)
                    a2, b2 = v.lo % per, v.lo % per + (v.hi - v.lo)
                    if any(max(a1, a2 + s) < min(b1, b2 + s) for s in (-per, 0, per)):
                        return False
                elif max(w.lo, v.lo) < min(w.hi, v.hi):
                    return False
            elif isinstance(base, QuotientStrip) and base.c < w.depth + v.depth:
                return False
    if isinstance(base, DelzantPolygon):
        x0, x1, y0, y1 = base.bbox()
        r = resolution
        for X in range(x0 * r, x1 * r + 1):
            for Y in range(y0 * r, y1 * r + 1):
                x = (Fraction(X, r), Fraction(Y, r))
                if sum(in_window(base, w, x) for w in ws) > 1:
                    return False
    return True


def _covers(base, plan) -> bool:
    """Windows plus deleted points exhaust every boundary component carrying BS points."""
    for comp in plan.components:
        e = comp["edge"]
        if not comp.get("circle") and not comp.get("has_bs"):
            continue
        ivs = sorted((w.lo, w.hi) for w in plan.windows if w.edge == e)
        qs = sorted(d["param"] for d in plan.deleted if d["edge"] == e)
        if not ivs:
            if comp.get("circle"):
                return False
            continue
        length = comp["length"]
        if comp.get("circle"):
            start = ivs[0][0]
            want_end = start + length
        else:
            start, want_end = Fraction(0), length
            if ivs[0][0] != 0 or ivs[-1][1] != length:
                return False
        # consecutive intervals meet at exactly one deleted point each
        gaps = [ivs[0][1]] if len(ivs) == 1 and comp.get("circle") else []
        for (a, b), (c, d) in zip(ivs, ivs[1:]):
            if b != c:
                return False
            gaps.append(b)
        if comp.get("circle") and len(ivs) > 1:
            if ivs[-1][1] != want_end:
                return False
            gaps.append(ivs[-1][1])
        norm = sorted(g % length for g in gaps) if comp.get("circle") else gaps
        if norm != sorted(q % length if comp.get("circle") else q for q in qs):
            return False
        if ivs[0][0] != start:
            return False
    return True


# ---------------------------------------------------------------------------
# random instances


STANDARD = {
    "triangle": [(0, 0), (1, 0), (0, 1)],
    "square": [(0, 0), (1, 0), (1, 1), (0, 1)],
}


def hirzebruch(k: int, width: int, height: int) -> list[Vec]:
    """Trapezoid with normals (0,-1), (1,k), (0,1), (-1,0)."""
    top = width
    bottom = width + k * height
    return [(0, 0), (bottom, 0), (top, height), (0, height)]


def random_unimodular(rng: random.Random, steps: int = 4) -> list[list[int]]:
    m = [[1, 0], [0, 1]]
    for _ in range(steps):
        k = rng.randint(-2, 2)
        e = [[1, k], [0, 1]] if rng.random() < 0.5 else [[1, 0], [k, 1]]
        m = [[sum(m[i][t] * e[t][j] for t in range(2)) for j in range(2)] for i in range(2)]
    if rng.random() < 0.5:
        m = [[m[1][0], m[1][1]], [m[0][0], m[0][1]]]
    return m


def random_delzant(rng: random.Random, max_scale: int = 4) -> DelzantPolygon:
    kind = rng.choice(["triangle", "square", "hirzebruch"])
    s = rng.randint(1, max_scale)
    if kind == "hirzebruch":
        vs = hirzebruch(rng.randint(0, 2), rng.randint(1, max_scale), rng.randint(1, max_scale))
    else:
        vs = [(s * x, s * y) for x, y in STANDARD[kind]]
    base = DelzantPolygon.from_vertices(vs)
    return base.transform(random_unimodular(rng), (rng.randint(-3, 3), rng.randint(-3, 3)))


def inventory_for(base) -> tuple[BSInventory, WindowPlan]:
    """Enumerate BS points, plan the edge windows and record the deleted points."""
    inv = bs_points_strip(base) if isinstance(base, QuotientStrip) else bs_points_polytope(base)
    plan = window_plan(inv, base)
    inv.deleted_points = plan.deleted
    return inv, plan


def polygon_from_config(spec: dict) -> DelzantPolygon:
    if "vertices" in spec:
        return DelzantPolygon.from_vertices([tuple(v) for v in spec["vertices"]])
    if "inequalities" in spec:
        return DelzantPolygon(tuple((tuple(r["normal"]), r["offset"]) for r in spec["inequalities"]))
    raise ConstructionError("polygon needs 'vertices' or 'inequalities'")


def strata_of(points: Iterable[BSPoint]) -> dict[Vec, int]:
    return {(p.x, p.y): p.stratum for p in points}
