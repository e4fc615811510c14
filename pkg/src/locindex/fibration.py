"""Compatible fibrations on discrete ``R^p x T^n`` grid models.

Sites are integer index tuples.  Base directions are bounded intervals
(neighbours clamp at the ends); torus directions are periodic with period 1
sampled at ``N_i`` sites.  A fiber subgroup is a rational subspace of
``R^n`` given by primitive integer generators; its discrete orbit through a
site is the set of grid points reachable along the closed subtorus.

Regions are boolean arrays of the model shape.  All orbit and region logic is
exact integer arithmetic; scalar fields are float arrays (or object arrays of
``Fraction`` for the exact averaging mode).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ConstructionError


# ---------------------------------------------------------------------------
# exact linear algebra helpers


def _rref(rows: Sequence[Sequence[int | Fraction]]) -> list[list[Fraction]]:
    m = [[Fraction(v) for v in r] for r in rows]
    if not m:
        return []
    ncol = len(m[0])
    out: list[list[Fraction]] = []
    col = 0
    while m and col < ncol:
        piv = next((r for r in m if r[col] != 0), None)
        if piv is None:
            col += 1
            continue
        m.remove(piv)
        piv = [v / piv[col] for v in piv]
        m = [[a - r[col] * b for a, b in zip(r, piv)] for r in m]
        out = [[a - r[col] * b for a, b in zip(r, piv)] for r in out]
        out.append(piv)
        col += 1
    return out


def rational_rank(rows: Sequence[Sequence[int | Fraction]]) -> int:
    return len(_rref(rows))


def _nullspace(rows: Sequence[Sequence[int]], n: int) -> list[list[int]]:
    """Integer vectors spanning (over Q) the null space of ``rows``."""
    red = _rref(rows)
    pivots = [next(i for i, v in enumerate(r) if v != 0) for r in red]
    free = [j for j in range(n) if j not in pivots]
    basis = []
    for fj in free:
        vec = [Fraction(0)] * n
        vec[fj] = Fraction(1)
        for r, p in zip(red, pivots):
            vec[p] = -r[fj]
        den = math.lcm(*(v.denominator for v in vec))
        basis.append([int(v * den) for v in vec])
    return basis


# ---------------------------------------------------------------------------
# model


@dataclass(frozen=True)
class DiscreteModel:
    """Finite grid on ``[lo_1,hi_1] x ... x [lo_p,hi_p] x T^n``.

    ``base_grids`` holds ``(sites, lo, hi)`` per interval direction and
    ``torus_grids`` the site count ``N_i`` per circle direction.
    """

    base_grids: tuple[tuple[int, float, float], ...] = ()
    torus_grids: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "base_grids", tuple((int(s), float(lo), float(hi)) for s, lo, hi in self.base_grids))
        object.__setattr__(self, "torus_grids", tuple(int(n) for n in self.torus_grids))
        for s, lo, hi in self.base_grids:
            if s < 1 or not hi >= lo:
                raise ConstructionError(f"bad base grid ({s}, {lo}, {hi})")
        for n in self.torus_grids:
            if n < 2:
                raise ConstructionError(f"torus grid needs at least 2 sites, got {n}")
        if not self.shape:
            raise ConstructionError("model has no directions")

    @property
    def base_dims(self) -> int:
        return len(self.base_grids)

    @property
    def torus_dims(self) -> int:
        return len(self.torus_grids)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(g[0] for g in self.base_grids) + self.torus_grids

    @property
    def n_sites(self) -> int:
        return math.prod(self.shape)

    @property
    def torus_axes(self) -> tuple[int, ...]:
        return tuple(range(self.base_dims, self.base_dims + self.torus_dims))

    def base_coords(self, axis: int) -> np.ndarray:
        s, lo, hi = self.base_grids[axis]
        return np.linspace(lo, hi, s) if s > 1 else np.array([lo])

    def empty(self) -> np.ndarray:
        return np.zeros(self.shape, dtype=bool)

    def full(self) -> np.ndarray:
        return np.ones(self.shape, dtype=bool)

    def box(self, base: Sequence[tuple[int, int]] | None = None,
            torus: Sequence[tuple[int, int]] | None = None) -> np.ndarray:
        """Index box, inclusive bounds; omitted directions are taken whole."""
        mask = self.empty()
        sl = []
        for ax, n in enumerate(self.shape):
            rng = None
            if ax < self.base_dims and base is not None:
                rng = base[ax]
            elif ax >= self.base_dims and torus is not None:
                rng = torus[ax - self.base_dims]
            sl.append(slice(None) if rng is None else slice(max(rng[0], 0), min(rng[1], n - 1) + 1))
        mask[tuple(sl)] = True
        return mask

    def _shift(self, mask: np.ndarray, axis: int, step: int) -> np.ndarray:
        if axis >= self.base_dims:
            return np.roll(mask, step, axis=axis)
        out = np.copy(mask)
        n = mask.shape[axis]
        src = [slice(None)] * mask.ndim
        dst = [slice(None)] * mask.ndim
        if step > 0:
            src[axis], dst[axis] = slice(0, n - 1), slice(1, n)
        else:
            src[axis], dst[axis] = slice(1, n), slice(0, n - 1)
        out[tuple(dst)] |= mask[tuple(src)]
        return out

    def dilate(self, mask: np.ndarray, steps: int = 1) -> np.ndarray:
        out = np.asarray(mask, dtype=bool)
        for _ in range(steps):
            acc = out.copy()
            for ax in range(out.ndim):
                acc |= self._shift(out, ax, 1) | self._shift(out, ax, -1)
            out = acc
        return out

    def erode(self, mask: np.ndarray, steps: int = 1) -> np.ndarray:
        return ~self.dilate(~np.asarray(mask, dtype=bool), steps)

    def site(self, flat: int) -> tuple[int, ...]:
        return tuple(int(i) for i in np.unravel_index(flat, self.shape))


# ---------------------------------------------------------------------------
# fiber subgroups


@lru_cache(maxsize=None)
def _orbit_offsets(gens: tuple[tuple[int, ...], ...], grid: tuple[int, ...]) -> np.ndarray:
    n = len(grid)
    if not gens:
        return np.zeros((1, n), dtype=np.int64)
    # group generated by the reduced generators
    reduced = []
    for g in gens:
        a = [gi * ni for gi, ni in zip(g, grid)]
        c = math.gcd(*a)
        reduced.append(tuple((ai // c) % ni for ai, ni in zip(a, grid)))
    seen = {tuple([0] * n)}
    frontier = list(seen)
    while frontier:
        nxt = []
        for p in frontier:
            for r in reduced:
                q = tuple((pi + ri) % ni for pi, ri, ni in zip(p, r, grid))
                if q not in seen:
                    seen.add(q)
                    nxt.append(q)
        frontier = nxt
    # brute force: k/N in span(gens) + Z^n
    comp = _nullspace(gens, n)
    L = math.lcm(*grid)
    box = [range(-(1 + sum(abs(g[i]) for g in gens)), 2 + sum(abs(g[i]) for g in gens)) for i in range(n)]
    shifts = np.array(list(itertools.product(*box)), dtype=np.int64) * L
    C = np.array(comp, dtype=np.int64).reshape(len(comp), n)
    scale = np.array([L // ni for ni in grid], dtype=np.int64)
    brute = set()
    for k in itertools.product(*(range(ni) for ni in grid)):
        x = np.array(k, dtype=np.int64) * scale
        if C.shape[0] == 0 or np.any(np.all((x - shifts) @ C.T == 0, axis=1)):
            brute.add(k)
    if brute != seen:
        raise ConstructionError(
            f"generators {gens} are incompatible with torus grid {grid}: "
            f"discrete orbit has {len(brute)} sites, reduced generators reach {len(seen)}")
    return np.array(sorted(seen), dtype=np.int64)


@dataclass(frozen=True)
class FiberSubgroup:
    """Rational subspace ``R_a`` of ``R^n``; the fiber is ``R_a / (R_a cap Z^n)``."""

    generators: tuple[tuple[int, ...], ...]
    ambient: int

    def __post_init__(self):
        gens = tuple(tuple(int(v) for v in g) for g in self.generators)
        object.__setattr__(self, "generators", gens)
        for g in gens:
            if len(g) != self.ambient:
                raise ConstructionError(f"generator {g} does not live in Z^{self.ambient}")
            if math.gcd(*g) != 1:
                raise ConstructionError(f"generator {g} is not primitive")
        if rational_rank(gens) != len(gens):
            raise ConstructionError(f"generators {gens} are linearly dependent")

    @classmethod
    def full(cls, n: int) -> "FiberSubgroup":
        return cls(tuple(tuple(int(i == j) for j in range(n)) for i in range(n)), n)

    @classmethod
    def trivial(cls, n: int) -> "FiberSubgroup":
        return cls((), n)

    @property
    def rank(self) -> int:
        return len(self.generators)

    def contains(self, other: "FiberSubgroup") -> bool:
        """Rational inclusion ``other.R ⊆ self.R``."""
        return rational_rank(self.generators + other.generators) == self.rank

    def offsets(self, grid: Sequence[int]) -> np.ndarray:
        return _orbit_offsets(self.generators, tuple(grid))


# ---------------------------------------------------------------------------
# orbits


def _labels_from_offsets(model: DiscreteModel, offsets: np.ndarray) -> np.ndarray:
    idx = np.arange(model.n_sites).reshape(model.shape)
    lab = idx.copy()
    axes = model.torus_axes
    for off in offsets:
        if not np.any(off):
            continue
        lab = np.minimum(lab, np.roll(idx, tuple(-int(o) for o in off), axis=axes))
    return lab


@lru_cache(maxsize=256)
def _labels_cached(model: DiscreteModel, key: tuple) -> np.ndarray:
    offsets = np.array(key, dtype=np.int64).reshape(-1, model.torus_dims)
    lab = _labels_from_offsets(model, offsets)
    lab.flags.writeable = False
    return lab


def orbit_labels(model: DiscreteModel, offsets: np.ndarray) -> np.ndarray:
    """Per site, the smallest flat index in its orbit under ``offsets``."""
    key = tuple(int(v) for v in np.asarray(offsets).ravel())
    return _labels_cached(model, key)


def saturate(mask: np.ndarray, labels: np.ndarray) -> np.ndarray:
    hit = np.zeros(labels.size, dtype=bool)
    hit[labels[mask]] = True
    return hit[labels]


def intersect_offsets(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    sa = {tuple(r) for r in a.tolist()}
    common = sorted(tuple(r) for r in b.tolist() if tuple(r) in sa)
    return np.array(common, dtype=np.int64).reshape(len(common), a.shape[1])


# ---------------------------------------------------------------------------
# charts and fibration data


@dataclass(frozen=True, eq=False)
class Chart:
    id: str
    region: np.ndarray
    fiber: FiberSubgroup

    def __post_init__(self):
        reg = np.array(self.region, dtype=bool)
        reg.flags.writeable = False
        object.__setattr__(self, "region", reg)


@dataclass(frozen=True, eq=False)
class CompatibleFibrationData:
    """Model, rank-ordered charts and optional shrunken regions ``V'``.

    Charts are reordered stably by fiber rank.  Every region must be
    saturated under its own orbits; otherwise construction fails.
    """

    model: DiscreteModel
    charts: tuple[Chart, ...]
    inner_regions: Mapping[str, np.ndarray] | None = None
    domain: np.ndarray | None = None
    _labels: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        charts = tuple(sorted(self.charts, key=lambda c: c.fiber.rank))
        object.__setattr__(self, "charts", charts)
        ids = [c.id for c in charts]
        if len(set(ids)) != len(ids):
            raise ConstructionError("duplicate chart ids")
        if not charts:
            raise ConstructionError("no charts")
        dom = self.model.full() if self.domain is None else np.array(self.domain, dtype=bool)
        dom.flags.writeable = False
        object.__setattr__(self, "domain", dom)
        for c in charts:
            if c.region.shape != self.model.shape:
                raise ConstructionError(f"chart {c.id}: region shape {c.region.shape} != model {self.model.shape}")
            if c.fiber.ambient != self.model.torus_dims:
                raise ConstructionError(f"chart {c.id}: fiber lives in Z^{c.fiber.ambient}")
            off = c.fiber.offsets(self.model.torus_grids)
            lab = orbit_labels(self.model, off)
            self._labels[c.id] = (off, lab)
            sat = saturate(c.region, lab)
            if np.any(sat & ~c.region):
                bad = self.model.site(int(np.flatnonzero((sat & ~c.region).ravel())[0]))
                raise ConstructionError(f"chart {c.id}: region not saturated under its fibers (site {bad})")
        if self.inner_regions is not None:
            inner = {}
            for c in charts:
                if c.id not in self.inner_regions:
                    raise ConstructionError(f"inner region missing for chart {c.id}")
                v = np.array(self.inner_regions[c.id], dtype=bool)
                if np.any(v & ~c.region):
                    raise ConstructionError(f"inner region of {c.id} leaves the chart")
                v.flags.writeable = False
                inner[c.id] = v
            object.__setattr__(self, "inner_regions", inner)

    def chart(self, cid: str) -> Chart:
        return next(c for c in self.charts if c.id == cid)

    def offsets(self, cid: str) -> np.ndarray:
        return self._labels[cid][0]

    def labels(self, cid: str) -> np.ndarray:
        return self._labels[cid][1]

    def with_inner(self, inner: Mapping[str, np.ndarray]) -> "CompatibleFibrationData":
        return CompatibleFibrationData(self.model, self.charts, dict(inner), self.domain)

    def overlapping_pairs(self) -> list[tuple[Chart, Chart]]:
        out = []
        for a, b in itertools.combinations(self.charts, 2):
            if np.any(a.region & b.region):
                out.append((a, b))
        return out


# ---------------------------------------------------------------------------
# validation


@dataclass
class ValidationReport:
    records: list[dict]
    valid: bool
    good: bool

    def failures(self) -> list[dict]:
        return [r for r in self.records if r["status"] != "pass"]


def _first_site(model: DiscreteModel, mask: np.ndarray) -> list[int] | None:
    hits = np.flatnonzero(np.asarray(mask).ravel())
    return list(model.site(int(hits[0]))) if hits.size else None


def _constant_within(key: np.ndarray, val: np.ndarray) -> np.ndarray:
    """Per entry: is ``val`` constant over the class of ``key`` it belongs to."""
    _, inv = np.unique(key, return_inverse=True)
    lo = np.full(inv.max() + 1, np.iinfo(np.int64).max)
    hi = np.full(inv.max() + 1, np.iinfo(np.int64).min)
    np.minimum.at(lo, inv, val)
    np.maximum.at(hi, inv, val)
    return (lo == hi)[inv]


def validate_fibration(fib: CompatibleFibrationData) -> ValidationReport:
    """Check the five compatible-fibration axioms and goodness."""
    model = fib.model
    recs: list[dict] = []

    def rec(axiom, pair, ok, witness=None):
        recs.append({"axiom": axiom, "pair": list(pair), "status": "pass" if ok else "fail",
                     "witness_site": None if ok else witness})

    cover = np.zeros(model.shape, dtype=bool)
    for c in fib.charts:
        cover |= c.region
    missing = fib.domain & ~cover
    rec("cover", (), not missing.any(), _first_site(model, missing))

    for c in fib.charts:
        lab = fib.labels(c.id)
        counts = np.bincount(lab[c.region].ravel(), minlength=model.n_sites)
        sizes = counts[lab[c.region]]
        bad = sizes != len(fib.offsets(c.id))
        wit = None
        if bad.any():
            wit = _first_site(model, np.isin(lab, lab[c.region][bad]) & c.region)
        rec("bundle", (c.id,), not bad.any(), wit)

    good = True
    for a, b in fib.overlapping_pairs():
        ov = a.region & b.region
        la, lb = fib.labels(a.id), fib.labels(b.id)
        off_ab = intersect_offsets(fib.offsets(a.id), fib.offsets(b.id))
        lab_ab = orbit_labels(model, off_ab)
        pair = (a.id, b.id)

        viol = (saturate(ov, la) | saturate(ov, lb)) & ~ov
        rec("overlap-saturation", pair, not viol.any(), _first_site(model, viol))

        # overlap bundle: every pi_a fiber in the overlap holds the same number
        # of pi_ab fibers, and pi_ab fibers refine both projections
        sub_a = _constant_within(lab_ab[ov], la[ov]) & _constant_within(lab_ab[ov], lb[ov])
        n_sub = np.bincount(np.unique(np.stack([lab_ab[ov], la[ov]]), axis=1)[1], minlength=model.n_sites)
        ratio = len(fib.offsets(a.id)) // max(len(off_ab), 1)
        uniform = np.all(n_sub[la[ov]] == ratio)
        ok4 = bool(sub_a.all() and uniform)
        wit4 = None if ok4 else _first_site(model, ov)
        rec("overlap-bundle", pair, ok4, wit4)

        # fiber intersection: orbit_a(x) cap orbit_b(x) = orbit_ab(x)
        key = la[ov].astype(np.int64) * model.n_sites + lb[ov]
        inter_ok = _constant_within(key, lab_ab[ov]) & _constant_within(lab_ab[ov], key)
        full_bad = np.zeros(model.shape, dtype=bool)
        full_bad[ov] = ~inter_ok
        rec("fiber-intersection", pair, bool(inter_ok.all()), _first_site(model, full_bad))

        b_in_a = _constant_within(lb[ov], la[ov])
        a_in_b = _constant_within(la[ov], lb[ov])
        nest = b_in_a | a_in_b
        nb = np.zeros(model.shape, dtype=bool)
        nb[ov] = ~nest
        rec("nesting", pair, bool(nest.all()), _first_site(model, nb))
        good &= bool(nest.all())

    valid = all(r["status"] == "pass" for r in recs if r["axiom"] != "nesting")
    return ValidationReport(recs, valid, valid and good)


# ---------------------------------------------------------------------------
# admissible coverings


def is_admissible(fib: CompatibleFibrationData, regions: Mapping[str, np.ndarray], cover: bool = True) -> bool:
    """``V'_a ⊆ V_a`` and ``V'_a ∩ V_b`` saturated under every ``pi_b``."""
    total = fib.model.empty()
    for a in fib.charts:
        va = np.asarray(regions[a.id], dtype=bool)
        if np.any(va & ~a.region):
            return False
        total |= va
        for b in fib.charts:
            part = va & b.region
            if np.any(saturate(part, fib.labels(b.id)) & ~part):
                return False
    return bool(np.all(total[fib.domain])) if cover else True


def saturate_cover(fib: CompatibleFibrationData, seeds: Mapping[str, np.ndarray]) -> dict[str, np.ndarray]:
    """Grow seeds ``W_a ⊆ V_a`` to an admissible family.

    One pass over the rank-ordered charts; for good fibrations one pass is
    already closed, otherwise passes repeat until nothing changes.
    """
    out = {}
    for a in fib.charts:
        if a.id not in seeds:
            raise ConstructionError(f"no seed for chart {a.id}")
        w = np.array(seeds[a.id], dtype=bool)
        if w.shape != fib.model.shape:
            raise ConstructionError(f"seed for {a.id} has wrong shape")
        if np.any(w & ~a.region):
            raise ConstructionError(f"seed for {a.id} is not contained in its chart")
        while True:
            before = w.copy()
            for k in fib.charts:
                w = saturate(w & k.region, fib.labels(k.id)) | w
            if np.array_equal(before, w):
                break
        out[a.id] = w
    return out


def saturated_interior(fib: CompatibleFibrationData, cid: str, mask: np.ndarray) -> np.ndarray:
    """Largest ``pi_cid``-saturated subset of ``mask``."""
    lab = fib.labels(cid)
    return ~saturate(~np.asarray(mask, dtype=bool), lab)


def default_inner_regions(fib: CompatibleFibrationData, margin: int = 1) -> dict[str, np.ndarray]:
    """Saturate the ``margin``-step erosions of the charts into an admissible cover."""
    seeds = {c.id: saturated_interior(fib, c.id, fib.model.erode(c.region, margin) & c.region)
             for c in fib.charts}
    inner = saturate_cover(fib, seeds)
    total = fib.model.empty()
    for v in inner.values():
        total |= v
    if not np.all(total[fib.domain]):
        raise ConstructionError(f"eroded charts do not cover the model at margin {margin}")
    return inner


def middle_regions(fib: CompatibleFibrationData, margin: int = 1) -> dict[str, np.ndarray]:
    """``V''``: saturated ``margin``-erosion of each chart, required to contain ``V'``."""
    if fib.inner_regions is None:
        raise ConstructionError("fibration has no inner regions")
    out = {}
    for c in fib.charts:
        vpp = saturated_interior(fib, c.id, fib.model.erode(c.region, margin) & c.region)
        vp = fib.inner_regions[c.id]
        if np.any(vp & ~vpp):
            raise ConstructionError(f"chart {c.id}: inner region does not fit inside the {margin}-step erosion")
        out[c.id] = vpp
    return out


def default_cutoffs(fib: CompatibleFibrationData, margin: int = 1) -> dict[str, np.ndarray]:
    """``tau_a``: 1 on ``V'``, 1/2 on ``V'' minus V'``, 0 elsewhere."""
    mid = middle_regions(fib, margin)
    return {c.id: 0.5 * fib.inner_regions[c.id] + 0.5 * mid[c.id] for c in fib.charts}


# ---------------------------------------------------------------------------
# averaging


def fiber_mean(f: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Mean over orbits, broadcast back; identical value on every orbit site."""
    lab = labels.ravel()
    if f.dtype == object:
        sums: dict[int, Fraction] = {}
        cnt: dict[int, int] = {}
        for l, v in zip(lab.tolist(), f.ravel().tolist()):
            sums[l] = sums.get(l, 0) + v
            cnt[l] = cnt.get(l, 0) + 1
        out = np.empty(lab.size, dtype=object)
        for i, l in enumerate(lab.tolist()):
            out[i] = Fraction(sums[l]) / cnt[l]
        return out.reshape(f.shape)
    s = np.bincount(lab, weights=f.ravel(), minlength=lab.size)
    c = np.bincount(lab, minlength=lab.size)
    return (s / np.maximum(c, 1))[lab].reshape(f.shape)


def average(fib: CompatibleFibrationData, f: np.ndarray,
            cutoffs: Mapping[str, np.ndarray] | None = None) -> np.ndarray:
    """``I = I_1 ∘ ... ∘ I_n`` with ``I_a f = (1 - tau_a) f + tau_a * mean_a f``.

    The largest-rank chart acts first.  Object arrays of ``Fraction`` are
    averaged exactly.
    """
    f = np.asarray(f)
    if f.shape != fib.model.shape:
        raise ConstructionError(f"field shape {f.shape} != model shape {fib.model.shape}")
    if cutoffs is None:
        cutoffs = default_cutoffs(fib)
    g = f.copy()
    for c in reversed(fib.charts):
        tau = np.asarray(cutoffs[c.id])
        if tau.shape != fib.model.shape:
            raise ConstructionError(f"cutoff for {c.id} has wrong shape")
        if g.dtype == object:
            tau = np.vectorize(Fraction, otypes=[object])(tau)
            mean = fiber_mean(np.where(c.region, g, Fraction(0)).astype(object), fib.labels(c.id))
            g = np.where(c.region, (1 - tau) * g + tau * mean, g)
        else:
            mean = fiber_mean(np.where(c.region, g, 0.0), fib.labels(c.id))
            g = np.where(c.region & (tau != 0), (1 - tau) * g + tau * mean, g)
    return g


def default_bump_seeds(fib: CompatibleFibrationData) -> dict[str, np.ndarray]:
    """Tent functions on ``V'`` (erosion depth + 1), normalised to sum 1."""
    if fib.inner_regions is None:
        raise ConstructionError("fibration has no inner regions")
    psi = {}
    for c in fib.charts:
        v = fib.inner_regions[c.id]
        depth = np.zeros(fib.model.shape)
        cur = v.copy()
        while cur.any():
            depth += cur
            nxt = fib.model.erode(cur, 1) & cur
            if np.array_equal(nxt, cur):
                break
            cur = nxt
        psi[c.id] = depth
    total = sum(psi.values())
    if np.any(total[fib.domain] == 0):
        raise ConstructionError("inner regions do not cover the model")
    return {k: np.where(total > 0, p / np.where(total > 0, total, 1), 0.0) for k, p in psi.items()}


def admissible_partition_of_unity(fib: CompatibleFibrationData, bump_seeds: Mapping[str, np.ndarray],
                                  cutoffs: Mapping[str, np.ndarray] | None = None,
                                  tol: float = 1e-12) -> dict[str, np.ndarray]:
    """``rho_a = I(phi_a) / sqrt(sum_b I(phi_b)^2)``."""
    if fib.inner_regions is None:
        raise ConstructionError("fibration has no inner regions")
    total = np.zeros(fib.model.shape)
    for c in fib.charts:
        phi = np.asarray(bump_seeds[c.id], dtype=float)
        if phi.shape != fib.model.shape:
            raise ConstructionError(f"bump seed for {c.id} has wrong shape")
        if np.any(phi < -tol):
            raise ConstructionError(f"bump seed for {c.id} is negative")
        if np.any((phi != 0) & ~fib.inner_regions[c.id]):
            raise ConstructionError(f"bump seed for {c.id} leaves its inner region")
        total += phi
    if np.any(np.abs(total[fib.domain]) <= tol):
        raise ConstructionError("bump seeds sum to 0 somewhere")
    if np.max(np.abs(total[fib.domain] - 1)) > 1e-9:
        raise ConstructionError("bump seeds do not sum to 1")
    avg = {c.id: average(fib, np.asarray(bump_seeds[c.id], dtype=float), cutoffs) for c in fib.charts}
    norm = np.sqrt(sum(v * v for v in avg.values()))
    if np.any(norm[fib.domain] <= tol):
        raise ConstructionError("averaged seeds vanish simultaneously")
    return {k: np.where(norm > 0, v / np.where(norm > 0, norm, 1), 0.0) for k, v in avg.items()}


def restrict(fib: CompatibleFibrationData, region: np.ndarray) -> CompatibleFibrationData:
    """Restriction to an admissible region (charts cut down, domain replaced)."""
    region = np.asarray(region, dtype=bool)
    charts = [Chart(c.id, c.region & region, c.fiber) for c in fib.charts if np.any(c.region & region)]
    inner = None
    if fib.inner_regions is not None:
        inner = {c.id: fib.inner_regions[c.id] & region for c in charts}
    return CompatibleFibrationData(fib.model, tuple(charts), inner, region)


# ---------------------------------------------------------------------------
# good open cover from stabilizer data


@dataclass(frozen=True, eq=False)
class StabilizerAssignment:
    """Stabilizer lattice ``H_1..H_m`` (reverse-inclusion order) and per-site index."""

    subgroups: tuple[FiberSubgroup, ...]
    per_site: np.ndarray

    def __post_init__(self):
        ps = np.array(self.per_site, dtype=np.int64)
        ps.flags.writeable = False
        object.__setattr__(self, "per_site", ps)
        m = len(self.subgroups)
        if ps.size and (ps.min() < 0 or ps.max() >= m):
            raise ConstructionError("per-site stabilizer index out of range")
        for i, j in itertools.product(range(m), repeat=2):
            if i > j and self.subgroups[i].contains(self.subgroups[j]) and not self.subgroups[j].contains(self.subgroups[i]):
                raise ConstructionError(f"subgroup order violates reverse inclusion at ({j}, {i})")


def good_open_cover(model: DiscreteModel, stab: StabilizerAssignment, margin: int = 1) -> dict[int, np.ndarray]:
    """Orbit-saturated cover ``{V_H}`` with ``x in V_H => G_x ⊆ H`` and nested overlaps.

    Orbits are the full-torus slices over each base site.  For ``i`` in order,
    ``K_i`` is the fixed-point stratum of ``H_i`` and
    ``L_i`` the union of the provisional ``V_j`` (``j < i``, ``H_i ⊄ H_j``);
    ``V_i`` is then the ``margin``-dilation of ``K_i`` kept inside
    ``{G_x ⊆ H_i} minus L_i``.  Provisional sets shrink by ``margin`` per step
    so earlier exclusions remain valid.
    """
    ps = stab.per_site
    if ps.shape != model.shape:
        raise ConstructionError(f"stabilizer map shape {ps.shape} != model {model.shape}")
    orbit_lab = orbit_labels(model, FiberSubgroup.full(model.torus_dims).offsets(model.torus_grids)) \
        if model.torus_dims else np.arange(model.n_sites).reshape(model.shape)
    if not np.all(_constant_within(orbit_lab.ravel(), ps.ravel())):
        raise ConstructionError("stabilizer assignment is not constant on orbits")
    m = len(stab.subgroups)
    H = stab.subgroups
    sub = [[H[i].contains(H[j]) for j in range(m)] for i in range(m)]  # sub[i][j]: H_j ⊆ H_i
    allowed = [np.isin(ps, [j for j in range(m) if sub[i][j]]) for i in range(m)]
    K = [ps == i for i in range(m)]

    def provisional(i: int, level: int) -> np.ndarray:
        # V_i^{(level)} before exclusion: dilation radius shrinks with level
        return model.dilate(K[i], margin * (m - level + 1))

    V: dict[int, np.ndarray] = {}
    chains: dict[int, list[np.ndarray]] = {}
    for i in range(m):
        L = model.empty()
        for j in range(i):
            if not sub[j][i]:
                L |= chains[j][i]
        chain = {}
        for level in range(i, m + 1):
            chain[level] = provisional(i, level) & allowed[i] & ~L
        chains[i] = chain
        V[i] = chain[m]
        if np.any(K[i] & ~V[i]):
            raise ConstructionError(f"stratum {i} is excluded by earlier neighbourhoods; refine the grid")
    return {i: v for i, v in V.items() if v.any()}


def check_good_cover(model: DiscreteModel, stab: StabilizerAssignment, cover: Mapping[int, np.ndarray]) -> dict[str, bool]:
    """Exhaustive check of cover, saturation, stabilizer bound and nesting."""
    H = stab.subgroups
    orbit_lab = orbit_labels(model, FiberSubgroup.full(model.torus_dims).offsets(model.torus_grids)) \
        if model.torus_dims else np.arange(model.n_sites).reshape(model.shape)
    total = model.empty()
    sat = bound = nested = True
    for i, v in cover.items():
        total |= v
        sat &= not np.any(saturate(v, orbit_lab) & ~v)
        for j in np.unique(stab.per_site[v]):
            bound &= H[i].contains(H[int(j)])
    for i, j in itertools.combinations(cover, 2):
        if np.any(cover[i] & cover[j]):
            nested &= H[i].contains(H[j]) or H[j].contains(H[i])
    return {"cover": bool(total.all()), "saturated": bool(sat), "stabilizer": bool(bound), "nested": bool(nested)}


# ---------------------------------------------------------------------------
# acyclicity certificate


@dataclass
class CertReport:
    certified: bool
    records: list[dict]


def _frac(x) -> Fraction:
    return x if isinstance(x, Fraction) else Fraction(x).limit_denominator(10**12)


def _segment_hits_lattice(a: Sequence[Fraction], b: Sequence[Fraction]) -> bool:
    """Does ``(1-s)a + s b`` meet ``Z^r`` for some ``s in [0,1]``."""
    cands: set[Fraction] | None = None
    for ai, bi in zip(a, b):
        d = bi - ai
        if d == 0:
            if ai.denominator != 1:
                return False
            continue
        lo, hi = min(ai, bi), max(ai, bi)
        pts = {(k - ai) / d for k in range(math.ceil(lo), math.floor(hi) + 1)}
        cands = pts if cands is None else cands & pts
        if not cands:
            return False
    return True


def acyclicity_certificate(fib: CompatibleFibrationData, holonomy: Mapping[str, np.ndarray]) -> CertReport:
    """Certify a flat-torus system strongly acyclic.

    ``holonomy[chart]`` has shape ``model.shape + (rank,)`` (the trailing axis
    may be dropped for rank 1) and must be constant along the chart's fibers.
    Condition 1: no fiber has an all-integer holonomy.  Condition 2: on each
    overlap the fibers nest; charts sharing a fiber subgroup must keep every
    convex combination of their holonomies off the integer lattice.
    """
    model = fib.model
    recs: list[dict] = []
    hol = {}
    for c in fib.charts:
        if c.id not in holonomy:
            raise ConstructionError(f"missing holonomy for chart {c.id}")
        h = np.asarray(holonomy[c.id], dtype=float)
        if h.shape == model.shape:
            h = h[..., None]
        if h.shape != model.shape + (c.fiber.rank,):
            raise ConstructionError(f"holonomy for {c.id} has shape {h.shape}")
        if np.any(~np.isfinite(h[c.region])):
            raise ConstructionError(f"missing holonomy datum in chart {c.id}")
        lab = fib.labels(c.id)
        for k in range(h.shape[-1]):
            col = h[..., k]
            if not np.allclose(fiber_mean(np.where(c.region, col, 0.0), lab)[c.region], col[c.region], atol=1e-12):
                raise ConstructionError(f"holonomy for {c.id} varies along a fiber")
        hol[c.id] = h
        if c.fiber.rank == 0:
            recs.append({"condition": 1, "chart": c.id, "status": "fail", "witness_site": _first_site(model, c.region)})
            continue
        near_int = np.all(np.abs(h - np.round(h)) < 1e-12, axis=-1) & c.region
        recs.append({"condition": 1, "chart": c.id, "status": "fail" if near_int.any() else "pass",
                     "witness_site": _first_site(model, near_int)})

    for a, b in fib.overlapping_pairs():
        ov = a.region & b.region
        la, lb = fib.labels(a.id), fib.labels(b.id)
        nest = _constant_within(lb[ov], la[ov]) | _constant_within(la[ov], lb[ov])
        status = "pass" if nest.all() else "fail"
        witness = None
        if nest.all() and a.fiber.contains(b.fiber) and b.fiber.contains(a.fiber):
            # same fibers with possibly different flat data: scan the segment
            for flat in np.flatnonzero(ov.ravel()):
                idx = model.site(int(flat))
                ha = [_frac(v) for v in hol[a.id][idx]]
                hb = [_frac(v) for v in hol[b.id][idx]]
                if _segment_hits_lattice(ha, hb):
                    status, witness = "fail", list(idx)
                    break
        elif not nest.all():
            bad = np.zeros(model.shape, dtype=bool)
            bad[ov] = ~nest
            witness = _first_site(model, bad)
        recs.append({"condition": 2, "pair": [a.id, b.id], "status": status, "witness_site": witness})
    ok = all(r["status"] == "pass" for r in recs)
    return CertReport(ok, recs)
