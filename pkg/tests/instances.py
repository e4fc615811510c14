"""Random fibration instances and brute-force checks shared by the tests."""

from __future__ import annotations

import math
from fractions import Fraction
from itertools import product

import numpy as np

from locindex.errors import ConstructionError
from locindex.fibration import (
    Chart, CompatibleFibrationData, DiscreteModel, FiberSubgroup, StabilizerAssignment, admissible_partition_of_unity,
    average, check_good_cover, default_bump_seeds, default_cutoffs, default_inner_regions, good_open_cover,
    middle_regions, saturate, saturate_cover, validate_fibration,
)

GRIDS = (2, 3, 4, 6)


def brute_orbit(site, gens, grid, base_dims):
    """Orbit of a torus site by walking the subtorus with exact rationals.

    A grid point ``k`` lies on the orbit of ``x`` iff ``(k - x)/N`` is a
    rational combination of the generators modulo ``Z^n``.  We scan all grid
    points and solve that membership by brute force over integer lifts.
    """
    n = len(grid)
    x = site[base_dims:]
    out = set()
    for k in product(*(range(N) for N in grid)):
        d = [Fraction(k[i] - x[i], grid[i]) for i in range(n)]
        for lift in product(range(-3, 4), repeat=n):
            v = [d[i] + lift[i] for i in range(n)]
            if _in_span(v, gens):
                out.add(tuple(site[:base_dims]) + k)
                break
    return out


def _in_span(v, gens):
    if not gens:
        return all(c == 0 for c in v)
    from locindex.fibration import rational_rank
    return rational_rank(list(gens) + [v]) == len(gens)


def random_primitive(rng, n=2, box=2):
    while True:
        g = tuple(int(v) for v in rng.integers(-box, box + 1, size=n))
        if any(g) and math.gcd(*g) == 1:
            return g


def random_instance(rng, with_point_chart=None):
    """Nested edge/bulk (and optional point) charts on ``[0,1] x T^2``."""
    for _ in range(100):
        B = int(rng.integers(8, 14))
        grid = (int(rng.choice(GRIDS)), int(rng.choice(GRIDS)))
        model = DiscreteModel(((B, 0.0, 1.0),), grid)
        a = int(rng.integers(3, B - 3))
        try:
            g = FiberSubgroup((random_primitive(rng),), 2)
            charts = [Chart("edge", model.box([(0, a + 1)]), g),
                      Chart("bulk", model.box([(a - 1, B - 1)]), FiberSubgroup.full(2))]
            point = rng.random() < 0.5 if with_point_chart is None else with_point_chart
            if point:
                charts.append(Chart("point", model.box([(0, 2)]), FiberSubgroup.trivial(2)))
            return CompatibleFibrationData(model, tuple(charts))
        except ConstructionError:
            continue
    raise RuntimeError("no compatible instance found")


def random_stabilizers(rng):
    """Stabilizer strata along the base: full torus, a circle, trivial."""
    for _ in range(100):
        B = int(rng.integers(10, 16))
        grid = (int(rng.choice(GRIDS)), int(rng.choice(GRIDS)))
        model = DiscreteModel(((B, 0.0, 1.0),), grid)
        try:
            circle = FiberSubgroup((random_primitive(rng),), 2)
        except ConstructionError:
            continue
        subs = (FiberSubgroup.full(2), circle, FiberSubgroup.trivial(2))
        k0 = int(rng.integers(0, 2))
        k1 = int(rng.integers(k0 + 3, B - 3))
        per = np.full(model.shape, 2)
        per[model.box([(0, k0)])] = 0
        per[model.box([(k0 + 1, k1)])] = 1
        if rng.random() < 0.3:
            per[model.box([(B - 1, B - 1)])] = 0
        return model, StabilizerAssignment(subs, per)
    raise RuntimeError("no stabilizer instance found")


def sandwich_ok(fib, f, g, mid) -> bool:
    """Each site has a chart ``V''`` containing it whose fiber brackets ``I(f)``."""
    ok = np.zeros(fib.model.shape, dtype=bool)
    for c in fib.charts:
        lab = fib.labels(c.id).ravel()
        m = mid[c.id].ravel()
        lo = np.full(lab.size, np.inf)
        hi = np.full(lab.size, -np.inf)
        np.minimum.at(lo, lab, f.ravel())
        np.maximum.at(hi, lab, f.ravel())
        inside = m & (g.ravel() >= lo[lab] - 1e-12) & (g.ravel() <= hi[lab] + 1e-12)
        ok |= inside.reshape(fib.model.shape)
    return bool(ok.all())


def averaging_conditions(fib, rng) -> dict[str, bool]:
    """Conditions 1-5 of an averaging operation on random fields."""
    cut = default_cutoffs(fib)
    mid = middle_regions(fib)
    shape = fib.model.shape
    f = rng.random(shape) - 0.3
    g = average(fib, f, cut)
    res = {}
    # 1: admissible output
    adm = True
    for c in fib.charts:
        v = fib.inner_regions[c.id]
        lab = fib.labels(c.id)[v]
        vals = g[v]
        for l in np.unique(lab):
            w = vals[lab == l]
            adm &= bool(w.max() - w.min() <= 1e-12)
    res["admissible"] = adm
    res["constants"] = bool(np.allclose(average(fib, np.full(shape, 2.5), cut), 2.5, atol=1e-12, rtol=0))
    res["positivity"] = bool(average(fib, np.abs(f), cut).min() >= 0)
    res["sandwich"] = sandwich_ok(fib, f, g, mid)
    # 5: support stays inside V'_a
    sup = True
    for c in fib.charts:
        v = fib.inner_regions[c.id]
        h = np.where(v, rng.random(shape), 0.0)
        sup &= not np.any((average(fib, h, cut) != 0) & ~v)
    res["support"] = bool(sup)
    # linearity
    h = rng.random(shape)
    res["linear"] = bool(np.allclose(average(fib, 2 * f - 3 * h, cut), 2 * g - 3 * average(fib, h, cut), atol=1e-12))
    return res


def check_instance(fib, rng) -> dict[str, bool]:
    rep = validate_fibration(fib)
    res = {"valid": rep.valid, "good": rep.good}
    inner = default_inner_regions(fib)
    twice = saturate_cover(fib, inner)
    res["idempotent"] = all(np.array_equal(twice[k], inner[k]) for k in inner)
    for c in fib.charts:
        m = rng.random(fib.model.shape) < 0.2
        lab = fib.labels(c.id)
        s1 = saturate(m, lab)
        res["idempotent"] &= bool(np.array_equal(saturate(s1, lab), s1))
    fib2 = fib.with_inner(inner)
    res.update(averaging_conditions(fib2, rng))
    rho = admissible_partition_of_unity(fib2, default_bump_seeds(fib2))
    total = sum(r * r for r in rho.values())
    res["pou"] = bool(np.max(np.abs(total - 1)) <= 1e-12)
    return res


def check_stabilizer_instance(model, stab) -> dict[str, bool]:
    cover = good_open_cover(model, stab)
    return check_good_cover(model, stab, cover)
