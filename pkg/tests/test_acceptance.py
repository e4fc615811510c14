"""Acceptance criteria, one test each; every test prints a PASS/FAIL line."""

import random
import time
from fractions import Fraction

import numpy as np
import pytest

from instances import check_instance, check_stabilizer_instance, random_instance, random_stabilizers
from locindex.bsgeometry import (
    DelzantPolygon, QuotientStrip, STANDARD, bs_points_polytope, bs_points_strip, inventory_for, pick_oracle,
    random_delzant,
)
from locindex.calculus import closed_form_family, family_values, generate_system, rr1, rr_total, solve, symbols
from locindex.dirac import CylinderModel, DiscModel, assemble_cylinder, assemble_disc
from locindex.fiber_oracle import FlatTorusFiber, anticommutator_identity, torus_spectrum
from locindex.spectral import (
    cluster_superdims, deformation_scan, excision_sum, graded_index, low_spectrum, product_check,
)

WINDOWS = {0: (0.25, 0.75), 1: (0.5, 1.5), 2: (-0.5, 1.5), 3: (-0.5, 2.5), 5: (-0.5, 4.5)}


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
        assert ok, detail
    return emit


def test_criterion_1_cylinder_localization(report):
    t0 = time.perf_counter()
    got = {}
    ratios = {}
    for k, (lo, hi) in WINDOWS.items():
        rep = graded_index(assemble_cylinder(CylinderModel(lo, hi, 400, 50.0)))
        got[k] = rep.super_dim
        ratios[k] = rep.gap_ratio
    dt = time.perf_counter() - t0
    ok = all(got[k] == k for k in WINDOWS) and min(ratios.values()) >= 10 and dt < 30
    report(1, ok, f"super_dim {got}, min gap ratio {min(ratios.values()):.3g}, {dt:.2f}s")


def test_criterion_2_vanishing(report):
    t0 = time.perf_counter()
    model = CylinderModel(0.25, 0.75, 400, 50.0)
    fam = assemble_cylinder(model)
    rep = graded_index(fam)
    worst = min(low_spectrum(op, 1).values[0] / model.window_bound(m) for m, op in fam)
    dt = time.perf_counter() - t0
    ok = rep.super_dim == 0 and worst >= 0.5 and dt < 5
    report(2, ok, f"super_dim {rep.super_dim}, min lambda/bound {worst:.3f}, {dt:.2f}s")


def test_criterion_3_deformation_invariance(report):
    rows = {}
    for k, (lo, hi) in WINDOWS.items():
        res = deformation_scan(CylinderModel(lo, hi, 400, 0.0), [25, 50, 100])
        rows[k] = [r.super_dim for r in res.reports]
    ok = all(v == [k, k, k] for k, v in rows.items())
    report(3, ok, f"super_dim at t=25,50,100: {rows}")


def test_criterion_4_excision(report):
    out = excision_sum(CylinderModel(-0.5, 2.5, 400, 50.0), [(-0.5, 0.5), (0.5, 1.5), (1.5, 2.5)])
    parts = [p["super_dim"] for p in out["parts"]]
    ok = out["equal"] and out["global"] == 3 and parts == [1, 1, 1]
    report(4, ok, f"{out['global']} = {' + '.join(map(str, parts))}")


def test_criterion_5_disc(report):
    dims = {n: graded_index(assemble_disc(DiscModel(0.5, n, 50.0))).super_dim for n in (150, 300, 600)}
    ok = dims[300] == 1 and set(dims.values()) == {1}
    report(5, ok, f"super_dim by radial sites {dims}")


def test_criterion_6_product(report):
    one = product_check(CylinderModel(0.5, 1.5, 120, 50.0), FlatTorusFiber(1, (Fraction(1, 3),)))
    two = product_check(CylinderModel(0.5, 1.5, 120, 50.0), CylinderModel(-0.5, 1.5, 120, 50.0))
    res = max(one["anticommutation_residual"], two["anticommutation_residual"])
    ok = one["reliable"] and one["combined"] == 0 and two["equal"] and two["combined"] == 2 and res < 1e-10
    report(6, ok, f"(i) {one['combined']}, (ii) {two['factor_a']}*{two['factor_b']} -> {two['combined']}, "
                  f"residual {res:.2e}")


def test_criterion_7_calculus(report):
    table = solve(generate_system(10), 10)
    n0 = sum(table.values.get(s) == 1 for s in symbols(10) if s[0] == "RR0")
    n1 = sum(table.values.get(s) == 0 for s in symbols(10) if s[0] == "RR1")
    families = []
    for facts in (("square",), ("triangle",)):
        system = generate_system(10, facts)
        t = solve(system, 10)
        ok = t.consistent and len(t.free) == 1
        for p in (1, -3, Fraction(5, 2)):
            vals = family_values(t, {t.free[0]: p})
            g = vals[rr1(0, 1)]
            u = 1 if facts == ("square",) else 1 - g
            ok &= vals == closed_form_family(10, u, g) and all(r.evaluate(vals) == 0 for r in system)
        families.append(ok)
    ok = table.unique and n0 == 441 and n1 == 441 and all(families)
    report(7, ok, f"RR0=1 on {n0}/441, RR1=0 on {n1}/441, one-parameter families {families}")


def test_criterion_8_rr_equals_bs(report):
    table = solve(generate_system(10), 10)
    bad = []
    tri, sq = DelzantPolygon.from_vertices(STANDARD["triangle"]), DelzantPolygon.from_vertices(STANDARD["square"])
    for base, want in ((tri, 3), (sq, 4)):
        inv, _ = inventory_for(base)
        if not inv.count() == rr_total(inv, table) == want:
            bad.append(("standard", want))
    rng = random.Random(2024)
    for _ in range(50):
        s = QuotientStrip(rng.randint(-5, -1), rng.randint(1, 6), rng.randint(1, 6))
        inv, _ = inventory_for(s)
        if not inv.count() == rr_total(inv, table) == s.formula():
            bad.append((s.a, s.b, s.c))
    for _ in range(20):
        p = random_delzant(rng)
        inv, _ = inventory_for(p)
        if not inv.count() == rr_total(inv, table) == pick_oracle(p):
            bad.append(p.int_vertices)
    report(8, not bad, f"triangle 3, square 4, 50 strips, 20 polygons; mismatches {bad}")


def test_criterion_9_fibration_algebra(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(9)
    failures = []
    for i in range(100):
        res = check_instance(random_instance(rng), rng)
        res.update(check_stabilizer_instance(*random_stabilizers(rng)))
        bad = [k for k, v in res.items() if not v]
        if bad:
            failures.append((i, bad))
    dt = time.perf_counter() - t0
    report(9, not failures and dt < 10, f"100 instances, failures {failures}, {dt:.2f}s")


def test_criterion_10_fiber_identities(report):
    rng = np.random.default_rng(10)
    unpaired = 0
    for _ in range(50):
        k = int(rng.integers(1, 4))
        spec = torus_spectrum(FlatTorusFiber(k, tuple(rng.random(k))), 2)
        unpaired += sum(e != o for _, e, o in spec.entries)
    # the discretized operators pair as well: every nonzero cluster has zero super-dimension
    for _, op in assemble_cylinder(CylinderModel(-0.5, 2.5, 120, 50.0)):
        unpaired += sum(sd != 0 for _, sd in cluster_superdims(low_spectrum(op)))
    worst = 0.0
    for _ in range(20):
        k = int(rng.integers(1, 4))
        q, _ = np.linalg.qr(rng.normal(size=(k, k)))
        pa = q @ np.diag((rng.random(k) < 0.6).astype(float)) @ q.T
        pb = q @ np.diag((rng.random(k) < 0.6).astype(float)) @ q.T
        worst = max(worst, anticommutator_identity(FlatTorusFiber(k, tuple(rng.random(k))), pa, pb, 2))
    report(10, unpaired == 0 and worst < 1e-10, f"unpaired clusters {unpaired}, anticommutator residual {worst:.2e}")
