import math

import numpy as np
import pytest
from scipy import sparse

from locindex.dirac import CylinderModel, DiscModel, HermitianOperator, assemble_cylinder, assemble_disc
from locindex.errors import ConstructionError
from locindex.fiber_oracle import FlatTorusFiber
from locindex.spectral import (
    Spectrum, cluster_superdims, deformation_scan, excision_sum, graded_index, index_from_spectra, low_spectrum,
    product_check, spectral_gap,
)

WINDOWS = {0: (0.25, 0.75), 1: (0.5, 1.5), 2: (-0.5, 1.5), 3: (-0.5, 2.5), 5: (-0.5, 4.5)}


def test_diagonal_matrix_spectrum():
    # D = [[0, B^*],[B, 0]] with B = diag(1, 2, 3): D^2 eigenvalues 1, 4, 9 twice
    B = sparse.diags([1.0, 2.0, 3.0])
    mat = sparse.bmat([[None, B.getH()], [B, None]])
    op = HermitianOperator(mat, np.array([True] * 3 + [False] * 3))
    spec = low_spectrum(op)
    assert np.allclose(spec.values, [1, 1, 4, 4, 9, 9])
    assert spec.even.sum() == 3


def test_k_larger_than_dimension():
    op = assemble_cylinder(CylinderModel(0.25, 0.75, 10, 0.0)).ops[0]
    with pytest.raises(ConstructionError):
        low_spectrum(op, op.dimension + 1)


def test_dense_vs_lanczos_1500():
    op = dict(iter(assemble_cylinder(CylinderModel(-0.5, 2.5, 1500, 50.0))))[1]
    assert 1400 <= op.dimension <= 1600
    d = low_spectrum(op, 8, "dense")
    l = low_spectrum(op, 8, "lanczos")
    assert np.allclose(d.values, l.values, rtol=1e-7, atol=1e-7 * d.norm * 1e-3)
    # paired eigenvalues may come back in either parity order
    assert d.even.sum() == l.even.sum()
    assert l.residual <= 1e-8 * max(l.norm, 1.0)


def test_plain_lanczos_path():
    op = dict(iter(assemble_cylinder(CylinderModel(-0.5, 1.5, 200, 0.0))))[4]
    d = low_spectrum(op, 4, "dense")
    l = low_spectrum(op, 4, "lanczos", shift=None)
    assert np.allclose(d.values, l.values, rtol=1e-7)


def test_far_mode_respects_analytic_bound():
    model = CylinderModel(0.25, 0.75, 200, 0.0)
    for m, op in assemble_cylinder(model):
        if m in (-2, 2, 3):
            assert low_spectrum(op, 1).values[0] >= model.window_bound(m) * (1 - 1e-9)


def test_d_spectrum_symmetric():
    op = dict(iter(assemble_cylinder(CylinderModel(-0.5, 2.5, 120, 10.0))))[1]
    ev = np.linalg.eigvalsh(op.dense())
    nz = ev[np.abs(ev) > 1e-8]
    assert np.allclose(np.sort(nz), np.sort(-nz), atol=1e-9)


def test_nonzero_clusters_have_zero_superdim():
    for _, op in assemble_cylinder(CylinderModel(-0.5, 1.5, 80, 20.0)):
        for lam, sd in cluster_superdims(low_spectrum(op)):
            assert sd == 0


@pytest.mark.parametrize("k", sorted(WINDOWS))
def test_cylinder_index(k):
    rep = graded_index(assemble_cylinder(CylinderModel(*WINDOWS[k], 400, 50.0)))
    assert rep.reliable and rep.gap_ratio >= 10
    assert rep.super_dim == k


def test_acyclic_window_bounded_below():
    model = CylinderModel(0.25, 0.75, 400, 50.0)
    fam = assemble_cylinder(model)
    smallest = min(low_spectrum(op, 1).values[0] for op in fam.ops)
    bound = min(model.window_bound(m) for m in fam.modes)
    assert smallest >= 0.5 * bound


def test_disc_index():
    assert graded_index(assemble_disc(DiscModel(0.5, 300, 50.0))).super_dim == 1


def test_unreliable_with_huge_floor():
    rep = graded_index(assemble_cylinder(CylinderModel(-0.5, 1.5, 60, 50.0)), gap_floor=1e30)
    assert not rep.reliable and rep.super_dim is None and rep.lambda_cut is None


def test_explicit_cut():
    fam = assemble_cylinder(CylinderModel(-0.5, 1.5, 100, 50.0))
    rep = graded_index(fam, lambda_cut=1.0)
    assert rep.super_dim == 2 and rep.lambda_cut == 1.0


def test_report_record_keys():
    rec = graded_index(assemble_cylinder(CylinderModel(0.5, 1.5, 60, 50.0))).to_record()
    assert set(rec) == {"model", "t", "lambda_cut", "gap_ratio", "dim_even", "dim_odd", "super_dim", "reliable"}


def test_index_from_empty_spectra():
    assert not index_from_spectra([]).reliable
    # a lone sentinel: positive spectrum with no near-kernel counts as zero
    s = Spectrum(np.array([5.0, 5.0]), np.array([True, False]), 10.0)
    rep = index_from_spectra([s])
    assert rep.reliable and rep.super_dim == 0


@pytest.mark.parametrize("k", [1, 3])
def test_grid_convergence(k):
    dims = {graded_index(assemble_cylinder(CylinderModel(*WINDOWS[k], n, 50.0))).super_dim for n in (100, 200, 400)}
    assert dims == {k}


def test_disc_grid_convergence():
    dims = {graded_index(assemble_disc(DiscModel(0.5, n, 50.0))).super_dim for n in (150, 300, 600)}
    assert dims == {1}


def test_gap_everything_acyclic():
    fam = assemble_cylinder(CylinderModel(0.25, 0.75, 100, 50.0))
    cert = spectral_gap(fam, lambda r: np.ones(r.shape, bool))
    assert cert.certified and cert.lambda_0_estimate > 0


def test_gap_away_from_bs_fibers():
    fam = assemble_cylinder(CylinderModel(-0.5, 2.5, 150, 50.0))
    away = spectral_gap(fam, lambda r: np.abs(r - np.round(r)) > 0.3)
    assert away.certified and away.lambda_0_estimate > 1.0
    rep = graded_index(fam)
    assert rep.super_dim == 3 and rep.lambda_cut < away.lambda_0_estimate


def test_gap_with_bs_fiber_at_t0():
    fam = assemble_cylinder(CylinderModel(-2.5, 4.5, 200, 0.0))
    cert = spectral_gap(fam, lambda r: np.abs(r - 1) < 1.4)
    assert cert.lambda_0_estimate < 1e-3


def test_gap_errors():
    op = assemble_cylinder(CylinderModel(0.25, 0.75, 20, 0.0)).ops[0]
    with pytest.raises(ConstructionError):
        spectral_gap(op, np.zeros(op.dimension, bool))
    with pytest.raises(ConstructionError):
        spectral_gap(op, np.ones(3, bool))


def test_deformation_scan_cylinder():
    res = deformation_scan(CylinderModel(-0.5, 2.5, 200, 0.0), [25, 50, 100])
    assert [r.super_dim for r in res.reports] == [3, 3, 3]
    assert res.consistent and res.t_star == 25


def test_deformation_scan_disc():
    res = deformation_scan(DiscModel(0.5, 200, 0.0), [25, 100])
    assert [r.super_dim for r in res.reports] == [1, 1]


def test_deformation_scan_all_unreliable():
    res = deformation_scan(CylinderModel(-0.5, 1.5, 60, 0.0), [1, 2], gap_floor=1e30)
    assert res.t_star is None and res.consistent
    assert all(not r.reliable for r in res.reports)


def test_excision_three_singles():
    out = excision_sum(CylinderModel(-0.5, 2.5, 300, 50.0), [(-0.5, 0.5), (0.5, 1.5), (1.5, 2.5)])
    assert out["equal"] and out["global"] == 3
    assert [p["super_dim"] for p in out["parts"]] == [1, 1, 1]


def test_excision_acyclic():
    out = excision_sum(CylinderModel(0.1, 0.9, 200, 50.0), [(0.25, 0.75)])
    assert out["equal"] and out["global"] == 0 and out["sum"] == 0


def test_excision_uneven():
    out = excision_sum(CylinderModel(-0.5, 1.8, 300, 50.0), [(-0.5, 1.5), (1.6, 1.8)])
    assert out["equal"] and [p["super_dim"] for p in out["parts"]] == [2, 0]


def test_excision_errors():
    m = CylinderModel(-0.5, 2.5, 60, 50.0)
    with pytest.raises(ConstructionError):
        excision_sum(m, [(-0.5, 1.0), (1.2, 2.5)])
    with pytest.raises(ConstructionError):
        excision_sum(m, [(-0.5, 0.5), (1.5, 2.5)])  # radius 1 uncovered


def test_product_with_acyclic_circle():
    out = product_check(CylinderModel(0.5, 1.5, 80, 50.0), FlatTorusFiber(1, (1 / 3,)), fiber_modes=2)
    assert out["fiber_kernel"] == [0, 0]
    assert out["reliable"] and out["combined"] == 0 and out["oracle"] == 0
    assert out["anticommutation_residual"] < 1e-10


def test_product_of_cylinders():
    out = product_check(CylinderModel(0.5, 1.5, 60, 50.0), CylinderModel(-0.5, 1.5, 120, 50.0))
    assert out["equal"] and out["combined"] == 2
    assert out["anticommutation_residual"] < 1e-10


def test_product_with_point():
    out = product_check(CylinderModel(-0.5, 1.5, 60, 50.0))
    assert out["equal"] and out["combined"] == 2


def test_product_untwisted_circle():
    # untwisted circle: kernel (1, 1), so the index vanishes again
    out = product_check(CylinderModel(0.5, 1.5, 60, 50.0), FlatTorusFiber(1, (0.0,)), fiber_modes=2)
    assert out["oracle"] == 0 and out["combined"] == 0
