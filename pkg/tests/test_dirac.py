import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import linalg as sla, sparse
from scipy.integrate import solve_ivp

from locindex.dirac import (
    CylinderModel, DiscModel, HermitianOperator, anticommutation_residual, assemble_cylinder, assemble_cylinder_full,
    assemble_disc, assemble_flat_family, deform, fiber_rotation, sine_profile, tensor_product,
)
from locindex.errors import ConstructionError


def _rand_vec(rng, n):
    return rng.normal(size=n) + 1j * rng.normal(size=n)


@pytest.mark.parametrize("model", [CylinderModel(-0.5, 2.5, 60, 0.0), CylinderModel(-0.5, 2.5, 60, 7.0),
                                   DiscModel(0.6, 50, 0.0), DiscModel(0.6, 50, 12.0)])
def test_self_adjoint_and_odd(model):
    fam = assemble_cylinder(model) if isinstance(model, CylinderModel) else assemble_disc(model)
    rng = np.random.default_rng(0)
    for _, op in fam:
        assert op.hermiticity_residual() < 1e-12
        assert op.oddness_residual() == 0.0
        # exact summation by parts on the lattice
        s, s2 = _rand_vec(rng, op.dimension), _rand_vec(rng, op.dimension)
        lhs = np.vdot(op.matrix @ s, s2)
        rhs = np.vdot(s, op.matrix @ s2)
        assert abs(lhs - rhs) <= 1e-12 * max(abs(lhs), 1.0)


@pytest.mark.parametrize("lo,hi,inside", [(-0.5, 2.5, {0, 1, 2}), (0.3, 0.7, set()), (-1.2, 0.4, {-1, 0})])
def test_mode_dimension_difference(lo, hi, inside):
    fam = assemble_cylinder(CylinderModel(lo, hi, 41, 0.0))
    for m, op in fam:
        assert op.dim_even - op.dim_odd == (1 if m in inside else 0)


def test_disc_dimension_difference():
    fam = assemble_disc(DiscModel(0.6, 40, 0.0))
    for m, op in fam:
        assert op.dim_even - op.dim_odd == (1 if m == 0 else 0)


def test_integer_window_end_rejected():
    with pytest.raises(ConstructionError):
        CylinderModel(0.0, 2.5, 40, 1.0)
    with pytest.raises(ConstructionError):
        CylinderModel(-0.5, 2.0, 40, 1.0)
    with pytest.raises(ConstructionError):
        DiscModel(1.5, 40, 0.0)


def test_deformation_is_affine_in_t():
    m0 = CylinderModel(-0.5, 1.5, 30, 0.0)
    base = assemble_cylinder(m0)
    d1 = deform(base, sine_profile, 1.0)
    d5 = deform(base, sine_profile, 5.0)
    for a, b, c in zip(base.ops, d1.ops, d5.ops):
        diff = c.matrix - (a.matrix + 5 * (b.matrix - a.matrix))
        assert abs(diff).max() < 1e-9


def test_deform_matches_model_t():
    a = assemble_cylinder(CylinderModel(-0.5, 1.5, 30, 3.0))
    b = deform(assemble_cylinder(CylinderModel(-0.5, 1.5, 30, 0.0)), sine_profile, 3.0)
    for x, y in zip(a.ops, b.ops):
        assert abs(x.matrix - y.matrix).max() < 1e-12


def test_triplet_roundtrip():
    op = assemble_cylinder(CylinderModel(-0.5, 1.5, 20, 2.0)).ops[2]
    back = HermitianOperator.from_triplets(op.to_triplets())
    assert abs(back.matrix - op.matrix).max() < 1e-15
    assert np.array_equal(back.even, op.even)


def test_full_operator_is_mode_block_diagonal():
    model = CylinderModel(-0.5, 1.5, 30, 4.0)
    full = assemble_cylinder_full(model)
    fam = assemble_cylinder(model)
    blocks = []
    for _, op in fam:
        perm = np.r_[np.flatnonzero(op.even), np.flatnonzero(~op.even)]
        blocks.append(op.matrix.toarray()[np.ix_(perm, perm)])
    assert np.allclose(full.dense(), sla.block_diag(*blocks), atol=1e-12)
    modes = full.meta["mode_of"]
    F = full.dense()
    assert np.all(F[modes[:, None] != modes[None, :]] == 0)
    # rotation invariance: the fiber rotation commutes with D
    U = fiber_rotation(full, 0.37)
    assert abs(U @ full.matrix - full.matrix @ U).max() < 1e-12


def _kernel_u(op):
    B = op.odd_block().toarray()
    ns = sla.null_space(B)
    assert ns.shape[1] == 1
    u = ns[:, 0]
    return u / u[np.argmax(np.abs(u))]


@pytest.mark.parametrize("t", [0.0, 3.0])
def test_cylinder_kernel_against_shooting(t):
    # the zero mode of D^+ on mode m solves u' = -2 pi (r - m)(1 + t rho^2) u
    model = CylinderModel(-0.5, 1.5, 801, t)
    fam = assemble_cylinder(model)
    op = dict(iter(fam))[1]
    u = _kernel_u(op)
    r = op.coords[op.even]
    rhs = lambda x, y: -2 * np.pi * (x - 1) * (1 + t * sine_profile(x) ** 2) * y
    sol = solve_ivp(rhs, (r[0], r[-1]), [1.0], t_eval=r, rtol=1e-11, atol=1e-14)
    ref = sol.y[0] / np.max(np.abs(sol.y[0]))
    phase = u / np.abs(u)
    assert np.allclose(phase, phase[0])
    assert np.max(np.abs(np.abs(u) - ref)) < 5e-4


def test_disc_kernel_against_shooting():
    model = DiscModel(0.6, 801, 2.0)
    fam = assemble_disc(model)
    op = dict(iter(fam))[0]
    u = _kernel_u(op)
    r = op.coords[op.even]
    prof = model.deformation_profile()
    rhs = lambda x, y: -2 * np.pi * x * (1 + 2.0 * prof(x) ** 2) * y
    sol = solve_ivp(rhs, (r[0], r[-1]), [1.0], t_eval=r, rtol=1e-11, atol=1e-14)
    ref = sol.y[0] / np.max(np.abs(sol.y[0]))
    assert np.max(np.abs(np.abs(u) - ref)) < 5e-4


def test_kernel_converges_second_order():
    errs = []
    for n in (101, 201, 401):
        op = dict(iter(assemble_cylinder(CylinderModel(-0.5, 1.5, n, 0.0))))[1]
        u = np.abs(_kernel_u(op))
        r = op.coords[op.even]
        ref = np.exp(-np.pi * (r - 1) ** 2) / np.exp(-np.pi * (r[np.argmax(u)] - 1) ** 2)
        errs.append(np.max(np.abs(u - ref)))
    assert errs[1] < errs[0] / 3 and errs[2] < errs[1] / 3


def test_tensor_product_anticommutes():
    a = assemble_cylinder(CylinderModel(-0.5, 0.5, 12, 1.0)).ops[1]
    b = assemble_cylinder(CylinderModel(0.5, 1.5, 10, 0.0)).ops[2]
    assert anticommutation_residual(a, b) < 1e-12
    p = tensor_product(a, b)
    assert p.hermiticity_residual() < 1e-12
    assert p.oddness_residual() == 0.0
    assert p.dim_even - p.dim_odd == (a.dim_even - a.dim_odd) * (b.dim_even - b.dim_odd)


def test_tensor_guard():
    a = assemble_cylinder(CylinderModel(-0.5, 0.5, 600, 0.0)).ops[0]
    with pytest.raises(ConstructionError):
        tensor_product(a, a)


def test_flat_family_blocks():
    r = np.linspace(0, 1, 5)
    A, B = assemble_flat_family(0.25, 0.75, r, 2)
    assert A.hermiticity_residual() == 0 and A.oddness_residual() == 0
    # mode n block eigenvalues are +-2 pi |n + f|
    ev = np.sort(np.abs(np.linalg.eigvalsh(A.dense())))
    want = np.sort(np.repeat(2 * np.pi * np.abs(np.arange(-2, 3) + 0.25), 2 * r.size))
    assert np.allclose(ev, want)


@settings(max_examples=25, deadline=None)
@given(st.floats(-3.3, 3.3), st.floats(0.2, 2.8), st.floats(0.0, 10.0))
def test_index_is_number_of_integers_in_window(lo, width, t):
    hi = lo + width
    if abs(lo - round(lo)) < 1e-3 or abs(hi - round(hi)) < 1e-3:
        return
    fam = assemble_cylinder(CylinderModel(lo, hi, 24, t))
    total = sum(op.dim_even - op.dim_odd for op in fam.ops)
    assert total == len(range(int(np.ceil(lo)), int(np.floor(hi)) + 1))
