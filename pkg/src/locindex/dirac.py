"""Dirac-type operators on 2-D prequantized model manifolds.

The circle direction is diagonalised exactly by Fourier modes ``m``; only
the radial direction is discretised.  For each mode the radial operator is

    D^+ = -i (d/dr + phi_m(r)),     D = [[0, (D^+)^*], [D^+, 0]]

acting on ``(u, v)`` with ``u`` even and ``v`` odd.  For the cylinder
``phi_m(r) = 2 pi (r - m)`` (connection ``d - 2 pi i r dtheta``); for the disc
``phi_m(rho) = 2 pi (rho^2 - m) / rho``.  The deformation adds
``t * rho_a D_a rho_a`` where ``D_a`` is the zeroth-order (fiberwise) part.

Discretisation: a staggered 1-D lattice alternates ``u`` and ``v`` sites, so
the centred difference couples each ``v`` site to its two ``u`` neighbours and
there are no doubler modes.  At each end the component that the first-order
equation forces to vanish (by the sign of ``phi_m`` there) sits on the end
site and is set to zero.  This end rule is what carries the cylindrical-end
data into the finite matrix: it fixes ``dim u - dim v`` per mode, which is the
mode's index.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import sparse

from .errors import ConstructionError

Profile = Callable[[np.ndarray], np.ndarray]

TENSOR_GUARD = 200_000


def sine_profile(r: np.ndarray) -> np.ndarray:
    """``sin^2(pi r)``: vanishes quadratically at integers, flat at half-integers."""
    return np.sin(np.pi * np.asarray(r, dtype=float)) ** 2


def smoothstep(x: np.ndarray) -> np.ndarray:
    x = np.clip(np.asarray(x, dtype=float), 0.0, 1.0)
    return x * x * (3 - 2 * x)


# ---------------------------------------------------------------------------
# operator container


@dataclass(frozen=True, eq=False)
class HermitianOperator:
    """Sparse graded self-adjoint matrix.

    ``even`` marks even basis vectors.  ``coords`` (optional) holds the radial
    position of each basis vector and ``fiber_part`` the fiberwise operator
    ``D_a`` used by :func:`deform`.
    """

    matrix: sparse.csr_matrix
    even: np.ndarray
    coords: np.ndarray | None = None
    fiber_part: sparse.csr_matrix | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        mat = sparse.csr_matrix(self.matrix, dtype=complex)
        object.__setattr__(self, "matrix", mat)
        ev = np.asarray(self.even, dtype=bool)
        object.__setattr__(self, "even", ev)
        if mat.shape != (ev.size, ev.size):
            raise ConstructionError(f"matrix shape {mat.shape} does not match grading of size {ev.size}")

    @property
    def dimension(self) -> int:
        return self.even.size

    @property
    def dim_even(self) -> int:
        return int(self.even.sum())

    @property
    def dim_odd(self) -> int:
        return self.dimension - self.dim_even

    def hermiticity_residual(self) -> float:
        diff = self.matrix - self.matrix.getH()
        return float(abs(diff).max()) if diff.nnz else 0.0

    def oddness_residual(self) -> float:
        e = self.even
        blocks = [self.matrix[e][:, e], self.matrix[~e][:, ~e]]
        return max((float(abs(b).max()) if b.nnz else 0.0) for b in blocks)

    def odd_block(self) -> sparse.csr_matrix:
        """``D^+``: the even-to-odd block (rows odd, columns even)."""
        return self.matrix[~self.even][:, self.even].tocsr()

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()

    def to_triplets(self) -> str:
        coo = self.matrix.tocoo()
        lines = [f"# dimension {self.dimension}",
                 "# even_mask " + "".join("1" if e else "0" for e in self.even),
                 "# row col re im"]
        order = np.lexsort((coo.col, coo.row))
        for i in order:
            v = coo.data[i]
            lines.append(f"{coo.row[i]} {coo.col[i]} {v.real:.17g} {v.imag:.17g}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_triplets(cls, text: str) -> "HermitianOperator":
        dim, mask, rows, cols, vals = 0, "", [], [], []
        for line in text.splitlines():
            if line.startswith("# dimension"):
                dim = int(line.split()[-1])
            elif line.startswith("# even_mask"):
                parts = line.split()
                mask = parts[2] if len(parts) > 2 else ""
            elif line and not line.startswith("#"):
                r, c, re, im = line.split()
                rows.append(int(r))
                cols.append(int(c))
                vals.append(complex(float(re), float(im)))
        mat = sparse.coo_matrix((vals, (rows, cols)), shape=(dim, dim))
        return cls(mat, np.array([ch == "1" for ch in mask], dtype=bool))


def _graded(dp: sparse.spmatrix, fib: sparse.spmatrix | None, coords_u, coords_v, meta) -> HermitianOperator:
    dp = sparse.csr_matrix(dp)
    nv, nu = dp.shape
    mat = sparse.bmat([[None, dp.getH()], [dp, None]], format="csr") if nu and nv else \
        sparse.csr_matrix((nu + nv, nu + nv), dtype=complex)
    even = np.r_[np.ones(nu, bool), np.zeros(nv, bool)]
    fmat = None
    if fib is not None:
        fib = sparse.csr_matrix(fib)
        fmat = sparse.bmat([[None, fib.getH()], [fib, None]], format="csr") if nu and nv else \
            sparse.csr_matrix((nu + nv, nu + nv), dtype=complex)
    return HermitianOperator(mat, even, np.r_[coords_u, coords_v], fmat, meta)


# ---------------------------------------------------------------------------
# radial chains


@dataclass(frozen=True)
class RadialChain:
    """Staggered lattice ``s_0..s_K``; interior sites are the unknowns."""

    sites: np.ndarray
    u_sites: np.ndarray
    v_sites: np.ndarray

    @property
    def spacing(self) -> float:
        return float(self.sites[1] - self.sites[0])


def build_chain(lo: float, hi: float, n_sites: int, u_vanishes_left: bool, u_vanishes_right: bool) -> RadialChain:
    """Lattice of about ``n_sites`` points whose end components match the end rule."""
    if n_sites < 4:
        raise ConstructionError("need at least 4 radial sites")
    # site k carries u iff (k even) == u_vanishes_left
    K = n_sites - 1
    if (K % 2 == 0) != (u_vanishes_left == u_vanishes_right):
        K += 1
    s = lo + (hi - lo) * np.arange(K + 1) / K
    k = np.arange(1, K)
    is_u = (k % 2 == 0) == u_vanishes_left
    return RadialChain(s, k[is_u], k[~is_u])


def radial_mode(chain: RadialChain, phi: Callable[[np.ndarray], np.ndarray]) -> tuple[sparse.csr_matrix, sparse.csr_matrix]:
    """Kinetic and fiberwise parts of ``D^+`` on a chain.

    Row = v site ``k``, columns = u sites ``k +- 1``:
    kinetic ``-i (+-1) / (2h)``, fiberwise ``-i phi(s_k) / 2`` on each neighbour.
    """
    h = chain.spacing
    upos = {int(k): j for j, k in enumerate(chain.u_sites)}
    rows, cols, kin, fib = [], [], [], []
    ph = phi(chain.sites[chain.v_sites])
    for j, (k, p) in enumerate(zip(chain.v_sites, ph)):
        for nb, sg in ((k + 1, 1.0), (k - 1, -1.0)):
            i = upos.get(int(nb))
            if i is None:
                continue
            rows.append(j)
            cols.append(i)
            kin.append(-1j * sg / (2 * h))
            fib.append(-0.5j * p)
    shape = (len(chain.v_sites), len(chain.u_sites))
    return (sparse.csr_matrix((kin, (rows, cols)), shape=shape),
            sparse.csr_matrix((fib, (rows, cols)), shape=shape))


def _mode_operator(chain: RadialChain, phi, meta) -> HermitianOperator:
    kin, fib = radial_mode(chain, phi)
    return _graded(kin + fib, fib, chain.sites[chain.u_sites], chain.sites[chain.v_sites], meta)


@dataclass
class OperatorFamily:
    """Per-mode operators; ``modes[i]`` labels ``ops[i]``."""

    modes: list[int]
    ops: list[HermitianOperator]
    meta: dict = field(default_factory=dict)

    def __iter__(self):
        return iter(zip(self.modes, self.ops))

    def __len__(self):
        return len(self.ops)


# ---------------------------------------------------------------------------
# models


def _is_integer(x: float, tol: float = 1e-12) -> bool:
    return abs(x - round(x)) < tol


@dataclass(frozen=True)
class CylinderModel:
    """Window ``[r_min, r_max] x S^1`` with prequantum connection ``d - 2 pi i r dtheta``."""

    r_min: float
    r_max: float
    radial_sites: int
    t: float
    theta_sites: int | None = None
    profile: Profile = sine_profile
    mode_bound: int | None = None

    def __post_init__(self):
        if not self.r_min < self.r_max:
            raise ConstructionError("r_min must be below r_max")
        for end in (self.r_min, self.r_max):
            if _is_integer(end):
                raise ConstructionError(f"window end {end} is an integer radius (Bohr-Sommerfeld fiber on the boundary)")
        if self.t < 0:
            raise ConstructionError("t must be non-negative")
        if self.radial_sites < 4:
            raise ConstructionError("need at least 4 radial sites")

    def modes(self) -> list[int]:
        bound = math.ceil(max(abs(self.r_min), abs(self.r_max))) + 2
        if self.mode_bound is not None:
            bound = self.mode_bound
        if self.theta_sites is not None:
            bound = min(bound, (self.theta_sites - 1) // 2)
        return list(range(-bound, bound + 1))

    def bs_radii(self) -> list[int]:
        return list(range(math.ceil(self.r_min), math.floor(self.r_max) + 1))

    def with_t(self, t: float) -> "CylinderModel":
        return CylinderModel(self.r_min, self.r_max, self.radial_sites, t, self.theta_sites, self.profile, self.mode_bound)

    def window_bound(self, m: int, t: float | None = None) -> float:
        """Analytic lower bound ``(2 pi w_min dist)^2`` for mode ``m``."""
        t = self.t if t is None else t
        r = np.linspace(self.r_min, self.r_max, 2001)
        w_min = float(np.min(1 + t * self.profile(r) ** 2))
        dist = max(self.r_min - m, m - self.r_max, 0.0)
        return (2 * np.pi * w_min * dist) ** 2


def cylinder_chain(model: CylinderModel, m: int) -> RadialChain:
    return build_chain(model.r_min, model.r_max, model.radial_sites,
                       model.r_min - m > 0, model.r_max - m < 0)


def assemble_cylinder(model: CylinderModel, undeformed: bool = False) -> OperatorFamily:
    """Per-mode radial operators of the (deformed) cylinder."""
    modes = model.modes()
    ops = []
    for m in modes:
        phi = lambda r, m=m: 2 * np.pi * (r - m)
        ops.append(_mode_operator(cylinder_chain(model, m), phi, {"model": "cylinder", "mode": m, "t": 0.0}))
    fam = OperatorFamily(modes, ops, {"model": "cylinder", "window": [model.r_min, model.r_max], "t": 0.0})
    if undeformed or model.t == 0:
        return fam
    return deform(fam, model.profile, model.t)


def assemble_cylinder_full(model: CylinderModel) -> HermitianOperator:
    """Single sparse operator on (mode, radial site), assembled from one global stencil.

    Basis order: for each mode, its u unknowns, then its v unknowns.  The
    operator is block diagonal because the connection and deformation are
    rotation invariant.
    """
    rows, cols, vals = [], [], []
    even, coords, mode_of = [], [], []
    offset = 0
    for m in model.modes():
        ch = cylinder_chain(model, m)
        h = ch.spacing
        nu = len(ch.u_sites)
        upos = {int(k): offset + j for j, k in enumerate(ch.u_sites)}
        for j, k in enumerate(ch.v_sites):
            row = offset + nu + j
            sk = ch.sites[k]
            for nb, sg in ((k + 1, 1.0), (k - 1, -1.0)):
                col = upos.get(int(nb))
                if col is None:
                    continue
                w = 1.0 + model.t * model.profile(sk) * model.profile(ch.sites[nb])
                val = -1j * (sg / (2 * h) + 0.5 * 2 * np.pi * (sk - m) * w)
                rows += [row, col]
                cols += [col, row]
                vals += [val, np.conj(val)]
        n = nu + len(ch.v_sites)
        even += [True] * nu + [False] * len(ch.v_sites)
        coords += list(ch.sites[ch.u_sites]) + list(ch.sites[ch.v_sites])
        mode_of += [m] * n
        offset += n
    mat = sparse.coo_matrix((vals, (rows, cols)), shape=(offset, offset))
    return HermitianOperator(mat, np.array(even), np.array(coords),
                             meta={"model": "cylinder-full", "t": model.t, "mode_of": np.array(mode_of)})


def fiber_rotation(op: HermitianOperator, shift: float) -> sparse.dia_matrix:
    """Rotation of the circle by ``shift`` (period 1) in the mode basis."""
    modes = op.meta["mode_of"]
    return sparse.diags(np.exp(-2j * np.pi * modes * shift))


@dataclass(frozen=True)
class DiscModel:
    """Disc of radius ``R = sqrt(radius_sq)`` with connection ``d - 2 pi i rho^2 dtheta``."""

    radius_sq: float
    radial_sites: int
    t: float
    angular_modes: int | None = None
    profile: Profile | None = None

    def __post_init__(self):
        if not 0 < self.radius_sq < 1:
            raise ConstructionError("radius_sq must lie in (0, 1): an interior Bohr-Sommerfeld circle would enter the disc")
        if self.t < 0:
            raise ConstructionError("t must be non-negative")
        if self.radial_sites < 4:
            raise ConstructionError("need at least 4 radial sites")

    @property
    def radius(self) -> float:
        return math.sqrt(self.radius_sq)

    @property
    def inner_cut(self) -> float:
        return self.radius / (4 * self.radial_sites)

    def modes(self) -> list[int]:
        b = self.angular_modes if self.angular_modes is not None else math.ceil(self.radius_sq) + 2
        return list(range(-b, b + 1))

    def deformation_profile(self) -> Profile:
        if self.profile is not None:
            return self.profile
        lo, R = 4 * self.inner_cut, self.radius
        return lambda r: smoothstep((np.asarray(r) - lo) / (R - lo))

    def with_t(self, t: float) -> "DiscModel":
        return DiscModel(self.radius_sq, self.radial_sites, t, self.angular_modes, self.profile)


def disc_chain(model: DiscModel, m: int) -> RadialChain:
    R = model.radius
    # regular component at the origin: v vanishes for m >= 0, u for m < 0
    return build_chain(model.inner_cut, R, model.radial_sites, m < 0, (R * R - m) < 0)


def assemble_disc(model: DiscModel, undeformed: bool = False) -> OperatorFamily:
    modes = model.modes()
    ops = []
    for m in modes:
        phi = lambda r, m=m: 2 * np.pi * (r * r - m) / r
        ops.append(_mode_operator(disc_chain(model, m), phi, {"model": "disc", "mode": m, "t": 0.0}))
    fam = OperatorFamily(modes, ops, {"model": "disc", "radius_sq": model.radius_sq, "t": 0.0})
    if undeformed or model.t == 0:
        return fam
    return deform(fam, model.deformation_profile(), model.t)


# ---------------------------------------------------------------------------
# deformation


def deform(base: OperatorFamily | HermitianOperator, rho: Profile, t: float):
    """``D_t = D + t rho D_a rho`` with ``rho`` sampled at each basis vector's radius."""
    if t < 0:
        raise ConstructionError("t must be non-negative")
    if isinstance(base, OperatorFamily):
        ops = [deform(op, rho, t) for op in base.ops]
        return OperatorFamily(list(base.modes), ops, {**base.meta, "t": base.meta.get("t", 0.0) + t})
    if t == 0:
        return base
    if base.fiber_part is None or base.coords is None:
        raise ConstructionError("operator carries no fiberwise part to deform with")
    R = sparse.diags(rho(base.coords))
    mat = base.matrix + t * (R @ base.fiber_part @ R)
    meta = {**base.meta, "t": base.meta.get("t", 0.0) + t}
    return HermitianOperator(mat, base.even, base.coords, base.fiber_part, meta)


def deform_multi(base: HermitianOperator, parts: Sequence[tuple[Profile, sparse.spmatrix]], t: float) -> HermitianOperator:
    """``D + t sum_a rho_a D_a rho_a`` for several charts."""
    mat = base.matrix.copy()
    for rho, fib in parts:
        R = sparse.diags(rho(base.coords))
        mat = mat + t * (R @ sparse.csr_matrix(fib) @ R)
    return HermitianOperator(mat, base.even, base.coords, base.fiber_part, {**base.meta, "t": t})


# ---------------------------------------------------------------------------
# the R x S^1 family with potentials


def assemble_flat_family(f_alpha, f_beta, r_sites: np.ndarray, mode_bound: int) -> tuple[HermitianOperator, HermitianOperator]:
    """Fiberwise operators ``J d/dtheta + 2 pi f K`` on ``R x S^1``.

    ``J = [[0,1],[-1,0]]``, ``K = [[0,i],[-i,0]]``, ``theta`` of period 1.  On
    the Fourier mode ``n`` this is ``[[0, 2 pi i (n+f)], [-2 pi i (n+f), 0]]``.
    Basis: (radial site, mode) pairs, even component first within the pair.
    """
    r = np.asarray(r_sites, dtype=float)
    ns = np.arange(-mode_bound, mode_bound + 1)

    def build(f):
        fv = np.broadcast_to(np.asarray(f, dtype=float), r.shape)
        a = (2j * np.pi * (ns[None, :] + fv[:, None])).ravel()
        n = a.size
        idx = np.arange(n)
        mat = sparse.coo_matrix((np.r_[a, np.conj(a)], (np.r_[2 * idx, 2 * idx + 1], np.r_[2 * idx + 1, 2 * idx])),
                                shape=(2 * n, 2 * n))
        even = np.tile([True, False], n)
        coords = np.repeat(np.repeat(r, ns.size), 2)
        return HermitianOperator(mat, even, coords, mat, {"model": "flat-family"})

    return build(f_alpha), build(f_beta)


# ---------------------------------------------------------------------------
# graded tensor products


def grading_sign(op: HermitianOperator) -> sparse.dia_matrix:
    return sparse.diags(np.where(op.even, 1.0, -1.0))


def lifted_summands(a: HermitianOperator, b: HermitianOperator) -> tuple[sparse.csr_matrix, sparse.csr_matrix]:
    """``a ⊗ 1`` and ``eps ⊗ b``."""
    if a.dimension * b.dimension > TENSOR_GUARD:
        raise ConstructionError(f"tensor dimension {a.dimension * b.dimension} exceeds guard {TENSOR_GUARD}")
    ia = sparse.identity(a.dimension, format="csr")
    ib = sparse.identity(b.dimension, format="csr")
    return (sparse.kron(a.matrix, ib, format="csr"), sparse.kron(grading_sign(a), b.matrix, format="csr"))


def tensor_product(a: HermitianOperator, b: HermitianOperator) -> HermitianOperator:
    """Graded product ``a ⊗ 1 + eps ⊗ b``; grading is the parity sum."""
    x, y = lifted_summands(a, b)
    even = (a.even[:, None] == b.even[None, :]).ravel()
    return HermitianOperator(x + y, even, meta={"model": "tensor", "factors": [a.meta.get("model"), b.meta.get("model")]})


def anticommutation_residual(a: HermitianOperator, b: HermitianOperator) -> float:
    x, y = lifted_summands(a, b)
    r = x @ y + y @ x
    return float(abs(r).max()) if r.nnz else 0.0
