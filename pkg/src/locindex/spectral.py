"""Eigenvalue extraction, gap detection and graded index computation.

Every operator here is odd for its grading, so ``D^2`` splits into the even
block ``B^* B`` and the odd block ``B B^*`` with ``B = D^+``.  Small operators
are solved densely through the singular values of ``B`` (nonzero eigenvalues
then pair exactly between the two blocks); large ones by Lanczos with full
reorthogonalisation on each block.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.linalg as sla
from scipy import sparse
from scipy.sparse import linalg as spla

from .dirac import (CylinderModel, DiscModel, HermitianOperator, OperatorFamily, assemble_cylinder,
                    assemble_disc, anticommutation_residual, tensor_product)
from .errors import ConstructionError, NumericalNonConvergence
from .fiber_oracle import FlatTorusFiber, _mode_symbol, fiber_kernel, form_parity

DENSE_LIMIT = 3000
GAP_FLOOR = 10.0
ZERO_FLOOR = 1e-9


@dataclass
class Spectrum:
    """Lowest ``D^2`` eigenvalues with parity (True = even) and ``||D^2||``."""

    values: np.ndarray
    even: np.ndarray
    norm: float
    residual: float = 0.0


# ---------------------------------------------------------------------------
# Lanczos


def lanczos_largest(apply: Callable[[np.ndarray], np.ndarray], n: int, k: int, *,
                    maxiter: int, tol: float = 1e-12, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """``k`` largest eigenpairs of a Hermitian operator, block size 1.

    Full reorthogonalisation against the current basis and against locked
    eigenvectors.  Converged Ritz pairs are locked and the recurrence
    restarts from a fresh vector until ``k`` are found, so repeated
    eigenvalues are recovered.  ``maxiter`` caps the total matvec count.
    """
    rng = np.random.default_rng(seed)
    k = min(k, n)
    locked_vecs: list[np.ndarray] = []
    locked_vals: list[float] = []
    used = 0

    def orth(w, basis):
        for _ in range(2):
            if basis.shape[1]:
                w = w - basis @ (basis.conj().T @ w)
        return w

    while len(locked_vals) < k:
        L = np.array(locked_vecs).T if locked_vecs else np.zeros((n, 0), dtype=complex)
        q = orth(rng.standard_normal(n) + 1j * rng.standard_normal(n), L)
        q /= np.linalg.norm(q)
        Q = [q]
        alphas, betas = [], []
        want = k - len(locked_vals)
        while True:
            if used >= maxiter:
                raise NumericalNonConvergence(f"Lanczos did not converge within {maxiter} iterations")
            w = apply(Q[-1])
            used += 1
            a = float(np.vdot(Q[-1], w).real)
            alphas.append(a)
            Qm = np.array(Q).T
            w = orth(orth(w, Qm), L)
            b = float(np.linalg.norm(w))
            j = len(alphas)
            exhausted = b < 1e-13 * max(1.0, abs(a)) or j + len(locked_vals) >= n
            if j % 5 == 0 or exhausted:
                theta, S = sla.eigh_tridiagonal(np.array(alphas), np.array(betas)) if j > 1 else \
                    (np.array(alphas), np.ones((1, 1)))
                order = np.argsort(theta)[::-1]
                scale = max(abs(theta).max(), 1e-300)
                conv = [i for i in order[:want] if exhausted or b * abs(S[-1, i]) <= tol * scale]
                top = []
                for i in order[:want]:
                    if i not in conv:
                        break
                    top.append(i)
                if len(top) == want or exhausted:
                    for i in top:
                        v = Qm @ S[:, i]
                        v = orth(v, L)
                        v /= np.linalg.norm(v)
                        locked_vecs.append(v)
                        locked_vals.append(float(theta[i]))
                    break
            betas.append(b)
            Q.append(w / b)
    order = np.argsort(locked_vals)[::-1][:k]
    return np.array(locked_vals)[order], np.array(locked_vecs)[order].T


def _block_lowest(A: sparse.spmatrix, k: int, maxiter: int, shift: float | None, seed: int):
    n = A.shape[0]
    if n == 0:
        return np.zeros(0), np.zeros((0, 0))
    if shift is None:
        vals, vecs = lanczos_largest(lambda x: -(A @ x), n, k, maxiter=maxiter, seed=seed)
        return -vals, vecs
    lu = spla.splu(sparse.csc_matrix(A + shift * sparse.identity(n)))
    vals, vecs = lanczos_largest(lu.solve, n, k, maxiter=maxiter, seed=seed)
    return 1.0 / vals - shift, vecs


def _norm_estimate(B: sparse.spmatrix) -> float:
    if min(B.shape) == 0:
        return 0.0
    # ||B||^2 <= ||B||_1 ||B||_inf
    a = abs(B)
    return float(a.sum(axis=0).max() * a.sum(axis=1).max())


def low_spectrum(op: HermitianOperator, k: int | None = None, method: str = "auto", *,
                 shift: float | None = -1.0, check: bool = False, seed: int = 0) -> Spectrum:
    """Lowest ``k`` eigenvalues of ``D^2`` with parities.

    ``method`` is ``dense`` (singular values of ``D^+``), ``lanczos`` or
    ``auto`` (dense below dimension 3000).  The Lanczos path works on each
    parity block of ``D^2``; with ``shift`` it iterates on
    ``(D^2 + shift)^{-1}`` (``-1`` picks ``1e-8 ||D^2||``), with ``None`` on
    ``-D^2`` directly.  Iteration cap ``20 k + 200`` per block.
    """
    n = op.dimension
    if k is None:
        k = n
    if k > n:
        raise ConstructionError(f"k={k} exceeds dimension {n}")
    B = op.odd_block()
    ne, no = op.dim_even, op.dim_odd
    if method == "auto":
        method = "dense" if n < DENSE_LIMIT else "lanczos"
    if method == "dense":
        Bd = B.toarray()
        r = min(Bd.shape)
        if r == 0:
            sv = np.zeros(0)
        elif check:
            _, sv, Vh = sla.svd(Bd)
        else:
            sv = sla.svdvals(Bd)
        lam = np.sort(sv**2)
        vals = np.r_[np.zeros(ne - r), lam, np.zeros(no - r), lam]
        even = np.r_[np.ones(ne, bool), np.zeros(no, bool)]
        order = np.argsort(vals, kind="stable")[:k]
        nrm = float(lam.max()) if r else 0.0
        res = 0.0
        if check and r:
            V = Vh.conj().T
            lam_e = np.r_[sv**2, np.zeros(ne - r)]
            res = float(np.max(np.linalg.norm(Bd.conj().T @ (Bd @ V) - V * lam_e, axis=0)))
        return Spectrum(vals[order], even[order], nrm, res)
    if method != "lanczos":
        raise ConstructionError(f"unknown method {method}")
    nrm = _norm_estimate(B)
    sh = None if shift is None else (shift if shift >= 0 else 1e-8 * max(nrm, 1.0))
    maxiter = 20 * k + 200
    Ae = (B.getH() @ B).tocsr()
    Ao = (B @ B.getH()).tocsr()
    ve, Ve = _block_lowest(Ae, min(k, ne), maxiter, sh, seed)
    vo, Vo = _block_lowest(Ao, min(k, no), maxiter, sh, seed + 1)
    res = 0.0
    for A, v, V in ((Ae, ve, Ve), (Ao, vo, Vo)):
        if v.size:
            res = max(res, float(np.max(np.linalg.norm(A @ V - V * v, axis=0))))
    if res > 1e-8 * max(nrm, 1.0):
        raise NumericalNonConvergence(f"Lanczos residual {res:.3e} exceeds 1e-8 ||D^2||")
    vals = np.r_[ve, vo]
    even = np.r_[np.ones(ve.size, bool), np.zeros(vo.size, bool)]
    order = np.argsort(vals, kind="stable")[:k]
    return Spectrum(np.maximum(vals[order], 0.0), even[order], nrm, res)


# ---------------------------------------------------------------------------
# index


@dataclass
class IndexReport:
    model: str
    t: float | None
    lambda_cut: float | None
    gap_ratio: float
    dim_even: int
    dim_odd: int
    reliable: bool
    eigen_head: list[float] = field(default_factory=list)
    tie_at_cut: bool = False
    gap_floor: float = GAP_FLOOR

    @property
    def super_dim(self) -> int | None:
        return self.dim_even - self.dim_odd if self.reliable else None

    def to_record(self) -> dict:
        return {"model": self.model, "t": self.t, "lambda_cut": self.lambda_cut, "gap_ratio": self.gap_ratio,
                "dim_even": self.dim_even, "dim_odd": self.dim_odd, "super_dim": self.super_dim,
                "reliable": self.reliable}


def _spectra(target, k: int | None, method: str) -> list[Spectrum]:
    if isinstance(target, Spectrum):
        return [target]
    if isinstance(target, HermitianOperator):
        return [low_spectrum(target, k, method)]
    if isinstance(target, OperatorFamily):
        return [low_spectrum(op, k if k is None else min(k, op.dimension), method) for op in target.ops]
    return [s if isinstance(s, Spectrum) else low_spectrum(s, k, method) for s in target]


def index_from_spectra(spectra: Sequence[Spectrum], gap_floor: float = GAP_FLOOR,
                       lambda_cut: float | None = None, model: str = "", t: float | None = None) -> IndexReport:
    """Cut the combined ``D^2`` spectrum at its largest gap below the median.

    Values are floored at ``1e-9 max ||D^2||``; a sentinel at the floor makes
    an operator without near-kernel report a cut below its whole spectrum.
    """
    vals = np.concatenate([s.values for s in spectra]) if spectra else np.zeros(0)
    even = np.concatenate([s.even for s in spectra]) if spectra else np.zeros(0, bool)
    order = np.argsort(vals, kind="stable")
    vals, even = vals[order], even[order]
    norm = max((s.norm for s in spectra), default=0.0)
    floor = ZERO_FLOOR * max(norm, 1e-300)
    head = [float(v) for v in vals[:12]]
    if lambda_cut is not None:
        below = vals <= lambda_cut
        above = vals[~below]
        lo = max(float(vals[below].max()) if below.any() else floor, floor)
        ratio = float(above.min() / lo) if above.size else math.inf
        return IndexReport(model, t, float(lambda_cut), ratio, int((below & even).sum()), int((below & ~even).sum()),
                           ratio >= gap_floor, head, False, gap_floor)
    if vals.size == 0:
        return IndexReport(model, t, None, 0.0, 0, 0, False, head, False, gap_floor)
    clamped = np.r_[floor, np.maximum(vals, floor)]
    half = max(1, (clamped.size + 1) // 2)
    ratios = clamped[1:half + 1] / clamped[:half]
    i = int(np.argmax(ratios))
    ratio = float(ratios[i])
    if ratio < gap_floor:
        return IndexReport(model, t, None, ratio, 0, 0, False, head, False, gap_floor)
    cut = float(math.sqrt(clamped[i] * clamped[i + 1]))
    below = vals <= cut
    tie = bool(np.any(np.abs(vals - cut) <= 1e-9 * cut))
    return IndexReport(model, t, cut, ratio, int((below & even).sum()), int((below & ~even).sum()),
                       True, head, tie, gap_floor)


def graded_index(target, lambda_cut: float | None = None, gap_floor: float = GAP_FLOOR,
                 k: int | None = None, method: str = "auto") -> IndexReport:
    """Super-dimension of the near-kernel of a deformed operator or family."""
    meta = getattr(target, "meta", {}) or {}
    return index_from_spectra(_spectra(target, k, method), gap_floor, lambda_cut,
                              str(meta.get("model", "")), meta.get("t"))


def cluster_superdims(spec: Spectrum, rtol: float = 1e-8, floor: float | None = None) -> list[tuple[float, int]]:
    """``(lambda, even - odd)`` per cluster of equal eigenvalues above ``floor``."""
    floor = ZERO_FLOOR * spec.norm if floor is None else floor
    out: list[tuple[float, int]] = []
    for v, e in sorted(zip(spec.values.tolist(), spec.even.tolist())):
        if v <= floor:
            continue
        if out and abs(v - out[-1][0]) <= rtol * max(v, 1.0):
            out[-1] = (out[-1][0], out[-1][1] + (1 if e else -1))
        else:
            out.append((v, 1 if e else -1))
    return out


# ---------------------------------------------------------------------------
# local gap estimates


@dataclass
class GapCertificate:
    region_mask: object
    lambda_0_estimate: float
    certified: bool


def spectral_gap(target, region) -> GapCertificate:
    """Smallest ``||D s||^2 / ||s||^2`` over sections supported in the region.

    ``region`` is a predicate on radial coordinates (applied to each operator)
    or, for a single operator, a boolean mask over its basis.
    """
    ops = target.ops if isinstance(target, OperatorFamily) else [target]
    best = math.inf
    nonempty = False
    norm = 0.0
    for op in ops:
        mask = region(op.coords) if callable(region) else np.asarray(region, dtype=bool)
        if mask.shape != (op.dimension,):
            raise ConstructionError("region mask does not match the operator basis")
        if not mask.any():
            continue
        nonempty = True
        cols = op.matrix[:, mask].toarray()
        sv = sla.svdvals(cols)
        best = min(best, float(sv.min() ** 2) if sv.size == mask.sum() else 0.0)
        norm = max(norm, float(sla.svdvals(op.dense()).max() ** 2) if op.dimension < DENSE_LIMIT else 0.0)
    if not nonempty:
        raise ConstructionError("empty region mask")
    return GapCertificate(region, best, best > ZERO_FLOOR * max(norm, 1.0))


# ---------------------------------------------------------------------------
# theorem checks


def _assemble(model) -> OperatorFamily:
    if isinstance(model, CylinderModel):
        return assemble_cylinder(model)
    if isinstance(model, DiscModel):
        return assemble_disc(model)
    raise ConstructionError(f"unsupported model {type(model).__name__}")


@dataclass
class ScanResult:
    reports: list[IndexReport]
    t_star: float | None
    consistent: bool


def deformation_scan(model, t_values: Iterable[float], gap_floor: float = GAP_FLOOR) -> ScanResult:
    """Index at each ``t``; all reliable reports from ``t*`` on must agree."""
    reports = []
    for t in t_values:
        rep = graded_index(_assemble(model.with_t(float(t))), gap_floor=gap_floor)
        rep.t = float(t)
        reports.append(rep)
    t_star = next((r.t for r in reports if r.reliable), None)
    dims = {r.super_dim for r in reports if r.reliable and r.t >= (t_star if t_star is not None else math.inf)}
    return ScanResult(reports, t_star, len(dims) <= 1)


def excision_sum(model: CylinderModel, windows: Sequence[tuple[float, float]], gap_floor: float = GAP_FLOOR) -> dict:
    """Global index versus the sum of per-window local indices."""
    lo, hi = model.r_min, model.r_max
    ws = sorted((float(a), float(b)) for a, b in windows)
    for a, b in ws:
        if abs(a - round(a)) < 1e-12 or abs(b - round(b)) < 1e-12:
            raise ConstructionError(f"window ({a}, {b}) has an integer end")
        if a < lo - 1e-12 or b > hi + 1e-12 or a >= b:
            raise ConstructionError(f"window ({a}, {b}) is not inside ({lo}, {hi})")
    for (a0, b0), (a1, b1) in zip(ws, ws[1:]):
        if a1 < b0:
            raise ConstructionError("windows overlap")
    for r in model.bs_radii():
        if sum(a < r < b for a, b in ws) != 1:
            raise ConstructionError(f"Bohr-Sommerfeld radius {r} is not inside exactly one window")
    glob = graded_index(_assemble(model), gap_floor=gap_floor)
    parts = []
    length = hi - lo
    for a, b in ws:
        sites = max(16, int(round(model.radial_sites * (b - a) / length)))
        sub = CylinderModel(a, b, sites, model.t, None, model.profile)
        rep = graded_index(_assemble(sub), gap_floor=gap_floor)
        parts.append({"window": [a, b], "super_dim": rep.super_dim, "reliable": rep.reliable,
                      "gap_ratio": rep.gap_ratio})
    ok = glob.reliable and all(p["reliable"] for p in parts)
    total = sum(p["super_dim"] for p in parts) if ok else None
    return {"global": glob.super_dim, "parts": parts, "sum": total, "equal": ok and total == glob.super_dim,
            "reliable": ok}


def _fiber_ops(fiber: FlatTorusFiber, mode_bound: int) -> list[HermitianOperator]:
    import itertools
    k = fiber.dim
    par = form_parity(k) == 0
    ops = []
    for m in itertools.product(range(-mode_bound, mode_bound + 1), repeat=k):
        block = _mode_symbol(fiber, np.eye(k), np.array(m, dtype=float))
        ops.append(HermitianOperator(sparse.csr_matrix(block), par, meta={"model": "flat-torus", "mode": list(m)}))
    return ops


def product_check(a_model, b=None, *, fiber_modes: int = 3, pair_k: int = 6, gap_floor: float = GAP_FLOOR) -> dict:
    """Index of a graded product against the product of factor indices.

    ``b`` may be a flat torus fiber, a second model, or ``None`` for the
    point (one even state, zero operator).
    """
    fam_a = _assemble(a_model)
    rep_a = graded_index(fam_a, gap_floor=gap_floor)
    residual = 0.0
    if b is None or isinstance(b, FlatTorusFiber):
        if b is None:
            b_ops = [HermitianOperator(sparse.csr_matrix((1, 1), dtype=complex), np.array([True]), meta={"model": "point"})]
            b_index = 1
            b_kernel = (1, 0)
        else:
            b_ops = _fiber_ops(b, fiber_modes)
            b_kernel = fiber_kernel(b)
            b_index = b_kernel[0] - b_kernel[1]
        spectra = []
        for op_a in fam_a.ops:
            for op_b in b_ops:
                tp = tensor_product(op_a, op_b)
                residual = max(residual, anticommutation_residual(op_a, op_b))
                spectra.append(low_spectrum(tp))
        combined = index_from_spectra(spectra, gap_floor, model="product")
        oracle = None if rep_a.super_dim is None else rep_a.super_dim * b_index
        return {"factor_a": rep_a.super_dim, "factor_b": b_index, "fiber_kernel": list(b_kernel),
                "oracle": oracle, "combined": combined.super_dim, "reliable": combined.reliable,
                "gap_ratio": combined.gap_ratio, "equal": combined.reliable and combined.super_dim == oracle,
                "anticommutation_residual": residual}

    fam_b = _assemble(b)
    rep_b = graded_index(fam_b, gap_floor=gap_floor)
    if not (rep_a.reliable and rep_b.reliable):
        return {"factor_a": rep_a.super_dim, "factor_b": rep_b.super_dim, "oracle": None, "combined": None,
                "reliable": False, "equal": False, "anticommutation_residual": None}
    spec_a = [low_spectrum(op) for op in fam_a.ops]
    spec_b = [low_spectrum(op) for op in fam_b.ops]
    near_a = [bool(np.any(s.values <= rep_a.lambda_cut)) for s in spec_a]
    near_b = [bool(np.any(s.values <= rep_b.lambda_cut)) for s in spec_b]
    spectra = []
    solved = 0
    for i, op_a in enumerate(fam_a.ops):
        for j, op_b in enumerate(fam_b.ops):
            if near_a[i] and near_b[j]:
                tp = tensor_product(op_a, op_b)
                residual = max(residual, anticommutation_residual(op_a, op_b))
                spectra.append(low_spectrum(tp, pair_k))
                solved += 1
            else:
                # no near-kernel in one factor: the pair's D^2 is bounded below by the sum of the
                # factor minima, and its nonzero spectrum pairs even with odd
                lam = float(spec_a[i].values.min() + spec_b[j].values.min())
                spectra.append(Spectrum(np.array([lam, lam]), np.array([True, False]),
                                        spec_a[i].norm + spec_b[j].norm))
    combined = index_from_spectra(spectra, gap_floor, model="product")
    oracle = rep_a.super_dim * rep_b.super_dim
    return {"factor_a": rep_a.super_dim, "factor_b": rep_b.super_dim, "oracle": oracle,
            "combined": combined.super_dim, "reliable": combined.reliable, "gap_ratio": combined.gap_ratio,
            "equal": combined.reliable and combined.super_dim == oracle, "solved_pairs": solved,
            "anticommutation_residual": residual}
