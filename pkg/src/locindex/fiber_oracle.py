"""Exact Fourier-space spectra of twisted de Rham operators on flat tori.

On the mode ``exp(2 pi i <m + theta, x>)`` the operator ``d + d*`` acts on
``Lambda^* R^k`` as ``i c(xi)`` with ``xi = 2 pi (m + theta)`` and Clifford
multiplication ``c(v) = v ∧ - v ⌟``.  Its square is ``|xi|^2`` times the
identity, so every mode contributes ``2^(k-1)`` even and ``2^(k-1)`` odd
states at eigenvalue ``4 pi^2 |m + theta|^2`` (inverse-metric norm).

Holonomy convention: the fiber over radius ``r`` in the model operators has
holonomy ``exp(-2 pi i r)``, i.e. ``theta = -r mod 1``.
"""

from __future__ import annotations

import io
import itertools
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ConstructionError


@dataclass(frozen=True)
class FlatTorusFiber:
    dim: int
    holonomy: tuple[float, ...]
    metric: tuple[tuple[float, ...], ...] | None = None

    def __post_init__(self):
        hol = tuple(float(h) % 1.0 for h in self.holonomy)
        if len(hol) != self.dim:
            raise ConstructionError(f"holonomy has {len(hol)} entries for a {self.dim}-torus")
        object.__setattr__(self, "holonomy", hol)
        if self.metric is not None:
            g = np.array(self.metric, dtype=float)
            if g.shape != (self.dim, self.dim) or not np.allclose(g, g.T):
                raise ConstructionError("metric must be a symmetric k x k matrix")
            try:
                np.linalg.cholesky(g)
            except np.linalg.LinAlgError:
                raise ConstructionError("metric is not positive definite") from None
            object.__setattr__(self, "metric", tuple(tuple(float(v) for v in row) for row in g))

    @property
    def g(self) -> np.ndarray:
        return np.eye(self.dim) if self.metric is None else np.array(self.metric)

    @property
    def ginv(self) -> np.ndarray:
        return np.linalg.inv(self.g)


@dataclass
class GradedSpectrum:
    """``(lambda, even, odd)`` triples, ascending, valid below ``certified_below``."""

    entries: list[tuple[float, int, int]]
    certified_below: float

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("lambda,even_mult,odd_mult\n")
        for lam, e, o in self.entries:
            buf.write(f"{lam:.15g},{e},{o}\n")
        return buf.getvalue()


def _modes(dim: int, bound: int) -> np.ndarray:
    return np.array(list(itertools.product(range(-bound, bound + 1), repeat=dim)), dtype=float).reshape(-1, dim)


def certified_threshold(fiber: FlatTorusFiber, mode_bound: int) -> float:
    """Every mode outside the box has ``D^2`` eigenvalue at least this."""
    if fiber.dim == 0:
        return np.inf
    shell = mode_bound + 1 - max(fiber.holonomy)
    return 4 * np.pi**2 * float(np.linalg.eigvalsh(fiber.ginv).min()) * shell**2


def torus_spectrum(fiber: FlatTorusFiber, mode_bound: int, rtol: float = 1e-12) -> GradedSpectrum:
    if mode_bound < 1:
        raise ConstructionError("mode_bound must be at least 1")
    k = fiber.dim
    if k == 0:
        return GradedSpectrum([(0.0, 1, 0)], np.inf)
    cut = certified_threshold(fiber, mode_bound)
    v = _modes(k, mode_bound) + np.array(fiber.holonomy)
    lam = 4 * np.pi**2 * np.einsum("mi,ij,mj->m", v, fiber.ginv, v)
    lam = np.sort(lam[lam < cut])
    half = 2 ** (k - 1)
    entries: list[tuple[float, int, int]] = []
    for x in lam:
        if entries and abs(x - entries[-1][0]) <= rtol * max(1.0, x):
            l0, e, o = entries[-1]
            entries[-1] = (l0, e + half, o + half)
        else:
            entries.append((float(x), half, half))
    return GradedSpectrum(entries, cut)


def fiber_kernel(fiber: FlatTorusFiber) -> tuple[int, int]:
    """Graded kernel: all of ``Lambda^*`` when the bundle is trivial, else nothing."""
    if fiber.dim == 0:
        return (1, 0)
    if all(h == 0.0 for h in fiber.holonomy):
        return (2 ** (fiber.dim - 1), 2 ** (fiber.dim - 1))
    return (0, 0)


@lru_cache(maxsize=16)
def clifford_generators(k: int) -> tuple[np.ndarray, ...]:
    """``c(e_j) = e_j ∧ - e_j ⌟`` on ``Lambda^* R^k`` (basis = bitmasks)."""
    n = 2**k
    gens = []
    for j in range(k):
        ext = np.zeros((n, n))
        for s in range(n):
            if not s >> j & 1:
                sign = (-1) ** bin(s & ((1 << j) - 1)).count("1")
                ext[s | 1 << j, s] = sign
        gens.append(ext - ext.T)
    return tuple(gens)


def form_parity(k: int) -> np.ndarray:
    return np.array([bin(s).count("1") % 2 for s in range(2**k)])


def _mode_symbol(fiber: FlatTorusFiber, proj: np.ndarray, m: np.ndarray) -> np.ndarray:
    k = fiber.dim
    L = np.linalg.cholesky(fiber.ginv)
    eta = L.T @ (2 * np.pi * (m + np.array(fiber.holonomy)))
    w = proj @ eta
    c = clifford_generators(k)
    return 1j * sum(wj * cj for wj, cj in zip(w, c))


def _check_projection(p: np.ndarray, k: int) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.shape != (k, k):
        raise ConstructionError(f"projection must be {k} x {k}")
    if not (np.allclose(p, p.T, atol=1e-12) and np.allclose(p @ p, p, atol=1e-12)):
        raise ConstructionError("not an orthogonal projection")
    return p


def anticommutator_identity(fiber: FlatTorusFiber, p_alpha, p_beta, mode_bound: int) -> float:
    """Operator-norm residual of ``{D_a, D_b} - 2 D_ab^2`` over the truncated basis."""
    k = fiber.dim
    pa = _check_projection(p_alpha, k)
    pb = _check_projection(p_beta, k)
    if np.linalg.norm(pa @ pb - pb @ pa) > 1e-12:
        raise ConstructionError("projections do not commute")
    pab = pa @ pb
    worst = 0.0
    for m in _modes(k, mode_bound):
        da = _mode_symbol(fiber, pa, m)
        db = _mode_symbol(fiber, pb, m)
        dab = _mode_symbol(fiber, pab, m)
        res = da @ db + db @ da - 2 * dab @ dab
        worst = max(worst, float(np.linalg.norm(res, 2)))
    return worst


def mode_operator(fiber: FlatTorusFiber, mode_bound: int) -> tuple[np.ndarray, np.ndarray]:
    """Dense block-diagonal ``D`` over the truncated modes, with its parity mask."""
    k = fiber.dim
    blocks = [_mode_symbol(fiber, np.eye(k), m) for m in _modes(k, mode_bound)]
    n = 2**k
    D = np.zeros((n * len(blocks), n * len(blocks)), dtype=complex)
    for i, b in enumerate(blocks):
        D[i * n:(i + 1) * n, i * n:(i + 1) * n] = b
    return D, np.tile(form_parity(k), len(blocks))
