"""Liouvillian superoperator and its low-lying spectrum.

Vectorization is column stacking, vec(A X B) = (B^T kron A) vec(X); a
density matrix maps to ``rho.reshape(-1, order="F")``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import InvalidParameterError, MemoryBudgetError, SolverError
from .params import ModelParams
from .spin import build_operators

DENSE_LIMIT = 4000
DEFAULT_MEMORY_BUDGET = 2 * 1024**3  # bytes


@dataclass
class LiouvillianMatrix:
    matrix: sp.csr_matrix
    n_atoms: int

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def nnz(self) -> int:
        return self.matrix.nnz

    def apply(self, rho: np.ndarray) -> np.ndarray:
        d = self.n_atoms + 1
        v = self.matrix @ vec(rho)
        return unvec(v, d)


def vec(rho: np.ndarray) -> np.ndarray:
    return np.asarray(rho).reshape(-1, order="F")


def unvec(v: np.ndarray, d: int) -> np.ndarray:
    return np.asarray(v).reshape((d, d), order="F")


def build_liouvillian(p: ModelParams, memory_budget: int = DEFAULT_MEMORY_BUDGET) -> LiouvillianMatrix:
    d = p.n_atoms + 1
    # about 7 nonzeros per row, 16 bytes each plus index overhead
    estimate = d * d * 7 * 28
    if estimate > memory_budget:
        raise MemoryBudgetError(
            f"Liouvillian for N={p.n_atoms} needs ~{estimate / 1e9:.1f} GB; "
            "use the matrix-free dynamics generator instead"
        )
    ops = build_operators(p.n_atoms)
    jp = ops.jplus("csr")
    jm = ops.jminus("csr")
    eye = sp.identity(d, dtype=complex, format="csr")
    h = p.chi * (jp @ jm) + p.omega * ops.jx("csr")
    pm = jp @ jm
    lv = -1j * (sp.kron(eye, h) - sp.kron(h.T, eye))
    lv = lv + p.gamma * (sp.kron(jp.T, jm) - 0.5 * sp.kron(eye, pm) - 0.5 * sp.kron(pm.T, eye))
    lv = sp.csr_matrix(lv)
    lv.eliminate_zeros()
    return LiouvillianMatrix(lv, p.n_atoms)


@dataclass
class SpectrumResult:
    eigenvalues: np.ndarray
    k_requested: int
    gap_re: float
    gap_im: float


def sort_eigenvalues(ev: np.ndarray) -> np.ndarray:
    """Ascending |lambda|; ties broken by Re descending, then Im ascending."""
    ev = np.asarray(ev, dtype=complex)
    mag = np.round(np.abs(ev), 10)
    order = np.lexsort((np.round(ev.imag, 10), -np.round(ev.real, 10), mag))
    return ev[order]


def gaps(ev: np.ndarray, n_atoms: int, gamma: float, scale: float | None = None) -> tuple[float, float]:
    """Real and imaginary gaps of a set of eigenvalues.

    gap_re = -max{Re l : |l| > eps0} with eps0 = 1e-8 N Gamma, and
    gap_im = min{|Im l| : |Im l| > eps_im} with eps_im = 1e-6 N Gamma,
    infinite when no eigenvalue qualifies. ``scale`` replaces N Gamma
    when Gamma is zero.
    """
    if scale is None:
        scale = n_atoms * gamma
    if scale <= 0:
        scale = 1.0
    eps0 = 1e-8 * scale
    eps_im = 1e-6 * scale
    nz = ev[np.abs(ev) > eps0]
    gap_re = float(-np.max(nz.real)) if nz.size else math.inf
    im = np.abs(ev.imag)
    im = im[im > eps_im]
    gap_im = float(np.min(im)) if im.size else math.inf
    return gap_re, gap_im


def low_spectrum(
    p: ModelParams,
    k: int,
    seed: int = 0,
    dense_limit: int = DENSE_LIMIT,
    tol: float = 1e-10,
) -> SpectrumResult:
    """The k eigenvalues of smallest magnitude.

    Dense eigensolve up to ``dense_limit``; above it, shift-invert Arnoldi
    about a small positive real shift (zero itself is an eigenvalue).
    """
    lv = build_liouvillian(p)
    dim = lv.dim
    if not 1 <= k <= dim:
        raise InvalidParameterError(f"k must lie in [1, {dim}]")
    scale = p.n_atoms * p.gamma or max(abs(p.chi) * p.n_atoms, p.omega, 1.0)
    if dim <= dense_limit:
        ev = la.eigvals(lv.matrix.toarray())
        ev = sort_eigenvalues(ev)[:k]
    else:
        sigma = 1e-3 * scale
        rng = np.random.default_rng(seed)
        v0 = rng.normal(size=dim) + 1j * rng.normal(size=dim)
        try:
            ev, vecs = spla.eigs(
                lv.matrix.tocsc(), k=k, sigma=sigma, which="LM", v0=v0, tol=tol, maxiter=max(1000, 20 * k)
            )
        except spla.ArpackNoConvergence as exc:
            res = None
            if exc.eigenvectors is not None and exc.eigenvectors.size:
                r = lv.matrix @ exc.eigenvectors - exc.eigenvectors * exc.eigenvalues
                res = float(np.max(np.linalg.norm(r, axis=0)))
            raise SolverError(f"shift-invert Arnoldi did not converge (residual {res})", res) from exc
        ev = sort_eigenvalues(ev)
    gr, gi = gaps(ev, p.n_atoms, p.gamma, scale)
    return SpectrumResult(ev, k, gr, gi)


@dataclass
class GapCurve:
    n_atoms: int
    omega: np.ndarray
    gap_re: np.ndarray
    gap_im: np.ndarray
    slope_at_sr: float  # d gap_re / d Omega at Omega = N Gamma / 2

    def closing_point(self, method: str = "tangent", fraction: float = 0.5) -> float:
        """Drive at which the real gap closes.

        ``tangent``: zero of the tangent line at the steepest descent of gap_re,
        i.e. where the transition region extrapolates to a closed gap.
        ``fraction``: first drive where gap_re falls below ``fraction`` of its
        value at the smallest drive.
        """
        if method == "tangent":
            if len(self.omega) < 3:
                return math.nan
            slope = np.gradient(self.gap_re, self.omega)
            i = int(np.argmin(slope))
            if not slope[i] < 0:
                return math.nan
            return float(self.omega[i] - self.gap_re[i] / slope[i])
        if method != "fraction":
            raise InvalidParameterError(f"unknown closing-point method {method!r}")
        ref = self.gap_re[0]
        below = np.nonzero(self.gap_re < fraction * ref)[0]
        if not below.size:
            return math.nan
        i = below[0]
        if i == 0:
            return float(self.omega[0])
        x0, x1 = self.omega[i - 1], self.omega[i]
        y0, y1 = self.gap_re[i - 1], self.gap_re[i]
        target = fraction * ref
        return float(x0 + (target - y0) * (x1 - x0) / (y1 - y0))

    def opening_point(self, threshold: float) -> float:
        """Last drive after which gap_im stays above ``threshold``."""
        above = self.gap_im > threshold
        if not above[-1]:
            return math.nan
        i = len(above) - 1
        while i > 0 and above[i - 1]:
            i -= 1
        if i == 0:
            return float(self.omega[0])
        x0, x1 = self.omega[i - 1], self.omega[i]
        y0, y1 = self.gap_im[i - 1], self.gap_im[i]
        if not np.isfinite(y1):
            return float(x1)
        return float(x0 + (threshold - y0) * (x1 - x0) / (y1 - y0))


def gap_scan(base: ModelParams, omega_ratios, k: int, n_list, seed: int = 0) -> list[GapCurve]:
    """Gap curves versus drive for each N.

    ``omega_ratios`` are drives in units of N Gamma / 2 so the same grid can be
    reused across N; the returned ``omega`` arrays are in rad/s.
    """
    ratios = np.asarray(omega_ratios, dtype=float)
    if ratios.size == 0 or len(n_list) == 0:
        raise InvalidParameterError("grids must be nonempty")
    curves = []
    for n in n_list:
        pn = base.with_n(n)
        omegas = ratios * pn.omega_sr
        gr = np.empty(len(omegas))
        gi = np.empty(len(omegas))
        for i, om in enumerate(omegas):
            res = low_spectrum(pn.with_omega(om), min(k, (n + 1) ** 2), seed=seed)
            gr[i], gi[i] = res.gap_re, res.gap_im
        slope = float(np.interp(pn.omega_sr, omegas, np.gradient(gr, omegas))) if len(omegas) > 1 else math.nan
        curves.append(GapCurve(n, omegas, gr, gi, slope))
    return curves
