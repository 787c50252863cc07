"""Collective spin algebra in the maximal Dicke sector J = N/2.

Basis ordering is m = -J, -J+1, ..., +J, so index k holds m = k - J and
J+ maps index k to k+1 with coefficient sqrt((J - m)(J + m + 1)).
Operators are kept banded; only density matrices are dense.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
from scipy.special import gammaln

from .errors import InvalidParameterError


@dataclass(frozen=True)
class DickeOperators:
    """Banded generators for spin J = N/2.

    ``cp[k]`` is the J+ matrix element <m_k + 1|J+|m_k>; ``m`` holds the Jz diagonal.
    """

    n_atoms: int
    m: np.ndarray
    cp: np.ndarray

    @property
    def dim(self) -> int:
        return self.n_atoms + 1

    @property
    def spin(self) -> float:
        return self.n_atoms / 2

    @property
    def jpjm_diag(self) -> np.ndarray:
        """Diagonal of J+J-."""
        d = np.zeros(self.dim)
        d[1:] = self.cp**2
        return d

    @property
    def jmjp_diag(self) -> np.ndarray:
        d = np.zeros(self.dim)
        d[:-1] = self.cp**2
        return d

    # sparse / dense views, mostly for oracles and the superoperator
    def jplus(self, fmt="csr"):
        return sp.diags(self.cp.astype(complex), -1, shape=(self.dim, self.dim), format=fmt)

    def jminus(self, fmt="csr"):
        return sp.diags(self.cp.astype(complex), 1, shape=(self.dim, self.dim), format=fmt)

    def jz(self, fmt="csr"):
        return sp.diags(self.m.astype(complex), 0, format=fmt)

    def jx(self, fmt="csr"):
        return ((self.jplus() + self.jminus()) * 0.5).asformat(fmt)

    def jy(self, fmt="csr"):
        return ((self.jplus() - self.jminus()) * (-0.5j)).asformat(fmt)

    def dense(self) -> dict[str, np.ndarray]:
        return {
            "Jx": self.jx().toarray(),
            "Jy": self.jy().toarray(),
            "Jz": self.jz().toarray(),
            "Jplus": self.jplus().toarray(),
            "Jminus": self.jminus().toarray(),
        }

    # banded products against a dense matrix
    def jplus_left(self, a: np.ndarray) -> np.ndarray:
        out = np.zeros_like(a)
        out[1:] = self.cp[:, None] * a[:-1]
        return out

    def jminus_left(self, a: np.ndarray) -> np.ndarray:
        out = np.zeros_like(a)
        out[:-1] = self.cp[:, None] * a[1:]
        return out

    def jx_left(self, a: np.ndarray) -> np.ndarray:
        out = np.zeros_like(a)
        out[1:] += self.cp[:, None] * a[:-1]
        out[:-1] += self.cp[:, None] * a[1:]
        return 0.5 * out

    def jx_right(self, a: np.ndarray) -> np.ndarray:
        out = np.zeros_like(a)
        out[:, 1:] += a[:, :-1] * self.cp
        out[:, :-1] += a[:, 1:] * self.cp
        return 0.5 * out


@lru_cache(maxsize=64)
def build_operators(n_atoms: int) -> DickeOperators:
    if int(n_atoms) != n_atoms or n_atoms < 1:
        raise InvalidParameterError(f"N must be a positive integer, got {n_atoms}")
    n_atoms = int(n_atoms)
    j = n_atoms / 2
    m = np.arange(n_atoms + 1) - j
    mk = m[:-1]
    cp = np.sqrt((j - mk) * (j + mk + 1))
    m.setflags(write=False)
    cp.setflags(write=False)
    return DickeOperators(n_atoms, m, cp)


def n_atoms_of(rho: np.ndarray) -> int:
    return rho.shape[0] - 1


def check_state(rho: np.ndarray, herm_tol=1e-10, trace_tol=1e-9, pos_tol=1e-8) -> dict:
    """Return diagnostic errors and raise if a density matrix is invalid."""
    d = state_diagnostics(rho)
    if d["herm_err"] > herm_tol:
        raise InvalidParameterError(f"state not Hermitian (err {d['herm_err']:.2e})")
    if d["trace_err"] > trace_tol:
        raise InvalidParameterError(f"trace differs from 1 by {d['trace_err']:.2e}")
    if d["min_eig"] < -pos_tol:
        raise InvalidParameterError(f"state has negative eigenvalue {d['min_eig']:.2e}")
    return d


def state_diagnostics(rho: np.ndarray, eig=True) -> dict:
    herm = float(np.max(np.abs(rho - rho.conj().T))) if rho.size else 0.0
    tr = float(abs(np.trace(rho) - 1))
    min_eig = float(np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))[0]) if eig else float("nan")
    return {"herm_err": herm, "trace_err": tr, "min_eig": min_eig}


def dicke_projector(n_atoms: int, index: int) -> np.ndarray:
    rho = np.zeros((n_atoms + 1, n_atoms + 1), dtype=complex)
    rho[index, index] = 1.0
    return rho


def coherent_vector(n_atoms: int, theta: float, phi: float) -> np.ndarray:
    """Amplitudes of |theta, phi>, the +J eigenstate of n.J.

    c_m = sqrt(C(N, J+m)) cos(theta/2)^(J+m) sin(theta/2)^(J-m) exp(-i m phi).
    Evaluated in log space so large N does not underflow.
    """
    n = n_atoms
    k = np.arange(n + 1)  # k = J + m
    c, s = np.cos(theta / 2), np.sin(theta / 2)
    log_binom = gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1)
    # theta in [0, pi] keeps both factors non-negative
    logc = np.log(c) if c > 0 else -np.inf
    logs = np.log(s) if s > 0 else -np.inf
    # 0 * -inf must read as log(1) = 0 at the poles
    with np.errstate(invalid="ignore"):
        term_c = np.where(k == 0, 0.0, k * logc)
        term_s = np.where(n - k == 0, 0.0, (n - k) * logs)
    mag = np.exp(0.5 * log_binom + term_c + term_s)
    m = k - n / 2
    vec = mag * np.exp(-1j * m * phi)
    return vec / np.linalg.norm(vec)


def coherent_state(n_atoms: int, theta: float, phi: float) -> np.ndarray:
    if not 0 <= theta <= np.pi:
        raise InvalidParameterError(f"theta must lie in [0, pi], got {theta}")
    v = coherent_vector(n_atoms, theta, phi)
    return np.outer(v, v.conj())


def south_pole(n_atoms: int) -> np.ndarray:
    return dicke_projector(n_atoms, 0)


def north_pole(n_atoms: int) -> np.ndarray:
    return dicke_projector(n_atoms, n_atoms)


def maximally_mixed(n_atoms: int) -> np.ndarray:
    return np.eye(n_atoms + 1, dtype=complex) / (n_atoms + 1)


@dataclass(frozen=True)
class ObservableSet:
    jx: float
    jy: float
    jz: float
    xi2: float  # nan when undefined
    bloch_length: float

    @property
    def xi2_defined(self) -> bool:
        return not np.isnan(self.xi2)


def spin_moments(rho: np.ndarray, ops: DickeOperators | None = None):
    """Mean spin vector and symmetrized second-moment matrix, both O(N)."""
    if ops is None:
        ops = build_operators(n_atoms_of(rho))
    cp, m = ops.cp, ops.m
    diag = np.real(np.diagonal(rho))
    sup1 = np.diagonal(rho, 1)  # rho[k, k+1]
    sup2 = np.diagonal(rho, 2)

    jp = np.sum(cp * sup1)  # <J+>
    mean = np.array([jp.real, jp.imag, float(np.dot(m, diag))])

    jp2 = np.sum(cp[:-1] * cp[1:] * sup2) if len(cp) > 1 else 0.0
    pm = float(np.dot(ops.jpjm_diag, diag))
    mp = float(np.dot(ops.jmjp_diag, diag))
    a = np.sum(cp * (m[:-1] + m[1:]) * sup1)  # <J+Jz + Jz J+>
    s = np.empty((3, 3))
    s[0, 0] = (2 * np.real(jp2) + pm + mp) / 4
    s[1, 1] = (-2 * np.real(jp2) + pm + mp) / 4
    s[2, 2] = float(np.dot(m**2, diag))
    s[0, 1] = s[1, 0] = np.imag(jp2) / 2
    s[0, 2] = s[2, 0] = np.real(a) / 2
    s[1, 2] = s[2, 1] = np.imag(a) / 2
    return mean, s


def _perp_basis(n: np.ndarray):
    n = n / np.linalg.norm(n)
    helper = np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = np.cross(n, helper)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(n, e1)
    return e1, e2


def squeezing_from_moments(mean, second, n_atoms, eps_len=None) -> float:
    """Wineland xi^2 via the smaller eigenvalue of the perpendicular covariance."""
    length = float(np.linalg.norm(mean))
    if eps_len is None:
        eps_len = 1e-8 * n_atoms
    if length < eps_len:
        return float("nan")
    cov = second - np.outer(mean, mean)
    e1, e2 = _perp_basis(mean)
    basis = np.stack([e1, e2])
    c2 = basis @ cov @ basis.T
    var_min = float(np.linalg.eigvalsh(c2)[0])
    return n_atoms * var_min / length**2


def observables(rho: np.ndarray, eps_len: float | None = None, ops=None) -> ObservableSet:
    n = n_atoms_of(rho)
    mean, second = spin_moments(rho, ops)
    xi2 = squeezing_from_moments(mean, second, n, eps_len)
    return ObservableSet(
        jx=float(mean[0]),
        jy=float(mean[1]),
        jz=float(mean[2]),
        xi2=xi2,
        bloch_length=float(np.linalg.norm(mean)),
    )


@dataclass(frozen=True)
class HusimiGrid:
    theta: np.ndarray
    phi: np.ndarray
    q: np.ndarray  # shape (n_theta, n_phi)

    def integral(self) -> float:
        """Sphere quadrature: trapezoid in theta, periodic rectangle rule in phi."""
        dphi = 2 * np.pi / len(self.phi)
        ring = self.q.sum(axis=1) * dphi * np.sin(self.theta)
        return float(np.trapezoid(ring, self.theta))

    def rows(self):
        for i, th in enumerate(self.theta):
            for j, ph in enumerate(self.phi):
                yield th, ph, self.q[i, j]


def husimi(rho: np.ndarray, n_theta: int, n_phi: int) -> HusimiGrid:
    """Q(theta, phi) = (N+1)/(4 pi) <theta,phi|rho|theta,phi> on a regular grid.

    theta spans [0, pi] inclusive; phi spans [0, 2 pi) without the endpoint.
    """
    if n_theta < 2 or n_phi < 2:
        raise InvalidParameterError("grid sizes must be >= 2")
    n = n_atoms_of(rho)
    theta = np.linspace(0, np.pi, n_theta)
    phi = np.linspace(0, 2 * np.pi, n_phi, endpoint=False)
    q = np.empty((n_theta, n_phi))
    m = np.arange(n + 1) - n / 2
    phases = np.exp(-1j * np.outer(phi, m))  # (n_phi, N+1)
    for i, th in enumerate(theta):
        base = coherent_vector(n, th, 0.0)
        vecs = phases * base  # rows are |theta, phi_j>
        q[i] = np.real(np.einsum("pi,ij,pj->p", vecs.conj(), rho, vecs))
    q *= (n + 1) / (4 * np.pi)
    return HusimiGrid(theta, phi, np.clip(q, 0.0, None))
