"""Drive-averaged dynamics governing the envelope of Rabi oscillations.

In the frame rotating with the drive and averaged over one Rabi period,

    d rho/dt = -i chi/2 [Jx^2, rho] + Gamma/2 [Jx, [rho, Jx]]
               + Gamma/4 [Jz, [rho, Jz]] + Gamma/4 [Jy, [rho, Jy]],

which no longer contains Omega. In the Jx eigenbasis this generator only
couples rho[a, b] to rho[a +- 1, b +- 1], so each off-diagonal band evolves
on its own. The first band carries <Jz - i Jy>; it is the vector
f(m) = <m| rho (Jz - i Jy) |m> whose lattice equation ``fm_lattice_rhs``
implements, and it is what the large-N envelope fits integrate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
from scipy.linalg import eigh_tridiagonal
from scipy.sparse.linalg import expm_multiply

from ._kernels import averaged_kernel
from .errors import FitError, InvalidParameterError, WrongBranchError
from .params import ModelParams
from .spin import build_operators, n_atoms_of


def _jy_left(ops, a):
    out = np.zeros_like(a)
    out[1:] += ops.cp[:, None] * a[:-1]
    out[:-1] -= ops.cp[:, None] * a[1:]
    return -0.5j * out


def _jy_right(ops, a):
    out = np.zeros_like(a)
    out[:, :-1] += a[:, 1:] * ops.cp
    out[:, 1:] -= a[:, :-1] * ops.cp
    return -0.5j * out


def _double_comm(left, right, rho):
    """[A, [rho, A]] = 2 A rho A - A^2 rho - rho A^2."""
    a_rho = left(rho)
    return 2 * right(a_rho) - left(a_rho) - right(right(rho))


def averaged_rhs(rho: np.ndarray, p: ModelParams) -> np.ndarray:
    ops = build_operators(n_atoms_of(rho))
    rho = np.asarray(rho, dtype=complex)
    jx_rho = ops.jx_left(rho)
    rho_jx = ops.jx_right(rho)
    out = (-0.5j * p.chi) * (ops.jx_left(jx_rho) - ops.jx_right(rho_jx))
    out += (0.5 * p.gamma) * (2 * ops.jx_right(jx_rho) - ops.jx_left(jx_rho) - ops.jx_right(rho_jx))
    dm = ops.m[:, None] - ops.m[None, :]
    out += (-0.25 * p.gamma) * dm**2 * rho
    out += (0.25 * p.gamma) * _double_comm(lambda a: _jy_left(ops, a), lambda a: _jy_right(ops, a), rho)
    return out


class AveragedGenerator:
    """Compiled form of ``averaged_rhs`` for the integrator."""

    def __init__(self, p: ModelParams):
        ops = build_operators(p.n_atoms)
        self.p = p
        self._x = (0.5 * ops.cp).astype(complex)
        self._y_sub = -0.5j * ops.cp
        self._y_sup = 0.5j * ops.cp
        self._dm2 = (ops.m[:, None] - ops.m[None, :]) ** 2

    def __call__(self, t, rho):
        out = np.empty_like(rho)
        return averaged_kernel(rho, out, self._x, self._y_sub, self._y_sup, self._dm2, self.p.chi, self.p.gamma)

    def reference(self, rho):
        return averaged_rhs(rho, self.p)


def integrate_averaged(rho0, p: ModelParams, t_final: float, cfg=None, t_eval=None, eig_every=1):
    """Integrate the averaged master equation with the dynamics integrator."""
    from .dynamics import integrate_master
    from .integrate import IntegratorConfig

    if cfg is None:
        rate = max(p.gamma * p.n_atoms**2, abs(p.chi) * p.n_atoms**2, 1e-300)
        cfg = IntegratorConfig(rel_tol=1e-10, abs_tol=1e-12, max_step=1.0 / rate)
    return integrate_master(
        rho0, p, t_final, cfg, t_eval=t_eval, eig_every=eig_every, rhs=AveragedGenerator(p)
    )


def envelope_jz_chi0(p: ModelParams, t):
    """<Jz>(t) = -(N/2) exp(-3 Gamma t / 4), valid only for chi = 0."""
    if p.chi != 0:
        raise WrongBranchError("chi = 0 closed form requested with chi != 0")
    return -0.5 * p.n_atoms * np.exp(-0.75 * p.gamma * np.asarray(t, dtype=float))


def envelope_jz_gamma0(p: ModelParams, t, gaussian: bool = False):
    """<Jz>(t) = -(N/2) cos(chi t / 2)^(N-1) for Gamma = 0.

    With ``gaussian`` the large-N form -(N/2) exp(-N chi^2 t^2 / 8) is returned.
    """
    if p.gamma != 0:
        raise WrongBranchError("Gamma = 0 closed form requested with Gamma != 0")
    t = np.asarray(t, dtype=float)
    n = p.n_atoms
    if gaussian:
        return -0.5 * n * np.exp(-n * p.chi**2 * t**2 / 8)
    return -0.5 * n * np.cos(0.5 * p.chi * t) ** (n - 1)


def analytic_envelope(p: ModelParams, t, short_time: bool = False):
    """Closed-form envelope from the Fourier-space solution.

    The full form keeps the cos(chi t / 2) factor and the exponentials in
    Gamma t; ``short_time`` gives the expansion to third order in t. The
    overall sign is fixed so that a south-pole start gives -N/2 at t = 0.
    """
    t = np.asarray(t, dtype=float)
    n, g, c = p.n_atoms, p.gamma, p.chi
    if short_time:
        expo = -0.75 * g * t - c * c * n * t**2 / 8 - c * c * g * n * (n + 2) * t**3 / 48
        return -0.5 * n * np.exp(expo)
    x = g * t
    if g == 0:
        quad = -n * c * c * t**2 / 8
        cubic = np.zeros_like(t)
    else:
        quad = -n * c * c * np.expm1(-x) ** 2 / (8 * g * g)
        # e^{-2x} - 4 e^{-x} + 3 - 2x loses all digits for small x; use its series there
        series = -(2 / 3) * x**3 + 0.5 * x**4 - (7 / 30) * x**5 + x**6 / 12
        direct = np.exp(-2 * x) - 4 * np.exp(-x) + 3 - 2 * x
        poly = np.where(x < 1e-2, series, direct)
        cubic = n * (n + 2) * c * c * poly / (32 * g * g)
    return -0.5 * n * np.exp(-0.75 * g * t + quad + cubic) * np.cos(0.5 * c * t)


@lru_cache(maxsize=16)
def jx_eigenbasis(n_atoms: int) -> np.ndarray:
    """Columns are Jx eigenvectors (m = -J..J) in the Dicke basis.

    Phases are fixed so that the Jx-raising operator Jy + i Jz has real,
    non-negative matrix elements sqrt(J(J+1) - m(m+1)).
    """
    ops = build_operators(n_atoms)
    _, vecs = eigh_tridiagonal(np.zeros(n_atoms + 1), 0.5 * ops.cp)
    vecs = vecs.astype(complex)
    jy = ops.jy().toarray()
    jz = ops.jz().toarray()
    raise_x = jy + 1j * jz
    for k in range(n_atoms):
        elem = vecs[:, k + 1].conj() @ raise_x @ vecs[:, k]
        vecs[:, k + 1] *= elem / abs(elem)
    vecs.setflags(write=False)
    return vecs


def f_from_state(rho: np.ndarray) -> np.ndarray:
    """f(m) = <m| rho (Jz - i Jy) |m> with |m> the Jx eigenbasis."""
    n = n_atoms_of(rho)
    ops = build_operators(n)
    v = jx_eigenbasis(n)
    jtilde = (ops.jz() - 1j * ops.jy()).toarray()
    return np.einsum("im,ij,jk,km->m", v.conj(), rho, jtilde, v)


def f_south_pole(n_atoms: int) -> np.ndarray:
    """Initial f(m) for the all-down state, without forming a dense state."""
    ops = build_operators(n_atoms)
    v = jx_eigenbasis(n_atoms)
    jtilde_v = (ops.jz() - 1j * ops.jy()) @ v
    return v[0].conj() * jtilde_v[0]


def _lattice_coefficients(p: ModelParams):
    n = p.n_atoms
    j = n / 2
    m = np.arange(n + 1) - j
    hop = 0.25 * p.gamma * (j * (j + 1) - m * (m + 1))
    diag = -0.25 * p.gamma + 0.5j * p.chi * (2 * m + 1) - 2 * hop
    return diag, hop


def fm_lattice_rhs(f: np.ndarray, p: ModelParams) -> np.ndarray:
    """df(m)/dt = -Gamma/4 f + i chi (2m+1)/2 f + Gamma/4 [J(J+1) - m(m+1)] (f(m+1) + f(m-1) - 2 f(m))."""
    f = np.asarray(f, dtype=complex)
    if f.shape != (p.n_atoms + 1,):
        raise InvalidParameterError("lattice vector must have N + 1 entries")
    diag, hop = _lattice_coefficients(p)
    out = diag * f
    out[:-1] += hop[:-1] * f[1:]
    out[1:] += hop[1:] * f[:-1]
    return out


def lattice_matrix(p: ModelParams) -> sp.csr_matrix:
    diag, hop = _lattice_coefficients(p)
    return sp.diags([hop[1:], diag, hop[:-1]], [-1, 0, 1], format="csr")


def lattice_jtilde(p: ModelParams, times, f0=None) -> np.ndarray:
    """<Jz - i Jy>(t) = sum_m f(m, t) under the averaged dynamics.

    The lattice equation is linear with constant coefficients, so it is
    propagated exactly with ``expm_multiply`` on a uniform time grid.
    """
    times = np.asarray(times, dtype=float)
    if f0 is None:
        f0 = f_south_pole(p.n_atoms)
    a = lattice_matrix(p).tocsc()
    if len(times) > 1 and np.allclose(np.diff(times), times[1] - times[0], rtol=1e-9, atol=0):
        fs = expm_multiply(a, f0, start=times[0], stop=times[-1], num=len(times), endpoint=True)
    else:
        fs = np.array([expm_multiply(a * t, f0) for t in times])
    return fs.sum(axis=1)


@dataclass
class EnvelopeFit:
    n_values: list
    decay_times: list
    exponent: float
    curves: dict | None = None


def decay_time(times, remainder, level=math.exp(-1)) -> float:
    """First time at which ``remainder`` falls to ``level`` (linear interpolation); inf if never."""
    r = np.asarray(remainder, dtype=float)
    below = np.nonzero(r <= level)[0]
    if not below.size:
        return math.inf
    i = below[0]
    if i == 0:
        return float(times[0])
    t0, t1 = times[i - 1], times[i]
    r0, r1 = r[i - 1], r[i]
    return float(t0 + (r0 - level) * (t1 - t0) / (r0 - r1))


def envelope_remainder(p: ModelParams, times) -> np.ndarray:
    """<Jz>/(-N/2) under the averaged dynamics with exp(-3 Gamma t / 4) divided out."""
    times = np.asarray(times, dtype=float)
    jz = lattice_jtilde(p, times).real
    return jz / (-0.5 * p.n_atoms) * np.exp(0.75 * p.gamma * times)


def _time_guess(p: ModelParams) -> float:
    """Where the quadratic-plus-cubic exponent of the short-time form reaches 1."""
    n, g, c = p.n_atoms, p.gamma, p.chi
    a2 = c * c * n / 8
    a3 = c * c * g * n * (n + 2) / 48
    if a2 == 0 and a3 == 0:
        return math.inf
    roots = np.roots([a3, a2, 0.0, -1.0])
    real = [r.real for r in roots if abs(r.imag) < 1e-12 * max(1, abs(r)) and r.real > 0]
    return min(real)


def fit_envelope_exponent(p: ModelParams, n_list, n_points: int = 4001, keep_curves=False) -> EnvelopeFit:
    """Fit t_decay ~ N^(-exponent) from the averaged dynamics at each N.

    t_decay is the 1/e time of the envelope after the exp(-3 Gamma t/4)
    factor is removed. With chi = 0 the remainder is identically one; the
    exponent is then reported as 0.
    """
    ns = sorted(set(int(n) for n in n_list))
    if len(ns) < 3:
        raise FitError("need at least 3 distinct N values")
    taus = []
    curves = {}
    for n in ns:
        pn = p.with_n(n)
        guess = _time_guess(pn)
        if not math.isfinite(guess):
            taus.append(math.inf)
            continue
        horizon = 3 * guess
        for _ in range(6):
            times = np.linspace(0, horizon, n_points)
            rem = envelope_remainder(pn, times)
            tau = decay_time(times, rem)
            if math.isfinite(tau):
                break
            horizon *= 3
        taus.append(tau)
        if keep_curves:
            curves[n] = (times, rem)
    taus_arr = np.array(taus)
    if np.all(np.isinf(taus_arr)):
        return EnvelopeFit(ns, taus, 0.0, curves or None)
    if not np.all(np.isfinite(taus_arr)) or np.any(taus_arr <= 0):
        raise FitError(f"decay times not all finite and positive: {taus}")
    slope, _ = np.polyfit(np.log(ns), np.log(taus_arr), 1)
    return EnvelopeFit(ns, taus, float(-slope), curves or None)


def rotating_frame_jz(times, jy, jz, omega: float) -> np.ndarray:
    """Lab-frame <Jy>, <Jz> expressed in the frame rotating with the drive.

    With U = exp(-i Omega Jx t), <Jz>_rot = tr(rho U Jz U^dag) = cos(Omega t) <Jz> - sin(Omega t) <Jy>,
    the quantity the averaged dynamics predicts.
    """
    ph = omega * np.asarray(times, dtype=float)
    return np.cos(ph) * np.asarray(jz) - np.sin(ph) * np.asarray(jy)


def transverse_envelope(jy, jz) -> np.ndarray:
    """-sqrt(<Jy>^2 + <Jz>^2): invariant under the drive rotation, so no frame is needed."""
    return -np.hypot(np.asarray(jy, dtype=float), np.asarray(jz, dtype=float))
