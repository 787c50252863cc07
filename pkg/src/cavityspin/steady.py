"""Closed-form steady state via displaced collective operators.

With alpha = i Omega / (Gamma - 2 i chi) the stationary state is

    rho_ss = C (J- - alpha* I)^(-1) (J+ - alpha I)^(-1).

The bidiagonal inverse B = (J+ - alpha)^(-1) has the explicit column solution
B[i, j] = -(1/alpha) P_i / P_j for i >= j with P_i = prod_{k<i} c_k / alpha,
so rho_ss[j, l] is proportional to S_max(j,l) / (conj(P_j) P_l) with
S_k = sum_{i>=k} |P_i|^2. Everything is assembled in log space and the
normalization is fixed by the trace, since the raw entries overflow double
precision once N is a few hundred.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import InvalidParameterError, SingularParameterError
from .params import ModelParams
from .spin import build_operators, observables, south_pole


@dataclass(frozen=True)
class DisplacedSolution:
    alpha: complex
    rho_ss: np.ndarray
    norm_const: float  # C in units where the raw inverses are rescaled by exp(log_scale)
    log_scale: float


@dataclass(frozen=True)
class CriticalDrives:
    omega_c: float
    omega_sr: float  # N gamma / 2


def displacement(p: ModelParams) -> complex:
    if p.gamma == 0 and p.chi == 0:
        raise SingularParameterError("displacement undefined for gamma = chi = 0")
    return 1j * p.omega / (p.gamma - 2j * p.chi)


def steady_state(p: ModelParams) -> DisplacedSolution:
    alpha = displacement(p)
    n = p.n_atoms
    if p.omega == 0:
        return DisplacedSolution(0j, south_pole(n), 1.0, 0.0)
    cp = build_operators(n).cp
    log_abs_alpha = math.log(abs(alpha))
    arg_alpha = math.atan2(alpha.imag, alpha.real)

    idx = np.arange(n + 1)
    lp = np.concatenate([[0.0], np.cumsum(np.log(cp))]) - idx * log_abs_alpha  # log|P_i|
    # suffix log-sum-exp of 2 log|P_i|
    log_s = np.logaddexp.accumulate((2 * lp)[::-1])[::-1]
    hi = np.maximum(idx[:, None], idx[None, :])
    log_mag = log_s[hi] - lp[:, None] - lp[None, :]
    log_tr = logsumexp(np.diagonal(log_mag))
    phase = np.exp(1j * arg_alpha * (idx[None, :] - idx[:, None]))
    rho = np.exp(log_mag - log_tr) * phase
    rho = 0.5 * (rho + rho.conj().T)
    # C |alpha|^2 (raw inverse product) has trace one; record C in log form
    log_scale = -log_tr - 2 * log_abs_alpha
    return DisplacedSolution(alpha, rho, math.exp(log_scale) if log_scale < 700 else math.inf, log_scale)


def critical_drive(p: ModelParams) -> CriticalDrives:
    return CriticalDrives(omega_c=p.omega_c, omega_sr=p.omega_sr)


def order_parameter_thermodynamic(p: ModelParams) -> float:
    """Large-N steady inversion: -(N/2) sqrt(1 - Omega^2/Omega_c^2) below Omega_c, else 0."""
    oc = p.omega_c
    if p.omega >= oc:
        return 0.0
    return -0.5 * p.n_atoms * math.sqrt(1 - (p.omega / oc) ** 2)


@dataclass(frozen=True)
class SweepPoint:
    omega: float
    omega_over_omega_c: float
    xi2: float
    jz: float
    bloch_length: float


@dataclass(frozen=True)
class SqueezingSweep:
    points: list
    argmin_omega: float | None
    min_xi2: float | None


def squeezing_sweep(base: ModelParams, omega_grid, eps_len=None) -> SqueezingSweep:
    """Steady-state xi^2 and <Jz> over a grid of drives (base.omega is ignored)."""
    grid = np.asarray(omega_grid, dtype=float)
    if grid.size == 0:
        raise InvalidParameterError("omega grid is empty")
    if np.any(np.diff(grid) <= 0):
        raise InvalidParameterError("omega grid must be strictly increasing")
    pts = []
    for om in grid:
        pk = base.with_omega(om)
        obs = observables(steady_state(pk).rho_ss, eps_len)
        pts.append(SweepPoint(float(om), float(om / pk.omega_c), obs.xi2, obs.jz, obs.bloch_length))
    xi = np.array([q.xi2 for q in pts])
    if np.all(np.isnan(xi)):
        return SqueezingSweep(pts, None, None)
    i = int(np.nanargmin(xi))
    return SqueezingSweep(pts, pts[i].omega, float(xi[i]))


def omega_for_alpha(abs_alpha: float, chi: float, gamma: float) -> float:
    """Drive giving |alpha| = abs_alpha at the given couplings."""
    return abs_alpha * math.hypot(gamma, 2 * chi)
