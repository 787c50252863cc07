"""Exact master-equation dynamics in the Dicke basis.

    d rho/dt = -i[chi J+J- + Omega Jx, rho] + Gamma (J- rho J+ - 1/2 {J+J-, rho})

The generator is applied directly in matrix form with banded operator
products, so memory stays O(N^2) and the superoperator is never built.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from ._kernels import lindblad_kernel
from .errors import FitError, InvalidParameterError
from .integrate import IntegratorConfig, StepStats, integrate
from .params import ModelParams
from .spin import (
    build_operators,
    n_atoms_of,
    spin_moments,
    squeezing_from_moments,
    state_diagnostics,
)

log = logging.getLogger(__name__)


class LindbladGenerator:
    """Callable right-hand side with coefficients precomputed for one parameter set."""

    def __init__(self, p: ModelParams):
        self.p = p
        self.ops = build_operators(p.n_atoms)
        d = self.ops.jpjm_diag
        # diagonal part: -i chi [D, rho] - Gamma/2 {D, rho}
        self.diag_coef = -1j * p.chi * (d[:, None] - d[None, :]) - 0.5 * p.gamma * (
            d[:, None] + d[None, :]
        )
        cp = self.ops.cp
        self.jump_coef = p.gamma * np.outer(cp, cp)

    def __call__(self, t, rho):
        if rho.dtype == np.complex128 and rho.flags.c_contiguous:
            return lindblad_kernel(
                rho, np.empty_like(rho), self.diag_coef, self.ops.cp, self.p.gamma, self.p.omega
            )
        return self.reference(rho)

    def reference(self, rho):
        """Plain numpy evaluation, kept as the cross-check for the fused kernel."""
        out = self.diag_coef * rho
        if self.p.gamma:
            out[:-1, :-1] += self.jump_coef * rho[1:, 1:]
        if self.p.omega:
            ops = self.ops
            out += (-1j * self.p.omega) * (ops.jx_left(rho) - ops.jx_right(rho))
        return out


def lindblad_rhs(rho: np.ndarray, p: ModelParams) -> np.ndarray:
    if rho.shape != (p.n_atoms + 1, p.n_atoms + 1):
        raise InvalidParameterError("state dimension does not match n_atoms")
    return LindbladGenerator(p)(0.0, np.asarray(rho, dtype=complex))


def default_max_step(p: ModelParams) -> float:
    rate = max(p.n_atoms * p.gamma, p.omega, p.n_atoms * abs(p.chi))
    return 1.0 / (20 * rate) if rate > 0 else np.inf


@dataclass
class TrajectoryRecord:
    """Observables along a trajectory.

    ``min_eig`` is NaN at points where the spectrum was not sampled.
    """

    n_atoms: int
    times: list = field(default_factory=list)
    jx: list = field(default_factory=list)
    jy: list = field(default_factory=list)
    jz: list = field(default_factory=list)
    xi2: list = field(default_factory=list)
    bloch_length: list = field(default_factory=list)
    trace_err: list = field(default_factory=list)
    herm_err: list = field(default_factory=list)
    min_eig: list = field(default_factory=list)
    renormalizations: list = field(default_factory=list)
    stats: StepStats | None = None
    final_state: np.ndarray | None = None
    final_time: float = 0.0

    def arrays(self) -> dict[str, np.ndarray]:
        keys = ("times", "jx", "jy", "jz", "xi2", "bloch_length", "trace_err", "herm_err", "min_eig")
        return {k: np.asarray(getattr(self, k), dtype=float) for k in keys}

    @property
    def t(self) -> np.ndarray:
        return np.asarray(self.times)

    @property
    def jz_arr(self) -> np.ndarray:
        return np.asarray(self.jz)

    def max_trace_err(self) -> float:
        return float(np.max(self.trace_err)) if self.trace_err else 0.0

    def max_herm_err(self) -> float:
        return float(np.max(self.herm_err)) if self.herm_err else 0.0

    def min_sampled_eig(self) -> float:
        e = np.asarray(self.min_eig, dtype=float)
        e = e[~np.isnan(e)]
        return float(e.min()) if e.size else float("nan")

    def csv_rows(self):
        for i in range(len(self.times)):
            yield (
                self.times[i],
                self.jx[i],
                self.jy[i],
                self.jz[i],
                self.xi2[i],
                self.trace_err[i],
                self.min_eig[i],
            )


def integrate_master(
    rho0: np.ndarray,
    p: ModelParams,
    t_final: float,
    cfg: IntegratorConfig | None = None,
    t_eval=None,
    eig_every: int = 1,
    eps_len: float | None = None,
    rhs=None,
    t0: float = 0.0,
) -> TrajectoryRecord:
    """Integrate the master equation and record observables.

    The state is re-symmetrized after every accepted step; the trace is only
    renormalized if it drifts by more than 1e-9, and each such event is kept
    in ``renormalizations``. ``eig_every`` sets how often (in stored points)
    the minimum eigenvalue is sampled; 0 disables it.
    """
    n = p.n_atoms
    if rho0.shape != (n + 1, n + 1):
        raise InvalidParameterError("initial state dimension does not match n_atoms")
    if t_final < t0:
        raise InvalidParameterError("t_final must be >= start time")
    if cfg is None:
        cfg = IntegratorConfig(max_step=default_max_step(p))
    if rhs is None:
        rhs = LindbladGenerator(p)
    ops = build_operators(n)
    rec = TrajectoryRecord(n_atoms=n, stats=StepStats())
    counter = [0]

    def record(t, rho):
        mean, second = spin_moments(rho, ops)
        sample = eig_every and counter[0] % eig_every == 0
        diag = state_diagnostics(rho, eig=bool(sample))
        counter[0] += 1
        rec.times.append(float(t))
        rec.jx.append(float(mean[0]))
        rec.jy.append(float(mean[1]))
        rec.jz.append(float(mean[2]))
        rec.bloch_length.append(float(np.linalg.norm(mean)))
        rec.xi2.append(squeezing_from_moments(mean, second, n, eps_len))
        rec.trace_err.append(diag["trace_err"])
        rec.herm_err.append(diag["herm_err"])
        rec.min_eig.append(diag["min_eig"])

    def post_step(t, rho):
        rho = 0.5 * (rho + rho.conj().T)
        tr = np.trace(rho).real
        if abs(tr - 1) > 1e-9:
            rec.renormalizations.append((float(t), float(tr - 1)))
            log.warning("trace drift %.3e at t=%.6g; renormalizing", tr - 1, t)
            rho = rho / tr
        return rho

    rho = integrate(
        rhs,
        np.asarray(rho0, dtype=complex),
        t0,
        t_final,
        cfg,
        record=record,
        t_eval=t_eval,
        post_step=post_step,
        stats=rec.stats,
    )
    rec.final_state = rho
    rec.final_time = float(t_final)
    return rec


def trapezoid_average(times, values, window_t: float, t_start: float = 0.0) -> float:
    """(1/T) * integral of values over [t_start, t_start + T] by the trapezoid rule."""
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    if not window_t > 0:
        raise InvalidParameterError("averaging window must be > 0")
    t_end = t_start + window_t
    if times[0] > t_start + 1e-12 * max(1, abs(t_start)) or times[-1] < t_end * (1 - 1e-12):
        raise InvalidParameterError("averaging window exceeds the trajectory span")
    inner = (times > t_start) & (times < t_end)
    ts = np.concatenate([[t_start], times[inner], [t_end]])
    vs = np.interp(ts, times, values)
    return float(np.trapezoid(vs, ts) / window_t)


def time_averaged_inversion(
    p: ModelParams,
    rho0: np.ndarray,
    window_t: float,
    cfg: IntegratorConfig | None = None,
) -> float:
    """Time-averaged <Jz> over [0, window_t] from the exact dynamics."""
    if not window_t > 0:
        raise InvalidParameterError("window_T must be > 0")
    rec = integrate_master(rho0, p, window_t, cfg, eig_every=0)
    return trapezoid_average(rec.times, rec.jz, window_t)


@dataclass
class RelaxationFit:
    n_atoms: int
    rate: float
    amplitude: float
    window: tuple[float, float]
    monotone: bool
    warning: str | None = None


def fit_exponential_decay(times, deviation, window=None) -> tuple[float, float, bool]:
    """Least-squares fit of log|deviation| = log A - rate * t.

    Returns (rate, A, monotone) where ``monotone`` reports whether
    |deviation| decreases throughout the window.
    """
    t = np.asarray(times, dtype=float)
    d = np.abs(np.asarray(deviation, dtype=float))
    if window is not None:
        mask = (t >= window[0]) & (t <= window[1])
        t, d = t[mask], d[mask]
    good = d > 0
    t, d = t[good], d[good]
    if len(t) < 3:
        raise FitError("need at least 3 positive points to fit a decay")
    slope, intercept = np.polyfit(t, np.log(d), 1)
    monotone = bool(np.all(np.diff(d) <= 1e-12 * d.max()))
    return float(-slope), float(math.exp(intercept)), monotone


def metastable_relaxation_scan(
    p: ModelParams,
    n_list,
    t_final: float,
    jz_ss=None,
    rho0_factory=None,
    cfg_factory=None,
    n_points: int = 400,
) -> list[RelaxationFit]:
    """Fit late-time exponential relaxation of <Jz> to its steady value per N.

    The fit uses the last half of the trajectory after the oscillation
    envelope has collapsed below 0.1 N/2. ``p`` supplies chi, gamma and the
    drive ratio 2 Omega/(N gamma), which is held fixed across N.
    """
    from .spin import south_pole
    from .steady import steady_state

    fits = []
    ratio = p.omega / p.omega_sr if p.omega_sr else 0.0
    for n in n_list:
        pn = ModelParams(n_atoms=n, chi=p.chi, gamma=p.gamma, omega=0.5 * ratio * n * p.gamma)
        rho0 = rho0_factory(n) if rho0_factory else south_pole(n)
        cfg = cfg_factory(pn) if cfg_factory else None
        t_eval = np.linspace(0, t_final, n_points + 1)
        rec = integrate_master(rho0, pn, t_final, cfg, t_eval=t_eval, eig_every=0)
        ss = jz_ss(pn) if jz_ss else _jz_steady(pn, steady_state)
        t = rec.t
        dev = rec.jz_arr - ss
        collapsed = np.nonzero(np.abs(rec.jz_arr) < 0.1 * n / 2)[0]
        t_start = t[collapsed[0]] if collapsed.size else 0.0
        t_start = max(t_start, t_final / 2)
        window = (t_start, t_final)
        rate, amp, mono = fit_exponential_decay(t, dev, window)
        warning = None if mono else "non-monotone residual in fit window"
        if warning:
            log.warning("N=%d: %s", n, warning)
        fits.append(RelaxationFit(n, rate, amp, window, mono, warning))
    return fits


def _jz_steady(p, steady_state):
    from .spin import observables

    return observables(steady_state(p).rho_ss).jz


@dataclass
class SqueezingTrajectory:
    record: TrajectoryRecord
    dip_index: int | None
    dip_time: float | None
    dip_xi2: float | None


def first_local_minimum(values) -> int | None:
    v = np.asarray(values, dtype=float)
    for i in range(1, len(v) - 1):
        if np.isnan(v[i - 1]) or np.isnan(v[i]) or np.isnan(v[i + 1]):
            continue
        if v[i] < v[i - 1] and v[i] <= v[i + 1]:
            return i
    return None


def squeezing_dynamics(
    p: ModelParams,
    rho0: np.ndarray,
    t_final: float,
    cfg: IntegratorConfig | None = None,
    t_eval=None,
) -> SqueezingTrajectory:
    rec = integrate_master(rho0, p, t_final, cfg, t_eval=t_eval, eig_every=0)
    i = first_local_minimum(rec.xi2)
    if i is None:
        return SqueezingTrajectory(rec, None, None, None)
    return SqueezingTrajectory(rec, i, rec.times[i], rec.xi2[i])
