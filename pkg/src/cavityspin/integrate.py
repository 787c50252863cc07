"""Adaptive Dormand-Prince 5(4) integrator for dense matrix ODEs.

Written in-house rather than using ``scipy.integrate.solve_ivp`` because the
density-matrix integrations need a hook after each accepted step
(Hermitian re-symmetrization, trace monitoring) and max-norm error control.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ._kernels import stage_combination
from .errors import InvalidParameterError, StiffnessError

# Dormand-Prince tableau
_C = np.array([0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1, 1])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B = np.array([35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0])
_B_LOW = np.array(
    [5179 / 57600, 0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40]
)
_E = _B - _B_LOW
_A_ROWS = [np.array(r + [0.0] * (7 - len(r))) for r in _A]


@dataclass
class IntegratorConfig:
    rel_tol: float = 1e-8
    abs_tol: float = 1e-10
    max_step: float = np.inf
    storage_stride: int = 1
    first_step: float | None = None
    min_step: float = 1e-14  # relative to the span

    def __post_init__(self):
        if not (self.rel_tol > 0 and self.abs_tol > 0):
            raise InvalidParameterError("tolerances must be > 0")
        if self.storage_stride < 1:
            raise InvalidParameterError("storage_stride must be >= 1")
        if not self.max_step > 0:
            raise InvalidParameterError("max_step must be > 0")


@dataclass
class StepStats:
    accepted: int = 0
    rejected: int = 0
    rhs_evals: int = 0
    events: list = field(default_factory=list)


def integrate(
    rhs: Callable[[float, np.ndarray], np.ndarray],
    y0: np.ndarray,
    t0: float,
    t1: float,
    cfg: IntegratorConfig,
    record: Callable[[float, np.ndarray], None] | None = None,
    t_eval=None,
    post_step: Callable[[float, np.ndarray], np.ndarray] | None = None,
    stats: StepStats | None = None,
) -> np.ndarray:
    """Integrate y' = rhs(t, y) from t0 to t1 and return y(t1).

    ``record(t, y)`` is called at t0, then every ``storage_stride`` accepted
    steps and at t1; if ``t_eval`` is given, steps are clipped to land on
    those times and ``record`` is called exactly there instead.
    ``post_step(t, y)`` may return a slightly corrected state after each
    accepted step; it must not change y beyond the error tolerance.
    """
    if stats is None:
        stats = StepStats()
    span = t1 - t0
    if span < 0:
        raise InvalidParameterError("t1 must be >= t0")
    y = np.array(y0, copy=True)
    t = t0
    if t_eval is not None:
        t_eval = np.asarray(t_eval, dtype=float)
        if np.any(np.diff(t_eval) < 0) or (len(t_eval) and (t_eval[0] < t0 or t_eval[-1] > t1)):
            raise InvalidParameterError("t_eval must be sorted and inside [t0, t1]")
        targets = list(t_eval)
        while targets and targets[0] <= t0:
            if record:
                record(t0, y)
            targets.pop(0)
    else:
        targets = None
        if record:
            record(t0, y)
    if span == 0:
        return y

    def norm(err, ya, yb):
        scale = cfg.abs_tol + cfg.rel_tol * np.maximum(np.abs(ya), np.abs(yb))
        return float(np.max(np.abs(err) / scale))

    fused = y.dtype == np.complex128 and y.flags.c_contiguous
    ks = np.empty((7,) + y.shape, dtype=y.dtype)

    def combine(h, coeffs, n, out):
        if fused:
            return stage_combination(y, h, coeffs, ks, n, out)
        out[...] = y + h * np.tensordot(coeffs[:n], ks[:n], axes=1)
        return out

    ks[0] = rhs(t, y)
    stats.rhs_evals += 1
    h = cfg.first_step
    if h is None:
        ymax = np.max(np.abs(y))
        d0 = ymax / (cfg.abs_tol + cfg.rel_tol * ymax)
        d1 = np.max(np.abs(ks[0])) / (cfg.abs_tol + cfg.rel_tol * ymax)
        h = 0.01 * d0 / d1 if d1 > 1e-12 else 1e-6 * span
    h = min(h, cfg.max_step, span)
    h_min = cfg.min_step * max(abs(span), 1.0)
    since_store = 0
    yi = np.empty_like(y)
    y_new = np.empty_like(y)
    zero = np.zeros_like(y)
    while t < t1:
        h = min(h, cfg.max_step, t1 - t)
        h_free = h  # proposal before clipping to an output time
        landing = False
        if targets:
            if t + h >= targets[0]:
                h = targets[0] - t
                landing = True
        if h < h_min and not landing and (t1 - t) > h_min:
            raise StiffnessError(f"step size underflow at t={t:.6g}", t)
        for i in range(1, 7):
            target = y_new if i == 6 else yi
            combine(h, _A_ROWS[i], i, target)
            ks[i] = rhs(t + _C[i] * h, target)
        stats.rhs_evals += 6
        # y_new holds the 5th-order solution (FSAL stage argument)
        if fused:
            err = stage_combination(zero, h, _E, ks, 7, yi)
        else:
            err = h * np.tensordot(_E, ks, axes=1)
        en = norm(err, y, y_new)
        if en <= 1.0 or h <= h_min:
            t = targets.pop(0) if landing else t + h
            if landing and abs(t1 - t) < 1e-12 * max(abs(t1), 1.0):
                t = t1
            y, y_new = y_new, y
            ks[0] = ks[6]
            stats.accepted += 1
            if post_step is not None:
                # corrections are at round-off level, so the FSAL stage is kept
                y = np.ascontiguousarray(post_step(t, y))
            since_store += 1
            if record:
                if targets is None:
                    if since_store >= cfg.storage_stride or t >= t1:
                        record(t, y)
                        since_store = 0
                elif landing:
                    record(t, y)
            fac = 0.9 * en ** (-0.2) if en > 0 else 5.0
            h = max(h, h_free) if landing else h
            h *= min(5.0, max(0.2, fac))
        else:
            stats.rejected += 1
            h *= max(0.2, 0.9 * en ** (-0.2))
    return y
