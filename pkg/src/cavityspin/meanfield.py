"""Mean-field Bloch dynamics, effective potential, fixed points and phases.

Spin variables are normalized, s_i = <J_i>/(N/2). Along any trajectory the
transverse spin is fixed by a single scalar b(t) with s_z = -db/dt and

    s+(b) = s+(0) E + beta (1 - E),  E = exp(-(N Gamma/2 - i N chi) b),
    beta = 2 i Omega / (N Gamma - 2 i N chi),

so db/dt^2 + V(b) = 1 with V(b) = |s+(b)|^2.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import minimize_scalar

from .errors import InvalidParameterError
from .params import ModelParams


@dataclass(frozen=True)
class BlochVector:
    sx: float
    sy: float
    sz: float

    @classmethod
    def from_angles(cls, theta: float, phi: float) -> "BlochVector":
        return cls(
            math.sin(theta) * math.cos(phi),
            math.sin(theta) * math.sin(phi),
            math.cos(theta),
        )

    @classmethod
    def south_pole(cls) -> "BlochVector":
        return cls(0.0, 0.0, -1.0)

    def as_array(self) -> np.ndarray:
        return np.array([self.sx, self.sy, self.sz])

    @property
    def s_plus(self) -> complex:
        return complex(self.sx, self.sy)

    @property
    def norm(self) -> float:
        return math.sqrt(self.sx**2 + self.sy**2 + self.sz**2)


def _require_unit(s0: BlochVector, tol=1e-9):
    if abs(s0.norm - 1) > tol:
        raise InvalidParameterError(f"initial Bloch vector must be normalized (|s|={s0.norm})")


def mf_rhs(s, p: ModelParams) -> np.ndarray:
    sx, sy, sz = (s.sx, s.sy, s.sz) if isinstance(s, BlochVector) else s
    n, g, c, om = p.n_atoms, p.gamma, p.chi, p.omega
    return np.array(
        [
            n * c * sy * sz + 0.5 * n * g * sx * sz,
            -om * sz - n * c * sx * sz + 0.5 * n * g * sy * sz,
            om * sy - 0.5 * n * g * (sx * sx + sy * sy),
        ]
    )


@dataclass
class MeanFieldTrajectory:
    t: np.ndarray
    s: np.ndarray  # shape (len(t), 3)
    b: np.ndarray  # -integral of s_z

    @property
    def sz(self) -> np.ndarray:
        return self.s[:, 2]

    @property
    def s_plus(self) -> np.ndarray:
        return self.s[:, 0] + 1j * self.s[:, 1]

    def norm_drift(self) -> np.ndarray:
        return np.sum(self.s**2, axis=1) - 1


def integrate_mf(
    s0: BlochVector,
    p: ModelParams,
    t_final: float,
    tol: float = 1e-11,
    t_eval=None,
    max_step: float = np.inf,
) -> MeanFieldTrajectory:
    """Adaptive DOP853 integration of the mean-field equations.

    The norm is not renormalized; its drift is left as a diagnostic. The
    auxiliary coordinate b(t) = -integral of s_z is integrated alongside.
    """
    _require_unit(s0)
    if not tol > 0:
        raise InvalidParameterError("tol must be > 0")

    def f(t, y):
        ds = mf_rhs(y[:3], p)
        return np.array([ds[0], ds[1], ds[2], -y[2]])

    y0 = np.array([s0.sx, s0.sy, s0.sz, 0.0])
    sol = solve_ivp(
        f,
        (0.0, t_final),
        y0,
        method="DOP853",
        rtol=tol,
        atol=tol,
        t_eval=t_eval,
        max_step=max_step,
    )
    if not sol.success:
        raise RuntimeError(sol.message)
    return MeanFieldTrajectory(sol.t, sol.y[:3].T.copy(), sol.y[3].copy())


@dataclass(frozen=True)
class EffectivePotentialSpec:
    amplitude: float  # Omega^2 / Omega_c^2
    s_plus_0: complex
    phase_phi: float
    rate_re: float  # N Gamma / 2
    rate_im: float  # N chi

    @classmethod
    def from_model(cls, s0: BlochVector, p: ModelParams) -> "EffectivePotentialSpec":
        beta = beta_of(p)
        amp = abs(beta) ** 2
        sp0 = s0.s_plus
        z = beta * sp0.conjugate()
        phi = math.atan2(z.imag, z.real) if z != 0 else 0.0
        return cls(amp, sp0, phi, 0.5 * p.n_atoms * p.gamma, p.n_atoms * p.chi)


def beta_of(p: ModelParams) -> complex:
    """Mean-field transverse steady value 2 i Omega / (N Gamma - 2 i N chi)."""
    n = p.n_atoms
    denom = complex(n * p.gamma, -2 * n * p.chi)
    if denom == 0:
        raise InvalidParameterError("gamma = chi = 0 has no effective potential")
    return 2j * p.omega / denom


def effective_potential(b, spec: EffectivePotentialSpec):
    """V(b) = |s+(b)|^2 written out with the initial-condition cross terms."""
    b = np.asarray(b, dtype=float)
    a = spec.amplitude
    r = abs(spec.s_plus_0)
    decay = np.exp(-spec.rate_re * b)
    osc = spec.rate_im * b
    v = a * (1 - 2 * decay * np.cos(osc) + decay**2) + r**2 * decay**2
    v = v + 2 * r * math.sqrt(a) * decay * (np.cos(spec.phase_phi - osc) - decay * math.cos(spec.phase_phi))
    return v if v.ndim else float(v)


def s_plus_of_b(b, s0: BlochVector, p: ModelParams):
    k = 0.5 * p.n_atoms * p.gamma - 1j * p.n_atoms * p.chi
    e = np.exp(-k * np.asarray(b, dtype=float))
    return s0.s_plus * e + beta_of(p) * (1 - e)


def _sup_potential(spec: EffectivePotentialSpec, b_max: float, n_scan: int) -> float:
    b = np.linspace(0, b_max, n_scan + 1)[1:]
    v = effective_potential(b, spec)
    i = int(np.argmax(v))
    lo = b[max(i - 1, 0)]
    hi = b[min(i + 1, len(b) - 1)]
    best = float(v[i])
    if hi > lo:
        res = minimize_scalar(
            lambda x: -effective_potential(x, spec),
            bounds=(lo, hi),
            method="bounded",
            options={"xatol": 1e-12 * b_max},
        )
        best = max(best, -float(res.fun))
    # b -> infinity limit: the exponentials die (gamma > 0) leaving the amplitude
    if spec.rate_re > 0:
        best = max(best, spec.amplitude)
    return best


def oscillation_threshold(
    s0: BlochVector,
    p: ModelParams,
    n_scan: int = 10_000,
    b_max: float | None = None,
    rtol: float = 1e-10,
) -> float:
    """Smallest drive for which V(b) reaches 1 at some b > 0 (a turning point).

    ``p.omega`` is ignored. Bisection on Omega over [0, Omega_c]; at Omega_c
    the b -> infinity limit of V equals 1, so the bracket is always valid.
    """
    _require_unit(s0)
    if p.gamma <= 0:
        raise InvalidParameterError("threshold search needs gamma > 0")
    if b_max is None:
        b_max = 20.0 / (p.n_atoms * p.gamma)
    oc = p.omega_c

    def reaches(om):
        spec = EffectivePotentialSpec.from_model(s0, p.with_omega(om))
        return _sup_potential(spec, b_max, n_scan) >= 1.0 - 1e-14

    if reaches(0.0):
        return 0.0
    lo, hi = 0.0, oc
    while hi - lo > rtol * oc:
        mid = 0.5 * (lo + hi)
        if reaches(mid):
            hi = mid
        else:
            lo = mid
    return hi


class Stability(str, enum.Enum):
    STABLE = "stable"
    UNSTABLE = "unstable"
    MARGINAL = "marginal/oscillatory"


@dataclass(frozen=True)
class FixedPoint:
    s: BlochVector
    eigenvalues: tuple  # complex stability eigenvalues (SS1) or (lambda^2,) for SS2/SS3
    label: Stability


@dataclass(frozen=True)
class FixedPointSet:
    ss1: FixedPoint | None
    ss1_upper: FixedPoint | None  # the s_z > 0 partner of SS1, always unstable
    ss2: FixedPoint | None
    ss3: FixedPoint | None

    def all(self) -> list[FixedPoint]:
        return [f for f in (self.ss1, self.ss1_upper, self.ss2, self.ss3) if f is not None]


def fixed_points(p: ModelParams) -> FixedPointSet:
    n, g, c, om = p.n_atoms, p.gamma, p.chi, p.omega
    ss1 = ss1u = ss2 = ss3 = None
    amp = (om / p.omega_c) ** 2 if p.omega_c > 0 else math.inf
    if amp < 1:
        beta = beta_of(p)
        root = math.sqrt(1 - amp)
        for sz in (-root, root):
            lam = tuple(n * complex(0.5 * g, sgn * c) * sz for sgn in (1, -1))
            re = lam[0].real
            label = Stability.STABLE if re < 0 else (Stability.UNSTABLE if re > 0 else Stability.MARGINAL)
            fp = FixedPoint(BlochVector(beta.real, beta.imag, sz), lam, label)
            if sz < 0:
                ss1 = fp
            else:
                ss1u = fp
    if om >= p.omega_sr and om > 0:
        sy = n * g / (2 * om)
        r = math.sqrt(max(0.0, 1 - sy * sy))
        branches = []
        for sgn in (1.0, -1.0):
            lam2 = -om * om * (r + sgn * n * c / om) * r
            label = Stability.UNSTABLE if lam2 > 0 else Stability.MARGINAL
            branches.append(FixedPoint(BlochVector(sgn * r, sy, 0.0), (lam2,), label))
        # SS2 is the branch with the larger lambda^2 (the unstable one below Omega_c)
        branches.sort(key=lambda f: -f.eigenvalues[0])
        ss2, ss3 = branches
    return FixedPointSet(ss1, ss1u, ss2, ss3)


class PhaseLabel(str, enum.Enum):
    SUPERRADIANT = "Superradiant"
    MULTISTABLE_DECAYING = "MultistableDecaying"
    MULTISTABLE_OSCILLATING = "MultistableOscillating"
    NORMAL = "Normal"


def classify_phase(p: ModelParams, s0: BlochVector, threshold: float | None = None) -> PhaseLabel:
    """Phase of a drive/initial-condition pair, decided from the potential alone."""
    _require_unit(s0)
    if p.omega <= p.omega_sr:
        return PhaseLabel.SUPERRADIANT
    if p.omega > p.omega_c:
        return PhaseLabel.NORMAL
    if threshold is None:
        threshold = oscillation_threshold(s0, p)
    if p.omega >= threshold:
        return PhaseLabel.MULTISTABLE_OSCILLATING
    return PhaseLabel.MULTISTABLE_DECAYING


def time_average_sz(traj: MeanFieldTrajectory, window_t: float) -> float:
    """(1/T) * integral of s_z over [0, T], trapezoid rule on the stored points."""
    from .dynamics import trapezoid_average

    return trapezoid_average(traj.t, traj.sz, window_t)
