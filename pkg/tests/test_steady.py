import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cavityspin.dynamics import integrate_master, lindblad_rhs
from cavityspin.errors import InvalidParameterError, SingularParameterError
from cavityspin.integrate import IntegratorConfig
from cavityspin.params import ModelParams
from cavityspin.spin import check_state, observables, south_pole
from cavityspin.steady import (
    critical_drive,
    displacement,
    omega_for_alpha,
    order_parameter_thermodynamic,
    squeezing_sweep,
    steady_state,
)
from oracles import expect, spin_matrices, steady_state_nullspace


def test_displacement_limits():
    assert displacement(ModelParams(5, 0.3, 1.0, 0.0)) == 0
    a = displacement(ModelParams(5, 0.0, 2.0, 3.0))
    assert a.real == 0 and a.imag == pytest.approx(1.5)
    a = displacement(ModelParams(5, 0.5, 0.0, 3.0))
    assert a.imag == pytest.approx(0, abs=1e-15) and a.real == pytest.approx(-3.0)
    with pytest.raises(SingularParameterError):
        displacement(ModelParams(5, 0.0, 0.0, 1.0))


def test_undriven_steady_state_is_dark():
    sol = steady_state(ModelParams(7, 0.2, 1.0, 0.0))
    assert np.array_equal(sol.rho_ss, south_pole(7))


def test_matches_nullspace_oracle():
    p = ModelParams(4, 0.3, 1.0, 1.2)
    rho = steady_state(p).rho_ss
    ref = steady_state_nullspace(4, 0.3, 1.0, 1.2)
    assert 0.5 * np.abs(np.linalg.eigvalsh(rho - ref)).sum() < 1e-10
    ops = spin_matrices(4)
    # frozen from the null-space oracle
    assert expect(ref, ops["Jx"]) == pytest.approx(-0.5261017379431489, abs=1e-12)
    assert expect(rho, ops["Jy"]) == pytest.approx(0.8768362299052485, abs=1e-10)
    assert expect(rho, ops["Jz"]) == pytest.approx(-1.7066834994888405, abs=1e-10)


@pytest.mark.parametrize("n", [2, 4, 8])
def test_matches_long_time_integration(n):
    p = ModelParams.from_ratios(n, 1.0, 1.875, 1.0)
    cfg = IntegratorConfig(rel_tol=1e-11, abs_tol=1e-13)
    rho_t = integrate_master(south_pole(n), p, 150.0 / n + 60.0, cfg, eig_every=0).final_state
    diff = rho_t - steady_state(p).rho_ss
    assert 0.5 * np.abs(np.linalg.eigvalsh(diff)).sum() < 1e-6


def _relative_residual(p):
    rho = steady_state(p).rho_ss
    n = p.n_atoms
    scale = (abs(p.chi) * n * n + p.omega * n + p.gamma * n * n) * np.max(np.abs(rho))
    return np.max(np.abs(lindblad_rhs(rho, p))) / scale


def test_stationarity_grid():
    rng = np.random.default_rng(7)
    for _ in range(24):
        n = int(rng.choice([1, 3, 10, 50, 150, 400]))
        p = ModelParams.from_ratios(n, 1.0, rng.uniform(-3, 3), rng.uniform(0.05, 4))
        assert _relative_residual(p) < 1e-8


@given(
    n=st.integers(1, 60),
    chi_ratio=st.floats(-4, 4),
    omega_ratio=st.floats(0.01, 5),
)
def test_steady_state_valid_density(n, chi_ratio, omega_ratio):
    p = ModelParams.from_ratios(n, 1.0, chi_ratio, omega_ratio)
    rho = steady_state(p).rho_ss
    check_state(rho)
    assert np.max(np.abs(rho - rho.conj().T)) == 0.0
    assert _relative_residual(p) < 1e-8


def test_large_n_no_overflow():
    p = ModelParams.from_ratios(400, 1.0, 1.875, 3.0)
    sol = steady_state(p)
    assert np.all(np.isfinite(sol.rho_ss))
    assert np.trace(sol.rho_ss).real == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("abs_alpha", [0.8, 5.0, 30.0])
def test_spectrum_depends_only_on_abs_alpha(abs_alpha):
    n = 40
    p1 = ModelParams(n, 0.0, 1.0, omega_for_alpha(abs_alpha, 0.0, 1.0))
    p2 = ModelParams(n, 0.9375, 1.0, omega_for_alpha(abs_alpha, 0.9375, 1.0))
    assert abs(displacement(p1)) == pytest.approx(abs(displacement(p2)))
    e1 = np.linalg.eigvalsh(steady_state(p1).rho_ss)
    e2 = np.linalg.eigvalsh(steady_state(p2).rho_ss)
    assert np.max(np.abs(e1 - e2)) < 1e-8
    x1 = observables(steady_state(p1).rho_ss).xi2
    x2 = observables(steady_state(p2).rho_ss).xi2
    assert x1 == pytest.approx(x2, rel=1e-6)


def test_critical_drive_examples():
    p = ModelParams.from_ratios(10, 1.0, 1.875, 1.0)
    cd = critical_drive(p)
    assert 2 * cd.omega_c / (10 * 1.0) == pytest.approx(2.125)
    assert critical_drive(ModelParams(10, 0.0, 1.0, 1.0)).omega_c == pytest.approx(5.0)
    p = ModelParams.from_ratios(10, 1.0, 0.75, 1.0)
    assert 2 * critical_drive(p).omega_c / 10 == pytest.approx(1.25)
    assert cd.omega_sr == pytest.approx(5.0)


def test_order_parameter_thermodynamic():
    p = ModelParams.from_ratios(20, 1.0, 1.875, 1.0)
    assert order_parameter_thermodynamic(p.with_omega(0.6 * p.omega_c)) == pytest.approx(-0.8 * 10)
    assert order_parameter_thermodynamic(p.with_omega(p.omega_c)) == 0.0
    assert order_parameter_thermodynamic(p.with_omega(2 * p.omega_c)) == 0.0
    assert order_parameter_thermodynamic(p.with_omega(0.0)) == -10.0


@pytest.mark.parametrize("frac", [0.3, 0.6, 1.3])
def test_order_parameter_finite_size_convergence(frac):
    errs = []
    for n in (50, 100, 200, 400):
        p = ModelParams.from_ratios(n, 1.0, 1.875, 1.0)
        p = p.with_omega(frac * p.omega_c)
        jz = observables(steady_state(p).rho_ss).jz
        errs.append(abs(jz - order_parameter_thermodynamic(p)) / (n / 2) * math.sqrt(n))
    # error * sqrt(N) stays bounded and does not grow
    assert max(errs) < 0.5
    assert errs[-1] <= errs[0]


def test_squeezing_sweep_optimum_below_critical():
    p = ModelParams.from_ratios(200, 1.0, 1.875, 1.0)
    sw = squeezing_sweep(p, np.linspace(0.5, 1.2, 71) * p.omega_c)
    assert 0.85 < sw.argmin_omega / p.omega_c < 1.0
    assert sw.min_xi2 < 1.0
    assert len(sw.points) == 71


def test_weak_drive_nearly_coherent():
    p = ModelParams.from_ratios(200, 1.0, 1.875, 1.0)
    sw = squeezing_sweep(p, [0.05 * p.omega_c])
    assert sw.points[0].xi2 == pytest.approx(1.0, abs=0.01)
    assert sw.points[0].bloch_length == pytest.approx(100.0, rel=0.01)


def test_sweep_grid_validation():
    p = ModelParams(5, 0.1, 1.0, 1.0)
    with pytest.raises(InvalidParameterError):
        squeezing_sweep(p, [])
    with pytest.raises(InvalidParameterError):
        squeezing_sweep(p, [1.0, 0.5])


def test_optimal_squeezing_same_at_equal_abs_alpha():
    n = 100
    grid = np.linspace(2.0, 60.0, 117)
    best = []
    for chi in (0.0, 0.9375):
        xs = [observables(steady_state(ModelParams(n, chi, 1.0, omega_for_alpha(a, chi, 1.0))).rho_ss).xi2 for a in grid]
        best.append(np.nanmin(xs))
    assert best[0] == pytest.approx(best[1], rel=0.01)
