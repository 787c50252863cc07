import numpy as np
import pytest

from cavityspin.errors import InvalidParameterError, StiffnessError
from cavityspin.integrate import IntegratorConfig, StepStats, integrate


def test_linear_scalar_ode_accuracy():
    lam = -0.7 + 2.0j
    y = integrate(lambda t, y: lam * y, np.array([1.0 + 0j]), 0.0, 3.0, IntegratorConfig(rel_tol=1e-10, abs_tol=1e-12))
    assert abs(y[0] - np.exp(lam * 3.0)) < 1e-9


def test_fifth_order_convergence():
    # fixed step via a huge tolerance and max_step
    f = lambda t, y: np.cos(t) * y  # noqa: E731
    exact = np.exp(np.sin(2.0))
    errs = []
    for h in (0.2, 0.1):
        cfg = IntegratorConfig(rel_tol=1e3, abs_tol=1e3, max_step=h, first_step=h)
        errs.append(abs(integrate(f, np.array([1.0]), 0.0, 2.0, cfg)[0] - exact))
    order = np.log2(errs[0] / errs[1])
    assert 4.5 < order < 6.5


def test_t_eval_landing_and_record():
    seen = []
    ts = np.linspace(0, 1, 11)
    integrate(lambda t, y: -y, np.array([1.0]), 0.0, 1.0, IntegratorConfig(), record=lambda t, y: seen.append((t, y[0])), t_eval=ts)
    assert [t for t, _ in seen] == list(ts)
    assert np.allclose([v for _, v in seen], np.exp(-ts), atol=1e-9)


def test_stride_recording():
    seen = []
    stats = StepStats()
    integrate(
        lambda t, y: -y,
        np.array([1.0]),
        0.0,
        5.0,
        IntegratorConfig(storage_stride=3, max_step=0.1),
        record=lambda t, y: seen.append(t),
        stats=stats,
    )
    assert seen[0] == 0.0 and seen[-1] == 5.0
    assert len(seen) <= stats.accepted // 3 + 2
    assert stats.rhs_evals == 1 + 6 * (stats.accepted + stats.rejected)


def test_post_step_applied():
    count = []

    def post(t, y):
        count.append(t)
        return y

    stats = StepStats()
    integrate(lambda t, y: -y, np.array([1.0]), 0.0, 1.0, IntegratorConfig(), post_step=post, stats=stats)
    assert len(count) == stats.accepted


def test_stiffness_error_reports_time():
    # finite-time blow-up forces the step size to collapse
    with pytest.raises(StiffnessError) as exc:
        integrate(lambda t, y: y**2, np.array([1.0]), 0.0, 2.0, IntegratorConfig(min_step=1e-10))
    assert 0.9 < exc.value.t_reached <= 1.0


@pytest.mark.parametrize("kwargs", [dict(rel_tol=0), dict(abs_tol=-1), dict(max_step=0), dict(storage_stride=0)])
def test_config_validation(kwargs):
    with pytest.raises(InvalidParameterError):
        IntegratorConfig(**kwargs)


def test_bad_span_and_t_eval():
    with pytest.raises(InvalidParameterError):
        integrate(lambda t, y: y, np.array([1.0]), 1.0, 0.0, IntegratorConfig())
    with pytest.raises(InvalidParameterError):
        integrate(lambda t, y: y, np.array([1.0]), 0.0, 1.0, IntegratorConfig(), t_eval=[0.5, 0.2])


def test_matrix_state_fused_path():
    rng = np.random.default_rng(1)
    a = rng.normal(size=(6, 6)) * 0.3
    y0 = (rng.normal(size=(6, 6)) + 1j * rng.normal(size=(6, 6))).astype(np.complex128)
    y = integrate(lambda t, y: a @ y, y0, 0.0, 1.0, IntegratorConfig(rel_tol=1e-11, abs_tol=1e-13))
    from scipy.linalg import expm

    assert np.max(np.abs(y - expm(a) @ y0)) < 1e-9
