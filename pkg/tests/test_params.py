import math

import pytest

from cavityspin.errors import InvalidParameterError
from cavityspin.params import CavityParams, ModelParams, derive_couplings, model_from_cavity


@pytest.mark.parametrize(
    "g, delta, kappa, chi, gamma",
    [
        (1.0, 0.0, 4.0, 0.0, 1.0),
        (1.0, 1.0, 2.0, 0.5, 1.0),
        (1.0, 100.0, 1.0, 400 / 40001, 4 / 40001),
    ],
)
def test_derive_couplings(g, delta, kappa, chi, gamma):
    c, gm = derive_couplings(CavityParams(g, delta, kappa))
    assert c == pytest.approx(chi, rel=1e-14, abs=1e-15)
    assert gm == pytest.approx(gamma, rel=1e-14)


def test_far_detuned_limit():
    chi, gamma = derive_couplings(CavityParams(1.0, 100.0, 1.0))
    assert chi == pytest.approx(9.99975e-3, rel=1e-6)
    assert gamma == pytest.approx(9.99975e-5, rel=1e-6)


@pytest.mark.parametrize("kwargs", [dict(g=1, delta=0, kappa=0), dict(g=1, delta=0, kappa=-1), dict(g=-1, delta=0, kappa=1)])
def test_cavity_validation(kwargs):
    with pytest.raises(InvalidParameterError):
        CavityParams(**kwargs)


@pytest.mark.parametrize(
    "args",
    [(0, 1, 1, 1), (2.5, 1, 1, 1), (4, 1, -1, 1), (4, 1, 1, -1), (4, 0, 0, 0), (4, math.nan, 1, 1)],
)
def test_model_validation(args):
    with pytest.raises(InvalidParameterError):
        ModelParams(*args)


def test_model_properties():
    p = ModelParams.from_ratios(400, 1 / 1485, 1.875, 3.86)
    assert 2 * p.chi / p.gamma == pytest.approx(1.875)
    assert 2 * p.omega / (p.n_atoms * p.gamma) == pytest.approx(3.86)
    assert p.omega_sr == pytest.approx(200 / 1485)
    assert p.spin == 200
    assert p.with_omega(0.1).omega == 0.1 and p.with_n(10).n_atoms == 10


def test_model_from_cavity():
    p = model_from_cavity(10, CavityParams(1.0, 1.0, 2.0), 0.3)
    assert (p.chi, p.gamma, p.omega) == pytest.approx((0.5, 1.0, 0.3))
