import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nematic2d import kernels
from nematic2d.kernels import DIRICHLET, NEUMANN, PERIODIC, backends

IMPLS = backends()
BCS = [PERIODIC, NEUMANN, DIRICHLET]


def _shape(n, bc):
    return (n, n) if bc == PERIODIC else (n + 1, n + 1)


def test_backend_selected():
    assert kernels.BACKEND in IMPLS
    assert "python" in IMPLS


@pytest.mark.parametrize("bc", BCS)
def test_helmholtz_constant_null(bc):
    for k in IMPLS.values():
        x = np.full(_shape(8, bc), 2.5)
        assert np.allclose(k.helmholtz_apply(x, 0.3, 0.1, 0.2, bc), x, atol=1e-13)


@pytest.mark.skipif("cython" not in IMPLS, reason="compiled extension not built")
@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), n=st.integers(4, 24), bc=st.sampled_from(BCS),
       alpha=st.floats(1e-4, 1.0))
def test_backend_parity(seed, n, bc, alpha):
    rng = np.random.default_rng(seed)
    py, cy = IMPLS["python"], IMPLS["cython"]
    x = rng.standard_normal(_shape(n, bc))
    h = 1.0 / n
    assert np.allclose(py.helmholtz_apply(x, alpha, h, h, bc), cy.helmholtz_apply(x, alpha, h, h, bc),
                       rtol=1e-12, atol=1e-12 / h**2)
    xp, ip, rp = py.cg_helmholtz(x, np.zeros_like(x), alpha, h, h, bc, 1e-12, 2000)
    xc, ic, rc = cy.cg_helmholtz(x, np.zeros_like(x), alpha, h, h, bc, 1e-12, 2000)
    assert rp <= 1e-12 and rc <= 1e-12
    assert np.allclose(xp, xc, rtol=1e-9, atol=1e-9)
    u = rng.standard_normal(x.shape)
    w = rng.standard_normal(x.shape)
    per = bc == PERIODIC
    assert np.allclose(py.upwind_divergence(x, u, w, h, h, per), cy.upwind_divergence(x, u, w, h, h, per),
                       rtol=1e-12, atol=1e-10)


@pytest.mark.parametrize("name", sorted(IMPLS))
@pytest.mark.parametrize("bc", BCS)
def test_cg_solves(name, bc):
    k = IMPLS[name]
    rng = np.random.default_rng(3)
    x_true = rng.standard_normal(_shape(16, bc))
    h = 1.0 / 16
    b = k.helmholtz_apply(x_true, 0.01, h, h, bc)
    x0 = np.zeros_like(b)
    if bc == DIRICHLET:
        x0[0], x0[-1], x0[:, 0], x0[:, -1] = x_true[0], x_true[-1], x_true[:, 0], x_true[:, -1]
    x, it, res = k.cg_helmholtz(b, x0, 0.01, h, h, bc, 1e-13, 5000)
    assert res <= 1e-13 and it > 0
    assert np.max(np.abs(x - x_true)) < 1e-10


@pytest.mark.parametrize("name", sorted(IMPLS))
@pytest.mark.parametrize("periodic", [True, False])
def test_upwind_conserves_mass(name, periodic):
    k = IMPLS[name]
    rng = np.random.default_rng(5)
    n = 12
    shape = (n, n) if periodic else (n + 1, n + 1)
    rho, u, w = 1 + rng.random(shape), rng.standard_normal(shape), rng.standard_normal(shape)
    if not periodic:
        u[:, 0] = u[:, -1] = 0.0
        w[0, :] = w[-1, :] = 0.0
    div = k.upwind_divergence(rho, u, w, 0.1, 0.1, periodic)
    if periodic:
        assert abs(div.sum()) < 1e-12
    else:
        om = np.ones(shape)
        om[0, :] *= 0.5
        om[-1, :] *= 0.5
        om[:, 0] *= 0.5
        om[:, -1] *= 0.5
        assert abs((om * div).sum()) < 1e-12
