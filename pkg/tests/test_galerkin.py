import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import observed_orders
from nematic2d.density import upwind_faces
from nematic2d.energy import PhysParams, SchemeParams
from nematic2d.fields import BOX, PERIODIC, DirectorField, GridSpec, ScalarField, VectorField2, d_dx
from nematic2d.galerkin import (
    BasisError,
    VacuumError,
    assemble_mass,
    build_basis,
    dvdt_eval,
    forcing,
    forcing_nodal,
    load_basis,
    mass_apply,
    mass_solve,
    momentum_step,
    project,
    project_array,
    reconstruct,
    save_basis,
)

TWO_PI = 2 * math.pi


def torus(n, L=TWO_PI):
    return GridSpec(PERIODIC, L, L, n, n)


@pytest.fixture(scope="module")
def box_basis():
    return build_basis(GridSpec(BOX, 1.0, 1.0, 24, 24), PhysParams(mu=1.0, lam=0.5), 16, use_cache=False)


@pytest.fixture(scope="module")
def torus_basis():
    return build_basis(torus(32), PhysParams(mu=1.0, lam=0.0), 24)


class TestBasis:
    def test_lowest_torus_pair(self):
        b = build_basis(torus(16), PhysParams(mu=1.0, lam=0.0), 8)
        assert sorted(b.eigvals) == [1.0] * 4 + [2.0] * 4

    @pytest.mark.parametrize("mu,lam", [(1.0, 0.0), (0.7, 0.4), (2.0, -1.5)])
    def test_torus_eigenvalues_match_symbol(self, mu, lam):
        g = torus(32)
        b = build_basis(g, PhysParams(mu=mu, lam=lam), 40)
        X, Y = g.coords()
        w = g.weights()
        for i, (m, l, fam, phase) in enumerate(b.labels):
            kx, ky = 2 * math.pi * m / g.lx, 2 * math.pi * l / g.ly
            k2 = kx * kx + ky * ky
            symbol = mu * k2 if fam == "solenoidal" else (2 * mu + lam) * k2
            assert b.eigvals[i] == pytest.approx(symbol, abs=1e-10)
            # analytic Lame operator on e f(k.x): mu k^2 e f + (mu+lam) k (k.e) f
            e = b.modes[i, :, 0, 0] if np.any(b.modes[i, :, 0, 0]) else None
            arg = kx * X + ky * Y
            f = np.cos(arg) if phase == "cos" else np.sin(arg)
            amp = math.sqrt(2 / g.area)
            e = (np.array([-ky, kx]) if fam == "solenoidal" else np.array([kx, ky])) / math.sqrt(k2)
            Ae = mu * k2 * e + (mu + lam) * np.array([kx, ky]) * (kx * e[0] + ky * e[1])
            rq = np.sum(w * amp * f * (b.modes[i, 0] * Ae[0] + b.modes[i, 1] * Ae[1]))
            assert rq == pytest.approx(symbol, abs=1e-10)

    def test_torus_gram_and_residual(self, torus_basis):
        assert np.max(np.abs(torus_basis.gram() - np.eye(torus_basis.n))) < 1e-8
        assert np.max(torus_basis.eigen_residuals()) < 1e-10

    def test_box_invariants(self, box_basis):
        assert box_basis.eigvals[0] > 0
        assert np.all(np.diff(box_basis.eigvals) >= 0)
        assert np.max(np.abs(box_basis.gram() - np.eye(box_basis.n))) < 1e-8
        assert np.max(box_basis.eigen_residuals()) < 1e-6
        assert np.all(box_basis.modes[:, :, [0, -1], :] == 0)
        assert np.all(box_basis.modes[:, :, :, [0, -1]] == 0)

    def test_box_first_eigenvalue_converges(self):
        # mu = 1, lam = -1 decouples into two Dirichlet Laplacians: lowest eigenvalue 2 pi^2
        errs = []
        for n in (8, 16, 32):
            b = build_basis(GridSpec(BOX, 1.0, 1.0, n, n), PhysParams(mu=1.0, lam=-1.0), 2, use_cache=False)
            errs.append(abs(b.eigvals[0] - 2 * math.pi**2))
        assert min(observed_orders(errs)) >= 1.9

    def test_too_many_modes(self):
        with pytest.raises(BasisError):
            build_basis(torus(8), PhysParams(), 500)
        with pytest.raises(BasisError):
            build_basis(GridSpec(BOX, 1.0, 1.0, 8, 8), PhysParams(), 97, use_cache=False)

    def test_cache_roundtrip(self, box_basis, tmp_path):
        save_basis(box_basis, tmp_path / "b.npz")
        back = load_basis(tmp_path / "b.npz", box_basis.grid, box_basis.mu, box_basis.lam, box_basis.n)
        assert np.array_equal(back.modes, box_basis.modes)
        assert load_basis(tmp_path / "b.npz", box_basis.grid, 2.0, box_basis.lam, box_basis.n) is None


class TestProjection:
    @pytest.mark.parametrize("which", ["torus", "box"])
    def test_mode_projects_to_unit_vector(self, which, torus_basis, box_basis):
        b = torus_basis if which == "torus" else box_basis
        a = project(b.mode(2), b)
        assert np.max(np.abs(a - np.eye(b.n)[2])) < 1e-10

    def test_orthogonal_complement(self, box_basis):
        rng = np.random.default_rng(4)
        F = rng.standard_normal((2,) + box_basis.grid.shape)
        F -= reconstruct(project_array(F, box_basis), box_basis).stacked()
        assert np.max(np.abs(project_array(F, box_basis))) < 1e-8

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_pythagoras(self, seed):
        g = torus(16)
        b = build_basis(g, PhysParams(), 12)
        rng = np.random.default_rng(seed)
        X, Y = g.coords()
        c = rng.standard_normal(4)
        f = VectorField2(g, c[0] * np.sin(X + Y) + c[1] * np.cos(2 * Y), c[2] * np.cos(X) + c[3] * np.sin(3 * X))
        a = project(f, b)
        w = g.weights()
        P = reconstruct(a, b)
        sq = lambda u, v: float(np.sum(w * (u * u + v * v)))
        total = sq(f.u, f.w)
        assert sq(f.u - P.u, f.w - P.w) + sq(P.u, P.w) == pytest.approx(total, rel=1e-6)


class TestMass:
    def test_constant_density(self, box_basis):
        rho = np.full(box_basis.grid.shape, 2.5)
        op = assemble_mass(rho, box_basis)
        assert np.max(np.abs(op.M - 2.5 * np.eye(box_basis.n))) < 1e-8
        b = np.arange(box_basis.n, dtype=float)
        assert np.allclose(mass_solve(op, b), b / 2.5, atol=1e-12)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.floats(0.05, 2.0))
    def test_spectrum_and_roundtrip(self, seed, rho_lo):
        b = build_basis(torus(16), PhysParams(), 12)
        rng = np.random.default_rng(seed)
        rho = rho_lo + rng.random(b.grid.shape)
        op = assemble_mass(rho, b)
        ev = np.linalg.eigvalsh(op.M)
        slack = 1e-8
        assert ev[0] >= rho.min() * (1 - slack) and ev[-1] <= rho.max() * (1 + slack)
        assert np.linalg.norm(np.linalg.inv(op.M), 2) <= 1 / rho.min() * (1 + slack)
        x = rng.standard_normal(b.n)
        assert np.allclose(mass_solve(op, mass_apply(op, x)), x, atol=1e-9)
        rhs = rng.standard_normal(b.n)
        assert np.linalg.norm(op.M @ mass_solve(op, rhs) - rhs) <= 1e-10 * np.linalg.norm(rhs)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_lipschitz_in_density(self, seed):
        b = build_basis(torus(16), PhysParams(), 12)
        rng = np.random.default_rng(seed)
        r1 = 0.5 + rng.random(b.grid.shape)
        r2 = 0.5 + rng.random(b.grid.shape)
        lhs = np.linalg.norm(assemble_mass(r1, b).M - assemble_mass(r2, b).M, 2)
        c_n = float(np.max(np.sum(b.modes**2, axis=(0, 1))))
        l1 = float(np.sum(b.grid.weights() * np.abs(r1 - r2)))
        assert lhs <= c_n * l1 * (1 + 1e-12)

    def test_vacuum(self, box_basis):
        rho = np.ones(box_basis.grid.shape)
        rho[5, 5] = 0.0
        with pytest.raises(VacuumError):
            assemble_mass(rho, box_basis)


class TestForcing:
    def test_constant_fields(self, torus_basis):
        g = torus_basis.grid
        one = np.ones(g.shape)
        a = forcing(ScalarField(g, 1.3 * one), VectorField2(g, 0.2 * one, -0.1 * one), DirectorField.constant(g),
                    None, PhysParams(), SchemeParams(), torus_basis)
        assert np.max(np.abs(a)) < 1e-12

    def test_elastic_dual_paths(self):
        errs = []
        for n in (32, 64, 128):
            g = torus(n)
            X, Y = g.coords()
            d = DirectorField.from_angle(g, 0.6 * np.sin(X) * np.cos(Y))
            args = (np.ones(g.shape), np.zeros((2,) + g.shape), d, PhysParams(), SchemeParams())
            diff = forcing_nodal(*args, elastic_path="tension") - forcing_nodal(*args, elastic_path="stress")
            errs.append(np.max(np.abs(diff)))
        assert errs[-1] < 1e-3
        assert min(observed_orders(errs)) >= 1.9

    def test_planar_rotation_dual_paths(self):
        g = torus(64)
        b = build_basis(g, PhysParams(), 24)
        X, _ = g.coords()
        d = DirectorField(g, np.cos(2 * X), np.sin(2 * X))
        args = (ScalarField(g, np.ones(g.shape)), VectorField2.zeros(g), d, None, PhysParams(), SchemeParams(), b)
        assert np.max(np.abs(forcing(*args, elastic_path="tension") - forcing(*args, elastic_path="stress"))) < 1e-10

    def test_pressure_chain_rule(self):
        errs = []
        for n in (32, 64, 128):
            g = torus(n)
            b = build_basis(g, PhysParams(), 24)
            X, _ = g.coords()
            rho = 1 + 0.1 * np.cos(X)
            p = PhysParams(A=1.0, gamma=2.0, mu=1.0)
            a = forcing(ScalarField(g, rho), VectorField2.zeros(g), DirectorField.constant(g), None, p,
                        SchemeParams(), b)
            oracle = project(VectorField2(g, -2 * rho * (-0.1 * np.sin(X)), 0 * X), b)
            errs.append(np.max(np.abs(a - oracle)))
        assert min(observed_orders(errs)) >= 1.9


def _rest(g):
    return ScalarField(g, np.ones(g.shape)), DirectorField.constant(g).stacked()


class TestMomentumStep:
    def test_rest_state(self, torus_basis):
        rho, D = _rest(torus_basis.grid)
        r = momentum_step(np.zeros(torus_basis.n), rho, rho, D, PhysParams(), SchemeParams(dt=0.1), torus_basis)
        assert np.all(r.a == 0)

    def test_shear_mode_has_no_forcing(self, torus_basis):
        # a single solenoidal Fourier mode is a steady Euler flow, so only viscosity acts
        rho, D = _rest(torus_basis.grid)
        a0 = np.eye(torus_basis.n)[0]
        r = momentum_step(a0, rho, rho, D, PhysParams(), SchemeParams(dt=0.1), torus_basis)
        assert np.max(np.abs(r.forcing)) < 1e-12
        assert np.allclose(r.a, a0 / (1 + 0.1 * torus_basis.eigvals[0]), atol=1e-13)

    def test_stokes_decay(self, box_basis):
        g = box_basis.grid
        rho, D = _rest(g)
        p = PhysParams(mu=1.0, lam=0.5)
        lam1 = box_basis.eigvals[0]
        T = 0.02
        errs = []
        for dt in (0.002, 0.001, 0.0005):
            a = 0.01 * np.eye(box_basis.n)[0]
            for _ in range(int(round(T / dt))):
                a = momentum_step(a, rho, rho, D, p, SchemeParams(dt=dt), box_basis).a
            errs.append(abs(a[0] - 0.01 * math.exp(-lam1 * T)) / 0.01)
        assert errs[0] < 5e-2
        ratios = [x / y for x, y in zip(errs, errs[1:])]
        assert all(1.6 < q < 2.4 for q in ratios), ratios

    def test_picard_converges(self, torus_basis):
        g = torus_basis.grid
        X, Y = g.coords()
        rng = np.random.default_rng(1)
        a0 = 0.3 * rng.standard_normal(torus_basis.n)
        rho_old = ScalarField(g, 1 + 0.2 * np.cos(X) * np.sin(Y))
        V = reconstruct(a0, torus_basis)
        faces = upwind_faces(rho_old.values, V.u, V.w, g)
        r = momentum_step(a0, rho_old, rho_old, DirectorField.from_angle(g, 0.3 * np.sin(Y)).stacked(),
                          PhysParams(), SchemeParams(dt=0.01, eps=0.05), torus_basis, faces=faces)
        assert 1 < r.iterations < 50


class TestDvdt:
    def test_static_density(self, torus_basis):
        rho, _ = _rest(torus_basis.grid)
        op = assemble_mass(1.7 * rho.values, torus_basis)
        N = np.arange(torus_basis.n, dtype=float)
        assert np.allclose(dvdt_eval(np.ones(torus_basis.n), op, 0 * rho.values, N, torus_basis), N / 1.7)
        assert np.all(dvdt_eval(np.ones(torus_basis.n), op, 0 * rho.values, 0 * N, torus_basis) == 0)

    def test_finite_difference_consistency(self, torus_basis):
        g = torus_basis.grid
        X, Y = g.coords()
        rho_t = 0.5 * np.cos(X) * np.cos(Y)
        rho0 = 1 + 0.2 * np.sin(X)
        a0 = 0.2 * np.random.default_rng(2).standard_normal(torus_basis.n)
        D = DirectorField.constant(g).stacked()
        gaps = []
        for dt in (0.01, 0.005, 0.0025):
            rho1 = ScalarField(g, rho0 + dt * rho_t)
            r = momentum_step(a0, rho1, ScalarField(g, rho0), D, PhysParams(), SchemeParams(dt=dt), torus_basis)
            total = r.forcing - torus_basis.eigvals * r.a
            fd = (r.a - a0) / dt
            gaps.append(np.max(np.abs(fd - dvdt_eval(r.a, r.mass_op, rho_t, total, torus_basis))))
        assert all(1.7 < x / y < 2.3 for x, y in zip(gaps, gaps[1:])), gaps
