"""Faedo-Galerkin velocity space, mass operator, forcing and the momentum step.

The velocity lives in ``X_n = span{Psi_1..Psi_n}``, eigenfunctions of the Lame
operator ``-mu Lap - (mu+lam) grad div`` orthonormal in discrete L2.

* torus: closed-form Fourier modes.  Each wavevector ``k`` in the upper
  half plane gives a solenoidal direction ``k_perp/|k|`` (eigenvalue
  ``mu|k|^2``) and a gradient direction ``k/|k|`` (eigenvalue
  ``(2mu+lam)|k|^2``), each with a cosine and a sine phase.
* box: lowest eigenpairs of the assembled finite-difference Lame matrix on
  interior nodes (zero wall values), by shift-invert Lanczos followed by a
  Rayleigh-Ritz cleanup.  Results are cached on disk.

Two forcing assemblies are provided.  ``forcing`` is the plain nodal
centred-difference form of the momentum right side.  ``momentum_step`` uses
``structured_forcing``, in which the pressure, convection and
``eps grad rho . grad v`` terms are built from the same face fluxes that
advanced the density, so that the semi-discrete energy balance closes
exactly.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .density import FaceFlux, face_divergence, face_gradient_to_nodes, upwind_faces
from .energy import PhysParams, SchemeParams, artificial_derivative, q_derivative, vacuum_threshold
from .fields import (
    DirectorField,
    GridSpec,
    ScalarField,
    VectorField2,
    check_same_grid,
    d_dx,
    d_dy,
    lap,
    stress_divergence,
)

CACHE_FORMAT = 1


class BasisError(RuntimeError):
    pass


class VacuumError(RuntimeError):
    pass


class MomentumError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class GalerkinBasis:
    grid: GridSpec
    mu: float
    lam: float
    eigvals: np.ndarray
    modes: np.ndarray  # (n, 2, Ny, Nx)
    labels: tuple = ()

    @property
    def n(self) -> int:
        return len(self.eigvals)

    @property
    def matrix(self) -> np.ndarray:
        """Modes flattened to ``(n, 2*Ny*Nx)``."""
        return self.modes.reshape(self.n, -1)

    def mode(self, i: int) -> VectorField2:
        return VectorField2(self.grid, self.modes[i, 0], self.modes[i, 1])

    def gram(self) -> np.ndarray:
        W = np.concatenate([self.grid.weights().ravel()] * 2)
        Phi = self.matrix
        return (Phi * W) @ Phi.T

    def eigen_residuals(self) -> np.ndarray:
        """``||A Psi_i - lambda_i Psi_i||_{L2} / lambda_i`` for every mode."""
        w = self.grid.weights()
        out = np.empty(self.n)
        for i in range(self.n):
            r = lame_apply(self.modes[i], self.grid, self.mu, self.lam) - self.eigvals[i] * self.modes[i]
            out[i] = np.sqrt(np.sum(w * (r[0] ** 2 + r[1] ** 2))) / self.eigvals[i]
        return out


# ---------------------------------------------------------------------------
# Lame operator

def _spectral_wavenumbers(grid: GridSpec) -> tuple[np.ndarray, np.ndarray]:
    ny, nx = grid.shape
    kx = 2.0 * np.pi * np.fft.fftfreq(nx, d=grid.hx)
    ky = 2.0 * np.pi * np.fft.fftfreq(ny, d=grid.hy)
    return np.meshgrid(kx, ky, indexing="xy")


def lame_apply(V: np.ndarray, grid: GridSpec, mu: float, lam: float) -> np.ndarray:
    """``-mu Lap V - (mu+lam) grad div V`` for ``V`` of shape ``(2, Ny, Nx)``.

    Torus: exact spectral symbol.  Box: the finite-difference operator whose
    eigenvectors form the box basis (zero wall values enforced).
    """
    if grid.periodic:
        KX, KY = _spectral_wavenumbers(grid)
        U = np.fft.fft2(V[0])
        Wf = np.fft.fft2(V[1])
        k2 = KX * KX + KY * KY
        div = KX * U + KY * Wf
        out_u = mu * k2 * U + (mu + lam) * KX * div
        out_w = mu * k2 * Wf + (mu + lam) * KY * div
        return np.array([np.fft.ifft2(out_u).real, np.fft.ifft2(out_w).real])
    A = _box_lame_matrix(grid, mu, lam)
    ny, nx = grid.shape
    inner = np.concatenate([V[0, 1:-1, 1:-1].ravel(), V[1, 1:-1, 1:-1].ravel()])
    y = A @ inner
    out = np.zeros_like(V)
    m = (ny - 2) * (nx - 2)
    out[0, 1:-1, 1:-1] = y[:m].reshape(ny - 2, nx - 2)
    out[1, 1:-1, 1:-1] = y[m:].reshape(ny - 2, nx - 2)
    return out


def _box_lame_matrix(grid: GridSpec, mu: float, lam: float) -> sp.csr_matrix:
    mx, my = grid.nx - 1, grid.ny - 1
    ex = np.ones(mx)
    ey = np.ones(my)
    L1x = sp.diags([ex[:-1], -2.0 * ex, ex[:-1]], [-1, 0, 1]) / grid.hx**2
    L1y = sp.diags([ey[:-1], -2.0 * ey, ey[:-1]], [-1, 0, 1]) / grid.hy**2
    D1x = sp.diags([-ex[:-1], ex[:-1]], [-1, 1]) / (2.0 * grid.hx)
    D1y = sp.diags([-ey[:-1], ey[:-1]], [-1, 1]) / (2.0 * grid.hy)
    Ix, Iy = sp.identity(mx), sp.identity(my)
    Lap = sp.kron(Iy, L1x) + sp.kron(L1y, Ix)
    Dx = sp.kron(Iy, D1x)
    Dy = sp.kron(D1y, Ix)
    c = mu + lam
    A = sp.bmat([[-mu * Lap - c * (Dx @ Dx), -c * (Dx @ Dy)], [-c * (Dy @ Dx), -mu * Lap - c * (Dy @ Dy)]])
    return A.tocsr()


# ---------------------------------------------------------------------------
# basis construction

def _torus_basis(grid: GridSpec, mu: float, lam: float, n: int) -> GalerkinBasis:
    X, Y = grid.coords()
    norm = np.sqrt(2.0 / grid.area)
    cands = []
    radius = 1
    while True:
        cands = []
        for m in range(0, radius + 1):
            for l in range(-radius, radius + 1):
                if m == 0 and l <= 0:
                    continue
                kx = 2.0 * np.pi * m / grid.lx
                ky = 2.0 * np.pi * l / grid.ly
                k2 = kx * kx + ky * ky
                for fam, lv in ((0, mu * k2), (1, (2.0 * mu + lam) * k2)):
                    for phase in (0, 1):
                        cands.append((lv, np.sqrt(k2), m, l, fam, phase, kx, ky))
        # every wavevector with |k| below the search radius is enumerated
        kmax = 2.0 * np.pi * radius / max(grid.lx, grid.ly)
        cands.sort(key=lambda c: (round(c[0], 9), round(c[1], 12), c[2], c[3], c[4], c[5]))
        if len(cands) >= n and cands[n - 1][0] < mu * kmax * kmax:
            break
        radius *= 2
    chosen = cands[:n]
    for c in chosen:
        if abs(c[2]) >= grid.nx // 2 or abs(c[3]) >= grid.ny // 2:
            raise BasisError(f"requested {n} modes exceed the grid's resolvable wavevectors")
    modes = np.empty((n, 2) + grid.shape)
    labels = []
    for i, (lv, _, m, l, fam, phase, kx, ky) in enumerate(chosen):
        kn = np.hypot(kx, ky)
        dx_, dy_ = ((-ky / kn, kx / kn) if fam == 0 else (kx / kn, ky / kn))
        arg = kx * X + ky * Y
        s = norm * (np.cos(arg) if phase == 0 else np.sin(arg))
        modes[i, 0] = dx_ * s
        modes[i, 1] = dy_ * s
        labels.append((m, l, "solenoidal" if fam == 0 else "gradient", "cos" if phase == 0 else "sin"))
    eig = np.array([c[0] for c in chosen])
    return GalerkinBasis(grid, mu, lam, eig, modes, tuple(labels))


def _box_basis(grid: GridSpec, mu: float, lam: float, n: int) -> GalerkinBasis:
    A = _box_lame_matrix(grid, mu, lam)
    dof = A.shape[0]
    if n >= dof - 1:
        raise BasisError(f"n = {n} exceeds available interior degrees of freedom ({dof})")
    v0 = np.ones(dof)
    try:
        vals, vecs = spla.eigsh(A, k=n, sigma=0.0, which="LM", v0=v0, tol=0.0)
    except spla.ArpackError as exc:  # pragma: no cover - solver failure path
        raise BasisError(f"eigensolver failed: {exc}") from exc
    # Rayleigh-Ritz cleanup: orthonormal to machine precision, deterministic
    Q, _ = np.linalg.qr(vecs[:, np.argsort(vals)])
    H = Q.T @ (A @ Q)
    H = 0.5 * (H + H.T)
    vals, S = np.linalg.eigh(H)
    V = Q @ S
    res = np.linalg.norm(A @ V - V * vals, axis=0)
    if np.any(res > 1e-6 * np.abs(vals)):
        raise BasisError(f"eigen-residuals too large: max {np.max(res / np.abs(vals)):.3e}")
    if vals[0] <= 0:
        raise BasisError("non-positive Lame eigenvalue")
    ny, nx = grid.shape
    m = (ny - 2) * (nx - 2)
    scale = 1.0 / np.sqrt(grid.hx * grid.hy)
    modes = np.zeros((n, 2, ny, nx))
    for i in range(n):
        vec = V[:, i]
        j = int(np.argmax(np.abs(vec)))
        if vec[j] < 0:
            vec = -vec
        modes[i, 0, 1:-1, 1:-1] = scale * vec[:m].reshape(ny - 2, nx - 2)
        modes[i, 1, 1:-1, 1:-1] = scale * vec[m:].reshape(ny - 2, nx - 2)
    return GalerkinBasis(grid, mu, lam, vals.copy(), modes, ())


def cache_dir() -> Path | None:
    env = os.environ.get("NEMATIC2D_CACHE")
    if env is not None:
        return Path(env) if env else None
    return Path.home() / ".cache" / "nematic2d"


def basis_key(grid: GridSpec, mu: float, lam: float, n: int) -> tuple[dict, str]:
    header = {
        "format": CACHE_FORMAT,
        "domain_kind": grid.domain_kind,
        "lx": grid.lx,
        "ly": grid.ly,
        "nx": grid.nx,
        "ny": grid.ny,
        "mu": float(mu),
        "lambda": float(lam),
        "n": int(n),
    }
    digest = hashlib.sha256(json.dumps(header, sort_keys=True).encode()).hexdigest()
    header["hash"] = digest
    return header, digest


def save_basis(basis: GalerkinBasis, path: Path) -> None:
    header, _ = basis_key(basis.grid, basis.mu, basis.lam, basis.n)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(".tmp.npz")
    np.savez(tmp, header=np.array(json.dumps(header, sort_keys=True)), eigvals=basis.eigvals, modes=basis.modes)
    os.replace(tmp, path)


def load_basis(path: Path, grid: GridSpec, mu: float, lam: float, n: int) -> GalerkinBasis | None:
    expected, _ = basis_key(grid, mu, lam, n)
    try:
        with np.load(path) as f:
            header = json.loads(str(f["header"]))
            if header != expected:
                return None
            return GalerkinBasis(grid, mu, lam, f["eigvals"].copy(), f["modes"].copy(), ())
    except (OSError, KeyError, ValueError):
        return None


def build_basis(grid: GridSpec, p: PhysParams, n: int, use_cache: bool = True) -> GalerkinBasis:
    if n < 1:
        raise BasisError("n must be >= 1")
    if grid.periodic:
        return _torus_basis(grid, p.mu, p.lam, n)
    directory = cache_dir() if use_cache else None
    path = None
    if directory is not None:
        _, digest = basis_key(grid, p.mu, p.lam, n)
        path = directory / f"lame-{digest[:24]}.npz"
        cached = load_basis(path, grid, p.mu, p.lam, n)
        if cached is not None:
            return cached
    basis = _box_basis(grid, p.mu, p.lam, n)
    if path is not None:
        try:
            save_basis(basis, path)
        except OSError:
            pass
    return basis


# ---------------------------------------------------------------------------
# projection and mass operator

def _vec_weights(grid: GridSpec) -> np.ndarray:
    w = grid.weights().ravel()
    return np.concatenate([w, w])


def project_array(F: np.ndarray, basis: GalerkinBasis) -> np.ndarray:
    return basis.matrix @ (_vec_weights(basis.grid) * F.reshape(-1))


def project(f: VectorField2, basis: GalerkinBasis) -> np.ndarray:
    check_same_grid(f, VectorField2.zeros(basis.grid))
    return project_array(f.stacked(), basis)


def reconstruct_array(a: np.ndarray, basis: GalerkinBasis) -> np.ndarray:
    return (np.asarray(a) @ basis.matrix).reshape((2,) + basis.grid.shape)


def reconstruct(a: np.ndarray, basis: GalerkinBasis) -> VectorField2:
    V = reconstruct_array(a, basis)
    return VectorField2(basis.grid, V[0], V[1])


@dataclass(frozen=True, eq=False)
class MassOperator:
    M: np.ndarray
    rho_min: float
    _chol: tuple | None = None


def assemble_mass(rho: ScalarField | np.ndarray, basis: GalerkinBasis) -> MassOperator:
    r = rho.values if isinstance(rho, ScalarField) else np.asarray(rho)
    support = np.any(basis.modes != 0.0, axis=(0, 1))
    rmin = float(np.min(r[support])) if np.any(support) else float(np.min(r))
    if rmin <= vacuum_threshold(r) or rmin <= 0.0:
        raise VacuumError(f"mass operator needs rho > 0 on the basis support (min {rmin:.3e})")
    Phi = basis.matrix
    wr = _vec_weights(basis.grid) * np.concatenate([r.ravel(), r.ravel()])
    M = (Phi * wr) @ Phi.T
    M = 0.5 * (M + M.T)
    try:
        chol = sla.cho_factor(M, lower=True)
    except np.linalg.LinAlgError as exc:
        raise VacuumError("mass operator is not positive definite") from exc
    return MassOperator(M, rmin, chol)


def mass_apply(op: MassOperator, x: np.ndarray) -> np.ndarray:
    return op.M @ np.asarray(x)


def mass_solve(op: MassOperator, b: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    b = np.asarray(b, dtype=np.float64)
    x = sla.cho_solve(op._chol, b)
    bn = np.linalg.norm(b)
    if bn > 0:
        res = np.linalg.norm(op.M @ x - b)
        if res > tol * bn:
            # one step of iterative refinement before giving up
            x = x + sla.cho_solve(op._chol, b - op.M @ x)
            res = np.linalg.norm(op.M @ x - b)
            if res > tol * bn:
                raise MomentumError(f"mass solve residual {res / bn:.3e} exceeds {tol:.1e}")
    return x


# ---------------------------------------------------------------------------
# forcing

def elastic_force(d1: np.ndarray, d2: np.ndarray, grid: GridSpec, nu: float) -> np.ndarray:
    """``-nu (grad d)^T Lap d``: the stress divergence written through the identity."""
    L1, L2 = lap(d1, grid), lap(d2, grid)
    fx = d_dx(d1, grid) * L1 + d_dx(d2, grid) * L2
    fy = d_dy(d1, grid) * L1 + d_dy(d2, grid) * L2
    return -nu * np.array([fx, fy])


def forcing_nodal(rho: np.ndarray, V: np.ndarray, d: DirectorField, p: PhysParams, s: SchemeParams,
                  grad_rho: np.ndarray | None = None, elastic_path: str = "tension") -> np.ndarray:
    """Nodal right side of the momentum equation (centred differences), shape ``(2, Ny, Nx)``."""
    g = d.grid
    if grad_rho is None:
        grad_rho = np.array([d_dx(rho, g), d_dy(rho, g)])
    out = -lame_apply(V, g, p.mu, p.lam)
    pg = p.A * rho**p.gamma
    if s.delta > 0:
        pg = pg + s.delta * rho**s.beta
    out[0] -= d_dx(pg, g)
    out[1] -= d_dy(pg, g)
    if s.eps > 0:
        for j in range(2):
            out[j] -= s.eps * (grad_rho[0] * d_dx(V[j], g) + grad_rho[1] * d_dy(V[j], g))
    mx, mw = rho * V[0], rho * V[1]
    for j in range(2):
        out[j] -= d_dx(mx * V[j], g) + d_dy(mw * V[j], g)
    if elastic_path == "tension":
        out += elastic_force(d.d1, d.d2, g, p.nu)
    elif elastic_path == "stress":
        sd = stress_divergence(d)
        out[0] -= p.nu * sd.u
        out[1] -= p.nu * sd.w
    else:
        raise ValueError(f"unknown elastic_path {elastic_path!r}")
    return out


def forcing(rho: ScalarField, v: VectorField2, d: DirectorField, grad_rho: VectorField2 | None,
            p: PhysParams, s: SchemeParams, basis: GalerkinBasis, elastic_path: str = "tension") -> np.ndarray:
    """Projected nodal forcing ``P N(rho, v, d)`` as a coefficient vector."""
    check_same_grid(rho, v, d)
    gr = None if grad_rho is None else grad_rho.stacked()
    F = forcing_nodal(rho.values, v.stacked(), d, p, s, gr, elastic_path)
    return project_array(F, basis)


def _face_diff(a: np.ndarray, grid: GridSpec) -> tuple[np.ndarray, np.ndarray]:
    if grid.periodic:
        return (np.roll(a, -1, -1) - a) / grid.hx, (np.roll(a, -1, -2) - a) / grid.hy
    return np.diff(a, axis=-1) / grid.hx, np.diff(a, axis=-2) / grid.hy


def _face_avg(a: np.ndarray, grid: GridSpec) -> tuple[np.ndarray, np.ndarray]:
    if grid.periodic:
        return 0.5 * (a + np.roll(a, -1, -1)), 0.5 * (a + np.roll(a, -1, -2))
    return 0.5 * (a[..., 1:] + a[..., :-1]), 0.5 * (a[..., 1:, :] + a[..., :-1, :])


def pressure_potential_derivative(rho: np.ndarray, p: PhysParams, s: SchemeParams) -> np.ndarray:
    out = q_derivative(rho, p)
    if s.delta > 0:
        out = out + artificial_derivative(rho, s.delta, s.beta)
    return out


def structured_forcing(rho_new: np.ndarray, V: np.ndarray, faces: FaceFlux, d_elastic: np.ndarray,
                       grid: GridSpec, p: PhysParams, s: SchemeParams) -> np.ndarray:
    """Non-viscous momentum forcing dual to the density update.

    ``faces`` are the upwind data of the density step that produced
    ``rho_new``; ``d_elastic`` is ``(2, Ny, Nx)`` director data on this grid.
    """
    out = np.zeros_like(V)
    # pressure: face-dual gradient of the potential derivative, weighted by the upwind density
    gx, gy = _face_diff(pressure_potential_derivative(rho_new, p, s), grid)
    px, py = face_gradient_to_nodes(faces.rx * gx, faces.ry * gy, grid)
    out[0] -= px
    out[1] -= py
    # convection: the mass flux carries the face-averaged velocity
    fx, fy = faces.fx, faces.fy
    ax, ay = _face_avg(V, grid)
    out -= face_divergence(fx * ax, fy * ay, grid)
    if s.eps > 0:
        rx, ry = _face_diff(rho_new, grid)
        vx, vy = _face_diff(V, grid)
        ex, ey = face_gradient_to_nodes(-s.eps * rx * vx, -s.eps * ry * vy, grid)
        out += ex + ey
    out += elastic_force(d_elastic[0], d_elastic[1], grid, p.nu)
    return out


@dataclass
class MomentumResult:
    a: np.ndarray
    iterations: int
    mass_op: MassOperator
    forcing: np.ndarray


def momentum_step(a_old: np.ndarray, rho_new: ScalarField, rho_old: ScalarField, d_elastic: np.ndarray,
                  p: PhysParams, s: SchemeParams, basis: GalerkinBasis, faces: FaceFlux | None = None,
                  coupling: str = "semi-implicit", mass_old: MassOperator | None = None,
                  tol: float = 1e-9, max_iters: int = 50) -> MomentumResult:
    """Solve ``(M(rho_new) + dt Lambda) a_new = M(rho_old) a_old + dt P N(rho_new, v*, d)``.

    The viscous part of ``N`` is taken implicitly through the eigenvalues, so
    ``N`` here is the rest of the forcing.  ``coupling='explicit'`` freezes
    ``v* = v_old``; ``'semi-implicit'`` iterates ``v* = v_new`` to ``tol``.
    """
    grid = basis.grid
    if faces is None:
        V_old = reconstruct_array(a_old, basis)
        faces = upwind_faces(rho_old.values, V_old[0], V_old[1], grid)
    M_new = assemble_mass(rho_new, basis)
    M_old = mass_old if mass_old is not None else assemble_mass(rho_old, basis)
    rhs0 = M_old.M @ a_old
    K = M_new.M + s.dt * np.diag(basis.eigvals)
    cho = sla.cho_factor(0.5 * (K + K.T), lower=True)
    a_star = np.array(a_old, dtype=np.float64)
    it = 0
    change = np.inf
    while True:
        it += 1
        V_star = reconstruct_array(a_star, basis)
        N = project_array(structured_forcing(rho_new.values, V_star, faces, d_elastic, grid, p, s), basis)
        a_new = sla.cho_solve(cho, rhs0 + s.dt * N)
        if not np.all(np.isfinite(a_new)):
            raise MomentumError(f"non-finite Galerkin coefficients at Picard iteration {it}")
        scale = max(np.linalg.norm(a_new), 1e-300)
        change = np.linalg.norm(a_new - a_star) / scale if np.linalg.norm(a_new) > 0 else np.linalg.norm(a_new - a_star)
        a_star = a_new
        if coupling == "explicit" or change <= tol:
            break
        if it >= max_iters:
            raise MomentumError(f"momentum Picard did not converge in {max_iters} iterations "
                                f"(relative change {change:.3e}); reduce dt")
    return MomentumResult(a_star, it, M_new, N)


def dvdt_eval(a: np.ndarray, mass_op: MassOperator, drho_dt: np.ndarray, forcing_now: np.ndarray,
              basis: GalerkinBasis) -> np.ndarray:
    """``d a/dt = M^{-1}(P N - M_{rho_t} a)`` from ``d/dt (M a) = P N``."""
    Phi = basis.matrix
    wr = _vec_weights(basis.grid) * np.concatenate([drho_dt.ravel(), drho_dt.ravel()])
    Mt = (Phi * wr) @ Phi.T
    return mass_solve(mass_op, forcing_now - Mt @ a)
