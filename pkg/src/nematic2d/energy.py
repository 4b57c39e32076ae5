"""Energy, dissipation and the harmonic-map tension field.

Two director-energy weightings are in play.  ``total_energy`` and
``dissipation`` carry ``nu*theta/2 |grad d|^2`` and ``theta |tension|^2`` as
the model is usually written; ``modified_energy`` carries ``nu/2 |grad d|^2``.
The energy law that the scheme actually satisfies pairs ``nu/2 |grad d|^2``
with ``nu*theta |tension|^2``; ``law_energy`` and ``law_dissipation`` give
that pair.  All four coincide when ``nu = theta = 1``.

Director gradients use the edge form ``grad_sq_edge`` so that the discrete
identity ``d . Lap d = -|grad d|^2`` holds exactly for unit directors.
"""

from __future__ import annotations

from dataclasses import dataclass, fields as dc_fields

import numpy as np

from .fields import (
    DirectorField,
    ScalarField,
    VectorField2,
    check_same_grid,
    d_dx,
    d_dy,
    grad_sq_edge,
    lap,
)

VACUUM_FACTOR = 1e-12


class DomainError(ValueError):
    pass


class ConsistencyError(ValueError):
    pass


def _require(cond: bool, key: str, bound: str, value) -> None:
    if not cond:
        raise ValueError(f"{key} = {value!r} violates bound {bound}")


@dataclass(frozen=True)
class PhysParams:
    mu: float = 1.0
    lam: float = 0.0
    nu: float = 1.0
    theta: float = 1.0
    A: float = 1.0
    gamma: float = 2.0
    rho_inf: float = 1.0

    def __post_init__(self) -> None:
        for f in dc_fields(self):
            object.__setattr__(self, f.name, float(getattr(self, f.name)))
        _require(self.mu > 0, "mu", "> 0", self.mu)
        _require(self.lam + self.mu >= 0, "lambda", ">= -mu", self.lam)
        _require(self.nu > 0, "nu", "> 0", self.nu)
        _require(self.theta > 0, "theta", "> 0", self.theta)
        _require(self.A > 0, "A", "> 0", self.A)
        _require(self.gamma > 1, "gamma", "> 1", self.gamma)
        _require(self.rho_inf >= 0, "rho_inf", ">= 0", self.rho_inf)


@dataclass(frozen=True)
class SchemeParams:
    eps: float = 0.0
    delta: float = 0.0
    beta: float = 8.0
    n_modes: int = 16
    dt: float = 1e-2
    t_end: float = 0.1

    def __post_init__(self) -> None:
        for name in ("eps", "delta", "beta", "dt", "t_end"):
            object.__setattr__(self, name, float(getattr(self, name)))
        object.__setattr__(self, "n_modes", int(self.n_modes))
        _require(self.eps >= 0, "eps", ">= 0", self.eps)
        _require(self.delta >= 0, "delta", ">= 0", self.delta)
        _require(self.n_modes >= 1, "n_modes", ">= 1", self.n_modes)
        _require(self.dt > 0 and np.isfinite(self.dt), "dt", "> 0", self.dt)
        _require(self.t_end > 0 and np.isfinite(self.t_end), "t_end", "> 0", self.t_end)

    def validate(self, p: PhysParams) -> None:
        if self.delta > 0:
            _require(self.beta >= max(p.gamma, 8.0), "beta", f">= max(gamma, 8) = {max(p.gamma, 8.0)}", self.beta)

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))


# ---------------------------------------------------------------------------
# pressure potentials

def q_potential(s, p: PhysParams):
    """``A/(gamma-1) (s^gamma - gamma s rho_inf^(gamma-1) + (gamma-1) rho_inf^gamma)``."""
    s_arr = np.asarray(s, dtype=np.float64)
    if np.any(s_arr < 0):
        raise DomainError("q_potential requires s >= 0")
    g = p.gamma
    r = p.rho_inf
    out = p.A / (g - 1.0) * (s_arr**g - g * s_arr * r ** (g - 1.0) + (g - 1.0) * r**g)
    # roundoff near the minimiser can dip a hair below zero
    out = np.maximum(out, 0.0)
    return float(out) if out.ndim == 0 else out


def q_derivative(s, p: PhysParams):
    s = np.asarray(s, dtype=np.float64)
    g = p.gamma
    return p.A * g / (g - 1.0) * (s ** (g - 1.0) - p.rho_inf ** (g - 1.0))


def artificial_potential(s, delta: float, beta: float):
    return delta / (beta - 1.0) * np.asarray(s, dtype=np.float64) ** beta


def artificial_derivative(s, delta: float, beta: float):
    return delta * beta / (beta - 1.0) * np.asarray(s, dtype=np.float64) ** (beta - 1.0)


# ---------------------------------------------------------------------------
# pieces

def vacuum_threshold(rho: np.ndarray) -> float:
    return VACUUM_FACTOR * float(np.max(rho)) if rho.size else 0.0


def kinetic_density(rho: np.ndarray, mu_: np.ndarray, mw: np.ndarray, m_tol: float = 1e-12) -> np.ndarray:
    """``|m|^2 / (2 rho)`` where ``rho`` exceeds the vacuum threshold, else 0."""
    if np.any(rho < 0):
        raise DomainError("negative density")
    thr = vacuum_threshold(rho)
    live = rho > thr
    m2 = mu_ * mu_ + mw * mw
    if np.any(~live & (np.sqrt(m2) > m_tol)):
        raise ConsistencyError("nonzero momentum on a vacuum node")
    out = np.zeros_like(rho)
    out[live] = 0.5 * m2[live] / rho[live]
    return out


def director_dirichlet_density(d: DirectorField) -> np.ndarray:
    return grad_sq_edge(d.stacked(), d.grid)


def tension_arrays(d1: np.ndarray, d2: np.ndarray, grid) -> tuple[np.ndarray, np.ndarray]:
    g2 = grad_sq_edge(np.stack([d1, d2]), grid)
    return lap(d1, grid) + g2 * d1, lap(d2, grid) + g2 * d2


def tension_field(d: DirectorField, p: PhysParams | None = None) -> VectorField2:
    """``Lap d + |grad d|^2 d``; ``theta`` is left to the caller."""
    t1, t2 = tension_arrays(d.d1, d.d2, d.grid)
    return VectorField2(d.grid, t1, t2)


def viscous_density(v: VectorField2, p: PhysParams) -> np.ndarray:
    g = v.grid
    ux, uy, wx, wy = d_dx(v.u, g), d_dy(v.u, g), d_dx(v.w, g), d_dy(v.w, g)
    div = ux + wy
    return p.mu * (ux * ux + uy * uy + wx * wx + wy * wy) + (p.lam + p.mu) * div * div


def tension_sq_integral(d: DirectorField) -> float:
    """``int |tension|^2`` over nodes that carry a director update."""
    t1, t2 = tension_arrays(d.d1, d.d2, d.grid)
    return float(np.sum(d.grid.interior_weights() * (t1 * t1 + t2 * t2)))


# ---------------------------------------------------------------------------
# functionals

def total_energy(rho: ScalarField, m: VectorField2, d: DirectorField, p: PhysParams) -> float:
    g = check_same_grid(rho, m, d)
    w = g.weights()
    kin = kinetic_density(rho.values, m.u, m.w)
    dens = kin + q_potential(rho.values, p) + 0.5 * p.nu * p.theta * director_dirichlet_density(d)
    return float(np.sum(w * dens))


def dissipation(v: VectorField2, d: DirectorField, p: PhysParams, viscous: float | None = None) -> float:
    """Dissipation with ``theta |tension|^2``.

    ``viscous`` overrides the finite-difference viscous integral; the Galerkin
    update passes ``a . Lambda a``, which is the viscous dissipation the
    scheme actually sees.
    """
    g = check_same_grid(v, d)
    visc = float(np.sum(g.weights() * viscous_density(v, p))) if viscous is None else float(viscous)
    return visc + p.theta * tension_sq_integral(d)


def modified_energy(rho: ScalarField, m: VectorField2, d: DirectorField, p: PhysParams, s: SchemeParams) -> float:
    g = check_same_grid(rho, m, d)
    r = rho.values
    if np.any(r < 0):
        raise DomainError("negative density")
    kin = kinetic_density(r, m.u, m.w)
    dens = (
        kin
        + p.A / (p.gamma - 1.0) * r**p.gamma
        + artificial_potential(r, s.delta, s.beta)
        + 0.5 * p.nu * director_dirichlet_density(d)
    )
    return float(np.sum(g.weights() * dens))


def law_energy(rho: ScalarField, m: VectorField2, d: DirectorField, p: PhysParams, s: SchemeParams | None = None) -> float:
    """Energy paired with ``law_dissipation``: ``nu/2 |grad d|^2`` plus ``Q`` plus the artificial potential."""
    g = check_same_grid(rho, m, d)
    r = rho.values
    dens = kinetic_density(r, m.u, m.w) + q_potential(r, p) + 0.5 * p.nu * director_dirichlet_density(d)
    if s is not None and s.delta > 0:
        dens = dens + artificial_potential(r, s.delta, s.beta)
    return float(np.sum(g.weights() * dens))


def law_dissipation(v: VectorField2, d: DirectorField, p: PhysParams, viscous: float | None = None) -> float:
    g = check_same_grid(v, d)
    visc = float(np.sum(g.weights() * viscous_density(v, p))) if viscous is None else float(viscous)
    return visc + p.nu * p.theta * tension_sq_integral(d)
