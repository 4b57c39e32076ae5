"""Pure numpy versions of the hot kernels.

Same signatures and semantics as the compiled ``_kernels`` module; used
when the extension is not built.  ``bc`` codes: 0 periodic, 1 Neumann
(trapezoid-weighted, wall nodes carry half weight), 2 Dirichlet (wall
values fixed, only interior rows are solved).
"""

from __future__ import annotations

import numpy as np

BACKEND = "python"

PERIODIC, NEUMANN, DIRICHLET = 0, 1, 2


def _omega(ny: int, nx: int) -> np.ndarray:
    ox = np.ones(nx)
    oy = np.ones(ny)
    ox[0] = ox[-1] = 0.5
    oy[0] = oy[-1] = 0.5
    return np.outer(oy, ox)


def _edge_sum(x: np.ndarray, hx: float, hy: float, bc: int) -> np.ndarray:
    """Symmetric part ``K x``: weighted sum of neighbour differences over edges."""
    if bc == PERIODIC:
        return (np.roll(x, -1, 1) - 2.0 * x + np.roll(x, 1, 1)) / (hx * hx) + (
            np.roll(x, -1, 0) - 2.0 * x + np.roll(x, 1, 0)
        ) / (hy * hy)
    ny, nx = x.shape
    out = np.zeros_like(x)
    ex = np.diff(x, axis=1) / (hx * hx)
    ey = np.diff(x, axis=0) / (hy * hy)
    if bc == NEUMANN:
        ty = np.ones(ny)
        ty[0] = ty[-1] = 0.5
        tx = np.ones(nx)
        tx[0] = tx[-1] = 0.5
        ex = ex * ty[:, None]
        ey = ey * tx[None, :]
    out[:, :-1] += ex
    out[:, 1:] -= ex
    out[:-1, :] += ey
    out[1:, :] -= ey
    return out


def helmholtz_apply(x, alpha: float, hx: float, hy: float, bc: int) -> np.ndarray:
    """``(I - alpha*L) x`` for the operator family selected by ``bc``."""
    x = np.asarray(x, dtype=np.float64)
    if bc == NEUMANN:
        om = _omega(*x.shape)
        return x - alpha * _edge_sum(x, hx, hy, bc) / om
    y = x - alpha * _edge_sum(x, hx, hy, bc)
    if bc == DIRICHLET:
        y[0, :] = x[0, :]
        y[-1, :] = x[-1, :]
        y[:, 0] = x[:, 0]
        y[:, -1] = x[:, -1]
    return y


def _sym_apply(p: np.ndarray, alpha: float, hx: float, hy: float, bc: int, om) -> np.ndarray:
    if bc == NEUMANN:
        return om * p - alpha * _edge_sum(p, hx, hy, bc)
    q = p - alpha * _edge_sum(p, hx, hy, bc)
    if bc == DIRICHLET:
        q[0, :] = q[-1, :] = 0.0
        q[:, 0] = q[:, -1] = 0.0
    return q


def cg_helmholtz(b, x0, alpha: float, hx: float, hy: float, bc: int, tol: float, maxiter: int):
    """Solve ``(I - alpha*L) x = b`` by conjugate gradients.

    Returns ``(x, iterations, relative_residual)``.  For Dirichlet the wall
    values of ``x0`` are kept and wall entries of ``b`` are ignored.
    """
    b = np.asarray(b, dtype=np.float64)
    x = np.array(x0, dtype=np.float64, copy=True)
    om = _omega(*b.shape) if bc == NEUMANN else None
    rhs = om * b if bc == NEUMANN else b.copy()
    if bc == DIRICHLET:
        rhs[0, :] = rhs[-1, :] = 0.0
        rhs[:, 0] = rhs[:, -1] = 0.0
        # wall values enter through the operator applied to x itself
        ax = x - alpha * _edge_sum(x, hx, hy, bc)
        r = rhs - ax
        r[0, :] = r[-1, :] = 0.0
        r[:, 0] = r[:, -1] = 0.0
    else:
        r = rhs - _sym_apply(x, alpha, hx, hy, bc, om)
    bnorm = np.sqrt(np.sum(rhs * rhs))
    if bnorm == 0.0:
        bnorm = 1.0
    rr = float(np.sum(r * r))
    if np.sqrt(rr) <= tol * bnorm:
        return x, 0, float(np.sqrt(rr) / bnorm)
    p = r.copy()
    it = 0
    while it < maxiter:
        it += 1
        q = _sym_apply(p, alpha, hx, hy, bc, om)
        a = rr / float(np.sum(p * q))
        x += a * p
        r -= a * q
        rr_new = float(np.sum(r * r))
        if np.sqrt(rr_new) <= tol * bnorm:
            rr = rr_new
            break
        p *= rr_new / rr
        p += r
        rr = rr_new
    return x, it, float(np.sqrt(rr) / bnorm)


def upwind_divergence(rho, u, w, hx: float, hy: float, periodic: bool) -> np.ndarray:
    """Conservative first-order upwind ``div(rho v)``; zero wall flux on the box."""
    rho = np.asarray(rho, dtype=np.float64)
    if periodic:
        uf = 0.5 * (u + np.roll(u, -1, 1))
        fx = np.maximum(uf, 0.0) * rho + np.minimum(uf, 0.0) * np.roll(rho, -1, 1)
        wf = 0.5 * (w + np.roll(w, -1, 0))
        fy = np.maximum(wf, 0.0) * rho + np.minimum(wf, 0.0) * np.roll(rho, -1, 0)
        return (fx - np.roll(fx, 1, 1)) / hx + (fy - np.roll(fy, 1, 0)) / hy
    ny, nx = rho.shape
    uf = 0.5 * (u[:, 1:] + u[:, :-1])
    fx = np.maximum(uf, 0.0) * rho[:, :-1] + np.minimum(uf, 0.0) * rho[:, 1:]
    wf = 0.5 * (w[1:, :] + w[:-1, :])
    fy = np.maximum(wf, 0.0) * rho[:-1, :] + np.minimum(wf, 0.0) * rho[1:, :]
    out = np.zeros_like(rho)
    out[:, :-1] += fx
    out[:, 1:] -= fx
    out[:, 0] *= 2.0
    out[:, -1] *= 2.0
    out /= hx
    oy = np.zeros_like(rho)
    oy[:-1, :] += fy
    oy[1:, :] -= fy
    oy[0, :] *= 2.0
    oy[-1, :] *= 2.0
    return out + oy / hy
