"""Director flow ``d_t + v . grad d = theta (Lap d + |grad d|^2 d)``.

Each time step is backward Euler in the Laplacian with the nonlinearity and
the transport term frozen at the previous Picard iterate::

    (d^k - d^n)/dt - theta Lap d^k = theta |grad d^{k-1}|^2 d^{k-1} - v . grad d^{k-1}

iterated until the relative H1 update drops below ``contraction_tol``.  On
the box the wall values stay at their initial data.  In ``shifted`` mode the
iterated unknown is ``d - e2`` with the nonlinearity written around ``e2``;
inputs and outputs are always the director itself.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .fields import DirectorField, VectorField2, check_same_grid, d_dx, d_dy, grad_sq_edge


class PicardError(RuntimeError):
    def __init__(self, msg: str, residual: float):
        super().__init__(f"{msg} (last relative H1 update {residual:.3e}); reduce dt")
        self.residual = residual


@dataclass(frozen=True)
class PicardConfig:
    max_iters: int = 50
    contraction_tol: float = 1e-9
    renormalize: bool = True
    theta: float = 1.0
    shifted: bool = False
    linear_tol: float = 1e-13

    def __post_init__(self) -> None:
        if self.max_iters < 1:
            raise ValueError(f"max_iters = {self.max_iters} violates bound >= 1")
        if not self.contraction_tol > 0:
            raise ValueError(f"contraction_tol = {self.contraction_tol} violates bound > 0")
        if not self.theta > 0:
            raise ValueError(f"theta = {self.theta} violates bound > 0")


def h1_norm(a: np.ndarray, grid) -> float:
    w = grid.weights()
    return float(np.sqrt(np.sum(w * (np.sum(a * a, axis=0) + grad_sq_edge(a, grid)))))


def _source(D: np.ndarray, u: np.ndarray, w: np.ndarray, grid, theta: float, shifted: bool) -> np.ndarray:
    g2 = grad_sq_edge(D, grid)
    base = D.copy()
    if shifted:
        base[1] += 1.0
    out = theta * g2 * base
    out -= u * d_dx(D, grid) + w * d_dy(D, grid)
    return out


def picard_iterates(d: DirectorField, v: VectorField2, cfg: PicardConfig, dt: float):
    """Yield ``(iterate_array, relative_h1_update)`` for k = 1, 2, ... (unbounded)."""
    g = check_same_grid(d, v)
    bc = kernels.PERIODIC if g.periodic else kernels.DIRICHLET
    prev = d.stacked()
    if cfg.shifted:
        prev[1] -= 1.0
    alpha = dt * cfg.theta
    cur = prev.copy()
    while True:
        rhs = prev + dt * _source(cur, v.u, v.w, g, cfg.theta, cfg.shifted)
        nxt = np.empty_like(cur)
        for c in range(2):
            sol, _, res = kernels.cg_helmholtz(rhs[c], cur[c], alpha, g.hx, g.hy, bc, cfg.linear_tol, 10000)
            if res > cfg.linear_tol:
                raise PicardError("director linear solve did not converge", res)
            nxt[c] = sol
        denom = h1_norm(nxt, g)
        upd = h1_norm(nxt - cur, g) / denom if denom > 0 else 0.0
        cur = nxt
        yield cur, upd


def _finish(arr: np.ndarray, d: DirectorField, cfg: PicardConfig) -> DirectorField:
    out = arr.copy()
    if cfg.shifted:
        out[1] += 1.0
    if cfg.renormalize:
        nrm = np.sqrt(out[0] ** 2 + out[1] ** 2)
        out = out / nrm
    if not d.grid.periodic:
        # walls hold the initial data bit for bit
        src = d.stacked()
        out[:, [0, -1], :] = src[:, [0, -1], :]
        out[:, :, [0, -1]] = src[:, :, [0, -1]]
    return DirectorField(d.grid, out[0], out[1])


def director_step(d: DirectorField, v: VectorField2, cfg: PicardConfig, dt: float) -> tuple[DirectorField, int]:
    upd = np.inf
    for k, (arr, upd) in enumerate(picard_iterates(d, v, cfg, dt), start=1):
        if not np.all(np.isfinite(arr)):
            raise PicardError("non-finite director iterate", float("nan"))
        if upd <= cfg.contraction_tol:
            return _finish(arr, d, cfg), k
        if k >= cfg.max_iters:
            break
    raise PicardError(f"Picard iteration did not converge in {cfg.max_iters} iterations", upd)


def picard_contraction_probe(d: DirectorField, v: VectorField2, cfg: PicardConfig, dt: float) -> list[float]:
    """Successive update ratios ``||d^{k+1}-d^k|| / ||d^k-d^{k-1}||`` (H1), diagnostic only."""
    g = d.grid
    prev_arr = d.stacked()
    if cfg.shifted:
        prev_arr[1] -= 1.0
    norms_: list[float] = []
    with np.errstate(all="ignore"):
        for k, (arr, _) in enumerate(picard_iterates(d, v, cfg, dt), start=1):
            if not np.all(np.isfinite(arr)):
                break
            norms_.append(h1_norm(arr - prev_arr, g))
            prev_arr = arr
            if norms_[-1] == 0.0 or k >= cfg.max_iters or norms_[-1] > 1e12:
                break
    ratios = []
    for a, b in zip(norms_[:-1], norms_[1:]):
        if a == 0.0:
            break
        ratios.append(b / a)
    return ratios


def unit_constraint_residual(d_path) -> float:
    return max((d.unit_defect() for d in d_path), default=0.0)


@dataclass
class AngleReport:
    ok: bool
    minimum: float
    violations: list[dict] = field(default_factory=list)

    def raise_if_failed(self) -> None:
        if not self.ok:
            v = self.violations[0]
            raise AssertionError(f"d2 = {v['value']:.6e} below {v['bound']:.6e} at step {v['step']} node {v['node']}")


def angle_minimum_check(d_path, d02_min: float, angle_tol: float = 1e-8) -> AngleReport:
    bound = d02_min - angle_tol
    violations = []
    lowest = np.inf
    for k, d in enumerate(d_path):
        m = float(np.min(d.d2))
        lowest = min(lowest, m)
        if m < bound:
            j, i = np.unravel_index(int(np.argmin(d.d2)), d.d2.shape)
            violations.append({"step": k, "node": (int(j), int(i)), "value": m, "bound": bound})
    return AngleReport(ok=not violations, minimum=float(lowest), violations=violations)
