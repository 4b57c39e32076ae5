"""Functional inequalities checked on sampled fields.

Four checks, each returning a small report object:

* ``ladyzhenskaya_check``: ``||v||_4^4 <= 2 ||grad v||^2 ||v||^2`` on ``H_0^1`` samples of ``[0, pi]^2``.
* ``eng_interpolation_check``: empirical interpolation constants for
  ``||v||_inf^2 <= c ||v||_{H^2} ||v||`` and ``||v||_4^2 <= c ||v||_{H^1} ||v||``.
* ``elliptic_estimate_monitor``: ``||grad^2 d_j|| <= 2 ||Lap d_j|| + 6 ||grad^2 d0_j||``.
* ``rigidity_check``: coercivity of the harmonic-map tension for directors
  ``(sin phi, cos phi)`` with ``d2`` bounded below, against an angle-space oracle.

Random ensembles are seeded and band-limited to half the grid Nyquist
frequency.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import fft as sfft

from .fields import BOX, PERIODIC, GridSpec, grad_sq_edge, hessian_sq, lap

LADYZHENSKAYA_CONSTANT = 2.0


# ---------------------------------------------------------------------------
# discrete norms

def _l2sq(a, grid, interior=False):
    w = grid.interior_weights() if interior else grid.weights()
    return float(np.sum(w * a * a))


def _l4_4(a, grid):
    return float(np.sum(grid.weights() * a**4))


def _grad_sq(a, grid):
    return float(np.sum(grid.weights() * grad_sq_edge(a, grid)))


def _hess_sq(a, grid):
    return float(np.sum(grid.interior_weights() * hessian_sq(a, grid)))


def _lap_sq(a, grid):
    return _l2sq(lap(a, grid), grid, interior=True)


# ---------------------------------------------------------------------------
# Ladyzhenskaya

def sine_series(coeffs: np.ndarray, n: int) -> np.ndarray:
    """Nodal values on the ``(n+1)^2`` grid of ``[0, pi]^2`` of ``sum c_ml sin(m x) sin(l y)``.

    ``coeffs[l-1, m-1]`` multiplies ``sin(m x) sin(l y)``; zero wall values
    are exact.
    """
    K = coeffs.shape[0]
    full = np.zeros((n - 1, n - 1))
    full[:K, :K] = coeffs
    inner = sfft.dstn(full, type=1) / 4.0
    out = np.zeros((n + 1, n + 1))
    out[1:-1, 1:-1] = inner
    return out


def band_limited_coeffs(rng: np.random.Generator, kmax: int) -> np.ndarray:
    """Random sine coefficients up to ``kmax`` with a random spectral slope and cutoff."""
    cut = int(rng.integers(1, kmax + 1))
    slope = rng.uniform(0.0, 3.0)
    m = np.arange(1, kmax + 1)
    M, L = np.meshgrid(m, m)
    c = rng.standard_normal((kmax, kmax)) * (1.0 + M**2 + L**2) ** (-slope / 2.0)
    c[(M > cut) | (L > cut)] = 0.0
    if not np.any(c):
        c[0, 0] = 1.0
    return c


def ladyzhenskaya_ratio(v: np.ndarray, grid: GridSpec) -> float:
    den = _grad_sq(v, grid) * _l2sq(v, grid)
    if den == 0.0:
        raise ValueError("zero field excluded from the Ladyzhenskaya ratio")
    return _l4_4(v, grid) / den


@dataclass
class LadyzhenskayaReport:
    n: int
    count: int
    seed: int
    worst_ratio: float
    contract: float
    ok: bool
    grid_slack: float
    ratios: list = field(default_factory=list, repr=False)

    def as_dict(self) -> dict:
        d = asdict(self)
        d.pop("ratios")
        return d


def ladyzhenskaya_contract(n: int) -> float:
    """Accepted bound ``2 (1 + c_h)`` with ``c_h = 0.01 (128/n)^2``."""
    return LADYZHENSKAYA_CONSTANT * (1.0 + 0.01 * (128.0 / n) ** 2)


def ladyzhenskaya_check(n: int = 128, count: int = 200, seed: int = 0, kmax: int = 32) -> LadyzhenskayaReport:
    """Worst ratio over a seeded ensemble; ``grid_slack`` is the largest relative
    change of a sample's ratio when the same function is sampled on the ``2n`` grid.

    The band ``kmax`` is fixed (half-Nyquist of the 64-cell grid) so every
    grid sees the same functions and the slack shrinks like ``h^2``.
    """
    if 2 * kmax > n:
        raise ValueError(f"kmax = {kmax} exceeds half-Nyquist of the {n}-cell grid")
    rng = np.random.default_rng(seed)
    g = GridSpec(BOX, math.pi, math.pi, n, n)
    gf = GridSpec(BOX, math.pi, math.pi, 2 * n, 2 * n)
    ratios = []
    slack = 0.0
    for _ in range(count):
        c = band_limited_coeffs(rng, kmax)
        r = ladyzhenskaya_ratio(sine_series(c, n), g)
        rf = ladyzhenskaya_ratio(sine_series(c, 2 * n), gf)
        ratios.append(r)
        slack = max(slack, abs(r - rf) / rf)
    worst = max(ratios)
    bound = ladyzhenskaya_contract(n)
    return LadyzhenskayaReport(n, count, seed, worst, bound, worst <= bound, slack, ratios)


# ---------------------------------------------------------------------------
# interpolation constants

def _bump(s):
    out = np.zeros_like(s)
    m = s < 1.0
    out[m] = np.exp(1.0 - 1.0 / (1.0 - s[m] ** 2))
    return out


def wave_packet(grid: GridSpec, rng: np.random.Generator, n_packets: int = 2,
                radius=(0.4, 0.7), kmax: float = 4.0) -> np.ndarray:
    """Sum of compactly supported packets with physical radius in ``radius`` and ``|k| <= kmax``.

    The width and band do not depend on the box size, so constants measured
    on different boxes are comparable.
    """
    X, Y = grid.coords()
    out = np.zeros(grid.shape)
    for _ in range(n_packets):
        r = rng.uniform(*radius)
        x0 = rng.uniform(r, grid.lx - r)
        y0 = rng.uniform(r, grid.ly - r)
        k = rng.uniform(0.0, kmax)
        ang, ph = rng.uniform(0.0, 2.0 * np.pi, 2)
        env = _bump(np.hypot(X - x0, Y - y0) / r)
        out += rng.standard_normal() * env * np.cos(k * (np.cos(ang) * X + np.sin(ang) * Y) + ph)
    return out


def interpolation_ratios(v: np.ndarray, grid: GridSpec) -> tuple[float, float]:
    """``(||v||_inf^2 / (||v||_H2 ||v||), ||v||_4^2 / (||v||_H1 ||v||))``."""
    l2 = _l2sq(v, grid)
    h1 = l2 + _grad_sq(v, grid)
    h2 = h1 + _hess_sq(v, grid)
    linf = float(np.max(np.abs(v)))
    r_inf = linf**2 / math.sqrt(h2 * l2)
    r_4 = math.sqrt(_l4_4(v, grid)) / math.sqrt(h1 * l2)
    return r_inf, r_4


@dataclass
class InterpolationReport:
    sides: list
    cells_per_unit: list
    c1_inf: dict
    c1_l4: dict
    c1: float
    refinement_ratios: list
    side_spread: float
    refinement_ok: bool
    side_ok: bool

    def as_dict(self) -> dict:
        return asdict(self)

    def export(self, path) -> None:
        with open(path, "w") as fh:
            json.dump({"c1": self.c1, "report": self.as_dict()}, fh, indent=2, sort_keys=True)


def eng_interpolation_check(sides=(math.pi, 2 * math.pi, 4 * math.pi), cells_per_unit=(8.0, 16.0),
                            count: int = 40, seed: int = 0) -> InterpolationReport:
    """Largest ratios per (side, resolution); ``c1`` is the maximum over everything.

    Boxes of side ``L`` get ``round(L * cells_per_unit)`` cells, so the
    spacing is the same on every box at a given resolution.
    """
    c_inf: dict = {}
    c_4: dict = {}
    for res in cells_per_unit:
        for L in sides:
            n = int(round(L * res))
            g = GridSpec(BOX, L, L, n, n)
            rng = np.random.default_rng(seed)
            best_i = best_4 = 0.0
            for _ in range(count):
                v = wave_packet(g, rng)
                if not np.any(v):
                    continue
                ri, r4 = interpolation_ratios(v, g)
                best_i, best_4 = max(best_i, ri), max(best_4, r4)
            key = f"{L:.6g}@{res:g}"
            c_inf[key], c_4[key] = best_i, best_4
    ref = []
    for L in sides:
        vals = [max(c_inf[f"{L:.6g}@{r:g}"], c_4[f"{L:.6g}@{r:g}"]) for r in cells_per_unit]
        ref += [b / a for a, b in zip(vals, vals[1:])]
    finest = cells_per_unit[-1]
    per_side = [max(c_inf[f"{L:.6g}@{finest:g}"], c_4[f"{L:.6g}@{finest:g}"]) for L in sides]
    spread = max(per_side) / min(per_side) - 1.0
    c1 = max(max(c_inf.values()), max(c_4.values()))
    return InterpolationReport(list(sides), list(cells_per_unit), c_inf, c_4, c1, ref, spread,
                               all(0.8 <= r <= 1.25 for r in ref), spread <= 0.25)


def load_c1(path) -> float:
    with open(path) as fh:
        return float(json.load(fh)["c1"])


# ---------------------------------------------------------------------------
# elliptic estimate

@dataclass
class EllipticReport:
    lhs: list
    rhs: list
    margin: float
    asserted: bool
    ok: bool


def elliptic_estimate_monitor(d: np.ndarray, d0: np.ndarray, grid: GridSpec) -> EllipticReport:
    """Both sides of ``||grad^2 d_j|| <= 2 ||Lap d_j|| + 6 ||grad^2 d0_j||`` per component.

    ``margin`` is ``max_j (lhs_j - rhs_j)``; the check is asserted only on the
    torus, where the discrete Hessian and Laplacian norms coincide.
    """
    lhs, rhs = [], []
    for j in range(2):
        lhs.append(math.sqrt(_hess_sq(d[j], grid)))
        rhs.append(2.0 * math.sqrt(_lap_sq(d[j], grid)) + 6.0 * math.sqrt(_hess_sq(d0[j], grid)))
    margin = max(a - b for a, b in zip(lhs, rhs))
    asserted = grid.periodic
    return EllipticReport(lhs, rhs, margin, asserted, margin <= 0.0 or not asserted)


# ---------------------------------------------------------------------------
# rigidity of the harmonic-map energy

def _spectral(grid: GridSpec):
    kx = 2.0 * np.pi * sfft.fftfreq(grid.nx, grid.hx)
    ky = 2.0 * np.pi * sfft.fftfreq(grid.ny, grid.hy)
    return np.meshgrid(kx, ky)


def spectral_derivatives(a: np.ndarray, grid: GridSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``(a_x, a_y, Lap a)`` by FFT on the torus."""
    KX, KY = _spectral(grid)
    ah = sfft.fft2(a)
    ax = sfft.ifft2(1j * KX * ah).real
    ay = sfft.ifft2(1j * KY * ah).real
    la = sfft.ifft2(-(KX**2 + KY**2) * ah).real
    return ax, ay, la


def director_quantities(phi: np.ndarray, grid: GridSpec) -> dict:
    """``||grad d||_4^4``, ``||Lap d||^2`` and ``||T||^2`` computed from ``d = (sin phi, cos phi)``."""
    w = grid.weights()
    d = (np.sin(phi), np.cos(phi))
    g2 = np.zeros(grid.shape)
    L = []
    for c in d:
        cx, cy, lc = spectral_derivatives(c, grid)
        g2 += cx * cx + cy * cy
        L.append(lc)
    T = [L[0] + g2 * d[0], L[1] + g2 * d[1]]
    return {
        "grad_l4_4": float(np.sum(w * g2 * g2)),
        "lap_sq": float(np.sum(w * (L[0] ** 2 + L[1] ** 2))),
        "tension_sq": float(np.sum(w * (T[0] ** 2 + T[1] ** 2))),
    }


def angle_oracle(phi: np.ndarray, grid: GridSpec) -> dict:
    """Same quantities through ``|grad d|^2 = |grad phi|^2``, ``|Lap d|^2 = (Lap phi)^2 + |grad phi|^4``, ``|T|^2 = (Lap phi)^2``."""
    w = grid.weights()
    px, py, lp = spectral_derivatives(phi, grid)
    g4 = (px * px + py * py) ** 2
    return {
        "grad_l4_4": float(np.sum(w * g4)),
        "lap_sq": float(np.sum(w * (lp * lp + g4))),
        "tension_sq": float(np.sum(w * lp * lp)),
    }


def admissible_angle(grid: GridSpec, rng: np.random.Generator, d2_min: float) -> np.ndarray:
    """Random packet angle field with ``|phi| <= arccos(d2_min)`` and compactly supported gradient."""
    phi = wave_packet(grid, rng, n_packets=int(rng.integers(1, 4)), radius=(1.5, 2.5), kmax=2.0)
    peak = float(np.max(np.abs(phi)))
    if peak == 0.0:
        return phi
    return phi * (rng.uniform(0.05, 1.0) * math.acos(d2_min) / peak)


@dataclass
class RigidityReport:
    d2_min: float
    count: int
    max_rho4: float
    min_coercivity: float
    varpi0: float
    oracle_error: float
    ok: bool


def rigidity_check(d2_min: float = 0.5, count: int = 500, n: int = 128, side: float = 2 * math.pi,
                   seed: int = 0) -> RigidityReport:
    """``rho4 = ||grad d||_4^4 / ||Lap d||^2`` (must be ``<= 1``) and the coercivity ratio
    ``||T||^2 / (||Lap d||^2 + ||grad d||_4^4)`` (must be ``> 0``).

    ``varpi0`` is the largest constant consistent with every sample:
    ``min(1 - rho4, 2 * coercivity)``.  ``oracle_error`` is the largest
    relative disagreement with the angle-space formulas.
    """
    if not 0.0 < d2_min < 1.0:
        raise ValueError(f"d2_min = {d2_min} must lie in (0, 1)")
    g = GridSpec(PERIODIC, side, side, n, n)
    rng = np.random.default_rng(seed)
    max_rho4, min_coer, varpi, err = 0.0, math.inf, math.inf, 0.0
    used = 0
    for _ in range(count):
        phi = admissible_angle(g, rng, d2_min)
        q = director_quantities(phi, g)
        if q["lap_sq"] == 0.0:
            continue
        o = angle_oracle(phi, g)
        for k in q:
            if o[k] > 0:
                err = max(err, abs(q[k] - o[k]) / o[k])
        rho4 = q["grad_l4_4"] / q["lap_sq"]
        coer = q["tension_sq"] / (q["lap_sq"] + q["grad_l4_4"])
        max_rho4 = max(max_rho4, rho4)
        min_coer = min(min_coer, coer)
        varpi = min(varpi, 1.0 - rho4, 2.0 * coer)
        used += 1
    ok = max_rho4 <= 1.0 and min_coer > 0.0
    return RigidityReport(d2_min, used, max_rho4, min_coer, varpi, err, ok)


# ---------------------------------------------------------------------------
# suite

SUITES = ("ladyzhenskaya", "interpolation", "elliptic", "rigidity")


def run_suite(suites=SUITES, grid: int = 128, count: int | None = None, seed: int = 0) -> dict:
    """JSON-ready report; ``report['ok']`` is false if an asserted check fails."""
    out: dict = {"seed": seed}
    ok = True
    if "ladyzhenskaya" in suites:
        r = ladyzhenskaya_check(grid, count or 200, seed, kmax=min(32, grid // 2))
        out["ladyzhenskaya"] = r.as_dict()
        ok &= r.ok
    if "interpolation" in suites:
        r = eng_interpolation_check(count=count or 40, seed=seed)
        out["interpolation"] = r.as_dict()
    if "elliptic" in suites:
        g = GridSpec(PERIODIC, 2 * math.pi, 2 * math.pi, grid, grid)
        rng = np.random.default_rng(seed)
        phi0 = wave_packet(g, rng)
        phi = 0.5 * phi0 + wave_packet(g, rng)
        d0 = np.array([np.sin(phi0), np.cos(phi0)])
        d = np.array([np.sin(phi), np.cos(phi)])
        r = elliptic_estimate_monitor(d, d0, g)
        out["elliptic"] = asdict(r)
        ok &= r.ok
    if "rigidity" in suites:
        curve = []
        for d2 in (0.1, 0.5, 0.9):
            r = rigidity_check(d2, count or 100, grid, seed=seed)
            curve.append(asdict(r))
            ok &= r.ok
        out["rigidity"] = curve
    out["ok"] = bool(ok)
    return out
