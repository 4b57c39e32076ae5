"""Coupled time loop for the regularised system, its energy ledger and audits.

A step advances density, then director, then the Galerkin velocity::

    rho^{n+1} = density_step(rho^n, v^n)
    d^{n+1}   = director_step(d^n, v^n)
    a^{n+1}   : (M(rho^{n+1}) + dt Lambda) a^{n+1} = M(rho^n) a^n + dt P N(rho^{n+1}, v^{n+1}, d^{n+1})

With ``outer_picard`` the three updates are repeated with ``v^n`` replaced by
the latest ``v^{n+1}`` until the coefficients settle.

In the expanding-ball mode the director lives on a torus of side ``4 R_max``
and density and velocity live on the square ``[c-R, c+R]^2`` around its
centre, embedded node-for-node.
"""

from __future__ import annotations

import io as _io
import json
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__, kernels
from .density import DensityStepConfig, FaceFlux, density_step_detail
from .director import PicardConfig, director_step
from .energy import (
    PhysParams,
    SchemeParams,
    artificial_derivative,
    artificial_potential,
    q_derivative,
    q_potential,
    tension_arrays,
    vacuum_threshold,
)
from .fields import BOX, PERIODIC, DirectorField, GridSpec, ScalarField, VectorField2, grad_sq_edge, hessian_sq, lap
from .galerkin import GalerkinBasis, MassOperator, assemble_mass, build_basis, momentum_step, reconstruct_array
from .io import write_snapshot

MODES = ("third-approx", "delta-level", "gamma-level", "cauchy-expanding-balls")


class SimulationError(RuntimeError):
    def __init__(self, msg: str, step: int | None = None):
        super().__init__(msg if step is None else f"step {step}: {msg}")
        self.step = step


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# scenario description

@dataclass(frozen=True)
class InitialSpec:
    """Named initial-data generator with numeric parameters."""

    name: str = "constant"
    params: tuple = ()

    @classmethod
    def make(cls, name: str, **params) -> "InitialSpec":
        return cls(name, tuple(sorted((k, float(v)) for k, v in params.items())))

    def get(self, key: str, default: float) -> float:
        return dict(self.params).get(key, default)


@dataclass(frozen=True)
class RunOptions:
    renormalize: bool = True
    outer_picard: bool = False
    outer_tol: float = 1e-8
    momentum_coupling: str = "semi-implicit"
    freeze_flow: bool = False
    contraction_tol: float = 1e-9
    picard_max_iters: int = 50
    angle_tol: float = 1e-8
    c1: float = 1.0


@dataclass(frozen=True)
class ScenarioSpec:
    domain: GridSpec
    phys: PhysParams = PhysParams()
    scheme: SchemeParams = SchemeParams()
    initial: InitialSpec = InitialSpec()
    mode: str = "third-approx"
    continuation: tuple = ()
    expanding_radii: tuple = ()
    seed: int = 0
    options: RunOptions = RunOptions()

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"mode = {self.mode!r} must be one of {MODES}")
        s = self.scheme
        try:
            s.validate(self.phys)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if self.mode == "third-approx" and not s.eps > 0:
            raise ConfigError("eps must be > 0 in third-approx mode")
        if self.mode == "delta-level" and (s.eps != 0 or not s.delta > 0):
            raise ConfigError("delta-level mode needs eps = 0 and delta > 0")
        if self.mode == "gamma-level" and (s.eps != 0 or s.delta != 0):
            raise ConfigError("gamma-level mode needs eps = 0 and delta = 0")
        if self.mode == "cauchy-expanding-balls":
            if not self.expanding_radii:
                raise ConfigError("cauchy-expanding-balls mode needs expanding_radii")
            if not self.domain.periodic:
                raise ConfigError("cauchy-expanding-balls mode needs a periodic-torus domain")
        r = list(self.expanding_radii)
        if any(b <= a for a, b in zip(r, r[1:])):
            raise ConfigError("expanding_radii must be strictly increasing")
        st = list(self.continuation)
        for i, stage in enumerate(st):
            if len(stage) != 3:
                raise ConfigError("continuation stages are (eps, delta, n) triples")
            if stage[0] < 0 or stage[1] < 0 or int(stage[2]) < 1:
                raise ConfigError(f"continuation stage {i} out of range: {stage}")
        if any(b[0] > a[0] for a, b in zip(st, st[1:])):
            raise ConfigError("continuation eps must be non-increasing across stages")
        if any(b[1] > a[1] for a, b in zip(st, st[1:])):
            raise ConfigError("continuation delta must be non-increasing across stages")
        if self.options.momentum_coupling not in ("explicit", "semi-implicit"):
            raise ConfigError("momentum_coupling must be 'explicit' or 'semi-implicit'")

    def to_dict(self) -> dict:
        return {
            "domain": asdict(self.domain),
            "phys": asdict(self.phys),
            "scheme": asdict(self.scheme),
            "initial": {"name": self.initial.name, "params": dict(self.initial.params)},
            "mode": self.mode,
            "continuation": [list(c) for c in self.continuation],
            "expanding_radii": list(self.expanding_radii),
            "seed": self.seed,
            "options": asdict(self.options),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioSpec":
        return cls(
            domain=GridSpec(**d["domain"]),
            phys=PhysParams(**d["phys"]),
            scheme=SchemeParams(**d["scheme"]),
            initial=InitialSpec.make(d["initial"]["name"], **d["initial"]["params"]),
            mode=d["mode"],
            continuation=tuple(tuple(c) for c in d.get("continuation", ())),
            expanding_radii=tuple(d.get("expanding_radii", ())),
            seed=int(d.get("seed", 0)),
            options=RunOptions(**d.get("options", {})),
        )


# ---------------------------------------------------------------------------
# grids for the expanding-ball mode

@dataclass(frozen=True)
class Embedding:
    oy: int
    ox: int
    ny: int
    nx: int

    def extend(self, V: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
        out = np.zeros(V.shape[:-2] + shape)
        out[..., self.oy:self.oy + self.ny, self.ox:self.ox + self.nx] = V
        return out

    def restrict(self, D: np.ndarray) -> np.ndarray:
        return D[..., self.oy:self.oy + self.ny, self.ox:self.ox + self.nx]


def ball_grid(torus: GridSpec, radius: float) -> tuple[GridSpec, Embedding]:
    h = torus.hx
    if abs(torus.hx - torus.hy) > 1e-12 * h:
        raise ConfigError("expanding balls need equal spacings")
    cells = 2.0 * radius / h
    off = (0.5 * torus.lx - radius) / h
    if abs(cells - round(cells)) > 1e-9 or abs(off - round(off)) > 1e-9 or off < 1:
        raise ConfigError(f"radius {radius} does not align with the torus grid (h = {h})")
    c, o = int(round(cells)), int(round(off))
    return GridSpec(BOX, 2.0 * radius, 2.0 * radius, c, c), Embedding(o, o, c + 1, c + 1)


# ---------------------------------------------------------------------------
# initial data

def _bump(s: np.ndarray) -> np.ndarray:
    out = np.zeros_like(s)
    m = s < 1.0
    out[m] = np.exp(1.0 - 1.0 / (1.0 - s[m] ** 2))
    return out


def _smooth_noise(grid: GridSpec, rng: np.random.Generator, modes: int = 3) -> np.ndarray:
    X, Y = grid.coords()
    out = np.zeros(grid.shape)
    for m in range(1, modes + 1):
        for l in range(1, modes + 1):
            c = rng.standard_normal() / (m * m + l * l)
            if grid.periodic:
                ph = rng.uniform(0.0, 2.0 * np.pi, 2)
                out += c * np.sin(2 * np.pi * m * X / grid.lx + ph[0]) * np.sin(2 * np.pi * l * Y / grid.ly + ph[1])
            else:
                out += c * np.sin(np.pi * m * X / grid.lx) * np.sin(np.pi * l * Y / grid.ly)
    return out


def initial_state(spec: ScenarioSpec, fgrid: GridSpec, dgrid: GridSpec, basis: GalerkinBasis,
                  embed: Embedding | None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    ini = spec.initial
    p = spec.phys
    rng = np.random.default_rng(spec.seed)
    X, Y = dgrid.coords()
    a = np.zeros(basis.n)
    if ini.name == "constant":
        rho_d = np.full(dgrid.shape, ini.get("rho", p.rho_inf))
        phi = np.full(dgrid.shape, ini.get("angle", 0.0))
    elif ini.name == "smooth":
        rho_mean = ini.get("rho", p.rho_inf)
        if dgrid.periodic:
            cx, cy = np.cos(2 * np.pi * X / dgrid.lx), np.cos(2 * np.pi * Y / dgrid.ly)
            sx, sy = np.sin(2 * np.pi * X / dgrid.lx), np.sin(2 * np.pi * Y / dgrid.ly)
        else:
            cx, cy = np.cos(np.pi * X / dgrid.lx), np.cos(np.pi * Y / dgrid.ly)
            sx, sy = np.sin(np.pi * X / dgrid.lx), np.sin(np.pi * Y / dgrid.ly)
        rho_d = rho_mean * (1.0 + ini.get("rho_amp", 0.0) * cx * cy)
        phi = ini.get("phi_amp", 0.0) * sx * sy
        noise = ini.get("noise_amp", 0.0)
        if noise > 0:
            phi = phi + noise * _smooth_noise(dgrid, rng)
        a[0] = ini.get("v_amp", 0.0)
    elif ini.name == "compact":
        cx0, cy0 = 0.5 * dgrid.lx, 0.5 * dgrid.ly
        r = np.hypot(X - cx0, Y - cy0)
        b = _bump(r / ini.get("support", 1.0))
        rho_d = p.rho_inf * (1.0 + ini.get("rho_amp", 0.0) * b)
        phi = ini.get("phi_amp", 0.0) * b
    else:
        raise ConfigError(f"unknown initial generator {ini.name!r}")
    if np.max(np.abs(phi)) >= 0.5 * np.pi:
        raise ConfigError("initial director angle must stay below pi/2 in magnitude")
    D = np.array([np.sin(phi), np.cos(phi)])
    rho = embed.restrict(rho_d) if embed is not None else rho_d
    return np.ascontiguousarray(rho), a, D


def compact_support_radius(spec: ScenarioSpec) -> float:
    """Radius outside which the compact generator leaves the far-field state."""
    ini = spec.initial
    if ini.name == "constant" and ini.get("rho", spec.phys.rho_inf) == spec.phys.rho_inf and ini.get("angle", 0.0) == 0.0:
        return 0.0
    if ini.name != "compact":
        return math.inf
    return spec.initial.get("support", 1.0)


# ---------------------------------------------------------------------------
# ledger

LEDGER_COLUMNS = (
    "step", "t", "E", "F", "E_delta", "E_law", "F_law",
    "kinetic", "potential", "director_energy", "visc_diss", "tension_l2_2",
    "art_diss", "art_diss_p", "mass", "min_rho", "max_rho", "min_d2", "unit_defect",
    "grad_d_l4_4", "lap_d_l2_2", "hess_d_l2_2",
    "sqrt_eps_grad_rho_QT", "delta_rho_norm_QT",
    "r_energy", "r_l4", "g1_lhs", "g1_rhs", "g2_lhs", "g2_rhs",
    "picard_d", "picard_v",
)


class EnergyLedger:
    """Per-step diagnostics with a fixed column schema."""

    columns = LEDGER_COLUMNS

    def __init__(self, rows: list[tuple] | None = None):
        self.rows: list[tuple] = list(rows or [])

    def append(self, row: dict) -> None:
        missing = set(self.columns) - set(row)
        if missing:
            raise KeyError(f"ledger row misses {sorted(missing)}")
        t = float(row["t"])
        if self.rows and not t > self.rows[-1][1]:
            raise ValueError("ledger times must strictly increase")
        vals = tuple(float(row[c]) for c in self.columns)
        if not all(math.isfinite(v) for v in vals):
            bad = [c for c, v in zip(self.columns, vals) if not math.isfinite(v)]
            raise SimulationError(f"non-finite ledger entries {bad}", int(row["step"]))
        self.rows.append(vals)

    def __len__(self) -> int:
        return len(self.rows)

    def __getitem__(self, name: str) -> np.ndarray:
        i = self.columns.index(name)
        return np.array([r[i] for r in self.rows])

    def last(self, name: str) -> float:
        return self.rows[-1][self.columns.index(name)]

    def to_csv_text(self) -> str:
        buf = _io.StringIO()
        buf.write(",".join(self.columns) + "\n")
        for r in self.rows:
            buf.write(",".join(str(int(v)) if c in ("step", "picard_d", "picard_v") else format(v, ".17g")
                               for c, v in zip(self.columns, r)) + "\n")
        return buf.getvalue()

    def to_csv(self, path) -> None:
        Path(path).write_text(self.to_csv_text())

    @classmethod
    def from_csv(cls, path) -> "EnergyLedger":
        lines = Path(path).read_text().strip().splitlines()
        header = tuple(lines[0].split(","))
        if header != LEDGER_COLUMNS:
            raise ValueError(f"{path}: ledger header does not match the schema")
        return cls([tuple(float(x) for x in ln.split(",")) for ln in lines[1:]])


def edge_inner(a: np.ndarray, b: np.ndarray, grid: GridSpec) -> float:
    """``sum over edges`` of ``D+a D+b`` with the trapezoid edge weights (``-<a, L_N b>``)."""
    hx, hy = grid.hx, grid.hy
    if grid.periodic:
        ax = (np.roll(a, -1, 1) - a) / hx
        bx = (np.roll(b, -1, 1) - b) / hx
        ay = (np.roll(a, -1, 0) - a) / hy
        by = (np.roll(b, -1, 0) - b) / hy
        return float(hx * hy * (np.sum(ax * bx) + np.sum(ay * by)))
    ny, nx = a.shape
    oy = np.ones(ny)
    oy[0] = oy[-1] = 0.5
    ox = np.ones(nx)
    ox[0] = ox[-1] = 0.5
    ex = np.diff(a, axis=1) * np.diff(b, axis=1) / (hx * hx)
    ey = np.diff(a, axis=0) * np.diff(b, axis=0) / (hy * hy)
    return float(hx * hy * (np.sum(ex * oy[:, None]) + np.sum(ey * ox[None, :])))


# ---------------------------------------------------------------------------
# simulation

@dataclass
class RunResult:
    ledger: EnergyLedger
    rho: ScalarField
    v: VectorField2
    d: DirectorField
    coeffs: np.ndarray
    snapshots: list = field(default_factory=list)
    basis: GalerkinBasis | None = None
    d02_min: float = 1.0
    rho0_min: float = 1.0
    rho0_max: float = 1.0
    wall_time: float = 0.0


class Simulation:
    def __init__(self, spec: ScenarioSpec, radius: float | None = None, n_modes: int | None = None,
                 basis: GalerkinBasis | None = None):
        spec.validate()
        self.spec = spec
        p, s = spec.phys, spec.scheme
        self.dgrid = spec.domain
        if radius is None:
            self.fgrid, self.embed = self.dgrid, None
        else:
            self.fgrid, self.embed = ball_grid(self.dgrid, radius)
            if compact_support_radius(spec) > 0.5 * radius + 1e-12:
                raise ConfigError(f"initial data support exceeds half the smallest radius ({radius})")
        n = n_modes if n_modes is not None else s.n_modes
        self.basis = basis if basis is not None else build_basis(self.fgrid, p, n)
        rho, a, D = initial_state(spec, self.fgrid, self.dgrid, self.basis, self.embed)
        self.rho = rho
        self.a = a
        self.D = D
        self.D0 = D.copy()
        self.t = 0.0
        self.k = 0
        self.dcfg = DensityStepConfig(eps=s.eps, dt=s.dt)
        self.pcfg = PicardConfig(
            max_iters=spec.options.picard_max_iters,
            contraction_tol=spec.options.contraction_tol,
            renormalize=spec.options.renormalize,
            theta=p.theta,
            shifted=spec.mode == "cauchy-expanding-balls",
        )
        self.mass_op: MassOperator | None = None
        self._acc_grad_rho = 0.0
        self._acc_rho_pow = 0.0
        self._acc_l4 = 0.0
        self._prev: dict | None = None
        self._g1 = self._g1_constant()
        self.ledger = EnergyLedger()
        self.ledger.append(self._diagnostics(0, 0))

    # -- helpers ------------------------------------------------------------
    def velocity(self) -> np.ndarray:
        return reconstruct_array(self.a, self.basis)

    def _to_director_grid(self, V: np.ndarray) -> np.ndarray:
        return self.embed.extend(V, self.dgrid.shape) if self.embed is not None else V

    def _to_fluid_grid(self, D: np.ndarray) -> np.ndarray:
        return np.ascontiguousarray(self.embed.restrict(D)) if self.embed is not None else D

    def _g1_constant(self) -> float:
        p = self.spec.phys
        g = self.dgrid
        w = g.weights()
        D = self.D0
        h2 = float(np.sum(w * (np.sum(D * D, axis=0) + grad_sq_edge(D, g) + hessian_sq(D[0], g) + hessian_sq(D[1], g))))
        e0 = self._energy_parts(self.rho, self.a, self.D)["E"]
        self._E0 = e0
        return 128.0 * p.nu * p.theta * (self.spec.options.c1 + 12.0) * h2 * (h2 + 2.0 * e0 / p.nu)

    def _energy_parts(self, rho: np.ndarray, a: np.ndarray, D: np.ndarray) -> dict:
        p, s = self.spec.phys, self.spec.scheme
        fw = self.fgrid.weights()
        V = reconstruct_array(a, self.basis)
        live = rho > vacuum_threshold(rho)
        kin = 0.5 * float(np.sum(fw * np.where(live, rho, 0.0) * (V[0] ** 2 + V[1] ** 2)))
        pot_q = float(np.sum(fw * q_potential(rho, p)))
        pot_g = float(np.sum(fw * p.A / (p.gamma - 1.0) * rho**p.gamma))
        art = float(np.sum(fw * artificial_potential(rho, s.delta, s.beta))) if s.delta > 0 else 0.0
        dirich = 0.5 * float(np.sum(self.dgrid.weights() * grad_sq_edge(D, self.dgrid)))
        return {
            "kinetic": kin, "potential": pot_q, "director_energy": dirich,
            "E": kin + pot_q + p.nu * p.theta * dirich,
            "E_law": kin + pot_q + art + p.nu * dirich,
            "E_delta": kin + pot_g + art + p.nu * dirich,
            "V": V,
        }

    def _diagnostics(self, picard_d: int, picard_v: int) -> dict:
        p, s = self.spec.phys, self.spec.scheme
        dt = s.dt
        rho, a, D = self.rho, self.a, self.D
        parts = self._energy_parts(rho, a, D)
        fg, dg = self.fgrid, self.dgrid
        wi = dg.interior_weights()
        visc = float(np.dot(a, self.basis.eigvals * a))
        t1, t2 = tension_arrays(D[0], D[1], dg)
        tens = float(np.sum(wi * (t1 * t1 + t2 * t2)))
        l1, l2 = lap(D[0], dg), lap(D[1], dg)
        lapsq = float(np.sum(wi * (l1 * l1 + l2 * l2)))
        g2 = grad_sq_edge(D, dg)
        l4 = float(np.sum(wi * g2 * g2))
        hess = float(np.sum(wi * (hessian_sq(D[0], dg) + hessian_sq(D[1], dg))))
        if s.eps > 0:
            art_d = s.eps * edge_inner(artificial_derivative(rho, s.delta, s.beta), rho, fg) if s.delta > 0 else 0.0
            art_p = s.eps * edge_inner(q_derivative(rho, p), rho, fg)
        else:
            art_d = art_p = 0.0
        F = visc + p.theta * tens
        F_law = visc + p.nu * p.theta * tens
        theta_p = 0.5 * (p.gamma - 1.0)
        if self.k > 0:
            self._acc_grad_rho += dt * edge_inner(rho, rho, fg)
            self._acc_rho_pow += dt * float(np.sum(fg.weights() * rho ** (s.beta + theta_p)))
            self._acc_l4 += dt * l4
        row = {
            "step": self.k, "t": self.t,
            "E": parts["E"], "F": F, "E_delta": parts["E_delta"], "E_law": parts["E_law"], "F_law": F_law,
            "kinetic": parts["kinetic"], "potential": parts["potential"], "director_energy": parts["director_energy"],
            "visc_diss": visc, "tension_l2_2": tens, "art_diss": art_d, "art_diss_p": art_p,
            "mass": float(np.sum(fg.weights() * rho)), "min_rho": float(np.min(rho)), "max_rho": float(np.max(rho)),
            "min_d2": float(np.min(D[1])), "unit_defect": float(np.max(np.abs(D[0] ** 2 + D[1] ** 2 - 1.0))),
            "grad_d_l4_4": l4, "lap_d_l2_2": lapsq, "hess_d_l2_2": hess,
            "sqrt_eps_grad_rho_QT": math.sqrt(s.eps * self._acc_grad_rho),
            "delta_rho_norm_QT": (s.delta * self._acc_rho_pow) ** (1.0 / (s.beta + theta_p)) if s.delta > 0 else 0.0,
            "picard_d": picard_d, "picard_v": picard_v,
        }
        nt = p.nu * p.theta
        if self._prev is None:
            row.update(r_energy=0.0, r_l4=0.0, g1_lhs=0.0)
        else:
            dE_law = (row["E_law"] - self._prev["E_law"]) / dt
            dE = (row["E"] - self._prev["E"]) / dt
            row["r_energy"] = dE_law + F_law + art_d + art_p
            row["r_l4"] = dE_law + visc + nt * lapsq - nt * l4 + art_d + art_p
            row["g1_lhs"] = dE + visc + 0.75 * nt * lapsq
        row["g1_rhs"] = self._g1
        row["g2_lhs"] = self._acc_l4
        row["g2_rhs"] = 2.0 * (math.sqrt(self._E0 / nt) + math.sqrt(4.0 * (self._g1 * self.t + self._E0) / (3.0 * nt))) ** 2
        self._prev = {"E": row["E"], "E_law": row["E_law"]}
        return row

    # -- stepping -----------------------------------------------------------
    def step(self) -> None:
        spec = self.spec
        p, s = spec.phys, spec.scheme
        k = self.k + 1
        try:
            if spec.options.freeze_flow:
                zero = VectorField2.zeros(self.dgrid)
                d_new, it_d = director_step(DirectorField(self.dgrid, self.D[0], self.D[1]), zero, self.pcfg, s.dt)
                self.D = d_new.stacked()
                it_v = 0
            else:
                if self.mass_op is None:
                    self.mass_op = assemble_mass(self.rho, self.basis)
                d_cur = DirectorField(self.dgrid, self.D[0], self.D[1])
                a_iter = self.a
                outer = 0
                while True:
                    outer += 1
                    V = reconstruct_array(a_iter, self.basis)
                    vf = VectorField2(self.fgrid, V[0], V[1])
                    rho_new, faces, _ = density_step_detail(ScalarField(self.fgrid, self.rho), vf, self.dcfg)
                    Vd = self._to_director_grid(V)
                    d_new, it_d = director_step(d_cur, VectorField2(self.dgrid, Vd[0], Vd[1]), self.pcfg, s.dt)
                    D_el = self._to_fluid_grid(d_new.stacked())
                    mom = momentum_step(self.a, rho_new, ScalarField(self.fgrid, self.rho), D_el, p, s, self.basis,
                                        faces=faces, coupling=spec.options.momentum_coupling, mass_old=self.mass_op)
                    if not spec.options.outer_picard:
                        break
                    nrm = max(np.linalg.norm(mom.a), 1e-300)
                    change = np.linalg.norm(mom.a - a_iter) / nrm
                    a_iter = mom.a
                    if change <= spec.options.outer_tol or np.linalg.norm(mom.a) == 0.0:
                        break
                    if outer >= 50:
                        raise SimulationError(f"outer Picard loop did not converge (change {change:.3e})", k)
                self.rho = np.array(rho_new.values)
                self.a = mom.a
                self.D = d_new.stacked()
                self.mass_op = mom.mass_op
                it_v = mom.iterations
        except SimulationError:
            raise
        except (RuntimeError, ValueError) as exc:
            raise SimulationError(str(exc), k) from exc
        if not (np.all(np.isfinite(self.rho)) and np.all(np.isfinite(self.a)) and np.all(np.isfinite(self.D))):
            raise SimulationError("NaN detected", k)
        self.k = k
        self.t = k * s.dt
        self.ledger.append(self._diagnostics(it_d, it_v))

    def fields(self) -> tuple[ScalarField, VectorField2, DirectorField]:
        V = self.velocity()
        return (ScalarField(self.fgrid, self.rho), VectorField2(self.fgrid, V[0], V[1]),
                DirectorField(self.dgrid, self.D[0], self.D[1]))

    def snapshot(self, out_dir: Path, tag: str = "") -> list[Path]:
        rho, v, d = self.fields()
        paths = []
        if self.embed is None:
            path = out_dir / f"snap{tag}_{self.k:06d}.csv"
            write_snapshot(path, self.fgrid, {"rho": rho.values, "u": v.u, "w": v.w, "d1": d.d1, "d2": d.d2})
            paths.append(path)
        else:
            pf = out_dir / f"snap{tag}_fluid_{self.k:06d}.csv"
            pd = out_dir / f"snap{tag}_director_{self.k:06d}.csv"
            write_snapshot(pf, self.fgrid, {"rho": rho.values, "u": v.u, "w": v.w})
            write_snapshot(pd, self.dgrid, {"d1": d.d1, "d2": d.d2})
            paths += [pf, pd]
        return paths


def _manifest(spec: ScenarioSpec, wall: float, extra: dict | None = None) -> dict:
    out = {"spec": spec.to_dict(), "code_version": __version__, "wall_time_s": wall,
           "kernels": kernels.BACKEND, "ledger_columns": list(LEDGER_COLUMNS)}
    if extra:
        out.update(extra)
    return out


def run(spec: ScenarioSpec, out_dir=None, snap_every: int = 0, radius: float | None = None,
        n_modes: int | None = None, tag: str = "", keep_path: bool = False) -> RunResult:
    """Run a scenario to ``t_end``; writes ``ledger.csv`` and ``manifest.json`` when ``out_dir`` is set."""
    t0 = time.perf_counter()
    sim = Simulation(spec, radius=radius, n_modes=n_modes)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    snaps: list = []
    path: list = []
    d02_min = float(np.min(sim.D[1]))
    rho0 = (float(np.min(sim.rho)), float(np.max(sim.rho)))
    if keep_path:
        path.append(sim.fields())
    if out is not None and snap_every > 0:
        snaps += sim.snapshot(out, tag)
    failure: Exception | None = None
    try:
        for _ in range(spec.scheme.n_steps):
            sim.step()
            if keep_path:
                path.append(sim.fields())
            if out is not None and snap_every > 0 and sim.k % snap_every == 0:
                snaps += sim.snapshot(out, tag)
    except SimulationError as exc:
        failure = exc
    wall = time.perf_counter() - t0
    if out is not None:
        sim.ledger.to_csv(out / f"ledger{tag}.csv")
        extra = {"failure": str(failure)} if failure is not None else None
        if radius is not None:
            extra = dict(extra or {}, radius=radius, n_modes=sim.basis.n)
        (out / f"manifest{tag}.json").write_text(json.dumps(_manifest(spec, wall, extra), indent=2, sort_keys=True))
    if failure is not None:
        raise failure
    rho, v, d = sim.fields()
    res = RunResult(sim.ledger, rho, v, d, sim.a.copy(), snaps, sim.basis, d02_min, rho0[0], rho0[1], wall)
    if keep_path:
        res.snapshots = path
    return res


# ---------------------------------------------------------------------------
# audits

@dataclass
class ResidualReport:
    residuals: np.ndarray
    max_positive: float
    max_abs: float
    scale: float
    within_tol: bool

    def as_dict(self) -> dict:
        return {"max_positive": self.max_positive, "max_abs": self.max_abs, "scale": self.scale,
                "within_tol": self.within_tol, "n": int(len(self.residuals))}


def _report(r: np.ndarray, scale: float, rel_tol: float) -> ResidualReport:
    mp = float(max(np.max(r), 0.0)) if len(r) else 0.0
    ma = float(np.max(np.abs(r))) if len(r) else 0.0
    return ResidualReport(r, mp, ma, scale, mp <= rel_tol * max(scale, 1e-300))


def energy_law_audit(ledger: EnergyLedger, p: PhysParams | None = None, s: SchemeParams | None = None,
                     rel_tol: float = 1e-12) -> ResidualReport:
    """``r_k = (E(t_{k+1}) - E(t_k))/dt + F(t_{k+1})`` plus the artificial dissipation terms.

    Uses the ``E_law``/``F_law`` pair.  ``scale`` is the largest dissipation
    or energy-rate magnitude in the run, so ``max_positive / scale`` is the
    relative excess; ``within_tol`` compares it with ``rel_tol``.
    """
    t = ledger["t"]
    E = ledger["E_law"]
    dt = np.diff(t)
    dEdt = np.diff(E) / dt
    diss = ledger["F_law"][1:] + ledger["art_diss"][1:] + ledger["art_diss_p"][1:]
    r = dEdt + diss
    scale = float(max(np.max(np.abs(dEdt), initial=0.0), np.max(np.abs(diss), initial=0.0)))
    return _report(r, scale, rel_tol)


def l4_identity_audit(ledger: EnergyLedger, p: PhysParams | None = None, rel_tol: float = 1e-12) -> ResidualReport:
    """Same standard with ``|Lap d|^2`` in place of the tension and ``|grad d|^4`` on the right."""
    nt = 1.0 if p is None else p.nu * p.theta
    t = ledger["t"]
    E = ledger["E_law"]
    dt = np.diff(t)
    dEdt = np.diff(E) / dt
    lhs = ledger["visc_diss"][1:] + nt * ledger["lap_d_l2_2"][1:] + ledger["art_diss"][1:] + ledger["art_diss_p"][1:]
    rhs = nt * ledger["grad_d_l4_4"][1:]
    r = dEdt + lhs - rhs
    scale = float(max(np.max(np.abs(dEdt), initial=0.0), np.max(np.abs(lhs), initial=0.0), np.max(np.abs(rhs), initial=0.0)))
    return _report(r, scale, rel_tol)


def residual_convergence(reports: list[ResidualReport], key: str = "max_positive") -> list[float]:
    """Ratios of successive residual sizes along a dt-halving sequence."""
    vals = [getattr(r, key) for r in reports]
    return [a / b if b > 0 else math.inf for a, b in zip(vals, vals[1:])]


def ledger_invariants(ledger: EnergyLedger, mode: str = "third-approx", mass_rel_tol: float = 1e-9) -> list[str]:
    """Violated row invariants as human-readable strings (empty when all hold)."""
    bad = []
    t = ledger["t"]
    if np.any(np.diff(t) <= 0):
        bad.append("t not strictly increasing")
    if np.any(ledger["E"] < 0) or np.any(ledger["F"] < 0):
        bad.append("negative energy or dissipation")
    m = ledger["mass"]
    if np.max(np.abs(m - m[0])) > mass_rel_tol * abs(m[0]):
        bad.append(f"mass drift {np.max(np.abs(m - m[0])) / abs(m[0]):.3e}")
    if mode != "gamma-level" and np.any(ledger["min_rho"] <= 0):
        bad.append("non-positive density")
    for name in LEDGER_COLUMNS:
        if not np.all(np.isfinite(ledger[name])):
            bad.append(f"non-finite column {name}")
    return bad


# ---------------------------------------------------------------------------
# experiment families

@dataclass
class ContinuationReport:
    ledgers: list
    stages: list
    eps_column: list
    eps_bounded: bool
    delta_column: list
    trace_diffs: list
    trace_diffs_shrink: bool

    def table(self) -> list[dict]:
        rows = []
        for i, (stage, led) in enumerate(zip(self.stages, self.ledgers)):
            rows.append({"stage": i, "eps": stage[0], "delta": stage[1], "n": int(stage[2]),
                         "sqrt_eps_grad_rho_QT": led.last("sqrt_eps_grad_rho_QT"),
                         "delta_rho_norm_QT": led.last("delta_rho_norm_QT"),
                         "E_final": led.last("E"), "mass": led.last("mass")})
        return rows


def continuation_run(spec: ScenarioSpec, out_dir=None, slack: float = 2.0) -> ContinuationReport:
    """Run the same initial data through every ``(eps, delta, n)`` stage."""
    spec.validate()
    if not spec.continuation:
        raise ConfigError("continuation_run needs continuation stages")
    ledgers = []
    for i, (eps, delta, n) in enumerate(spec.continuation):
        mode = spec.mode
        if mode != "cauchy-expanding-balls":
            mode = "third-approx" if eps > 0 else ("delta-level" if delta > 0 else "gamma-level")
        st = replace(spec, scheme=replace(spec.scheme, eps=float(eps), delta=float(delta), n_modes=int(n)),
                     mode=mode, continuation=())
        res = run(st, out_dir=out_dir, tag=f"_stage{i}")
        ledgers.append(res.ledger)
    eps_col = [led.last("sqrt_eps_grad_rho_QT") for led in ledgers]
    delta_col = [led.last("delta_rho_norm_QT") for led in ledgers]
    eps_ok = all(v <= slack * eps_col[0] + 1e-300 for v in eps_col)
    diffs = [float(np.max(np.abs(a["E"] - b["E"]))) for a, b in zip(ledgers, ledgers[1:])]
    shrink = all(b < a or (a == 0.0 and b == 0.0) for a, b in zip(diffs, diffs[1:]))
    return ContinuationReport(ledgers, list(spec.continuation), eps_col, eps_ok, delta_col, diffs, shrink)


@dataclass
class ExpansionReport:
    radii: list
    n_modes: list
    ledgers: list
    trace_diffs: list
    decreasing: bool
    d02_min: float
    min_d2: float
    angle_ok: bool

    def as_dict(self) -> dict:
        return {"radii": self.radii, "n_modes": self.n_modes, "trace_diffs": self.trace_diffs,
                "decreasing": self.decreasing, "d02_min": self.d02_min, "min_d2": self.min_d2,
                "angle_ok": self.angle_ok}


def expanding_ball_run(spec: ScenarioSpec, out_dir=None, mode_exponent: float = 2.0) -> ExpansionReport:
    """Momentum and density on growing squares, director on the surrounding torus.

    The Galerkin dimension grows like ``R^mode_exponent``: an exponent of 2
    keeps the resolved length fixed, larger ones also refine it, so that the
    approximation improves in both domain size and resolution as ``R`` grows.
    """
    spec.validate()
    radii = list(spec.expanding_radii)
    if spec.mode != "cauchy-expanding-balls":
        raise ConfigError("expanding_ball_run needs mode cauchy-expanding-balls")
    if abs(spec.domain.lx - 4.0 * radii[-1]) > 1e-9 or abs(spec.domain.ly - 4.0 * radii[-1]) > 1e-9:
        raise ConfigError("the director torus must have side 4 * R_max")
    if compact_support_radius(spec) > 0.5 * radii[0] + 1e-12:
        raise ConfigError("initial data support exceeds R_1 / 2")
    ledgers, modes = [], []
    d02 = None
    for i, R in enumerate(radii):
        n = int(round(spec.scheme.n_modes * (R / radii[0]) ** mode_exponent))
        res = run(spec, out_dir=out_dir, radius=R, n_modes=n, tag=f"_R{i}")
        ledgers.append(res.ledger)
        modes.append(res.basis.n)
        d02 = res.d02_min if d02 is None else min(d02, res.d02_min)
    diffs = [float(np.max(np.abs(a["E"] - b["E"]))) for a, b in zip(ledgers, ledgers[1:])]
    dec = all(b < a or (a == 0.0 and b == 0.0) for a, b in zip(diffs, diffs[1:]))
    min_d2 = float(min(np.min(led["min_d2"]) for led in ledgers))
    return ExpansionReport(radii, modes, ledgers, diffs, dec, float(d02), min_d2, min_d2 >= 0.5 * d02)
