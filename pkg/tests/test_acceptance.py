"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""

import math
import time
from dataclasses import replace

import numpy as np
import pytest

from conftest import observed_orders, record_acceptance
from nematic2d.config import PRESETS, preset
from nematic2d.coupled import (
    RunOptions,
    Simulation,
    continuation_run,
    energy_law_audit,
    expanding_ball_run,
    l4_identity_audit,
    residual_convergence,
    run,
)
from nematic2d.density import DensityStepConfig, density_bounds_check, density_step, mass
from nematic2d.energy import PhysParams, SchemeParams
from nematic2d.fields import BOX, PERIODIC, DirectorField, GridSpec, ScalarField, VectorField2
from nematic2d.galerkin import assemble_mass, build_basis, mass_solve, momentum_step
from nematic2d.inequalities import ladyzhenskaya_check, rigidity_check


def _ledgers_of(name):
    spec = preset(name)
    if name == "expanding-balls":
        return expanding_ball_run(spec).ledgers
    if spec.continuation:
        return continuation_run(spec).ledgers
    return [run(spec).ledger]


@pytest.fixture(scope="module")
def preset_ledgers():
    return {name: _ledgers_of(name) for name in PRESETS}


def test_c1_equilibrium_exactness():
    spec = preset("equilibrium")
    t0 = time.perf_counter()
    sim = Simulation(spec)
    rho0, a0, D0 = sim.rho.copy(), sim.a.copy(), sim.D.copy()
    drift = 0.0
    for _ in range(spec.scheme.n_steps):
        sim.step()
        drift = max(drift, float(np.max(np.abs(sim.rho - rho0)) / np.max(np.abs(rho0))),
                    float(np.max(np.abs(sim.a - a0))), float(np.max(np.abs(sim.D - D0))))
    wall = time.perf_counter() - t0
    E = sim.ledger["E"]
    ok = sim.k == 1000 and drift <= 1e-12 and np.all(E == 0) and wall < 30
    record_acceptance("1 equilibrium exactness", ok,
                      f"{sim.k} steps, max drift {drift:.1e}, max|E| {np.max(np.abs(E)):.1e}, {wall:.1f} s")
    assert ok


def test_c2_energy_law_residual_convergence():
    base = preset("small-energy")
    reps = {"energy": [], "l4": []}
    for dt in (0.01, 0.005, 0.0025):
        led = run(replace(base, scheme=replace(base.scheme, dt=dt))).ledger
        reps["energy"].append(energy_law_audit(led))
        reps["l4"].append(l4_identity_audit(led, base.phys))
    ok = True
    details = []
    for key, rs in reps.items():
        ratios = residual_convergence(rs)
        ok &= all(1.7 <= r <= 2.3 for r in ratios)
        details.append(f"{key} max+ " + ", ".join(f"{r.max_positive:.2e}" for r in rs)
                       + " ratios " + ", ".join(f"{q:.2f}" for q in ratios))
    record_acceptance("2 energy-law residual convergence", ok, "; ".join(details))
    assert ok


def test_c3_constraint_propagation(preset_ledgers):
    base = preset("director-only")
    defects = []
    for dt in (0.01, 0.005, 0.0025):
        led = run(replace(base, scheme=replace(base.scheme, dt=dt))).ledger
        defects.append(float(np.max(led["unit_defect"])))
    ratios = [a / b for a, b in zip(defects, defects[1:])]
    halving = all(1.7 <= r <= 2.3 for r in ratios)
    on = run(replace(base, options=replace(base.options, renormalize=True))).ledger
    renorm = float(np.max(on["unit_defect"]))
    renorm_all = max(float(np.max(led["unit_defect"])) for name, leds in preset_ledgers.items()
                     for led in leds if name != "director-only")
    angle_tol = RunOptions().angle_tol
    drops = [float(led["min_d2"][0] - np.min(led["min_d2"])) for leds in preset_ledgers.values() for led in leds]
    angle = max(drops) <= angle_tol
    ok = halving and renorm <= 1e-13 and renorm_all <= 1e-13 and angle
    record_acceptance("3 constraint propagation", ok,
                      "off: " + ", ".join(f"{d:.2e}" for d in defects) + " ratios "
                      + ", ".join(f"{r:.2f}" for r in ratios)
                      + f"; on: {max(renorm, renorm_all):.1e}; worst min-d2 drop {max(drops):.1e}")
    assert ok


def _heat(n, dt, T, discrete_time=False):
    g = GridSpec(BOX, math.pi, math.pi, n, n)
    X, _ = g.coords()
    rho = ScalarField(g, 1.0 + 0.1 * np.cos(X))
    cfg = DensityStepConfig(eps=1.0, dt=dt, linear_tol=1e-13)
    steps = int(round(T / dt))
    path = [rho]
    for _ in range(steps):
        rho = density_step(rho, VectorField2.zeros(g), cfg)
        path.append(rho)
    decay = (1.0 + dt) ** (-steps) if discrete_time else math.exp(-T)
    err = float(np.max(np.abs(rho.values - 1.0 - 0.1 * decay * np.cos(X))))
    return err, path, VectorField2.zeros(g), cfg


def test_c4_density_subsolver():
    t_err, s_err, drift, trajectories = [], [], 0.0, []
    for dt in (0.05, 0.025, 0.0125):
        e, path, v, _ = _heat(128, dt, 0.5)
        t_err.append(e)
        trajectories.append((path, v, dt))
    for n in (8, 16, 32):
        e, path, v, _ = _heat(n, 0.01, 0.2, discrete_time=True)
        s_err.append(e)
        trajectories.append((path, v, 0.01))
    g = GridSpec(BOX, math.pi, math.pi, 64, 64)
    X, Y = g.coords()
    v = VectorField2(g, 0.5 * np.sin(X) * np.sin(Y), 0.3 * np.sin(2 * X) * np.sin(Y))
    rho = ScalarField(g, 1.0 + 0.3 * np.cos(X) * np.cos(Y))
    path = [rho]
    for _ in range(100):
        rho = density_step(rho, v, DensityStepConfig(eps=0.2, dt=0.01))
        path.append(rho)
    trajectories.append((path, v, 0.01))
    bounds_ok, margin = True, math.inf
    for path, vel, dt in trajectories:
        m0 = mass(path[0])
        drift = max(drift, max(abs(mass(r) - m0) / m0 for r in path))
        lo, hi = float(np.min(path[0].values)), float(np.max(path[0].values))
        rep = density_bounds_check(path, [vel] * (len(path) - 1), lo, hi, dt)
        bounds_ok &= rep.ok
        margin = min(margin, rep.worst_margin)
    to, so = observed_orders(t_err), observed_orders(s_err)
    ok = min(to) >= 0.9 and min(so) >= 1.9 and drift <= 1e-9 and bounds_ok
    record_acceptance("4 density sub-solver", ok,
                      "time orders " + ", ".join(f"{o:.2f}" for o in to) + "; space orders "
                      + ", ".join(f"{o:.2f}" for o in so)
                      + f"; mass drift {drift:.1e}; bounds {'hold' if bounds_ok else 'violated'} "
                      f"on {len(trajectories)} trajectories (worst margin {margin:.1e})")
    assert ok


def test_c5_galerkin_machinery():
    grids = [GridSpec(PERIODIC, 2 * math.pi, 2 * math.pi, 64, 64), GridSpec(BOX, 1.0, 1.0, 32, 32)]
    gram = 0.0
    eig = 0.0
    for g in grids:
        for mu, lam in ((1.0, 0.0), (0.5, 0.7)):
            b = build_basis(g, PhysParams(mu=mu, lam=lam), 32)
            gram = max(gram, float(np.max(np.abs(b.gram() - np.eye(b.n)))))
            if g.periodic:
                for val, (m, l, fam, _) in zip(b.eigvals, b.labels):
                    k2 = m * m + l * l
                    sym = mu * k2 if fam == "solenoidal" else (2 * mu + lam) * k2
                    eig = max(eig, abs(val - sym))
    bb = build_basis(grids[1], PhysParams(), 16)
    one = ScalarField(grids[1], np.ones(grids[1].shape))
    D = DirectorField.constant(grids[1]).stacked()
    # tiny amplitude keeps convection negligible, i.e. the linear Stokes regime
    lam1, T, amp = bb.eigvals[0], 0.02, 1e-8
    errs = []
    for dt in (0.002, 0.001, 0.0005):
        a = amp * np.eye(bb.n)[0]
        for _ in range(int(round(T / dt))):
            a = momentum_step(a, one, one, D, PhysParams(), SchemeParams(dt=dt), bb).a
        errs.append(abs(a[0] / amp - math.exp(-lam1 * T)))
    decay_ok = all(1.7 <= x / y <= 2.3 for x, y in zip(errs, errs[1:]))
    rng = np.random.default_rng(0)
    res = 0.0
    for _ in range(20):
        op = assemble_mass(0.2 + rng.random(grids[1].shape), bb)
        rhs = rng.standard_normal(bb.n)
        res = max(res, float(np.linalg.norm(op.M @ mass_solve(op, rhs) - rhs) / np.linalg.norm(rhs)))
    ok = gram <= 1e-8 and eig <= 1e-10 and decay_ok and res <= 1e-10
    record_acceptance("5 Galerkin machinery", ok,
                      f"gram {gram:.1e}, symbol {eig:.1e}, Stokes errors "
                      + ", ".join(f"{e:.2e}" for e in errs) + f", mass_solve residual {res:.1e}")
    assert ok


def test_c6_inequality_suite():
    l128 = ladyzhenskaya_check(128, 200, seed=0)
    l256 = ladyzhenskaya_check(256, 200, seed=0)
    rig = [rigidity_check(d2, 500 if d2 == 0.5 else 100, 128, seed=0) for d2 in (0.1, 0.5, 0.9)]
    oracle = max(r.oracle_error for r in rig)
    coer = min(r.min_coercivity for r in rig)
    ok = l128.worst_ratio <= 2.02 and l256.worst_ratio <= 2.005 and oracle <= 1e-6 and coer > 0
    record_acceptance("6 inequality suite", ok,
                      f"Ladyzhenskaya worst {l128.worst_ratio:.4f} @128, {l256.worst_ratio:.4f} @256 "
                      f"(slack {l128.grid_slack:.1e}, {l256.grid_slack:.1e}); oracle {oracle:.1e}; "
                      f"min coercivity {coer:.3f}; varpi0 "
                      + ", ".join(f"{r.varpi0:.2f}" for r in rig))
    assert ok


def test_c7_continuation_uniformity():
    spec = preset("continuation")
    eps_rep = continuation_run(spec)
    dspec = replace(spec, continuation=((0.05, 0.01, 16), (0.05, 0.005, 16), (0.05, 0.0025, 16)))
    del_rep = continuation_run(dspec)
    delta_bounded = all(v <= 2.0 * del_rep.delta_column[0] for v in del_rep.delta_column)
    ok = eps_rep.eps_bounded and del_rep.trace_diffs_shrink and delta_bounded
    record_acceptance("7 continuation uniformity", ok,
                      "sqrt(eps)|grad rho| " + ", ".join(f"{v:.3f}" for v in eps_rep.eps_column)
                      + "; delta trace diffs " + ", ".join(f"{v:.1e}" for v in del_rep.trace_diffs)
                      + "; delta column " + ", ".join(f"{v:.3f}" for v in del_rep.delta_column))
    assert ok


def test_c8_expanding_balls():
    spec = preset("expanding-balls")
    rep = expanding_ball_run(spec)
    support = spec.initial.get("support", 1.0)
    ok = support <= 0.5 * spec.expanding_radii[0] and rep.decreasing and rep.angle_ok
    record_acceptance("8 expanding-ball Cauchy proxy", ok,
                      "radii " + ", ".join(f"{r:g}" for r in rep.radii) + " modes "
                      + ", ".join(str(n) for n in rep.n_modes) + "; trace diffs "
                      + ", ".join(f"{d:.2e}" for d in rep.trace_diffs)
                      + f"; min d2 {rep.min_d2:.3f} vs half initial {0.5 * rep.d02_min:.3f}")
    assert ok


def test_c9_determinism(preset_ledgers):
    same = {}
    for name in PRESETS:
        again = _ledgers_of(name)
        same[name] = len(again) == len(preset_ledgers[name]) and all(
            a.to_csv_text() == b.to_csv_text() for a, b in zip(again, preset_ledgers[name]))
    ok = all(same.values())
    record_acceptance("9 determinism", ok,
                      ", ".join(f"{k} {'identical' if v else 'DIFFERENT'}" for k, v in same.items()))
    assert ok
