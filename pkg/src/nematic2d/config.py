"""INI configuration for scenarios, and the shipped presets.

Grammar (``configparser``, ``key = value``; ``#`` starts a comment line)::

    [domain]   kind (periodic-torus | dirichlet-box), lx, ly, nx, ny
    [phys]     mu, lam, nu, theta, A, gamma, rho_inf
    [scheme]   eps, delta, beta, n_modes, dt, t_end
    [initial]  name (constant | smooth | compact), then generator parameters
    [run]      mode, seed, continuation, expanding_radii, renormalize,
               outer_picard, outer_tol, momentum_coupling, freeze_flow,
               contraction_tol, picard_max_iters, angle_tol, c1

``continuation`` is ``eps delta n; eps delta n; ...`` and ``expanding_radii``
a space-separated list.  Every section except ``[domain]`` may be omitted;
missing keys take the dataclass defaults.  Unknown sections or keys raise
``ConfigError`` naming the key.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import asdict, fields, replace

from .coupled import ConfigError, InitialSpec, RunOptions, ScenarioSpec
from .energy import PhysParams, SchemeParams
from .fields import GridSpec

INITIAL_KEYS = {
    "constant": {"rho", "angle"},
    "smooth": {"rho", "rho_amp", "phi_amp", "v_amp", "noise_amp"},
    "compact": {"support", "rho_amp", "phi_amp"},
}

_DOMAIN_KEYS = {"kind": "domain_kind", "lx": "lx", "ly": "ly", "nx": "nx", "ny": "ny"}
_RUN_SCALAR = {"mode", "seed", "continuation", "expanding_radii"}


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _coerce(raw: str, like, key: str):
    try:
        if isinstance(like, bool):
            low = raw.strip().lower()
            if low not in ("true", "false", "1", "0", "yes", "no", "on", "off"):
                raise ValueError(raw)
            return low in ("true", "1", "yes", "on")
        if isinstance(like, int):
            return int(raw)
        if isinstance(like, float):
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"{key} = {raw!r} is not a valid {type(like).__name__}") from exc
    return raw.strip()


def _check_keys(section: str, got, allowed) -> None:
    extra = sorted(set(got) - set(allowed))
    if extra:
        raise ConfigError(f"unknown key [{section}] {extra[0]} (allowed: {', '.join(sorted(allowed))})")


def _build(cls, section: str, values: dict, defaults):
    allowed = {f.name for f in fields(cls)}
    _check_keys(section, values, allowed)
    kw = {k: _coerce(v, getattr(defaults, k), k) for k, v in values.items()}
    try:
        return cls(**{**asdict(defaults), **kw})
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def parse_stages(text: str) -> tuple:
    stages = []
    for chunk in text.split(";"):
        if not chunk.strip():
            continue
        parts = chunk.split()
        if len(parts) != 3:
            raise ConfigError(f"continuation stage {chunk.strip()!r} must be 'eps delta n'")
        try:
            stages.append((float(parts[0]), float(parts[1]), int(parts[2])))
        except ValueError as exc:
            raise ConfigError(f"continuation stage {chunk.strip()!r} is not numeric") from exc
    return tuple(stages)


def parse_radii(text: str) -> tuple:
    try:
        return tuple(float(x) for x in text.replace(",", " ").split())
    except ValueError as exc:
        raise ConfigError(f"expanding_radii = {text!r} is not a list of numbers") from exc


def parse_config_text(text: str) -> ScenarioSpec:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    known = {"domain", "phys", "scheme", "initial", "run"}
    for sec in cp.sections():
        if sec not in known:
            raise ConfigError(f"unknown section [{sec}]")
    if not cp.has_section("domain"):
        raise ConfigError("missing required section [domain]")
    dom = dict(cp["domain"])
    _check_keys("domain", dom, _DOMAIN_KEYS)
    for k in _DOMAIN_KEYS:
        if k not in dom:
            raise ConfigError(f"missing required key [domain] {k}")
    sizes = {k: _coerce(dom[k], 0.0 if k in ("lx", "ly") else 0, f"[domain] {k}") for k in ("lx", "ly", "nx", "ny")}
    try:
        grid = GridSpec(dom["kind"].strip(), **sizes)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    phys = _build(PhysParams, "phys", dict(cp["phys"]) if cp.has_section("phys") else {}, PhysParams())
    scheme = _build(SchemeParams, "scheme", dict(cp["scheme"]) if cp.has_section("scheme") else {}, SchemeParams())
    ini_raw = dict(cp["initial"]) if cp.has_section("initial") else {}
    name = ini_raw.pop("name", "constant").strip()
    if name not in INITIAL_KEYS:
        raise ConfigError(f"[initial] name = {name!r} must be one of {sorted(INITIAL_KEYS)}")
    _check_keys("initial", ini_raw, INITIAL_KEYS[name])
    initial = InitialSpec.make(name, **{k: _coerce(v, 0.0, k) for k, v in ini_raw.items()})
    run_raw = dict(cp["run"]) if cp.has_section("run") else {}
    opt_keys = {f.name for f in fields(RunOptions)}
    _check_keys("run", run_raw, opt_keys | _RUN_SCALAR)
    opts = _build(RunOptions, "run", {k: v for k, v in run_raw.items() if k in opt_keys}, RunOptions())
    spec = ScenarioSpec(
        domain=grid, phys=phys, scheme=scheme, initial=initial,
        mode=run_raw.get("mode", "third-approx").strip(),
        continuation=parse_stages(run_raw.get("continuation", "")),
        expanding_radii=parse_radii(run_raw.get("expanding_radii", "")),
        seed=_coerce(run_raw.get("seed", "0"), 0, "seed"),
        options=opts,
    )
    spec.validate()
    return spec


def parse_config(path) -> ScenarioSpec:
    with open(path) as fh:
        return parse_config_text(fh.read())


def emit_config(spec: ScenarioSpec) -> str:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    g = spec.domain
    cp["domain"] = {"kind": g.domain_kind, "lx": _fmt(g.lx), "ly": _fmt(g.ly), "nx": _fmt(g.nx), "ny": _fmt(g.ny)}
    cp["phys"] = {k: _fmt(v) for k, v in asdict(spec.phys).items()}
    cp["scheme"] = {k: _fmt(v) for k, v in asdict(spec.scheme).items()}
    cp["initial"] = {"name": spec.initial.name, **{k: _fmt(v) for k, v in spec.initial.params}}
    run = {"mode": spec.mode, "seed": _fmt(spec.seed)}
    if spec.continuation:
        run["continuation"] = "; ".join(f"{_fmt(float(e))} {_fmt(float(d))} {int(n)}" for e, d, n in spec.continuation)
    if spec.expanding_radii:
        run["expanding_radii"] = " ".join(_fmt(float(r)) for r in spec.expanding_radii)
    run.update({k: _fmt(v) for k, v in asdict(spec.options).items()})
    cp["run"] = run
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


# ---------------------------------------------------------------------------
# presets

def _equilibrium() -> ScenarioSpec:
    return ScenarioSpec(
        GridSpec("periodic-torus", 1.0, 1.0, 64, 64),
        PhysParams(),
        SchemeParams(eps=0.01, dt=1e-3, t_end=1.0, n_modes=16),
        InitialSpec.make("constant"),
    )


def _small_energy() -> ScenarioSpec:
    # E0 / area is about 1.1e-4, below nu / 4096
    return ScenarioSpec(
        GridSpec("periodic-torus", 6.283185307179586, 6.283185307179586, 32, 32),
        PhysParams(),
        SchemeParams(eps=0.05, dt=0.01, t_end=0.4, n_modes=16),
        InitialSpec.make("smooth", rho_amp=0.02, phi_amp=0.005, v_amp=0.0),
    )


def _director_only() -> ScenarioSpec:
    return ScenarioSpec(
        GridSpec("periodic-torus", 6.283185307179586, 6.283185307179586, 64, 64),
        PhysParams(),
        SchemeParams(eps=0.05, dt=0.01, t_end=0.5, n_modes=4),
        InitialSpec.make("smooth", phi_amp=0.8),
        options=RunOptions(freeze_flow=True, renormalize=False),
    )


def _continuation() -> ScenarioSpec:
    return ScenarioSpec(
        GridSpec("periodic-torus", 6.283185307179586, 6.283185307179586, 32, 32),
        PhysParams(),
        SchemeParams(eps=0.1, delta=0.01, dt=0.01, t_end=0.5, n_modes=16),
        InitialSpec.make("smooth", rho_amp=0.2, phi_amp=0.2, v_amp=0.3),
        continuation=((0.1, 0.01, 16), (0.05, 0.01, 16), (0.025, 0.01, 16)),
    )


def _expanding_balls() -> ScenarioSpec:
    return ScenarioSpec(
        GridSpec("periodic-torus", 16.0, 16.0, 64, 64),
        PhysParams(),
        SchemeParams(eps=0.05, dt=0.01, t_end=1.0, n_modes=96),
        InitialSpec.make("compact", support=1.0, rho_amp=0.1, phi_amp=0.3),
        mode="cauchy-expanding-balls",
        expanding_radii=(2.0, 3.0, 4.0),
    )


PRESETS = {
    "equilibrium": _equilibrium,
    "small-energy": _small_energy,
    "director-only": _director_only,
    "continuation": _continuation,
    "expanding-balls": _expanding_balls,
}


def preset(name: str) -> ScenarioSpec:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return PRESETS[name]()


def with_overrides(spec: ScenarioSpec, seed: int | None = None, stages: str | None = None,
                   radii: str | None = None) -> ScenarioSpec:
    if seed is not None:
        spec = replace(spec, seed=int(seed))
    if stages is not None:
        spec = replace(spec, continuation=parse_stages(stages))
    if radii is not None:
        spec = replace(spec, expanding_radii=parse_radii(radii))
    spec.validate()
    return spec
