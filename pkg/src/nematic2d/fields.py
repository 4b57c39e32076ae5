"""Grids, grid-sampled fields and the finite-difference operators built on them.

Node layout
-----------
Arrays are stored row-major with shape ``(Ny, Nx)``: the first index runs
along ``y`` and the second along ``x``.

* ``periodic-torus``: ``nx * ny`` nodes at ``x_i = i*hx``; the node at
  ``x = lx`` is identified with ``x = 0``.  Quadrature is the plain sum
  times ``hx*hy``.
* ``dirichlet-box``: ``(nx+1) * (ny+1)`` nodes including both walls.
  Quadrature is the tensor trapezoid rule.

Two gradient flavours exist.  ``gradient`` is the centred second-order
stencil (one-sided second order at walls).  ``grad_sq_edge`` is the
edge-based squared gradient matched to the 5-point Laplacian: for unit
vectors it satisfies ``d . Lap(d) = -grad_sq_edge(d)`` exactly, which is
what makes the discrete director energy law close.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

PERIODIC = "periodic-torus"
BOX = "dirichlet-box"
DOMAIN_KINDS = (PERIODIC, BOX)


class GridMismatchError(ValueError):
    """Raised when fields living on different grids are combined."""


@dataclass(frozen=True)
class GridSpec:
    domain_kind: str
    lx: float
    ly: float
    nx: int
    ny: int

    def __post_init__(self) -> None:
        if self.domain_kind not in DOMAIN_KINDS:
            raise ValueError(f"domain_kind must be one of {DOMAIN_KINDS}, got {self.domain_kind!r}")
        if int(self.nx) != self.nx or int(self.ny) != self.ny:
            raise ValueError("nx, ny must be integers")
        if self.nx < 8 or self.ny < 8:
            raise ValueError(f"nx, ny must be >= 8, got ({self.nx}, {self.ny})")
        if not (self.lx > 0 and self.ly > 0):
            raise ValueError("lx, ly must be > 0")
        object.__setattr__(self, "nx", int(self.nx))
        object.__setattr__(self, "ny", int(self.ny))
        object.__setattr__(self, "lx", float(self.lx))
        object.__setattr__(self, "ly", float(self.ly))

    @property
    def periodic(self) -> bool:
        return self.domain_kind == PERIODIC

    @property
    def hx(self) -> float:
        return self.lx / self.nx

    @property
    def hy(self) -> float:
        return self.ly / self.ny

    @property
    def h(self) -> float:
        return max(self.hx, self.hy)

    @property
    def shape(self) -> tuple[int, int]:
        if self.periodic:
            return (self.ny, self.nx)
        return (self.ny + 1, self.nx + 1)

    @property
    def n_nodes(self) -> int:
        return self.shape[0] * self.shape[1]

    @property
    def area(self) -> float:
        return self.lx * self.ly

    def axes(self) -> tuple[np.ndarray, np.ndarray]:
        ny, nx = self.shape
        return np.arange(nx) * self.hx, np.arange(ny) * self.hy

    def coords(self) -> tuple[np.ndarray, np.ndarray]:
        """Node coordinates ``(X, Y)``, each of shape ``(Ny, Nx)``."""
        x, y = self.axes()
        return np.meshgrid(x, y, indexing="xy")

    def weights(self) -> np.ndarray:
        """Quadrature weights per node (read-only)."""
        return _weights(self)

    def interior_weights(self) -> np.ndarray:
        """Weights restricted to nodes that carry an update (all nodes on the torus)."""
        return _interior_weights(self)

    def interior_mask(self) -> np.ndarray:
        return _interior_mask(self)

    def refined(self, factor: int = 2) -> "GridSpec":
        return GridSpec(self.domain_kind, self.lx, self.ly, self.nx * factor, self.ny * factor)


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@lru_cache(maxsize=64)
def _weights(grid: GridSpec) -> np.ndarray:
    ny, nx = grid.shape
    wx = np.full(nx, grid.hx)
    wy = np.full(ny, grid.hy)
    if not grid.periodic:
        wx[0] = wx[-1] = 0.5 * grid.hx
        wy[0] = wy[-1] = 0.5 * grid.hy
    return _readonly(np.outer(wy, wx))


@lru_cache(maxsize=64)
def _interior_mask(grid: GridSpec) -> np.ndarray:
    m = np.ones(grid.shape, dtype=bool)
    if not grid.periodic:
        m[0, :] = m[-1, :] = False
        m[:, 0] = m[:, -1] = False
    return _readonly(m)


@lru_cache(maxsize=64)
def _interior_weights(grid: GridSpec) -> np.ndarray:
    return _readonly(np.where(_interior_mask(grid), grid.hx * grid.hy, 0.0))


def _as_node_array(grid: GridSpec, a, name: str) -> np.ndarray:
    arr = np.array(a, dtype=np.float64, copy=True)
    if arr.ndim == 0:
        arr = np.full(grid.shape, float(arr))
    if arr.shape != grid.shape:
        raise GridMismatchError(f"{name} has shape {arr.shape}, grid expects {grid.shape}")
    return _readonly(arr)


@dataclass(frozen=True)
class ScalarField:
    grid: GridSpec
    values: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", _as_node_array(self.grid, self.values, "values"))


@dataclass(frozen=True)
class VectorField2:
    grid: GridSpec
    u: np.ndarray = field(repr=False)
    w: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "u", _as_node_array(self.grid, self.u, "u"))
        object.__setattr__(self, "w", _as_node_array(self.grid, self.w, "w"))

    @classmethod
    def zeros(cls, grid: GridSpec) -> "VectorField2":
        return cls(grid, 0.0, 0.0)

    def stacked(self) -> np.ndarray:
        return np.stack([self.u, self.w])


@dataclass(frozen=True)
class DirectorField:
    grid: GridSpec
    d1: np.ndarray = field(repr=False)
    d2: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "d1", _as_node_array(self.grid, self.d1, "d1"))
        object.__setattr__(self, "d2", _as_node_array(self.grid, self.d2, "d2"))

    @classmethod
    def constant(cls, grid: GridSpec, d1: float = 0.0, d2: float = 1.0) -> "DirectorField":
        return cls(grid, d1, d2)

    @classmethod
    def from_angle(cls, grid: GridSpec, phi) -> "DirectorField":
        """``d = (sin phi, cos phi)``; ``phi = 0`` is ``e2``."""
        phi = np.asarray(phi, dtype=np.float64)
        return cls(grid, np.sin(phi), np.cos(phi))

    def stacked(self) -> np.ndarray:
        return np.stack([self.d1, self.d2])

    def unit_defect(self) -> float:
        return float(np.max(np.abs(self.d1**2 + self.d2**2 - 1.0)))

    def assert_unit(self, unit_tol: float = 1e-12) -> None:
        err = self.unit_defect()
        if err > unit_tol:
            raise ValueError(f"director is not unit length: max||d|^2-1| = {err:.3e} > {unit_tol:.1e}")


def check_same_grid(*fields) -> GridSpec:
    grids = {f.grid for f in fields}
    if len(grids) != 1:
        raise GridMismatchError(f"fields live on different grids: {sorted(map(str, grids))}")
    return grids.pop()


# ---------------------------------------------------------------------------
# array-level stencils; every public operator below is a thin wrapper

def d_dx(a: np.ndarray, grid: GridSpec) -> np.ndarray:
    return _diff(a, grid.hx, -1, grid.periodic)


def d_dy(a: np.ndarray, grid: GridSpec) -> np.ndarray:
    return _diff(a, grid.hy, -2, grid.periodic)


def _diff(a: np.ndarray, h: float, axis: int, periodic: bool) -> np.ndarray:
    if periodic:
        return (np.roll(a, -1, axis) - np.roll(a, 1, axis)) / (2.0 * h)
    a = np.moveaxis(a, axis, -1)
    out = np.empty_like(a)
    out[..., 1:-1] = (a[..., 2:] - a[..., :-2]) / (2.0 * h)
    out[..., 0] = (-3.0 * a[..., 0] + 4.0 * a[..., 1] - a[..., 2]) / (2.0 * h)
    out[..., -1] = (3.0 * a[..., -1] - 4.0 * a[..., -2] + a[..., -3]) / (2.0 * h)
    return np.moveaxis(out, -1, axis)


def _second(a: np.ndarray, h: float, axis: int, periodic: bool) -> np.ndarray:
    if periodic:
        return (np.roll(a, -1, axis) - 2.0 * a + np.roll(a, 1, axis)) / (h * h)
    a = np.moveaxis(a, axis, -1)
    out = np.empty_like(a)
    out[..., 1:-1] = (a[..., 2:] - 2.0 * a[..., 1:-1] + a[..., :-2]) / (h * h)
    # one-sided, exact on cubics
    out[..., 0] = (2.0 * a[..., 0] - 5.0 * a[..., 1] + 4.0 * a[..., 2] - a[..., 3]) / (h * h)
    out[..., -1] = (2.0 * a[..., -1] - 5.0 * a[..., -2] + 4.0 * a[..., -3] - a[..., -4]) / (h * h)
    return np.moveaxis(out, -1, axis)


def lap(a: np.ndarray, grid: GridSpec) -> np.ndarray:
    return _second(a, grid.hx, -1, grid.periodic) + _second(a, grid.hy, -2, grid.periodic)


def edge_diffs(a: np.ndarray, grid: GridSpec) -> tuple[np.ndarray, np.ndarray]:
    """Forward differences on x-edges and y-edges (wrapping on the torus)."""
    if grid.periodic:
        ex = (np.roll(a, -1, -1) - a) / grid.hx
        ey = (np.roll(a, -1, -2) - a) / grid.hy
    else:
        ex = np.diff(a, axis=-1) / grid.hx
        ey = np.diff(a, axis=-2) / grid.hy
    return ex, ey


def _edge_to_node(e2: np.ndarray, axis: int, periodic: bool) -> np.ndarray:
    """Average squared edge values onto nodes; walls keep their single edge."""
    if periodic:
        return 0.5 * (e2 + np.roll(e2, 1, axis))
    e2 = np.moveaxis(e2, axis, -1)
    shape = e2.shape[:-1] + (e2.shape[-1] + 1,)
    out = np.empty(shape)
    out[..., 1:-1] = 0.5 * (e2[..., 1:] + e2[..., :-1])
    out[..., 0] = e2[..., 0]
    out[..., -1] = e2[..., -1]
    return np.moveaxis(out, -1, axis)


def grad_sq_edge(a: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Nodewise edge-averaged ``|grad a|^2``; leading axes are summed as components."""
    ex, ey = edge_diffs(a, grid)
    s = _edge_to_node(ex * ex, -1, grid.periodic) + _edge_to_node(ey * ey, -2, grid.periodic)
    if s.ndim > 2:
        s = s.sum(axis=tuple(range(s.ndim - 2)))
    return s


def hessian_sq(a: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Nodewise ``|grad^2 a|^2`` with the forward mixed difference.

    On the torus ``sum(hessian_sq) == sum(lap(a)**2)`` exactly, the discrete
    form of the Fourier identity ``||grad^2 a|| = ||lap a||``.
    """
    axx = _second(a, grid.hx, -1, grid.periodic)
    ayy = _second(a, grid.hy, -2, grid.periodic)
    if grid.periodic:
        axy = (np.roll(np.roll(a, -1, -1), -1, -2) - np.roll(a, -1, -1) - np.roll(a, -1, -2) + a) / (grid.hx * grid.hy)
    else:
        axy = d_dx(d_dy(a, grid), grid)
    return axx * axx + 2.0 * axy * axy + ayy * ayy


def integrate(a: np.ndarray, grid: GridSpec, interior: bool = False) -> float:
    w = grid.interior_weights() if interior else grid.weights()
    return float(np.sum(w * a))


# ---------------------------------------------------------------------------
# public field operators

def gradient(f: ScalarField) -> VectorField2:
    g = f.grid
    return VectorField2(g, d_dx(f.values, g), d_dy(f.values, g))


def divergence(v: VectorField2) -> ScalarField:
    g = v.grid
    return ScalarField(g, d_dx(v.u, g) + d_dy(v.w, g))


def laplacian(f: ScalarField) -> ScalarField:
    return ScalarField(f.grid, lap(f.values, f.grid))


def director_gradients(d: DirectorField) -> np.ndarray:
    """``G[j, i] = d_i d_j`` as an array of shape ``(2, 2, Ny, Nx)``."""
    g = d.grid
    return np.array([[d_dx(d.d1, g), d_dy(d.d1, g)], [d_dx(d.d2, g), d_dy(d.d2, g)]])


def ericksen_stress(d: DirectorField) -> np.ndarray:
    """``grad d (.) grad d - |grad d|^2 I / 2`` per node, shape ``(2, 2, Ny, Nx)``.

    ``(grad d (.) grad d)_{ij} = sum_k d_i d_k d_j d_k``.  The trace vanishes
    identically because the diagonal is assembled as ``+-(a - b)/2``.
    """
    G = director_gradients(d)
    gx = G[:, 0]
    gy = G[:, 1]
    sxx = np.sum(gx * gx, axis=0)
    syy = np.sum(gy * gy, axis=0)
    sxy = np.sum(gx * gy, axis=0)
    half = 0.5 * (sxx - syy)
    return np.array([[half, sxy], [sxy, -half]])


def stress_divergence(d: DirectorField) -> VectorField2:
    """``div(grad d (.) grad d - |grad d|^2 I / 2)`` by differencing the stress."""
    s = ericksen_stress(d)
    g = d.grid
    return VectorField2(g, d_dx(s[0, 0], g) + d_dy(s[0, 1], g), d_dx(s[1, 0], g) + d_dy(s[1, 1], g))


def _is_vector(f) -> bool:
    return isinstance(f, (VectorField2, DirectorField))


def _components(f) -> list[np.ndarray]:
    if isinstance(f, ScalarField):
        return [f.values]
    if isinstance(f, VectorField2):
        return [f.u, f.w]
    if isinstance(f, DirectorField):
        return [f.d1, f.d2]
    raise TypeError(f"unsupported field type {type(f).__name__}")


def pointwise_abs(f) -> np.ndarray:
    comps = _components(f)
    return np.sqrt(sum(c * c for c in comps))


def pointwise_grad_abs(f) -> np.ndarray:
    """``|grad f|`` per node.  For vector fields the entrywise l1 sum of partials.

    The l1 choice dominates ``|div v|`` pointwise, which is what the two-sided
    density bound needs from the ``W^{1,inf}`` norm.
    """
    g = f.grid
    comps = _components(f)
    if len(comps) == 1:
        c = comps[0]
        return np.hypot(d_dx(c, g), d_dy(c, g))
    return sum(np.abs(d_dx(c, g)) + np.abs(d_dy(c, g)) for c in comps)


def norms(f) -> dict[str, float]:
    """Discrete ``l2``, ``l4``, ``h1_semi``, ``linf`` and ``w1inf`` norms."""
    g = f.grid
    w = g.weights()
    comps = _components(f)
    sq = sum(c * c for c in comps)
    grad_sq = sum(d_dx(c, g) ** 2 + d_dy(c, g) ** 2 for c in comps)
    absf = np.sqrt(sq)
    return {
        "l2": float(np.sqrt(np.sum(w * sq))),
        "l4": float(np.sum(w * sq * sq) ** 0.25),
        "h1_semi": float(np.sqrt(np.sum(w * grad_sq))),
        "linf": float(np.max(absf)),
        "w1inf": float(np.max(absf) + np.max(pointwise_grad_abs(f))),
    }


def inner(f, g) -> float:
    grid = check_same_grid(f, g)
    return float(np.sum(grid.weights() * sum(a * b for a, b in zip(_components(f), _components(g)))))
