"""Magnetic nonlocal primitives on a lattice.

For nodes x != y the modulated difference is

    D(x, y) = u(x) - exp(i (x - y) . A((x + y)/2)) u(y),

and the seminorm, the (s,p)-gradient density, the operator and the pairing
are all built from it with the kernel ``|x - y|^-(N + s p)``.  The seminorm
is often written with the conjugate phase on u(x); that form differs from D
by a unit factor, so both conventions give the same moduli.

Pair sums run over row blocks whose size depends only on the node count.
Blocks may be evaluated by a thread pool, but every reduction is done in a
fixed order afterwards, so results do not depend on the worker count.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import integrate
from scipy.interpolate import RegularGridInterpolator

from .lattice import (ComplexField, Grid, LatticeError, MagneticPotential, ProblemSpec,
                      shift_field)

_FULL_CACHE_LIMIT = 1 << 21     # cache all M*M pair weights below this size
_BLOCK_TARGET = 1 << 18         # pair entries per row block otherwise


class KernelError(ValueError):
    """Invalid kernel input (mismatched grids, support escaping the box)."""


def worker_count() -> int:
    env = os.environ.get("FRACMAG_WORKERS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise KernelError(f"FRACMAG_WORKERS must be an integer, got {env!r}") from None
    return os.cpu_count() or 1


def sphere_area(N: int) -> float:
    """omega_{N-1}: surface measure of the unit sphere in R^N."""
    return 2.0 * math.pi ** (N / 2) / math.gamma(N / 2)


# ---------------------------------------------------------------------------
# kernel table


@dataclass(frozen=True, eq=False)
class KernelTable:
    """|d|^-(N+sp) over index displacements in [-(n-1), n-1]^N.

    ``values`` has shape (2n-1,)*N with the zero displacement at the centre;
    that entry is set to 0 (diagonal exclusion).  ``tail_coefficient`` is
    omega_{N-1}/(sp), the prefactor of the radial exterior estimate.
    """

    N: int
    n: int
    L: float
    s: float
    p: float
    values: np.ndarray

    @property
    def h(self) -> float:
        return 2.0 * self.L / self.n

    @property
    def exponent(self) -> float:
        return self.N + self.s * self.p

    @property
    def tail_coefficient(self) -> float:
        return sphere_area(self.N) / (self.s * self.p)

    def at(self, d_index) -> float:
        """Kernel at an integer displacement (in cells)."""
        d = np.broadcast_to(np.asarray(d_index, dtype=np.int64), (self.N,))
        if np.any(np.abs(d) > self.n - 1):
            raise KernelError(f"displacement {d.tolist()} outside table range")
        return float(self.values[tuple(d + self.n - 1)])

    def lookup(self, d) -> float:
        """Kernel at a displacement given in length units (multiple of h)."""
        d = np.broadcast_to(np.asarray(d, dtype=float), (self.N,))
        k = np.rint(d / self.h)
        if not np.allclose(k * self.h, d, atol=1e-9 * self.h, rtol=0):
            raise KernelError(f"displacement {d.tolist()} is not a lattice vector")
        return self.at(k.astype(np.int64))

    def nonzero_values(self) -> np.ndarray:
        """Values at all nonzero displacements in lexicographic order."""
        flat = self.values.ravel()
        centre = flat.size // 2
        return np.concatenate([flat[:centre], flat[centre + 1:]])

    def cache_name(self) -> str:
        return f"kernel_N{self.N}_n{self.n}_L{self.L!r}_s{self.s!r}_p{self.p!r}.f8"

    def save(self, directory: str | Path) -> Path:
        path = Path(directory) / self.cache_name()
        path.parent.mkdir(parents=True, exist_ok=True)
        self.nonzero_values().astype("<f8").tofile(path)
        return path

    @classmethod
    def load(cls, path: str | Path, N: int, n: int, L: float, s: float, p: float) -> "KernelTable":
        raw = np.fromfile(path, dtype="<f8")
        size = (2 * n - 1) ** N
        if raw.size != size - 1:
            raise KernelError(f"{path}: expected {size - 1} entries, found {raw.size}")
        centre = (size - 1) // 2
        flat = np.concatenate([raw[:centre], [0.0], raw[centre:]]).astype(float)
        return cls(N, n, float(L), float(s), float(p), flat.reshape((2 * n - 1,) * N))


def _compute_table(N: int, n: int, L: float, s: float, p: float) -> np.ndarray:
    h = 2.0 * L / n
    ax = np.arange(-(n - 1), n) * h
    mesh = np.meshgrid(*[ax] * N, indexing="ij")
    dist = np.sqrt(sum(m**2 for m in mesh))
    out = np.zeros_like(dist)
    nz = dist > 0
    out[nz] = dist[nz] ** (-(N + s * p))
    return out


def kernel_table(grid: Grid, s: float, p: float, cache_dir: str | Path | None = None) -> KernelTable:
    """Kernel over all nonzero displacements of the doubled index range.

    With ``cache_dir`` the table is read from (or written to) a raw
    little-endian float64 file keyed by (N, n, L, s, p).
    """
    if not s * p < grid.N:
        raise KernelError(f"need s*p < N, got s*p = {s * p} >= N = {grid.N}")
    N, n, L = grid.N, grid.n, grid.L
    if cache_dir is not None:
        probe = KernelTable(N, n, L, float(s), float(p), np.zeros((1,) * N))
        path = Path(cache_dir) / probe.cache_name()
        if path.exists():
            return KernelTable.load(path, N, n, L, s, p)
    table = KernelTable(N, n, L, float(s), float(p), _compute_table(N, n, L, s, p))
    if cache_dir is not None:
        table.save(cache_dir)
    return table


# ---------------------------------------------------------------------------
# exterior corrections


def _cube_exterior_constant(N: int, sp: float) -> float:
    """Integral of |x|^-(N+sp) over the complement of the unit cube [-1, 1]^N."""
    if N == 1:
        return 2.0 / sp
    if N == 2:
        val, _ = integrate.quad(lambda t: math.cos(t) ** sp, 0.0, math.pi / 4,
                                epsabs=1e-14, epsrel=1e-13)
        return 8.0 * val / sp
    # N = 3: six faces, each parametrised over the square [-1,1]^2 by the
    # direction (1, a, b)/|(1, a, b)|; the solid angle element is
    # (1 + a^2 + b^2)^(-3/2) da db and |theta|_inf = (1 + a^2 + b^2)^(-1/2).
    val, _ = integrate.dblquad(lambda b, a: (1 + a * a + b * b) ** (-1.5 - sp / 2),
                               -1.0, 1.0, -1.0, 1.0, epsabs=1e-13, epsrel=1e-12)
    return 6.0 * val / sp


def radial_tail(grid: Grid, s: float, p: float) -> np.ndarray:
    """omega_{N-1}/(sp) R_out(x)^-sp with R_out = distance to the boundary + h/2."""
    R = grid.boundary_distance() + 0.5 * grid.h
    return sphere_area(grid.N) / (s * p) * R ** (-s * p)


def lattice_tail(grid: Grid, table: KernelTable, in_box_sums: np.ndarray) -> np.ndarray:
    """Exact kernel mass of the lattice nodes outside the box, per node.

    The full lattice sum is taken directly over |k|_inf <= R (R >= n) and the far
    field beyond is the cube-exterior integral (midpoint rule is exact to
    high order there).  Subtracting the in-box row sums leaves the exterior.
    """
    N, n, h = grid.N, grid.n, grid.h
    sp = table.s * table.p
    R = max(n, min(4 * n, int((4e6 ** (1.0 / N) - 1) // 2)))
    ax = np.arange(-R, R + 1, dtype=float)
    mesh = np.meshgrid(*[ax] * N, indexing="ij")
    r = np.sqrt(sum(m**2 for m in mesh)).ravel()
    r = r[r > 0]
    zeta = np.sum(np.sort(r ** (-(N + sp)))) + _cube_exterior_constant(N, sp) * (R + 0.5) ** (-sp)
    total = zeta * h ** (-sp)
    return np.maximum(total - in_box_sums, 0.0)


# ---------------------------------------------------------------------------
# pair context


@dataclass
class _Block:
    rows: slice
    W: np.ndarray
    P: np.ndarray | None


class _PairContext:
    """Pair weights W = K h^N and phases for one problem, built lazily."""

    def __init__(self, spec: ProblemSpec):
        grid = spec.grid
        self.grid = grid
        self.p = spec.p
        self.table = kernel_table(grid, spec.s, spec.p)
        self.A = spec.A
        M = grid.M
        self.full = M * M <= _FULL_CACHE_LIMIT
        step = M if self.full else max(1, _BLOCK_TARGET // M)
        self.slices = [slice(a, min(M, a + step)) for a in range(0, M, step)]
        self._cached = [self._build(sl) for sl in self.slices] if self.full else None
        self.tail = self._tail(spec)

    def _build(self, rows: slice) -> _Block:
        g = self.grid
        idx = g.indices
        diff = idx[rows, None, :] - idx[None, :, :] + (g.n - 1)
        flat = np.ravel_multi_index(tuple(np.moveaxis(diff, -1, 0)), self.table.values.shape)
        W = self.table.values.ravel()[flat] * g.cell_volume
        P = None
        if not self.A.is_zero:
            X = g.coords[rows, None, :]
            Y = g.coords[None, :, :]
            ax = self.A((X + Y) * 0.5)
            theta = np.sum((X - Y) * ax, axis=-1)
            P = np.exp(1j * theta)
        return _Block(rows, W, P)

    def block(self, k: int) -> _Block:
        if self._cached is not None:
            return self._cached[k]
        return self._build(self.slices[k])

    def _tail(self, spec: ProblemSpec) -> np.ndarray | None:
        if spec.tail == "off":
            return None
        if spec.tail == "radial":
            return radial_tail(self.grid, spec.s, spec.p)
        sums = np.concatenate(
            self.map(lambda b: np.sum(b.W, axis=1)))
        return lattice_tail(self.grid, self.table, sums)

    def map(self, fn):
        """Apply ``fn`` to every block; results in block order."""
        nb = len(self.slices)
        workers = min(worker_count(), nb)
        if workers <= 1:
            return [fn(self.block(k)) for k in range(nb)]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(lambda k: fn(self.block(k)), range(nb)))


def _context(spec: ProblemSpec) -> _PairContext:
    ctx = spec._cache.get("pairs")
    if ctx is None:
        ctx = _PairContext(spec)
        spec._cache["pairs"] = ctx
    return ctx


def _nonmagnetic(spec: ProblemSpec) -> ProblemSpec:
    if spec.A.is_zero:
        return spec
    other = spec._cache.get("nonmagnetic")
    if other is None:
        other = spec.replace(A=MagneticPotential.zero(spec.N))
        spec._cache["nonmagnetic"] = other
    return other


def _check(u: ComplexField, spec: ProblemSpec) -> np.ndarray:
    if u.grid != spec.grid:
        raise KernelError(f"field grid {u.grid.to_dict()} does not match problem grid {spec.grid.to_dict()}")
    return u.values


def _diff(b: _Block, u: np.ndarray) -> np.ndarray:
    if b.P is None:
        return u[b.rows, None] - u[None, :]
    return u[b.rows, None] - b.P * u[None, :]


def _pow_abs(D: np.ndarray, p: float) -> np.ndarray:
    if p == 2.0:
        return D.real**2 + D.imag**2
    return np.abs(D) ** p


def _phi(D: np.ndarray, p: float) -> np.ndarray:
    """|D|^(p-2) D with the value 0 at D = 0."""
    if p == 2.0:
        return D
    a = np.abs(D)
    out = np.zeros_like(D)
    nz = a > 0
    out[nz] = a[nz] ** (p - 2.0) * D[nz]
    return out


def _phi_field(u: np.ndarray, t: float) -> np.ndarray:
    """|u|^t u with the value 0 at u = 0."""
    a = np.abs(u)
    out = np.zeros_like(u)
    nz = a > 0
    out[nz] = a[nz] ** t * u[nz]
    return out


def pow_abs_increment(a: np.ndarray, d: np.ndarray, p: float) -> np.ndarray:
    """|a + d|^p - |a|^p without cancellation when d is small against a.

    The squared-modulus change Re(d conj(2a + d)) is exact up to rounding
    of d, and x^r - y^r is formed as y^r expm1(r log1p((x - y) / y)).
    """
    delta = np.real(d * np.conj(2.0 * a + d))
    if p == 2.0:
        return delta
    y = np.real(a) ** 2 + np.imag(a) ** 2
    r = 0.5 * p
    out = np.abs(d) ** p
    nz = y > 0
    with np.errstate(divide="ignore"):
        out[nz] = y[nz] ** r * np.expm1(r * np.log1p(delta[nz] / y[nz]))
    return out


# ---------------------------------------------------------------------------
# public operations


def sp_gradient_density(u: ComplexField, spec: ProblemSpec) -> np.ndarray:
    """Per-node |D^s_A u(x)|^p, including the exterior correction when enabled."""
    vals = _check(u, spec)
    ctx = _context(spec)
    p = spec.p
    dens = np.concatenate(ctx.map(lambda b: np.sum(_pow_abs(_diff(b, vals), p) * b.W, axis=1)))
    if ctx.tail is not None:
        dens = dens + 2.0 * ctx.tail * np.abs(vals) ** p
    return dens


def seminorm(u: ComplexField, spec: ProblemSpec) -> float:
    """[u]_{A,s,p}."""
    dens = sp_gradient_density(u, spec)
    return float(np.sum(dens) * spec.grid.cell_volume) ** (1.0 / spec.p)


def seminorm_p_increment(u: ComplexField, v: ComplexField, spec: ProblemSpec) -> float:
    """[v]^p - [u]^p summed from pair increments, accurate when v is close to u."""
    uv = _check(u, spec)
    dv = _check(v, spec) - uv
    ctx = _context(spec)
    p = spec.p
    rows = np.concatenate(ctx.map(
        lambda b: np.sum(pow_abs_increment(_diff(b, uv), _diff(b, dv), p) * b.W, axis=1)))
    if ctx.tail is not None:
        rows = rows + 2.0 * ctx.tail * pow_abs_increment(uv, dv, p)
    return float(np.sum(rows) * spec.grid.cell_volume)


def apply_operator(u: ComplexField, spec: ProblemSpec) -> ComplexField:
    """(-Delta)^s_{p,A} u at every node (exterior correction included when enabled)."""
    vals = _check(u, spec)
    ctx = _context(spec)
    p = spec.p
    out = np.concatenate(ctx.map(lambda b: np.sum(_phi(_diff(b, vals), p) * b.W, axis=1)))
    if ctx.tail is not None:
        out = out + ctx.tail * _phi_field(vals, p - 2.0)
    return ComplexField(spec.grid, out)


def pairing(u: ComplexField, v: ComplexField, spec: ProblemSpec) -> float:
    """Re sum_{x != y} B^A_u(v)(x, y) K(x - y) h^{2N}, computed pair by pair."""
    uv = _check(u, spec)
    vv = _check(v, spec)
    ctx = _context(spec)
    p = spec.p

    def rows(b):
        return np.sum(np.real(_phi(_diff(b, uv), p) * np.conj(_diff(b, vv))) * b.W, axis=1)

    total = np.concatenate(ctx.map(rows))
    if ctx.tail is not None:
        total = total + 2.0 * ctx.tail * np.real(_phi_field(uv, p - 2.0) * np.conj(vv))
    return float(np.sum(total) * spec.grid.cell_volume)


def diamagnetic_defect(u: ComplexField, spec: ProblemSpec) -> tuple[float, float]:
    """(max pair violation of ||u(x)|-|u(y)|| <= |D(x,y)|, [u]_A^p - [|u|]^p).

    The gap is summed term by term, so each summand is nonnegative up to
    rounding; exterior corrections cancel between the two seminorms.
    """
    vals = _check(u, spec)
    ctx = _context(spec)
    p = spec.p
    mod = np.abs(vals)

    def rows(b):
        D = np.abs(_diff(b, vals))
        d0 = np.abs(mod[b.rows, None] - mod[None, :])
        viol = np.max(d0 - D, axis=1)
        gap = np.sum((D**p - d0**p) * b.W, axis=1)
        return viol, gap

    parts = ctx.map(rows)
    viol = max(float(np.max(v)) for v, _ in parts)
    gap = float(np.sum(np.concatenate([g for _, g in parts])) * spec.grid.cell_volume)
    return viol, gap


def gauge_transform(u: ComplexField, A: MagneticPotential, xi, eta) -> tuple[ComplexField, MagneticPotential]:
    """v(x) = exp(i eta.x) u(x + xi) and A_eta(x) = A(x + xi) + eta."""
    grid = u.grid
    eta = np.broadcast_to(np.asarray(eta, dtype=float), (grid.N,))
    shifted = shift_field(u, xi)
    lost = np.sum(np.abs(u.values) ** 2) - np.sum(np.abs(shifted.values) ** 2)
    if np.count_nonzero(shifted.values) != np.count_nonzero(u.values) or lost > 1e-14 * np.sum(np.abs(u.values) ** 2):
        raise KernelError(f"shift {np.asarray(xi).tolist()} moves the support of u out of the box")
    v = shifted.values * np.exp(1j * (grid.coords @ eta))
    return ComplexField(grid, v), A.translated(xi, eta)


def interpolate_field(u: ComplexField, points: np.ndarray) -> np.ndarray:
    """Multilinear interpolation of u at arbitrary points, zero outside the box.

    A ring of zeros one cell beyond the outer nodes represents the zero
    extension, so values decay linearly to 0 across the boundary cell.
    """
    g = u.grid
    ax = np.concatenate([[g.axis[0] - g.h], g.axis, [g.axis[-1] + g.h]])
    padded = np.pad(u.as_array(), 1)
    re = RegularGridInterpolator((ax,) * g.N, padded.real, bounds_error=False, fill_value=0.0)
    im = RegularGridInterpolator((ax,) * g.N, padded.imag, bounds_error=False, fill_value=0.0)
    pts = np.asarray(points, dtype=float).reshape(-1, g.N)
    return re(pts) + 1j * im(pts)


def rescale(u: ComplexField, sigma: float, target_grid: Grid | None = None, *, s: float, p: float) -> ComplexField:
    """u_sigma(x) = sigma^-((N - ps)/p) u(x / sigma) sampled on ``target_grid``."""
    if not sigma > 0:
        raise KernelError(f"rescaling factor sigma must be positive, got {sigma}")
    grid = target_grid or u.grid
    if grid.N != u.grid.N:
        raise KernelError("target grid dimension differs from field dimension")
    N = grid.N
    if sigma == 1.0 and grid == u.grid:
        return u
    vals = interpolate_field(u, grid.coords / sigma) * sigma ** (-(N - p * s) / p)
    return ComplexField(grid, vals)
