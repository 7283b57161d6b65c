"""Truncated lattices of R^N, complex fields with zero extension, weights.

Nodes are cell centres of a uniform grid on the box [-L, L]^N, ordered
lexicographically (C order) over the axes.  Every quadrature in the package
is the midpoint rule with weight ``h**N``.  Fields are implicitly zero
outside the box.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray


class LatticeError(ValueError):
    """Invalid grid, field or problem parameters."""


@dataclass(frozen=True)
class Grid:
    """Cell-centred grid with ``n`` nodes per axis on ``[-L, L]^N``."""

    N: int
    n: int
    L: float

    def __post_init__(self):
        if self.N not in (1, 2, 3):
            raise LatticeError(f"dimension N must be 1, 2 or 3, got {self.N}")
        if int(self.n) != self.n or self.n < 4:
            raise LatticeError(f"nodes per axis n must be an integer >= 4, got {self.n}")
        if not (self.L > 0 and math.isfinite(self.L)):
            raise LatticeError(f"half width L must be positive, got {self.L}")
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "L", float(self.L))

    @property
    def h(self) -> float:
        return 2.0 * self.L / self.n

    @property
    def cell_volume(self) -> float:
        return self.h**self.N

    @property
    def M(self) -> int:
        return self.n**self.N

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.N

    @cached_property
    def axis(self) -> NDArray[np.float64]:
        return -self.L + (np.arange(self.n) + 0.5) * self.h

    @cached_property
    def indices(self) -> NDArray[np.int64]:
        """(M, N) integer multi-indices of the nodes."""
        mesh = np.meshgrid(*[np.arange(self.n)] * self.N, indexing="ij")
        out = np.stack([m.ravel() for m in mesh], axis=1).astype(np.int64)
        out.flags.writeable = False
        return out

    @cached_property
    def coords(self) -> NDArray[np.float64]:
        """(M, N) node coordinates."""
        out = -self.L + (self.indices + 0.5) * self.h
        out.flags.writeable = False
        return out

    @cached_property
    def radius(self) -> NDArray[np.float64]:
        out = np.sqrt(np.sum(self.coords**2, axis=1))
        out.flags.writeable = False
        return out

    def boundary_distance(self) -> NDArray[np.float64]:
        """Distance from each node to the boundary of the box."""
        return np.min(self.L - np.abs(self.coords), axis=1)

    def to_dict(self) -> dict:
        return {"N": self.N, "n": self.n, "L": self.L, "h": self.h, "M": self.M}


def build_grid(N: int, n: int, L: float) -> Grid:
    return Grid(N, n, L)


@dataclass(frozen=True, eq=False)
class ComplexField:
    """Complex value per node of ``grid``; zero outside the box."""

    grid: Grid
    values: NDArray[np.complex128]

    def __post_init__(self):
        vals = np.array(self.values, dtype=np.complex128).reshape(-1)
        if vals.size != self.grid.M:
            raise LatticeError(f"field has {vals.size} values but grid has {self.grid.M} nodes")
        bad = ~np.isfinite(vals)
        if bad.any():
            k = int(np.flatnonzero(bad)[0])
            raise LatticeError(
                f"non-finite field value at node {k} x={self.grid.coords[k].tolist()}")
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    @classmethod
    def zeros(cls, grid: Grid) -> "ComplexField":
        return cls(grid, np.zeros(grid.M, dtype=np.complex128))

    def with_values(self, values: ArrayLike) -> "ComplexField":
        return ComplexField(self.grid, values)

    def as_array(self) -> NDArray[np.complex128]:
        """Values reshaped to ``grid.shape``."""
        return self.values.reshape(self.grid.shape)

    def modulus(self) -> "ComplexField":
        return ComplexField(self.grid, np.abs(self.values))

    def conj(self) -> "ComplexField":
        return ComplexField(self.grid, np.conj(self.values))

    def is_zero(self) -> bool:
        return not np.any(self.values)

    def _other(self, other):
        if isinstance(other, ComplexField):
            if other.grid != self.grid:
                raise LatticeError("fields live on different grids")
            return other.values
        return other

    def __add__(self, other):
        return ComplexField(self.grid, self.values + self._other(other))

    def __sub__(self, other):
        return ComplexField(self.grid, self.values - self._other(other))

    def __mul__(self, t):
        return ComplexField(self.grid, self.values * self._other(t))

    __rmul__ = __mul__
    __radd__ = __add__

    def __truediv__(self, t):
        return ComplexField(self.grid, self.values / t)

    def __neg__(self):
        return ComplexField(self.grid, -self.values)


def sample_field(expression: Callable[[NDArray], ArrayLike], grid: Grid) -> ComplexField:
    """Evaluate ``expression`` at the cell centres.

    ``expression`` receives the (M, N) coordinate array and returns M values.
    """
    vals = np.asarray(expression(grid.coords), dtype=np.complex128)
    vals = np.broadcast_to(vals, (grid.M,)) if vals.ndim == 0 else vals.reshape(-1)
    return ComplexField(grid, vals)


def weighted_lp_norm(u: ComplexField, w: ArrayLike | float = 1.0, r: float = 2.0) -> float:
    r"""(sum_k w(x_k) |u(x_k)|^r h^N)^(1/r)."""
    if not r >= 1:
        raise LatticeError(f"Lebesgue exponent must be >= 1, got {r}")
    w = np.asarray(w, dtype=float)
    total = np.sum(w * np.abs(u.values) ** r) * u.grid.cell_volume
    return float(total ** (1.0 / r))


def _lattice_steps(grid: Grid, xi: ArrayLike) -> NDArray[np.int64]:
    xi = np.broadcast_to(np.asarray(xi, dtype=float), (grid.N,))
    steps = np.rint(xi / grid.h)
    if not np.allclose(steps * grid.h, xi, rtol=0, atol=1e-9 * max(1.0, grid.h)):
        raise LatticeError(f"shift {xi.tolist()} is not a multiple of the spacing h={grid.h}")
    return steps.astype(np.int64)


def shift_field(u: ComplexField, xi: ArrayLike) -> ComplexField:
    """v(x) = u(x + xi) for a lattice vector xi, zero where x + xi leaves the box."""
    k = _lattice_steps(u.grid, xi)
    n = u.grid.n
    src = u.as_array()
    out = np.zeros_like(src)
    dst_sl, src_sl = [], []
    for kk in k:
        if abs(kk) >= n:
            return ComplexField.zeros(u.grid)
        if kk >= 0:
            dst_sl.append(slice(0, n - kk))
            src_sl.append(slice(kk, n))
        else:
            dst_sl.append(slice(-kk, n))
            src_sl.append(slice(0, n + kk))
    out[tuple(dst_sl)] = src[tuple(src_sl)]
    return ComplexField(u.grid, out.ravel())


# ---------------------------------------------------------------------------
# magnetic potentials


@dataclass(frozen=True, eq=False)
class MagneticPotential:
    """Vector potential A: R^N -> R^N.

    Built-in families are affine, ``A(x) = B x + c``; ``zero``, ``constant``
    and ``linear`` are the special cases with ``B = 0, c = 0``, ``B = 0`` and
    ``c = 0``.  A ``tabulated`` potential interpolates multilinearly from
    samples on a regular grid (linear extrapolation outside it) and carries
    an argument shift and an additive offset so that gauge transforms stay
    inside the family.
    """

    family: str
    N: int
    matrix: NDArray[np.float64] | None = None
    offset: NDArray[np.float64] | None = None
    table_axes: tuple | None = None
    table_values: NDArray[np.float64] | None = None
    shift: NDArray[np.float64] | None = None

    def __post_init__(self):
        if self.family not in ("zero", "constant", "linear", "affine", "tabulated"):
            raise LatticeError(f"unknown potential family {self.family!r}")
        N = self.N
        B = np.zeros((N, N)) if self.matrix is None else np.array(self.matrix, dtype=float).reshape(N, N)
        c = np.zeros(N) if self.offset is None else np.array(self.offset, dtype=float).reshape(N)
        sh = np.zeros(N) if self.shift is None else np.array(self.shift, dtype=float).reshape(N)
        if not (np.all(np.isfinite(B)) and np.all(np.isfinite(c))):
            raise LatticeError("potential coefficients must be finite")
        for a in (B, c, sh):
            a.flags.writeable = False
        object.__setattr__(self, "matrix", B)
        object.__setattr__(self, "offset", c)
        object.__setattr__(self, "shift", sh)
        if self.family == "tabulated":
            if self.table_axes is None or self.table_values is None:
                raise LatticeError("tabulated potential needs axes and values")
            from scipy.interpolate import RegularGridInterpolator

            interp = RegularGridInterpolator(
                tuple(np.asarray(a, float) for a in self.table_axes),
                np.asarray(self.table_values, float), method="linear",
                bounds_error=False, fill_value=None)
            object.__setattr__(self, "_interp", interp)

    @classmethod
    def zero(cls, N: int) -> "MagneticPotential":
        return cls("zero", N)

    @classmethod
    def constant(cls, c: ArrayLike) -> "MagneticPotential":
        c = np.atleast_1d(np.asarray(c, float))
        return cls("constant", c.size, offset=c)

    @classmethod
    def linear(cls, B: ArrayLike) -> "MagneticPotential":
        B = np.atleast_2d(np.asarray(B, float))
        return cls("linear", B.shape[0], matrix=B)

    @classmethod
    def symmetric_gauge(cls, b: float) -> "MagneticPotential":
        """A(x) = (b/2)(-x_2, x_1): constant field of strength b in the (x_1, x_2) plane."""
        return cls.linear([[0.0, -0.5 * b], [0.5 * b, 0.0]])

    @classmethod
    def tabulated(cls, axes: Sequence[ArrayLike], values: ArrayLike) -> "MagneticPotential":
        values = np.asarray(values, float)
        return cls("tabulated", values.shape[-1], table_axes=tuple(axes), table_values=values)

    @property
    def is_linear(self) -> bool:
        return self.family != "tabulated" and not np.any(self.offset)

    @property
    def is_zero(self) -> bool:
        return self.family != "tabulated" and not np.any(self.offset) and not np.any(self.matrix)

    def __call__(self, x: ArrayLike) -> NDArray[np.float64]:
        x = np.asarray(x, float)
        pts = x.reshape(-1, self.N)
        if self.family == "tabulated":
            out = self._interp(pts + self.shift) + self.offset
        else:
            out = pts @ self.matrix.T + self.offset
        return out.reshape(x.shape[:-1] + (self.N,)) if x.ndim > 1 else out.reshape(self.N)

    def translated(self, xi: ArrayLike, eta: ArrayLike) -> "MagneticPotential":
        """x -> A(x + xi) + eta."""
        xi = np.broadcast_to(np.asarray(xi, float), (self.N,))
        eta = np.broadcast_to(np.asarray(eta, float), (self.N,))
        if self.family == "tabulated":
            return MagneticPotential("tabulated", self.N, offset=self.offset + eta,
                                     table_axes=self.table_axes, table_values=self.table_values,
                                     shift=self.shift + xi)
        c = self.matrix @ xi + self.offset + eta
        B = self.matrix
        if not np.any(B):
            family = "constant" if np.any(c) else "zero"
        else:
            family = "affine" if np.any(c) else "linear"
        return MagneticPotential(family, self.N, matrix=B, offset=c)

    def to_dict(self) -> dict:
        if self.family == "tabulated":
            return {"family": "tabulated", "N": self.N, "offset": self.offset.tolist(),
                    "shift": self.shift.tolist()}
        return {"family": self.family, "N": self.N, "matrix": self.matrix.tolist(),
                "offset": self.offset.tolist()}


# ---------------------------------------------------------------------------
# problem data

TAIL_MODES = ("off", "radial", "lattice")


def normalize_tail(tail: bool | str) -> str:
    if tail is True:
        return "radial"
    if tail is False or tail is None:
        return "off"
    mode = str(tail).strip().lower()
    if mode in ("true", "on", "yes"):
        return "radial"
    if mode in ("false", "no", "none"):
        return "off"
    if mode not in TAIL_MODES:
        raise LatticeError(f"tail must be one of {TAIL_MODES}, got {tail!r}")
    return mode


def critical_exponent(N: int, s: float, p: float) -> float:
    """p*_s = N p / (N - s p)."""
    return N * p / (N - s * p)


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    """Parameters of the Brezis-Nirenberg type problem on a grid.

    ``H`` and ``K`` are nonnegative weights sampled at the nodes.  ``tail``
    selects the exterior correction of the seminorm: ``"off"``, ``"radial"``
    (closed-form radial estimate) or ``"lattice"`` (exact sum over the lattice
    nodes outside the box).  ``True`` means ``"radial"``.
    """

    grid: Grid
    s: float
    p: float
    q: float | None = None
    lam: float = 0.0
    H: NDArray[np.float64] | None = None
    K: NDArray[np.float64] | None = None
    A: MagneticPotential | None = None
    tail: bool | str = "off"
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        N, s, p = self.grid.N, float(self.s), float(self.p)
        if not 0 < s < 1:
            raise LatticeError(f"fractional order s must lie in (0, 1), got {s}")
        if not p > 1:
            raise LatticeError(f"exponent p must exceed 1, got {p}")
        if not s * p < N:
            raise LatticeError(f"need s*p < N, got s*p = {s}*{p} = {s * p} >= N = {N}")
        pstar = critical_exponent(N, s, p)
        q = p if self.q is None else float(self.q)
        if not 1 < q < pstar:
            raise LatticeError(
                f"subcritical exponent q={q} must lie in (1, p*_s) with critical exponent p*_s={pstar}")
        if not (self.lam >= 0 and math.isfinite(self.lam)):
            raise LatticeError(f"lambda must be finite and >= 0, got {self.lam}")
        for name in ("H", "K"):
            w = getattr(self, name)
            w = np.zeros(self.grid.M) if w is None else np.array(w, dtype=float).reshape(-1)
            if w.size != self.grid.M:
                raise LatticeError(f"weight {name} has {w.size} values, grid has {self.grid.M} nodes")
            if not np.all(np.isfinite(w)):
                raise LatticeError(f"weight {name} must be finite (bounded)")
            if np.any(w < 0):
                k = int(np.flatnonzero(w < 0)[0])
                raise LatticeError(f"weight {name} is negative at node {k}")
            w.flags.writeable = False
            object.__setattr__(self, name, w)
        A = MagneticPotential.zero(N) if self.A is None else self.A
        if A.N != N:
            raise LatticeError(f"potential dimension {A.N} does not match grid dimension {N}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "lam", float(self.lam))
        object.__setattr__(self, "tail", normalize_tail(self.tail))

    @property
    def N(self) -> int:
        return self.grid.N

    @property
    def pstar(self) -> float:
        return critical_exponent(self.grid.N, self.s, self.p)

    @property
    def r(self) -> float:
        """Integrability exponent of H: p*_s / (p*_s - q)."""
        return self.pstar / (self.pstar - self.q)

    def H_norm(self) -> float:
        """Discrete L^r norm of H."""
        return float((np.sum(self.H**self.r) * self.grid.cell_volume) ** (1.0 / self.r))

    def K_norm(self) -> float:
        return float(np.max(self.K)) if self.K.size else 0.0

    def replace(self, **changes) -> "ProblemSpec":
        kw = dict(grid=self.grid, s=self.s, p=self.p, q=self.q, lam=self.lam,
                  H=self.H, K=self.K, A=self.A, tail=self.tail)
        kw.update(changes)
        return ProblemSpec(**kw)

    def to_dict(self) -> dict:
        return {"grid": self.grid.to_dict(), "s": self.s, "p": self.p, "q": self.q,
                "lambda": self.lam, "pstar": self.pstar, "r": self.r, "tail": self.tail,
                "H_norm_r": self.H_norm(), "K_norm_inf": self.K_norm(), "A": self.A.to_dict()}


# ---------------------------------------------------------------------------
# weights


def smooth_bump(r: NDArray) -> NDArray:
    """exp(-1/(1 - r^2)) on r < 1, zero elsewhere (unnormalised)."""
    r = np.asarray(r, float)
    out = np.zeros_like(r)
    inside = r < 1
    out[inside] = np.exp(-1.0 / (1.0 - r[inside] ** 2))
    return out


def weight_field(kind: str, grid: Grid, *, amplitude: float = 1.0, center: Iterable[float] | None = None,
                 radius: float = 1.0, width: float = 1.0, path: str | Path | None = None) -> NDArray[np.float64]:
    """Built-in nonnegative weights: ``constant``, ``gaussian``, ``bump``, ``zero``, ``csv``.

    ``bump`` is a smooth compactly supported bump of the given radius (so the
    positivity set Omega_H is a ball), normalised to peak ``amplitude``.
    """
    c = np.zeros(grid.N) if center is None else np.broadcast_to(np.asarray(list(center), float), (grid.N,))
    dist = np.sqrt(np.sum((grid.coords - c) ** 2, axis=1))
    if kind == "constant":
        w = np.full(grid.M, float(amplitude))
    elif kind == "zero":
        w = np.zeros(grid.M)
    elif kind == "gaussian":
        w = amplitude * np.exp(-((dist / width) ** 2))
    elif kind == "bump":
        w = amplitude * np.e * smooth_bump(dist / radius)
    elif kind == "csv":
        if path is None:
            raise LatticeError("csv weight needs a path")
        w = read_field_csv(path).values.real.copy()
        if w.size != grid.M:
            raise LatticeError(f"tabulated weight {path} has {w.size} nodes, grid has {grid.M}")
    else:
        raise LatticeError(f"unknown weight kind {kind!r}")
    if np.any(w < 0):
        raise LatticeError(f"weight {kind} must be nonnegative")
    return w


# ---------------------------------------------------------------------------
# CSV serialisation


def write_field_csv(u: ComplexField, path: str | Path, meta: dict | None = None) -> Path:
    """One row per node: axis indices, re, im.  First line is a JSON header."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {"grid": {"N": u.grid.N, "n": u.grid.n, "L": u.grid.L}}
    if meta:
        header["meta"] = meta
    cols = [f"i{a}" for a in range(u.grid.N)] + ["re", "im"]
    lines = ["# " + json.dumps(header, sort_keys=True), ",".join(cols)]
    for idx, v in zip(u.grid.indices, u.values):
        lines.append(",".join([*(str(int(i)) for i in idx), repr(float(v.real)), repr(float(v.imag))]))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def read_field_csv(path: str | Path) -> ComplexField:
    text = Path(path).read_text(encoding="utf-8").splitlines()
    if not text or not text[0].startswith("#"):
        raise LatticeError(f"{path}: missing JSON header line")
    header = json.loads(text[0][1:])
    g = header["grid"]
    grid = Grid(int(g["N"]), int(g["n"]), float(g["L"]))
    vals = np.zeros(grid.shape, dtype=np.complex128)
    for lineno, line in enumerate(text[2:], start=3):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != grid.N + 2:
            raise LatticeError(f"{path}:{lineno}: expected {grid.N + 2} columns")
        idx = tuple(int(x) for x in parts[: grid.N])
        vals[idx] = complex(float(parts[-2]), float(parts[-1]))
    return ComplexField(grid, vals.ravel())
