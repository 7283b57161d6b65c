"""Critical-point search: escape scaling, descent, mountain pass, multistart.

Palais-Smale sequences are realised by monotone backtracking gradient
descent.  The mountain-pass level is located by sampling the segment from 0
to an escape point and refining the path maximum with descent constrained to
the Nehari set (each iterate is moved to the energy maximum along its ray,
which keeps the saddle stable under descent).  Negative-energy solutions for
sublinear q come from a multistart over spans of bumps, one start per
symmetry class when the problem has a rotation (or reflection) symmetry.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import brentq

from .energy import (TruncationProfile, energy, energy_gradient, energy_increment, energy_parts,
                     residual, thresholds, truncated_energy, truncated_energy_gradient,
                     truncated_energy_increment)
from .kernel import worker_count
from .lattice import ComplexField, Grid, ProblemSpec, smooth_bump

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    """Numerical failure inside a solver."""


@dataclass
class SolveResult:
    u: ComplexField
    energy: float
    residual: float
    iterations: int
    level: str
    converged: bool
    energy_trace: list[float] = field(default_factory=list)
    residual_trace: list[float] = field(default_factory=list)
    info: dict = field(default_factory=dict)

    def summary(self) -> dict:
        return {"energy": self.energy, "residual": self.residual, "iterations": self.iterations,
                "level": self.level, "converged": self.converged, **self.info}


@dataclass
class DescentSettings:
    max_iters: int = 5000
    residual_tol: float = 1e-6
    step: float | None = None   # None: 1e-2 (1 + [u_init])^(1-p)
    max_halvings: int = 40
    growth: float = 1.25        # step growth after an accepted step
    max_step: float = math.inf
    nehari: bool = False


# ---------------------------------------------------------------------------
# escape time


def find_t_escape(u0: ComplexField, spec: ProblemSpec, max_doublings: int = 200) -> float:
    """Smallest t in {1, 2, 4, ...} with E(t u0) < 0."""
    if u0.is_zero():
        raise SolverError("escape scan needs a nonzero field")
    semi, hq, kp = energy_parts(u0, spec)
    p, q, ps = spec.p, spec.q, spec.pstar
    t = 1.0
    for _ in range(max_doublings):
        e = semi * t**p / p - spec.lam * hq * t**q / q - kp * t**ps / ps
        if e < 0:
            return t
        t *= 2.0
    raise SolverError("escape scan reached its cap: K and lambda*H vanish on the support of u0")


# ---------------------------------------------------------------------------
# Nehari projection


def ray_maximiser(u: ComplexField, spec: ProblemSpec) -> float:
    """t > 0 maximising E(t u) for superlinear q (p <= q < p*); 1 if none exists."""
    semi, hq, kp = energy_parts(u, spec)
    a, b, c = semi, spec.lam * hq, kp
    p, q, ps = spec.p, spec.q, spec.pstar
    if semi == 0 or (b == 0 and c == 0):
        return 1.0

    def f(t):
        return a - b * t ** (q - p) - c * t ** (ps - p)

    if q == p:
        a = a - b
        b = 0.0
        if a <= 0:
            return 1.0
    hi = 1.0
    while f(hi) > 0:
        hi *= 2.0
    lo = hi / 2.0
    while f(lo) < 0 and lo > 1e-300:
        lo /= 2.0
    return brentq(f, lo, hi, xtol=1e-15, rtol=1e-15, maxiter=500)


# ---------------------------------------------------------------------------
# descent


def descend(u_init: ComplexField, spec: ProblemSpec, settings: DescentSettings | None = None,
            profile: TruncationProfile | None = None,
            projector: Callable[[np.ndarray], np.ndarray] | None = None,
            level: str = "descent") -> SolveResult:
    """Backtracking gradient descent on E (or E_inf when ``profile`` is given).

    The energy trace is non-increasing: a trial is accepted only when its
    energy increment, evaluated term by term, is not positive; otherwise the
    step is halved.  Comparing increments rather than totals keeps the test
    meaningful once E'(u) is small enough that E(u) itself cannot resolve it.
    """
    st = settings or DescentSettings()
    grid = spec.grid

    if profile is None:
        def fun(v):
            return energy(v, spec)

        def inc(a, b):
            return energy_increment(a, b, spec)

        def grad(v):
            return energy_gradient(v, spec).values
    else:
        def fun(v):
            return truncated_energy(v, spec, profile)

        def inc(a, b):
            return truncated_energy_increment(a, b, spec, profile)

        def grad(v):
            return truncated_energy_gradient(v, spec, profile).values

    proj = projector or (lambda a: a)

    def prepare(vals):
        v = ComplexField(grid, proj(vals))
        if st.nehari and not v.is_zero():
            v = v * ray_maximiser(v, spec)
        return v

    u = prepare(u_init.values)
    E = fun(u)
    if not np.isfinite(E):
        raise SolverError("non-finite energy at the initial field")
    g = proj(grad(u))
    res = residual(ComplexField(grid, g))
    e_trace, r_trace = [E], [res]
    if st.step is None:
        semi = energy_parts(u, spec)[0] ** (1.0 / spec.p)
        gamma = 1e-2 * (1.0 + semi) ** (1.0 - spec.p)
    else:
        gamma = float(st.step)
    it = 0
    converged = res < st.residual_tol
    while not converged and it < st.max_iters:
        it += 1
        accepted = False
        for _ in range(st.max_halvings):
            trial = prepare(u.values - gamma * g)
            dE = inc(u, trial)
            if not np.isfinite(dE):
                raise SolverError(f"non-finite energy at descent iteration {it}")
            if dE <= 0.0:
                accepted = True
                break
            gamma *= 0.5
        if not accepted:
            log.info("descent stalled at iteration %d (residual %.3e)", it, res)
            break
        u, E = trial, E + dE
        g = proj(grad(u))
        res = residual(ComplexField(grid, g))
        e_trace.append(E)
        r_trace.append(res)
        gamma = min(gamma * st.growth, st.max_step)
        converged = res < st.residual_tol
    # the trace accumulates increments; report the directly evaluated energy
    return SolveResult(u, fun(u), res, it, level, bool(converged), e_trace, r_trace)


# ---------------------------------------------------------------------------
# mountain pass


@dataclass
class MountainPassSettings:
    path_points: int = 64
    refine_iters: int = 20000
    residual_tol: float = 1e-6
    S_est: float | None = None


def mountain_pass(spec: ProblemSpec, u0: ComplexField,
                  settings: MountainPassSettings | None = None) -> SolveResult:
    """Path sampling on tau -> tau t_u u0 followed by Nehari-constrained descent."""
    st = settings or MountainPassSettings()
    if spec.q < spec.p:
        raise SolverError(f"mountain pass needs q >= p, got q={spec.q} < p={spec.p}")
    if spec.q == spec.p:
        log.warning("q = p: mountain-pass run is experimental, no convergence promise")
    t_u = find_t_escape(u0, spec)
    taus = np.linspace(0.0, 1.0, st.path_points)
    semi, hq, kp = energy_parts(u0, spec)
    p, q, ps = spec.p, spec.q, spec.pstar
    tt = taus * t_u
    path = semi * tt**p / p - spec.lam * hq * tt**q / q - kp * tt**ps / ps
    k = int(np.argmax(path))
    c_M = float(path[k])
    start = u0 * float(tt[k])
    res = descend(start, spec, DescentSettings(max_iters=st.refine_iters, residual_tol=st.residual_tol,
                                                nehari=True), level="mountain-pass")
    info = {"t_escape": t_u, "path_max_index": k, "c_M_estimate": c_M,
            "path_energies": [float(e) for e in path]}
    if st.S_est is not None:
        thr = thresholds(spec, st.S_est)
        info["c_PS"] = thr.c_PS
        info["below_c_PS"] = bool(c_M < thr.c_PS)
        if not c_M < thr.c_PS:
            log.warning("mountain-pass estimate c_M=%.6g is not below c_PS=%.6g", c_M, thr.c_PS)
    res.info.update(info)
    return res


def geometry_witness(u0: ComplexField, spec: ProblemSpec, n_samples: int = 400) -> dict:
    """Sphere minimum alpha over scaled copies of u0 and an escape point.

    Scans t in (0, t_u]: ``alpha`` is the largest energy among the radii, ie
    the path maximum, and ``R`` the seminorm at which it is attained; for
    q > p the energy is positive on (0, R] and E(t_u u0) < 0.
    """
    t_u = find_t_escape(u0, spec)
    semi, hq, kp = energy_parts(u0, spec)
    p, q, ps = spec.p, spec.q, spec.pstar
    tt = np.linspace(t_u / n_samples, t_u, n_samples)
    e = semi * tt**p / p - spec.lam * hq * tt**q / q - kp * tt**ps / ps
    k = int(np.argmax(e))
    return {"alpha": float(e[k]), "R": float(tt[k] * semi ** (1 / p)), "t_escape": t_u,
            "E_escape": float(e[-1]), "positive_before_max": bool(np.all(e[: k + 1] > 0))}


# ---------------------------------------------------------------------------
# symmetry classes


def _rotation_perm(grid: Grid) -> np.ndarray:
    """Index map of a quarter turn in the (x1, x2) plane: (u o R)[k] = u[perm[k]]."""
    n = grid.n
    idx = grid.indices
    src = idx.copy()
    # R x = (-x2, x1); node i -> n-1-i mirrors the coordinate
    src[:, 0] = n - 1 - idx[:, 1]
    src[:, 1] = idx[:, 0]
    return np.ravel_multi_index(tuple(src.T), grid.shape)


def _reflection_perm(grid: Grid) -> np.ndarray:
    idx = grid.indices
    src = grid.n - 1 - idx
    return np.ravel_multi_index(tuple(src.T), grid.shape)


def symmetry_group(spec: ProblemSpec, tol: float = 1e-12) -> tuple[np.ndarray, int] | None:
    """(permutation, order) of a lattice symmetry leaving H, K and the phases invariant."""
    grid = spec.grid
    if grid.N == 1:
        perm, order = _reflection_perm(grid), 2
    else:
        perm, order = _rotation_perm(grid), 4
    if not (np.allclose(spec.H[perm], spec.H, atol=tol * (1 + spec.H.max()))
            and np.allclose(spec.K[perm], spec.K, atol=tol * (1 + spec.K.max()))):
        return None
    # phase invariance on a sample of pairs
    rng = np.random.default_rng(0)
    ii = rng.integers(0, grid.M, 256)
    jj = rng.integers(0, grid.M, 256)
    X, Y = grid.coords[ii], grid.coords[jj]
    th = np.sum((X - Y) * spec.A((X + Y) / 2), axis=1)
    X2, Y2 = grid.coords[perm[ii]], grid.coords[perm[jj]]
    th2 = np.sum((X2 - Y2) * spec.A((X2 + Y2) / 2), axis=1)
    if not np.allclose(np.exp(1j * th), np.exp(1j * th2), atol=1e-10):
        return None
    return perm, order


def class_projector(perm: np.ndarray, order: int, k: int) -> Callable[[np.ndarray], np.ndarray]:
    """Projection onto fields with u o R = w^k u, w = exp(2 pi i / order)."""
    w = np.exp(-2j * np.pi * k / order)

    def proj(vals: np.ndarray) -> np.ndarray:
        acc = np.zeros_like(vals, dtype=complex)
        cur = np.asarray(vals, dtype=complex)
        for m in range(order):
            acc += w**m * cur
            cur = cur[perm]
        return acc / order

    return proj


# ---------------------------------------------------------------------------
# multistart


@dataclass
class MultistartSettings:
    seed: int = 0
    max_iters: int = 20000
    residual_tol: float = 1e-6
    dedup_delta: float = 1e-3
    phase_samples: int = 32
    bump_radius: float | None = None
    S_est: float | None = None
    parallel: bool = True


def phase_orbit_distance(u: ComplexField, v: ComplexField, p: float, samples: int = 32) -> float:
    """min over sampled theta of ||u - e^{i theta} v||_{L^p}, relative to the larger norm."""
    vol = u.grid.cell_volume
    nu = (np.sum(np.abs(u.values) ** p) * vol) ** (1 / p)
    nv = (np.sum(np.abs(v.values) ** p) * vol) ** (1 / p)
    scale = max(nu, nv, 1e-300)
    thetas = 2 * np.pi * np.arange(samples) / samples
    # refine around the best sampled angle with the optimal continuous phase
    inner = np.sum(np.conj(v.values) * u.values)
    cand = list(thetas) + [float(np.angle(inner))]
    best = min((np.sum(np.abs(u.values - np.exp(1j * t) * v.values) ** p) * vol) ** (1 / p) for t in cand)
    return float(best / scale)


def _bump_centres(spec: ProblemSpec, count: int, rng: np.random.Generator) -> np.ndarray:
    """Points of Omega_H = {H > 0} away from its edge, off the symmetry centre."""
    grid = spec.grid
    pos = np.flatnonzero(spec.H > 0.25 * spec.H.max())
    pts = grid.coords[pos]
    r = np.sqrt(np.sum(pts**2, axis=1))
    pts = pts[r > 1.5 * grid.h] if np.any(r > 1.5 * grid.h) else pts
    return pts[rng.choice(len(pts), size=count, replace=len(pts) < count)]


def multistart_negative(spec: ProblemSpec, profile: TruncationProfile, k: int,
                        settings: MultistartSettings | None = None) -> tuple[list[SolveResult], dict]:
    """Descend E_inf from k starts in the negative region; keep distinct verified solutions.

    Returns (solutions, diagnostics).  Start j uses a random combination of j
    bumps centred in Omega_H, projected onto symmetry class j mod (group
    order) when the problem is symmetric, and scaled down until E_inf < 0.
    """
    st = settings or MultistartSettings()
    grid = spec.grid
    diag: dict = {"starts": [], "rejected": []}
    if spec.lam == 0 or not np.any(spec.H > 0):
        diag["reason"] = "lambda*H vanishes: E_inf >= 0 for every start"
        return [], diag
    rng = np.random.default_rng(st.seed)
    sym = symmetry_group(spec)
    classes = sym[1] if sym else 1
    diag["symmetry_order"] = classes
    radius = st.bump_radius or max(3 * grid.h, 0.25 * grid.L)
    jobs = []
    for j in range(1, k + 1):
        centres = _bump_centres(spec, j, rng)
        coef = rng.normal(size=j) + 1j * rng.normal(size=j)
        vals = np.zeros(grid.M, dtype=complex)
        for c, x0 in zip(coef, centres):
            vals += c * smooth_bump(np.sqrt(np.sum((grid.coords - x0) ** 2, axis=1)) / radius)
        cls = (j - 1) % classes
        proj = class_projector(sym[0], sym[1], cls) if sym else None
        if proj is not None:
            vals = proj(vals)
        if not np.any(np.abs(vals) > 1e-12):
            diag["rejected"].append({"start": j, "reason": "empty class projection"})
            continue
        u = ComplexField(grid, vals)
        semi = energy_parts(u, spec)[0] ** (1 / spec.p)
        u = u * (0.5 * profile.T0 / semi)
        for _ in range(60):
            if truncated_energy(u, spec, profile) < 0:
                break
            u = u * 0.5
        else:
            diag["rejected"].append({"start": j, "reason": "no scaling with E_inf < 0"})
            continue
        jobs.append((j, cls, u, proj))

    dset = DescentSettings(max_iters=st.max_iters, residual_tol=st.residual_tol)

    def run(job):
        j, cls, u, proj = job
        r = descend(u, spec, dset, profile=profile, projector=proj, level="negative")
        r.info.update({"start": j, "symmetry_class": cls})
        return r

    if st.parallel and len(jobs) > 1 and worker_count() > 1:
        with ThreadPoolExecutor(max_workers=min(worker_count(), len(jobs))) as pool:
            results = list(pool.map(run, jobs))
    else:
        results = [run(jb) for jb in jobs]

    thr = thresholds(spec, st.S_est) if st.S_est is not None else None
    kept: list[SolveResult] = []
    for r in results:
        semi = energy_parts(r.u, spec)[0] ** (1 / spec.p)
        E = energy(r.u, spec)
        r.info.update({"seminorm": semi, "E_inf": r.energy, "T0": profile.T0})
        r.energy = E
        ok = semi <= profile.T0 and E < 0
        if thr is not None:
            r.info["estnorm_bound"] = thr.estnorm_bound
            r.info["estnorm_ratio"] = semi / thr.estnorm_bound
        diag["starts"].append({"start": r.info["start"], "energy": E, "seminorm": semi,
                               "residual": r.residual, "converged": r.converged})
        if not ok:
            diag["rejected"].append({"start": r.info["start"], "reason": "fails [u] <= T0 and E < 0"})
            continue
        if any(phase_orbit_distance(r.u, o.u, spec.p, st.phase_samples) <= st.dedup_delta for o in kept):
            diag["rejected"].append({"start": r.info["start"], "reason": "duplicate"})
            continue
        kept.append(r)
    if not kept:
        diag["reason"] = "no start produced a verified negative-energy solution"
    return kept, diag
