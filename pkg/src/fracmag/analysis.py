"""Sobolev constants, the rescaling experiment, mollifiers and cut-offs."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .kernel import KernelError, apply_operator, rescale, seminorm
from .lattice import ComplexField, Grid, ProblemSpec, smooth_bump, weighted_lp_norm


class AnalysisError(ValueError):
    pass


@dataclass
class SobolevSettings:
    max_iters: int = 500
    step: float = 0.5
    tol: float = 1e-10
    max_halvings: int = 40


@dataclass
class SobolevEstimate:
    S_est: float
    minimizer: ComplexField
    trace: list[tuple[int, float]] = field(default_factory=list)
    converged: bool = False

    def to_dict(self) -> dict:
        return {"S_est": self.S_est, "iterations": len(self.trace) - 1,
                "converged": self.converged,
                "initial_quotient": self.trace[0][1] if self.trace else None}


def rayleigh_quotient(u: ComplexField, spec: ProblemSpec) -> float:
    """[u]_{A,s,p}^p / ||u||_{p*}^p."""
    denom = weighted_lp_norm(u, 1.0, spec.pstar)
    if denom == 0:
        raise AnalysisError("Rayleigh quotient undefined for the zero field")
    return seminorm(u, spec) ** spec.p / denom**spec.p


def _normalise(vals: np.ndarray, spec: ProblemSpec) -> np.ndarray:
    nrm = (np.sum(np.abs(vals) ** spec.pstar) * spec.grid.cell_volume) ** (1.0 / spec.pstar)
    return vals / nrm


def estimate_sobolev_constant(spec: ProblemSpec, init: ComplexField,
                              settings: SobolevSettings | None = None) -> SobolevEstimate:
    """Projected descent of the Rayleigh quotient on the unit L^{p*} sphere.

    The step is relative: each trial moves by ``gamma`` times the gradient
    rescaled to the sup norm of the iterate.  A trial is accepted only if the
    quotient decreases; otherwise ``gamma`` is halved.  After an accepted
    step ``gamma`` grows by 1.5 so the fixed step does not stall.
    """
    st = settings or SobolevSettings()
    if init.is_zero():
        raise AnalysisError("Sobolev descent needs a nonzero initial field")
    p, ps = spec.p, spec.pstar
    vals = _normalise(init.values.astype(complex), spec)
    u = ComplexField(spec.grid, vals)
    R = rayleigh_quotient(u, spec)
    if not np.isfinite(R):
        raise AnalysisError("non-finite Rayleigh quotient at the initial field")
    trace = [(0, R)]
    gamma = st.step
    converged = False
    for it in range(1, st.max_iters + 1):
        G = p * (2.0 * apply_operator(u, spec).values - R * np.abs(u.values) ** (ps - 2) * u.values)
        gmax = np.max(np.abs(G))
        if gmax == 0:
            converged = True
            break
        direction = G * (np.max(np.abs(u.values)) / gmax)
        accepted = False
        for _ in range(st.max_halvings):
            trial = ComplexField(spec.grid, _normalise(u.values - gamma * direction, spec))
            Rt = rayleigh_quotient(trial, spec)
            if not np.isfinite(Rt):
                raise AnalysisError(f"non-finite Rayleigh quotient at iteration {it}")
            if Rt < R:
                accepted = True
                break
            gamma *= 0.5
        if not accepted:
            converged = True
            break
        drop = R - Rt
        u, R = trial, Rt
        trace.append((it, R))
        gamma = min(1.5 * gamma, 1.0)
        if drop < st.tol * max(1.0, R):
            converged = True
            break
    return SobolevEstimate(R, u, trace, converged)


def sobolev_equality_curve(u: ComplexField, spec: ProblemSpec, sigmas,
                           refine: int = 2) -> list[tuple[float, float]]:
    """(sigma, [u_sigma]_{A,s,p}^p) with u_sigma evaluated on a refined grid.

    The evaluation grid has ``refine`` times more nodes per axis on the same
    box.  Raises if a rescaled field changes its L^{p*} norm by more than 2%,
    which happens when its support leaves the box.
    """
    g = spec.grid
    fine = Grid(g.N, g.n * refine, g.L)
    fine_spec = spec.replace(grid=fine, H=None, K=None)
    base = weighted_lp_norm(u, 1.0, spec.pstar)
    out = []
    for sigma in sigmas:
        us = rescale(u, float(sigma), fine, s=spec.s, p=spec.p)
        if abs(weighted_lp_norm(us, 1.0, spec.pstar) - base) > 0.02 * base:
            raise KernelError(f"rescaled support for sigma={sigma} escapes the box")
        out.append((float(sigma), seminorm(us, fine_spec) ** spec.p))
    return out


def mollifier_kernel(grid: Grid, n: int) -> np.ndarray:
    """Discrete Friedrichs mollifier of radius 1/n with unit discrete mass."""
    radius = 1.0 / n
    m = int(np.ceil(radius / grid.h))
    if radius <= grid.h:
        raise AnalysisError(f"mollifier radius 1/{n} = {radius} does not exceed one cell h = {grid.h}")
    ax = np.arange(-m, m + 1) * grid.h
    mesh = np.meshgrid(*[ax] * grid.N, indexing="ij")
    r = np.sqrt(sum(c**2 for c in mesh)) / radius
    rho = smooth_bump(r)
    return rho / (np.sum(rho) * grid.cell_volume)


def mollify(u: ComplexField, n: int) -> ComplexField:
    """Discrete convolution u * rho_n (zero extension outside the box)."""
    if int(n) != n or n < 1:
        raise AnalysisError(f"mollifier index must be a positive integer, got {n}")
    g = u.grid
    rho = mollifier_kernel(g, int(n)) * g.cell_volume
    arr = u.as_array()
    re = ndimage.convolve(arr.real, rho, mode="constant", cval=0.0)
    im = ndimage.convolve(arr.imag, rho, mode="constant", cval=0.0)
    return ComplexField(g, (re + 1j * im).ravel())


def mollifier_curve(u: ComplexField, spec: ProblemSpec, n_list) -> list[tuple[int, float]]:
    """(n, [u * rho_n - u]_{A,s,p})."""
    return [(int(n), seminorm(mollify(u, n) - u, spec)) for n in n_list]


def smoothstep(t: np.ndarray) -> np.ndarray:
    """Quintic 6t^5 - 15t^4 + 10t^3 clipped to [0, 1]."""
    t = np.clip(t, 0.0, 1.0)
    return t**3 * (t * (6.0 * t - 15.0) + 10.0)


def cutoff(grid: Grid, n: float) -> np.ndarray:
    """phi_n: 0 on B_n, 1 outside B_{2n}, quintic transition."""
    return smoothstep((grid.radius - n) / n)


def cutoff_tail_curve(u: ComplexField, spec: ProblemSpec, n_list) -> list[tuple[float, float]]:
    """(n, [phi_n u]_{A,s,p})."""
    out = []
    for n in n_list:
        phi = cutoff(spec.grid, float(n))
        out.append((float(n), seminorm(u * phi, spec)))
    return out
