"""Energy functional, its derivative, the truncated functional and thresholds.

    E(u) = [u]^p / p - (lambda/q) sum H |u|^q h^N - (1/p*) sum K |u|^{p*} h^N

All closed-form thresholds are written for general dimension N; they reduce
to the three-dimensional expressions at N = 3.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.optimize import brentq

from .kernel import _phi_field, apply_operator, pow_abs_increment, seminorm, seminorm_p_increment
from .lattice import ComplexField, ProblemSpec

ROOT_TOL = 1e-10


class ThresholdError(ValueError):
    """Inputs for which a threshold or truncation window does not exist."""


def _weighted_sum(w: np.ndarray, u: np.ndarray, t: float, h_vol: float) -> float:
    return float(np.sum(w * np.abs(u) ** t) * h_vol)


def energy_parts(u: ComplexField, spec: ProblemSpec) -> tuple[float, float, float]:
    """([u]^p, sum H|u|^q h^N, sum K|u|^{p*} h^N)."""
    vol = spec.grid.cell_volume
    return (seminorm(u, spec) ** spec.p,
            _weighted_sum(spec.H, u.values, spec.q, vol),
            _weighted_sum(spec.K, u.values, spec.pstar, vol))


def energy(u: ComplexField, spec: ProblemSpec) -> float:
    semi, hq, kp = energy_parts(u, spec)
    return semi / spec.p - spec.lam / spec.q * hq - kp / spec.pstar


def _increment_parts(u: ComplexField, v: ComplexField, spec: ProblemSpec) -> tuple[float, float, float]:
    uv = u.values
    dv = v.values - uv
    vol = spec.grid.cell_volume
    return (seminorm_p_increment(u, v, spec),
            float(np.sum(spec.H * pow_abs_increment(uv, dv, spec.q)) * vol),
            float(np.sum(spec.K * pow_abs_increment(uv, dv, spec.pstar)) * vol))


def energy_increment(u: ComplexField, v: ComplexField, spec: ProblemSpec) -> float:
    """E(v) - E(u) from term-wise increments.

    Near a critical point the difference is far below the rounding error of
    E itself; the increment form keeps its sign reliable for line searches.
    """
    semi, hq, kp = _increment_parts(u, v, spec)
    return semi / spec.p - spec.lam / spec.q * hq - kp / spec.pstar


def energy_gradient(u: ComplexField, spec: ProblemSpec) -> ComplexField:
    """Riesz representative g of E'(u) in the discrete L^2 pairing Re sum g v* h^N."""
    vals = u.values
    g = 2.0 * apply_operator(u, spec).values
    if spec.lam:
        g = g - spec.lam * spec.H * _phi_field(vals, spec.q - 2.0)
    g = g - spec.K * _phi_field(vals, spec.pstar - 2.0)
    return ComplexField(spec.grid, g)


def dual_pairing(g: ComplexField, v: ComplexField) -> float:
    """Re sum g conj(v) h^N."""
    return float(np.real(np.sum(g.values * np.conj(v.values))) * g.grid.cell_volume)


def residual(g: ComplexField) -> float:
    """Discrete L^2 norm of the gradient field."""
    return float(np.sqrt(np.sum(np.abs(g.values) ** 2) * g.grid.cell_volume))


# ---------------------------------------------------------------------------
# truncation


def smoothstep(t):
    t = np.clip(t, 0.0, 1.0)
    return t**3 * (t * (6.0 * t - 15.0) + 10.0)


def smoothstep_derivative(t):
    t = np.asarray(t, dtype=float)
    inside = (t > 0) & (t < 1)
    return np.where(inside, 30.0 * t**2 * (t - 1.0) ** 2, 0.0)


@dataclass(frozen=True)
class TruncationProfile:
    """Roots T0 <= T1 of g and the cut function tau between them.

    g(t) = a t^p - b t^q - c t^{p*} with a = 1/p, b = (lambda/q)||H||_r S^{-q/p}
    and c = ||K||_inf S^{-p*/p} / p*.
    """

    T0: float
    T1: float
    a: float
    b: float
    c: float
    p: float
    q: float
    pstar: float

    def g(self, t):
        t = np.asarray(t, dtype=float)
        return self.a * t**self.p - self.b * t**self.q - self.c * t**self.pstar

    def tau(self, t):
        if math.isinf(self.T1):
            return np.ones_like(np.asarray(t, dtype=float))
        width = self.T1 - self.T0
        return 1.0 - smoothstep((np.asarray(t, dtype=float) - self.T0) / width)

    def tau_derivative(self, t):
        if math.isinf(self.T1):
            return np.zeros_like(np.asarray(t, dtype=float))
        width = self.T1 - self.T0
        return -smoothstep_derivative((np.asarray(t, dtype=float) - self.T0) / width) / width

    def g_inf(self, t):
        t = np.asarray(t, dtype=float)
        return self.a * t**self.p - self.b * t**self.q - self.c * self.tau(t) * t**self.pstar

    def to_dict(self) -> dict:
        return asdict(self)


def truncation_profile(spec: ProblemSpec, S_est: float) -> TruncationProfile:
    """Roots of g by bracketing around the maximiser of g(t)/t^q."""
    if not S_est > 0:
        raise ThresholdError(f"Sobolev constant must be positive, got {S_est}")
    p, q, ps = spec.p, spec.q, spec.pstar
    a = 1.0 / p
    b = spec.lam / q * spec.H_norm() * S_est ** (-q / p)
    c = spec.K_norm() * S_est ** (-ps / p) / ps
    if b > 0 and not q < p:
        raise ThresholdError(f"truncation needs q < p, got q={q}, p={p}")
    if c == 0:
        if b == 0:
            return TruncationProfile(0.0, math.inf, a, b, c, p, q, ps)
        T0 = (b / a) ** (1.0 / (p - q))
        return TruncationProfile(T0, math.inf, a, b, c, p, q, ps)
    if b == 0:
        return TruncationProfile(0.0, (a / c) ** (1.0 / (ps - p)), a, b, c, p, q, ps)
    # f(t) = g(t)/t^q = a t^{p-q} - c t^{p*-q} - b rises then falls
    tm = (a * (p - q) / (c * (ps - q))) ** (1.0 / (ps - p))

    def f(t):
        return a * t ** (p - q) - c * t ** (ps - q) - b

    if f(tm) <= 0:
        raise ThresholdError(
            f"no truncation window: g <= 0 on (0, inf) for lambda={spec.lam} (max of g/t^q is {f(tm) + b:.6g} <= {b:.6g})")
    T0 = brentq(f, 0.0, tm, xtol=1e-15, rtol=1e-15, maxiter=500)
    hi = 2.0 * tm
    while f(hi) > 0:
        hi *= 2.0
    T1 = brentq(f, tm, hi, xtol=1e-15, rtol=1e-15, maxiter=500)
    return TruncationProfile(T0, T1, a, b, c, p, q, ps)


def truncated_energy(u: ComplexField, spec: ProblemSpec, profile: TruncationProfile) -> float:
    semi, hq, kp = energy_parts(u, spec)
    t = semi ** (1.0 / spec.p)
    return semi / spec.p - spec.lam / spec.q * hq - float(profile.tau(t)) / spec.pstar * kp


def truncated_energy_increment(u: ComplexField, v: ComplexField, spec: ProblemSpec,
                               profile: TruncationProfile) -> float:
    """E_inf(v) - E_inf(u) in increment form (see energy_increment)."""
    semi_u, _, kp_u = energy_parts(u, spec)
    dsemi, dhq, dkp = _increment_parts(u, v, spec)
    tau_u = float(profile.tau(semi_u ** (1.0 / spec.p)))
    tau_v = float(profile.tau(max(semi_u + dsemi, 0.0) ** (1.0 / spec.p)))
    dk = tau_v * dkp + (tau_v - tau_u) * kp_u
    return dsemi / spec.p - spec.lam / spec.q * dhq - dk / spec.pstar


def truncated_energy_gradient(u: ComplexField, spec: ProblemSpec, profile: TruncationProfile) -> ComplexField:
    """Gradient of E_inf including the tau'([u]) d[u] contribution."""
    vals = u.values
    Lu2 = 2.0 * apply_operator(u, spec).values
    t = seminorm(u, spec)
    tau = float(profile.tau(t))
    g = Lu2 - spec.lam * spec.H * _phi_field(vals, spec.q - 2.0)
    g = g - tau * spec.K * _phi_field(vals, spec.pstar - 2.0)
    dtau = float(profile.tau_derivative(t))
    if dtau != 0.0 and t > 0:
        kp = _weighted_sum(spec.K, vals, spec.pstar, spec.grid.cell_volume)
        g = g - dtau * kp / spec.pstar * t ** (1.0 - spec.p) * Lu2
    return ComplexField(spec.grid, g)


# ---------------------------------------------------------------------------
# thresholds


@dataclass(frozen=True)
class Thresholds:
    N: int
    s: float
    p: float
    q: float
    pstar: float
    lam: float
    S: float
    H_norm: float
    K_norm: float
    Lambda_star: float
    lambda_star_1: float
    lambda_star_2: float
    c_PS: float
    t_star: float
    g1_t_star: float
    estnorm_bound: float

    def to_dict(self) -> dict:
        return asdict(self)


def _safe_pow(x: float, e: float) -> float:
    if x == 0:
        return math.inf if e < 0 else (0.0 if e > 0 else 1.0)
    return x**e


def thresholds_from_norms(N: int, s: float, p: float, q: float, S: float,
                          H_norm: float, K_norm: float, lam: float = 0.0) -> Thresholds:
    """Closed-form thresholds from the scalar inputs alone."""
    if not S > 0:
        raise ThresholdError(f"Sobolev constant must be positive, got {S}")
    if not s * p < N:
        raise ThresholdError(f"need s*p < N, got s*p={s * p}, N={N}")
    ps = N * p / (N - s * p)
    Lambda = S / H_norm if H_norm > 0 else math.inf
    lam1 = (s * q / (N * H_norm) * S ** ((N + q * (s - N)) / (s * p))
            * _safe_pow(K_norm, (N - s * p) * (q - 1) / (s * p))) if H_norm > 0 else math.inf
    cps = s / N * S ** (N / (s * p)) / _safe_pow(K_norm, N / (s * ps))
    gap = 1.0 / q - 1.0 / ps
    if H_norm > 0 and q < p:
        lam2 = _safe_pow(cps, (p - q) / p) / (N ** (q / p) * gap * S ** (-q / p) * H_norm)
    else:
        lam2 = math.inf
    t_star = _safe_pow(1.0 / (S ** (-ps / p) * K_norm) if K_norm > 0 else math.inf, 1.0 / (ps - p))
    g1 = (1.0 / p - 1.0 / ps) * t_star**p
    if q < p:
        bound = lam ** (1.0 / (p - q)) * (N * S ** (-q / p) * H_norm * gap) ** (1.0 / (p - q))
    else:
        bound = math.nan
    return Thresholds(N, s, p, q, ps, lam, S, H_norm, K_norm, Lambda, lam1, lam2, cps,
                      t_star, g1, bound)


def thresholds(spec: ProblemSpec, S_est: float) -> Thresholds:
    return thresholds_from_norms(spec.N, spec.s, spec.p, spec.q, S_est,
                                 spec.H_norm(), spec.K_norm(), spec.lam)
