"""Concentration-compactness diagnostics at desk scale.

Densities are nu = |u|^{p*} and mu = |D^s_A u|^p per node.  Atoms are found
by ball-mass dominance, masses at infinity by the mass outside B_R, and the
two Sobolev-type relations S nu^{p/p*} <= mu are evaluated on the detected
pieces.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .kernel import KernelError, interpolate_field, sp_gradient_density
from .lattice import ComplexField, Grid, MagneticPotential, ProblemSpec

MAX_ATOMS = 8


class ConcentrationError(ValueError):
    pass


@dataclass
class MeasureProfile:
    """nu and mu densities per sequence index with derived masses."""

    grid: Grid
    nu: list[np.ndarray]
    mu: list[np.ndarray]

    @classmethod
    def from_sequence(cls, sequence, spec: ProblemSpec) -> "MeasureProfile":
        nu = [np.abs(u.values) ** spec.pstar for u in sequence]
        mu = [sp_gradient_density(u, spec) for u in sequence]
        return cls(spec.grid, nu, mu)

    def total(self, k: int) -> tuple[float, float]:
        vol = self.grid.cell_volume
        return float(np.sum(self.nu[k]) * vol), float(np.sum(self.mu[k]) * vol)

    def ball_masses(self, k: int, x0, eps: float) -> tuple[float, float]:
        inside = np.sqrt(np.sum((self.grid.coords - np.asarray(x0)) ** 2, axis=1)) < eps
        vol = self.grid.cell_volume
        return float(np.sum(self.nu[k][inside]) * vol), float(np.sum(self.mu[k][inside]) * vol)

    def split(self, k: int, R: float) -> dict:
        """Inner (|x| <= R) and tail (|x| > R) masses with the bookkeeping defect."""
        out = self.grid.radius > R
        vol = self.grid.cell_volume
        res = {}
        for name, dens in (("nu", self.nu[k]), ("mu", self.mu[k])):
            tail = float(np.sum(dens[out]) * vol)
            inner = float(np.sum(dens[~out]) * vol)
            total = float(np.sum(dens) * vol)
            res[name] = {"inner": inner, "tail": tail, "total": total,
                         "defect": abs(inner + tail - total) / max(total, 1e-300)}
        return res


def bubble_sequence(u: ComplexField, centres, sigmas, *, s: float, p: float,
                    grid: Grid | None = None, mass_tol: float = 0.02) -> list[ComplexField]:
    """u_n(x) = sigma_n^-((N-ps)/p) u((x - c_n)/sigma_n) on ``grid``.

    ``centres`` is one point or one point per sigma.  Raises when a member
    loses more than ``mass_tol`` of its L^{p*} norm through the boundary.
    """
    g = grid or u.grid
    N = g.N
    sigmas = [float(x) for x in sigmas]
    cs = np.atleast_2d(np.asarray(centres, dtype=float))
    if cs.shape[0] == 1:
        cs = np.repeat(cs, len(sigmas), axis=0)
    if cs.shape != (len(sigmas), N):
        raise ConcentrationError("need one centre or one centre per sigma")
    pstar = N * p / (N - s * p)
    vol_u = u.grid.cell_volume
    base = (np.sum(np.abs(u.values) ** pstar) * vol_u) ** (1 / pstar)
    out = []
    for sigma, c in zip(sigmas, cs):
        if not sigma > 0:
            raise ConcentrationError(f"sigma must be positive, got {sigma}")
        vals = interpolate_field(u, (g.coords - c) / sigma) * sigma ** (-(N - p * s) / p)
        v = ComplexField(g, vals)
        nrm = (np.sum(np.abs(vals) ** pstar) * g.cell_volume) ** (1 / pstar)
        if abs(nrm - base) > mass_tol * base:
            raise KernelError(f"bubble with sigma={sigma} at {c.tolist()} does not fit in the box")
        out.append(v)
    return out


@dataclass
class Atom:
    x: list[float]
    nu: float
    mu: float
    relation_lhs: float
    holds: bool

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class AtomScan:
    atoms: list[Atom]
    eps_detect: float
    eps_relation: float
    S: float
    info: dict = field(default_factory=dict)


def atom_scan(sequence, spec: ProblemSpec, eps_list, S_est: float,
              threshold: float = 0.5, tolerance: float = 0.05) -> AtomScan:
    """Atoms of the last member of ``sequence``.

    A node is a candidate when the nu-mass of B_eps (smallest eps) around it
    is at least ``threshold`` of the total.  Candidates closer than 2 eps are
    merged into the one with the largest ball mass.  The relation
    S nu_j^{p/p*} <= mu_j (1 + tolerance) is evaluated with balls of the
    largest eps.
    """
    seq = list(sequence)
    if not seq:
        raise ConcentrationError("atom scan needs a nonempty sequence")
    eps_list = sorted(float(e) for e in eps_list)
    u = seq[-1]
    prof = MeasureProfile.from_sequence([u], spec)
    g = spec.grid
    vol = g.cell_volume
    nu = prof.nu[0]
    total = float(np.sum(nu) * vol)
    if total == 0:
        return AtomScan([], eps_list[0], eps_list[-1], S_est, {"total_nu": 0.0})
    eps = eps_list[0]
    # ball masses at every node via pairwise distances, in blocks
    X = g.coords
    ball = np.empty(g.M)
    step = max(1, (1 << 20) // g.M)
    for a in range(0, g.M, step):
        d2 = np.sum((X[a:a + step, None, :] - X[None, :, :]) ** 2, axis=-1)
        ball[a:a + step] = (d2 < eps * eps) @ nu * vol
    cand = np.flatnonzero(ball >= threshold * total)
    order = cand[np.lexsort((cand, -ball[cand]))]
    chosen: list[int] = []
    for k in order:
        if all(np.linalg.norm(X[k] - X[c]) >= 2 * eps for c in chosen):
            chosen.append(int(k))
        if len(chosen) == MAX_ATOMS:
            break
    eps_r = eps_list[-1]
    atoms = []
    for k in chosen:
        nj, mj = prof.ball_masses(0, X[k], eps_r)
        lhs = S_est * nj ** (spec.p / spec.pstar)
        atoms.append(Atom(X[k].tolist(), nj, mj, lhs, bool(lhs <= mj * (1 + tolerance))))
    return AtomScan(atoms, eps, eps_r, S_est, {"total_nu": total, "candidates": int(cand.size)})


def tail_masses(sequence, spec: ProblemSpec, R_list) -> dict:
    """nu_inf, mu_inf: max over the last half of the sequence of mass outside B_R."""
    seq = list(sequence)
    if not seq:
        raise ConcentrationError("tail masses need a nonempty sequence")
    R_list = [float(r) for r in R_list]
    if any(b <= a for a, b in zip(R_list, R_list[1:])):
        raise ConcentrationError("R_list must be increasing")
    rmax = spec.grid.L
    if R_list[-1] > rmax:
        raise ConcentrationError(f"radius {R_list[-1]} exceeds the box half width {rmax}")
    prof = MeasureProfile.from_sequence(seq, spec)
    late = range(len(seq) // 2, len(seq))
    curve = []
    worst = 0.0
    for R in R_list:
        splits = [prof.split(k, R) for k in late]
        worst = max([worst] + [sp[m]["defect"] for sp in splits for m in ("nu", "mu")])
        curve.append({"R": R, "nu_inf": max(sp["nu"]["tail"] for sp in splits),
                      "mu_inf": max(sp["mu"]["tail"] for sp in splits)})
    if worst > 1e-12:
        raise ConcentrationError(f"mass bookkeeping defect {worst:.3e} exceeds 1e-12")
    last = curve[-1]
    totals = [prof.total(k)[0] for k in late]
    return {"nu_inf": last["nu_inf"], "mu_inf": last["mu_inf"], "R": last["R"],
            "curve": curve, "total_nu": max(totals), "bookkeeping_defect": worst}


def infinity_relation(tails: dict, spec: ProblemSpec, S_est: float, tolerance: float = 0.05) -> dict:
    lhs = S_est * tails["nu_inf"] ** (spec.p / spec.pstar)
    return {"lhs": lhs, "rhs": tails["mu_inf"], "holds": bool(lhs <= tails["mu_inf"] * (1 + tolerance))}


def reverse_holder_check(u: ComplexField, phi, spec: ProblemSpec, S_est: float) -> dict:
    """S^{1/p} ||phi u||_{p*} versus (sum |phi|^p dmu)^{1/p} + ||u D^s phi||_p.

    The cross term uses the non-magnetic (s,p)-gradient of phi without an
    exterior correction; with it the right side bounds [phi u]_{A,s,p}
    exactly (discrete Minkowski), so ``defect`` = lhs - rhs is <= 0 whenever
    S_est does not exceed the Rayleigh quotient of phi u.
    """
    phi = np.asarray(phi)
    if np.iscomplexobj(phi) and np.any(phi.imag != 0):
        raise ConcentrationError("test function phi must be real")
    phi = np.real(phi).astype(float).reshape(-1)
    if np.any(phi < 0):
        raise ConcentrationError("test function phi must be nonnegative")
    g = spec.grid
    vol = g.cell_volume
    p, ps = spec.p, spec.pstar
    if not np.any(phi):
        return {"lhs": 0.0, "rhs": 0.0, "cross": 0.0, "defect": 0.0}
    nu = np.abs(u.values) ** ps
    mu = sp_gradient_density(u, spec)
    lhs = S_est ** (1 / p) * (np.sum(phi**ps * nu) * vol) ** (1 / ps)
    main = (np.sum(phi**p * mu) * vol) ** (1 / p)
    plain = spec._cache.get("plain")
    if plain is None:
        plain = spec.replace(A=MagneticPotential.zero(g.N), tail="off", H=None, K=None)
        spec._cache["plain"] = plain
    dphi = sp_gradient_density(ComplexField(g, phi), plain)
    cross = (np.sum(np.abs(u.values) ** p * dphi) * vol) ** (1 / p)
    rhs = main + cross
    return {"lhs": float(lhs), "rhs": float(rhs), "cross": float(cross), "defect": float(lhs - rhs)}


# ---------------------------------------------------------------------------
# Simon's inequality


def simon_terms(a, b, p: float) -> tuple[np.ndarray, np.ndarray]:
    """(lhs, rhs) for complex vectors along the last axis."""
    if not p > 1:
        raise ConcentrationError(f"Simon inequality needs p > 1, got {p}")
    a = np.asarray(a, dtype=complex)
    b = np.asarray(b, dtype=complex)
    if a.ndim == 0:
        a, b = a[None], b[None]
    na = np.linalg.norm(a, axis=-1, keepdims=True)
    nb = np.linalg.norm(b, axis=-1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        fa = np.where(na > 0, na ** (p - 2) * a, 0)
        fb = np.where(nb > 0, nb ** (p - 2) * b, 0)
    d = a - b
    inner = np.real(np.sum((fa - fb) * np.conj(d), axis=-1))
    lhs = np.linalg.norm(d, axis=-1) ** p
    if p >= 2:
        rhs = inner
    else:
        rhs = np.maximum(inner, 0) ** (p / 2) * (na[..., 0] ** p + nb[..., 0] ** p) ** ((2 - p) / 2)
    return lhs, rhs


def simon_check(a, b, p: float, C_p: float = 1.0) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(lhs, rhs, lhs <= C_p rhs) elementwise over the leading axes."""
    lhs, rhs = simon_terms(a, b, p)
    tol = 1e-12 * np.maximum(lhs, 1e-300)
    holds = lhs <= C_p * rhs + tol
    return lhs, rhs, holds


def random_pairs(n: int, dim: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Complex Gaussian pairs with a spread of relative scales."""
    a = rng.normal(size=(n, dim)) + 1j * rng.normal(size=(n, dim))
    b = rng.normal(size=(n, dim)) + 1j * rng.normal(size=(n, dim))
    scale = np.exp(rng.uniform(-3, 3, size=(n, 1)))
    return a, b * scale


def _ratio(a, b, p):
    lhs, rhs = simon_terms(a, b, p)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(rhs > 0, lhs / rhs, np.where(lhs > 0, np.inf, 0.0))


def calibrate_simon_constant(p: float, n_pairs: int = 100_000, dim: int = 3, seed: int = 12345,
                             polish: int = 8, margin: float = 1.05) -> dict:
    """Empirical C_p: the scan maximum of lhs/rhs (locally polished) times ``margin``."""
    rng = np.random.default_rng(seed)
    a, b = random_pairs(n_pairs, dim, rng)
    r = _ratio(a, b, p)
    if not np.all(np.isfinite(r)):
        raise ConcentrationError("scan produced an unbounded ratio")
    scan_max = float(np.max(r))
    best = scan_max

    def neg(z):
        za = z[:dim] + 1j * z[dim:2 * dim]
        zb = z[2 * dim:3 * dim] + 1j * z[3 * dim:]
        val = _ratio(za[None], zb[None], p)[0]
        return -val if np.isfinite(val) else 0.0

    for k in np.argsort(r)[::-1][:polish]:
        z0 = np.concatenate([a[k].real, a[k].imag, b[k].real, b[k].imag])
        opt = minimize(neg, z0, method="Nelder-Mead",
                       options={"maxiter": 4000, "xatol": 1e-10, "fatol": 1e-12})
        best = max(best, -float(opt.fun))
    return {"p": p, "scan_max": scan_max, "polished_max": best, "C_p": margin * best,
            "n_pairs": n_pairs, "seed": seed}
