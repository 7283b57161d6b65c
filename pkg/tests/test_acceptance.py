"""Acceptance suite: twelve end-to-end criteria at their stated tolerances.

Each test prints one line ``[C<k>] PASS|FAIL <name>: <measured values>``.
Run alone with ``pytest tests/test_acceptance.py -s`` or as a script.
"""

import json
import os
import time

import numpy as np
import pytest

from fracmag.analysis import (SobolevSettings, cutoff_tail_curve, estimate_sobolev_constant,
                              mollifier_curve, sobolev_equality_curve)
from fracmag.cli import run
from fracmag.concentration import (atom_scan, bubble_sequence, calibrate_simon_constant,
                                   infinity_relation, random_pairs, simon_check, tail_masses)
from fracmag.energy import (dual_pairing, energy, energy_gradient, thresholds,
                            thresholds_from_norms, truncation_profile)
from fracmag.kernel import diamagnetic_defect, gauge_transform, seminorm
from fracmag.lattice import (ComplexField, Grid, MagneticPotential, ProblemSpec, sample_field,
                             weight_field, weighted_lp_norm)
from fracmag.solvers import (MountainPassSettings, MultistartSettings, mountain_pass,
                             multistart_negative, phase_orbit_distance)


def report(capsys, k, name, passed, detail):
    line = f"[C{k:>2}] {'PASS' if passed else 'FAIL'} {name}: {detail}"
    with capsys.disabled():
        print("\n" + line)
    return line


def gaussian(grid, a=1.0):
    return sample_field(lambda x: np.exp(-a * np.sum(x**2, axis=1)), grid)


def random_field(grid, rng, box=1.0):
    inside = np.all(np.abs(grid.coords) < box * grid.L, axis=1)
    vals = rng.normal(size=grid.M) + 1j * rng.normal(size=grid.M)
    return ComplexField(grid, np.where(inside, vals, 0))


def mountain_pass_problem():
    g = Grid(2, 16, 2.0)
    return ProblemSpec(g, 0.5, 2.0, q=3.0, lam=5.0, H=weight_field("bump", g, radius=1.5),
                       K=np.ones(g.M), A=MagneticPotential.symmetric_gauge(1.0), tail="lattice")


MP_CONFIG = """
[grid]
N = 2
n = 16
L = 2
[problem]
s = 0.5
p = 2
q = 3
lambda = 5
tail = lattice
[weights.H]
kind = bump
radius = 1.5
[weights.K]
kind = constant
[potential]
family = symmetric
b = 1
[field]
kind = gaussian
width = 0.7071067811865476
[sobolev]
max_iters = 2000
step = 0.5
"""


def test_c01_gauge_invariance(capsys):
    t0 = time.perf_counter()
    g = Grid(2, 16, 2.0)
    A = MagneticPotential.linear([[0.3, -1.2], [0.8, 0.25]])
    spec = ProblemSpec(g, 0.5, 2.0, A=A, tail="lattice")
    rng = np.random.default_rng(101)
    u = random_field(g, rng, box=0.5)
    worst = 0.0
    for steps in ([1, 0], [0, -2], [3, 2], [-2, 3]):
        xi = np.array(steps) * g.h
        v, A2 = gauge_transform(u, A, xi, -A(xi[None, :])[0])
        a, b = seminorm(u, spec), seminorm(v, spec.replace(A=A2))
        worst = max(worst, abs(a - b) / a)
    dt = time.perf_counter() - t0
    ok = worst < 1e-12 and dt < 10
    report(capsys, 1, "gauge invariance", ok, f"max relative change {worst:.2e} (< 1e-12), {dt:.2f} s")
    assert ok


def test_c02_diamagnetic(capsys):
    g = Grid(2, 12, 1.5)
    spec = ProblemSpec(g, 0.5, 2.0, A=MagneticPotential.linear([[0.2, -1.5], [0.7, 0.1]]), tail="lattice")
    rng = np.random.default_rng(202)
    viol, gap = -np.inf, np.inf
    for _ in range(100):
        v, d = diamagnetic_defect(random_field(g, rng), spec)
        viol, gap = max(viol, v), min(gap, d)
    ok = viol <= 1e-14 and gap >= -1e-14
    report(capsys, 2, "diamagnetic inequality", ok,
           f"100 fields, max pointwise violation {viol:.2e} (<= 1e-14), min gap {gap:.3e} (>= -1e-14)")
    assert ok


@pytest.mark.parametrize("p,q,tol", [(2.0, 3.0, 1e-6), (3.0, 4.0, 1e-6), (1.5, 1.8, 1e-5)])
def test_c03_gradient(capsys, p, q, tol):
    g = Grid(2, 10, 2.0)
    spec = ProblemSpec(g, 0.5, p, q=q, lam=1.5, H=weight_field("gaussian", g, width=1.2),
                       K=np.full(g.M, 0.8), A=MagneticPotential.symmetric_gauge(1.0), tail="lattice")
    rng = np.random.default_rng(303)
    vals = rng.normal(size=g.M) + 1j * rng.normal(size=g.M)
    if p < 2:
        vals = (0.5 + np.abs(vals)) * np.exp(1j * np.angle(vals))   # nowhere vanishing
    u = ComplexField(g, 0.3 * vals)
    grad = energy_gradient(u, spec)
    eps = 1e-5
    worst = 0.0
    for _ in range(20):
        d = ComplexField(g, rng.normal(size=g.M) + 1j * rng.normal(size=g.M))
        fd = (energy(u + d * eps, spec) - energy(u - d * eps, spec)) / (2 * eps)
        an = dual_pairing(grad, d)
        worst = max(worst, abs(fd - an) / abs(an))
    ok = worst < tol
    report(capsys, 3, f"gradient vs finite differences p={p}", ok,
           f"20 directions, max relative error {worst:.2e} (< {tol:.0e})")
    assert ok


def test_c04_sobolev_machinery(capsys):
    spec = mountain_pass_problem()
    st = SobolevSettings(max_iters=2000, step=0.5)
    est = estimate_sobolev_constant(spec, gaussian(spec.grid, 2.0), st)
    m = est.minimizer
    lhs = weighted_lp_norm(m, 1.0, spec.pstar)
    rhs = est.S_est ** (-1 / spec.p) * seminorm(m, spec) * (1 + 1e-9)
    plain_spec = spec.replace(A=MagneticPotential.zero(2))
    plain = estimate_sobolev_constant(plain_spec, m.modulus(), st)
    ok = lhs <= rhs and plain.S_est <= est.S_est + 1e-9
    report(capsys, 4, "Sobolev machinery", ok,
           f"||u||_p* {lhs:.12f} <= {rhs:.12f}; S(A=0) {plain.S_est:.6f} <= S(A) {est.S_est:.6f} + 1e-9")
    assert ok


def test_c05_equality_curve(capsys):
    t0 = time.perf_counter()
    g = Grid(1, 256, 4.0)
    spec = ProblemSpec(g, 0.25, 2.0, A=MagneticPotential.linear([[1.0]]), tail="lattice")
    u = gaussian(g)
    curve = sobolev_equality_curve(u, spec, [1.0, 0.5, 0.25, 0.125])
    vals = [v for _, v in curve]
    ref = sobolev_equality_curve(u, spec.replace(A=MagneticPotential.zero(1)), [1.0])[0][1]
    dec = all(b < a for a, b in zip(vals, vals[1:]))
    rel = abs(vals[-1] - ref) / ref
    dt = time.perf_counter() - t0
    ok = dec and rel < 0.02 and dt < 120
    report(capsys, 5, "S = S_A rescaling curve", ok,
           f"curve {[round(v, 4) for v in vals]}, strictly decreasing {dec}, final vs A=0 value "
           f"{ref:.4f}: {rel:.2%} (< 2%), {dt:.2f} s")
    assert ok


def test_c06_mountain_pass(capsys):
    t0 = time.perf_counter()
    spec = mountain_pass_problem()
    S = estimate_sobolev_constant(spec, gaussian(spec.grid, 2.0), SobolevSettings(max_iters=2000, step=0.5)).S_est
    res = mountain_pass(spec, gaussian(spec.grid, 2.0), MountainPassSettings(S_est=S))
    cM, cPS = res.info["c_M_estimate"], res.info["c_PS"]
    dt = time.perf_counter() - t0
    ok = cM < cPS and res.residual < 1e-5 and res.energy > 0 and dt < 600
    report(capsys, 6, "mountain-pass regime", ok,
           f"lambda=5, c_M {cM:.4f} < c_PS {cPS:.4f}; residual {res.residual:.2e} (< 1e-5), "
           f"E {res.energy:.4f} > 0, {dt:.2f} s")
    assert ok


def test_c07_negative_energy(capsys):
    t0 = time.perf_counter()
    base = mountain_pass_problem().replace(q=1.5)
    S = estimate_sobolev_constant(base, gaussian(base.grid), SobolevSettings(max_iters=2000, step=0.5)).S_est
    thr0 = thresholds(base, S)
    spec = base.replace(lam=0.5 * min(thr0.lambda_star_1, thr0.lambda_star_2))
    thr = thresholds(spec, S)
    prof = truncation_profile(spec, S)
    sols, _ = multistart_negative(spec, prof, 4, MultistartSettings(residual_tol=1e-11, S_est=S))
    distinct = []
    for r in sols:
        if all(phase_orbit_distance(r.u, o.u, spec.p) > 1e-3 for o in distinct):
            distinct.append(r)
    checks = []
    for r in distinct:
        t = seminorm(r.u, spec)
        checks.append((r.energy < 0, t <= prof.T0, t <= 1.05 * thr.estnorm_bound, t / thr.estnorm_bound))
    dt = time.perf_counter() - t0
    ok = len(distinct) >= 3 and all(all(c[:3]) for c in checks) and dt < 900
    ratios = ", ".join(f"{c[3]:.3f}" for c in checks)
    report(capsys, 7, "negative-energy regime", ok,
           f"lambda {spec.lam:.4g}, {len(distinct)} phase-distinct solutions (>= 3), all E < 0 and "
           f"[u] <= T0={prof.T0:.3e}: {all(c[0] and c[1] for c in checks)}; [u]/estnorm bound {ratios} "
           f"(<= 1.05), {dt:.2f} s")
    assert ok


def test_c08_threshold_arithmetic(capsys):
    thr = thresholds_from_norms(3, 0.5, 2.0, 1.5, 1.0, 1.0, 1.0)
    e1, e2 = abs(thr.lambda_star_1 - 0.25), abs(thr.c_PS - 1 / 6)
    ok = e1 <= 1e-12 and e2 <= 1e-12
    report(capsys, 8, "threshold arithmetic", ok,
           f"lambda*_1 {thr.lambda_star_1!r} (err {e1:.1e}), c_PS {thr.c_PS!r} (err {e2:.1e})")
    assert ok


def test_c09_concentration(capsys):
    g = Grid(1, 512, 4.0)
    spec = ProblemSpec(g, 0.25, 2.0, A=MagneticPotential.linear([[1.0]]), tail="lattice")
    S = estimate_sobolev_constant(spec, gaussian(g), SobolevSettings(max_iters=2000, step=0.5)).S_est
    seq = bubble_sequence(gaussian(g), [0.0], [1.0, 0.5, 0.25, 0.125], s=spec.s, p=spec.p)
    scan = atom_scan(seq, spec, [0.25, 0.5, 1.0], S)
    one = len(scan.atoms) == 1 and abs(scan.atoms[0].x[0]) <= 2 * g.h
    atom_ok = one and scan.atoms[0].holds
    bump = gaussian(g, 16.0)
    moving = bubble_sequence(bump, [[0.0], [1.0], [2.0], [2.8]], [1.0] * 4, s=spec.s, p=spec.p)
    tails = tail_masses(moving, spec, [1.0, 2.0, 2.4])
    rel = infinity_relation(tails, spec, S)
    inf_ok = tails["nu_inf"] >= 0.9 * tails["total_nu"] and rel["holds"]
    ok = atom_ok and inf_ok
    a = scan.atoms[0] if scan.atoms else None
    atom_txt = (f"atom at {a.x[0]:+.4f} (|x| <= 2h = {2 * g.h:.4f}), S nu^(p/p*) {a.relation_lhs:.4f} "
                f"<= 1.05 mu {1.05 * a.mu:.4f}" if a else "no atom")
    report(capsys, 9, "concentration atoms and mass at infinity", ok,
           f"S_est {S:.4f}; {len(scan.atoms)} atom(s), {atom_txt}; nu_inf {tails['nu_inf']:.5f} of "
           f"{tails['total_nu']:.5f} (>= 90%), S nu_inf^(p/p*) {rel['lhs']:.4f} <= 1.05 mu_inf "
           f"{1.05 * rel['rhs']:.4f}")
    assert ok


def test_c10_density_machinery(capsys):
    g = Grid(1, 256, 4.0)
    spec = ProblemSpec(g, 0.25, 2.0, A=MagneticPotential.linear([[0.5]]), tail="lattice")
    tent = sample_field(lambda x: np.maximum(0.0, 1.0 - np.abs(x[:, 0])) + 0j, g)
    mol = [v for _, v in mollifier_curve(tent, spec, [1, 2, 4, 8, 16])]
    mol_ok = all(b < a for a, b in zip(mol, mol[1:])) and mol[-1] < 0.1 * mol[0]
    u = gaussian(g)
    cut = [v for _, v in cutoff_tail_curve(u, spec, [0.25, 0.5, 1.0, 1.5, 2.0])]
    full = seminorm(u, spec)
    cut_ok = all(b < a for a, b in zip(cut, cut[1:])) and cut[-1] < 1e-3 * full
    inside = cutoff_tail_curve(tent, spec, [1.0])[0][1]
    ok = mol_ok and cut_ok and inside == 0.0
    report(capsys, 10, "density machinery", ok,
           f"mollifier final/initial {mol[-1] / mol[0]:.4f} (< 0.1), decreasing {mol_ok}; cut-off "
           f"ratios {[f'{c / full:.2e}' for c in cut]}, final < 1e-3: {cut[-1] < 1e-3 * full}; "
           f"supp u in B_n gives {inside}")
    assert ok


def test_c11_simon(capsys):
    parts, ok = [], True
    for p in (1.5, 2.0, 3.0):
        cal = calibrate_simon_constant(p)
        a, b = random_pairs(100_000, 3, np.random.default_rng(7))
        holds = simon_check(a, b, p, cal["C_p"])[2]
        ok &= bool(np.all(holds))
        parts.append(f"p={p}: C_p {cal['C_p']:.4f}, {int(np.sum(holds))}/100000 hold")
    report(capsys, 11, "Simon inequality", ok, "; ".join(parts))
    assert ok


def test_c12_determinism(capsys, tmp_path, monkeypatch):
    cfg = tmp_path / "mp.ini"
    cfg.write_text(MP_CONFIG)
    most = max(4, os.cpu_count() or 1)
    outs = {}
    for workers in (1, most):
        monkeypatch.setenv("FRACMAG_WORKERS", str(workers))
        out = tmp_path / f"w{workers}"
        assert run(["solve-mp", "-c", str(cfg), "-o", str(out)]) == 0
        outs[workers] = out
    a = json.loads((outs[1] / "summary.json").read_text())
    b = json.loads((outs[most] / "summary.json").read_text())
    same_json = a == b
    same_csv = all((outs[1] / f).read_bytes() == (outs[most] / f).read_bytes()
                   for f in ("solution.csv", "trace.csv"))
    ok = same_json and same_csv
    report(capsys, 12, "determinism across worker counts", ok,
           f"workers 1 vs {most}: summary fields identical {same_json}, CSV bytes identical {same_csv}, "
           f"residual {a['residual']:.2e}, E {a['energy']:.6f}")
    assert ok


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q"]))
