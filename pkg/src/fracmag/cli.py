"""Command-line front end.

Every subcommand reads a configuration (INI or a previous manifest.json),
writes ``manifest.json`` and ``summary.json`` plus CSV outputs under
``--out``, and exits with 0 on success, 2 on a configuration error and 3 on
a numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import AnalysisError, SobolevSettings, estimate_sobolev_constant
from .concentration import (ConcentrationError, atom_scan, bubble_sequence, infinity_relation,
                            tail_masses)
from .config import ConfigError, RunConfig, help_text, load_config, parse_config
from .energy import (ThresholdError, energy, energy_gradient, energy_parts, residual,
                     thresholds, thresholds_from_norms, truncation_profile)
from .invariants import run_invariants
from .kernel import KernelError, apply_operator, seminorm, sp_gradient_density
from .lattice import LatticeError, read_field_csv, write_field_csv
from .solvers import (MountainPassSettings, MultistartSettings, SolverError, mountain_pass,
                      multistart_negative)

log = logging.getLogger("fracmag")

COMMANDS = ("grid-info", "seminorm", "operator", "energy", "thresholds", "sobolev", "density",
            "solve-mp", "solve-multistart", "diagnose", "verify")

NUMERICAL_ERRORS = (AnalysisError, ConcentrationError, KernelError, SolverError, ThresholdError,
                    FloatingPointError)


def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else str(x)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _write_json(path: Path, data) -> None:
    path.write_text(json.dumps(_clean(data), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_curve(path: Path, header: list[str], rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(repr(float(v)) for v in row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _write_nodal(path: Path, spec, columns: dict[str, np.ndarray]) -> None:
    g = spec.grid
    header = [f"x{a}" for a in range(g.N)] + list(columns)
    rows = np.column_stack([g.coords] + [np.asarray(c, float) for c in columns.values()])
    _write_curve(path, header, rows)


# ---------------------------------------------------------------------------
# shared steps


def _sobolev(cfg: RunConfig, spec, out: Path | None = None):
    S = cfg["sobolev"]["S"]
    if S is not None:
        return float(S), None
    st = SobolevSettings(max_iters=cfg["sobolev"]["max_iters"], step=cfg["sobolev"]["step"],
                         tol=cfg["sobolev"]["tol"])
    init = cfg.field(spec.grid)
    est = estimate_sobolev_constant(spec, init, st)
    if out is not None:
        _write_curve(out / "sobolev_trace.csv", ["iteration", "quotient"], est.trace)
    return est.S_est, est


def cmd_grid_info(cfg, spec, out):
    return {"grid": spec.grid.to_dict(), "problem": spec.to_dict()}


def cmd_seminorm(cfg, spec, out):
    u = cfg.field(spec.grid)
    val = seminorm(u, spec)
    return {"seminorm": val, "seminorm_p": val**spec.p}


def cmd_operator(cfg, spec, out):
    u = cfg.field(spec.grid)
    Lu = apply_operator(u, spec)
    write_field_csv(Lu, out / "operator.csv", {"quantity": "operator"})
    return {"max_abs": float(np.max(np.abs(Lu.values))),
            "l2_norm": residual(Lu)}


def cmd_energy(cfg, spec, out):
    u = cfg.field(spec.grid)
    semi, hq, kp = energy_parts(u, spec)
    g = energy_gradient(u, spec)
    write_field_csv(g, out / "gradient.csv", {"quantity": "energy gradient"})
    return {"energy": energy(u, spec), "seminorm_p": semi, "H_term": hq, "K_term": kp,
            "gradient_residual": residual(g)}


def cmd_thresholds(cfg, spec, out):
    tc = cfg["thresholds"]
    S = tc["S"]
    if S is None:
        S, _ = _sobolev(cfg, spec, out)
    Hn = spec.H_norm() if tc["H_norm"] is None else tc["H_norm"]
    Kn = spec.K_norm() if tc["K_norm"] is None else tc["K_norm"]
    thr = thresholds_from_norms(spec.N, spec.s, spec.p, spec.q, S, Hn, Kn, spec.lam)
    data = thr.to_dict()
    print(json.dumps(_clean(data), indent=2, sort_keys=True))
    return data


def cmd_sobolev(cfg, spec, out):
    st = SobolevSettings(max_iters=cfg["sobolev"]["max_iters"], step=cfg["sobolev"]["step"],
                         tol=cfg["sobolev"]["tol"])
    est = estimate_sobolev_constant(spec, cfg.field(spec.grid), st)
    write_field_csv(est.minimizer, out / "minimizer.csv", {"S_est": est.S_est})
    _write_curve(out / "sobolev_trace.csv", ["iteration", "quotient"], est.trace)
    return est.to_dict()


def cmd_density(cfg, spec, out):
    u = cfg.field(spec.grid)
    mu = sp_gradient_density(u, spec)
    nu = np.abs(u.values) ** spec.pstar
    _write_nodal(out / "density.csv", spec, {"mu": mu, "nu": nu})
    vol = spec.grid.cell_volume
    return {"mu_total": float(np.sum(mu) * vol), "nu_total": float(np.sum(nu) * vol),
            "seminorm_p": seminorm(u, spec) ** spec.p}


def cmd_solve_mp(cfg, spec, out):
    S, _ = _sobolev(cfg, spec, out)
    sc = cfg["solver"]
    st = MountainPassSettings(path_points=sc["path_points"], refine_iters=sc["max_iters"],
                              residual_tol=sc["residual_tol"], S_est=S)
    res = mountain_pass(spec, cfg.field(spec.grid), st)
    write_field_csv(res.u, out / "solution.csv", {"energy": res.energy})
    _write_curve(out / "trace.csv", ["iteration", "energy", "residual"],
                 [(k, e, r) for k, (e, r) in enumerate(zip(res.energy_trace, res.residual_trace))])
    info = dict(res.summary())
    info.pop("path_energies", None)
    info["S_est"] = S
    return info


def cmd_solve_multistart(cfg, spec, out):
    S, _ = _sobolev(cfg, spec, out)
    mc = cfg["multistart"]
    if mc["lambda_factor"] is not None:
        thr0 = thresholds(spec, S)
        spec = spec.replace(lam=mc["lambda_factor"] * min(thr0.lambda_star_1, thr0.lambda_star_2))
    thr = thresholds(spec, S)
    profile = truncation_profile(spec, S)
    st = MultistartSettings(seed=cfg["solver"]["seed"], max_iters=mc["max_iters"],
                            residual_tol=mc["residual_tol"], dedup_delta=mc["dedup_delta"],
                            phase_samples=mc["phase_samples"], S_est=S)
    sols, diag = multistart_negative(spec, profile, mc["k"], st)
    for i, r in enumerate(sols):
        write_field_csv(r.u, out / f"solution_{i}.csv", {"energy": r.energy})
    return {"lambda": spec.lam, "S_est": S, "thresholds": thr.to_dict(), "profile": profile.to_dict(),
            "solutions": [r.summary() for r in sols], "diagnostics": diag}


def cmd_diagnose(cfg, spec, out):
    dc = cfg["diagnose"]
    g = spec.grid
    S, _ = _sobolev(cfg, spec, out)
    mode = dc["mode"]
    if mode == "directory":
        folder = cfg._path(dc["directory"])
        files = sorted(folder.glob("*.csv"))
        if not files:
            raise ConfigError(f"{cfg.where('diagnose', 'directory')}: no field CSVs in {folder}")
        seq = [read_field_csv(f) for f in files]
        if any(u.grid != g for u in seq):
            raise ConfigError(f"{cfg.where('diagnose', 'directory')}: field grids differ from [grid]")
    else:
        base = cfg.field(g)
        cen = np.asarray(dc["centers"] or [0.0] * g.N, float)
        if cen.size % g.N:
            raise ConfigError(f"{cfg.where('diagnose', 'centers')}: need a multiple of {g.N} numbers")
        cen = cen.reshape(-1, g.N)
        if mode == "translate":
            sig = [1.0] * cen.shape[0]
        elif mode == "bubble":
            sig = dc["sigmas"]
            if cen.shape[0] not in (1, len(sig)):
                raise ConfigError(f"{cfg.where('diagnose', 'centers')}: need one centre or one per sigma")
        else:
            raise ConfigError(f"{cfg.where('diagnose', 'mode')}: unknown mode {mode!r}")
        seq = bubble_sequence(base, cen, sig, s=spec.s, p=spec.p)
    R = dc["R"] or [0.5 * g.L, 0.75 * g.L]
    scan = atom_scan(seq, spec, dc["eps"], S, threshold=dc["threshold"])
    tails = tail_masses(seq, spec, R)
    rel = infinity_relation(tails, spec, S) if tails["nu_inf"] > 0 else None
    for k, u in enumerate(seq):
        _write_nodal(out / f"density_{k}.csv", spec,
                     {"nu": np.abs(u.values) ** spec.pstar, "mu": sp_gradient_density(u, spec)})
    return {"S_est": S, "atoms": [a.to_dict() for a in scan.atoms], "eps_detect": scan.eps_detect,
            "eps_relation": scan.eps_relation, "tails": tails, "infinity_relation": rel}


def cmd_verify(cfg, spec, out):
    checks = run_invariants(spec, seed=cfg["solver"]["seed"])
    for c in checks:
        print(f"{'PASS' if c.passed else 'FAIL'}  {c.name}: {c.value:.3e} (tol {c.tolerance:.1e})"
              + (f"  [{c.note}]" if c.note else ""))
    data = {"checks": [c.to_dict() for c in checks], "all_passed": all(c.passed for c in checks)}
    if not data["all_passed"]:
        raise _VerifyFailed(data)
    return data


class _VerifyFailed(Exception):
    def __init__(self, data):
        super().__init__("invariant suite failed")
        self.data = data


HANDLERS = {"grid-info": cmd_grid_info, "seminorm": cmd_seminorm, "operator": cmd_operator,
            "energy": cmd_energy, "thresholds": cmd_thresholds, "sobolev": cmd_sobolev,
            "density": cmd_density, "solve-mp": cmd_solve_mp, "solve-multistart": cmd_solve_multistart,
            "diagnose": cmd_diagnose, "verify": cmd_verify}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="fracmag", description="Fractional magnetic p-Laplacian laboratory.",
        formatter_class=argparse.RawDescriptionHelpFormatter, epilog=help_text()
        + "\n\nworker threads: FRACMAG_WORKERS (default: available CPUs)")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", "-c", help="INI configuration or manifest.json (default: all defaults)")
    ap.add_argument("--out", "-o", default="fracmag_out", help="output directory")
    ap.add_argument("--seed", type=int, help="override [solver] seed")
    ap.add_argument("--verbose", "-v", action="store_true")
    ap.add_argument("--version", action="version", version=f"fracmag {__version__}")
    return ap


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    t0 = time.perf_counter()
    try:
        cfg = load_config(args.config) if args.config else parse_config("")
        if args.seed is not None:
            cfg.values["solver"]["seed"] = args.seed
        spec = cfg.problem()
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    status, summary = 0, {}
    try:
        summary = HANDLERS[args.command](cfg, spec, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        status = 2
    except _VerifyFailed as exc:
        summary, status = exc.data, 3
        print("verify: invariant suite failed", file=sys.stderr)
    except NUMERICAL_ERRORS + (LatticeError,) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        summary, status = {"error": str(exc)}, 3
    manifest = {"tool": "fracmag", "version": __version__, "command": args.command,
                "argv": list(argv) if argv is not None else sys.argv[1:],
                "seed": cfg["solver"]["seed"], "config": cfg.echo(),
                "wall_time_s": time.perf_counter() - t0, "exit_code": status,
                "python": platform.python_version(), "numpy": np.__version__}
    _write_json(out / "manifest.json", manifest)
    _write_json(out / "summary.json", summary)
    return status


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
