"""Run configuration: sectioned INI text with typed, validated keys.

Every key has a documented default, so an empty document is a valid
configuration.  Unknown sections or keys, type mismatches and violated
problem constraints are reported with the offending line number.
"""

from __future__ import annotations

import configparser
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .lattice import (Grid, LatticeError, MagneticPotential, ProblemSpec, critical_exponent,
                      normalize_tail, read_field_csv, sample_field, weight_field)


class ConfigError(ValueError):
    """Invalid configuration; the message names the key and line."""


def _floats(text: str) -> list[float]:
    parts = [t for t in re.split(r"[,\s]+", text.strip()) if t]
    return [float(t) for t in parts]


def _optional_float(text: str) -> float | None:
    return None if text.strip().lower() in ("", "none", "auto") else float(text)


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _str(text: str) -> str:
    return text.strip()


WEIGHT_KEYS = {"kind": (_str, "constant", "constant | gaussian | bump | zero | csv"),
               "amplitude": (float, 1.0, "peak value"),
               "center": (_floats, [], "centre point (defaults to the origin)"),
               "radius": (float, 1.0, "support radius of the bump"),
               "width": (float, 1.0, "Gaussian width"),
               "path": (_str, "", "field CSV for kind = csv")}

# section -> key -> (parser, default, help)
SCHEMA: dict[str, dict[str, tuple]] = {
    "grid": {"N": (int, 2, "dimension (1, 2 or 3)"),
             "n": (int, 16, "nodes per axis"),
             "L": (float, 2.0, "half width of the box [-L, L]^N")},
    "problem": {"s": (float, 0.5, "fractional order in (0, 1)"),
                "p": (float, 2.0, "exponent p > 1 with s p < N"),
                "q": (float, 3.0, "subcritical exponent in (1, p*)"),
                "lambda": (float, 5.0, "coefficient of the H term"),
                "tail": (normalize_tail, "lattice", "exterior correction: off | radial | lattice")},
    "weights.H": {**WEIGHT_KEYS, "kind": (_str, "bump", WEIGHT_KEYS["kind"][2]),
                  "radius": (float, 1.5, "support radius of the bump")},
    "weights.K": dict(WEIGHT_KEYS),
    "potential": {"family": (_str, "symmetric", "zero | constant | linear | symmetric | tabulated"),
                  "b": (float, 1.0, "field strength for family = symmetric (N >= 2)"),
                  "matrix": (_floats, [], "row-major N x N matrix for family = linear"),
                  "offset": (_floats, [], "constant vector for family = constant"),
                  "path": (_str, "", "table for family = tabulated: columns x_1..x_N, A_1..A_N")},
    "field": {"kind": (_str, "gaussian", "gaussian | bump | plane | csv"),
              "amplitude": (float, 1.0, "peak modulus"),
              "width": (float, 1.0, "Gaussian width: exp(-|x-c|^2/width^2)"),
              "radius": (float, 1.0, "bump radius"),
              "center": (_floats, [], "centre point"),
              "wavevector": (_floats, [], "phase exp(i k.x) multiplying the profile"),
              "path": (_str, "", "field CSV for kind = csv")},
    "solver": {"seed": (int, 0, "random seed"),
               "max_iters": (int, 20000, "descent iteration cap"),
               "residual_tol": (float, 1e-6, "stop when the gradient residual is below this"),
               "path_points": (int, 64, "samples on the mountain-pass segment")},
    "sobolev": {"max_iters": (int, 2000, "Rayleigh descent iteration cap"),
                "step": (float, 0.5, "initial relative step"),
                "tol": (float, 1e-10, "stop when the quotient decrease is below tol"),
                "S": (_optional_float, None, "use this Sobolev constant instead of estimating")},
    "multistart": {"k": (int, 4, "number of starts"),
                   "lambda_factor": (_optional_float, None,
                                     "if set, lambda = factor * min(lambda*_1, lambda*_2)"),
                   "residual_tol": (float, 1e-11, "per-start residual tolerance"),
                   "max_iters": (int, 20000, "per-start iteration cap"),
                   "dedup_delta": (float, 1e-3, "relative L^p distance below which solutions coincide"),
                   "phase_samples": (int, 32, "angles sampled in the phase-orbit distance")},
    "diagnose": {"mode": (_str, "bubble", "bubble | translate | directory"),
                 "sigmas": (_floats, [1.0, 0.5, 0.25, 0.125], "rescaling factors"),
                 "centers": (_floats, [], "one centre per member (flattened), or one centre"),
                 "eps": (_floats, [0.25, 0.5, 1.0], "ball radii for atom detection"),
                 "R": (_floats, [], "radii for masses at infinity (default L/2, 3L/4)"),
                 "directory": (_str, "", "directory of field CSVs for mode = directory"),
                 "threshold": (float, 0.5, "ball-mass fraction defining an atom")},
    "thresholds": {"S": (_optional_float, None, "Sobolev constant (default: estimate)"),
                   "H_norm": (_optional_float, None, "override ||H||_r"),
                   "K_norm": (_optional_float, None, "override ||K||_inf")},
}


@dataclass
class RunConfig:
    values: dict[str, dict[str, Any]]
    raw: dict[str, dict[str, str]] = field(default_factory=dict)
    lines: dict[tuple[str, str], int] = field(default_factory=dict)
    base_dir: Path = Path(".")

    def __getitem__(self, section: str) -> dict[str, Any]:
        return self.values[section]

    def where(self, section: str, key: str) -> str:
        line = self.lines.get((section, key))
        return f"[{section}] {key}" + (f" (line {line})" if line else "")

    def echo(self) -> dict:
        """Full typed configuration, JSON-serialisable, with absolute paths."""
        data = json.loads(json.dumps(self.values, default=_jsonable))
        for sec, keys in data.items():
            for key in ("path", "directory"):
                if keys.get(key):
                    keys[key] = str(self._path(keys[key]).resolve())
        return data

    # -- builders ---------------------------------------------------------

    def grid(self) -> Grid:
        g = self.values["grid"]
        try:
            return Grid(g["N"], g["n"], g["L"])
        except LatticeError as exc:
            key = "N" if g["N"] not in (1, 2, 3) else ("n" if g["n"] < 4 else "L")
            raise ConfigError(f"{self.where('grid', key)}: {exc}") from None

    def potential(self, N: int) -> MagneticPotential:
        c = self.values["potential"]
        fam = c["family"]
        try:
            if fam == "zero":
                return MagneticPotential.zero(N)
            if fam == "constant":
                return MagneticPotential.constant(c["offset"] or [0.0] * N)
            if fam == "linear":
                m = c["matrix"] or [0.0] * (N * N)
                if len(m) != N * N:
                    raise ConfigError(f"{self.where('potential', 'matrix')}: need {N * N} entries, got {len(m)}")
                return MagneticPotential.linear(np.reshape(m, (N, N)))
            if fam == "symmetric":
                if N == 1:
                    return MagneticPotential.linear([[c["b"]]])
                B = np.zeros((N, N))
                B[0, 1], B[1, 0] = -0.5 * c["b"], 0.5 * c["b"]
                return MagneticPotential.linear(B)
            if fam == "tabulated":
                path = self._path(c["path"])
                data = np.loadtxt(path, delimiter=",", comments="#", ndmin=2)
                if data.shape[1] != 2 * N:
                    raise ConfigError(f"{self.where('potential', 'path')}: expected {2 * N} columns")
                axes = [np.unique(data[:, a]) for a in range(N)]
                shape = tuple(len(a) for a in axes) + (N,)
                order = np.lexsort(tuple(data[:, a] for a in reversed(range(N))))
                return MagneticPotential.tabulated(axes, data[order, N:].reshape(shape))
        except (LatticeError, OSError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"{self.where('potential', 'family')}: {exc}") from None
        raise ConfigError(f"{self.where('potential', 'family')}: unknown family {fam!r}")

    def _path(self, text: str) -> Path:
        p = Path(text)
        return p if p.is_absolute() else self.base_dir / p

    def weight(self, name: str, grid: Grid) -> np.ndarray:
        sec = f"weights.{name}"
        c = self.values[sec]
        try:
            return weight_field(c["kind"], grid, amplitude=c["amplitude"], center=c["center"] or None,
                                radius=c["radius"], width=c["width"],
                                path=self._path(c["path"]) if c["path"] else None)
        except (LatticeError, OSError) as exc:
            raise ConfigError(f"{self.where(sec, 'kind')}: {exc}") from None

    def problem(self, lam: float | None = None) -> ProblemSpec:
        grid = self.grid()
        pr = self.values["problem"]
        N, s, p, q = grid.N, pr["s"], pr["p"], pr["q"]
        if not s * p < N:
            raise ConfigError(f"{self.where('problem', 'p')}: need s*p < N, got s={s}, p={p} "
                              f"(s*p = {s * p}) with N = {N}")
        if s * p < N and not q < critical_exponent(N, s, p):
            raise ConfigError(f"{self.where('problem', 'q')}: q = {q} violates the critical-exponent "
                              f"constraint q < p*_s = {critical_exponent(N, s, p)}")
        try:
            return ProblemSpec(grid, s, p, q=q, lam=pr["lambda"] if lam is None else lam,
                               H=self.weight("H", grid), K=self.weight("K", grid),
                               A=self.potential(N), tail=pr["tail"])
        except LatticeError as exc:
            raise ConfigError(f"[problem]: {exc}") from None

    def field(self, grid: Grid):
        c = self.values["field"]
        kind = c["kind"]
        centre = np.zeros(grid.N) if not c["center"] else np.broadcast_to(np.asarray(c["center"]), (grid.N,))
        kvec = np.zeros(grid.N) if not c["wavevector"] else np.broadcast_to(np.asarray(c["wavevector"]), (grid.N,))
        amp = c["amplitude"]
        try:
            if kind == "csv":
                u = read_field_csv(self._path(c["path"]))
                if u.grid != grid:
                    raise ConfigError(f"{self.where('field', 'path')}: field grid differs from [grid]")
                return u
            if kind == "gaussian":
                prof = lambda x: amp * np.exp(-np.sum((x - centre) ** 2, axis=1) / c["width"] ** 2)
            elif kind == "bump":
                from .lattice import smooth_bump
                prof = lambda x: amp * np.e * smooth_bump(np.sqrt(np.sum((x - centre) ** 2, axis=1)) / c["radius"])
            elif kind == "plane":
                prof = lambda x: amp * np.ones(len(x))
            else:
                raise ConfigError(f"{self.where('field', 'kind')}: unknown field kind {kind!r}")
            return sample_field(lambda x: prof(x) * np.exp(1j * (x @ kvec)), grid)
        except (LatticeError, OSError) as exc:
            raise ConfigError(f"{self.where('field', 'kind')}: {exc}") from None


def _jsonable(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(type(obj).__name__)


def _line_numbers(text: str) -> dict[tuple[str, str], int]:
    out: dict[tuple[str, str], int] = {}
    section = None
    for no, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        if not s or s[0] in "#;":
            continue
        m = re.match(r"\[([^\]]+)\]", s)
        if m:
            section = m.group(1).strip()
            out[(section, "")] = no
            continue
        m = re.match(r"([^=:]+)[=:]", s)
        if m and section is not None:
            out[(section, m.group(1).strip())] = no
    return out


def parse_config(text: str, base_dir: str | Path = ".") -> RunConfig:
    """Parse and validate a configuration document."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"syntax error: {exc}") from None
    lines = _line_numbers(text)
    values: dict[str, dict[str, Any]] = {}
    raw: dict[str, dict[str, str]] = {}
    for sec in cp.sections():
        if sec not in SCHEMA:
            raise ConfigError(f"unknown section [{sec}] (line {lines.get((sec, ''), '?')}); "
                              f"known: {', '.join(SCHEMA)}")
        for key in cp[sec]:
            if key not in SCHEMA[sec]:
                raise ConfigError(f"unknown key {key!r} in [{sec}] (line {lines.get((sec, key), '?')}); "
                                  f"known: {', '.join(SCHEMA[sec])}")
    for sec, keys in SCHEMA.items():
        values[sec] = {}
        raw[sec] = {}
        for key, (parser, default, _help) in keys.items():
            if cp.has_option(sec, key):
                text_val = cp.get(sec, key)
                raw[sec][key] = text_val
                try:
                    values[sec][key] = parser(text_val)
                except (ValueError, LatticeError) as exc:
                    raise ConfigError(f"[{sec}] {key} (line {lines.get((sec, key), '?')}): "
                                      f"cannot parse {text_val!r} as {getattr(parser, '__name__', 'value')}: {exc}") from None
            else:
                values[sec][key] = list(default) if isinstance(default, list) else default
    cfg = RunConfig(values, raw, lines, Path(base_dir))
    cfg.problem()  # validates grid, exponents, weights and potential
    return cfg


def config_from_dict(data: dict, base_dir: str | Path = ".") -> RunConfig:
    """Rebuild a configuration from a manifest echo."""
    parts = []
    for sec, keys in data.items():
        parts.append(f"[{sec}]")
        for key, val in keys.items():
            if val is None:
                continue
            if isinstance(val, list):
                val = ", ".join(repr(float(v)) for v in val)
            elif isinstance(val, float):
                val = repr(val)
            parts.append(f"{key} = {val}")
    return parse_config("\n".join(parts) + "\n", base_dir)


def load_config(path: str | Path) -> RunConfig:
    """Read an INI file, or a manifest.json emitted by a previous run."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text(encoding="utf-8")
    if path.suffix == ".json":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from None
        if "config" not in data:
            raise ConfigError(f"{path}: manifest has no 'config' block")
        return config_from_dict(data["config"], path.parent)
    return parse_config(text, path.parent)


def help_text() -> str:
    lines = ["configuration keys (section, key, default, meaning):"]
    for sec, keys in SCHEMA.items():
        lines.append(f"  [{sec}]")
        for key, (_p, default, h) in keys.items():
            lines.append(f"    {key} = {default!r:<12} {h}")
    return "\n".join(lines)
