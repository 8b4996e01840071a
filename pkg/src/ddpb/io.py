"""PQR ingestion, unit conversion and run configuration."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields, replace

from .cavity import BOHR_PER_ANGSTROM, Atom, CavityParams

# keys whose values are lengths (converted with the length unit) and inverse lengths
LENGTH_KEYS = ("r_p", "a", "r_0")


@dataclass(frozen=True)
class RunConfig:
    lmax: int = 7
    n_leb: int = 86
    n_radial: int = 15
    n_lgl: int = 30
    r_p: float = 1.4
    a: float = 0.0
    r_0: float = 2.0
    eps_s: float = 78.54
    kappa: float = 0.104
    beta: float = 1.0
    tol: float = 1e-6
    max_outer: int = 50
    max_dd: int = 50
    max_fp: int = 100
    damping: float = 0.5
    model: str = "npb"
    eval_radius_policy: str = "center"
    length_unit: str = "angstrom"

    def __post_init__(self):
        for name in ("lmax", "n_leb", "n_radial", "n_lgl", "max_outer", "max_dd", "max_fp"):
            if getattr(self, name) < (0 if name == "lmax" else 1):
                raise ValueError(f"{name}: must be >= 1")
        if self.n_lgl < 2:
            raise ValueError("n_lgl: must be >= 2")
        if self.tol <= 0:
            raise ValueError("tol: must be positive")
        if not 0 < self.damping <= 1:
            raise ValueError("damping: must lie in (0, 1]")
        if self.model not in ("npb", "lpb"):
            raise ValueError("model must be npb|lpb")
        if self.length_unit not in ("angstrom", "bohr"):
            raise ValueError("length_unit must be angstrom|bohr")
        eval_radius(self)  # validates the policy
        if self.r_p <= 0 or self.a < 0 or self.r_0 < 0:
            raise ValueError("r_p must be positive, a and r_0 nonnegative")
        if self.eps_s < 1 or self.kappa < 0 or self.beta <= 0:
            raise ValueError("eps_s >= 1, kappa >= 0, beta > 0 required")

    def with_value(self, key: str, text: str) -> "RunConfig":
        return replace(self, **{key: _coerce(key, text)})


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(key, text):
    if key not in _TYPES:
        raise ValueError(f"unknown config key '{key}'")
    kind = _TYPES[key]
    text = str(text).strip()
    try:
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
    except ValueError:
        raise ValueError(f"{key}: cannot parse '{text}' as {kind}") from None
    return text.lower()


def parse_config(text: str) -> RunConfig:
    """Parse flat ``key = value`` lines; '#' starts a comment."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in _TYPES:
            raise ValueError(f"unknown config key '{key}'")
        values[key] = _coerce(key, val)
    return RunConfig(**values)


def serialize_config(cfg: RunConfig) -> str:
    return "".join(f"{f.name} = {getattr(cfg, f.name)!r}\n".replace("'", "")
                   for f in fields(RunConfig))


def config_hash(cfg: RunConfig) -> str:
    return hashlib.sha256(serialize_config(cfg).encode()).hexdigest()[:16]


def config_dict(cfg: RunConfig) -> dict:
    return {f.name: getattr(cfg, f.name) for f in fields(RunConfig)}


def eval_radius(cfg: RunConfig) -> float:
    """Sampling radius (unit-ball coordinates) of the one-atom test energy."""
    pol = cfg.eval_radius_policy
    if pol == "center":
        return 0.0
    if pol == "surface":
        return 1.0
    try:
        val = float(pol)
    except ValueError:
        raise ValueError("eval_radius_policy must be center|surface|<number in [0,1]>") from None
    if not 0.0 <= val <= 1.0:
        raise ValueError("eval_radius_policy must be center|surface|<number in [0,1]>")
    return val


def parse_pqr(text: str) -> list:
    """Atoms from ATOM/HETATM records; x, y, z, charge, radius are the last five fields."""
    atoms = []
    names = ("x", "y", "z", "charge", "radius")
    for lineno, raw in enumerate(text.splitlines(), 1):
        parts = raw.split()
        if not parts or parts[0] not in ("ATOM", "HETATM"):
            continue
        if len(parts) < 6:
            raise ValueError(f"line {lineno}: too few fields")
        vals = []
        for name, tok in zip(names, parts[-5:]):
            try:
                vals.append(float(tok))
            except ValueError:
                raise ValueError(f"line {lineno}: field {name} is not numeric: '{tok}'") from None
        if vals[4] <= 0:
            raise ValueError(f"line {lineno}: radius must be positive")
        atoms.append(Atom(tuple(vals[:3]), vals[3], vals[4]))
    if not atoms:
        raise ValueError("no atoms")
    return atoms


def length_factor(cfg: RunConfig) -> float:
    return BOHR_PER_ANGSTROM if cfg.length_unit == "angstrom" else 1.0


def convert_units(atoms, cfg: RunConfig):
    """Atoms and cavity parameters in atomic units."""
    f = length_factor(cfg)
    out = [Atom(tuple(c * f for c in a.center), a.charge, a.radius * f) for a in atoms]
    params = CavityParams(r_p=cfg.r_p * f, a=cfg.a * f, r_0=cfg.r_0 * f, eps_s=cfg.eps_s,
                          kappa=cfg.kappa / f, beta=cfg.beta)
    return out, params
