"""Run configuration and plain-text output formats."""

import configparser
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .physics import FLUX_VARIANTS
from .semidiscretization import FORMULAS, UnsupportedFormulationError, check_formulation

CASES = ("manufactured", "wb", "dam2d", "channel")
LIMITERS = ("fct", "element", "frozen-random", "none")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    """Validated run description; ``None`` fields take the case defaults."""

    case: str
    seed: int = 0
    N: Optional[int] = None
    elements: tuple = (16, 64, 256, 1024)
    mesh: Optional[str] = None
    flux: str = "ersing-jump"
    formula: Optional[str] = None
    limiter: Optional[str] = None
    t_end: Optional[float] = None
    cfl: Optional[float] = None
    dt: Optional[float] = None
    max_steps: Optional[int] = None
    output_dir: str = "output"
    every: Optional[int] = None
    gauge_every: int = 1
    threads: int = 1


# section -> key -> (field name, parser)
_SCHEMA = {
    "case": {
        "name": ("case", str),
        "seed": ("seed", int),
        "N": ("N", int),
        "elements": ("elements", lambda s: tuple(int(v) for v in s.replace(",", " ").split())),
        "mesh": ("mesh", str),
    },
    "solver": {
        "flux": ("flux", str),
        "formula": ("formula", str),
        "limiter": ("limiter", str),
        "threads": ("threads", int),
    },
    "time": {
        "t_end": ("t_end", float),
        "cfl": ("cfl", float),
        "dt": ("dt", float),
        "max_steps": ("max_steps", int),
    },
    "output": {
        "directory": ("output_dir", str),
        "every": ("every", int),
        "gauge_every": ("gauge_every", int),
    },
}

CASE_DEFAULTS = {
    "manufactured": dict(N=3, dt=5e-4, t_end=0.1, limiter="none"),
    "wb": dict(N=3, cfl=0.9, t_end=10.0, limiter="frozen-random"),
    "dam2d": dict(N=4, cfl=0.4, t_end=2.0, limiter="fct", every=20),
    "channel": dict(N=3, cfl=0.225, t_end=3.0, limiter="fct"),
}


def _parse_pairs(items):
    """``{"section.key": "value"}`` into typed dataclass fields; unknown keys raise."""
    out = {}
    for path, raw in items.items():
        section, _, key = path.partition(".")
        if section not in _SCHEMA:
            raise ConfigError(f"{path}: unknown section {section!r}")
        if key not in _SCHEMA[section]:
            raise ConfigError(f"{path}: unknown key")
        name, conv = _SCHEMA[section][key]
        try:
            out[name] = conv(raw.strip())
        except ValueError as exc:
            raise ConfigError(f"{path}: cannot parse {raw!r} ({exc})") from None
    return out


def read_config_items(path):
    parser = configparser.ConfigParser(interpolation=None, strict=True)
    parser.optionxform = str
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    items = {}
    for section in parser.sections():
        for key, value in parser.items(section):
            items[f"{section}.{key}"] = value
    return items


def parse_config(path=None, overrides=None, base_dir=None):
    """Build a :class:`RunConfig` from an INI file and/or ``section.key=value`` overrides."""
    items = read_config_items(path) if path is not None else {}
    for ov in overrides or ():
        if "=" not in ov:
            raise ConfigError(f"override {ov!r} is not of the form section.key=value")
        k, v = ov.split("=", 1)
        items[k.strip()] = v
    values = _parse_pairs(items)
    if "case" not in values:
        raise ConfigError("case.name: missing (one of " + ", ".join(CASES) + ")")
    cfg = RunConfig(**values)
    if cfg.mesh is not None and path is not None and not Path(cfg.mesh).is_absolute():
        root = Path(base_dir) if base_dir is not None else Path(path).parent
        cfg = replace(cfg, mesh=str(root / cfg.mesh))
    return validate_config(cfg)


def validate_config(cfg):
    if cfg.case not in CASES:
        raise ConfigError(f"case.name: unknown case {cfg.case!r}; expected one of {CASES}")
    defaults = CASE_DEFAULTS[cfg.case]
    filled = {k: v for k, v in defaults.items() if getattr(cfg, k) is None}
    # a user-given step mode replaces the default one
    if cfg.dt is not None:
        filled.pop("cfl", None)
    if cfg.cfl is not None:
        filled.pop("dt", None)
    if cfg.every is None:
        filled.setdefault("every", 0)
    if cfg.formula is None:
        filled["formula"] = "local-symmetric" if cfg.flux == "wintermeyer-symmetric" else "new"
    cfg = replace(cfg, **filled)
    if cfg.flux not in FLUX_VARIANTS:
        raise ConfigError(f"solver.flux: unknown variant {cfg.flux!r}; expected one of {FLUX_VARIANTS}")
    if cfg.formula not in FORMULAS:
        raise ConfigError(f"solver.formula: unknown formula {cfg.formula!r}; expected one of {FORMULAS}")
    try:
        check_formulation(cfg.flux, cfg.formula)
    except UnsupportedFormulationError as exc:
        raise ConfigError(f"solver.flux/solver.formula: incompatible combination: {exc}") from None
    if cfg.limiter not in LIMITERS:
        raise ConfigError(f"solver.limiter: unknown limiter {cfg.limiter!r}; expected one of {LIMITERS}")
    if cfg.case == "channel" and cfg.limiter not in ("fct", "element"):
        raise ConfigError("solver.limiter: the channel case needs 'fct' or 'element'")
    if cfg.threads != 1:
        raise ConfigError("solver.threads: only single-threaded runs are supported")
    if cfg.N is not None and not 1 <= cfg.N <= 15:
        raise ConfigError("case.N: polynomial degree must be in 1..15")
    if cfg.dt is not None and cfg.cfl is not None:
        raise ConfigError("time.dt/time.cfl: give only one of them")
    for name, val in (("time.t_end", cfg.t_end), ("time.cfl", cfg.cfl), ("time.dt", cfg.dt)):
        if val is not None and not val > 0:
            raise ConfigError(f"{name}: must be positive")
    if cfg.every < 0 or cfg.gauge_every < 1:
        raise ConfigError("output.every must be >= 0 and output.gauge_every >= 1")
    for n in cfg.elements:
        side = int(round(np.sqrt(n)))
        if side * side != n or n < 1:
            raise ConfigError(f"case.elements: {n} is not a square number of elements")
    if len(cfg.elements) < 2:
        raise ConfigError("case.elements: the convergence study needs at least two meshes")
    if cfg.mesh is not None and not Path(cfg.mesh).is_file():
        raise ConfigError(f"case.mesh: file not found: {cfg.mesh}")
    return cfg


# --- field snapshots -------------------------------------------------------------------

SNAPSHOT_COLUMNS = ("element", "i", "j", "x", "y", "h", "hv1", "hv2", "b", "H", "alpha")


@dataclass
class Snapshot:
    t: float
    N: int
    n_elements: int
    data: dict = field(default_factory=dict)

    def column(self, name):
        """Column reshaped to ``(E, n, n)``."""
        n = self.N + 1
        return self.data[name].reshape(self.n_elements, n, n)

    def state(self):
        return np.stack([self.column("h"), self.column("hv1"), self.column("hv2")], axis=-1)


def _g(v):
    return f"{v:.17g}"


def write_field_snapshot(path, u, b, mesh, t, alpha=None):
    """One row per node: element, i, j, x, y, h, hv1, hv2, b, H, nodal alpha (17 digits)."""
    E, n = u.shape[0], u.shape[1]
    alpha = np.zeros(u.shape[:3]) if alpha is None else np.asarray(alpha, dtype=float)
    e, i, j = np.meshgrid(np.arange(E), np.arange(n), np.arange(n), indexing="ij")
    cols = [mesh.coords[..., 0], mesh.coords[..., 1], u[..., 0], u[..., 1], u[..., 2], b, u[..., 0] + b, alpha]
    lines = [
        "# swedg field snapshot",
        f"# t = {_g(float(t))}",
        f"# N = {mesh.N}",
        f"# elements = {E}",
        "# " + " ".join(SNAPSHOT_COLUMNS),
    ]
    flat = [c.reshape(-1) for c in cols]
    for k, (ee, ii, jj) in enumerate(zip(e.reshape(-1), i.reshape(-1), j.reshape(-1))):
        lines.append(f"{ee} {ii} {jj} " + " ".join(_g(c[k]) for c in flat))
    Path(path).write_text("\n".join(lines) + "\n")
    return path


def read_field_snapshot(path):
    header = {}
    rows = []
    with open(path) as fh:
        for line in fh:
            if line.startswith("#"):
                body = line[1:].strip()
                if "=" in body:
                    k, v = body.split("=", 1)
                    header[k.strip()] = v.strip()
                continue
            if line.strip():
                rows.append(line.split())
    try:
        t, N, E = float(header["t"]), int(header["N"]), int(header["elements"])
    except KeyError as exc:
        raise ValueError(f"{path}: snapshot header lacks {exc}") from None
    arr = np.array(rows, dtype=float).reshape(-1, len(SNAPSHOT_COLUMNS))
    if arr.shape[0] != E * (N + 1) ** 2:
        raise ValueError(f"{path}: expected {E * (N + 1) ** 2} rows, found {arr.shape[0]}")
    data = {name: arr[:, k] for k, name in enumerate(SNAPSHOT_COLUMNS)}
    for name in ("element", "i", "j"):
        data[name] = data[name].astype(int)
    return Snapshot(t, N, E, data)


# --- reports ---------------------------------------------------------------------------


def write_report(path, entries):
    """``key = value`` lines; floats with 17 significant digits."""
    lines = []
    for k, v in entries.items():
        if isinstance(v, (float, np.floating)):
            v = _g(float(v))
        lines.append(f"{k} = {v}")
    Path(path).write_text("\n".join(lines) + "\n")
    return path


def format_eoc_table(elements, errors, orders):
    """Table with columns ``N_elem | L2(h) EOC | L2(hv1) EOC | L2(hv2) EOC``; undefined orders show as '--'."""
    head = f"{'N_elem':>7} | {'L2(h)':>24} {'EOC':>6} | {'L2(hv1)':>24} {'EOC':>6} | {'L2(hv2)':>24} {'EOC':>6}"
    out = [head, "-" * len(head)]
    for r, ne in enumerate(elements):
        cells = []
        for k in range(3):
            o = orders[r, k]
            cells.append(f"{_g(errors[r, k]):>24} {'--' if not np.isfinite(o) else f'{o:.2f}':>6}")
        out.append(f"{ne:>7} | " + " | ".join(cells))
    return "\n".join(out)
