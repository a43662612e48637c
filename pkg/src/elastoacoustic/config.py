"""Run configuration and its plain-text format.

The config file uses ``[section]`` headers with ``key = value`` lines;
lists are comma separated.  CLI flags override file keys, and the
ELASTOACOUSTIC_OUTDIR environment variable sets the output root.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace

from . import meshing
from .assembly import MaterialField, FAMILIES


class ConfigError(Exception):
    pass


@dataclass(frozen=True)
class RunConfig:
    # geometry
    geometry: str = "omega1"
    fluid_width: float = None
    fluid_height: float = None
    wall: float = None
    wall_height: float = None
    step: float = None
    clamp: str = None
    # discretization
    family: str = "taylor-hood"
    levels: tuple = (8, 10, 12, 14)
    assembly_degree: int = 4
    estimator_degree: int = 5
    projection_degree: int = 1
    # materials
    rho_s: float = 7700.0
    e_modulus: float = 1.44e11
    nu: float = 0.35
    rho_f: float = 1000.0
    c: float = 1430.0
    g: float = 9.8
    nu_list: tuple = ()
    # eigensolver
    n_modes: int = 4
    shift: float = None
    window: tuple = (400.0, 2800.0)
    seed: int = 20260808
    # adaptivity
    theta: float = 0.5
    max_dofs: int = 100000
    max_iterations: int = 40
    initial_level: int = 2
    mode_index: int = 1
    reference_omega: tuple = ()
    # output
    out_dir: str = "."
    workers: int = 1

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown family {self.family!r}")
        if self.geometry not in meshing.PRESETS:
            raise ConfigError(f"unknown geometry preset {self.geometry!r}")
        if not 0.0 < self.theta <= 1.0:
            raise ConfigError("theta must lie in (0, 1]")
        for name in ("rho_s", "e_modulus", "rho_f", "c", "g"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        for nu in (self.nu,) + tuple(self.nu_list):
            if not 0.0 < nu <= 0.5:
                raise ConfigError("nu values must lie in (0, 1/2]")

    def geometry_spec(self) -> meshing.GeometrySpec:
        kwargs = {}
        for key in ("fluid_width", "fluid_height", "wall", "wall_height",
                    "step", "clamp"):
            val = getattr(self, key)
            if val is not None:
                kwargs[key] = val
        builder = meshing.PRESETS[self.geometry]
        import inspect
        allowed = set(inspect.signature(builder).parameters)
        kwargs = {k: v for k, v in kwargs.items() if k in allowed}
        return builder(**kwargs)

    def materials(self, nu=None) -> MaterialField:
        return MaterialField(E=self.e_modulus,
                             nu=self.nu if nu is None else nu,
                             rho_s=self.rho_s, rho_f=self.rho_f,
                             c=self.c, g=self.g)

    def with_overrides(self, **kwargs) -> "RunConfig":
        kwargs = {k: v for k, v in kwargs.items() if v is not None}
        return replace(self, **kwargs)

    def resolved_out_dir(self) -> str:
        root = os.environ.get("ELASTOACOUSTIC_OUTDIR")
        if root:
            return os.path.join(root, self.out_dir)
        return self.out_dir


_FLOAT_KEYS = {"fluid_width", "fluid_height", "wall", "wall_height",
               "step", "rho_s", "e_modulus", "nu", "rho_f", "c", "g",
               "shift", "theta"}
_INT_KEYS = {"assembly_degree", "estimator_degree", "projection_degree",
             "n_modes", "seed", "max_dofs", "max_iterations",
             "initial_level", "mode_index", "workers"}
_LIST_FLOAT_KEYS = {"nu_list", "window", "reference_omega"}
_LIST_INT_KEYS = {"levels"}
_STR_KEYS = {"geometry", "clamp", "family", "out_dir"}


def parse_config(text: str) -> dict:
    """Parse the sectioned key = value format into a flat dict."""
    values = {}
    section = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got "
                              f"{raw!r}")
        key, _, val = line.partition("=")
        key = key.strip().replace("-", "_")
        val = val.strip()
        if key in _FLOAT_KEYS:
            values[key] = float(val)
        elif key in _INT_KEYS:
            values[key] = int(val)
        elif key in _LIST_FLOAT_KEYS:
            values[key] = tuple(float(v) for v in val.split(",") if
                                v.strip())
        elif key in _LIST_INT_KEYS:
            values[key] = tuple(int(v) for v in val.split(",") if
                                v.strip())
        elif key in _STR_KEYS:
            values[key] = val
        else:
            raise ConfigError(f"line {lineno}: unknown key {key!r}"
                              + (f" in section [{section}]" if section
                                 else ""))
    return values


def load_config(path) -> RunConfig:
    with open(path) as f:
        return RunConfig(**parse_config(f.read()))
