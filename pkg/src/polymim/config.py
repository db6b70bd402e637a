"""Flat key=value run configuration.

A config file is plain text: one ``section.key = value`` per line, ``#``
comments, blank lines ignored.  Keys mirror the knobs of the mesh,
solver, advection and time-stepping layers; anything unknown is an error
so typos cannot silently fall back to defaults.
"""

from dataclasses import dataclass, fields

from .errors import ConfigError


def _parse_bool(s):
    v = s.strip().lower()
    if v in ("on", "true", "yes", "1"):
        return True
    if v in ("off", "false", "no", "0"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


@dataclass
class RunConfig:
    """Everything a run needs beyond the case choice itself."""

    mesh_family: str = "hex"          # mesh.family
    mesh_level: int = 3               # mesh.level
    dt: float = None                  # time.dt (None: case default)
    days: float = 5.0                 # time.days
    alpha: float = 0.5                # time.alpha, implicit off-centring
    newton_iters: int = 4             # solver.newton_iters
    jacobi_outer: int = 10            # solver.jacobi_outer
    jacobi_inner: int = 2             # solver.jacobi_inner
    helmholtz_tol: float = 1e-8       # solver.helmholtz_tol
    tight: bool = False               # solver.tight
    inverse_terms: int = None         # solver.inverse_terms (None: default 1)
    limiter: bool = False             # advection.limiter
    order: int = 2                    # advection.order
    output_every: int = 24            # output.every_steps
    output_vtk: bool = False          # output.vtk

    _KEYS = {
        "mesh.family": ("mesh_family", str),
        "mesh.level": ("mesh_level", int),
        "time.dt": ("dt", float),
        "time.days": ("days", float),
        "time.alpha": ("alpha", float),
        "solver.newton_iters": ("newton_iters", int),
        "solver.jacobi_outer": ("jacobi_outer", int),
        "solver.jacobi_inner": ("jacobi_inner", int),
        "solver.helmholtz_tol": ("helmholtz_tol", float),
        "solver.tight": ("tight", _parse_bool),
        "solver.inverse_terms": ("inverse_terms", int),
        "advection.limiter": ("limiter", _parse_bool),
        "advection.order": ("order", int),
        "output.every_steps": ("output_every", int),
        "output.vtk": ("output_vtk", _parse_bool),
    }

    def apply(self, key, value):
        if key not in self._KEYS:
            known = ", ".join(sorted(self._KEYS))
            raise ConfigError(f"unknown config key {key!r} (known: {known})")
        attr, conv = self._KEYS[key]
        try:
            setattr(self, attr, conv(value))
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {exc}") from None
        return self

    def validate(self):
        if self.mesh_family not in ("hex", "cube"):
            raise ConfigError(f"mesh.family must be hex or cube, "
                              f"got {self.mesh_family!r}")
        if self.order not in (1, 2):
            raise ConfigError("advection.order must be 1 or 2")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError("time.alpha must lie in [0, 1]")
        if self.newton_iters < 1:
            raise ConfigError("solver.newton_iters must be >= 1")
        return self


def parse_config(text, base=None):
    """Parse flat key=value text into a validated RunConfig."""
    cfg = base or RunConfig()
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {ln}: expected key = value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        try:
            cfg.apply(key, value)
        except ConfigError as exc:
            raise ConfigError(f"line {ln}: {exc}") from None
    return cfg.validate()


def load_config(path, base=None):
    with open(path) as f:
        return parse_config(f.read(), base=base)


def config_summary(cfg):
    """One line per key, the file format itself; round-trips."""
    lines = []
    for key, (attr, _) in sorted(RunConfig._KEYS.items()):
        v = getattr(cfg, attr)
        if v is None:
            continue
        if isinstance(v, bool):
            v = "on" if v else "off"
        lines.append(f"{key} = {v}")
    return "\n".join(lines) + "\n"
