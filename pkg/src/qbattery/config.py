"""Run configuration files: flat ``section.key = value`` lines in TOML syntax.

Example::

    engine = "cumulant"
    lattice.n_sites = 80
    lattice.delta_b = 0.25
    integrator.dt = 0.01
    initial.kind = "fully-charged"
    output.path = "fig3_n80_d.csv"

``initial.kind = "pure-1x"`` additionally takes ``initial.amp_g = [re, im]``
and ``initial.amp_e = [[site, re, im], ...]`` listing the nonzero excited
amplitudes by 1-based site.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from qbattery.integrate import IntegratorConfig
from qbattery.lattice import LatticeSpec, ValidationError
from qbattery.oracle import MAX_SITES

ENGINES = ("single-excitation", "cumulant", "oracle")
INITIAL_KINDS = ("fully-charged", "ground", "pure-1x")
FORMATS = ("csv", "json")
CONVENTIONS = ("operator", "full-rate")
NORM_TOL = 1e-9

_ALLOWED_INITIAL = {
    "single-excitation": ("pure-1x",),
    "cumulant": ("fully-charged", "ground"),
    "oracle": INITIAL_KINDS,
}


class ConfigParseError(ValueError):
    """The file is not valid flat TOML or holds unknown keys or wrong types."""


@dataclass(frozen=True)
class InitialState:
    kind: str = "fully-charged"
    amp_g: complex = 0j
    amp_e: tuple[tuple[int, complex], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "amp_g", complex(self.amp_g))
        object.__setattr__(self, "amp_e", tuple((int(j), complex(a)) for j, a in self.amp_e))

    def norm_error(self) -> float:
        total = abs(self.amp_g) ** 2 + sum(abs(a) ** 2 for _, a in self.amp_e)
        return abs(total - 1.0)

    def excited(self) -> dict[int, complex]:
        return dict(self.amp_e)

    def normalized(self) -> tuple[complex, dict[int, complex]]:
        """Amplitudes rescaled to unit norm (the config tolerance is looser than the state's)."""
        total = math.sqrt(abs(self.amp_g) ** 2 + sum(abs(a) ** 2 for _, a in self.amp_e))
        return self.amp_g / total, {j: a / total for j, a in self.amp_e}


@dataclass(frozen=True)
class RunConfig:
    engine: str
    lattice: LatticeSpec
    integrator: IntegratorConfig = field(default_factory=IntegratorConfig)
    observables: tuple[str, ...] = ()
    initial: InitialState = field(default_factory=InitialState)
    output_path: str = ""
    output_format: str = "csv"
    oracle_frame: float = 0.0
    convention: str = "operator"

    def __post_init__(self):
        object.__setattr__(self, "observables", tuple(self.observables))
        if self.engine not in ENGINES:
            raise ValidationError(f"engine must be one of {ENGINES}, got {self.engine!r}")
        if self.initial.kind not in INITIAL_KINDS:
            raise ValidationError(f"initial.kind must be one of {INITIAL_KINDS}")
        if self.initial.kind not in _ALLOWED_INITIAL[self.engine]:
            raise ValidationError(
                f"initial state {self.initial.kind!r} is not supported by the {self.engine} engine")
        if self.initial.kind == "pure-1x":
            n = self.lattice.n_sites
            sites = [j for j, _ in self.initial.amp_e]
            if len(set(sites)) != len(sites) or any(not 1 <= j <= n for j in sites):
                raise ValidationError(f"initial.amp_e sites must be distinct and within 1..{n}")
            if self.initial.norm_error() > NORM_TOL:
                raise ValidationError(
                    f"pure-1x amplitudes are not normalized (off by {self.initial.norm_error():.3g})")
        if self.engine == "oracle" and self.lattice.n_sites > MAX_SITES:
            raise ValidationError(f"oracle engine is capped at {MAX_SITES} sites")
        if self.engine == "cumulant" and self.lattice.gamma_collective != 0:
            raise ValidationError("the cumulant engine needs lattice.gamma_collective = 0; use the oracle")
        if self.engine == "single-excitation" and self.lattice.gamma_collective != 0:
            raise ValidationError("the single-excitation engine needs lattice.gamma_collective = 0")
        if self.output_format not in FORMATS:
            raise ValidationError(f"output.format must be one of {FORMATS}")
        if self.convention not in CONVENTIONS:
            raise ValidationError(f"report.convention must be one of {CONVENTIONS}")
        if not math.isfinite(self.oracle_frame):
            raise ValidationError("oracle.frame must be finite")
        if self.oracle_frame != 0 and self.engine != "oracle":
            raise ValidationError("oracle.frame only applies to the oracle engine")


_LATTICE_KEYS = tuple(f.name for f in dataclasses.fields(LatticeSpec))
_INTEGRATOR_KEYS = tuple(f.name for f in dataclasses.fields(IntegratorConfig))


def _number(key, v, kind=float):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigParseError(f"{key} must be a number, got {v!r}")
    if kind is int:
        if isinstance(v, float) and not v.is_integer():
            raise ConfigParseError(f"{key} must be an integer, got {v!r}")
        return int(v)
    return float(v)


def _complex(key, v):
    if not (isinstance(v, list) and len(v) == 2):
        raise ConfigParseError(f"{key} must be [re, im], got {v!r}")
    return complex(_number(key, v[0]), _number(key, v[1]))


def _section(data: dict, name: str, allowed) -> dict:
    sec = data.pop(name, {})
    if not isinstance(sec, dict):
        raise ConfigParseError(f"{name} must be a section of dotted keys")
    unknown = set(sec) - set(allowed)
    if unknown:
        raise ConfigParseError(f"unknown keys {sorted(f'{name}.{k}' for k in unknown)}")
    return sec


def from_mapping(data: dict) -> RunConfig:
    """Build a :class:`RunConfig` from the nested dict produced by the TOML reader."""
    data = dict(data)
    engine = data.pop("engine", None)
    if not isinstance(engine, str):
        raise ConfigParseError("engine is required and must be a string")
    lat = _section(data, "lattice", _LATTICE_KEYS)
    integ = _section(data, "integrator", _INTEGRATOR_KEYS)
    init = _section(data, "initial", ("kind", "amp_g", "amp_e"))
    out = _section(data, "output", ("path", "format"))
    orc = _section(data, "oracle", ("frame",))
    rep = _section(data, "report", ("convention",))
    obs = data.pop("observables", [])
    if data:
        raise ConfigParseError(f"unknown keys {sorted(data)}")
    if not isinstance(obs, list) or not all(isinstance(o, str) for o in obs):
        raise ConfigParseError("observables must be a list of strings")
    if "n_sites" not in lat:
        raise ConfigParseError("lattice.n_sites is required")
    lattice = LatticeSpec(**{k: _number(f"lattice.{k}", v, int if k == "n_sites" else float)
                             for k, v in lat.items()})
    integrator = IntegratorConfig(**{k: _number(f"integrator.{k}", v, int if k == "sample_every" else float)
                                     for k, v in integ.items()})
    kind = init.get("kind", "fully-charged")
    if not isinstance(kind, str):
        raise ConfigParseError("initial.kind must be a string")
    amp_g = _complex("initial.amp_g", init["amp_g"]) if "amp_g" in init else 0j
    amp_e = []
    raw = init.get("amp_e", [])
    if not isinstance(raw, list):
        raise ConfigParseError("initial.amp_e must be a list of [site, re, im]")
    for entry in raw:
        if not (isinstance(entry, list) and len(entry) == 3):
            raise ConfigParseError(f"initial.amp_e entries must be [site, re, im], got {entry!r}")
        site = _number("initial.amp_e site", entry[0], int)
        amp_e.append((site, _complex("initial.amp_e", entry[1:])))
    if kind != "pure-1x" and (amp_e or "amp_g" in init):
        raise ValidationError("amplitudes are only meaningful for initial.kind = 'pure-1x'")
    for key, val in (("output.path", out.get("path", "")), ("output.format", out.get("format", "csv")),
                     ("report.convention", rep.get("convention", "operator"))):
        if not isinstance(val, str):
            raise ConfigParseError(f"{key} must be a string")
    return RunConfig(
        engine=engine,
        lattice=lattice,
        integrator=integrator,
        observables=tuple(obs),
        initial=InitialState(kind, amp_g, tuple(amp_e)),
        output_path=out.get("path", ""),
        output_format=out.get("format", "csv"),
        oracle_frame=_number("oracle.frame", orc.get("frame", 0.0)),
        convention=rep.get("convention", "operator"),
    )


def parse(text: str) -> RunConfig:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigParseError(str(exc)) from exc
    return from_mapping(data)


def load(path) -> RunConfig:
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise ConfigParseError(f"cannot read {path}: {exc}") from exc
    try:
        return parse(raw.decode("utf-8"))
    except UnicodeDecodeError as exc:
        raise ConfigParseError(f"{path} is not UTF-8") from exc


def _lit(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        return repr(v)  # shortest round-tripping form
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, complex):
        return f"[{_lit(v.real)}, {_lit(v.imag)}]"
    raise TypeError(type(v))


def render(cfg: RunConfig) -> str:
    """Flat text form; ``parse(render(cfg)) == cfg``."""
    lines = [f"engine = {_lit(cfg.engine)}"]
    for k in _LATTICE_KEYS:
        lines.append(f"lattice.{k} = {_lit(getattr(cfg.lattice, k))}")
    for k in _INTEGRATOR_KEYS:
        lines.append(f"integrator.{k} = {_lit(getattr(cfg.integrator, k))}")
    lines.append(f"initial.kind = {_lit(cfg.initial.kind)}")
    if cfg.initial.kind == "pure-1x":
        lines.append(f"initial.amp_g = {_lit(cfg.initial.amp_g)}")
        entries = ", ".join(f"[{j}, {_lit(a.real)}, {_lit(a.imag)}]" for j, a in cfg.initial.amp_e)
        lines.append(f"initial.amp_e = [{entries}]")
    lines.append("observables = [" + ", ".join(_lit(o) for o in cfg.observables) + "]")
    lines.append(f"output.path = {_lit(cfg.output_path)}")
    lines.append(f"output.format = {_lit(cfg.output_format)}")
    lines.append(f"oracle.frame = {_lit(cfg.oracle_frame)}")
    lines.append(f"report.convention = {_lit(cfg.convention)}")
    return "\n".join(lines) + "\n"
