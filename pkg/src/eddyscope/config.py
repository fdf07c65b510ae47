"""Experiment configuration files (INI syntax, one section per concern)."""
from __future__ import annotations

import configparser
import json
import os
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .errors import ConfigError
from .tensor_core import REFERENCE_ALPHA, REFERENCE_MU0, REFERENCE_OMEGA, REFERENCE_SIGMA, PhysicalConfig


def _floats(text: str) -> list:
    text = text.strip()
    if not text:
        return []
    return [float(t) for t in text.replace(";", ",").split(",")]


def _fmt_floats(values) -> str:
    return ", ".join(repr(float(v)) for v in values)


@dataclass
class GeometrySection:
    L: float = 1.0
    n_side: int = 16
    half_width: float = 2.0
    p: list = field(default_factory=lambda: [0.0, 0.0, 1.0])
    q: list = field(default_factory=lambda: [0.0, 0.0, 1.0])


@dataclass
class PhysicsSection:
    mu0: float = REFERENCE_MU0
    sigma_star: float = REFERENCE_SIGMA
    alpha: float = REFERENCE_ALPHA
    omega: float = REFERENCE_OMEGA

    def physical(self) -> PhysicalConfig:
        return PhysicalConfig(self.mu0, self.sigma_star, self.alpha, self.omega)


@dataclass
class TargetSection:
    shape: str = "ellipsoid"
    parameters: dict = field(default_factory=dict)
    rotation_axis: list = field(default_factory=lambda: [0.0, 0.0, 1.0])
    rotation_angle: float = 0.0
    scale: float = 1.0
    center: list = field(default_factory=lambda: [0.0, 0.0, 0.0])
    h: float = 0.1
    label: str = ""


@dataclass
class SearchSection:
    step: float = 0.02
    half_width: float = 1.0


@dataclass
class DictionarySection:
    provenance: str = "paper_table"
    path: str = ""
    h: float = 0.1
    shapes: list = field(default_factory=lambda: ["cube", "cylinder", "ellipsoid",
                                                  "L-shape", "prism", "sphere"])


@dataclass
class ResolutionSection:
    L_values: list = field(default_factory=lambda: [1.0])
    grid_step: float = 0.0  # 0 selects L / 40
    target_h: float = 0.2
    peak_rel: float = 0.5
    dip_rel: float = 0.75


@dataclass
class ExperimentConfig:
    """One experiment: geometry, constants, target, frequencies, noise, seeds."""

    name: str = "experiment"
    frequencies: list = field(default_factory=lambda: [REFERENCE_OMEGA])
    noise_levels: list = field(default_factory=lambda: [0.0])
    trials: int = 1
    seed_base: int = 0
    output_dir: str = "out"
    geometry: GeometrySection = field(default_factory=GeometrySection)
    physics: PhysicsSection = field(default_factory=PhysicsSection)
    target: TargetSection = field(default_factory=TargetSection)
    search: SearchSection = field(default_factory=SearchSection)
    dictionary: DictionarySection = field(default_factory=DictionarySection)
    resolution: ResolutionSection = field(default_factory=ResolutionSection)
    source: str = field(default="", compare=False)

    _SECTIONS = ("geometry", "physics", "target", "search", "dictionary", "resolution")

    def validate(self) -> "ExperimentConfig":
        if self.trials < 1:
            raise ConfigError("trials must be at least 1")
        if not self.frequencies or any(w <= 0 for w in self.frequencies):
            raise ConfigError("frequencies must be a nonempty list of positive values")
        if any(not 0 <= v < 1 for v in self.noise_levels):
            raise ConfigError("noise levels must lie in [0, 1)")
        if self.geometry.L <= 0 or self.geometry.n_side < 1:
            raise ConfigError("geometry needs L > 0 and n_side >= 1")
        if self.target.scale <= 0 or self.target.h <= 0:
            raise ConfigError("target scale and h must be positive")
        if self.dictionary.provenance not in ("paper_table", "solver", "file"):
            raise ConfigError(f"unknown dictionary provenance {self.dictionary.provenance!r}")
        if self.dictionary.provenance == "file":
            path = self.resolve_path(self.dictionary.path)
            if not os.path.isfile(path):
                raise ConfigError(f"dictionary file {path!r} does not exist")
        try:
            self.physics.physical()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        return self

    def resolve_path(self, path: str) -> str:
        """Paths in a config file are relative to that file."""
        if not path or os.path.isabs(path) or not self.source:
            return path
        return os.path.join(os.path.dirname(os.path.abspath(self.source)), path)

    def to_text(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        cp["experiment"] = {
            "name": self.name,
            "frequencies": _fmt_floats(self.frequencies),
            "noise_levels": _fmt_floats(self.noise_levels),
            "trials": str(self.trials),
            "seed_base": str(self.seed_base),
            "output_dir": self.output_dir,
        }
        for sec in self._SECTIONS:
            obj = getattr(self, sec)
            out = {}
            for f in fields(obj):
                v = getattr(obj, f.name)
                if isinstance(v, dict):
                    out[f.name] = json.dumps(v, sort_keys=True)
                elif isinstance(v, list) and v and isinstance(v[0], str):
                    out[f.name] = ", ".join(v)
                elif isinstance(v, list):
                    out[f.name] = _fmt_floats(v)
                elif isinstance(v, float):
                    out[f.name] = repr(v)
                else:
                    out[f.name] = str(v)
            cp[sec] = out
        buf = _Buffer()
        cp.write(buf)
        return buf.text

    @classmethod
    def from_text(cls, text: str, source: str = "") -> "ExperimentConfig":
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse config: {exc}") from exc
        unknown = set(cp.sections()) - {"experiment", *cls._SECTIONS}
        if unknown:
            raise ConfigError(f"unknown sections {sorted(unknown)}")
        cfg = cls(source=source)
        try:
            if cp.has_section("experiment"):
                e = cp["experiment"]
                _check_keys(e, {"name", "frequencies", "noise_levels", "trials",
                                "seed_base", "output_dir"}, "experiment")
                cfg.name = e.get("name", cfg.name)
                if "frequencies" in e:
                    cfg.frequencies = _floats(e["frequencies"])
                if "noise_levels" in e:
                    cfg.noise_levels = _floats(e["noise_levels"])
                cfg.trials = e.getint("trials", cfg.trials)
                cfg.seed_base = e.getint("seed_base", cfg.seed_base)
                cfg.output_dir = e.get("output_dir", cfg.output_dir)
            for sec in cls._SECTIONS:
                if not cp.has_section(sec):
                    continue
                obj = getattr(cfg, sec)
                proxy = cp[sec]
                _check_keys(proxy, {f.name for f in fields(obj)}, sec)
                for f in fields(obj):
                    if f.name not in proxy:
                        continue
                    raw = proxy[f.name]
                    default = getattr(obj, f.name)
                    setattr(obj, f.name, _parse_like(default, raw))
        except (ValueError, json.JSONDecodeError) as exc:
            raise ConfigError(f"bad value in config: {exc}") from exc
        return cfg.validate()

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path!r}: {exc}") from exc
        return cls.from_text(text, source=os.fspath(path))

    def as_dict(self) -> dict:
        d = asdict(self)
        d.pop("source", None)
        return d


class _Buffer:
    def __init__(self):
        self.text = ""

    def write(self, s):
        self.text += s


def _check_keys(proxy, allowed, section):
    extra = set(proxy.keys()) - set(allowed)
    if extra:
        raise ConfigError(f"unknown keys {sorted(extra)} in [{section}]")


def _parse_like(default, raw: str):
    if isinstance(default, dict):
        value = json.loads(raw) if raw.strip() else {}
        if not isinstance(value, dict):
            raise ValueError("expected a JSON object")
        return value
    if isinstance(default, list):
        if default and isinstance(default[0], str):
            return [t.strip() for t in raw.split(",") if t.strip()]
        return _floats(raw)
    if isinstance(default, bool):
        return raw.strip().lower() in ("1", "true", "yes", "on")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw.strip()


def standard_frequencies(count: int = 19) -> list:
    """``omega_n = 73.5 + 10 n`` for ``n = 1 .. count``."""
    return [73.5 + 10.0 * n for n in range(1, count + 1)]


def target_shape(cfg: ExperimentConfig):
    """ShapeSpec of the configured target (before rotation and scaling)."""
    from .solver.shapes import LABEL_TO_KIND, ShapeSpec

    kind = LABEL_TO_KIND.get(cfg.target.shape, cfg.target.shape)
    params = {k: tuple(v) if isinstance(v, list) else v
              for k, v in cfg.target.parameters.items()}
    try:
        return ShapeSpec(kind, params)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def target_rotation(cfg: ExperimentConfig):
    from .tensor_core import Rotation

    return Rotation.from_axis_angle(np.asarray(cfg.target.rotation_axis, float),
                                    cfg.target.rotation_angle)
