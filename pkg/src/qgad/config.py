"""Config files: INI-style sections of flat ``key = value`` pairs.

A file without any section header is read as a single ``[preprocess]``
section, so a bare list of preprocessing keys is a valid config.
"""

import configparser
import dataclasses
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError, ParseError

QUANT_ALGORITHMS = ("static", "adaptive", "none")
NORM_SCOPES = ("all", "train")


def read_config(path):
    """Return ``{section: {key: raw string}}`` for the file at ``path``."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config_text(text)


def parse_config_text(text):
    stripped = [ln.strip() for ln in text.splitlines()]
    first = next((ln for ln in stripped if ln and ln[0] not in "#;"), "")
    if not first.startswith("["):
        text = "[preprocess]\n" + text
    parser = configparser.ConfigParser(
        interpolation=None, inline_comment_prefixes=("#", ";"), delimiters=("=",)
    )
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ParseError(str(exc), getattr(exc, "lineno", None)) from exc
    return {name: dict(parser[name]) for name in parser.sections()}


def _coerce(raw, typ, key):
    try:
        if typ is bool:
            low = str(raw).strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        return typ(str(raw).strip()) if isinstance(raw, str) else typ(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{key}: cannot interpret {raw!r} as {typ.__name__}") from exc


def from_mapping(cls, mapping, section="config"):
    """Build dataclass ``cls`` from string values, rejecting unknown keys."""
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(mapping) - set(fields))
    if unknown:
        raise ConfigError(f"[{section}] unknown keys: {', '.join(unknown)}")
    kwargs = {}
    for key, raw in mapping.items():
        typ = fields[key].type
        if isinstance(typ, str):
            typ = {"int": int, "float": float, "str": str, "bool": bool}.get(typ, str)
        kwargs[key] = _coerce(raw, typ, key)
    obj = cls(**kwargs)
    obj.validate()
    return obj


def split_list(raw, typ):
    """Parse a comma separated list such as ``8, 16``."""
    items = [s.strip() for s in str(raw).split(",") if s.strip()]
    return [_coerce(s, typ, raw) for s in items]


@dataclass(frozen=True)
class PreprocessConfig:
    """Data preparation settings.

    Key names follow the software variable names used by the original
    detector (``look_back``, ``in_grid``...), plus ``target_channel``,
    ``seed``, ``decimation`` and ``norm_scope``. ``norm_scope='all'``
    normalizes with bounds from train and test data together;
    ``'train'`` uses the training data alone and clips the rest.
    """

    look_back: int = 16
    look_ahead: int = 1
    in_grid: int = 16
    out_grid: int = 8
    in_algorithm: str = "adaptive"
    out_algorithm: str = "adaptive"
    samples_percentage: float = 1.0
    target_channel: int = 0
    seed: int = 0
    decimation: int = 1
    norm_scope: str = "all"

    def validate(self):
        if self.look_back < 1:
            raise ConfigError("look_back must be a positive integer")
        if self.look_ahead < 1:
            raise ConfigError("look_ahead must be a positive integer")
        if self.in_grid < 2 or self.out_grid < 2:
            raise ConfigError("in_grid and out_grid must be >= 2")
        for key in ("in_algorithm", "out_algorithm"):
            if getattr(self, key) not in QUANT_ALGORITHMS:
                raise ConfigError(f"{key} must be one of {QUANT_ALGORITHMS}")
        if not 0.0 < self.samples_percentage <= 1.0:
            raise ConfigError("samples_percentage must lie in (0, 1]")
        if self.target_channel < 0:
            raise ConfigError("target_channel must be >= 0")
        if self.decimation < 1:
            raise ConfigError("decimation must be >= 1")
        if self.norm_scope not in NORM_SCOPES:
            raise ConfigError(f"norm_scope must be one of {NORM_SCOPES}")
        return self

    def replace(self, **changes):
        return dataclasses.replace(self, **changes).validate()

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, mapping):
        return from_mapping(cls, mapping, "preprocess")

    @classmethod
    def from_file(cls, path):
        sections = read_config(path)
        return cls.from_dict(sections.get("preprocess", {}))

    def to_text(self):
        return "".join(f"{k} = {v}\n" for k, v in self.to_dict().items())
