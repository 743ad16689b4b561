"""``key = value`` configuration files with [schedule], [codec], [denoiser], [job] sections.

Values given on the command line override the file. Every key is typed and
validated; unknown sections or keys are rejected by name.
"""
import configparser
import copy
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError, RangeError
from .pipeline import canonical_mode


def _bool(text):
    v = str(text).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt_str(text):
    text = str(text).strip()
    return text or None


# section -> key -> (parser, default)
SCHEMA = {
    "schedule": {
        "T": (int, 50),
        "beta_start": (float, 0.00085),
        "beta_end": (float, 0.012),
        "train_steps": (int, 1000),
        "beta_schedule": (str, "scaled_linear"),
    },
    "codec": {
        "codec": (str, "identity"),
        "factor": (int, 8),
        "latent_channels": (int, 4),
        "hidden": (int, 16),
        "seed": (int, 0),
    },
    "denoiser": {
        "levels": (int, 2),
        "base_channels": (int, 16),
        "groups": (int, 4),
        "temb_dim": (int, 64),
        "weight_std": (float, 0.02),
        "seed": (int, 0),
        "weights": (_opt_str, None),
    },
    "job": {
        "content": (_opt_str, None),
        "style": (_opt_str, None),
        "S": (float, 0.5),
        "seed": (int, 0),
        "mode": (str, "strdp"),
        "trajectory": (str, "iterative"),
        "match_colors": (_bool, False),
        "output": (str, "out"),
    },
}


@dataclass
class Config:
    schedule: dict = field(default_factory=dict)
    codec: dict = field(default_factory=dict)
    denoiser: dict = field(default_factory=dict)
    job: dict = field(default_factory=dict)

    def as_dict(self):
        return {s: dict(getattr(self, s)) for s in SCHEMA}

    def digest(self) -> str:
        d = self.as_dict()
        d["job"].pop("output", None)
        blob = json.dumps(d, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def defaults() -> Config:
    return Config(**{s: {k: copy.copy(d) for k, (_, d) in keys.items()} for s, keys in SCHEMA.items()})


def _set(cfg, section, key, raw):
    if section not in SCHEMA:
        raise ConfigError(f"unknown section [{section}]")
    if key not in SCHEMA[section]:
        raise ConfigError(f"unknown key {key!r} in section [{section}]")
    parse, _ = SCHEMA[section][key]
    try:
        value = parse(raw)
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key}: {exc}") from None
    getattr(cfg, section)[key] = value


def parse_config(path=None, overrides=None) -> Config:
    """Resolve defaults <- file at ``path`` <- ``overrides`` {(section, key): value}."""
    cfg = defaults()
    if path is not None:
        parser = configparser.ConfigParser(
            interpolation=None, inline_comment_prefixes=("#", ";"), strict=True)
        parser.optionxform = str
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from None
        try:
            parser.read_string(text, source=str(path))
        except configparser.MissingSectionHeaderError:
            raise ConfigError(f"{path}: keys must sit inside a [section]") from None
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from None
        for section in parser.sections():
            for key, raw in parser.items(section):
                _set(cfg, section, key, raw)
    for (section, key), value in (overrides or {}).items():
        if value is not None:
            _set(cfg, section, key, value)
    validate(cfg)
    return cfg


def validate(cfg: Config):
    S = cfg.job["S"]
    if not 0.0 <= S <= 1.0:
        raise RangeError(f"[job] S = {S} outside [0, 1]")
    if cfg.schedule["T"] < 1:
        raise RangeError(f"[schedule] T = {cfg.schedule['T']} must be >= 1")
    if cfg.codec["codec"] not in ("identity", "toy"):
        raise ConfigError(f"[codec] codec = {cfg.codec['codec']!r}; expected identity or toy")
    if cfg.job["trajectory"] not in ("iterative", "direct"):
        raise ConfigError(f"[job] trajectory = {cfg.job['trajectory']!r}; expected iterative or direct")
    cfg.job["mode"] = canonical_mode(cfg.job["mode"])


def require_paths(cfg: Config, *keys):
    for key in keys:
        value = cfg.job.get(key)
        if not value:
            raise ConfigError(f"missing required path [job] {key}")
        if not Path(value).is_file():
            raise ConfigError(f"[job] {key} = {value}: file not found")
