"""Run configuration: sectioned key-value files, strict schema, stable hash.

Unknown sections or keys are rejected; missing keys fall back to the
documented defaults below. The [formats] section is open-ended: each entry
names a header layout. The fully resolved configuration is echoed into the
output directory of every command so results stay reproducible.
"""

from __future__ import annotations

import configparser
import hashlib
import io
from dataclasses import dataclass
from pathlib import Path

from .ingest import DEFAULT_FORMAT, HeaderFormat


class ConfigError(ValueError):
    """Bad key, bad value, or missing required input in the configuration."""


# (section, key) -> (type tag, default). Types: int, float, bool, str,
# int_list (comma separated), optional_str.
SCHEMA: dict[tuple[str, str], tuple[str, object]] = {
    ("run", "seed"): ("int", 13),
    ("run", "out"): ("str", "out"),
    ("run", "sequence_length"): ("int", 64),
    ("ingest", "format"): ("str", "default"),
    ("codebook", "dim"): ("int", 64),
    ("codebook", "prototypes"): ("int", 32),
    ("codebook", "temperature"): ("float", 0.05),
    ("codebook", "fit_on"): ("str", "events"),
    ("codebook", "kmeans_max_iter"): ("int", 100),
    ("codebook", "kmeans_tol"): ("float", 1e-6),
    ("templates", "scales"): ("int_list", (1, 3, 5)),
    ("templates", "scale_normalize"): ("bool", True),
    ("reasoner", "rounds"): ("int", 3),
    ("reasoner", "static_graph"): ("bool", False),
    ("reasoner", "init_noise"): ("float", 0.01),
    ("reasoner", "init_gain"): ("float", 16.0),
    ("env", "services"): ("int", 6),
    ("env", "horizon"): ("int", 32),
    ("env", "use_psi_features"): ("bool", False),
    ("env", "campaign"): ("optional_str", None),
    ("planner", "hidden"): ("int", 64),
    ("planner", "shaping"): ("bool", True),
    ("planner", "shape_in_loss"): ("bool", True),
    ("planner", "prior_grad"): ("str", "both"),
    ("trainer", "epochs"): ("int", 50),
    ("trainer", "patience"): ("int", 5),
    ("trainer", "batch_size"): ("int", 64),
    ("trainer", "lr"): ("float", 5e-5),
    ("trainer", "optimizer"): ("str", "adam"),
    ("trainer", "gamma"): ("float", 0.99),
    ("trainer", "entropy_coef"): ("float", 0.01),
    ("trainer", "lambda_causal"): ("float", 0.5),
    ("trainer", "lambda_rl"): ("float", 1.0),
    ("trainer", "lambda_kl"): ("float", 0.01),
    ("trainer", "causal_temperature"): ("float", 0.1),
    ("trainer", "rl_episodes"): ("int", 8),
    ("trainer", "kl_probe_states"): ("int", 64),
    ("trainer", "val_fraction"): ("float", 0.2),
    ("bench", "repetitions"): ("int", 3),
    ("bench", "sweep_dims"): ("int_list", ()),
}

_ENUMS = {
    ("codebook", "fit_on"): ("events", "window_means"),
    ("planner", "prior_grad"): ("rl", "kl", "both"),
    ("trainer", "optimizer"): ("adam", "sgd"),
}


@dataclass
class RunConfig:
    values: dict[tuple[str, str], object]
    formats: dict[str, HeaderFormat]

    def get(self, section: str, key: str):
        return self.values[(section, key)]

    def header_format(self) -> HeaderFormat:
        name = self.get("ingest", "format")
        if name not in self.formats:
            raise ConfigError(f"ingest.format names unknown format {name!r}")
        return self.formats[name]

    def canonical_text(self) -> str:
        """Deterministic INI rendering of the resolved configuration."""
        out = io.StringIO()
        sections: dict[str, list[tuple[str, object]]] = {}
        for (section, key), value in sorted(self.values.items()):
            sections.setdefault(section, []).append((key, value))
        for name in sorted(sections):
            out.write(f"[{name}]\n")
            for key, value in sections[name]:
                out.write(f"{key} = {_render(value)}\n")
            out.write("\n")
        out.write("[formats]\n")
        for name in sorted(self.formats):
            out.write(f"{name} = {' '.join(self.formats[name].fields)}\n")
        return out.getvalue()

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_text().encode("utf-8")).hexdigest()[:16]

    def echo(self, out_dir: str | Path) -> Path:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        path = out_dir / "config.resolved.ini"
        path.write_text(self.canonical_text(), encoding="utf-8")
        return path


def _render(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if value is None:
        return ""
    return str(value)


def _parse(tag: str, raw: str, where: str):
    raw = raw.strip()
    try:
        if tag == "int":
            return int(raw)
        if tag == "float":
            return float(raw)
        if tag == "bool":
            if raw.lower() in ("true", "1", "yes", "on"):
                return True
            if raw.lower() in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        if tag == "int_list":
            if not raw:
                return ()
            return tuple(int(tok) for tok in raw.split(","))
        if tag == "optional_str":
            return raw or None
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {where}: {raw!r} is not {tag}") from exc


def default_config() -> RunConfig:
    values = {key: default for key, (_, default) in SCHEMA.items()}
    return RunConfig(values=values, formats={"default": DEFAULT_FORMAT})


def load_config(path: str | Path | None = None, overrides: dict[tuple[str, str], object] | None = None) -> RunConfig:
    """Parse an INI file against the schema; `overrides` (already typed)
    win over both file values and defaults."""
    cfg = default_config()
    if path is not None:
        parser = configparser.ConfigParser()
        read = parser.read(path)
        if not read:
            raise OSError(f"cannot read config file {path}")
        for section in parser.sections():
            if section == "formats":
                for name, spec in parser.items(section):
                    cfg.formats[name] = HeaderFormat.from_spec(name, spec)
                continue
            for key, raw in parser.items(section):
                schema_key = (section, key)
                if schema_key not in SCHEMA:
                    raise ConfigError(f"unknown config key [{section}] {key}")
                tag, _ = SCHEMA[schema_key]
                cfg.values[schema_key] = _parse(tag, raw, f"[{section}] {key}")
    if overrides:
        for schema_key, value in overrides.items():
            if schema_key not in SCHEMA:
                raise ConfigError(f"unknown config override {schema_key}")
            cfg.values[schema_key] = value
    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig) -> None:
    for schema_key, allowed in _ENUMS.items():
        value = cfg.values[schema_key]
        if value not in allowed:
            section, key = schema_key
            raise ConfigError(f"[{section}] {key} must be one of {allowed}, got {value!r}")
    if cfg.get("codebook", "temperature") <= 0:
        raise ConfigError("[codebook] temperature must be > 0")
    if cfg.get("reasoner", "rounds") < 1:
        raise ConfigError("[reasoner] rounds must be >= 1")
    if not cfg.get("templates", "scales"):
        raise ConfigError("[templates] scales must not be empty")
    if not 0.0 <= cfg.get("trainer", "val_fraction") < 1.0:
        raise ConfigError("[trainer] val_fraction must be in [0, 1)")
