"""Run configuration: flat INI sections mirroring the module config types.

Precedence (lowest to highest): built-in defaults, scenario preset,
config file, ``--set section.key=value`` command-line overrides. Unknown
sections or keys are rejected. Every run writes its fully resolved config
next to its outputs so it can be re-run bit-identically.
"""

from __future__ import annotations

import configparser
import io
from pathlib import Path

from .errors import ConfigError

# section -> key -> (type, default)
SCHEMA = {
    "run": {
        "seed": (int, 0),
        "output_root": (str, "runs/default"),
    },
    "data": {
        "height": (int, 64),
        "width": (int, 64),
        "depth_min": (float, 1.0),
        "depth_max": (float, 10.0),
        "target_depth_min": (float, 1.0),
        "target_depth_max": (float, 10.0),
        "n_points": (int, 200),
        "sparse_strategy": (str, "gradient_topk"),
        "sparse_blind_top": (float, 0.4),
        "n_source": (int, 240),
        "n_stream": (int, 200),
        "shift_kinds": (str, "fog"),
        "shift_magnitudes": (str, "0.3"),
    },
    "depth": {
        "base_width": (int, 12),
        "stages": (int, 3),
        "adapt_stage": (int, 2),
        "adapt_reduction": (int, 4),
        "epochs": (int, 35),
        "batch_size": (int, 8),
        "learning_rate": (float, 1e-3),
        "validation_fraction": (float, 0.15),
    },
    "energy": {
        "stages": (int, 3),
        "base_width": (int, 16),
        "max_width": (int, 128),
        "global_pool": (bool, False),
        "input_scale": (float, 0.1),
        "tau_percentile": (float, 90.0),
        "eps_image": (float, 8.0 / 255.0),
        "eps_sparse": (float, 0.4),
        "epochs": (int, 25),
        "batch_size": (int, 8),
        "learning_rate": (float, 3e-3),
    },
    "adapt": {
        "w_energy": (float, 0.3),
        "w_sparse": (float, 1.0),
        "w_smooth": (float, 0.5),
        "learning_rate": (float, 5e-3),
        "inner_iters": (int, 3),
        "norm_policy": (str, "batch"),
        "optimizer_state_policy": (str, "persistent"),
        "energy_clamp": (float, 1.0 - 1e-6),
        "batch_size": (int, 1),
    },
    "eval": {
        "depth_min": (float, 0.0),
        "depth_max": (float, 80.0),
        "crop": (str, "full"),
    },
}

# Synthetic analogs of the adaptation pairs studied at full scale:
# fog     clear -> fogged imagery, same depth statistics
# illum   lighting curve shift plus sensor noise
# range   depth-scale shift (far outdoor-like -> near indoor-like scenes)
SCENARIOS = {
    "fog": {
        ("data", "shift_kinds"): "fog",
        ("data", "shift_magnitudes"): "0.3",
    },
    "illum": {
        ("data", "shift_kinds"): "illumination,noise",
        ("data", "shift_magnitudes"): "1.5,0.04",
    },
    "range": {
        ("data", "shift_kinds"): "identity",
        ("data", "shift_magnitudes"): "0.0",
        ("data", "target_depth_min"): 0.5,
        ("data", "target_depth_max"): 5.0,
    },
}


def _coerce(section, key, value):
    typ, _ = SCHEMA[section][key]
    try:
        if typ is bool:
            if isinstance(value, bool):
                return value
            lowered = str(value).strip().lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        return typ(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"config key {section}.{key}: cannot parse {value!r} as {typ.__name__}") from exc


class RunConfig:
    """Fully resolved configuration; attribute-style access per section."""

    def __init__(self, values: dict[str, dict[str, object]]):
        self._values = values

    def get(self, section, key):
        return self._values[section][key]

    def section(self, name) -> dict:
        return dict(self._values[name])

    def with_overrides(self, overrides: dict[tuple[str, str], object]) -> "RunConfig":
        values = {s: dict(kv) for s, kv in self._values.items()}
        for (section, key), value in overrides.items():
            if section not in SCHEMA or key not in SCHEMA[section]:
                raise ConfigError(f"unknown config key: {section}.{key}")
            values[section][key] = _coerce(section, key, value)
        return RunConfig(values)

    def to_ini(self) -> str:
        parser = configparser.ConfigParser()
        for section, kv in self._values.items():
            parser[section] = {k: str(v) for k, v in kv.items()}
        buf = io.StringIO()
        parser.write(buf)
        return buf.getvalue()

    def write_resolved(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_ini())
        return path

    def shift_specs(self):
        """(kind, magnitude) pairs applied in order to build the target stream."""
        kinds = [k.strip() for k in str(self.get("data", "shift_kinds")).split(",") if k.strip()]
        mags = [m.strip() for m in str(self.get("data", "shift_magnitudes")).split(",") if m.strip()]
        if len(kinds) != len(mags):
            raise ConfigError(
                f"data.shift_kinds lists {len(kinds)} kinds but data.shift_magnitudes "
                f"lists {len(mags)} magnitudes"
            )
        return [(k, float(m)) for k, m in zip(kinds, mags)]


def default_config() -> RunConfig:
    return RunConfig({s: {k: d for k, (_, d) in kv.items()} for s, kv in SCHEMA.items()})


def load_config(path=None, scenario=None, overrides=None) -> RunConfig:
    """Resolve a config from defaults, preset, file, and overrides."""
    cfg = default_config()
    if scenario is not None:
        if scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {scenario!r}; expected one of {sorted(SCENARIOS)}")
        cfg = cfg.with_overrides(SCENARIOS[scenario])
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        parser = configparser.ConfigParser()
        try:
            parser.read_string(path.read_text())
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse config file {path}: {exc}") from exc
        file_overrides = {}
        for section in parser.sections():
            if section not in SCHEMA:
                raise ConfigError(f"unknown config section [{section}] in {path}")
            for key, value in parser[section].items():
                if key not in SCHEMA[section]:
                    raise ConfigError(f"unknown config key {section}.{key} in {path}")
                file_overrides[(section, key)] = value
        cfg = cfg.with_overrides(file_overrides)
    if overrides:
        cfg = cfg.with_overrides(overrides)
    return cfg


def parse_set_flags(pairs) -> dict[tuple[str, str], str]:
    """Parse repeated ``--set section.key=value`` flags."""
    out = {}
    for pair in pairs or ():
        if "=" not in pair or "." not in pair.split("=", 1)[0]:
            raise ConfigError(f"--set expects section.key=value, got {pair!r}")
        dotted, value = pair.split("=", 1)
        section, key = dotted.split(".", 1)
        out[(section.strip(), key.strip())] = value.strip()
    return out
