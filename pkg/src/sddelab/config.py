"""
Experiment configuration files
==============================

Configs are TOML documents with one table per block::

    [model]  [grid]  [domain]  [stability]  [orbit]  [action]
    [quasipotential]  [sweep]  [importance]  [output]

See the README for a complete example.  Parsing is strict: unknown keys and
missing required keys raise :class:`ConfigError`, with the line number of
the offending entry when it can be located.
"""
import hashlib
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

try:
    import tomllib
except ImportError:               # Python < 3.11
    import tomli as tomllib

from .errors import ConfigError

COMMANDS = ("stability", "orbit", "action", "quasipotential", "sweep", "full")

# blocks each command needs (besides model and grid)
REQUIRED = {
    "stability": ("model", "grid", "stability"),
    "orbit": ("model", "grid"),
    "action": ("model", "grid", "action"),
    "quasipotential": ("model", "grid", "domain", "quasipotential"),
    "sweep": ("model", "grid", "domain", "sweep"),
    "full": ("model", "grid", "domain", "quasipotential", "sweep"),
}

_KEYS = {
    "model": {"kind", "A", "B", "sigma0", "tau", "shape", "drift", "diffusion", "params",
              "kappa1", "kappa2", "ellipticity_c", "name"},
    "grid": {"step", "horizons"},
    "domain": {"kind", "radius", "center"},
    "stability": {"taus", "tau_min", "tau_max", "count"},
    "orbit": {"initial", "transient", "max_time", "tolerance", "amplitude_tolerance", "level"},
    "action": {"path"},
    "quasipotential": {"eta_sequence", "max_iterations", "gradient_tolerance", "memory",
                       "shrink", "sufficient_decrease", "restarts", "restart_amplitude",
                       "phase_stride", "threshold_tolerance"},
    "sweep": {"epsilons", "trials", "t_max", "t_max_factor", "alpha", "seed", "initial",
              "thresholds"},
    "importance": {"epsilon", "horizon", "trials"},
    "output": {"directory", "formats"},
}


def _line_of(text, block, key=None):
    """1-based line number of ``[block]`` (or of ``key`` inside it), if present."""
    lines = text.splitlines()
    start = None
    for i, line in enumerate(lines):
        if re.match(rf"\s*\[\s*{re.escape(block)}\s*\]", line):
            start = i
            break
    if start is None:
        return None
    if key is None:
        return start + 1
    for i in range(start + 1, len(lines)):
        if re.match(r"\s*\[", lines[i]):
            break
        if re.match(rf"\s*{re.escape(key)}\s*=", lines[i]):
            return i + 1
    return start + 1


@dataclass
class ExperimentConfig:
    """Parsed configuration plus the raw bytes it came from."""

    blocks: dict
    text: str
    digest: str
    path: Optional[Path] = None
    overrides: dict = field(default_factory=dict)

    def has(self, block):
        return block in self.blocks

    def block(self, name):
        if name not in self.blocks:
            raise ConfigError(f"missing [{name}] block")
        return self.blocks[name]

    def get(self, block, key, default=None, kind=None, required=False):
        table = self.block(block) if required else self.blocks.get(block, {})
        if key not in table:
            if required:
                raise ConfigError(f"[{block}] needs key {key!r}", _line_of(self.text, block))
            return default
        value = table[key]
        if kind is not None:
            try:
                if kind is float and isinstance(value, bool):
                    raise TypeError
                value = kind(value)
            except (TypeError, ValueError):
                raise ConfigError(f"[{block}] {key} must be {kind.__name__}, got {value!r}",
                                  _line_of(self.text, block, key)) from None
        return value

    def floats(self, block, key, default=None, required=False):
        raw = self.get(block, key, default, required=required)
        if raw is None:
            return None
        if not isinstance(raw, (list, tuple)):
            raw = [raw]
        try:
            return [float(v) for v in raw]
        except (TypeError, ValueError):
            raise ConfigError(f"[{block}] {key} must be a list of numbers",
                              _line_of(self.text, block, key)) from None

    def fail(self, block, key, message):
        raise ConfigError(f"[{block}] {message}", _line_of(self.text, block, key))

    def require(self, command):
        if command not in COMMANDS:
            raise ConfigError(f"unknown command {command!r}; choose from {', '.join(COMMANDS)}")
        for name in REQUIRED[command]:
            self.block(name)


def parse_config(text, path=None):
    """Parse config text into an :class:`ExperimentConfig`."""
    raw = text.encode("utf-8")
    try:
        blocks = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse config: {exc}", getattr(exc, "lineno", None)) from None
    for name, table in blocks.items():
        if name not in _KEYS:
            raise ConfigError(f"unknown block [{name}]", _line_of(text, name))
        if not isinstance(table, dict):
            raise ConfigError(f"{name} must be a [table]", _line_of(text, name))
        for key in table:
            if key not in _KEYS[name]:
                raise ConfigError(f"unknown key {key!r} in [{name}]", _line_of(text, name, key))
    return ExperimentConfig(blocks, text, hashlib.sha256(raw).hexdigest(),
                            Path(path) if path else None)


def load_config(path):
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError:
        raise ConfigError(f"config {path} is not UTF-8") from None
    cfg = parse_config(text, path)
    cfg.digest = hashlib.sha256(data).hexdigest()
    return cfg
