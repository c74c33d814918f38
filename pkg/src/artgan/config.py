"""Run configuration: ``key = value`` files merged with CLI flag overrides.

Unknown keys are rejected, every value is type-checked against the schema,
and the fully resolved configuration is echoed into each output directory
so any run can be reproduced from its artifacts alone.
"""

from __future__ import annotations

from pathlib import Path

from .errors import ConfigError
from .metrics import KidConfig
from .trainer import TrainConfig

# name -> (type, default); bool values are written as true/false
SCHEMA: dict[str, tuple[type, object]] = {
    "data_dir": (str, ""),
    "out_dir": (str, ""),
    "responses": (str, ""),
    "resolution": (int, 64),
    "batch_size": (int, 16),
    "learning_rate_g": (float, 2e-3),
    "learning_rate_d": (float, 2e-3),
    "adam_beta1": (float, 0.0),
    "adam_beta2": (float, 0.99),
    "adam_eps": (float, 1e-8),
    "total_iterations": (int, 2000),
    "checkpoint_interval": (int, 5),
    "fid_monitor_interval": (int, 100),
    "fid_monitor_samples": (int, 64),
    "seed": (int, 0),
    "augment_flip": (bool, False),
    "r1_gamma": (float, 1.0),
    "r1_interval": (int, 16),
    "dim_z": (int, 64),
    "dim_w": (int, 64),
    "mapping_layers": (int, 4),
    "channel_base": (int, 128),
    "channel_max": (int, 128),
    "extractor": (str, "pool"),
    "kid_block_size": (int, 100),
    "kid_num_blocks": (int, 10),
    "kid_degree": (int, 3),
    "kid_offset": (float, 1.0),
    "kid_scale": (float, 0.0),  # 0 means automatic 1/d
    "generate_count": (int, 16),
    "stop_patience": (int, 10),
    "stop_min_delta": (float, 0.0),
    "allow_partial": (bool, False),
}

_TRAIN_FIELDS = set(TrainConfig.__dataclass_fields__)


def _parse_value(key: str, raw: str):
    typ, _ = SCHEMA[key]
    raw = raw.strip()
    if typ is bool:
        low = raw.lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise ConfigError(f"{key}: expected true/false, got {raw!r}")
    try:
        return typ(raw)
    except ValueError:
        raise ConfigError(f"{key}: expected {typ.__name__}, got {raw!r}") from None


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return repr(value) if isinstance(value, float) else str(value)


class RunConfig:
    """Schema-checked flat configuration for the whole pipeline."""

    def __init__(self, values: dict | None = None):
        self.values = {key: default for key, (_, default) in SCHEMA.items()}
        for key, value in (values or {}).items():
            self.set(key, value)

    def set(self, key: str, value) -> None:
        if key not in SCHEMA:
            raise ConfigError(f"unknown configuration key: {key!r}")
        typ, _ = SCHEMA[key]
        if isinstance(value, str) and typ is not str:
            value = _parse_value(key, value)
        if typ is float and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        if not isinstance(value, typ) or (typ is int and isinstance(value, bool)):
            raise ConfigError(f"{key}: expected {typ.__name__}, "
                              f"got {type(value).__name__}")
        self.values[key] = value

    def __getitem__(self, key: str):
        return self.values[key]

    @classmethod
    def load(cls, path) -> "RunConfig":
        cfg = cls()
        text = Path(path).read_text(encoding="utf-8")
        for lineno, line in enumerate(text.splitlines(), start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, _, raw = stripped.partition("=")
            cfg.set(key.strip(), raw.strip())
        return cfg

    def echo(self) -> str:
        """Reparseable text of the fully resolved configuration."""
        lines = [f"{key} = {_format_value(self.values[key])}"
                 for key in sorted(self.values)]
        return "\n".join(lines) + "\n"

    def write_echo(self, directory) -> None:
        Path(directory).mkdir(parents=True, exist_ok=True)
        (Path(directory) / "config.txt").write_text(self.echo(), encoding="utf-8")

    def train_config(self) -> TrainConfig:
        kwargs = {k: v for k, v in self.values.items() if k in _TRAIN_FIELDS}
        return TrainConfig(**kwargs)

    def kid_config(self) -> KidConfig:
        return KidConfig(degree=self.values["kid_degree"],
                         offset=self.values["kid_offset"],
                         scale=self.values["kid_scale"] or None,
                         block_size=self.values["kid_block_size"],
                         num_blocks=self.values["kid_num_blocks"])
