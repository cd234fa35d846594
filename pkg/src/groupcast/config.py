"""Flat key=value run configuration with section-prefixed keys.

The file format is intentionally plain so runs diff cleanly:

    # comment
    synth.seed = 7
    slice.renewal_date = 2017-01-01
    train.prevalence_thresholds = 0.01, 0.001

Keys are "<section>.<name>"; values stay strings until a typed getter
pulls them out. Command-line overrides use the same "key=value" form
and always win over the file.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import date
from typing import Iterable

__all__ = ["ConfigError", "RunConfig", "load_config"]


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    values: dict[str, str] = field(default_factory=dict)
    source: str = "<empty>"

    @classmethod
    def from_file(cls, path: str) -> "RunConfig":
        values: dict[str, str] = {}
        with open(path) as fh:
            for line_no, raw in enumerate(fh, start=1):
                line = raw.strip()
                if not line or line.startswith("#"):
                    continue
                key, sep, value = line.partition("=")
                if not sep:
                    raise ConfigError(f"{path}:{line_no}: expected key = value, got {raw!r}")
                key = key.strip()
                if not key or any(c.isspace() for c in key):
                    raise ConfigError(f"{path}:{line_no}: bad key {key!r}")
                values[key] = value.strip()
        return cls(values=values, source=path)

    def override(self, pairs: Iterable[str]) -> "RunConfig":
        merged = dict(self.values)
        for pair in pairs:
            key, sep, value = pair.partition("=")
            if not sep or not key.strip():
                raise ConfigError(f"override must look like key=value, got {pair!r}")
            merged[key.strip()] = value.strip()
        return RunConfig(values=merged, source=self.source)

    # typed getters ---------------------------------------------------

    def get(self, key: str, default: str | None = None) -> str | None:
        return self.values.get(key, default)

    def _convert(self, key: str, converter, default):
        text = self.values.get(key)
        if text is None:
            return default
        try:
            return converter(text)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"config key {key} = {text!r}: {exc}") from exc

    def get_int(self, key: str, default: int | None = None) -> int | None:
        return self._convert(key, int, default)

    def get_float(self, key: str, default: float | None = None) -> float | None:
        return self._convert(key, float, default)

    def get_bool(self, key: str, default: bool | None = None) -> bool | None:
        def parse(text: str) -> bool:
            t = text.lower()
            if t in ("1", "true", "yes", "on"):
                return True
            if t in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {text!r}")

        return self._convert(key, parse, default)

    def get_date(self, key: str, default: date | None = None) -> date | None:
        return self._convert(key, date.fromisoformat, default)

    def get_floats(self, key: str, default: tuple[float, ...] | None = None) -> tuple[float, ...] | None:
        def parse(text: str) -> tuple[float, ...]:
            parts = [p.strip() for p in text.split(",") if p.strip()]
            if not parts:
                raise ValueError("empty list")
            return tuple(float(p) for p in parts)

        return self._convert(key, parse, default)


def load_config(path: str | None, overrides: Iterable[str] = ()) -> RunConfig:
    cfg = RunConfig.from_file(path) if path else RunConfig()
    return cfg.override(overrides)
