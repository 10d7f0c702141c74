"""Run configuration: a flat ``key = value`` text file plus CLI overrides.

Grammar, one setting per line::

    # comment
    key = value

Blank lines and ``#`` comments are ignored, keys are case-sensitive and
unknown keys are rejected. ``modes`` lists the B0 decay modes as
``label:branching_fraction:tagged|untagged`` separated by commas; the
charge-conjugate B0bar modes (``label-cc``) are added automatically.
Booleans are ``true``/``false``.

Precedence is CLI flag > config file > built-in default.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

from .errors import ValidationError
from .estimation import BinningScheme
from .eventgen import DEFAULT_CHUNK_SIZE, GenerationConfig
from .physics import (
    DEFAULT_DELTA_M,
    DEFAULT_TAU_B,
    TAGGED_BRANCHING,
    PhysicsParams,
    conjugate_mode_table,
)

DEFAULT_MODES = f"Dstar-l-nu:{TAGGED_BRANCHING!r}:tagged, other:{1.0 - TAGGED_BRANCHING!r}:untagged"


@dataclass(frozen=True)
class RunConfig:
    tau_b: float = DEFAULT_TAU_B
    delta_m: float = DEFAULT_DELTA_M
    modes: str = DEFAULT_MODES
    events: int = 1_000_000
    seed: int = 20040501
    chunk_size: int = DEFAULT_CHUNK_SIZE
    workers: int = 1
    bin_width: float = 0.5
    dt_max: float = 12.0
    tagged_only: bool = False
    predict_step: float = 0.01
    out: str = ""
    format: str = "jsonl"

    def __post_init__(self):
        if self.format not in ("jsonl", "csv"):
            raise ValidationError(f"format must be 'jsonl' or 'csv', got {self.format!r}")
        if self.workers < 1:
            raise ValidationError(f"workers must be >= 1, got {self.workers}")
        if not self.predict_step > 0:
            raise ValidationError(f"predict_step must be positive, got {self.predict_step}")

    def physics(self) -> PhysicsParams:
        return PhysicsParams(
            tau_b=self.tau_b, delta_m=self.delta_m, decay_modes=parse_modes(self.modes)
        )

    def generation(self) -> GenerationConfig:
        return GenerationConfig(
            n_pairs=self.events, seed=self.seed, chunk_size=self.chunk_size, params=self.physics()
        )

    def binning(self) -> BinningScheme:
        return BinningScheme(width=self.bin_width, dt_max=self.dt_max)

    def validate(self) -> None:
        """Build every derived object so their invariants get checked."""
        self.generation()
        self.binning()

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if isinstance(value, bool):
                value = "true" if value else "false"
            elif isinstance(value, float):
                value = repr(value)
            lines.append(f"{f.name} = {value}")
        return "\n".join(lines) + "\n"


def parse_modes(text: str):
    entries = []
    for raw in text.split(","):
        raw = raw.strip()
        if not raw:
            continue
        parts = [x.strip() for x in raw.split(":")]
        if len(parts) not in (2, 3):
            raise ValidationError(f"bad mode entry {raw!r}; expected label:fraction[:tagged|untagged]")
        label, br = parts[0], parts[1]
        flag = parts[2] if len(parts) == 3 else "tagged"
        if flag not in ("tagged", "untagged"):
            raise ValidationError(f"mode flag must be 'tagged' or 'untagged', got {flag!r}")
        try:
            fraction = float(br)
        except ValueError:
            raise ValidationError(f"bad branching fraction {br!r} for mode {label!r}") from None
        entries.append((label, fraction, flag == "tagged"))
    if not entries:
        raise ValidationError("mode table is empty")
    return conjugate_mode_table(entries)


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _coerce(key: str, value: Any) -> Any:
    kind = _FIELDS[key].type
    if not isinstance(value, str):
        return value
    value = value.strip()
    try:
        if kind == "bool":
            low = value.lower()
            if low not in ("true", "false"):
                raise ValueError
            return low == "true"
        if kind == "int":
            return int(value, 0)
        if kind == "float":
            return float(value)
    except ValueError:
        raise ValidationError(f"bad value for {key}: {value!r} (expected {kind})") from None
    return value


def parse_config_text(text: str, source: str = "<config>") -> dict[str, Any]:
    out: dict[str, Any] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ValidationError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        key, value = (x.strip() for x in stripped.split("=", 1))
        if key not in _FIELDS:
            raise ValidationError(f"{source}:{lineno}: unknown key {key!r}")
        if key in out:
            raise ValidationError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = _coerce(key, value)
    return out


def resolve_config(
    path: str | Path | None = None, overrides: Mapping[str, Any] | None = None
) -> RunConfig:
    values: dict[str, Any] = {}
    if path is not None:
        values.update(parse_config_text(Path(path).read_text(encoding="utf-8"), str(path)))
    for key, value in (overrides or {}).items():
        if key not in _FIELDS:
            raise ValidationError(f"unknown key {key!r}")
        if value is not None:
            values[key] = _coerce(key, value)
    return RunConfig(**values)
