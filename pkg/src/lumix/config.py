"""Run configuration as flat key=value text with a canonical form.

One file carries both model and training settings. ``parse`` fills
defaults and rejects unknown keys; ``canonical`` emits every key in sorted
order with normalized value spelling, so parse -> emit -> parse is a fixed
point and equal configs produce identical bytes.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

__all__ = ["ConfigError", "RunConfig", "PROPERTY_CHANNELS"]

PROPERTY_CHANNELS = {"color": 3, "albedo": 3, "irradiance": 3, "depth": 1, "normal": 3}

_ATTENTION = ("vanilla", "cross_intrinsic", "query_broadcast")
_LORA = ("none", "separate", "fused", "hybrid", "tensor")
_REGIMES = ("from_scratch_joint", "two_phase")
_PROP_EMBED = ("auto", "on", "off")


class ConfigError(ValueError):
    """Raised for unknown keys, bad values, or inconsistent settings."""


@dataclass(frozen=True)
class RunConfig:
    image_size: int = 32
    patch_size: int = 2
    d: int = 128
    heads: int = 4
    depth: int = 6
    properties: tuple[str, ...] = ("color", "albedo", "irradiance")
    attention: str = "query_broadcast"
    lora: str = "tensor"
    lora_rank: int = 8
    lora_rank2: int = 0  # 0 picks the variant's default
    adapt_q: bool = False
    regime: str = "from_scratch_joint"
    property_embedding: str = "auto"
    steps: int = 200
    batch_size: int = 4
    lr: float = 0.001
    seed: int = 0
    sample_steps: int = 50

    def __post_init__(self):
        if self.image_size < 1 or self.patch_size < 1:
            raise ConfigError("image_size and patch_size must be positive")
        if self.image_size % self.patch_size != 0:
            raise ConfigError(
                f"image_size {self.image_size} not divisible by patch_size {self.patch_size}"
            )
        if self.d % self.heads != 0:
            raise ConfigError(f"d {self.d} not divisible by heads {self.heads}")
        if self.depth < 1:
            raise ConfigError("depth must be >= 1")
        if not self.properties:
            raise ConfigError("properties must name at least one map")
        for p in self.properties:
            if p not in PROPERTY_CHANNELS:
                raise ConfigError(f"unknown property {p!r}, expected {sorted(PROPERTY_CHANNELS)}")
        if len(set(self.properties)) != len(self.properties):
            raise ConfigError(f"duplicate property in {self.properties}")
        if "color" not in self.properties:
            raise ConfigError("the color property is required (it donates the query)")
        if self.attention not in _ATTENTION:
            raise ConfigError(f"attention must be one of {_ATTENTION}")
        if self.lora not in _LORA:
            raise ConfigError(f"lora must be one of {_LORA}")
        if self.lora != "none" and self.lora_rank < 1:
            raise ConfigError("lora_rank must be >= 1")
        if self.lora_rank2 < 0:
            raise ConfigError("lora_rank2 must be >= 0 (0 selects the default)")
        if self.lora == "hybrid":
            r2 = self.lora_rank2 or max(1, self.lora_rank // 4)
            if not r2 < self.lora_rank:
                raise ConfigError(
                    f"hybrid needs lora_rank2 < lora_rank, got {r2} >= {self.lora_rank}"
                )
        if self.regime not in _REGIMES:
            raise ConfigError(f"regime must be one of {_REGIMES}")
        if self.property_embedding not in _PROP_EMBED:
            raise ConfigError(f"property_embedding must be one of {_PROP_EMBED}")
        if self.steps < 0 or self.batch_size < 1:
            raise ConfigError("steps must be >= 0 and batch_size >= 1")
        if not self.lr > 0:
            raise ConfigError("lr must be positive")
        if self.sample_steps < 1:
            raise ConfigError("sample_steps must be >= 1")

    # -- text form ---------------------------------------------------------

    @property
    def m(self) -> int:
        return len(self.properties)

    @property
    def color_index(self) -> int:
        return self.properties.index("color")

    @property
    def tokens(self) -> int:
        return (self.image_size // self.patch_size) ** 2

    def use_property_embedding(self) -> bool:
        if self.property_embedding == "auto":
            return self.regime == "from_scratch_joint" and self.m > 1
        return self.property_embedding == "on"

    @classmethod
    def parse(cls, text: str) -> "RunConfig":
        values: dict[str, object] = {}
        known = {f.name: f.type for f in fields(cls)}
        for ln, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {ln}: expected key=value, got {raw!r}")
            key, val = (part.strip() for part in line.split("=", 1))
            if key not in known:
                raise ConfigError(f"line {ln}: unknown key {key!r}")
            if key in values:
                raise ConfigError(f"line {ln}: duplicate key {key!r}")
            values[key] = _convert(key, val, known[key], ln)
        try:
            return cls(**values)
        except TypeError as e:
            raise ConfigError(str(e)) from e

    def canonical(self) -> str:
        lines = []
        for f in sorted(fields(self), key=lambda f: f.name):
            v = getattr(self, f.name)
            if isinstance(v, bool):
                s = "true" if v else "false"
            elif isinstance(v, tuple):
                s = ",".join(v)
            elif isinstance(v, float):
                s = repr(v)
            else:
                s = str(v)
            lines.append(f"{f.name}={s}")
        return "\n".join(lines) + "\n"


def _convert(key: str, val: str, ftype, ln: int):
    try:
        if ftype in (int, "int"):
            return int(val)
        if ftype in (float, "float"):
            return float(val)
        if ftype in (bool, "bool"):
            if val.lower() in ("true", "1", "yes"):
                return True
            if val.lower() in ("false", "0", "no"):
                return False
            raise ValueError(f"not a boolean: {val!r}")
        if "tuple" in str(ftype):
            return tuple(s.strip() for s in val.split(",") if s.strip())
        return val
    except ValueError as e:
        raise ConfigError(f"line {ln}: bad value for {key}: {e}") from e
