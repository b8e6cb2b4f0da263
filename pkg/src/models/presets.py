"""
Named model sizes, smallest to largest.

XS is the two-tower model: no interaction tower and a dot-product over-arch.
S, M and L grow num_embed and dim so their per-evaluation MACs form a
monotone ladder.
"""

from dataclasses import dataclass
from typing import Optional, Tuple

from src.lib.errors import ConfigError
from src.models.towers import TowerConfig


@dataclass(frozen=True)
class Preset:
    name: str
    user: TowerConfig
    item: TowerConfig
    interaction: Optional[TowerConfig]
    overarch_hidden: Tuple[int, ...]
    head: str                           # "dot" or "mlp"


PRESETS = {
    "XS": Preset("XS", TowerConfig(1, 16, (32,)), TowerConfig(1, 16, (32,)), None, (), "dot"),
    "S": Preset("S", TowerConfig(2, 8, (32,)), TowerConfig(1, 8, (32,)), TowerConfig(1, 8, (16,)), (32,), "mlp"),
    "M": Preset("M", TowerConfig(4, 16, (64,)), TowerConfig(2, 16, (64,)), TowerConfig(1, 16, (32,)), (64, 32), "mlp"),
    "L": Preset("L", TowerConfig(8, 32, (128,)), TowerConfig(4, 32, (128,)), TowerConfig(2, 32, (64,)), (128, 64), "mlp"),
}

ORDER = ("XS", "S", "M", "L")


def get_preset(name: str) -> Preset:
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigError("model.preset", f"unknown preset '{name}', expected one of {ORDER}")
