"""Architecture presets and the tagged-address codec.

A tagged address is a 64-bit integer whose topmost ``tag_bits`` bits carry an
allocation tag and whose low ``va_bits`` bits carry the virtual address.
Tag 0 marks an untagged (unchecked) pointer and the all-ones tag marks freed
memory, so neither is ever handed out by the allocator.
"""
from __future__ import annotations

from dataclasses import dataclass

ADDR_BITS = 64
ADDR_MASK = (1 << ADDR_BITS) - 1
NULL_TAG = 0

_ALLOWED_SPLITS = {(57, 7), (48, 16)}


class CodecError(ValueError):
    """Raised when an address or tag does not fit the configured layout."""


@dataclass(frozen=True)
class ArchConfig:
    va_bits: int = 57
    tag_bits: int = 7
    alignment: int = 256
    distinct_adjacent_tags: bool = False

    def __post_init__(self):
        if self.va_bits + self.tag_bits != ADDR_BITS:
            raise ValueError(
                f"va_bits + tag_bits must be {ADDR_BITS}, got {self.va_bits} + {self.tag_bits}"
            )
        if (self.va_bits, self.tag_bits) not in _ALLOWED_SPLITS:
            raise ValueError(f"unsupported address split v={self.va_bits}/t={self.tag_bits}")
        a = self.alignment
        if a < 256 or a & (a - 1):
            raise ValueError(f"alignment must be a power of two >= 256, got {a}")

    @property
    def va_mask(self) -> int:
        return (1 << self.va_bits) - 1

    @property
    def tombstone(self) -> int:
        return (1 << self.tag_bits) - 1

    @property
    def valid_tag_count(self) -> int:
        return (1 << self.tag_bits) - 2

    @property
    def preset_name(self) -> str:
        return f"va{self.va_bits}t{self.tag_bits}"


PRESETS = {
    "va57t7": ArchConfig(57, 7),
    "va48t16": ArchConfig(48, 16),
}


def preset(name: str, **overrides) -> ArchConfig:
    try:
        base = PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown arch preset {name!r}; choose from {sorted(PRESETS)}") from None
    if not overrides:
        return base
    fields = dict(va_bits=base.va_bits, tag_bits=base.tag_bits,
                  alignment=base.alignment, distinct_adjacent_tags=base.distinct_adjacent_tags)
    fields.update(overrides)
    return ArchConfig(**fields)


def encode(va: int, tag: int, cfg: ArchConfig) -> int:
    """Pack ``tag`` above ``va``. Both must fit their fields."""
    if not 0 <= va <= cfg.va_mask:
        raise CodecError(f"address {va:#x} does not fit in {cfg.va_bits} bits")
    if not 0 <= tag <= cfg.tombstone:
        raise CodecError(f"tag {tag:#x} does not fit in {cfg.tag_bits} bits")
    return (tag << cfg.va_bits) | va


def mask(p: int, cfg: ArchConfig) -> int:
    return p & cfg.va_mask


def tag_of(p: int, cfg: ArchConfig) -> int:
    return (p & ADDR_MASK) >> cfg.va_bits


def is_valid_tag(tag: int, cfg: ArchConfig) -> bool:
    return 1 <= tag <= cfg.tombstone - 1
