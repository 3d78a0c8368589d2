import pytest
from hypothesis import given, strategies as st

from tagsafe.core import CodecError, PRESETS, ArchConfig, encode, is_valid_tag, mask, preset, tag_of

T7 = PRESETS["va57t7"]
T16 = PRESETS["va48t16"]


@pytest.mark.parametrize("va, tag, cfg, want", [
    (0x1000, 0x2A, T7, 0x5400_0000_0000_1000),
    (0x1000, 0x00, T7, 0x0000_0000_0000_1000),
    (0x1000, 0xBEEF, T16, 0xBEEF_0000_0000_1000),
])
def test_encode(va, tag, cfg, want):
    assert encode(va, tag, cfg) == want
    assert mask(want, cfg) == va
    assert tag_of(want, cfg) == tag


def test_tombstone_pattern():
    assert tag_of(0xFE00_0000_0000_0000, T7) == 0x7F == T7.tombstone
    assert T16.tombstone == 0xFFFF


def test_valid_tags():
    assert T7.valid_tag_count == 126
    assert T16.valid_tag_count == 65534
    assert not is_valid_tag(0, T7)
    assert not is_valid_tag(T7.tombstone, T7)
    assert is_valid_tag(1, T7) and is_valid_tag(126, T7)


@pytest.mark.parametrize("va, tag", [(1 << 57, 1), (0x1000, 128), (-1, 1), (0x1000, -1)])
def test_encode_rejects_out_of_range(va, tag):
    with pytest.raises(CodecError):
        encode(va, tag, T7)


def test_config_validation():
    with pytest.raises(ValueError):
        ArchConfig(56, 7)
    with pytest.raises(ValueError):
        ArchConfig(alignment=128)
    with pytest.raises(ValueError):
        ArchConfig(alignment=384)
    with pytest.raises(ValueError):
        preset("va39t25")
    assert preset("va57t7", distinct_adjacent_tags=True).distinct_adjacent_tags


@given(st.sampled_from([T7, T16]), st.data())
def test_roundtrip(cfg, data):
    va = data.draw(st.integers(0, cfg.va_mask))
    tag = data.draw(st.integers(0, cfg.tombstone))
    p = encode(va, tag, cfg)
    assert 0 <= p < 1 << 64
    assert (mask(p, cfg), tag_of(p, cfg)) == (va, tag)
