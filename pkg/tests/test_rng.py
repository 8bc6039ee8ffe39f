import numpy as np
import pytest

from rbmlab import stream, stream_key


def test_equal_paths_equal_output():
    a = stream(7, 3, "noise", 12).standard_normal(100)
    b = stream(7, 3, "noise", 12).standard_normal(100)
    assert np.array_equal(a, b)


def test_any_component_changes_stream():
    base = stream_key(7, 3, "noise", 12)
    assert stream_key(8, 3, "noise", 12) != base
    assert stream_key(7, 4, "noise", 12) != base
    assert stream_key(7, 3, "init", 12) != base
    assert stream_key(7, 3, "noise", 13) != base
    # order matters: position is folded into the hash
    assert stream_key(7, "noise", 3, 12) != base
    assert stream_key(7, 3, "noise") != stream_key(7, 3, "noise", 0)


def test_int_and_string_parts_do_not_alias():
    # crc32("0") != 0 guards against "0" aliasing the int 0
    assert stream_key(1, "0") != stream_key(1, 0)
    assert stream_key(1, "") != stream_key(1)


def test_negative_and_large_ints_are_masked_not_rejected():
    assert stream_key(0, -1) == stream_key(0, (1 << 64) - 1)
    assert stream_key(0, 1 << 64) == stream_key(0, 0)


def test_bool_path_parts_rejected():
    with pytest.raises(TypeError):
        stream_key(0, True)
    with pytest.raises(TypeError):
        stream(0, "noise", False)
    with pytest.raises(TypeError):
        stream_key(0, 1.5)


def test_sibling_streams_uncorrelated_smoke():
    m = 20_000
    a = stream(0, 0, "noise", 0).standard_normal(m)
    b = stream(0, 0, "noise", 1).standard_normal(m)
    corr = np.corrcoef(a, b)[0, 1]
    assert abs(corr) < 4.0 / np.sqrt(m)


def test_stream_is_counter_based_philox():
    gen = stream(0, "kind-check")
    assert type(gen.bit_generator).__name__ == "Philox"
