import numpy as np

from entlink._rng import derive_int, derive_rng, derive_seed


def test_named_streams_are_reproducible_and_distinct():
    a = derive_rng(7, "link", "pairs").random(5)
    b = derive_rng(7, "link", "pairs").random(5)
    c = derive_rng(7, "link", "jitter").random(5)
    d = derive_rng(8, "link", "pairs").random(5)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert not np.array_equal(a, d)


def test_int_and_str_names_differ():
    assert derive_seed(1, 3).spawn_key == (3,)
    assert derive_int(1, 3) != derive_int(1, "3")


def test_derive_int_range():
    x = derive_int(123, "scan", 0, 1)
    assert 0 <= x < 2**63 - 1
    assert x == derive_int(123, "scan", 0, 1)
