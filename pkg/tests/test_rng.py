import numpy as np
import pytest

from crisis_concerns.rng import derive_rng, derive_seed


def test_same_path_same_stream():
    a = derive_rng(42, "names", "gender").random(5)
    b = derive_rng(42, "names", "gender").random(5)
    assert np.array_equal(a, b)


def test_paths_are_independent():
    a = derive_rng(42, "tree", 0).random(5)
    b = derive_rng(42, "tree", 1).random(5)
    c = derive_rng(43, "tree", 0).random(5)
    assert not np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_derive_seed_is_64_bit():
    s = derive_seed(7, "x")
    assert 0 <= s < 2**64
    assert s == derive_seed(7, "x")


@pytest.mark.parametrize("bad", [-1, 2**64])
def test_seed_range(bad):
    with pytest.raises(ValueError):
        derive_rng(bad)
