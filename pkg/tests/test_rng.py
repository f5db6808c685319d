import numpy as np
import pytest

from sdeskbo.rng import child_seed, substream


def test_same_keys_same_stream():
    a = substream(7, "ou", 3).standard_normal(5)
    b = substream(7, "ou", 3).standard_normal(5)
    np.testing.assert_array_equal(a, b)


def test_distinct_keys_distinct_streams():
    draws = {tuple(substream(7, *k).integers(0, 2**62, 2)) for k in [("ou", 3), ("ou", 4), ("gcir", 3), (3,), ()]}
    assert len(draws) == 5
    assert substream(1).random() != substream(2).random()


def test_large_seed_and_negative_key():
    substream(2**64 - 1, "x").random()
    with pytest.raises(ValueError):
        substream(1, -1)


def test_child_seed_deterministic():
    assert child_seed(substream(3)) == child_seed(substream(3))
    assert 0 <= child_seed(substream(3)) < 2**63
