import numpy as np
import pytest

from ccqsim.rng import trajectory_generator, wiener_block, wiener_increments


def test_streams_are_reproducible_and_distinct():
    a = wiener_increments(5, 3, 100, 0.01)
    np.testing.assert_array_equal(a, wiener_increments(5, 3, 100, 0.01))
    assert not np.array_equal(a, wiener_increments(5, 4, 100, 0.01))
    assert not np.array_equal(a, wiener_increments(6, 3, 100, 0.01))


def test_block_matches_single_streams():
    blk = wiener_block(9, 10, 14, 50, 0.1)
    for i, idx in enumerate(range(10, 14)):
        np.testing.assert_array_equal(blk[i], wiener_increments(9, idx, 50, 0.1))


def test_prefix_property():
    # a longer run shares its first draws with a shorter one
    np.testing.assert_array_equal(wiener_increments(1, 0, 200, 0.1)[:80],
                                  wiener_increments(1, 0, 80, 0.1))


def test_variance():
    x = wiener_increments(2, 0, 200_000, 0.04)
    assert np.var(x) == pytest.approx(0.04, rel=0.02)
    assert abs(np.mean(x)) < 5 * 0.2 / np.sqrt(200_000)


def test_negative_seed_rejected():
    with pytest.raises(ValueError):
        trajectory_generator(-1, 0)
