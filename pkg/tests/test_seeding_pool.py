import numpy as np
import pytest

from kbrw.brw.engine import BrwConfig
from kbrw.errors import ParameterError
from kbrw.estimators.tail import tail_curve_Z
from kbrw.runner.pool import block_ranges, map_blocks, reduce_blocks
from kbrw.runner.seeding import MASK64, derive_replication_seed, replication_key, splitmix64


def test_splitmix_regression_vector():
    assert replication_key(0, 0) == (0xE220A8397B1DCDAF, 0)
    assert splitmix64(0) == 0xE220A8397B1DCDAF


def test_keys_wrap_to_64_bits():
    assert replication_key(-1, -1) == (splitmix64(MASK64), MASK64)


def test_streams_are_reproducible_and_distinct():
    a = derive_replication_seed(42, 7).random(4)
    b = derive_replication_seed(42, 7).random(4)
    c = derive_replication_seed(42, 8).random(4)
    d = derive_replication_seed(42, 7, stream=1).random(4)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert not np.array_equal(a, d)


def test_block_ranges_cover_replications():
    blocks = block_ranges(10, 4)
    assert blocks == [(0, 0, 4), (1, 4, 8), (2, 8, 10)]
    with pytest.raises(ParameterError):
        block_ranges(0, 4)


def _square_block(block_index, start, stop):
    return [i * i for i in range(start, stop)]


def test_map_blocks_keeps_block_order():
    parts = map_blocks(_square_block, 10, 3, workers=1)
    assert reduce_blocks(lambda x, y: x + y, parts) == [i * i for i in range(10)]


def test_tail_curve_independent_of_worker_count(two_point):
    single = tail_curve_Z(BrwConfig(two_point), [1, 5, 20], 3000, seed=17, workers=1)
    pooled = tail_curve_Z(BrwConfig(two_point), [1, 5, 20], 3000, seed=17, workers=2)
    assert single.hits.tolist() == pooled.hits.tolist()
    assert single.excluded.tolist() == pooled.excluded.tolist()


def test_streams_are_uncorrelated():
    first = derive_replication_seed(3, 0, stream=0).standard_normal(10**4)
    second = derive_replication_seed(3, 0, stream=1).standard_normal(10**4)
    corr = float(np.mean(first * second))
    assert abs(corr) <= 0.04


def test_replications_are_uncorrelated():
    first = derive_replication_seed(3, 0).standard_normal(10**4)
    second = derive_replication_seed(3, 1).standard_normal(10**4)
    # 3 stderr of a correlation over 10^4 pairs is 0.03
    assert abs(float(np.mean(first * second))) <= 0.04
