import numpy as np
import pytest

from perturbmc.rng import RngStream, as_generator


def test_same_stream_reproduces_draws():
    a = RngStream(42, 3).generator().random(100)
    b = RngStream(42, 3).generator().random(100)
    assert np.array_equal(a, b)


def test_distinct_stream_ids_differ_and_look_independent():
    a = RngStream(42, 0).generator().standard_normal(100_000)
    b = RngStream(42, 1).generator().standard_normal(100_000)
    assert not np.array_equal(a[:10], b[:10])
    # sample correlation of independent normals has SE 1/sqrt(m)
    assert abs(np.corrcoef(a, b)[0, 1]) < 4 / np.sqrt(a.size)


def test_substreams_are_deterministic_and_distinct():
    s = RngStream(7)
    assert s.substream(5) == RngStream(7).substream(5)
    ids = {s.substream(i).stream_id for i in range(1000)}
    assert len(ids) == 1000
    assert s.substream(0) != s


@pytest.mark.parametrize("bad", [(-1, 0), (0, -1), (1 << 64, 0)])
def test_out_of_range_seeds_rejected(bad):
    with pytest.raises(ValueError):
        RngStream(*bad)


def test_as_generator_accepts_all_forms():
    gen = np.random.default_rng(1)
    assert as_generator(gen) is gen
    assert np.array_equal(as_generator(RngStream(3)).random(4), RngStream(3).generator().random(4))
    assert np.array_equal(as_generator(5).random(3), np.random.default_rng(5).random(3))
    assert isinstance(as_generator(None), np.random.Generator)
    with pytest.raises(TypeError):
        as_generator("seed")
