import numpy as np
import pytest

from liftplace.numerics import Rng, moments, randn, tensor_from_json, tensor_to_json


def test_randn_deterministic_for_equal_seeds():
    a = randn(Rng(0), [4])
    b = randn(Rng(0), [4])
    assert np.array_equal(a, b)


def test_randn_distinct_streams_differ():
    a = randn(Rng(0), [8])
    b = randn(Rng(1), [8])
    c = randn(Rng(0).child("other"), [8])
    assert not np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_randn_child_streams_are_reproducible():
    a = randn(Rng(7).child("data", 3), [5])
    b = randn(Rng(7).child("data", 3), [5])
    assert np.array_equal(a, b)


def test_randn_statistics():
    # CLT bounds: n = 1e5 standard normals have sample mean within 0.02 of 0
    # and sample variance within 0.05 of 1 with overwhelming margin.
    x = randn(Rng(123), [100_000])
    assert abs(x.mean()) < 0.02
    assert abs(x.var() - 1.0) < 0.05


def test_randn_rejects_empty_shape():
    with pytest.raises(ValueError):
        randn(Rng(0), [])
    with pytest.raises(ValueError):
        randn(Rng(0), [0, 3])


def test_moments_constant_and_simple():
    assert moments([1.0, 1.0, 1.0, 1.0]) == (1.0, 0.0)
    assert moments([0.0, 2.0]) == (1.0, 1.0)


def test_moments_against_two_pass_oracle():
    x = randn(Rng(5), [1000])
    m, v = moments(x)
    # independent two-pass summation oracle
    m_ref = sum(float(xi) for xi in x) / x.size
    v_ref = sum((float(xi) - m_ref) ** 2 for xi in x) / x.size
    assert abs(m - m_ref) <= 1e-12 * max(1.0, abs(m_ref))
    assert abs(v - v_ref) <= 1e-12 * max(1.0, abs(v_ref))


def test_moments_shift_invariance():
    rng = Rng(9)
    for _ in range(20):
        x = rng.normal((257,))
        c = float(rng.normal((1,))[0]) * 10.0
        m0, v0 = moments(x)
        m1, v1 = moments(x + c)
        assert abs(m1 - (m0 + c)) < 1e-10
        assert abs(v1 - v0) < 1e-10


def test_moments_rejects_empty():
    with pytest.raises(ValueError):
        moments(np.array([]))


def test_tensor_json_roundtrip_bit_exact():
    x = randn(Rng(2), [3, 4, 5])
    y = tensor_from_json(tensor_to_json(x))
    assert y.shape == x.shape
    assert np.array_equal(x, y)


def test_tensor_json_shape_mismatch_rejected():
    with pytest.raises(ValueError):
        tensor_from_json('{"shape": [2, 2], "data": [1.0, 2.0, 3.0]}')


def test_rng_seed_validation():
    with pytest.raises(ValueError):
        Rng(-1)
    with pytest.raises(ValueError):
        Rng(2**64)
