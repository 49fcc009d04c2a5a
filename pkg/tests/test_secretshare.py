import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedreg.secretshare import (
    P256_ORDER,
    SHARE_WIRE_BYTES,
    Share,
    interpolate,
    reconstruct,
    share_secret,
)


@given(st.integers(0, P256_ORDER - 1), st.integers(1, 6), st.integers(0, 4), st.randoms())
@settings(max_examples=40)
def test_any_threshold_subset_reconstructs(secret, t, extra, rnd):
    m = t + extra
    shares = share_secret(secret, t, m, random.Random(rnd.getrandbits(64)))
    assert len(shares) == m
    picked = rnd.sample(shares, t)
    assert reconstruct(picked, t) == secret


def test_too_few_shares_rejected():
    shares = share_secret(12345, 3, 5, random.Random(1))
    with pytest.raises(ValueError):
        reconstruct(shares[:2], 3)


def test_conflicting_shares_rejected():
    shares = share_secret(9, 2, 3, random.Random(2))
    forged = Share(shares[0].index, (shares[0].value + 1) % P256_ORDER)
    with pytest.raises(ValueError):
        reconstruct([shares[0], forged, shares[1]], 2)


def test_duplicate_shares_do_not_count_twice():
    shares = share_secret(77, 3, 5, random.Random(3))
    with pytest.raises(ValueError):
        reconstruct([shares[0], shares[0], shares[1]], 3)


def test_wire_roundtrip():
    sh = Share(7, 123456789)
    blob = sh.to_bytes()
    assert len(blob) == SHARE_WIRE_BYTES == 36
    assert Share.from_bytes(blob) == sh
    with pytest.raises(ValueError):
        Share.from_bytes(blob[:-1])


def test_share_input_validation():
    rng = random.Random(4)
    with pytest.raises(ValueError):
        share_secret(P256_ORDER, 2, 3, rng)
    with pytest.raises(ValueError):
        share_secret(1, 0, 3, rng)
    with pytest.raises(ValueError):
        share_secret(1, 4, 3, rng)


def test_interpolate_matches_polynomial():
    # polynomial 5 + 2x + x^2 over the field
    prime = P256_ORDER
    pts = [(x, (5 + 2 * x + x * x) % prime) for x in (1, 2, 3)]
    assert interpolate(pts, 0, prime) == 5
    assert interpolate(pts, 10, prime) == (5 + 20 + 100) % prime
    with pytest.raises(ValueError):
        interpolate([(1, 1), (1, 2)], 0, prime)


def test_share_values_depend_on_rng():
    a = share_secret(100, 2, 3, random.Random(10))
    b = share_secret(100, 2, 3, random.Random(11))
    assert [s.value for s in a] != [s.value for s in b]
    assert reconstruct(a[:2], 2) == reconstruct(b[1:], 2) == 100
