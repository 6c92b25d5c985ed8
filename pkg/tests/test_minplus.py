import itertools

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from kamforce import minplus

costs = st.floats(-4, 4, allow_nan=False, allow_infinity=False).map(minplus.quantize)


def square(n):
    return arrays(np.float64, (n, n), elements=costs)


def brute_product(a, b):
    n, m = a.shape[0], b.shape[1]
    out = np.full((n, m), np.inf)
    for i in range(n):
        for j in range(m):
            out[i, j] = min(a[i, k] + b[k, j] for k in range(a.shape[1]))
    return out


def brute_cycle_mean(a):
    n = a.shape[0]
    best = np.inf
    for L in range(1, n + 1):
        for cyc in itertools.permutations(range(n), L):
            if cyc[0] != min(cyc):
                continue
            w = sum(a[cyc[i], cyc[(i + 1) % L]] for i in range(L))
            best = min(best, w / L)
    return best


@given(square(5), square(5))
def test_product_matches_enumeration(a, b):
    out, arg = minplus.product(a, b)
    np.testing.assert_array_equal(out, brute_product(a, b))
    # argmin attains the value and is the smallest such index
    rows = np.arange(5)[:, None]
    np.testing.assert_array_equal(a[rows, arg] + b[arg, np.arange(5)[None, :]], out)
    for i in range(5):
        for j in range(5):
            vals = a[i] + b[:, j]
            assert arg[i, j] == np.flatnonzero(vals == vals.min())[0]


@given(square(4), square(4), square(4))
def test_associativity_is_exact_on_lattice(a, b, c):
    left = minplus.product_min(minplus.product_min(a, b), c)
    right = minplus.product_min(a, minplus.product_min(b, c))
    np.testing.assert_array_equal(left, right)


@given(square(4), st.integers(1, 9))
def test_power_laws(a, n):
    cache = {}
    direct = minplus.identity(4)
    for _ in range(n):
        direct = minplus.product_min(direct, a)
    np.testing.assert_array_equal(minplus.power(a, n, cache), direct)
    np.testing.assert_array_equal(minplus.power(a, n + 2, cache),
                                  minplus.product_min(minplus.power(a, n, cache), minplus.power(a, 2, cache)))


def test_identity_is_neutral(rng):
    a = minplus.quantize(rng.normal(size=(6, 6)))
    np.testing.assert_array_equal(minplus.product_min(minplus.identity(6), a), a)
    np.testing.assert_array_equal(minplus.product_min(a, minplus.identity(6)), a)


@given(arrays(np.float64, 6, elements=costs), square(6))
def test_vec_min_and_max(u, a):
    w, arg = minplus.vec_min(u, a)
    np.testing.assert_array_equal(w, np.min(u[:, None] + a, axis=0))
    np.testing.assert_array_equal(arg, np.argmin(u[:, None] + a, axis=0))
    v, _ = minplus.vec_max(u, a)
    np.testing.assert_array_equal(v, np.max(u[None, :] - a, axis=1))


@settings(max_examples=60)
@given(square(5))
def test_min_cycle_mean_matches_enumeration(a):
    assert np.isclose(minplus.min_cycle_mean(a), brute_cycle_mean(a), rtol=0, atol=1e-12)


def test_min_cycle_mean_with_missing_edges():
    a = np.full((4, 4), np.inf)
    a[0, 1], a[1, 2], a[2, 0] = 1.0, 2.0, 3.0   # mean 2
    a[3, 3] = 5.0
    a[1, 0] = 0.5                               # 2-cycle mean 0.75
    assert np.isclose(minplus.min_cycle_mean(a), 0.75)


def test_quantize_makes_sums_exact():
    x = minplus.quantize(np.array([0.1, 0.2, 0.3]))
    assert (x[0] + x[1]) + x[2] == x[0] + (x[1] + x[2])
    assert np.all(np.abs(x - [0.1, 0.2, 0.3]) <= 2.0**-33)
