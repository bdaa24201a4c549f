import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mkthe.bgv import kgen
from mkthe.rgsw import (
    GadgetMatrix,
    external_product,
    rgsw_enc,
    rgsw_extend,
    rgsw_mult,
    rgsw_residuals,
)
from mkthe.ring import Ring, bit_decomp_vec, sample_uniform


def check_residuals(C, mu, secrets, t):
    """Every residual is t times something inside the tracked bound."""
    beta = C.beta
    for r, res in enumerate(rgsw_residuals(C, mu, secrets)):
        v = res.centered_array()
        assert (v % t == 0).all()
        assert np.abs(v).max() <= 8 * np.sqrt(C.row_noise_var[r // (2 * beta)])


def test_gadget_shape_and_entries():
    G = GadgetMatrix(beta=3)
    assert G.shape == (6, 2)
    assert [[G.entry(r, c) for c in range(2)] for r in range(6)] == [[1, 0], [0, 1], [2, 0], [0, 2], [4, 0], [0, 4]]


@given(st.lists(st.integers(0, 96), min_size=8, max_size=8), st.lists(st.integers(0, 96), min_size=8, max_size=8))
def test_bitdecomp_times_gadget_recomposes(a, b):
    r = Ring(4, 97)
    v = [r.element(a[:4]), r.element(b[:4])]
    assert GadgetMatrix(r.beta).recompose(bit_decomp_vec(v)) == v


@pytest.fixture(scope="module")
def two_keys(toy_keys):
    pp, sk, pk = toy_keys
    sk2, pk2 = kgen(pp, np.random.default_rng(21), key_id=4)
    return (sk, pk), (sk2, pk2)


@pytest.mark.parametrize("switch", [True, False])
def test_fresh_rgsw_invariant(toy_keys, switch):
    _, sk, pk = toy_keys
    rng = np.random.default_rng(1)
    level = 2
    ring = pk.params.ring(level)
    mu = ring.element(rng.integers(0, 2, size=16))
    C, F = rgsw_enc(pk, mu, rng, switch=switch)
    assert C.shape == (2 * ring.beta, 2)
    s = sk.at(level - 1 if switch else level, level)
    check_residuals(C, mu, [s], 2)
    # randomness rows: phase 2^i * gamma + t e, so all have the same gamma
    phases = [(f0 - f1 * s) for f0, f1 in F.rows]
    diff = (phases[1] - phases[0] * 2).centered_array()
    assert (diff % 2 == 0).all()


def test_extension_invariant_and_shape(two_keys):
    (sk, pk), (sk2, pk2) = two_keys
    rng = np.random.default_rng(2)
    level = 3
    ring = pk.params.ring(level)
    mu = ring.monomial(3)
    C, F = rgsw_enc(pk2, mu, rng)
    X = rgsw_extend(C, F, [pk, pk2])
    assert X.shape == (4 * ring.beta, 4) and X.keyset == (0, 4)
    secrets = [sk.at(level - 1, level), sk2.at(level - 1, level)]
    check_residuals(X, mu, secrets, 2)


def test_extension_to_singleton_is_identity(toy_keys):
    _, _, pk = toy_keys
    C, F = rgsw_enc(pk, pk.params.ring(3).one(), np.random.default_rng(0))
    assert rgsw_extend(C, F, [pk]) is C


def test_external_product_encrypts_product(toy_keys):
    _, sk, pk = toy_keys
    rng = np.random.default_rng(3)
    level = 2
    ring = pk.params.ring(level)
    s = sk.at(level - 1, level)
    C, _ = rgsw_enc(pk, ring.monomial(1), rng)
    # a ciphertext row with phase m under s
    a = sample_uniform(rng, ring)
    m = ring.element([1, 0, 1] + [0] * 13)
    row = [a * s + m, a]
    out = external_product(row, C)
    ph = (out[0] - out[1] * s).centered_array()
    expected = (m * ring.monomial(1)).centered_array()
    assert ((ph - expected) % 2 == 0).all()
    assert np.abs(ph - expected).max() < ring.q // 4


def test_rgsw_mult_multiplies_messages(toy_keys):
    _, sk, pk = toy_keys
    rng = np.random.default_rng(4)
    level = 3
    ring = pk.params.ring(level)
    C1, _ = rgsw_enc(pk, ring.monomial(2), rng)
    C2, _ = rgsw_enc(pk, ring.monomial(5), rng)
    P = rgsw_mult(C1, C2)
    check_residuals(P, ring.monomial(7), [sk.at(level - 1, level)], 2)


def test_rgsw_mult_shape_mismatch(two_keys):
    (sk, pk), (sk2, pk2) = two_keys
    rng = np.random.default_rng(5)
    ring = pk.params.ring(3)
    C, F = rgsw_enc(pk, ring.one(), rng)
    with pytest.raises(ValueError):
        rgsw_mult(C, rgsw_extend(C, F, [pk, pk2]))
