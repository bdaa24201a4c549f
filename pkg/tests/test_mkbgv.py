import numpy as np
import pytest

from mkthe.bgv import KeysetMismatchError, LevelError, enc, eval_add, kgen, measured_noise, phase, setup, tensor
from mkthe.mkbgv import (
    dealer_extended_evalkgen,
    dec_joint,
    drop_level_ext,
    eval_mult_ext,
    extend,
    extended_evalkgen,
    gen_helper,
    joint_secrets,
)
from mkthe.rgsw import rgsw_residuals
from mkthe.ring import powers_of_two_vec
from mkthe.threshold import dealer_keygen

KS = (0, 16)


@pytest.fixture(scope="module")
def world(toy):
    rng = np.random.default_rng(40)
    pp = setup(toy, rng)
    csk, cpk = kgen(pp, rng, 0)
    chelper = gen_helper(csk, cpk, rng)
    m = dealer_keygen(pp, 2, rng)
    eek = extended_evalkgen([m.joint_pk, cpk], [m.joint_helper, chelper])
    return pp, csk, cpk, chelper, m, eek, rng


def test_helper_levels_and_invariant(world):
    pp, csk, cpk, chelper, *_ = world
    assert chelper.levels == [3, 2, 1]
    level = 2
    ring = pp.params.ring(level)
    s_down = csk.at(level - 1, level)
    msgs = powers_of_two_vec(csk.vector(level))
    for i in (0, 1, 7):
        for res in rgsw_residuals(chelper.theta[level][i], msgs[i], [s_down]):
            v = res.centered_array()
            assert (v % 2 == 0).all() and np.abs(v).max() < ring.q // 1024
    assert len(chelper.psi[level]) == 2 * ring.beta
    with pytest.raises(LevelError):
        gen_helper(csk, cpk, np.random.default_rng(0), levels=[0])


def test_extend_places_subvectors(world):
    _, csk, cpk, _, m, _, rng = world
    cx = enc(cpk, 1, rng)
    assert extend(cx, (0,)) == cx
    ex = extend(cx, KS)
    assert ex.subvectors[0] == cx.subvectors[0]
    assert all(x.is_zero() for x in ex.subvectors[1])
    ey = extend(enc(m.joint_pk, 1, rng), KS)
    assert all(x.is_zero() for x in ey.subvectors[0])
    with pytest.raises(KeysetMismatchError):
        extend(cx, (5, 16))
    with pytest.raises(KeysetMismatchError):
        extend(cx, (16, 0))


def test_sum_of_extended_bits_holds_both_parts(world):
    _, csk, cpk, _, m, _, rng = world
    cx, cy = enc(cpk, 1, rng), enc(m.joint_pk, 0, rng)
    b = eval_add(extend(cx, KS), extend(cy, KS))
    assert b.subvectors == (cx.subvectors[0], cy.subvectors[0])
    assert len(tensor(b, b)) == 16


@pytest.mark.parametrize("x,y", [(0, 0), (0, 1), (1, 0), (1, 1)])
def test_extended_truth_tables(world, x, y):
    _, csk, cpk, _, m, eek, rng = world
    cx, cy = extend(enc(cpk, x, rng), KS), extend(enc(m.joint_pk, y, rng), KS)
    assert dec_joint(csk, m.shares, eval_add(cx, cy))[0] == x ^ y
    prod = eval_mult_ext(cx, cy, eek)
    assert prod.level == 2 and len(prod.subvectors) == 2
    assert dec_joint(csk, m.shares, prod)[0] == x & y
    assert measured_noise(prod, joint_secrets(csk, m.shares, KS, 2)) <= prod.noise_bound


def test_extension_preserves_plaintext(world):
    _, csk, cpk, _, m, _, rng = world
    for mu in (0, 1):
        assert dec_joint(csk, m.shares, extend(enc(cpk, mu, rng), KS))[0] == mu
        assert dec_joint(csk, m.shares, extend(enc(m.joint_pk, mu, rng), KS))[0] == mu


def test_dec_joint_is_sum_of_subvector_phases(world):
    _, csk, cpk, _, m, eek, rng = world
    c = eval_mult_ext(extend(enc(cpk, 1, rng), KS), extend(enc(m.joint_pk, 1, rng), KS), eek)
    ring = c.ring
    joint = sum((s.s_prime[c.level] for s in m.shares[1:]), m.shares[0].s_prime[c.level])
    parts = [(c0 - c1 * s) for (c0, c1), s in zip(c.subvectors, [csk.s_prime[c.level], joint])]
    total = (parts[0] + parts[1]).centered_array() % 2
    assert total.tolist() == dec_joint(csk, m.shares, c)
    assert phase(c, [csk.s_prime[2], joint]) == parts[0] + parts[1]
    assert dec_joint(csk, m.shares, extend(enc(cpk, 0, rng), KS)) == [0] * ring.eta


def test_key_shapes(world):
    pp, *_, eek, _ = world
    assert eek.keyset == KS and eek.levels == [3, 2, 1]
    for level in (3, 2, 1):
        beta = pp.params.beta(level)
        assert eek.mult[level].source_dim == 16
        assert eek.mult[level].hint_count == 16 * beta
        assert all(len(h) == 4 for h in eek.mult[level].hints)
        assert eek.drop[level].hint_count == 4 * beta


def test_helper_key_matches_dealer_oracle_key(world):
    _, csk, cpk, _, m, eek, rng = world
    from mkthe.threshold import joint_secret

    oracle = dealer_extended_evalkgen([csk, joint_secret(m.shares)], np.random.default_rng(1))
    for _ in range(5):
        x, y = (int(v) for v in rng.integers(0, 2, size=2))
        cx, cy = extend(enc(cpk, x, rng), KS), extend(enc(m.joint_pk, y, rng), KS)
        a = dec_joint(csk, m.shares, eval_mult_ext(cx, cy, eek))
        b = dec_joint(csk, m.shares, eval_mult_ext(cx, cy, oracle))
        assert a == b and a[0] == x & y


def test_drop_level_keeps_plaintext(world):
    _, csk, cpk, _, m, eek, rng = world
    c = eval_add(extend(enc(cpk, 1, rng), KS), extend(enc(m.joint_pk, 1, rng), KS))
    for level in (2, 1, 0):
        c = drop_level_ext(c, eek)
        assert c.level == level
        assert dec_joint(csk, m.shares, c)[0] == 0
    with pytest.raises(LevelError):
        drop_level_ext(c, eek)


def test_mult_keyset_mismatch(world):
    _, csk, cpk, _, m, eek, rng = world
    c = enc(cpk, 1, rng)
    with pytest.raises(KeysetMismatchError):
        eval_mult_ext(c, c, eek)
