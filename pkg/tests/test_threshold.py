import numpy as np
import pytest

from mkthe.bgv import NoiseOverflowError, PublicKey, dec, enc, kgen, setup
from mkthe.threshold import (
    IncompletePartialsError,
    aggregate_partials,
    aggregate_public_keys,
    check_decryption_budget,
    dealer_keygen,
    joint_secret,
    partial_decrypt,
)


@pytest.fixture(scope="module")
def pp(toy_tally):
    return setup(toy_tally, np.random.default_rng(30))


def finish(c, rho):
    (c0, _), = c.subvectors
    return ((c0 - rho).centered_array() % c.params.t).tolist()


@pytest.mark.parametrize("n", [1, 2, 3, 5])
def test_joint_key_decrypts_under_share_sum(pp, n):
    rng = np.random.default_rng(n)
    m = dealer_keygen(pp, n, rng, with_helper=False)
    s = joint_secret(m.shares)
    assert len(m.shares) == n and m.joint_pk.key_id == 16
    for level in range(4):
        total = pp.params.ring(level).zero()
        for share in m.shares:
            total = total + share.s_prime[level]
        assert total == s.s_prime[level]
    for mu in range(7):
        assert dec(s, enc(m.joint_pk, mu, rng))[0] == mu


def test_aggregating_both_components_breaks_decryption(pp):
    rng = np.random.default_rng(0)
    m = dealer_keygen(pp, 3, rng, with_helper=False)
    s = joint_secret(m.shares)

    def both(rows_list):
        out = []
        for rows in zip(*rows_list):
            b, a = rows[0]
            for b2, a2 in rows[1:]:
                b, a = b + b2, a + a2
            out.append((b, a))
        return tuple(out)

    bad = PublicKey(
        key_id=16,
        params=pp.params,
        rows=tuple(both([pk.rows[l] for pk in m.share_pks]) for l in range(4)),
        switch_rows=(None,) * 4,
        noise_var=0.0,
        secret_var=0.0,
    )
    got = [dec(s, enc(bad, mu, rng))[0] for mu in (0, 1)]
    assert got != [0, 1]


def test_aggregate_rejects_different_common_a(pp, toy_tally):
    rng = np.random.default_rng(1)
    other_pp = setup(toy_tally, rng)
    _, pk1 = kgen(pp, rng, 17)
    _, pk2 = kgen(other_pp, rng, 18)
    with pytest.raises(ValueError):
        aggregate_public_keys([pk1, pk2])


def test_dealer_owner_count_limits(pp):
    with pytest.raises(ValueError):
        dealer_keygen(pp, 0, np.random.default_rng(0))
    with pytest.raises(ValueError):
        dealer_keygen(pp, pp.params.max_owners + 1, np.random.default_rng(0))


@pytest.fixture(scope="module")
def three(pp):
    rng = np.random.default_rng(7)
    m = dealer_keygen(pp, 3, rng, with_helper=False)
    return m, rng


def test_partials_aggregate_to_c1_times_joint_secret(three):
    m, rng = three
    c = enc(m.joint_pk, 5, rng)
    (_, c1), = c.subvectors
    parts = [partial_decrypt(s, c1, rng, ciphertext_id=1) for s in m.shares]
    rho = aggregate_partials(parts, [s.key_id for s in m.shares])
    exact = c1 * joint_secret(m.shares).s_prime[c.level]
    diff = (rho - exact).centered_array()
    t, bound = c.params.t, c.params.smudging_bound
    assert (diff % t == 0).all()
    assert np.abs(diff).max() <= t * 3 * bound
    assert finish(c, rho)[0] == 5


def test_missing_owner_detected_and_breaks_decryption(three):
    m, rng = three
    c = enc(m.joint_pk, 1, rng)
    (_, c1), = c.subvectors
    parts = [partial_decrypt(s, c1, rng) for s in m.shares]
    owners = [s.key_id for s in m.shares]
    for drop in range(3):
        kept = parts[:drop] + parts[drop + 1:]
        with pytest.raises(IncompletePartialsError):
            aggregate_partials(kept, owners)
        assert finish(c, aggregate_partials(kept)) != finish(c, aggregate_partials(parts))


def test_duplicate_and_mixed_partials_rejected(three):
    m, rng = three
    c = enc(m.joint_pk, 1, rng)
    (_, c1), = c.subvectors
    p0 = partial_decrypt(m.shares[0], c1, rng, ciphertext_id=0)
    with pytest.raises(IncompletePartialsError):
        aggregate_partials([p0, p0])
    p1 = partial_decrypt(m.shares[1], c1, rng, ciphertext_id=9)
    with pytest.raises(IncompletePartialsError):
        aggregate_partials([p0, p1])
    with pytest.raises(IncompletePartialsError):
        aggregate_partials([])


def test_decryption_budget():
    check_decryption_budget(1e3, 2**40, 7, 3, 7 << 20)
    with pytest.raises(NoiseOverflowError):
        check_decryption_budget(2**39, 2**40, 7, 3, 7 << 20)
