"""Two-key layer: ciphertext extension, extended evaluation keys, joint decryption.

The keyset is always ordered by key id; in the protocol the client key sorts
before the joint model-owner key, so extended ciphertexts look like
{[x]_C, 0} and {0, [y]_M}.
"""
from __future__ import annotations

from concurrent.futures import Executor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import noise
from .bgv import (
    KeySwitchKey,
    KeysetMismatchError,
    LevelError,
    LeveledCiphertext,
    PublicKey,
    SecretKey,
    decode,
    eval_add,
    eval_mult,
    evalkgen,
    keyswitch,
    phase,
    tensor_key,
)
from .params import RingParams
from .rgsw import RandomnessEncryption, RgswCiphertext, external_products, rgsw_enc, rgsw_extend
from .ring import bit_decomp_vec, powers_of_two_vec


@dataclass(frozen=True, eq=False)
class EvalHelper:
    """GSW encryptions of a key's level-l material under its level-(l-1) secret.

    ``theta[l][i]`` encrypts Powersof2(s_l)[i] and ``psi[l][i]`` encrypts
    BitDecomp(s_l)[i] (power-major index i = 2 * bit + comp); each comes with
    the randomness encryption in ``theta_rand`` / ``psi_rand``.
    """

    key_id: int
    params: RingParams
    theta: dict[int, tuple[RgswCiphertext, ...]]
    theta_rand: dict[int, tuple[RandomnessEncryption, ...]]
    psi: dict[int, tuple[RgswCiphertext, ...]] = field(default_factory=dict)
    psi_rand: dict[int, tuple[RandomnessEncryption, ...]] = field(default_factory=dict)

    @property
    def levels(self) -> list[int]:
        return sorted(self.theta, reverse=True)


def gen_helper(
    sk: SecretKey,
    pk: PublicKey,
    rng: np.random.Generator,
    *,
    levels: Sequence[int] | None = None,
    with_bits: bool = True,
) -> EvalHelper:
    params = sk.params
    levels = range(params.top_level, 0, -1) if levels is None else levels
    theta, theta_rand, psi, psi_rand = {}, {}, {}, {}
    for level in levels:
        if level < 1:
            raise LevelError("helpers exist only for levels 1 and above")
        vec = sk.vector(level)
        pairs = [rgsw_enc(pk, m, rng) for m in powers_of_two_vec(vec)]
        theta[level] = tuple(c for c, _ in pairs)
        theta_rand[level] = tuple(f for _, f in pairs)
        if with_bits:
            pairs = [rgsw_enc(pk, m, rng) for m in bit_decomp_vec(vec)]
            psi[level] = tuple(c for c, _ in pairs)
            psi_rand[level] = tuple(f for _, f in pairs)
    return EvalHelper(sk.key_id, params, theta, theta_rand, psi, psi_rand)


def extend(c: LeveledCiphertext, keyset: Sequence[int]) -> LeveledCiphertext:
    """Place each sub-vector at its key's slot in ``keyset``; zeros elsewhere."""
    keyset = tuple(keyset)
    if list(keyset) != sorted(set(keyset)):
        raise KeysetMismatchError("keysets are strictly increasing key ids")
    missing = set(c.keyset) - set(keyset)
    if missing:
        raise KeysetMismatchError(f"keys {sorted(missing)} not in {keyset}")
    zero = c.ring.zero()
    own = dict(zip(c.keyset, c.subvectors))
    subs = tuple(own.get(k, (zero, zero)) for k in keyset)
    return LeveledCiphertext(subs, c.level, keyset, c.params, c.noise_var, c.key_level)


@dataclass(frozen=True, eq=False)
class ExtendedEvalKey:
    """Per-level tensor keys and level-drop keys for one two-key set."""

    keyset: tuple[int, ...]
    mult: dict[int, KeySwitchKey] = field(default_factory=dict)
    drop: dict[int, KeySwitchKey] = field(default_factory=dict)

    @property
    def levels(self) -> list[int]:
        return sorted(self.mult, reverse=True)


def _pad(row: Sequence, block: int, K: int, zero) -> list:
    out = [zero] * (2 * K)
    out[2 * block], out[2 * block + 1] = row
    return out


def extended_key_at_level(
    pks: Sequence[PublicKey],
    helpers: Sequence[EvalHelper],
    level: int,
    *,
    executor: Executor | None = None,
) -> tuple[KeySwitchKey, KeySwitchKey]:
    """Tensor key and drop key for the concatenated level-``level`` secret.

    For tensor entry (a, b) of s = (s_0 | s_1) (each s_p = (1, -s'_p)) and
    bit k, the hint is the external product of row 0 of Theta^{p(a)}[2k +
    c(a)] (phase 2^k s[a] under the level-(l-1) key, padded into its block)
    with the extension of Theta^{p(b)}[c(b)] (GSW encryption of s[b]).
    Symmetric entries share one hint.
    """
    if len(pks) != len(helpers):
        raise ValueError("one helper per key")
    for pk, h in zip(pks, helpers):
        if pk.key_id != h.key_id:
            raise KeysetMismatchError("helpers must follow the key order")
        if level not in h.theta:
            raise LevelError(f"helper for key {h.key_id} has no level {level}")
    K = len(pks)
    params = pks[0].params
    ring = params.ring(level)
    zero = ring.zero()
    dim = 2 * K
    ids = tuple(pk.key_id for pk in pks)

    ext = [
        rgsw_extend(helpers[a // 2].theta[level][a % 2], helpers[a // 2].theta_rand[level][a % 2], pks)
        for a in range(dim)
    ]
    beta = ring.beta

    def row0(a: int, k: int) -> list:
        th = helpers[a // 2].theta[level][2 * k + a % 2]
        return _pad(th.rows[0], a // 2, K, zero)

    pairs = [(a, b) for a in range(dim) for b in range(a, dim)]

    def hint_group(pair):
        a, b = pair
        return external_products([row0(a, k) for k in range(beta)], ext[b])

    if executor is None:
        groups = [hint_group(p) for p in pairs]
    else:
        groups = list(executor.map(hint_group, pairs))
    by_pair = dict(zip(pairs, groups))
    hints = []
    for k in range(beta):
        for a in range(dim):
            for b in range(dim):
                hints.append(tuple(by_pair[(min(a, b), max(a, b))][k]))

    eta = params.eta
    own_var = [h.theta[level][0].row_noise_var[0] for h in helpers]
    hint_var = 0.0
    for a, b in pairs:
        live = [2 * beta if p == a // 2 else 0 for p in range(K)]
        msg_var = 1.0 if b % 2 == 0 else pks[b // 2].secret_var
        hint_var = max(
            hint_var,
            noise.external_product_var(
                eta, live, ext[b].row_noise_var, ext[b].shared_var, beta, msg_var, own_var[a // 2]
            ),
        )
    rand_vars = [h.theta_rand[level][0].noise_var for h in helpers]
    mult = KeySwitchKey(
        params=params,
        level=level,
        target_level=level - 1,
        source_dim=dim * dim,
        target_keyset=ids,
        hints=tuple(hints),
        noise_var=hint_var,
        coherent_var=noise.extended_coherent_var(params, level, rand_vars) if K > 1 else 0.0,
    )
    drop_hints = tuple(tuple(row0(a, k)) for k in range(beta) for a in range(dim))
    drop = KeySwitchKey(
        params=params,
        level=level,
        target_level=level - 1,
        source_dim=dim,
        target_keyset=ids,
        hints=drop_hints,
        noise_var=max(own_var),
    )
    return mult, drop


def extended_evalkgen(
    pks: Sequence[PublicKey],
    helpers: Sequence[EvalHelper],
    levels: Sequence[int] | None = None,
    *,
    executor: Executor | None = None,
) -> ExtendedEvalKey:
    order = sorted(range(len(pks)), key=lambda i: pks[i].key_id)
    pks = [pks[i] for i in order]
    helpers = [helpers[i] for i in order]
    if levels is None:
        levels = sorted(set.intersection(*(set(h.theta) for h in helpers)), reverse=True)
    eek = ExtendedEvalKey(tuple(pk.key_id for pk in pks))
    for level in levels:
        eek.mult[level], eek.drop[level] = extended_key_at_level(pks, helpers, level, executor=executor)
    return eek


def dealer_extended_evalkgen(
    secret_keys: Sequence[SecretKey],
    rng: np.random.Generator,
    levels: Sequence[int] | None = None,
) -> ExtendedEvalKey:
    """Test oracle: build the extended key directly from every party's secret."""
    sks = sorted(secret_keys, key=lambda s: s.key_id)
    params = sks[0].params
    levels = range(params.top_level, 0, -1) if levels is None else levels
    eek = ExtendedEvalKey(tuple(s.key_id for s in sks))
    for level in levels:
        vec = [x for s in sks for x in s.vector(level)]
        eek.mult[level] = evalkgen(tensor_key(vec), sks, rng, target_level=level - 1)
        eek.drop[level] = evalkgen(vec, sks, rng, target_level=level - 1)
    return eek


def eval_add_ext(c1: LeveledCiphertext, c2: LeveledCiphertext) -> LeveledCiphertext:
    return eval_add(c1, c2)


def eval_mult_ext(c1: LeveledCiphertext, c2: LeveledCiphertext, eek: ExtendedEvalKey) -> LeveledCiphertext:
    if c1.keyset != eek.keyset:
        raise KeysetMismatchError(f"key is for {eek.keyset}, ciphertext under {c1.keyset}")
    if c1.level not in eek.mult:
        raise LevelError(f"no extended key at level {c1.level}")
    return eval_mult(c1, c2, eek.mult[c1.level])


def drop_level_ext(c: LeveledCiphertext, eek: ExtendedEvalKey) -> LeveledCiphertext:
    if c.level not in eek.drop:
        raise LevelError(f"no drop key at level {c.level}")
    return keyswitch(eek.drop[c.level], c)


def align_ext(
    c1: LeveledCiphertext, c2: LeveledCiphertext, eek: ExtendedEvalKey
) -> tuple[LeveledCiphertext, LeveledCiphertext]:
    while c1.level > c2.level:
        c1 = drop_level_ext(c1, eek)
    while c2.level > c1.level:
        c2 = drop_level_ext(c2, eek)
    return c1, c2


def joint_secrets(client: SecretKey, shares: Sequence[SecretKey], keyset: Sequence[int], level: int):
    """s'_k per keyset slot: the client's secret, or the sum of owner shares."""
    ring = client.params.ring(level)
    total = ring.zero()
    for s in shares:
        total = total + s.s_prime[level]
    return [client.s_prime[level] if k == client.key_id else total for k in keyset]


def dec_joint(client: SecretKey, shares: Sequence[SecretKey], c: LeveledCiphertext) -> list[int]:
    """Decrypt an extended ciphertext holding every secret (test oracle)."""
    if client.key_id not in c.keyset:
        raise KeysetMismatchError("client key not in the ciphertext keyset")
    c.check_noise()
    return decode(c.params, phase(c, joint_secrets(client, shares, c.keyset, c.secret_level)))
