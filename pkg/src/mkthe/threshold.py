"""Joint key for the model-owner group and distributed decryption.

The dealer samples one small share per owner; the joint secret is their sum
and the joint public key is the sum of the owners' b components over the
common A.  Decryption of the joint sub-vector needs a partial decryption from
every owner (n-of-n).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .bgv import (
    NoiseOverflowError,
    PublicKey,
    PublicParams,
    SecretKey,
    public_key_from_secret,
    sample_secret,
)
from .mkbgv import EvalHelper, gen_helper
from .ring import RingElement, sample_bounded

CLIENT_KEY_ID = 0
JOINT_KEY_ID = 16
OWNER_KEY_BASE = 17


class IncompletePartialsError(ValueError):
    """Partial decryptions are missing, duplicated or answer different ciphertexts."""


@dataclass(frozen=True, eq=False)
class JointKeyMaterial:
    joint_pk: PublicKey
    joint_helper: EvalHelper | None
    shares: tuple[SecretKey, ...]
    share_pks: tuple[PublicKey, ...]
    n_owners: int

    @property
    def joint_id(self) -> int:
        return self.joint_pk.key_id

    def owner_ids(self) -> list[int]:
        return [s.key_id for s in self.shares]


def joint_secret(shares: Sequence[SecretKey], key_id: int = JOINT_KEY_ID) -> SecretKey:
    """Sum of the shares, level by level."""
    params = shares[0].params
    levels = range(params.top_level + 1)
    s = []
    for level in levels:
        acc = params.ring(level).zero()
        for share in shares:
            acc = acc + share.s_prime[level]
        s.append(acc)
    return SecretKey(key_id, params, tuple(s), sum(x.secret_var for x in shares))


def aggregate_public_keys(pks: Sequence[PublicKey], key_id: int | None = None) -> PublicKey:
    """Sum the b components of keys that share every A; A itself is kept once."""
    if not pks:
        raise ValueError("need at least one public key")
    if len(pks) == 1 and key_id is None:
        return pks[0]
    first = pks[0]
    for pk in pks[1:]:
        for mine, theirs in zip(first.rows + first.switch_rows[1:], pk.rows + pk.switch_rows[1:]):
            if any(a1 != a2 for (_, a1), (_, a2) in zip(mine, theirs)):
                raise ValueError("public keys do not share the common A")

    def add_rows(row_sets):
        out = []
        for rows in zip(*row_sets):
            b = rows[0][0]
            for other in rows[1:]:
                b = b + other[0]
            out.append((b, rows[0][1]))
        return tuple(out)

    rows = tuple(add_rows([pk.rows[level] for pk in pks]) for level in range(len(first.rows)))
    switch = (None,) + tuple(
        add_rows([pk.switch_rows[level] for pk in pks]) for level in range(1, len(first.rows))
    )
    return PublicKey(
        key_id=JOINT_KEY_ID if key_id is None else key_id,
        params=first.params,
        rows=rows,
        switch_rows=switch,
        noise_var=sum(pk.noise_var for pk in pks),
        secret_var=sum(pk.secret_var for pk in pks),
    )


def dealer_keygen(
    pp: PublicParams,
    n_owners: int,
    rng: np.random.Generator,
    *,
    joint_id: int = JOINT_KEY_ID,
    with_helper: bool = True,
    helper_bits: bool = True,
) -> JointKeyMaterial:
    """Trusted-dealer setup: N small shares, the joint key and its evaluation helper."""
    if n_owners < 1:
        raise ValueError("need at least one model owner")
    params = pp.params
    if n_owners > params.max_owners:
        raise ValueError(f"preset supports at most {params.max_owners} owners")
    shares = tuple(sample_secret(params, rng, OWNER_KEY_BASE + i) for i in range(n_owners))
    share_pks = tuple(public_key_from_secret(pp, s, rng) for s in shares)
    joint_pk = aggregate_public_keys(share_pks, key_id=joint_id)
    helper = None
    if with_helper:
        helper = gen_helper(joint_secret(shares, joint_id), joint_pk, rng, with_bits=helper_bits)
    return JointKeyMaterial(joint_pk, helper, shares, share_pks, n_owners)


@dataclass(frozen=True)
class PartialDecryption:
    rho: RingElement
    owner: int
    ciphertext_id: int
    smudging_bound: int


def partial_decrypt(
    share: SecretKey,
    c_m1: RingElement,
    rng: np.random.Generator,
    *,
    ciphertext_id: int = 0,
    smudging_bound: int | None = None,
) -> PartialDecryption:
    """rho_i = c_M1 * s'_i + t * e_i with e_i uniform in [-bound, bound]."""
    params = share.params
    bound = params.smudging_bound if smudging_bound is None else smudging_bound
    ring = c_m1.ring
    s = share.s_prime[ring.level]
    rho = c_m1 * s + sample_bounded(rng, ring, bound) * params.t
    return PartialDecryption(rho, share.key_id, ciphertext_id, bound)


def aggregate_partials(
    parts: Sequence[PartialDecryption], owners: Sequence[int] | None = None
) -> RingElement:
    """rho = sum of rho_i; every expected owner must answer exactly once."""
    if not parts:
        raise IncompletePartialsError("no partial decryptions")
    ids = [p.owner for p in parts]
    if len(set(ids)) != len(ids):
        raise IncompletePartialsError(f"duplicate partial decryptions in {ids}")
    if len({p.ciphertext_id for p in parts}) != 1:
        raise IncompletePartialsError("partial decryptions answer different ciphertexts")
    if owners is not None and set(ids) != set(owners):
        missing = sorted(set(owners) - set(ids))
        raise IncompletePartialsError(f"missing partial decryptions from owners {missing}")
    rho = parts[0].rho
    for p in parts[1:]:
        rho = rho + p.rho
    return rho


def check_decryption_budget(noise_bound: float, q: int, t: int, n_owners: int, smudging_bound: int) -> None:
    """Refuse when ciphertext noise plus all smudging could wrap modulo q."""
    total = noise_bound + t * n_owners * smudging_bound
    if total >= q / 2:
        raise NoiseOverflowError(f"noise plus smudging ({total:.3g}) reaches q/2 ({q / 2:.3g})")
